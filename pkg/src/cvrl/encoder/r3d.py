"""Stage-by-stage output shapes of the 3D-ResNet-50 video backbone.

Only the shape arithmetic is modelled. Every stage maps a length ``n`` to
``n // stride`` on each axis: convolutions are padded so that a stride-1
stage preserves size and a stride-``s`` stage divides it, flooring when the
input is not divisible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..exceptions import ConfigurationError


@dataclass(frozen=True)
class Stage:
    name: str
    layers: str
    temporal_stride: int = 1
    spatial_stride: int = 1
    global_pool: bool = False


def _bottleneck(temporal_kernel: int, inner: int, outer: int, blocks: int) -> str:
    return f"[{temporal_kernel}x1^2, {inner}; 1x3^2, {inner}; 1x1^2, {outer}] x {blocks}"


def _r3d50_stages():
    return (
        Stage("data", "stride 2, 1^2", 2, 1),
        Stage("conv1", "5x7^2, 64, stride 2, 2^2", 2, 2),
        Stage("pool1", "1x3^2 max, stride 1, 2^2", 1, 2),
        Stage("conv2", _bottleneck(1, 64, 256, 3), 1, 1),
        Stage("conv3", _bottleneck(1, 128, 512, 4), 1, 2),
        Stage("conv4", _bottleneck(3, 256, 1024, 6), 1, 2),
        Stage("conv5", _bottleneck(3, 512, 2048, 3), 1, 2),
        Stage("pool", "global average pooling", global_pool=True),
    )


@dataclass(frozen=True)
class R3D50Spec:
    stages: tuple[Stage, ...] = field(default_factory=_r3d50_stages)
    representation_dim: int = 2048


def shape_trace(spec: R3D50Spec, input_shape: tuple[int, int]) -> list[tuple[str, int, int]]:
    """Return ``(stage, T_out, S_out)`` for every stage given raw input ``(T, S)``."""
    T, S = input_shape
    if T < 1 or S < 1:
        raise ConfigurationError(f"input shape must be positive, got {input_shape}")
    trace = []
    for stage in spec.stages:
        if stage.global_pool:
            T, S = 1, 1
        else:
            T, S = T // stage.temporal_stride, S // stage.spatial_stride
        if T < 1 or S < 1:
            raise ConfigurationError(
                f"stage {stage.name!r} collapses the input to T={T}, S={S} (input {input_shape})"
            )
        trace.append((stage.name, T, S))
    return trace
