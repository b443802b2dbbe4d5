"""A small plain 3D-conv encoder with an MLP projection head."""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

import numpy as np

from ..exceptions import BoundsError, ConfigurationError, StateError
from .layers import BatchStandardize, ChannelStandardize, Conv3d, GlobalAvgPool, Layer, Linear, Parameter, ReLU

NORMS = ("batch", "channel", "layer", "none")


@dataclass(frozen=True)
class ConvStage:
    out_channels: int
    temporal_kernel: int = 3
    spatial_kernel: int = 3
    temporal_stride: int = 1
    spatial_stride: int = 2


def _default_stages():
    return (
        ConvStage(32, 3, 3, 1, 2),
        ConvStage(64, 3, 3, 2, 2),
        ConvStage(128, 3, 3, 2, 2),
    )


@dataclass(frozen=True)
class TinyEncoderConfig:
    """Architecture of :class:`TinyEncoder`.

    ``norm`` picks the standardization after each conv: ``"batch"`` (batch
    statistics while training, running averages at inference),
    ``"channel"`` (per sample and channel), ``"layer"`` (per sample, all
    channels jointly) or ``"none"``. ``head_norm`` adds batch
    standardization after every projection-head linear layer.
    """

    stages: tuple[ConvStage, ...] = field(default_factory=_default_stages)
    hidden_layers: int = 3
    hidden_dim: int = 128
    output_dim: int = 128
    in_channels: int = 3
    norm: str = "batch"
    head_norm: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        stages = tuple(s if isinstance(s, ConvStage) else ConvStage(**s) for s in self.stages)
        object.__setattr__(self, "stages", stages)
        if not stages:
            raise ConfigurationError("need at least one conv stage")
        if self.hidden_layers < 0:
            raise ConfigurationError("hidden_layers must be >= 0")
        if self.output_dim < 2:
            raise ConfigurationError("output_dim must be >= 2")
        if self.norm not in NORMS:
            raise ConfigurationError(f"norm must be one of {NORMS}, got {self.norm!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError(f"dtype must be float32 or float64, got {self.dtype}")
        for s in stages:
            if min(s.out_channels, s.temporal_kernel, s.spatial_kernel, s.temporal_stride, s.spatial_stride) < 1:
                raise ConfigurationError(f"invalid conv stage {s}")

    @property
    def representation_dim(self) -> int:
        return self.stages[-1].out_channels

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = [asdict(s) for s in self.stages]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TinyEncoderConfig":
        d = dict(d)
        if "stages" in d:
            d["stages"] = tuple(ConvStage(**s) for s in d["stages"])
        return cls(**d)


def _norm_layer(kind: str, channels: int, dtype):
    if kind == "batch":
        return BatchStandardize(channels, dtype=dtype)
    if kind == "channel":
        return ChannelStandardize(None)
    if kind == "layer":
        return ChannelStandardize(1)
    return None


class TinyEncoder:
    """Conv stages (conv -> norm -> ReLU), global average pool, MLP head.

    ``forward`` runs in training mode and caches for ``backward``;
    ``features`` and ``project`` are inference-mode and cache nothing.
    ``backward`` takes the loss gradient at the projection and/or at the
    representation.
    """

    def __init__(self, config: TinyEncoderConfig = TinyEncoderConfig(), seed: int = 0):
        self.config = config
        dtype = np.dtype(config.dtype)
        self.backbone: list[Layer] = []
        self.head: list[Layer] = []
        self._named: list[tuple[str, Layer]] = []
        c_in = config.in_channels
        for i, s in enumerate(config.stages):
            conv = Conv3d(
                c_in,
                s.out_channels,
                (s.temporal_kernel, s.spatial_kernel, s.spatial_kernel),
                (s.temporal_stride, s.spatial_stride, s.spatial_stride),
                dtype,
            )
            self._add(self.backbone, f"conv{i + 1}", conv)
            norm = _norm_layer(config.norm, s.out_channels, dtype)
            if norm is not None:
                self._add(self.backbone, f"norm{i + 1}", norm)
            self.backbone.append(ReLU())
            c_in = s.out_channels
        self.backbone.append(GlobalAvgPool())

        d_in = c_in
        for i in range(config.hidden_layers + 1):
            last = i == config.hidden_layers
            d_out = config.output_dim if last else config.hidden_dim
            self._add(self.head, f"head{i + 1}", Linear(d_in, d_out, dtype))
            if config.head_norm:
                self._add(self.head, f"head_norm{i + 1}", BatchStandardize(d_out, dtype=dtype))
            if not last:
                self.head.append(ReLU())
            d_in = d_out
        self._forwarded = False
        self.init_params(seed)

    def _add(self, stack, name, layer):
        stack.append(layer)
        self._named.append((name, layer))

    # -- parameters ---------------------------------------------------------

    def named_parameters(self) -> list[tuple[str, Parameter]]:
        return [(f"{lname}.{pname}", p) for lname, layer in self._named for pname, p in layer.params.items()]

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def backbone_parameters(self) -> list[Parameter]:
        return [p for name, p in self.named_parameters() if name.startswith("conv")]

    def named_buffers(self) -> list[tuple[str, Layer, str]]:
        return [
            (f"{lname}.{bname}", layer, bname)
            for lname, layer in self._named
            for bname in getattr(layer, "buffers", {})
        ]

    def init_params(self, seed: int) -> None:
        """Fan-in scaled uniform init, bound ``sqrt(1 / fan_in)``, deterministic in ``seed``."""
        rng = np.random.default_rng(seed)
        for _, layer in self._named:
            if not layer.params:
                continue
            bound = np.sqrt(1.0 / layer.fan_in)
            for p in layer.params.values():
                p.value[...] = rng.uniform(-bound, bound, size=p.shape)
        for _, layer, bname in self.named_buffers():
            buf = layer.buffers[bname]
            buf[...] = 0.0 if bname == "running_mean" else 1.0

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def set_requires_grad(self, flag: bool, backbone_only: bool = False) -> None:
        params = self.backbone_parameters() if backbone_only else self.parameters()
        for p in params:
            p.requires_grad = flag

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.value.copy() for name, p in self.named_parameters()}
        state.update({name: layer.buffers[b].copy() for name, layer, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        targets = [(name, p.value) for name, p in self.named_parameters()]
        targets += [(name, layer.buffers[b]) for name, layer, b in self.named_buffers()]
        for name, arr in targets:
            if name not in state:
                raise ConfigurationError(f"missing tensor {name!r}")
            if tuple(state[name].shape) != arr.shape:
                raise ConfigurationError(f"tensor {name!r} has shape {state[name].shape}, expected {arr.shape}")
            arr[...] = state[name]

    # -- computation --------------------------------------------------------

    def _check_input(self, clips):
        clips = np.asarray(clips)
        if clips.ndim != 5 or clips.shape[-1] != self.config.in_channels:
            raise BoundsError(f"expected (B, T, H, W, {self.config.in_channels}) clips, got {clips.shape}")
        return clips.astype(self.config.dtype, copy=False)

    @contextmanager
    def _inference(self):
        norms = [layer for _, layer in self._named if isinstance(layer, BatchStandardize)]
        for layer in norms:
            layer.training = False
        try:
            yield
        finally:
            for layer in norms:
                layer.training = True
            self.clear_cache()

    def _run(self, layers, x):
        for layer in layers:
            x = layer.forward(x)
        return x

    def forward(self, clips: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Training-mode pass returning ``(representation, projection)``."""
        rep = self._run(self.backbone, self._check_input(clips))
        z = self._run(self.head, rep)
        self._forwarded = True
        return rep, z

    def features(self, clips: np.ndarray) -> np.ndarray:
        """Inference-mode backbone representation."""
        with self._inference():
            return self._run(self.backbone, self._check_input(clips))

    def project(self, clips: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Inference-mode ``(representation, projection)``."""
        with self._inference():
            rep = self._run(self.backbone, self._check_input(clips))
            return rep, self._run(self.head, rep)

    def backward(self, grad_projection=None, grad_representation=None) -> None:
        """Accumulate parameter gradients from the last :meth:`forward`."""
        if not self._forwarded:
            raise StateError("backward called without a preceding forward")
        self._forwarded = False
        dtype = np.dtype(self.config.dtype)
        g = None
        if grad_projection is not None:
            g = self._back(self.head, np.asarray(grad_projection, dtype=dtype))
        else:
            for layer in self.head:
                layer._cache = None
        if grad_representation is not None:
            gr = np.asarray(grad_representation, dtype=dtype)
            g = gr if g is None else g + gr
        if g is None:
            raise ConfigurationError("backward needs a gradient at the projection or the representation")
        g = self._back(self.backbone[1:], g)
        self.backbone[0].backward(g, input_grad=False)

    @staticmethod
    def _back(layers, g):
        for layer in reversed(layers):
            g = layer.backward(g)
        return g

    def clear_cache(self) -> None:
        for layer in self.backbone + self.head:
            layer._cache = None
        self._forwarded = False
