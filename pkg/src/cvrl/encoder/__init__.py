from .checkpoint import CHECKPOINT_MAGIC, load_checkpoint, save_checkpoint
from .layers import ChannelStandardize, Conv3d, GlobalAvgPool, Linear, Parameter, ReLU
from .network import ConvStage, TinyEncoder, TinyEncoderConfig
from .r3d import R3D50Spec, shape_trace

__all__ = [
    "CHECKPOINT_MAGIC",
    "ChannelStandardize",
    "Conv3d",
    "ConvStage",
    "GlobalAvgPool",
    "Linear",
    "Parameter",
    "R3D50Spec",
    "ReLU",
    "TinyEncoder",
    "TinyEncoderConfig",
    "load_checkpoint",
    "save_checkpoint",
    "shape_trace",
]
