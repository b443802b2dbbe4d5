from .ablation import consistency_ablation, semi_supervised_comparison, summarize, write_rows_csv
from .config import DataConfig, EvalConfig, PretrainConfig, load_config, save_config
from .evaluation import (
    FineTunedClassifier,
    LinearProbe,
    dense_clip_starts,
    dense_predict,
    fine_tune,
    linear_eval,
    semi_subset,
    spatial_crops,
)
from .pretrain import CVRLPretrainer, pretrain

__all__ = [
    "consistency_ablation",
    "semi_supervised_comparison",
    "summarize",
    "write_rows_csv",
    "CVRLPretrainer",
    "DataConfig",
    "EvalConfig",
    "FineTunedClassifier",
    "LinearProbe",
    "PretrainConfig",
    "dense_clip_starts",
    "dense_predict",
    "fine_tune",
    "linear_eval",
    "load_config",
    "pretrain",
    "save_config",
    "semi_subset",
    "spatial_crops",
]
