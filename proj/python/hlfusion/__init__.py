"""Cross-modal HSI+LiDAR fusion classifier.

Thin python surface over the C++ core: a differentiable tensor tape, the
stacked cross-attention fusion model, its training loop, and the scene/patch
data pipeline.
"""

from ._core import (
    EpochStats,
    FusionModel,
    GradCheckGroup,
    GradCheckReport,
    Metrics,
    ModelConfig,
    PatchDataset,
    Rng,
    SceneCube,
    Tape,
    Tensor,
    TrainConfig,
    cross_decode,
    evaluate,
    extract_patches,
    glorot_init,
    load_checkpoint,
    load_cube,
    model_forward,
    model_forward_traced,
    normalize,
    param_count,
    run_gradcheck,
    save_checkpoint,
    save_cube,
    self_attention,
    sparsify_labels,
    split_fixed,
    split_per_class,
    synth_scene,
    train,
)

__all__ = [
    "EpochStats",
    "FusionModel",
    "GradCheckGroup",
    "GradCheckReport",
    "Metrics",
    "ModelConfig",
    "PatchDataset",
    "Rng",
    "SceneCube",
    "Tape",
    "Tensor",
    "TrainConfig",
    "cross_decode",
    "evaluate",
    "extract_patches",
    "glorot_init",
    "load_checkpoint",
    "load_cube",
    "model_forward",
    "model_forward_traced",
    "normalize",
    "param_count",
    "run_gradcheck",
    "save_checkpoint",
    "save_cube",
    "self_attention",
    "sparsify_labels",
    "split_fixed",
    "split_per_class",
    "synth_scene",
    "train",
]

__version__ = "0.1.0"
