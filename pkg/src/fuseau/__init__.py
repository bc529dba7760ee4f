"""Multimodal facial action unit detection: feature store, early-fusion
GRU model with hand-derived gradients, training loop, post-processing
stack, and correlation analysis."""

from .feature_store import (
    AU_NAMES,
    N_AUS,
    DatasetManifest,
    FeatureStore,
    FusionSample,
    SynthSpec,
    VideoEntry,
    generate_synthetic,
    load_manifest,
    save_manifest,
    split_videos,
)
from .fusion_model import (
    ModelConfig,
    ModelParams,
    collate,
    forward,
    forward_batch,
    backward,
    init_model,
    predict_binary,
)
from .losses import (
    DEFAULT_BCE_WEIGHTS,
    DEFAULT_MULTILABEL_WEIGHTS,
    LossWeights,
    total_loss,
    total_loss_grad,
    weighted_bce,
    weighted_multilabel_softmargin,
)
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .metrics import (
    EvalReport,
    PccMatrix,
    ablation_table,
    au_expr_pcc,
    f1_per_au,
    macro_f1,
    mine_rules,
    pcc_matrix,
)
from .postprocess import (
    AUCorrRule,
    DEFAULT_SMOOTH_K,
    DEFAULT_THRESHOLDS,
    PredictionTrack,
    ThresholdVector,
    aucorr_adjust,
    default_rules,
    run_pipeline,
    smooth_logits,
    sweep_window,
    tune_thresholds,
)
from .trainer import TrainConfig, TrainHistory, evaluate, predict_tracks, train

__version__ = "0.1.0"
