"""Early-fusion AU detector: five feature streams through per-stream linear
projectors, bidirectional GRUs for the temporal streams, hidden-state
concatenation in a fixed order, and a 2-layer MLP head producing 12 logits.

The concatenation order (swin, ghfeat, ghfeat window, hubert, roberta) is
part of the model contract; permuting it changes the logits.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit as sigmoid

from . import nn_core
from .feature_store import N_AUS, FusionSample
from .losses import LossWeights, total_loss, total_loss_grad


@dataclass
class ModelConfig:
    dim_swin: int
    dim_ghfeat: int
    dim_hubert: int
    dim_roberta: int
    proj_dim: int = 128
    gru_hidden: int = 128
    mlp_hidden: int = 512
    n_aus: int = N_AUS
    seed: int = 0

    def __post_init__(self):
        for name in ("dim_swin", "dim_ghfeat", "dim_hubert", "dim_roberta",
                     "proj_dim", "gru_hidden", "mlp_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_aus != N_AUS:
            raise ValueError(f"the label space is fixed at {N_AUS} AUs, got n_aus={self.n_aus}")

    @property
    def concat_dim(self) -> int:
        # two static projections + three bidirectional GRU encodings
        return 2 * self.proj_dim + 3 * 2 * self.gru_hidden

    def to_dict(self) -> dict:
        return {
            "dim_swin": self.dim_swin, "dim_ghfeat": self.dim_ghfeat,
            "dim_hubert": self.dim_hubert, "dim_roberta": self.dim_roberta,
            "proj_dim": self.proj_dim, "gru_hidden": self.gru_hidden,
            "mlp_hidden": self.mlp_hidden, "n_aus": self.n_aus, "seed": self.seed,
        }

    @classmethod
    def from_stream_dims(cls, dims: dict[str, int], **kwargs) -> "ModelConfig":
        """Build a config from feature-file header dims (never hard-coded)."""
        return cls(
            dim_swin=dims["swin"], dim_ghfeat=dims["ghfeat"],
            dim_hubert=dims["hubert"], dim_roberta=dims["roberta"], **kwargs,
        )


@dataclass
class ModelParams:
    proj_swin: nn_core.LinearParams
    proj_ghfeat: nn_core.LinearParams
    proj_ghfeat_seq: nn_core.LinearParams
    proj_hubert: nn_core.LinearParams
    proj_roberta: nn_core.LinearParams
    gru_ghfeat: nn_core.GruParams
    gru_hubert: nn_core.GruParams
    gru_roberta: nn_core.GruParams
    head: nn_core.MlpParams

    _PREFIXES = (
        "proj_swin", "proj_ghfeat", "proj_ghfeat_seq", "proj_hubert", "proj_roberta",
        "gru_ghfeat", "gru_hubert", "gru_roberta", "head",
    )

    def tensors(self) -> dict[str, np.ndarray]:
        """Flat name -> array view of every learnable tensor (shared storage)."""
        out: dict[str, np.ndarray] = {}
        for prefix in self._PREFIXES:
            out.update(getattr(self, prefix).tensors(prefix))
        return out

    def clone(self) -> "ModelParams":
        return copy.deepcopy(self)


def init_model(cfg: ModelConfig) -> ModelParams:
    """Seeded initialization; same config and seed give identical parameters."""
    rng = np.random.default_rng(cfg.seed)
    params = ModelParams(
        proj_swin=nn_core.init_linear(rng, cfg.dim_swin, cfg.proj_dim),
        proj_ghfeat=nn_core.init_linear(rng, cfg.dim_ghfeat, cfg.proj_dim),
        proj_ghfeat_seq=nn_core.init_linear(rng, cfg.dim_ghfeat, cfg.proj_dim),
        proj_hubert=nn_core.init_linear(rng, cfg.dim_hubert, cfg.proj_dim),
        proj_roberta=nn_core.init_linear(rng, cfg.dim_roberta, cfg.proj_dim),
        gru_ghfeat=nn_core.init_gru(rng, cfg.proj_dim, cfg.gru_hidden),
        gru_hubert=nn_core.init_gru(rng, cfg.proj_dim, cfg.gru_hidden),
        gru_roberta=nn_core.init_gru(rng, cfg.proj_dim, cfg.gru_hidden),
        head=nn_core.init_mlp(rng, cfg.concat_dim, cfg.mlp_hidden, cfg.n_aus),
    )
    head_in = params.head.layers[0].weight.shape[1]
    if head_in != cfg.concat_dim:
        raise ValueError(f"MLP input dim {head_in} != concat dim {cfg.concat_dim}")
    return params


@dataclass
class PredictionBatch:
    logits: np.ndarray         # (batch, 12)
    probabilities: np.ndarray  # (batch, 12), sigmoid of logits


@dataclass
class Batch:
    """Right-padded, collated sample arrays ready for the batched kernels."""
    swin: np.ndarray             # (B, dim_swin)
    ghfeat: np.ndarray           # (B, dim_ghfeat)
    ghfeat_seq: np.ndarray       # (B, 9, dim_ghfeat)
    ghfeat_lengths: np.ndarray   # (B,), always 9
    hubert: np.ndarray           # (B, T_a, dim_hubert)
    hubert_lengths: np.ndarray
    roberta: np.ndarray          # (B, T_t, dim_roberta)
    roberta_lengths: np.ndarray
    labels: np.ndarray | None    # (B, 12) ints, or None for unlabeled inference

    def __len__(self) -> int:
        return self.swin.shape[0]


def _pad_sequences(seqs: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([s.shape[0] for s in seqs], dtype=np.int64)
    t_max = int(lengths.max())
    out = np.zeros((len(seqs), t_max, seqs[0].shape[1]))
    for i, s in enumerate(seqs):
        out[i, : s.shape[0]] = s
    return out, lengths


def collate(samples: Sequence[FusionSample]) -> Batch:
    if len(samples) == 0:
        raise ValueError("cannot collate an empty batch")
    hubert, hubert_lengths = _pad_sequences([s.hubert_window for s in samples])
    roberta, roberta_lengths = _pad_sequences([s.roberta_window for s in samples])
    return Batch(
        swin=np.stack([s.swin for s in samples]),
        ghfeat=np.stack([s.ghfeat for s in samples]),
        ghfeat_seq=np.stack([s.ghfeat_window for s in samples]),
        ghfeat_lengths=np.full(len(samples), samples[0].ghfeat_window.shape[0], dtype=np.int64),
        hubert=hubert,
        hubert_lengths=hubert_lengths,
        roberta=roberta,
        roberta_lengths=roberta_lengths,
        labels=np.stack([s.label for s in samples]),
    )


def _forward(params: ModelParams, batch: Batch, need_cache: bool):
    h_swin = nn_core.linear_apply(params.proj_swin, batch.swin)
    h_ghfeat = nn_core.linear_apply(params.proj_ghfeat, batch.ghfeat)

    x_tg = nn_core.linear_apply(params.proj_ghfeat_seq, batch.ghfeat_seq)
    h_tg, cache_tg = nn_core.bigru_forward(params.gru_ghfeat, x_tg, batch.ghfeat_lengths)
    x_a = nn_core.linear_apply(params.proj_hubert, batch.hubert)
    h_a, cache_a = nn_core.bigru_forward(params.gru_hubert, x_a, batch.hubert_lengths)
    x_t = nn_core.linear_apply(params.proj_roberta, batch.roberta)
    h_t, cache_t = nn_core.bigru_forward(params.gru_roberta, x_t, batch.roberta_lengths)

    concat = np.concatenate([h_swin, h_ghfeat, h_tg, h_a, h_t], axis=1)
    logits, mlp_cache = nn_core.mlp_forward(params.head, concat)
    pred = PredictionBatch(logits=logits, probabilities=sigmoid(logits))
    if not need_cache:
        return pred, None
    return pred, (cache_tg, cache_a, cache_t, mlp_cache)


def forward_batch(params: ModelParams, batch: Batch) -> PredictionBatch:
    """Pure batched inference; no state is retained across calls."""
    pred, _ = _forward(params, batch, need_cache=False)
    return pred


def forward(params: ModelParams, sample: FusionSample) -> PredictionBatch:
    """Single-sample convenience wrapper around forward_batch."""
    return forward_batch(params, collate([sample]))


def backward(params: ModelParams, batch: Batch, weights: LossWeights):
    """Batch loss and exact gradients for every parameter tensor.

    Reverse-mode differentiation of the full pipeline: composite loss ->
    MLP head -> concatenation split -> GRU encoders -> per-stream
    projectors. Returns (loss, grads) with grads keyed like
    ModelParams.tensors().
    """
    if batch.labels is None:
        raise ValueError("backward requires a labeled batch")
    pred, (cache_tg, cache_a, cache_t, mlp_cache) = _forward(params, batch, need_cache=True)
    loss = total_loss(pred.logits, batch.labels, weights)
    dlogits = total_loss_grad(pred.logits, batch.labels, weights)

    grads: dict[str, np.ndarray] = {}
    dconcat, head_grads = nn_core.mlp_backward(params.head, mlp_cache, dlogits)
    grads.update({f"head.{k}": v for k, v in head_grads.items()})

    d_p = params.proj_swin.weight.shape[0]
    h2 = 2 * params.gru_ghfeat.hidden
    parts = np.split(dconcat, [d_p, 2 * d_p, 2 * d_p + h2, 2 * d_p + 2 * h2], axis=1)
    dh_swin, dh_ghfeat, dh_tg, dh_a, dh_t = parts

    _, dw, db = nn_core.linear_backward(params.proj_swin, batch.swin, dh_swin)
    grads["proj_swin.weight"], grads["proj_swin.bias"] = dw, db
    _, dw, db = nn_core.linear_backward(params.proj_ghfeat, batch.ghfeat, dh_ghfeat)
    grads["proj_ghfeat.weight"], grads["proj_ghfeat.bias"] = dw, db

    for stream, gru, cache, dh, proj, x_raw in (
        ("ghfeat_seq", params.gru_ghfeat, cache_tg, dh_tg, params.proj_ghfeat_seq, batch.ghfeat_seq),
        ("hubert", params.gru_hubert, cache_a, dh_a, params.proj_hubert, batch.hubert),
        ("roberta", params.gru_roberta, cache_t, dh_t, params.proj_roberta, batch.roberta),
    ):
        dxs, gru_grads = nn_core.bigru_backward(gru, cache, dh)
        gru_name = {"ghfeat_seq": "gru_ghfeat", "hubert": "gru_hubert", "roberta": "gru_roberta"}[stream]
        grads.update({f"{gru_name}.{k}": v for k, v in gru_grads.items()})
        _, dw, db = nn_core.linear_backward(proj, x_raw, dxs)
        grads[f"proj_{stream}.weight"], grads[f"proj_{stream}.bias"] = dw, db
    return loss, grads


def predict_binary(probabilities: np.ndarray, tau) -> np.ndarray:
    """1 where probability strictly exceeds the per-AU threshold, else 0."""
    probabilities = np.asarray(probabilities, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    if tau.shape != (N_AUS,):
        raise ValueError(f"threshold vector must have shape ({N_AUS},), got {tau.shape}")
    if (tau < 0).any() or (tau > 1).any():
        raise ValueError("thresholds must lie in [0, 1]")
    return (probabilities > tau).astype(np.int64)
