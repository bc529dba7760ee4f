"""Post-processing stack for saved prediction tracks: temporal logit
smoothing, per-AU threshold tuning, correlation-based probability fusion,
and the smoothing-window sweep.

Pipeline order is fixed: smooth -> tune/apply thresholds -> probability
fusion -> re-threshold the fused target AUs with their tuned thresholds.
Stage rows are reported under the keys Base, +Smooth, +Threshold, +AUcorr.

Smoothing window semantics for width k: frame t averages logit rows over
[t - floor((k-1)/2), t + floor(k/2)] clipped to the track, so k=6 spans 2
frames left and 3 right of center and windows shrink at the boundaries.
Threshold tuning and the sweep use a flat 0.5 threshold as the untuned
baseline; tuned values replace it from the +Threshold stage on.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit as sigmoid

from .feature_store import AU_NAMES, N_AUS
from .fusion_model import predict_binary
from .metrics import STAGE_KEYS, EvalReport, ablation_table, f1_per_au, macro_f1

# Tuned per-AU decision thresholds (reference operating point).
DEFAULT_THRESHOLDS = np.array(
    [0.5, 0.55, 0.5, 0.4, 0.45, 0.45, 0.45, 0.5, 0.5, 0.55, 0.4, 0.5])
DEFAULT_SMOOTH_K = 6
DEFAULT_GRID = tuple(np.round(np.arange(0.05, 0.951, 0.05), 2))


def flat_thresholds(value: float = 0.5) -> np.ndarray:
    return np.full(N_AUS, float(value))


@dataclass
class ThresholdVector:
    tau: np.ndarray

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=np.float64)
        if self.tau.shape != (N_AUS,):
            raise ValueError(f"threshold vector must have shape ({N_AUS},)")
        if (self.tau < 0).any() or (self.tau > 1).any():
            raise ValueError("thresholds must lie in [0, 1]")


@dataclass
class AUCorrRule:
    """Replace the target AU's probability by the arithmetic mean of the
    target and source probabilities."""
    target: int
    sources: tuple[int, ...]

    def __post_init__(self):
        self.sources = tuple(int(s) for s in self.sources)
        self.target = int(self.target)
        indices = (self.target, *self.sources)
        if not self.sources:
            raise ValueError("rule needs at least one source AU")
        if any(i < 0 or i >= N_AUS for i in indices):
            raise ValueError(f"AU indices must lie in 0..{N_AUS - 1}")
        if self.target in self.sources:
            raise ValueError("rule target cannot be one of its sources")
        if len(set(self.sources)) != len(self.sources):
            raise ValueError("duplicate source AU in rule")


def _au_index(name_or_index) -> int:
    if isinstance(name_or_index, str):
        if name_or_index not in AU_NAMES:
            raise ValueError(f"unknown AU name {name_or_index!r}")
        return AU_NAMES.index(name_or_index)
    return int(name_or_index)


def default_rules() -> list[AUCorrRule]:
    """The two shipped fusion rules: AU24 <- mean(AU24, AU4) and
    AU26 <- mean(AU26, AU1, AU2)."""
    return [
        AUCorrRule(target=_au_index("AU24"), sources=(_au_index("AU4"),)),
        AUCorrRule(target=_au_index("AU26"),
                   sources=(_au_index("AU1"), _au_index("AU2"))),
    ]


def rules_to_json(rules: Sequence[AUCorrRule]) -> str:
    payload = [{"target": AU_NAMES[r.target],
                "sources": [AU_NAMES[s] for s in r.sources]} for r in rules]
    return json.dumps(payload, indent=2)


def rules_from_json(text: str) -> list[AUCorrRule]:
    payload = json.loads(text)
    return [AUCorrRule(target=_au_index(e["target"]),
                       sources=tuple(_au_index(s) for s in e["sources"]))
            for e in payload]


@dataclass
class PredictionTrack:
    video_id: str
    frame_indices: np.ndarray  # (T,), strictly increasing
    logits: np.ndarray         # (T, 12)
    probabilities: np.ndarray | None = None  # sigmoid of logits when omitted

    def __post_init__(self):
        self.frame_indices = np.asarray(self.frame_indices, dtype=np.int64)
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.logits.ndim != 2 or self.logits.shape[1] != N_AUS:
            raise ValueError(f"logits must be (T, {N_AUS})")
        if self.frame_indices.shape != (self.logits.shape[0],):
            raise ValueError("frame index count must match the logit row count")
        if (np.diff(self.frame_indices) <= 0).any():
            raise ValueError("frame indices must be strictly increasing")
        if self.probabilities is None:
            self.probabilities = sigmoid(self.logits)
        else:
            self.probabilities = np.asarray(self.probabilities, dtype=np.float64)
            if self.probabilities.shape != self.logits.shape:
                raise ValueError("probability shape must match the logit shape")

    def __len__(self) -> int:
        return self.logits.shape[0]


def save_track(path, track: PredictionTrack) -> None:
    """Per-video CSV: frame_index column + 12 logit columns."""
    with open(path, "w") as fh:
        fh.write("frame_index," + ",".join(AU_NAMES) + "\n")
        for i in range(len(track)):
            row = ",".join(repr(float(v)) for v in track.logits[i])
            fh.write(f"{track.frame_indices[i]},{row}\n")


def load_track(path, video_id: str | None = None) -> PredictionTrack:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header != ["frame_index", *AU_NAMES]:
            raise ValueError(f"{path}: unexpected track header")
        idx, rows = [], []
        for line in fh:
            cells = line.strip().split(",")
            if len(cells) != 1 + N_AUS:
                raise ValueError(f"{path}: malformed track row")
            idx.append(int(cells[0]))
            rows.append([float(c) for c in cells[1:]])
    if video_id is None:
        import os
        video_id = os.path.splitext(os.path.basename(path))[0]
    return PredictionTrack(video_id=video_id,
                           frame_indices=np.array(idx, dtype=np.int64),
                           logits=np.array(rows, dtype=np.float64))


def smooth_logits(track: PredictionTrack, k: int) -> PredictionTrack:
    """Centered moving average over the logit rows; probabilities are
    recomputed from the smoothed logits. k=1 is the identity."""
    if k < 1:
        raise ValueError("window size must be >= 1")
    if k == 1:
        # exact identity: the prefix-sum reconstruction below would add
        # ~1e-15 of float error to every value
        return PredictionTrack(video_id=track.video_id,
                               frame_indices=track.frame_indices.copy(),
                               logits=track.logits.copy())
    t = len(track)
    left, right = (k - 1) // 2, k // 2
    prefix = np.zeros((t + 1, track.logits.shape[1]))
    np.cumsum(track.logits, axis=0, out=prefix[1:])
    lo = np.maximum(np.arange(t) - left, 0)
    hi = np.minimum(np.arange(t) + right, t - 1)
    smoothed = (prefix[hi + 1] - prefix[lo]) / (hi - lo + 1)[:, None]
    return PredictionTrack(video_id=track.video_id,
                           frame_indices=track.frame_indices.copy(),
                           logits=smoothed)


def aucorr_adjust(probabilities: np.ndarray,
                  rules: Sequence[AUCorrRule]) -> np.ndarray:
    """Apply every rule simultaneously: each target is replaced by the mean
    of its own and its sources' ORIGINAL probabilities, so rule order never
    matters. AUs targeted by no rule pass through bit-identical."""
    probabilities = np.asarray(probabilities, dtype=np.float64)
    if probabilities.ndim != 2 or probabilities.shape[1] != N_AUS:
        raise ValueError(f"probabilities must be (T, {N_AUS})")
    if (probabilities < 0).any() or (probabilities > 1).any():
        raise ValueError("probabilities must lie in [0, 1]")
    targets = [r.target for r in rules]
    if len(set(targets)) != len(targets):
        raise ValueError("multiple rules share one target AU")
    out = probabilities.copy()
    for rule in rules:
        cols = (rule.target, *rule.sources)
        out[:, rule.target] = probabilities[:, cols].mean(axis=1)
    return out


def _stack_predictions(tracks: Sequence[PredictionTrack],
                       labels: Sequence[np.ndarray]):
    if len(tracks) == 0:
        raise ValueError("need at least one track")
    if len(tracks) != len(labels):
        raise ValueError("track and label list lengths differ")
    probs, truth = [], []
    for track, lab in zip(tracks, labels):
        lab = np.asarray(lab)
        if lab.shape != (len(track), N_AUS):
            raise ValueError(
                f"labels for {track.video_id} must be ({len(track)}, {N_AUS})")
        probs.append(track.probabilities)
        truth.append(lab)
    return np.concatenate(probs), np.concatenate(truth)


def tune_thresholds(tracks: Sequence[PredictionTrack],
                    labels: Sequence[np.ndarray],
                    grid: Sequence[float] = DEFAULT_GRID) -> ThresholdVector:
    """Per-AU exhaustive grid search maximizing that AU's F1; per-AU F1 is
    decomposable, so independent searches maximize macro F1. Ties resolve
    to the smallest grid value."""
    grid = [float(g) for g in grid]
    if not grid:
        raise ValueError("threshold grid is empty")
    if any(g < 0 or g > 1 for g in grid):
        raise ValueError("grid values must lie in [0, 1]")
    probs, truth = _stack_predictions(tracks, labels)
    tau = np.zeros(N_AUS)
    for j in range(N_AUS):
        best_f1, best_tau = -1.0, None
        for g in sorted(grid):
            pred = (probs[:, j : j + 1] > g).astype(np.int64)
            f1 = f1_per_au(pred, truth[:, j : j + 1])[0]
            if f1 > best_f1:
                best_f1, best_tau = f1, g
        tau[j] = best_tau
    return ThresholdVector(tau=tau)


def sweep_window(tracks: Sequence[PredictionTrack],
                 labels: Sequence[np.ndarray],
                 k_values: Sequence[int],
                 tau: np.ndarray | None = None) -> list[tuple[int, float]]:
    """Macro F1 after smoothing with each window size, at a fixed threshold
    vector (flat 0.5 unless given). One (k, macro F1) row per k."""
    if tau is None:
        tau = flat_thresholds()
    rows = []
    for k in k_values:
        smoothed = [smooth_logits(t, k) for t in tracks]
        probs, truth = _stack_predictions(smoothed, labels)
        rows.append((int(k), macro_f1(f1_per_au(predict_binary(probs, tau), truth))))
    return rows


def sweep_to_csv(rows: Sequence[tuple[int, float]]) -> str:
    buf = io.StringIO()
    buf.write("k,macro_f1\n")
    for k, f1 in rows:
        buf.write(f"{k},{f1 * 100.0:.2f}\n")
    return buf.getvalue()


@dataclass
class PipelineResult:
    report: EvalReport
    thresholds: ThresholdVector
    binary: dict[str, np.ndarray]  # final per-video binary predictions


def run_pipeline(tracks: Sequence[PredictionTrack],
                 labels: Sequence[np.ndarray],
                 smooth_k: int = DEFAULT_SMOOTH_K,
                 grid: Sequence[float] = DEFAULT_GRID,
                 rules: Sequence[AUCorrRule] | None = None,
                 tune_tracks: Sequence[PredictionTrack] | None = None,
                 tune_labels: Sequence[np.ndarray] | None = None,
                 thresholds: ThresholdVector | None = None) -> PipelineResult:
    """Run the full staged pipeline and report per-stage F1 rows.

    Stages: Base (raw probabilities, flat 0.5), +Smooth (smoothed, flat
    0.5), +Threshold (smoothed, tuned tau), +AUcorr (probability fusion on
    the smoothed probabilities, fused targets re-thresholded with their
    tuned tau). Thresholds are tuned on tune_tracks when given, else on
    the evaluation tracks themselves; a preset ThresholdVector skips
    tuning entirely.
    """
    if rules is None:
        rules = default_rules()
    flat = flat_thresholds()

    probs_raw, truth = _stack_predictions(tracks, labels)
    stage_rows: dict[str, np.ndarray] = {}
    stage_rows["Base"] = f1_per_au(predict_binary(probs_raw, flat), truth)

    smoothed = [smooth_logits(t, smooth_k) for t in tracks]
    probs_smooth, _ = _stack_predictions(smoothed, labels)
    stage_rows["+Smooth"] = f1_per_au(predict_binary(probs_smooth, flat), truth)

    if thresholds is None:
        if tune_tracks is None:
            tune_tracks, tune_labels = tracks, labels
        tuned_src = [smooth_logits(t, smooth_k) for t in tune_tracks]
        thresholds = tune_thresholds(tuned_src, tune_labels, grid)
    binary_thr = predict_binary(probs_smooth, thresholds.tau)
    stage_rows["+Threshold"] = f1_per_au(binary_thr, truth)

    probs_adj = aucorr_adjust(probs_smooth, rules)
    binary_adj = binary_thr.copy()
    for rule in rules:
        j = rule.target
        binary_adj[:, j] = (probs_adj[:, j] > thresholds.tau[j]).astype(np.int64)
    stage_rows["+AUcorr"] = f1_per_au(binary_adj, truth)

    per_video: dict[str, np.ndarray] = {}
    offset = 0
    for track in tracks:
        per_video[track.video_id] = binary_adj[offset : offset + len(track)]
        offset += len(track)
    report = ablation_table({k: stage_rows[k] for k in STAGE_KEYS})
    return PipelineResult(report=report, thresholds=thresholds, binary=per_video)
