"""F1 metrics, Pearson correlation analysis, correlation-rule mining, and
ablation-table assembly.

F1 values are kept on the [0, 1] scale internally; table emission formats
them as percentages. Macro F1 is the unweighted mean over the 12 AUs.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .feature_store import AU_NAMES, N_AUS

# Pipeline stage keys, in application order.
STAGE_KEYS = ("Base", "+Smooth", "+Threshold", "+AUcorr")
# Row labels used when emitting the cumulative ablation table.
STAGE_LABELS = {
    "Base": "Base",
    "+Smooth": "+ Smooth",
    "+Threshold": "+ Smooth + Threshold",
    "+AUcorr": "+ Smooth + Threshold + AUcorr",
}


def _require_binary(arr: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(arr)
    if not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} must contain only 0/1 values")
    return arr.astype(np.int64)


def f1_per_au(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Per-column F1 = 2TP / (2TP + FP + FN); 0 when the denominator is 0."""
    pred = _require_binary(pred, "pred")
    truth = _require_binary(truth, "truth")
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs truth {truth.shape}")
    tp = ((pred == 1) & (truth == 1)).sum(axis=0)
    fp = ((pred == 1) & (truth == 0)).sum(axis=0)
    fn = ((pred == 0) & (truth == 1)).sum(axis=0)
    denom = 2 * tp + fp + fn
    out = np.zeros(pred.shape[1], dtype=np.float64)
    np.divide(2.0 * tp, denom, out=out, where=denom > 0)
    return out


def macro_f1(per_au: np.ndarray) -> float:
    per_au = np.asarray(per_au, dtype=np.float64)
    return float(per_au.mean())


@dataclass
class PccMatrix:
    row_labels: list[str]
    col_labels: list[str]
    values: np.ndarray  # (rows, cols) in [-1, 1]; 0 where invalid
    valid: np.ndarray   # bool mask; False where either column is constant

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("," + ",".join(self.col_labels) + "\n")
        for i, name in enumerate(self.row_labels):
            cells = [f"{self.values[i, j]:.6f}" if self.valid[i, j] else ""
                     for j in range(len(self.col_labels))]
            buf.write(name + "," + ",".join(cells) + "\n")
        return buf.getvalue()


def _column_stats(series: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    centered = series - series.mean(axis=0, keepdims=True)
    std = np.sqrt((centered ** 2).mean(axis=0))
    return centered, std, std > 0


def pcc_matrix(series: np.ndarray, labels: list[str] | None = None) -> PccMatrix:
    """Pairwise Pearson correlation; constant columns are masked invalid."""
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 2 or series.shape[0] < 2:
        raise ValueError("need a 2-D table with at least 2 rows")
    n, k = series.shape
    if labels is None:
        labels = list(AU_NAMES) if k == N_AUS else [f"c{i}" for i in range(k)]
    if len(labels) != k:
        raise ValueError("label count does not match the column count")
    centered, std, ok = _column_stats(series)
    cov = centered.T @ centered / n
    denom = np.outer(std, std)
    values = np.zeros((k, k))
    np.divide(cov, denom, out=values, where=denom > 0)
    valid = np.outer(ok, ok)
    values[~valid] = 0.0
    np.fill_diagonal(values, np.where(ok, 1.0, 0.0))
    return PccMatrix(row_labels=list(labels), col_labels=list(labels),
                     values=values, valid=valid)


def au_expr_pcc(au_labels: np.ndarray, expr_labels: np.ndarray,
                expr_names: list[str] | None = None) -> PccMatrix:
    """Rectangular Pearson block between AU columns and expression columns."""
    au_labels = np.asarray(au_labels, dtype=np.float64)
    expr_labels = np.asarray(expr_labels, dtype=np.float64)
    if au_labels.shape[0] != expr_labels.shape[0]:
        raise ValueError("AU and expression tables must have the same row count")
    if au_labels.shape[0] < 2:
        raise ValueError("need at least 2 rows")
    if au_labels.shape[1] != N_AUS:
        raise ValueError(f"AU table must have {N_AUS} columns")
    n, e = expr_labels.shape[0], expr_labels.shape[1]
    if expr_names is None:
        expr_names = [f"expr{i}" for i in range(e)]
    au_c, au_std, au_ok = _column_stats(au_labels)
    ex_c, ex_std, ex_ok = _column_stats(expr_labels)
    cov = au_c.T @ ex_c / n
    denom = np.outer(au_std, ex_std)
    values = np.zeros((N_AUS, e))
    np.divide(cov, denom, out=values, where=denom > 0)
    valid = np.outer(au_ok, ex_ok)
    values[~valid] = 0.0
    return PccMatrix(row_labels=list(AU_NAMES), col_labels=list(expr_names),
                     values=values, valid=valid)


def mine_rules(pcc: PccMatrix, per_au_f1: np.ndarray, threshold: float) -> list:
    """Propose probability-fusion rules from strongly correlated AU pairs.

    For each valid pair with correlation >= threshold, the lower-F1 AU
    becomes the target and the higher-F1 AU a source; pairs with equal F1
    yield no rule (neither AU is easier). Sources sharing a target merge
    into one rule. The shipped default rules are fixed, not mined.
    """
    from .postprocess import AUCorrRule

    per_au_f1 = np.asarray(per_au_f1, dtype=np.float64)
    k = len(pcc.row_labels)
    if pcc.values.shape != (k, k) or per_au_f1.shape != (k,):
        raise ValueError("expected a square matrix aligned with the F1 vector")
    sources: dict[int, set[int]] = {}
    for i in range(k):
        for j in range(i + 1, k):
            if not pcc.valid[i, j] or pcc.values[i, j] < threshold:
                continue
            if per_au_f1[i] == per_au_f1[j]:
                continue
            target, source = (i, j) if per_au_f1[i] < per_au_f1[j] else (j, i)
            sources.setdefault(target, set()).add(source)
    return [AUCorrRule(target=t, sources=tuple(sorted(s)))
            for t, s in sorted(sources.items())]


@dataclass
class EvalReport:
    """Per-AU F1 rows (fractions in [0,1]) keyed by pipeline stage."""
    rows: dict[str, np.ndarray] = field(default_factory=dict)

    def add(self, stage: str, per_au: np.ndarray) -> None:
        per_au = np.asarray(per_au, dtype=np.float64)
        if per_au.shape != (N_AUS,):
            raise ValueError(f"per-AU row must have shape ({N_AUS},)")
        self.rows[stage] = per_au

    def macro(self, stage: str) -> float:
        return macro_f1(self.rows[stage])

    def to_csv(self) -> str:
        """Ablation table: Method + 12 AU columns + Avg., percentages."""
        buf = io.StringIO()
        buf.write("Method," + ",".join(AU_NAMES) + ",Avg.\n")
        ordered = [k for k in STAGE_KEYS if k in self.rows]
        ordered += [k for k in self.rows if k not in STAGE_KEYS]
        for stage in ordered:
            row = self.rows[stage] * 100.0
            label = STAGE_LABELS.get(stage, stage)
            cells = ",".join(f"{v:.1f}" for v in row)
            buf.write(f"{label},{cells},{macro_f1(row):.1f}\n")
        return buf.getvalue()

    def to_text(self) -> str:
        """Aligned plain-text rendering of to_csv content."""
        lines = [line.split(",") for line in self.to_csv().strip().split("\n")]
        widths = [max(len(row[c]) for row in lines) for c in range(len(lines[0]))]
        out = []
        for row in lines:
            out.append("  ".join(cell.rjust(w) for cell, w in zip(row, widths)))
        return "\n".join(out) + "\n"


def ablation_table(stage_reports: dict[str, np.ndarray]) -> EvalReport:
    """Assemble stage rows into canonical pipeline order."""
    if not stage_reports:
        raise ValueError("need at least one stage")
    report = EvalReport()
    for key in STAGE_KEYS:
        if key in stage_reports:
            report.add(key, stage_reports[key])
    for key, row in stage_reports.items():
        if key not in STAGE_KEYS:
            report.add(key, row)
    return report
