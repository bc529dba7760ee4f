"""Command-line pipeline: synth, train, eval, postprocess, sweep, analyze,
validate.

Option resolution precedence is flags > config file > built-in defaults.
The config file is JSON whose keys are option names with underscores
(e.g. {"max_epochs": 3}); each subcommand reads only the keys it knows
and rejects unknown ones. Every artifact-producing run writes a
``run_config.json`` reproducibility record beside its outputs. Relative
``--out`` paths resolve against the FUSEAU_OUTPUT_ROOT environment
variable when it is set.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from . import feature_store as fs
from . import metrics, postprocess, trainer
from .fusion_model import ModelConfig
from .losses import LossWeights

OUTPUT_ROOT_ENV = "FUSEAU_OUTPUT_ROOT"


class CliError(Exception):
    """User-facing CLI failure; rendered as a one-line diagnostic."""


# ---------------------------------------------------------------------------
# Option plumbing


def _parse_int_list(text: str) -> list[int]:
    """Window sizes: comma-separated integers and inclusive a..b ranges,
    e.g. '1,2..8,16'."""
    out: list[int] = []
    for item in text.split(","):
        item = item.strip()
        if ".." in item:
            parts = item.split("..")
            if len(parts) != 2:
                raise CliError(f"bad range {item!r}; expected a..b")
            lo, hi = int(parts[0]), int(parts[1])
            if hi < lo:
                raise CliError(f"bad range {item!r}; end below start")
            out.extend(range(lo, hi + 1))
        else:
            out.append(int(item))
    if not out:
        raise CliError("empty integer list")
    return out


def _parse_float_list(text: str, expected: int | None = None) -> list[float]:
    values = [float(v) for v in text.split(",")]
    if expected is not None and len(values) != expected:
        raise CliError(f"expected {expected} comma-separated values, got {len(values)}")
    return values


def _parse_grid(text: str) -> list[float]:
    """Threshold grid: comma floats or an a..b..step range, e.g.
    '0.05..0.95..0.05'."""
    if ".." in text:
        parts = text.split("..")
        if len(parts) != 3:
            raise CliError(f"bad grid {text!r}; expected lo..hi..step")
        lo, hi, step = (float(p) for p in parts)
        if step <= 0 or hi < lo:
            raise CliError(f"bad grid {text!r}")
        n = int(round((hi - lo) / step))
        return [round(lo + i * step, 10) for i in range(n + 1) if lo + i * step <= hi + 1e-9]
    return _parse_float_list(text)


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise CliError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"config file {p} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise CliError(f"config file {p} must hold a JSON object")
    return doc


def _resolve(args: argparse.Namespace, file_cfg: dict, defaults: dict) -> dict:
    """Merge flag values over file values over defaults."""
    unknown = set(file_cfg) - set(defaults)
    if unknown:
        raise CliError(f"unknown config keys: {', '.join(sorted(unknown))}")
    resolved = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
        elif key in file_cfg:
            resolved[key] = file_cfg[key]
        else:
            resolved[key] = default
    return resolved


def _out_dir(raw: str) -> Path:
    path = Path(raw)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_run_config(out: Path, subcommand: str, resolved: dict) -> None:
    record = {"subcommand": subcommand}
    record.update({k: (str(v) if isinstance(v, Path) else v)
                   for k, v in sorted(resolved.items())})
    (out / "run_config.json").write_text(json.dumps(record, indent=2) + "\n")


def _loss_weights(cfg: dict) -> LossWeights:
    kwargs = {}
    if cfg.get("bce_weights") is not None:
        kwargs["bce"] = _as_weight_list(cfg["bce_weights"])
    if cfg.get("multi_weights") is not None:
        kwargs["multilabel"] = _as_weight_list(cfg["multi_weights"])
    return LossWeights(**kwargs)


def _as_weight_list(value) -> np.ndarray:
    if isinstance(value, str):
        value = _parse_float_list(value, fs.N_AUS)
    return np.asarray(value, dtype=np.float64)


def _thresholds_arg(value) -> postprocess.ThresholdVector | None:
    if value is None:
        return None
    if isinstance(value, str):
        value = _parse_float_list(value, fs.N_AUS)
    return postprocess.ThresholdVector(tau=np.asarray(value, dtype=np.float64))


def _load_rules(path: str | None) -> list[postprocess.AUCorrRule]:
    if path is None:
        return postprocess.default_rules()
    p = Path(path)
    if not p.exists():
        raise CliError(f"rules file not found: {p}")
    return postprocess.rules_from_json(p.read_text())


def _open_store(manifest_path: str) -> fs.FeatureStore:
    p = Path(manifest_path)
    if not p.exists():
        raise CliError(f"manifest not found: {p}")
    return fs.FeatureStore.open(p)


# ---------------------------------------------------------------------------
# Subcommands


SYNTH_DEFAULTS = {
    "seed": 0, "videos": 4, "frames": 120, "fps": 5.0,
    "dim_swin": 768, "dim_ghfeat": 512, "dim_hubert": 1280, "dim_roberta": 1024,
    "noise": 0.05, "run_length": 25, "jitter": 0.25,
    "invalid_rate": 0.0, "silence_rate": 0.0, "val_fraction": 0.25, "out": "synth",
}


def _cmd_synth(args) -> int:
    cfg = _resolve(args, _load_config_file(args.config), SYNTH_DEFAULTS)
    out = _out_dir(cfg["out"])
    spec = fs.SynthSpec(
        seed=cfg["seed"], n_videos=cfg["videos"], frames_per_video=cfg["frames"],
        fps=cfg["fps"], dim_swin=cfg["dim_swin"], dim_ghfeat=cfg["dim_ghfeat"],
        dim_hubert=cfg["dim_hubert"], dim_roberta=cfg["dim_roberta"],
        noise_rate=cfg["noise"], run_length=cfg["run_length"],
        feature_jitter=cfg["jitter"], invalid_label_rate=cfg["invalid_rate"],
        text_silence_rate=cfg["silence_rate"],
    )
    manifest = fs.generate_synthetic(spec, out)
    manifest = fs.split_videos(manifest, cfg["val_fraction"], seed=cfg["seed"])
    fs.save_manifest(manifest, out / "manifest.json")
    _write_run_config(out, "synth", cfg)
    counts = manifest.split_counts()
    print(f"wrote {out / 'manifest.json'} "
          f"({counts['train']} train / {counts['val']} val videos)")
    return 0


TRAIN_DEFAULTS = {
    "manifest": None, "out": "run",
    "lr": 1e-5, "weight_decay": 1e-5, "clip_norm": 1.0, "batch_size": 256,
    "max_epochs": 20, "patience": 5, "seed": 0,
    "proj_dim": 128, "gru_hidden": 128, "mlp_hidden": 512,
    "bce_weights": None, "multi_weights": None,
}


def _cmd_train(args) -> int:
    cfg = _resolve(args, _load_config_file(args.config), TRAIN_DEFAULTS)
    if cfg["manifest"] is None:
        raise CliError("train requires --manifest")
    store = _open_store(cfg["manifest"])
    out = _out_dir(cfg["out"])
    _write_run_config(out, "train", cfg)

    dims = store.stream_dims()
    model_cfg = ModelConfig.from_stream_dims(
        dims, proj_dim=cfg["proj_dim"], gru_hidden=cfg["gru_hidden"],
        mlp_hidden=cfg["mlp_hidden"], seed=cfg["seed"])
    train_cfg = trainer.TrainConfig(
        lr=cfg["lr"], weight_decay=cfg["weight_decay"], clip_norm=cfg["clip_norm"],
        batch_size=cfg["batch_size"], max_epochs=cfg["max_epochs"],
        patience=cfg["patience"], seed=cfg["seed"])
    best, history = trainer.train(train_cfg, model_cfg, store,
                                  weights=_loss_weights(cfg))
    ckpt_io.save_checkpoint(out / "best.ckpt", best)
    (out / "history.csv").write_text(history.to_csv())
    print(f"wrote {out / 'best.ckpt'} (best epoch "
          f"{best.meta['best_epoch']}) and {out / 'history.csv'}")
    return 0


EVAL_DEFAULTS = {
    "checkpoint": None, "manifest": None, "out": "eval",
    "split": "val", "tune_split": "val", "stage": "all",
    "smooth_k": postprocess.DEFAULT_SMOOTH_K, "grid": None,
    "thresholds": None, "rules": None, "batch_size": 256,
}


def _cmd_eval(args) -> int:
    cfg = _resolve(args, _load_config_file(args.config), EVAL_DEFAULTS)
    for key in ("checkpoint", "manifest"):
        if cfg[key] is None:
            raise CliError(f"eval requires --{key}")
    if cfg["stage"] not in ("all", "base"):
        raise CliError("--stage must be 'all' or 'base'")
    store = _open_store(cfg["manifest"])
    out = _out_dir(cfg["out"])
    _write_run_config(out, "eval", cfg)
    ckpt = ckpt_io.load_checkpoint(cfg["checkpoint"])

    result = trainer.evaluate(ckpt.params, store, cfg["split"],
                              batch_size=cfg["batch_size"])
    tracks_dir = out / "tracks"
    tracks_dir.mkdir(exist_ok=True)
    for track in result.tracks:
        postprocess.save_track(tracks_dir / f"{track.video_id}.csv", track)

    if cfg["stage"] == "base":
        report = result.report
    else:
        grid = _parse_grid(cfg["grid"]) if cfg["grid"] else postprocess.DEFAULT_GRID
        preset = _thresholds_arg(cfg["thresholds"])
        if cfg["tune_split"] == cfg["split"] or preset is not None:
            tune_tracks = tune_labels = None
        else:
            tune_tracks, tune_labels = trainer.predict_tracks(
                ckpt.params, store, cfg["tune_split"], cfg["batch_size"])
        pipe = postprocess.run_pipeline(
            result.tracks, result.labels, smooth_k=cfg["smooth_k"], grid=grid,
            rules=_load_rules(cfg["rules"]), tune_tracks=tune_tracks,
            tune_labels=tune_labels, thresholds=preset)
        report = pipe.report
        (out / "thresholds.json").write_text(
            json.dumps({"tau": pipe.thresholds.tau.tolist()}, indent=2) + "\n")

    (out / "ablation.csv").write_text(report.to_csv())
    (out / "ablation.txt").write_text(report.to_text())
    print(report.to_text(), end="")
    print(f"wrote {out / 'ablation.csv'}")
    return 0


POSTPROCESS_DEFAULTS = {
    "tracks": None, "manifest": None, "out": "postprocessed",
    "smooth_k": postprocess.DEFAULT_SMOOTH_K, "grid": None,
    "thresholds": None, "rules": None,
}


def _load_tracks_dir(tracks_dir: str, store: fs.FeatureStore):
    directory = Path(tracks_dir)
    if not directory.is_dir():
        raise CliError(f"tracks directory not found: {directory}")
    tracks, labels = [], []
    for path in sorted(directory.glob("*.csv")):
        track = postprocess.load_track(path)
        tracks.append(track)
        labels.append(store.labels_for_frames(track.video_id, track.frame_indices))
    if not tracks:
        raise CliError(f"no track CSVs in {directory}")
    return tracks, labels


def _cmd_postprocess(args) -> int:
    cfg = _resolve(args, _load_config_file(args.config), POSTPROCESS_DEFAULTS)
    for key in ("tracks", "manifest"):
        if cfg[key] is None:
            raise CliError(f"postprocess requires --{key}")
    store = _open_store(cfg["manifest"])
    out = _out_dir(cfg["out"])
    _write_run_config(out, "postprocess", cfg)
    tracks, labels = _load_tracks_dir(cfg["tracks"], store)
    grid = _parse_grid(cfg["grid"]) if cfg["grid"] else postprocess.DEFAULT_GRID
    pipe = postprocess.run_pipeline(
        tracks, labels, smooth_k=cfg["smooth_k"], grid=grid,
        rules=_load_rules(cfg["rules"]), thresholds=_thresholds_arg(cfg["thresholds"]))
    (out / "ablation.csv").write_text(pipe.report.to_csv())
    (out / "ablation.txt").write_text(pipe.report.to_text())
    (out / "thresholds.json").write_text(
        json.dumps({"tau": pipe.thresholds.tau.tolist()}, indent=2) + "\n")
    pred_dir = out / "predictions"
    pred_dir.mkdir(exist_ok=True)
    for track in tracks:
        binary = pipe.binary[track.video_id]
        with open(pred_dir / f"{track.video_id}.csv", "w") as fh:
            fh.write("frame_index," + ",".join(fs.AU_NAMES) + "\n")
            for i, frame in enumerate(track.frame_indices):
                fh.write(f"{frame}," + ",".join(str(v) for v in binary[i]) + "\n")
    print(pipe.report.to_text(), end="")
    print(f"wrote {out / 'ablation.csv'}")
    return 0


SWEEP_DEFAULTS = {
    "checkpoint": None, "tracks": None, "manifest": None, "out": "sweep",
    "split": "val", "k": "2..32", "thresholds": None, "batch_size": 256,
}


def _cmd_sweep(args) -> int:
    cfg = _resolve(args, _load_config_file(args.config), SWEEP_DEFAULTS)
    if cfg["manifest"] is None:
        raise CliError("sweep requires --manifest")
    store = _open_store(cfg["manifest"])
    out = _out_dir(cfg["out"])
    _write_run_config(out, "sweep", cfg)
    if cfg["tracks"] is not None:
        tracks, labels = _load_tracks_dir(cfg["tracks"], store)
    elif cfg["checkpoint"] is not None:
        ckpt = ckpt_io.load_checkpoint(cfg["checkpoint"])
        tracks, labels = trainer.predict_tracks(
            ckpt.params, store, cfg["split"], cfg["batch_size"])
    else:
        raise CliError("sweep requires --tracks or --checkpoint")
    preset = _thresholds_arg(cfg["thresholds"])
    rows = postprocess.sweep_window(
        tracks, labels, _parse_int_list(cfg["k"]),
        tau=None if preset is None else preset.tau)
    (out / "sweep.csv").write_text(postprocess.sweep_to_csv(rows))
    best_k, best_f1 = max(rows, key=lambda r: r[1])
    print(postprocess.sweep_to_csv(rows), end="")
    print(f"best k = {best_k} (macro F1 {best_f1 * 100.0:.2f}); "
          f"wrote {out / 'sweep.csv'}")
    return 0


ANALYZE_DEFAULTS = {
    "manifest": None, "out": "analysis", "split": "train",
    "checkpoint": None, "f1": None, "pcc_threshold": 0.3,
    "expr_file": None, "batch_size": 256,
}


def _cmd_analyze(args) -> int:
    cfg = _resolve(args, _load_config_file(args.config), ANALYZE_DEFAULTS)
    if cfg["manifest"] is None:
        raise CliError("analyze requires --manifest")
    store = _open_store(cfg["manifest"])
    out = _out_dir(cfg["out"])
    _write_run_config(out, "analyze", cfg)

    label_blocks = []
    for entry in store.manifest.videos:
        if entry.split != cfg["split"]:
            continue
        frames = store.valid_frames(entry.video_id)
        if frames.size:
            label_blocks.append(store.labels_for_frames(entry.video_id, frames))
    if not label_blocks:
        raise CliError(f"split {cfg['split']!r} holds no labeled frames")
    labels = np.concatenate(label_blocks)

    pcc = metrics.pcc_matrix(labels, list(fs.AU_NAMES))
    (out / "pcc.csv").write_text(pcc.to_csv())
    print(f"wrote {out / 'pcc.csv'}")

    per_au_f1 = None
    if cfg["f1"] is not None:
        per_au_f1 = np.asarray(_as_weight_list(cfg["f1"]), dtype=np.float64)
    elif cfg["checkpoint"] is not None:
        ckpt = ckpt_io.load_checkpoint(cfg["checkpoint"])
        result = trainer.evaluate(ckpt.params, store, cfg["split"],
                                  batch_size=cfg["batch_size"])
        per_au_f1 = result.report.rows["Base"]
    if per_au_f1 is not None:
        rules = metrics.mine_rules(pcc, per_au_f1, cfg["pcc_threshold"])
        (out / "rules.json").write_text(postprocess.rules_to_json(rules) + "\n")
        print(f"mined {len(rules)} rule(s); wrote {out / 'rules.json'}")

    if cfg["expr_file"] is not None:
        expr_path = Path(cfg["expr_file"])
        if not expr_path.exists():
            raise CliError(f"expression label file not found: {expr_path}")
        with open(expr_path) as fh:
            names = fh.readline().strip().split(",")
            expr = np.loadtxt(fh, delimiter=",", ndmin=2)
        if expr.shape[0] != labels.shape[0]:
            raise CliError(
                f"expression rows ({expr.shape[0]}) do not align with the "
                f"split's labeled frames ({labels.shape[0]})")
        block = metrics.au_expr_pcc(labels, expr, names)
        (out / "au_expr_pcc.csv").write_text(block.to_csv())
        print(f"wrote {out / 'au_expr_pcc.csv'}")
    return 0


def _cmd_validate(args) -> int:
    store = _open_store(args.manifest)
    dims = store.stream_dims()
    counts = store.manifest.split_counts()
    n_frames = sum(e.frame_count for e in store.manifest.videos)
    n_valid = sum(store.valid_frames(e.video_id).size for e in store.manifest.videos)
    print(f"manifest OK: {len(store.manifest.videos)} videos, "
          f"{n_frames} frames ({n_valid} labeled), splits {counts}, "
          f"dims {dims}")
    return 0


# ---------------------------------------------------------------------------
# Parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fuseau",
        description="Multimodal facial action unit detection pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a planted synthetic dataset")
    _add_common(p)
    for flag in ("seed", "videos", "frames", "run_length",
                 "dim_swin", "dim_ghfeat", "dim_hubert", "dim_roberta"):
        p.add_argument(f"--{flag.replace('_', '-')}", dest=flag, type=int)
    for flag in ("fps", "noise", "jitter", "invalid_rate", "silence_rate",
                 "val_fraction"):
        p.add_argument(f"--{flag.replace('_', '-')}", dest=flag, type=float)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a model from a manifest")
    _add_common(p)
    p.add_argument("--manifest")
    for flag in ("batch_size", "max_epochs", "patience", "seed",
                 "proj_dim", "gru_hidden", "mlp_hidden"):
        p.add_argument(f"--{flag.replace('_', '-')}", dest=flag, type=int)
    for flag in ("lr", "weight_decay", "clip_norm"):
        p.add_argument(f"--{flag.replace('_', '-')}", dest=flag, type=float)
    p.add_argument("--bce-weights", dest="bce_weights",
                   help="12 comma-separated per-AU BCE weights")
    p.add_argument("--multi-weights", dest="multi_weights",
                   help="12 comma-separated per-AU soft-margin weights")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint with the full stack")
    _add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--manifest")
    p.add_argument("--split")
    p.add_argument("--tune-split", dest="tune_split")
    p.add_argument("--stage", choices=("all", "base"))
    p.add_argument("--smooth-k", dest="smooth_k", type=int)
    p.add_argument("--grid", help="comma floats or lo..hi..step")
    p.add_argument("--thresholds", help="12 comma-separated values (skips tuning)")
    p.add_argument("--rules", help="JSON rule file")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("postprocess", help="apply the stack to saved tracks")
    _add_common(p)
    p.add_argument("--tracks")
    p.add_argument("--manifest")
    p.add_argument("--smooth-k", dest="smooth_k", type=int)
    p.add_argument("--grid")
    p.add_argument("--thresholds")
    p.add_argument("--rules")
    p.set_defaults(func=_cmd_postprocess)

    p = sub.add_parser("sweep", help="smoothing window sweep")
    _add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--tracks")
    p.add_argument("--manifest")
    p.add_argument("--split")
    p.add_argument("--k", help="window sizes, e.g. 2..32 or 1,2,6")
    p.add_argument("--thresholds")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("analyze", help="label correlation analysis + rule mining")
    _add_common(p)
    p.add_argument("--manifest")
    p.add_argument("--split")
    p.add_argument("--checkpoint", help="mine rules using this model's val F1")
    p.add_argument("--f1", help="12 comma-separated per-AU F1 values")
    p.add_argument("--pcc-threshold", dest="pcc_threshold", type=float)
    p.add_argument("--expr-file", dest="expr_file",
                   help="CSV of one-hot expression labels aligned to the split")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("validate", help="validate a manifest and its files")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=_cmd_validate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, fs.ManifestError, fs.FeatureFileError,
            ckpt_io.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
