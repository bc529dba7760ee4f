"""Dataset manifest, binary feature files, label CSVs, temporal window
assembly, video-independent splits, and synthetic dataset generation.

On-disk formats (all little-endian):

Feature file
    8 bytes   magic ``FUSEAU01`` (the trailing ``01`` is the container
              version and implies float32 elements)
    u16       stream-name byte length
    ...       stream name, UTF-8
    u64       frame_count
    u64       dim
    f32 * (frame_count * dim)   frame-major matrix

Label file
    CSV: one header line naming the 12 AUs, then one comma-separated row of
    12 integers per frame, each in {-1, 0, 1}.

Manifest
    JSON (see :func:`save_manifest`); file paths are resolved relative to
    the manifest's own directory.

Everything here is read-only after load and safe for concurrent readers;
synthetic generation and split assignment write from a single caller.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

AU_NAMES = (
    "AU1", "AU2", "AU4", "AU6", "AU7", "AU10",
    "AU12", "AU15", "AU23", "AU24", "AU25", "AU26",
)
N_AUS = len(AU_NAMES)

FEATURE_MAGIC = b"FUSEAU01"

# Stream keys, named after the upstream extractor that produces each file.
STREAM_SWIN = "swin"        # static visual descriptor, one row per frame
STREAM_GHFEAT = "ghfeat"    # static GAN-encoder descriptor; also windowed +/-4 frames
STREAM_HUBERT = "hubert"    # frame-aligned audio descriptor, windowed +/-2 s
STREAM_ROBERTA = "roberta"  # frame-aligned text descriptor, windowed +/-2 s, zero rows when silent
STREAMS = (STREAM_SWIN, STREAM_GHFEAT, STREAM_HUBERT, STREAM_ROBERTA)

SPLITS = ("train", "val", "test", "unassigned")

FRAME_WINDOW_RADIUS = 4     # ghfeat temporal window: frames t-4 .. t+4
TIME_WINDOW_SECONDS = 2.0   # audio/text window: timestamps within +/-2 s


class ManifestError(Exception):
    """Manifest missing, malformed, or inconsistent with referenced files."""


class FeatureFileError(Exception):
    """Feature file unreadable or its header violates the format."""


# ---------------------------------------------------------------------------
# Feature file I/O


def write_feature_file(path: str | Path, stream_name: str, data: np.ndarray) -> None:
    """Write a frame-major float32 matrix in the container format above."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 2:
        raise ValueError(f"feature data must be 2-D, got shape {data.shape}")
    name_bytes = stream_name.encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<H", len(name_bytes)))
        fh.write(name_bytes)
        fh.write(struct.pack("<QQ", data.shape[0], data.shape[1]))
        fh.write(data.astype("<f4", copy=False).tobytes())


def read_feature_header(path: str | Path) -> tuple[str, int, int]:
    """Return (stream_name, frame_count, dim) without reading the payload."""
    try:
        with open(path, "rb") as fh:
            magic = fh.read(8)
            if magic != FEATURE_MAGIC:
                raise FeatureFileError(f"{path}: bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, path))
            name = _read_exact(fh, name_len, path).decode("utf-8")
            frame_count, dim = struct.unpack("<QQ", _read_exact(fh, 16, path))
    except OSError as exc:
        raise FeatureFileError(f"{path}: {exc}") from exc
    return name, frame_count, dim


def read_feature_file(path: str | Path) -> tuple[str, np.ndarray]:
    """Read a feature file; returns (stream_name, float32 matrix)."""
    name, frame_count, dim = read_feature_header(path)
    header_size = 8 + 2 + len(name.encode("utf-8")) + 16
    with open(path, "rb") as fh:
        fh.seek(header_size)
        payload = fh.read()
    expected = frame_count * dim * 4
    if len(payload) != expected:
        raise FeatureFileError(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(frame_count, dim)
    return name, data


def _read_exact(fh, n: int, path) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FeatureFileError(f"{path}: truncated header")
    return buf


# ---------------------------------------------------------------------------
# Label file I/O


def write_label_file(path: str | Path, labels: np.ndarray, au_names=AU_NAMES) -> None:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 2 or labels.shape[1] != len(au_names):
        raise ValueError(f"labels must be (frames, {len(au_names)}), got {labels.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(au_names) + "\n")
        for row in labels:
            fh.write(",".join(str(int(v)) for v in row) + "\n")


def read_label_file(path: str | Path, au_names=AU_NAMES) -> np.ndarray:
    """Read a label CSV into an int8 (frames, 12) matrix of {-1, 0, 1}."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
    except OSError as exc:
        raise ManifestError(f"{path}: {exc}") from exc
    if not lines:
        raise ManifestError(f"{path}: empty label file")
    header = tuple(lines[0].split(","))
    if header != tuple(au_names):
        raise ManifestError(f"{path}: label header {header} does not match AU names {tuple(au_names)}")
    rows = np.empty((len(lines) - 1, len(au_names)), dtype=np.int8)
    for i, line in enumerate(lines[1:]):
        parts = line.split(",")
        if len(parts) != len(au_names):
            raise ManifestError(f"{path}: row {i} has {len(parts)} fields, expected {len(au_names)}")
        rows[i] = [int(p) for p in parts]
    bad = ~np.isin(rows, (-1, 0, 1))
    if bad.any():
        raise ManifestError(f"{path}: label values outside {{-1, 0, 1}}")
    return rows


# ---------------------------------------------------------------------------
# Manifest


@dataclass
class VideoEntry:
    video_id: str
    frame_count: int
    fps: float
    feature_paths: dict[str, str]
    label_path: str
    split: str = "unassigned"

    def __post_init__(self):
        if self.frame_count <= 0:
            raise ManifestError(f"{self.video_id}: frame_count must be positive")
        if self.fps <= 0:
            raise ManifestError(f"{self.video_id}: fps must be positive")
        if self.split not in SPLITS:
            raise ManifestError(f"{self.video_id}: unknown split {self.split!r}")


@dataclass
class DatasetManifest:
    videos: list[VideoEntry]
    au_names: tuple[str, ...] = AU_NAMES
    split_seed: int = 0

    def __post_init__(self):
        self.au_names = tuple(self.au_names)
        if len(self.au_names) != N_AUS:
            raise ManifestError(f"au_names must have exactly {N_AUS} entries")
        ids = [v.video_id for v in self.videos]
        if len(set(ids)) != len(ids):
            raise ManifestError("duplicate video identifiers in manifest")

    def video(self, video_id: str) -> VideoEntry:
        for entry in self.videos:
            if entry.video_id == video_id:
                return entry
        raise KeyError(f"unknown video {video_id!r}")

    def split_counts(self) -> dict[str, int]:
        counts = {name: 0 for name in SPLITS}
        for entry in self.videos:
            counts[entry.split] += 1
        return counts


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "au_names": list(manifest.au_names),
        "split_seed": manifest.split_seed,
        "videos": [
            {
                "video_id": v.video_id,
                "frame_count": v.frame_count,
                "fps": v.fps,
                "feature_paths": dict(v.feature_paths),
                "label_path": v.label_path,
                "split": v.split,
            }
            for v in manifest.videos
        ],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse a manifest and validate every referenced file.

    Checks performed per video: label file exists, parses, and has
    frame_count rows; every feature file exists, carries the expected
    stream name, and declares the same frame_count; each stream's dim is
    identical across videos.
    """
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ManifestError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from exc

    root = path.parent
    try:
        videos = [VideoEntry(**v) for v in doc["videos"]]
        manifest = DatasetManifest(
            videos=videos,
            au_names=tuple(doc["au_names"]),
            split_seed=int(doc.get("split_seed", 0)),
        )
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"{path}: malformed manifest ({exc})") from exc

    stream_dims: dict[str, int] = {}
    for entry in manifest.videos:
        label_path = root / entry.label_path
        labels = read_label_file(label_path, manifest.au_names)
        if labels.shape[0] != entry.frame_count:
            raise ManifestError(
                f"{entry.video_id}: frame_count mismatch: labels have "
                f"{labels.shape[0]} rows, manifest declares {entry.frame_count}"
            )
        for stream, rel in entry.feature_paths.items():
            fpath = root / rel
            if not fpath.exists():
                raise ManifestError(f"{entry.video_id}: missing feature file {fpath}")
            name, frame_count, dim = read_feature_header(fpath)
            if name != stream:
                raise ManifestError(
                    f"{entry.video_id}: file {fpath} carries stream {name!r}, manifest says {stream!r}"
                )
            if frame_count != entry.frame_count:
                raise ManifestError(
                    f"{entry.video_id}: frame_count mismatch: {stream} file has "
                    f"{frame_count} frames, manifest declares {entry.frame_count}"
                )
            if stream in stream_dims and stream_dims[stream] != dim:
                raise ManifestError(
                    f"{entry.video_id}: stream {stream!r} dim {dim} differs from "
                    f"{stream_dims[stream]} seen in earlier videos"
                )
            stream_dims[stream] = dim
    return manifest


def split_videos(manifest: DatasetManifest, val_fraction: float, seed: int) -> DatasetManifest:
    """Assign every unassigned video to train or val, video-independently.

    ceil(val_fraction * N) of the N unassigned videos go to val; the
    assignment is a seeded permutation, so it is deterministic and the
    train/val sets are disjoint by construction. Videos already assigned
    (e.g. a held-out test split) are left untouched.
    """
    if not 0.0 < val_fraction < 1.0:
        raise ValueError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    unassigned = [v for v in manifest.videos if v.split == "unassigned"]
    if len(unassigned) < 2:
        raise ManifestError(
            f"need at least 2 unassigned videos to split, found {len(unassigned)}"
        )
    n_val = math.ceil(val_fraction * len(unassigned))
    order = np.random.default_rng(seed).permutation(len(unassigned))
    val_ids = {unassigned[i].video_id for i in order[:n_val]}
    videos = [
        replace(v, split=("val" if v.video_id in val_ids else "train"))
        if v.split == "unassigned"
        else v
        for v in manifest.videos
    ]
    return DatasetManifest(videos=videos, au_names=manifest.au_names, split_seed=seed)


# ---------------------------------------------------------------------------
# Label filtering and window arithmetic


def valid_label_mask(labels: np.ndarray) -> np.ndarray:
    """True for frames whose 12 labels are all in {0, 1} (no -1)."""
    labels = np.asarray(labels)
    return ~(labels == -1).any(axis=1)


def filter_labels(labels) -> list[tuple[int, np.ndarray]]:
    """Drop every frame containing a -1 label, keeping original order.

    Returns (frame_index, label_row) pairs for the surviving frames.
    """
    labels = np.asarray(labels)
    mask = valid_label_mask(labels)
    return [(int(i), labels[i]) for i in np.flatnonzero(mask)]


def frame_window(center: int, frame_count: int, radius: int = FRAME_WINDOW_RADIUS) -> np.ndarray:
    """Indices center-radius .. center+radius, out-of-range replaced by the
    nearest valid frame (keeps the window length fixed at 2*radius+1)."""
    return np.clip(np.arange(center - radius, center + radius + 1), 0, frame_count - 1)


def time_window(center: int, fps: float, frame_count: int,
                seconds: float = TIME_WINDOW_SECONDS) -> tuple[int, int]:
    """Inclusive frame-index bounds of rows whose timestamp i/fps lies in
    the closed interval [center/fps - seconds, center/fps + seconds],
    clamped to the video (the window shrinks at the boundaries)."""
    # 1e-9 guards against float round-off excluding a mathematically
    # in-window boundary row.
    span = seconds * fps
    lo = max(0, int(math.ceil(center - span - 1e-9)))
    hi = min(frame_count - 1, int(math.floor(center + span + 1e-9)))
    return lo, hi


# ---------------------------------------------------------------------------
# Assembled samples


@dataclass
class FusionSample:
    """One frame's five feature views plus its filtered 12-dim label.

    All arrays are float64; ``ghfeat_window`` always has exactly 9 rows,
    ``hubert_window``/``roberta_window`` cover the +/-2 s timestamp window
    (at least one row, the frame itself). ``roberta_window`` rows are zero
    vectors wherever no words fell inside the window.
    """
    video_id: str
    frame_index: int
    swin: np.ndarray            # (dim_swin,)
    ghfeat: np.ndarray          # (dim_ghfeat,)
    ghfeat_window: np.ndarray   # (9, dim_ghfeat)
    hubert_window: np.ndarray   # (T_a, dim_hubert)
    roberta_window: np.ndarray  # (T_t, dim_roberta)
    label: np.ndarray           # (12,) ints in {0, 1}


@dataclass
class _LoadedVideo:
    entry: VideoEntry
    features: dict[str, np.ndarray]  # stream -> (frames, dim) float32
    labels: np.ndarray               # (frames, 12) int8 in {-1, 0, 1}


class FeatureStore:
    """In-memory access to a manifest's feature matrices and labels.

    Videos are loaded lazily and cached; after that, access is read-only
    and safe for concurrent readers.
    """

    def __init__(self, manifest: DatasetManifest, root: str | Path):
        self.manifest = manifest
        self.root = Path(root)
        self._cache: dict[str, _LoadedVideo] = {}

    @classmethod
    def open(cls, manifest_path: str | Path) -> "FeatureStore":
        manifest_path = Path(manifest_path)
        return cls(load_manifest(manifest_path), manifest_path.parent)

    @property
    def au_names(self) -> tuple[str, ...]:
        return self.manifest.au_names

    def video(self, video_id: str) -> _LoadedVideo:
        if video_id not in self._cache:
            entry = self.manifest.video(video_id)
            features = {}
            for stream, rel in entry.feature_paths.items():
                _, data = read_feature_file(self.root / rel)
                features[stream] = data
            labels = read_label_file(self.root / entry.label_path, self.manifest.au_names)
            self._cache[video_id] = _LoadedVideo(entry, features, labels)
        return self._cache[video_id]

    def stream_dims(self) -> dict[str, int]:
        """Per-stream feature dims, read from file headers."""
        dims: dict[str, int] = {}
        for entry in self.manifest.videos:
            for stream, rel in entry.feature_paths.items():
                if stream not in dims:
                    _, _, dim = read_feature_header(self.root / rel)
                    dims[stream] = dim
        return dims

    def valid_frames(self, video_id: str) -> np.ndarray:
        """Frame indices that survive label filtering, ascending."""
        return np.flatnonzero(valid_label_mask(self.video(video_id).labels))

    def samples_for_split(self, split: str) -> list[tuple[str, int]]:
        """All (video_id, frame_index) pairs of a split, filtered labels only."""
        pairs: list[tuple[str, int]] = []
        for entry in self.manifest.videos:
            if entry.split != split:
                continue
            for idx in self.valid_frames(entry.video_id):
                pairs.append((entry.video_id, int(idx)))
        return pairs

    def labels_for_frames(self, video_id: str, frame_indices) -> np.ndarray:
        """Filtered (0/1) labels for the given frames, as int64."""
        labels = self.video(video_id).labels[np.asarray(frame_indices, dtype=int)]
        if (labels == -1).any():
            raise ValueError(f"{video_id}: requested frames include -1 labels")
        return labels.astype(np.int64)

    def assemble_sample(self, video_id: str, frame_index: int) -> FusionSample:
        """Build the five per-frame feature views for one labeled frame."""
        video = self.video(video_id)
        n = video.entry.frame_count
        if not 0 <= frame_index < n:
            raise IndexError(f"{video_id}: frame {frame_index} out of range [0, {n})")
        label = video.labels[frame_index]
        if (label == -1).any():
            raise ValueError(f"{video_id}: frame {frame_index} was discarded by label filtering")
        ghfeat = video.features[STREAM_GHFEAT]
        lo, hi = time_window(frame_index, video.entry.fps, n)
        return FusionSample(
            video_id=video_id,
            frame_index=frame_index,
            swin=video.features[STREAM_SWIN][frame_index].astype(np.float64),
            ghfeat=ghfeat[frame_index].astype(np.float64),
            ghfeat_window=ghfeat[frame_window(frame_index, n)].astype(np.float64),
            hubert_window=video.features[STREAM_HUBERT][lo : hi + 1].astype(np.float64),
            roberta_window=video.features[STREAM_ROBERTA][lo : hi + 1].astype(np.float64),
            label=label.astype(np.int64),
        )

    def assemble_batch(self, pairs) -> list[FusionSample]:
        return [self.assemble_sample(vid, idx) for vid, idx in pairs]


# ---------------------------------------------------------------------------
# Synthetic data


@dataclass
class SynthSpec:
    """Parameters of the planted-label synthetic dataset.

    Labels come from sign(planted_weights @ concatenated per-frame stream
    means), flipped elementwise with ``noise_rate``. Features are constant
    within runs of ``run_length`` frames (plus ``feature_jitter`` noise),
    which makes the clean labels piecewise constant in time.
    """
    seed: int = 0
    n_videos: int = 4
    frames_per_video: int = 120
    fps: float = 5.0
    dim_swin: int = 768
    dim_ghfeat: int = 512
    dim_hubert: int = 1280
    dim_roberta: int = 1024
    planted_weights: np.ndarray | None = None
    noise_rate: float = 0.05
    run_length: int = 25
    feature_jitter: float = 0.25
    invalid_label_rate: float = 0.0
    text_silence_rate: float = 0.0

    def __post_init__(self):
        for name in ("n_videos", "frames_per_video", "run_length"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("dim_swin", "dim_ghfeat", "dim_hubert", "dim_roberta"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        for name in ("noise_rate", "invalid_label_rate", "text_silence_rate"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")
        if self.feature_jitter < 0:
            raise ValueError("feature_jitter must be non-negative")

    @property
    def mean_dim(self) -> int:
        # concat order: swin, ghfeat, ghfeat window mean, hubert mean, roberta mean
        return self.dim_swin + 2 * self.dim_ghfeat + self.dim_hubert + self.dim_roberta


def _window_means(data: np.ndarray, fps: float, use_time_window: bool) -> np.ndarray:
    """Per-frame mean over the temporal window of each frame (float64)."""
    n = data.shape[0]
    out = np.empty((n, data.shape[1]), dtype=np.float64)
    for t in range(n):
        if use_time_window:
            lo, hi = time_window(t, fps, n)
            out[t] = data[lo : hi + 1].mean(axis=0, dtype=np.float64)
        else:
            out[t] = data[frame_window(t, n)].mean(axis=0, dtype=np.float64)
    return out


def generate_synthetic(spec: SynthSpec, out_dir: str | Path) -> DatasetManifest:
    """Generate a synthetic dataset on disk and return its loaded manifest.

    Writing then reloading through :func:`load_manifest` guarantees the
    files round-trip. Generation is fully determined by ``spec.seed``.
    """
    out_dir = Path(out_dir)
    rng = np.random.default_rng(spec.seed)
    weights = spec.planted_weights
    if weights is None:
        weights = rng.standard_normal((N_AUS, spec.mean_dim))
    else:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (N_AUS, spec.mean_dim):
            raise ValueError(
                f"planted_weights must have shape ({N_AUS}, {spec.mean_dim}), got {weights.shape}"
            )

    dims = {
        STREAM_SWIN: spec.dim_swin,
        STREAM_GHFEAT: spec.dim_ghfeat,
        STREAM_HUBERT: spec.dim_hubert,
        STREAM_ROBERTA: spec.dim_roberta,
    }
    entries = []
    for vi in range(spec.n_videos):
        video_id = f"synth{vi:03d}"
        n = spec.frames_per_video
        run_of_frame = np.arange(n) // spec.run_length
        n_runs = int(run_of_frame[-1]) + 1

        features: dict[str, np.ndarray] = {}
        for stream in STREAMS:
            d = dims[stream]
            bases = rng.standard_normal((n_runs, d))
            jitter = rng.standard_normal((n, d)) * spec.feature_jitter
            features[stream] = (bases[run_of_frame] + jitter).astype(np.float32)
        if spec.text_silence_rate > 0.0:
            silent_runs = rng.random(n_runs) < spec.text_silence_rate
            features[STREAM_ROBERTA][silent_runs[run_of_frame]] = 0.0

        # Labels are planted from the float32 values actually written to
        # disk, so a noiseless dataset reproduces them bit-exactly on load.
        means = np.concatenate(
            [
                features[STREAM_SWIN].astype(np.float64),
                features[STREAM_GHFEAT].astype(np.float64),
                _window_means(features[STREAM_GHFEAT], spec.fps, use_time_window=False),
                _window_means(features[STREAM_HUBERT], spec.fps, use_time_window=True),
                _window_means(features[STREAM_ROBERTA], spec.fps, use_time_window=True),
            ],
            axis=1,
        )
        labels = (means @ weights.T > 0.0).astype(np.int8)
        if spec.noise_rate > 0.0:
            flips = rng.random((n, N_AUS)) < spec.noise_rate
            labels = np.where(flips, 1 - labels, labels)
        if spec.invalid_label_rate > 0.0:
            invalid = rng.random(n) < spec.invalid_label_rate
            which_au = rng.integers(0, N_AUS, size=n)
            for t in np.flatnonzero(invalid):
                labels[t, which_au[t]] = -1

        feature_paths = {}
        for stream in STREAMS:
            rel = f"features/{video_id}_{stream}.feat"
            write_feature_file(out_dir / rel, stream, features[stream])
            feature_paths[stream] = rel
        label_rel = f"labels/{video_id}.csv"
        write_label_file(out_dir / label_rel, labels)
        entries.append(
            VideoEntry(
                video_id=video_id,
                frame_count=n,
                fps=spec.fps,
                feature_paths=feature_paths,
                label_path=label_rel,
            )
        )

    manifest = DatasetManifest(videos=entries, split_seed=spec.seed)
    save_manifest(manifest, out_dir / "manifest.json")
    return load_manifest(out_dir / "manifest.json")
