import numpy as np
import pytest

from fuseau import FeatureStore, ModelConfig, SynthSpec, init_model
from fuseau import feature_store as fs
from fuseau.feature_store import FusionSample

TOY_DIMS = {"swin": 5, "ghfeat": 4, "hubert": 6, "roberta": 3}


def make_dataset(tmp_path, seed=3, n_videos=4, frames=60, noise=0.02,
                 val_fraction=0.25, **kwargs):
    """Small on-disk synthetic dataset with train/val splits assigned."""
    spec = SynthSpec(seed=seed, n_videos=n_videos, frames_per_video=frames,
                     fps=5.0, dim_swin=8, dim_ghfeat=6, dim_hubert=7,
                     dim_roberta=5, noise_rate=noise, run_length=12, **kwargs)
    out = tmp_path / "data"
    manifest = fs.generate_synthetic(spec, out)
    manifest = fs.split_videos(manifest, val_fraction, seed=seed)
    fs.save_manifest(manifest, out / "manifest.json")
    return out / "manifest.json"


@pytest.fixture
def store(tmp_path):
    return FeatureStore.open(make_dataset(tmp_path))


@pytest.fixture
def toy_config():
    return ModelConfig(dim_swin=TOY_DIMS["swin"], dim_ghfeat=TOY_DIMS["ghfeat"],
                       dim_hubert=TOY_DIMS["hubert"], dim_roberta=TOY_DIMS["roberta"],
                       proj_dim=4, gru_hidden=3, mlp_hidden=8, seed=11)


@pytest.fixture
def toy_params(toy_config):
    return init_model(toy_config)


def toy_sample(rng, label=None, t_audio=None, t_text=None):
    """Random FusionSample shaped for the toy model config."""
    if t_audio is None:
        t_audio = int(rng.integers(1, 6))
    if t_text is None:
        t_text = int(rng.integers(1, 6))
    if label is None:
        label = rng.integers(0, 2, size=12)
    return FusionSample(
        video_id="v", frame_index=0,
        swin=rng.standard_normal(TOY_DIMS["swin"]),
        ghfeat=rng.standard_normal(TOY_DIMS["ghfeat"]),
        ghfeat_window=rng.standard_normal((9, TOY_DIMS["ghfeat"])),
        hubert_window=rng.standard_normal((t_audio, TOY_DIMS["hubert"])),
        roberta_window=rng.standard_normal((t_text, TOY_DIMS["roberta"])),
        label=np.asarray(label, dtype=np.int64),
    )
