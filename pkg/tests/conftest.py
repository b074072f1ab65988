import numpy as np
import pytest

from freqcenter.synth import SynthConfig, generate_corpus


@pytest.fixture(scope="session")
def small_synth_cfg():
    return SynthConfig(train_clips_per_scene=6, test_clips_per_scene_device=4)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory, small_synth_cfg):
    """Reduced corpus (30 train + 80 test clips) shared across tests."""
    out = tmp_path_factory.mktemp("small_corpus")
    manifest = generate_corpus(small_synth_cfg, 0, out)
    return manifest, out


@pytest.fixture(scope="session")
def default_corpus(tmp_path_factory):
    """Full default corpus, master seed 0 (200 train + 400 test clips)."""
    out = tmp_path_factory.mktemp("default_corpus")
    manifest = generate_corpus(SynthConfig(), 0, out)
    return manifest, out


def random_tensor(rng: np.random.Generator, shape=(4, 80, 60), scale=10.0):
    return rng.normal(0.0, scale, shape)
