import pytest

from vidalign.data import SyntheticSpec, generate_synthetic
from vidalign.training import TrainConfig, train
from vidalign.data import load_manifest

TINY_SPEC = dict(n_train=8, n_test=4, n_verbs=4, n_nouns=4, n_fillers=3, C_s=3, C_f=4, T_f=2, T_s=1, H=3, W=3, seed=6)


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    return generate_synthetic(SyntheticSpec(**TINY_SPEC), tmp_path_factory.mktemp("tiny"))


@pytest.fixture(scope="session")
def tiny_ckpt(tiny_data, tmp_path_factory):
    ckpt = train(load_manifest(tiny_data / "train"), TrainConfig(C=6, E=5, batch_size=4, epochs=3))
    return ckpt.save(tmp_path_factory.mktemp("ckpt") / "ck")
