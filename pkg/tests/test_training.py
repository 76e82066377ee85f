import numpy as np
import pytest

from vidalign.data import SyntheticSpec, generate_synthetic, load_manifest
from vidalign.errors import ConfigError, NonFiniteGradientError
from vidalign.tensor import Tensor
from vidalign.training import Adam, Checkpoint, TrainConfig, train

SMALL = dict(n_train=8, n_test=4, n_verbs=4, n_nouns=4, n_fillers=3, C_s=3, C_f=4, T_f=2, T_s=1, H=3, W=3)
FAST = dict(C=6, E=5, batch_size=4, epochs=2)


@pytest.fixture(scope="module")
def ds(tmp_path_factory):
    root = generate_synthetic(SyntheticSpec(**SMALL, seed=2), tmp_path_factory.mktemp("syn"))
    return load_manifest(root / "train")


def params_of(model):
    return {k: p.data.copy() for k, p in model.parameters().items()}


# --------------------------------------------------------------------- Adam


def test_adam_zero_gradient_leaves_params():
    p = {"w": Tensor(np.array([1.0, -2.0]), requires_grad=True)}
    Adam(lr=0.1).step(p, {"w": np.zeros(2)})
    assert np.array_equal(p["w"].data, [1.0, -2.0])


@pytest.mark.parametrize("g", [1e-3, 0.5, -7.0])
def test_adam_first_step_moves_by_lr(g):
    p = {"w": Tensor(np.array([0.0]), requires_grad=True)}
    Adam(lr=0.01).step(p, {"w": np.array([g])})
    assert p["w"].data[0] == pytest.approx(-0.01 * np.sign(g), rel=1e-4)


def test_adam_matches_reference_recurrence():
    rng = np.random.default_rng(0)
    grads = rng.standard_normal((5, 3))
    p = {"w": Tensor(np.zeros(3), requires_grad=True)}
    opt = Adam(lr=0.05, beta1=0.8, beta2=0.9, eps=1e-6)
    w, m, v = np.zeros(3), np.zeros(3), np.zeros(3)
    for t, g in enumerate(grads, 1):
        opt.step(p, {"w": g})
        m = 0.8 * m + 0.2 * g
        v = 0.9 * v + 0.1 * g * g
        w = w - 0.05 * (m / (1 - 0.8**t)) / (np.sqrt(v / (1 - 0.9**t)) + 1e-6)
    assert np.allclose(p["w"].data, w, atol=1e-14)


def test_adam_clipping_scales_global_norm():
    p = {"a": Tensor(np.zeros(1), requires_grad=True), "b": Tensor(np.zeros(1), requires_grad=True)}
    opt = Adam(lr=1.0, grad_clip=1.0)
    opt.step(p, {"a": np.array([3.0]), "b": np.array([4.0])})
    assert np.allclose(opt.m["a"], 0.1 * 0.6) and np.allclose(opt.m["b"], 0.1 * 0.8)


def test_adam_names_nonfinite_parameter():
    p = {"fusion.W": Tensor(np.zeros(2), requires_grad=True)}
    with pytest.raises(NonFiniteGradientError, match="fusion.W"):
        Adam().step(p, {"fusion.W": np.array([0.0, np.nan])})


# ------------------------------------------------------------------- config


def test_config_round_trip(tmp_path):
    cfg = TrainConfig(C=7, lr=0.003, lambda_m=0.0, dtype="float32")
    cfg.write(tmp_path / "c.txt")
    assert TrainConfig.read(tmp_path / "c.txt") == cfg


@pytest.mark.parametrize("bad", ["batch_size=1", "beta_train=0", "dtype=float16", "lr=-1", "C=0", "speed=3"])
def test_config_rejects(tmp_path, bad):
    (tmp_path / "c.txt").write_text(bad + "\n")
    with pytest.raises(ConfigError):
        TrainConfig.read(tmp_path / "c.txt")


# ----------------------------------------------------------------- training


def test_training_is_bitwise_deterministic(ds, tmp_path):
    a = train(ds, TrainConfig(**FAST)).save(tmp_path / "a")
    b = train(ds, TrainConfig(**FAST)).save(tmp_path / "b")
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert all((a / f).read_bytes() == (b / f).read_bytes() for f in files)


def test_zero_lr_leaves_params_unchanged(ds):
    from vidalign.training import build_model

    cfg = TrainConfig(**{**FAST, "lr": 0.0})
    model = build_model(ds, cfg)
    before = params_of(model)
    train(ds, cfg, model=model)
    assert all(np.array_equal(before[k], v) for k, v in params_of(model).items())


def test_zero_lambdas_freeze_token_encoder(ds):
    from vidalign.training import build_model

    cfg = TrainConfig(**{**FAST, "lambda_m": 0.0, "lambda_s": 0.0})
    model = build_model(ds, cfg)
    before = params_of(model)
    train(ds, cfg, model=model)
    after = params_of(model)
    for k in before:
        same = np.array_equal(before[k], after[k])
        assert same == k.startswith("token."), k


def test_loss_decreases(ds):
    ckpt = train(ds, TrainConfig(**{**FAST, "epochs": 12}))
    assert ckpt.history[-1].l_total < ckpt.history[0].l_total


@pytest.mark.parametrize("dtype", ["float64", "float32"])
def test_checkpoint_round_trip_bitwise(ds, tmp_path, dtype):
    ckpt = train(ds, TrainConfig(**{**FAST, "epochs": 1, "dtype": dtype}))
    first = ckpt.save(tmp_path / "a")
    again = Checkpoint.load(first)
    second = again.save(tmp_path / "b")
    for f in sorted(first.rglob("*.vten")):
        assert f.read_bytes() == (second / f.relative_to(first)).read_bytes()
    assert again.config == ckpt.config
    cast = np.float32 if dtype == "float32" else np.float64
    for k, p in ckpt.model.parameters().items():
        assert np.array_equal(again.model.parameters()[k].data, p.data.astype(cast))
