"""Optimisation loop, Adam, configuration and checkpoints."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .data.batches import attach_negatives, epoch_batches
from .data.container import read_tensor, write_tensor
from .data.kvfile import read_kv, write_kv
from .encoders import Vocabulary
from .errors import ConfigError, FormatError, NonFiniteGradientError
from .model import AlignmentModel
from .objectives import total_loss
from .tensor import backward

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    C: int = 32
    E: int = 32
    V: int = 0  # 0: size of the dataset vocabulary
    alpha: float = 0.2
    beta_train: float = 0.1
    lambda_m: float = 1.0
    lambda_s: float = 1.0
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 0.0  # 0: no clipping
    batch_size: int = 32
    epochs: int = 60
    seed: int = 0
    dtype: str = "float64"

    def validate(self) -> "TrainConfig":
        for name in ("C", "E", "epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.V < 0:
            raise ConfigError("V must be nonnegative")
        if not self.beta_train > 0:
            raise ConfigError("beta_train must be positive")
        if self.alpha < 0 or self.lambda_m < 0 or self.lambda_s < 0 or self.lr < 0:
            raise ConfigError("alpha, lambda_m, lambda_s and lr must be nonnegative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.adam_eps <= 0:
            raise ConfigError("Adam decays must lie in [0, 1) and adam_eps must be positive")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2")
        if self.grad_clip < 0:
            raise ConfigError("grad_clip must be nonnegative")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError("dtype must be float64 or float32")
        return self

    @classmethod
    def read(cls, path) -> "TrainConfig":
        return read_kv(path, cls).validate()

    def write(self, path):
        write_kv(path, self)


class Adam:
    """Adaptive-moment optimiser with bias correction, one state slot per parameter name."""

    def __init__(self, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8, grad_clip=0.0):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.grad_clip = grad_clip
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            if not np.isfinite(g).all():
                raise NonFiniteGradientError(name)
        if self.grad_clip > 0:
            total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if total > self.grad_clip:
                grads = {k: g * (self.grad_clip / total) for k, g in grads.items()}
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in params.items():
            g = grads[name]
            m = self.m.get(name, 0.0) * self.beta1 + (1.0 - self.beta1) * g
            v = self.v.get(name, 0.0) * self.beta2 + (1.0 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def optimizer_step(params: dict, grads: dict, state: Adam) -> None:
    state.step(params, grads)


@dataclass
class EpochLog:
    epoch: int
    l_joint: float
    l_mot: float
    l_vis: float
    l_total: float

    def line(self) -> str:
        return (
            f"epoch={self.epoch} l_joint={self.l_joint!r} l_mot={self.l_mot!r} "
            f"l_vis={self.l_vis!r} l_total={self.l_total!r}"
        )


@dataclass
class Checkpoint:
    model: AlignmentModel
    config: TrainConfig
    epoch: int = 0
    history: list[EpochLog] = field(default_factory=list)

    def save(self, path) -> Path:
        """Directory with ``config.txt``, ``meta.txt``, ``vocab.tsv`` and one container per tensor."""
        root = Path(path)
        (root / "params").mkdir(parents=True, exist_ok=True)
        self.config.write(root / "config.txt")
        m = self.model
        meta = f"epoch={self.epoch}\nc_slow={m.slow_head.c_in}\nc_fast={m.fast_head.c_in}\nV={m.V}\n"
        (root / "meta.txt").write_text(meta, encoding="utf-8")
        m.vocab.write(root / "vocab.tsv")
        for name, p in m.parameters().items():
            write_tensor(root / "params" / f"{name}.vten", p.data, self.config.dtype)
        return root

    @classmethod
    def load(cls, path) -> "Checkpoint":
        root = Path(path)
        if not (root / "meta.txt").is_file():
            raise FormatError(f"{root} is not a checkpoint directory (meta.txt missing)")
        config = TrainConfig.read(root / "config.txt")
        meta = dict(line.split("=", 1) for line in (root / "meta.txt").read_text().split())
        vocab = Vocabulary.read(root / "vocab.tsv")
        model = AlignmentModel(
            vocab, config.E, config.C, int(meta["c_slow"]), int(meta["c_fast"]), V=int(meta["V"])
        )
        for name, p in model.parameters().items():
            arr = read_tensor(root / "params" / f"{name}.vten")
            if arr.shape != p.shape:
                raise FormatError(f"{name}: stored shape {arr.shape}, expected {p.shape}")
            p.data[...] = arr
        return cls(model, config, int(meta["epoch"]))


def build_model(dataset, config: TrainConfig) -> AlignmentModel:
    slow, fast = dataset.volumes(dataset.videos[0])
    return AlignmentModel(dataset.vocab, config.E, config.C, slow.channels, fast.channels, config.V, config.seed)


def train_step(model, batch, optimizer, config):
    """One forward/backward/update; returns the loss breakdown as floats."""
    params = model.parameters()
    losses = total_loss(model, batch, config)
    grads = backward(losses.l_total, list(params.values()))
    optimizer.step(params, dict(zip(params, grads)))
    return losses.floats()


def train(
    dataset,
    config: TrainConfig,
    model: AlignmentModel | None = None,
    on_epoch: Callable[[EpochLog], None] | None = None,
) -> Checkpoint:
    """Run ``config.epochs`` epochs of Adam on the combined objective."""
    config.validate()
    model = model if model is not None else build_model(dataset, config)
    optimizer = Adam(config.lr, config.beta1, config.beta2, config.adam_eps, config.grad_clip)
    history = []
    for epoch in range(config.epochs):
        rng = np.random.default_rng([config.seed, epoch])
        sums = np.zeros(4)
        n = 0
        for batch in epoch_batches(dataset, config.batch_size, rng):
            attach_negatives(batch, dataset, rng)
            f = train_step(model, batch, optimizer, config)
            sums += [f["l_joint"], f["l_mot"], f["l_vis"], f["l_total"]]
            n += 1
        entry = EpochLog(epoch, *(sums / max(n, 1)).tolist())
        history.append(entry)
        log.info(entry.line())
        if on_epoch is not None:
            on_epoch(entry)
    return Checkpoint(model, config, config.epochs, history)


def write_loss_log(path, history) -> None:
    Path(path).write_text("".join(e.line() + "\n" for e in history), encoding="utf-8")
