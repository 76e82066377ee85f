"""Finite-difference audit of the full objective on random tiny problems."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from .data.batches import Batch, BatchItem
from .encoders import NOUN, OTHER, VERB, Vocabulary
from .model import AlignmentModel
from .objectives import total_loss
from .tensor import GradCheckReport, grad_check_many
from .training import TrainConfig
from .video import FeatureVolume

COMPONENTS = ("l_total", "l_joint", "l_mot", "l_vis")


def random_tiny_problem(rng, config: TrainConfig | None = None, max_dim=8, max_extent=3):
    """A random model and batch small enough for element-wise central differences.

    C and E are drawn from ``[2, max_dim]``, every spatiotemporal extent from
    ``[1, max_extent]``, and the batch holds two or three videos.
    """
    config = replace(config or TrainConfig(), C=int(rng.integers(2, max_dim + 1)), E=int(rng.integers(2, max_dim + 1)))
    vocab = Vocabulary(
        [(f"v{i}", VERB) for i in range(4)] + [(f"n{i}", NOUN) for i in range(4)] + [("the", OTHER), ("a", OTHER)]
    )
    verbs, nouns, others = vocab.ids_with_pos(VERB), vocab.ids_with_pos(NOUN), vocab.ids_with_pos(OTHER)
    c_slow, c_fast = (int(v) for v in rng.integers(2, 6, 2))
    H, W = (int(v) for v in rng.integers(1, max_extent + 1, 2))
    T_f = int(rng.integers(1, max_extent + 1))
    T_s = int(rng.integers(1, T_f + 1))
    items = []
    for b in range(int(rng.integers(2, 4))):
        v_ids = rng.choice(verbs, int(rng.integers(1, 3)), replace=False).tolist()
        n_ids = rng.choice(nouns, int(rng.integers(1, 3)), replace=False).tolist()
        caption = n_ids + v_ids + rng.choice(others, int(rng.integers(0, 3))).tolist()
        caption = [caption[k] for k in rng.permutation(len(caption))]
        items.append(
            BatchItem(
                f"vid{b}",
                f"vid{b}_c0",
                FeatureVolume("slow", rng.standard_normal((c_slow, T_s, H, W))),
                FeatureVolume("fast", rng.standard_normal((c_fast, T_f, H, W))),
                caption,
                v_ids,
                n_ids,
                [int(rng.choice(np.setdiff1d(verbs, v_ids))) for _ in v_ids],
                [int(rng.choice(np.setdiff1d(nouns, n_ids))) for _ in n_ids],
            )
        )
    model = AlignmentModel(vocab, config.E, config.C, c_slow, c_fast, seed=int(rng.integers(2**31)))
    return model, Batch(items), config


def check_problem(
    model, batch, config, components=COMPONENTS, h=1e-5, kink_tol=1e-3, max_elements=None, rng=None, floor=1e-8
):
    """Reports keyed by loss component for one problem."""
    params = list(model.parameters().values())

    def f():
        out = total_loss(model, batch, config)
        return {c: getattr(out, c) for c in components}

    return grad_check_many(f, params, h=h, kink_tol=kink_tol, max_elements=max_elements, rng=rng, floor=floor)


def audit(n_problems=20, seed=0, config=None, components=COMPONENTS, max_tries=20, **kw) -> list[dict[str, GradCheckReport]]:
    """Per-component gradient reports on ``n_problems`` kink-free random problems."""
    rng = np.random.default_rng(seed)
    reports = []
    for _ in range(n_problems):
        for _ in range(max_tries):
            model, batch, cfg = random_tiny_problem(rng, config)
            rep = check_problem(model, batch, cfg, components, **kw)
            if not any(r.skipped for r in rep.values()):
                break
        reports.append(rep)
    return reports


def worst_error(reports) -> float:
    """Largest relative error over every report; inf if any problem stayed skipped."""
    worst = 0.0
    for rep in reports:
        for r in rep.values():
            if r.skipped:
                return float("inf")
            worst = max(worst, float(r.max_rel_error))
    return worst
