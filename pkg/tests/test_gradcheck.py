"""Finite-difference audit of the full objective on small random problems.

The acceptance audit (20 problems, fixed denominator floor) lives in
``test_acceptance.py``; these are quicker checks plus a diagnostic that
separates real gradient bugs from central-difference rounding noise.
"""
import numpy as np
import pytest

from vidalign.gradcheck import COMPONENTS, audit, check_problem, random_tiny_problem, worst_error
from vidalign.tensor import backward
from vidalign.objectives import total_loss


def test_tiny_problem_respects_bounds():
    rng = np.random.default_rng(0)
    for _ in range(20):
        model, batch, cfg = random_tiny_problem(rng)
        assert 2 <= cfg.C <= 8 and 2 <= cfg.E <= 8
        assert 2 <= batch.size <= 3
        for it in batch.items:
            assert max(it.fast.thw) <= 3 and it.slow.thw[0] <= it.fast.thw[0]


@pytest.mark.parametrize("seed", [11, 12])
def test_components_match_finite_differences_large_gradients(seed):
    """Relative error on elements whose gradient is well above rounding noise."""
    rep = audit(1, seed=seed, floor=1e-6)[0]
    for c in COMPONENTS:
        assert not rep[c].skipped
        assert rep[c].max_rel_error < 1e-4, (c, rep[c].worst)


def test_small_gradient_errors_are_rounding_noise():
    """Tiny gradients agree with a wider stencil, where rounding noise is 100x smaller."""
    model, batch, cfg = random_tiny_problem(np.random.default_rng(0))
    params = model.parameters()
    grads = dict(zip(params, backward(total_loss(model, batch, cfg).l_total, list(params.values()))))
    # smallest nonzero gradient element over all parameters
    name, j = min(
        ((k, int(i)) for k, g in grads.items() for i in np.flatnonzero(g)),
        key=lambda kj: abs(grads[kj[0]].reshape(-1)[kj[1]]),
    )
    assert abs(grads[name].reshape(-1)[j]) < 1e-6
    p = params[name].data.reshape(-1)
    h = 1e-3
    orig = p[j]
    p[j] = orig + h
    fp = total_loss(model, batch, cfg).l_total.item()
    p[j] = orig - h
    fm = total_loss(model, batch, cfg).l_total.item()
    p[j] = orig
    num = (fp - fm) / (2 * h)
    # second-order truncation of the wide stencil is O(h^2 f''') and far below |g| here
    assert abs(num - grads[name].reshape(-1)[j]) < 1e-12 + 1e-4 * abs(num)


def test_worst_error_flags_skipped():
    class R:
        skipped, max_rel_error = True, float("nan")

    assert worst_error([{"l_total": R()}]) == float("inf")


def test_check_problem_reports_every_component():
    model, batch, cfg = random_tiny_problem(np.random.default_rng(3))
    rep = check_problem(model, batch, cfg, max_elements=3, rng=np.random.default_rng(0))
    assert set(rep) == set(COMPONENTS)
