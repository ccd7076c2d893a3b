import numpy as np
import pytest
from hypothesis import settings

from cslrobust import tensor as T
from cslrobust.tensor import Tensor

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

# Floor of the relative-error denominator used by every gradient check.
# Central differences at h=1e-5 carry about 1e-11 of absolute noise
# (round-off eps*|f|/h plus truncation h^2*f'''/6). On a 32-32-8 MLP the
# contrastive losses pass at 4e-7 even with no floor, but cross-entropy
# has components near 1e-7 where that noise alone is a 5e-5 relative
# error. Components above the floor are compared purely relatively.
GRAD_FLOOR = 1e-3


def grad_check(loss_fn, params, rng, n_coords=100, h=1e-5):
    """Max relative error between backward() and central differences.

    ``loss_fn()`` rebuilds the scalar loss from the current parameter
    values. Coordinates are drawn uniformly across all parameters.
    """
    T.zero_grad(params)
    T.backward(loss_fn())
    analytic = [p.grad.copy() for p in params]
    sizes = np.array([p.size for p in params])
    picks = rng.choice(int(sizes.sum()), size=min(n_coords, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    for flat in picks:
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        p, i = params[k], int(flat - offsets[k])
        saved = p.data

        def f(t, p=p):
            p.data = t.data
            return loss_fn()

        fd = T.finite_difference_grad(f, Tensor(saved), h=h, coords=[i])
        p.data = saved
        err = float(T.relative_error(analytic[k].reshape(-1)[i], fd.reshape(-1)[i], floor=GRAD_FLOOR))
        worst = max(worst, err)
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def unit_rows(rng, n, d):
    z = rng.normal(size=(n, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)
