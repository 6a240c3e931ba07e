import numpy as np
import pytest

from lslmt import tensors as T


def rel_err(a, b):
    return np.abs(a - b) / (np.abs(a) + np.abs(b) + 1e-8)


def finite_diff_check(make_loss, params, eps=1e-5, tol=1e-5, max_coords=None, seed=0):
    """Compare analytic gradients against central finite differences.

    ``make_loss`` must rebuild the scalar loss from the params' current
    values.  For large tensors a seeded sample of coordinates is checked.
    """
    rng = np.random.default_rng(seed)
    for p in params:
        p.grad = None
    loss = make_loss()
    T.backward(loss)
    worst = 0.0
    for p in params:
        assert p.grad is not None, "gradient missing after backward"
        flat = p.values.reshape(-1)
        gflat = p.grad.reshape(-1)
        idxs = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idxs = rng.choice(flat.size, size=max_coords, replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            up = make_loss().item()
            flat[i] = orig - eps
            down = make_loss().item()
            flat[i] = orig
            numeric = (up - down) / (2 * eps)
            if abs(gflat[i] - numeric) < 1e-9:
                continue
            err = rel_err(gflat[i], numeric)
            worst = max(worst, err)
            assert err < tol, (
                f"gradient mismatch at coord {i}: analytic={gflat[i]!r} "
                f"numeric={numeric!r} rel_err={err:.2e}"
            )
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


LANGS = ("syn0", "syn1", "syn2", "syn3")


@pytest.fixture
def languages():
    return LANGS
