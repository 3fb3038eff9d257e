"""Shared oracles: naive direct-summation convolution and central finite
differences.  Both are intentionally independent of the library's own
implementations (loops instead of BLAS, numeric instead of analytic)."""

import itertools

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20260809)


def conv_oracle(x, w, b, stride, padding):
    """Direct-summation cross-correlation, explicit loops everywhere."""
    nd = w.ndim - 2
    xp = np.pad(x, [(0, 0), (0, 0)] + [(p, p) for p in padding])
    out_sp = tuple(
        (xp.shape[2 + i] - w.shape[2 + i]) // stride[i] + 1 for i in range(nd)
    )
    n_batch, cout = x.shape[0], w.shape[0]
    out = np.zeros((n_batch, cout) + out_sp)
    for n in range(n_batch):
        for o in range(cout):
            for pos in itertools.product(*[range(e) for e in out_sp]):
                acc = 0.0
                for c in range(x.shape[1]):
                    for k in itertools.product(*[range(e) for e in w.shape[2:]]):
                        src = tuple(pos[i] * stride[i] + k[i] for i in range(nd))
                        acc += xp[(n, c) + src] * w[(o, c) + k]
                out[(n, o) + pos] = acc + b[o]
    return out


def numeric_grad(f, array, h=1e-5):
    """Central finite differences of scalar-valued f() w.r.t. array,
    perturbing in place."""
    g = np.zeros_like(array)
    flat, gf = array.ravel(), g.ravel()
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + h
        fp = f()
        flat[j] = orig - h
        fm = f()
        flat[j] = orig
        gf[j] = (fp - fm) / (2.0 * h)
    return g


def assert_grads_close(analytic, numeric, rel=1e-4):
    analytic = np.asarray(analytic, dtype=float)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-4)
    err = np.abs(analytic - numeric) / denom
    assert err.max() <= rel, f"gradient mismatch: max rel err {err.max():.3e}"
