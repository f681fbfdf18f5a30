"""Shared test helpers: finite-difference gradient oracle and probes."""

import numpy as np
import pytest

from airode import tensor as T


def probe_loss(y, w):
    """Real linear functional L = sum(Re(y)*Re(w) + Im(y)*Im(w)).

    Built from differentiable ops so it can close a graph; with a fixed
    random probe w it exposes the full Jacobian of the op under test.
    """
    return T.real(T.sum_all(T.mul(y, T.conj(w))))


def numerical_grad(f, param, eps=1e-6):
    """Central finite differences of the real scalar f() w.r.t. the real
    and imaginary parts of `param.data`, packed as re + 1j*im."""
    flat = param.data.ravel()
    out = np.zeros(flat.shape, dtype=np.complex128)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        lp = f()
        flat[i] = orig - eps
        lm = f()
        flat[i] = orig
        dre = (lp - lm) / (2 * eps)
        flat[i] = orig + 1j * eps
        lp = f()
        flat[i] = orig - 1j * eps
        lm = f()
        flat[i] = orig
        dim = (lp - lm) / (2 * eps)
        out[i] = dre + 1j * dim
    return out.reshape(param.data.shape)


def assert_grads_match(build_loss, params, eps=1e-6, rtol=1e-4, atol=1e-7):
    """Backprop through build_loss() and compare every param's gradient
    against central differences at the stated tolerances."""
    loss = build_loss()
    T.backward(loss)
    analytic = []
    for p in params:
        assert p.grad is not None, "parameter received no gradient"
        analytic.append(p.grad.copy())

    def scalar():
        with T.no_grad():
            return float(build_loss().data.real)

    for p, g in zip(params, analytic):
        num = numerical_grad(scalar, p, eps=eps)
        err = np.abs(g - num)
        tol = atol + rtol * np.abs(num)
        assert np.all(err <= tol), (
            f"gradient mismatch: max err {err.max():.3e}, "
            f"analytic {g.ravel()[np.argmax(err)]}, numeric {num.ravel()[np.argmax(err)]}"
        )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def cgauss(rng, shape, scale=1.0):
    return scale * (rng.normal(size=shape) + 1j * rng.normal(size=shape))
