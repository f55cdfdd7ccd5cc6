"""Shared fixtures and independent oracles used across the test suite.

The finite-difference and enumeration helpers here deliberately avoid the
library's analytic gradient / moment code paths: they drive everything
through `exact_loss` / `energy` so they stay valid oracles for those paths.
"""

from __future__ import annotations

import numpy as np
import pytest

from spectral_rbm.model import (
    Covariance,
    RbmParams,
    all_binary_states,
    energy,
    exact_loss,
)

MODEL_KINDS = ["bernoulli", "identity", "isotropic", "diagonal_log", "full"]


def random_spd(rng, n, eig_low=0.5, eig_high=2.0):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = rng.uniform(eig_low, eig_high, n)
    m = (q * lam) @ q.T
    return 0.5 * (m + m.T)


def make_tiny_model(kind: str, seed: int, n_v: int = 6, n_h: int = 4, scale: float = 0.5) -> RbmParams:
    """Seeded small model of the given family/covariance kind."""
    rng = np.random.default_rng([seed, n_v, n_h])
    W = scale * rng.standard_normal((n_v, n_h))
    b = scale * rng.standard_normal(n_v)
    a = scale * rng.standard_normal(n_h)
    if kind == "bernoulli":
        return RbmParams("bernoulli", W, b, a)
    if kind == "identity":
        cov = Covariance.identity()
    elif kind == "isotropic":
        cov = Covariance.isotropic(float(rng.uniform(0.5, 2.0)))
    elif kind == "diagonal_log":
        cov = Covariance.diagonal_log(0.5 * rng.standard_normal(n_v))
    elif kind == "full":
        cov = Covariance.full(np.linalg.inv(random_spd(rng, n_v)))
    else:
        raise ValueError(kind)
    return RbmParams("gaussian", W, b, a, cov)


def make_batch(params: RbmParams, seed: int, size: int = 8) -> np.ndarray:
    rng = np.random.default_rng([seed, size, 0x62])
    if params.family == "bernoulli":
        return (rng.random((size, params.n_v)) < 0.5).astype(np.float64)
    return rng.standard_normal((size, params.n_v))


def _loss_with_cov_payload(params: RbmParams, batch, payload) -> float:
    kind = params.cov.kind
    if kind == "isotropic":
        cov = Covariance.isotropic(float(payload))
    elif kind == "diagonal_log":
        cov = Covariance.diagonal_log(payload)
    else:
        cov = Covariance.full(payload)
    return exact_loss(params.replace(cov=cov), batch)


def fd_gradients(params: RbmParams, batch, step: float = 1e-5) -> dict:
    """Central finite differences of exact_loss for every parameter block.

    Full-covariance coordinates are perturbed in symmetric (i,j)/(j,i) pairs
    so the differences stay inside the symmetric matrices the parameter is
    constrained to; the quotient is halved accordingly off the diagonal.
    """
    out = {}
    W = params.W
    gW = np.zeros_like(W)
    for i in range(params.n_v):
        for j in range(params.n_h):
            d = np.zeros_like(W)
            d[i, j] = step
            gW[i, j] = (
                exact_loss(params.replace(W=W + d), batch)
                - exact_loss(params.replace(W=W - d), batch)
            ) / (2 * step)
    out["dW"] = gW
    gb = np.zeros_like(params.b)
    for i in range(params.n_v):
        d = np.zeros_like(params.b)
        d[i] = step
        gb[i] = (
            exact_loss(params.replace(b=params.b + d), batch)
            - exact_loss(params.replace(b=params.b - d), batch)
        ) / (2 * step)
    out["db"] = gb
    ga = np.zeros_like(params.a)
    for k in range(params.n_h):
        d = np.zeros_like(params.a)
        d[k] = step
        ga[k] = (
            exact_loss(params.replace(a=params.a + d), batch)
            - exact_loss(params.replace(a=params.a - d), batch)
        ) / (2 * step)
    out["da"] = ga
    if params.family == "bernoulli" or params.cov.kind == "identity":
        out["dcov"] = None
        return out
    kind = params.cov.kind
    if kind == "isotropic":
        c = params.cov.payload
        out["dcov"] = (
            _loss_with_cov_payload(params, batch, c + step)
            - _loss_with_cov_payload(params, batch, c - step)
        ) / (2 * step)
    elif kind == "diagonal_log":
        cl = params.cov.payload
        g = np.zeros_like(cl)
        for i in range(params.n_v):
            d = np.zeros_like(cl)
            d[i] = step
            g[i] = (
                _loss_with_cov_payload(params, batch, cl + d)
                - _loss_with_cov_payload(params, batch, cl - d)
            ) / (2 * step)
        out["dcov"] = g
    else:
        P = params.cov.payload
        g = np.zeros_like(P)
        for i in range(params.n_v):
            for j in range(i, params.n_v):
                d = np.zeros_like(P)
                d[i, j] += step
                d[j, i] += step
                num = (
                    _loss_with_cov_payload(params, batch, P + d)
                    - _loss_with_cov_payload(params, batch, P - d)
                ) / (2 * step)
                if i == j:
                    g[i, i] = num / 2.0  # both (i,i) bumps hit the same entry
                else:
                    g[i, j] = g[j, i] = num / 2.0
        out["dcov"] = g
    return out


def rel_err(numeric, analytic) -> float:
    numeric = np.asarray(numeric, dtype=np.float64)
    analytic = np.asarray(analytic, dtype=np.float64)
    scale = max(float(np.max(np.abs(numeric))), 1e-10)
    return float(np.max(np.abs(numeric - analytic))) / scale


def enumerate_bernoulli_joint(params: RbmParams):
    """All joint states and their exact probabilities, via energies only."""
    V = all_binary_states(params.n_v)
    H = all_binary_states(params.n_h)
    states = []
    logw = []
    for v in V:
        for h in H:
            states.append((v, h))
            logw.append(-energy(params, v, h))
    logw = np.asarray(logw)
    m = logw.max()
    p = np.exp(logw - m)
    return states, p / p.sum()


@pytest.fixture(scope="session")
def tiny_models():
    """One tiny model per family/covariance kind, fixed seeds."""
    return {kind: make_tiny_model(kind, seed=11 + i) for i, kind in enumerate(MODEL_KINDS)}
