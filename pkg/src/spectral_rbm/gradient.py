"""Gradients of the averaged negative log-likelihood.

Every parameter block's gradient is a model-expectation minus a
data-expectation of the corresponding energy statistic:

    dL/dW     = E_model[C^-1 v h'] - E_data[C^-1 v h']     (C^-1 = I for Bernoulli)
    dL/db     = E_model[C^-1 v]    - E_data[C^-1 v]
    dL/da     = E_model[h]         - E_data[h]
    dL/dC^-1  = E_model[v(Wh)' - (v-b)(v-b)'/2] - E_data[...]

`estimate_gradients` plugs in sampled negative-phase statistics (visibles
sampled, hidden units Rao-Blackwellized to their means); the exact variants
compute the model expectation by enumeration and are the small-scale oracle
the stochastic path is tested against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    RbmParams,
    _gaussian_state_exponents,
    all_binary_states,
    check_oracle_scale,
    hidden_probs,
    sigmoid,
    softplus,
    validate_batch,
    visible_mean,
)
from .sampler import PhaseStats


@dataclass(frozen=True)
class GradientSet:
    """One gradient per parameter block, mirroring RbmParams shapes."""

    dW: np.ndarray
    db: np.ndarray
    da: np.ndarray
    dcov: float | np.ndarray | None = None

    def __add__(self, other: "GradientSet") -> "GradientSet":
        return GradientSet(
            self.dW + other.dW,
            self.db + other.db,
            self.da + other.da,
            None if self.dcov is None else self.dcov + other.dcov,
        )

    def __sub__(self, other: "GradientSet") -> "GradientSet":
        return self + other.scaled(-1.0)

    def scaled(self, s: float) -> "GradientSet":
        return GradientSet(
            s * self.dW,
            s * self.db,
            s * self.da,
            None if self.dcov is None else s * self.dcov,
        )


def _reduce_cov_gradient(params: RbmParams, full: np.ndarray | None, diag: np.ndarray | None):
    """Map the full / diagonal inverse-covariance gradient onto the payload."""
    kind = params.cov.kind
    if kind == "identity":
        return None
    if kind == "isotropic":
        return float(np.sum(diag))
    if kind == "diagonal_log":
        # payload is log C^-1, so chain rule multiplies by the precision
        return np.exp(params.cov.payload) * diag
    return 0.5 * (full + full.T)


def _phase_moments(params: RbmParams, stats: PhaseStats) -> GradientSet:
    """Expectations of the energy statistics under one phase's samples."""
    v = np.asarray(stats.v, dtype=np.float64)
    h = np.asarray(stats.h, dtype=np.float64)
    if v.ndim != 2 or h.ndim != 2 or v.shape[0] != h.shape[0]:
        raise ValueError("phase statistics must be matched 2-d batches")
    if v.shape[1] != params.n_v or h.shape[1] != params.n_h:
        raise ValueError("phase statistics do not match model dimensions")
    bsz = v.shape[0]
    if params.family == "bernoulli":
        return GradientSet(v.T @ h / bsz, v.mean(axis=0), h.mean(axis=0), None)
    pv = params.cov.apply_precision(v)
    dW = pv.T @ h / bsz
    db = pv.mean(axis=0)
    da = h.mean(axis=0)
    wh = h @ params.W.T
    d = v - params.b
    kind = params.cov.kind
    full = diag = None
    if kind == "full":
        full = (v.T @ wh - 0.5 * (d.T @ d)) / bsz
    elif kind != "identity":
        diag = np.mean(v * wh - 0.5 * d * d, axis=0)
    return GradientSet(dW, db, da, _reduce_cov_gradient(params, full, diag))


def estimate_gradients(params: RbmParams, positive: PhaseStats, negative: PhaseStats) -> GradientSet:
    """Stochastic gradient estimate: negative-phase minus positive-phase moments."""
    return _phase_moments(params, negative) - _phase_moments(params, positive)


def data_term_gradients(params: RbmParams, batch) -> GradientSet:
    """Exact gradient of the data term (the minus-data-expectation half).

    For Gaussian models the b block is C^-1 b - E_data[C^-1 v]; the C^-1 b
    part cancels against its negative in the log-partition gradient, which is
    why the assembled loss gradient is the plain expectation difference.
    """
    x = validate_batch(params, batch)
    stats = PhaseStats(x, hidden_probs(params, x))
    grads = _phase_moments(params, stats).scaled(-1.0)
    if params.family == "gaussian":
        grads = GradientSet(
            grads.dW,
            grads.db + params.cov.apply_precision(params.b),
            grads.da,
            grads.dcov,
        )
    return grads


def exact_partition_gradients(params: RbmParams) -> GradientSet:
    """Exact gradient of the log-partition term (the model-expectation half).

    Gaussian models enumerate the 2^n_h hidden configurations and use the
    closed-form conditional moments of v given h (mean b + Wh, covariance C);
    Bernoulli models enumerate the smaller layer.
    """
    check_oracle_scale(params)
    if params.family == "gaussian":
        H, t = _gaussian_state_exponents(params)
        pi = np.exp(t - np.max(t))
        pi /= pi.sum()
        U = H @ params.W.T  # rows: W h_i
        M = params.b + U  # conditional means of v
        PM = params.cov.apply_precision(M)
        da = pi @ H
        dW = PM.T @ (H * pi[:, None])
        # E_model[C^-1 v] minus the C^-1 b that the data half contributes
        db = PM.T @ pi - params.cov.apply_precision(params.b)
        kind = params.cov.kind
        full = diag = None
        if kind == "full":
            full = M.T @ (U * pi[:, None]) - 0.5 * (
                params.cov.covariance_matrix(params.n_v) + U.T @ (U * pi[:, None])
            )
        elif kind != "identity":
            diag = (M * U * pi[:, None]).sum(axis=0) - 0.5 * (
                params.cov.covariance_diag(params.n_v) + (U * U * pi[:, None]).sum(axis=0)
            )
        return GradientSet(dW, db, da, _reduce_cov_gradient(params, full, diag))
    if params.n_h <= params.n_v:
        H = all_binary_states(params.n_h)
        act = H @ params.W.T + params.b  # (S, n_v)
        t = H @ params.a + softplus(act).sum(axis=1)
        pi = np.exp(t - np.max(t))
        pi /= pi.sum()
        Q = sigmoid(act)  # conditional visible means
        dW = (Q * pi[:, None]).T @ H
        db = pi @ Q
        da = pi @ H
    else:
        V = all_binary_states(params.n_v)
        act = V @ params.W + params.a  # (S, n_h)
        t = V @ params.b + softplus(act).sum(axis=1)
        pi = np.exp(t - np.max(t))
        pi /= pi.sum()
        P = sigmoid(act)  # conditional hidden means
        dW = (V * pi[:, None]).T @ P
        db = pi @ V
        da = pi @ P
    return GradientSet(dW, db, da, None)


def exact_gradients(params: RbmParams, batch) -> GradientSet:
    """Exact gradient of the full loss; matches finite differences of exact_loss."""
    return exact_partition_gradients(params) + data_term_gradients(params, batch)
