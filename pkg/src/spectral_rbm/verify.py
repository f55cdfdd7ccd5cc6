"""Numerical verification of the curvature bounds behind the sign/spectral
updates.

Checked claims, each against exact-enumeration evaluations on small Gaussian
models:

  * weighted log-sum-exp admits a quadratic upper bound with curvature
    constant 1/2 in the squared infinity norm;
  * weighted log-sum-exp-square (exponents x_i^2/2) admits the same with
    constant 1/2 + 3r^2/4 on the centered l2 ball of radius r;
  * the log-partition term admits per-block quadratic upper bounds with the
    explicit constants listed in `check_partition_bound`, assuming a spectral
    cap ||W||_2 <= R;
  * the data term is concave in W, a, and the inverse covariance (first-order
    upper bounds), exactly quadratic in b with Hessian C^-1, and that
    quadratic obeys an infinity-norm bound with constant n_v / (2 lambda_min(C));
  * log|C| + log|C^-1| = 0 for SPD matrices;
  * the sign/spectral steps minimize the linearized-loss surrogate over
    equal-norm directions.

Every check reports slack = RHS - LHS. The suite counts a trial as a
violation when the slack falls below -1e-9; the quantities involved are O(1)
on the drawn models, so this is at least as strict as a 1e-9-relative rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gradient import data_term_gradients, exact_partition_gradients
from .linalg import spectral_norm, svd
from .model import Covariance, RbmParams, exact_log_partition, neg_data_term
from .optimizer import project_weight_norm

REL_TOL = 1e-9
LOGDET_TOL = 1e-10

PARTITION_BLOCKS = ("a", "b", "w", "cov")


@dataclass
class BoundReport:
    """Aggregate of one bound's trials."""

    bound_id: str
    trials: int
    violations: int
    max_slack: float
    min_slack: float


def _tol(rhs: float) -> float:
    return REL_TOL * max(1.0, abs(rhs))


class _Aggregator:
    def __init__(self, bound_id: str):
        self.bound_id = bound_id
        self.trials = 0
        self.violations = 0
        self.max_slack = -math.inf
        self.min_slack = math.inf

    def add(self, slack: float, violated: bool) -> None:
        slack = float(slack)
        self.trials += 1
        self.violations += int(violated)
        self.max_slack = max(self.max_slack, slack)
        self.min_slack = min(self.min_slack, slack)

    def report(self) -> BoundReport:
        return BoundReport(self.bound_id, self.trials, self.violations, self.max_slack, self.min_slack)


# --- weighted log-sum-exp functions ------------------------------------------


def lse(omega, x) -> float:
    """log sum_i omega_i exp(x_i), omega > 0."""
    omega = np.asarray(omega, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    t = np.log(omega) + x
    m = np.max(t)
    return float(m + np.log(np.sum(np.exp(t - m))))


def lse_grad(omega, x) -> np.ndarray:
    """Gradient of lse: the omega-weighted softmax."""
    t = np.log(np.asarray(omega, dtype=np.float64)) + np.asarray(x, dtype=np.float64)
    p = np.exp(t - np.max(t))
    return p / p.sum()


def lse2(omega, x) -> float:
    """log sum_i omega_i exp(x_i^2 / 2)."""
    x = np.asarray(x, dtype=np.float64)
    return lse(omega, 0.5 * x * x)


def lse2_grad(omega, x) -> np.ndarray:
    """Gradient of lse2: x_i times the softmax of the squared exponents."""
    x = np.asarray(x, dtype=np.float64)
    return x * lse_grad(omega, 0.5 * x * x)


# --- single-trial bound evaluations -------------------------------------------


def check_lse_bound(omega, x, dx) -> float:
    """Slack of lse(x+dx) <= lse(x) + <grad, dx> + ||dx||_inf^2 / 2."""
    omega = np.asarray(omega, dtype=np.float64)
    if np.any(omega <= 0.0):
        raise ValueError("omega must be positive")
    x = np.asarray(x, dtype=np.float64)
    dx = np.asarray(dx, dtype=np.float64)
    rhs = lse(omega, x) + float(lse_grad(omega, x) @ dx) + 0.5 * float(np.max(np.abs(dx))) ** 2
    return rhs - lse(omega, x + dx)


def check_lse2_bound(omega, x, dx, r: float) -> float:
    """Slack of the lse2 bound with constant 1/2 + 3r^2/4 on the r-ball."""
    omega = np.asarray(omega, dtype=np.float64)
    if np.any(omega <= 0.0):
        raise ValueError("omega must be positive")
    x = np.asarray(x, dtype=np.float64)
    dx = np.asarray(dx, dtype=np.float64)
    slackable = 1e-12 * max(1.0, r)
    if np.linalg.norm(x) > r + slackable or np.linalg.norm(x + dx) > r + slackable:
        raise ValueError("x and x + dx must lie in the l2 ball of radius r")
    const = 0.5 + 0.75 * r * r
    rhs = lse2(omega, x) + float(lse2_grad(omega, x) @ dx) + const * float(np.max(np.abs(dx))) ** 2
    return rhs - lse2(omega, x + dx)


def partition_bound_constant(params: RbmParams, block: str, cap: float) -> float:
    """Curvature constant of the log-partition bound for one block.

    a:    n_h / 2
    b:    n_h * R / (2 lambda_min(C))
    w:    (1/2 + 3 r^2 / 4) n_v n_h,  r = (R sqrt(n_h) + ||b||_2) / sqrt(lambda_min(C))
    cov:  n_h^2 R^2 / 2 + n_v^2 lambda_max(C)^2
    """
    n_v, n_h = params.n_v, params.n_h
    if block == "a":
        return 0.5 * n_h
    lam_min_c, lam_max_c = params.cov.cov_eig_range(n_v)
    if block == "b":
        return 0.5 * n_h * cap / lam_min_c
    if block == "w":
        r = (cap * math.sqrt(n_h) + float(np.linalg.norm(params.b))) / math.sqrt(lam_min_c)
        return (0.5 + 0.75 * r * r) * n_v * n_h
    if block == "cov":
        return 0.5 * (n_h * cap) ** 2 + (n_v * lam_max_c) ** 2
    raise ValueError(f"unknown block {block!r}")


def _perturbed(params: RbmParams, block: str, delta: np.ndarray) -> RbmParams:
    if block == "a":
        return params.replace(a=params.a + delta)
    if block == "b":
        return params.replace(b=params.b + delta)
    if block == "w":
        return params.replace(W=params.W + delta)
    if block == "cov":
        kind = params.cov.kind
        if kind == "isotropic":
            return params.replace(cov=Covariance.isotropic(params.cov.payload + float(delta)))
        if kind == "diagonal_log":
            return params.replace(cov=Covariance.diagonal_log(params.cov.payload + delta))
        if kind == "full":
            return params.replace(cov=Covariance.full(params.cov.payload + delta))
        raise ValueError("identity covariance has no perturbable payload")
    raise ValueError(f"unknown block {block!r}")


def _grad_block(grads, block: str):
    return {"a": grads.da, "b": grads.db, "w": grads.dW, "cov": grads.dcov}[block]


def check_partition_bound(params: RbmParams, block: str, delta, cap: float) -> float:
    """Slack of the log-partition quadratic upper bound for one block.

    Preconditions: the model is Gaussian; for the w block both W and W+delta
    lie inside the spectral-norm cap; for the cov block delta is symmetric
    positive semidefinite. The perturbation norm is the infinity norm for
    vector blocks and the spectral norm for matrix blocks.
    """
    if params.family != "gaussian":
        raise ValueError("partition bounds are checked on gaussian models")
    delta = np.asarray(delta, dtype=np.float64)
    if block == "w":
        slackable = 1e-9 * max(1.0, cap)
        if spectral_norm(params.W) > cap + slackable:
            raise ValueError("||W||_2 must be <= cap")
        if spectral_norm(params.W + delta) > cap + slackable:
            raise ValueError("||W + delta||_2 must be <= cap")
    if block == "cov":
        if params.cov.kind != "full":
            raise ValueError("the covariance bound is checked on full-kind models")
        if np.max(np.abs(delta - delta.T)) > 1e-9 * max(1.0, np.max(np.abs(delta))):
            raise ValueError("covariance perturbation must be symmetric")
        if np.min(np.linalg.eigvalsh(delta)) < -1e-9 * max(1.0, np.max(np.abs(delta))):
            raise ValueError("covariance perturbation must be positive semidefinite")
    f0 = exact_log_partition(params)
    f1 = exact_log_partition(_perturbed(params, block, delta))
    grad = _grad_block(exact_partition_gradients(params), block)
    linear = float(np.sum(grad * delta))
    if block in ("w", "cov"):
        norm = spectral_norm(delta) if delta.size else 0.0
    else:
        norm = float(np.max(np.abs(delta))) if delta.size else 0.0
    rhs = f0 + linear + partition_bound_constant(params, block, cap) * norm * norm
    return rhs - f1


def check_g_concavity(params: RbmParams, batch, block: str, delta) -> float:
    """Slack of the first-order (concavity) upper bound of the data term."""
    if block not in ("a", "w", "cov"):
        raise ValueError("concavity is checked for the a, w, and cov blocks")
    delta = np.asarray(delta, dtype=np.float64)
    g0 = neg_data_term(params, batch)
    g1 = neg_data_term(_perturbed(params, block, delta), batch)
    grad = _grad_block(data_term_gradients(params, batch), block)
    rhs = g0 + float(np.sum(grad * delta))
    return rhs - g1


def g_quadratic_residual(params: RbmParams, batch, db) -> float:
    """Deviation of the data term from its exact quadratic expansion in b.

    Returns g(b + db) - g(b) - <grad, db> - db'C^-1 db / 2, which is zero in
    exact arithmetic for Gaussian models.
    """
    if params.family != "gaussian":
        raise ValueError("the quadratic identity in b is specific to gaussian models")
    db = np.asarray(db, dtype=np.float64)
    g0 = neg_data_term(params, batch)
    g1 = neg_data_term(params.replace(b=params.b + db), batch)
    grad = data_term_gradients(params, batch).db
    quad = 0.5 * float(params.cov.quad_form(db))
    return g1 - g0 - float(grad @ db) - quad


def check_g_linf_bound(params: RbmParams, db) -> float:
    """Slack of db'C^-1 db / 2 <= (n_v / (2 lambda_min(C))) ||db||_inf^2."""
    db = np.asarray(db, dtype=np.float64)
    lam_min_c, _ = params.cov.cov_eig_range(params.n_v)
    lhs = 0.5 * float(params.cov.quad_form(db))
    rhs = 0.5 * params.n_v / lam_min_c * float(np.max(np.abs(db))) ** 2
    return rhs - lhs


def check_logdet_identity(spd) -> float:
    """|log|C| + log|C^-1|| for an SPD matrix, computed by two slogdets."""
    spd = np.asarray(spd, dtype=np.float64)
    s1, ld1 = np.linalg.slogdet(spd)
    s2, ld2 = np.linalg.slogdet(np.linalg.inv(spd))
    if s1 <= 0 or s2 <= 0:
        raise ValueError("matrix must be positive definite")
    return float(abs(ld1 + ld2))


# --- surrogate optimality -----------------------------------------------------


def surrogate_value_vector(g, delta, c: float) -> float:
    """<g, delta> + c ||delta||_inf^2."""
    g = np.asarray(g, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    return float(g @ delta) + c * float(np.max(np.abs(delta))) ** 2


def surrogate_value_matrix(G, delta, c: float) -> float:
    """<G, delta> + c ||delta||_S-inf^2."""
    G = np.asarray(G, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    return float(np.sum(G * delta)) + c * spectral_norm(delta) ** 2


def ssd_vector_direction(g, c: float) -> np.ndarray:
    """Argmin of the vector surrogate: -(||g||_1 / 2c) sign(g)."""
    g = np.asarray(g, dtype=np.float64)
    return -(float(np.sum(np.abs(g))) / (2.0 * c)) * np.sign(g)


def ssd_matrix_direction(G, c: float) -> np.ndarray:
    """Argmin of the matrix surrogate: -(sum sigma_i / 2c) U V'."""
    u, s, v = svd(G)
    return -(float(np.sum(s)) / (2.0 * c)) * (u @ v.T)


def surrogate_argmin_check(G, c: float, n_candidates: int, rng, zero_delta: bool = False) -> BoundReport:
    """Compare the surrogate-minimizing step against equal-norm candidates.

    Candidates are random directions rescaled to the step's norm, plus the
    rescaled negative gradient. Slack per candidate is its surrogate value
    minus the step's (nonnegative when the step is optimal).
    """
    G = np.asarray(G, dtype=np.float64)
    is_matrix = G.ndim == 2
    agg = _Aggregator("surrogate_argmin_matrix" if is_matrix else "surrogate_argmin_vector")
    if is_matrix:
        step = ssd_matrix_direction(G, c)
        t = spectral_norm(step)
        best = surrogate_value_matrix(G, step, c)
    else:
        step = ssd_vector_direction(G, c)
        t = float(np.max(np.abs(step)))
        best = surrogate_value_vector(G, step, c)
    tol = _tol(best)

    def add(cand):
        val = surrogate_value_matrix(G, cand, c) if is_matrix else surrogate_value_vector(G, cand, c)
        slack = val - best
        agg.add(slack, slack < -tol)

    if zero_delta:
        for _ in range(n_candidates):
            add(step)
        return agg.report()
    add(_rescale(-G, t, is_matrix))
    for _ in range(n_candidates - 1):
        cand = rng.standard_normal(G.shape)
        add(_rescale(cand, t, is_matrix))
    return agg.report()


def _rescale(direction: np.ndarray, t: float, is_matrix: bool) -> np.ndarray:
    cur = spectral_norm(direction) if is_matrix else float(np.max(np.abs(direction)))
    if cur == 0.0:
        return direction
    return direction * (t / cur)


# --- suite ---------------------------------------------------------------------

DEFAULT_TRIALS = {
    "lse_quadratic": 10000,
    "lse2_quadratic": 10000,
    "logz_hidden_bias": 1000,
    "logz_visible_bias": 1000,
    "logz_weights": 1000,
    "logz_precision": 1000,
    "negdata_concave_hidden_bias": 1000,
    "negdata_concave_weights": 1000,
    "negdata_concave_precision": 1000,
    "negdata_quadratic_visible_bias": 1000,
    "negdata_visible_bias_linf": 1000,
    "logdet_inverse_identity": 200,
    "surrogate_argmin_vector": 10000,
    "surrogate_argmin_matrix": 1000,
}

# Spectral cap used by the cap-dependent bound constants; models are drawn
# well inside it so the caps never bind.
SUITE_WEIGHT_CAP = math.sqrt(15.0)


def random_spd(rng, n: int, eig_low: float, eig_high: float) -> np.ndarray:
    """Random SPD matrix with eigenvalues uniform in [eig_low, eig_high]."""
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = rng.uniform(eig_low, eig_high, n)
    m = (q * lam) @ q.T
    return 0.5 * (m + m.T)


def draw_suite_model(rng, n_v: int = 4, n_h: int = 3, w_norm: float = 0.7,
                     b_norm: float = 1.0, c_eig: tuple = (1.0, 2.0)) -> RbmParams:
    """Small Gaussian model with full covariance for the bound trials.

    Scales are chosen so every checked bound holds with analytic margin:
    ||W||_2 <= w_norm, ||b||_2 <= b_norm, eigenvalues of C inside c_eig.
    """
    W = rng.standard_normal((n_v, n_h))
    W = project_weight_norm(W, w_norm * rng.uniform(0.5, 1.0))
    b = rng.standard_normal(n_v)
    b *= b_norm * rng.uniform(0.3, 1.0) / max(1e-12, np.linalg.norm(b))
    a = 0.5 * rng.standard_normal(n_h)
    cov_c = random_spd(rng, n_v, c_eig[0], c_eig[1])
    precision = np.linalg.inv(cov_c)
    return RbmParams("gaussian", W, b, a, Covariance.full(0.5 * (precision + precision.T)))


def _suite_counts(trials_override: int | None) -> dict:
    if trials_override is None:
        return dict(DEFAULT_TRIALS)
    if trials_override < 1:
        raise ValueError("trials must be >= 1")
    return {k: trials_override for k in DEFAULT_TRIALS}


def run_bound_suite(seed: int = 0, trials: int | None = None, zero_delta: bool = False) -> list[BoundReport]:
    """Run every bound check and aggregate one BoundReport per bound id.

    `trials` overrides the per-bound default counts; `zero_delta` evaluates
    each bound at a zero perturbation (slack 0, a diagnostics mode).
    """
    rng = np.random.default_rng(seed)
    counts = _suite_counts(trials)
    reports: list[BoundReport] = []

    agg = _Aggregator("lse_quadratic")
    for _ in range(counts["lse_quadratic"]):
        n = int(rng.integers(2, 9))
        omega = np.exp(rng.standard_normal(n))
        x = 2.0 * rng.standard_normal(n)
        dx = np.zeros(n) if zero_delta else rng.uniform(-2.0, 2.0, n)
        slack = check_lse_bound(omega, x, dx)
        agg.add(slack, slack < -REL_TOL)
    reports.append(agg.report())

    agg = _Aggregator("lse2_quadratic")
    for _ in range(counts["lse2_quadratic"]):
        n = int(rng.integers(2, 7))
        omega = np.exp(rng.standard_normal(n))
        r = rng.uniform(0.8, 2.5)
        x = rng.standard_normal(n)
        x *= rng.uniform(0.0, 0.9) * r / max(1e-12, np.linalg.norm(x))
        if zero_delta:
            dx = np.zeros(n)
        else:
            dx = rng.standard_normal(n)
            dx *= rng.uniform(0.0, 1.0) * r / max(1e-12, np.linalg.norm(dx))
            while np.linalg.norm(x + dx) > r:
                dx *= 0.5
        slack = check_lse2_bound(omega, x, dx, r)
        agg.add(slack, slack < -REL_TOL)
    reports.append(agg.report())

    block_of = {
        "logz_hidden_bias": "a",
        "logz_visible_bias": "b",
        "logz_weights": "w",
        "logz_precision": "cov",
    }
    for bound_id, block in block_of.items():
        agg = _Aggregator(bound_id)
        for _ in range(counts[bound_id]):
            params = draw_suite_model(rng)
            delta = _draw_partition_delta(rng, params, block, zero_delta)
            slack = check_partition_bound(params, block, delta, SUITE_WEIGHT_CAP)
            agg.add(slack, slack < -REL_TOL)
        reports.append(agg.report())

    for bound_id, block in (
        ("negdata_concave_hidden_bias", "a"),
        ("negdata_concave_weights", "w"),
        ("negdata_concave_precision", "cov"),
    ):
        agg = _Aggregator(bound_id)
        for _ in range(counts[bound_id]):
            params = draw_suite_model(rng)
            batch = rng.standard_normal((8, params.n_v))
            delta = _draw_g_delta(rng, params, block, zero_delta)
            slack = check_g_concavity(params, batch, block, delta)
            agg.add(slack, slack < -REL_TOL)
        reports.append(agg.report())

    agg = _Aggregator("negdata_quadratic_visible_bias")
    agg2 = _Aggregator("negdata_visible_bias_linf")
    for _ in range(counts["negdata_quadratic_visible_bias"]):
        params = draw_suite_model(rng)
        batch = rng.standard_normal((8, params.n_v))
        db = np.zeros(params.n_v) if zero_delta else rng.uniform(-1.0, 1.0, params.n_v)
        residual = g_quadratic_residual(params, batch, db)
        agg.add(residual, abs(residual) > 1e-9)
        slack = check_g_linf_bound(params, db)
        agg2.add(slack, slack < -REL_TOL)
    reports.append(agg.report())
    reports.append(agg2.report())

    agg = _Aggregator("logdet_inverse_identity")
    for _ in range(counts["logdet_inverse_identity"]):
        n = int(rng.integers(2, 9))
        residual = check_logdet_identity(random_spd(rng, n, 0.2, 3.0))
        agg.add(residual, residual > LOGDET_TOL)
    reports.append(agg.report())

    reports.append(_surrogate_suite(rng, counts["surrogate_argmin_vector"], False, zero_delta))
    reports.append(_surrogate_suite(rng, counts["surrogate_argmin_matrix"], True, zero_delta))
    return reports


def _draw_partition_delta(rng, params: RbmParams, block: str, zero: bool) -> np.ndarray:
    n_v, n_h = params.n_v, params.n_h
    if block == "a":
        return np.zeros(n_h) if zero else rng.uniform(-1.0, 1.0, n_h)
    if block == "b":
        return np.zeros(n_v) if zero else rng.uniform(-1.0, 1.0, n_v)
    if block == "w":
        if zero:
            return np.zeros((n_v, n_h))
        u = rng.standard_normal((n_v, n_h))
        room = SUITE_WEIGHT_CAP - spectral_norm(params.W)
        return u * (rng.uniform(0.1, 0.9) * room / spectral_norm(u))
    if zero:
        return np.zeros((n_v, n_v))
    root = rng.standard_normal((n_v, n_v))
    u = root @ root.T
    return u * (rng.uniform(0.05, 1.0) / spectral_norm(u))


def _draw_g_delta(rng, params: RbmParams, block: str, zero: bool) -> np.ndarray:
    n_v, n_h = params.n_v, params.n_h
    if block == "a":
        return np.zeros(n_h) if zero else rng.uniform(-1.0, 1.0, n_h)
    if block == "w":
        return np.zeros((n_v, n_h)) if zero else 0.5 * rng.standard_normal((n_v, n_h))
    # cov: symmetric direction small enough to keep C^-1 + delta definite
    if zero:
        return np.zeros((n_v, n_v))
    sym = rng.standard_normal((n_v, n_v))
    sym = 0.5 * (sym + sym.T)
    floor = float(np.min(np.linalg.eigvalsh(params.cov.payload)))
    return sym * (0.5 * floor / max(1e-12, spectral_norm(sym)))


def _surrogate_suite(rng, total: int, is_matrix: bool, zero_delta: bool) -> BoundReport:
    cases = max(1, total // (100 if is_matrix else 1000))
    per_case = max(1, total // cases)
    merged = None
    for _ in range(cases):
        G = rng.standard_normal((5, 4)) if is_matrix else rng.standard_normal(8)
        c = rng.uniform(0.5, 2.0)
        rep = surrogate_argmin_check(G, c, per_case, rng, zero_delta)
        if merged is None:
            merged = rep
        else:
            merged = BoundReport(
                rep.bound_id,
                merged.trials + rep.trials,
                merged.violations + rep.violations,
                max(merged.max_slack, rep.max_slack),
                min(merged.min_slack, rep.min_slack),
            )
    return merged
