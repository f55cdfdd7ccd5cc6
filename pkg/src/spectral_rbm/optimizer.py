"""Parameter update rules and per-block routing.

Three families of updates:

  * plain SGD:            x <- x - eps * g
  * Nesterov SGD:         vel <- mu * vel - eps * g;  x <- x + vel
  * sign/spectral steps minimizing the linearized loss plus an
    infinity-norm-squared penalty:
      vectors:  x <- x - eps * ||g||_1 * sign(g)
      matrices: X <- X - eps * (sum sigma_i) * U V'   with  U S V' = svd(G)

The matrix step has a randomized mode that factors only a low-rank sketch of
the gradient and adds the normalized residual back into the direction.
Per-block policies route W, b, a, and the covariance payload independently;
scalar and diagonal covariance payloads take the vector rule, full covariance
the matrix rule. An optional spectral-norm cap on W is enforced by projection
after its update.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gradient import GradientSet
from .linalg import randomized_svd, spectral_norm, svd
from .model import Covariance, RbmParams

RULES = ("sgd", "nesterov_sgd", "ssd", "frozen")
BLOCKS = ("w", "b", "a", "cov")


@dataclass(frozen=True)
class StepSchedule:
    """Base step size with an optional stepwise exponential decay."""

    base: float
    kind: str = "fixed"  # fixed | exponential
    decay: float = 1.0
    period: int = 1

    def __post_init__(self):
        if self.base <= 0.0:
            raise ValueError("base step size must be > 0")
        if self.kind not in ("fixed", "exponential"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not (0.0 < self.decay <= 1.0):
            raise ValueError("decay must be in (0, 1]")
        if self.period < 1:
            raise ValueError("period must be >= 1")


def step_size(schedule: StepSchedule, iteration: int) -> float:
    """Step size at a given iteration count."""
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    if schedule.kind == "fixed":
        return schedule.base
    return schedule.base * schedule.decay ** (iteration // schedule.period)


@dataclass(frozen=True)
class SsdSvdMode:
    """How the matrix step factors the gradient: exact or randomized sketch."""

    kind: str = "exact"  # exact | randomized
    target_rank: int = 10
    oversample: int = 10

    def __post_init__(self):
        if self.kind not in ("exact", "randomized"):
            raise ValueError(f"unknown svd mode {self.kind!r}")
        if self.target_rank < 1:
            raise ValueError("target_rank must be >= 1")
        if self.oversample < 0:
            raise ValueError("oversample must be >= 0")


@dataclass(frozen=True)
class BlockPolicy:
    """Update rule, step schedule, and momentum for one parameter block."""

    rule: str
    step: StepSchedule
    momentum: float = 0.0

    def __post_init__(self):
        if self.rule not in RULES:
            raise ValueError(f"unknown rule {self.rule!r}")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError("momentum must be in [0, 1)")


@dataclass(frozen=True)
class OptimizerPolicy:
    """Per-block routing plus the shared matrix-step and weight-cap settings."""

    w: BlockPolicy
    b: BlockPolicy
    a: BlockPolicy
    cov: BlockPolicy
    svd_mode: SsdSvdMode = field(default_factory=SsdSvdMode)
    weight_cap: float | None = None

    def __post_init__(self):
        if self.weight_cap is not None and self.weight_cap <= 0.0:
            raise ValueError("weight_cap must be > 0")

    @classmethod
    def uniform(cls, rule: str, step: float, momentum: float = 0.0, **kwargs) -> "OptimizerPolicy":
        bp = BlockPolicy(rule, StepSchedule(step), momentum)
        return cls(w=bp, b=bp, a=bp, cov=bp, **kwargs)


@dataclass
class MomentumState:
    """Velocity buffers (zero-initialized) for the Nesterov rule."""

    vW: np.ndarray
    vb: np.ndarray
    va: np.ndarray
    vcov: float | np.ndarray | None

    @classmethod
    def zeros(cls, params: RbmParams) -> "MomentumState":
        shape = None if params.cov is None else params.cov.payload_shape(params.n_v)
        if shape is None:
            vcov = None
        elif shape == ():
            vcov = 0.0
        else:
            vcov = np.zeros(shape)
        return cls(
            np.zeros_like(params.W),
            np.zeros_like(params.b),
            np.zeros_like(params.a),
            vcov,
        )


def ssd_vector_step(x: np.ndarray, g: np.ndarray, eps: float):
    """x - eps * ||g||_1 * sign(g), with sign(0) = 0."""
    if np.shape(x) != np.shape(g):
        raise ValueError("x and g shapes differ")
    if eps <= 0.0:
        raise ValueError("eps must be > 0")
    return x - eps * np.sum(np.abs(g)) * np.sign(g)


def ssd_matrix_step(X: np.ndarray, G: np.ndarray, eps: float, mode: SsdSvdMode | None = None) -> np.ndarray:
    """X - eps * (sum of singular values of G) * U V'.

    In randomized mode the factorization is a rank-`target_rank` sketch and
    the leftover G - U diag(s) V', normalized to unit spectral norm, is added
    to the direction (skipped when the residual is numerically zero).
    """
    if np.shape(X) != np.shape(G):
        raise ValueError("X and G shapes differ")
    if eps <= 0.0:
        raise ValueError("eps must be > 0")
    if mode is None or mode.kind == "exact":
        u, s, v = svd(G)
        return X - eps * float(np.sum(s)) * (u @ v.T)
    u, s, v = randomized_svd(G, mode.target_rank, mode.oversample)
    nuc = float(np.sum(s))
    direction = u @ v.T
    residual = G - (u * s) @ v.T
    res_norm = spectral_norm(residual)
    if res_norm >= 1e-12:
        direction = direction + residual / res_norm
    return X - eps * nuc * direction


def sgd_step(x, g, eps: float, velocity=None, rule: str = "sgd", momentum: float = 0.0):
    """One plain or Nesterov SGD step; returns (new_x, new_velocity)."""
    if np.shape(x) != np.shape(g):
        raise ValueError("x and g shapes differ")
    if rule == "sgd":
        return x - eps * g, velocity
    if rule != "nesterov_sgd":
        raise ValueError(f"sgd_step cannot apply rule {rule!r}")
    if velocity is None:
        velocity = np.zeros_like(np.asarray(g, dtype=np.float64))
    velocity = momentum * velocity - eps * g
    return x + velocity, velocity


def project_weight_norm(W: np.ndarray, cap: float) -> np.ndarray:
    """Scale W down so its spectral norm is at most `cap` (no-op inside)."""
    if cap <= 0.0:
        raise ValueError("cap must be > 0")
    top = spectral_norm(W)
    # relative slack makes the projection exactly idempotent in floats
    if top <= cap * (1.0 + 1e-12):
        return W
    return W * (cap / top)


def _vector_block(x, g, policy: BlockPolicy, velocity, iteration, is_matrix=False, svd_mode=None):
    if policy.rule == "frozen":
        return x, velocity
    eps = step_size(policy.step, iteration)
    if policy.rule == "ssd":
        if is_matrix:
            return ssd_matrix_step(x, g, eps, svd_mode), velocity
        return ssd_vector_step(x, g, eps), velocity
    return sgd_step(x, g, eps, velocity, policy.rule, policy.momentum)


def apply_update(
    params: RbmParams,
    grads: GradientSet,
    policy: OptimizerPolicy,
    state: MomentumState,
    iteration: int,
) -> tuple[RbmParams, MomentumState]:
    """Route every parameter block through its configured rule.

    Frozen blocks are untouched; the weight cap (if any) is applied to W
    after its update so the spectral-norm constraint holds entering the next
    iteration. Scalar / diagonal covariance payloads take the vector rules,
    full covariance the matrix rule (resymmetrized after the step).
    """
    W, vW = _vector_block(
        params.W, grads.dW, policy.w, state.vW, iteration, is_matrix=True, svd_mode=policy.svd_mode
    )
    if policy.weight_cap is not None:
        W = project_weight_norm(W, policy.weight_cap)
    b, vb = _vector_block(params.b, grads.db, policy.b, state.vb, iteration)
    a, va = _vector_block(params.a, grads.da, policy.a, state.va, iteration)

    cov = params.cov
    vcov = state.vcov
    if cov is not None and cov.kind != "identity" and policy.cov.rule != "frozen":
        if grads.dcov is None:
            raise ValueError("gradient set carries no covariance block")
        if cov.kind == "isotropic":
            x1, g1 = np.array([cov.payload]), np.array([float(grads.dcov)])
            vel = None if vcov is None else np.array([vcov])
            new, vel = _vector_block(x1, g1, policy.cov, vel, iteration)
            cov = Covariance.isotropic(float(new[0]))
            vcov = None if vel is None else float(vel[0])
        elif cov.kind == "diagonal_log":
            new, vcov = _vector_block(cov.payload, grads.dcov, policy.cov, vcov, iteration)
            cov = Covariance.diagonal_log(new)
        else:  # full
            new, vcov = _vector_block(
                cov.payload, grads.dcov, policy.cov, vcov, iteration,
                is_matrix=True, svd_mode=policy.svd_mode,
            )
            cov = Covariance.full(0.5 * (new + new.T))

    return params.replace(W=W, b=b, a=a, cov=cov), MomentumState(vW, vb, va, vcov)
