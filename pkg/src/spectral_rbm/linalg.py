"""Dense linear-algebra kernel: SVD (exact and randomized), vector norms,
and singular-value (Schatten) norms.

All routines operate on float64 ndarrays and are pure functions. The SVD
wrappers add a deterministic sign convention (largest-magnitude entry of each
left singular vector is positive) so factorizations are reproducible.
"""

from __future__ import annotations

from contextlib import nullcontext
from typing import NamedTuple

import numpy as np

try:
    from threadpoolctl import ThreadpoolController

    _BLAS_CONTROLLER = ThreadpoolController()

    def _single_threaded_lapack():
        # Threaded OpenBLAS is far slower than one thread for the small
        # LAPACK factorizations this module makes (QR / SVD of gradient-sized
        # matrices); the surrounding GEMMs keep their threads.
        return _BLAS_CONTROLLER.limit(limits=1, user_api="blas")

except ImportError:  # pragma: no cover - threadpoolctl is a declared dep

    def _single_threaded_lapack():
        return nullcontext()


class SvdConvergenceError(RuntimeError):
    """Raised when the iterative SVD backend fails to converge."""


class SvdResult(NamedTuple):
    """Thin SVD factors: M = U @ diag(sigma) @ V.T, sigma nonincreasing."""

    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray


def require_vector(x) -> np.ndarray:
    """Coerce to a finite float64 1-d array, or raise ValueError."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size < 1:
        raise ValueError(f"expected a 1-d vector with >= 1 entry, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("vector entries must be finite")
    return x


def require_matrix(m) -> np.ndarray:
    """Coerce to a finite float64 2-d array, or raise ValueError."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"expected a 2-d matrix with >= 1 rows/cols, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix entries must be finite")
    return m


def _fix_signs(u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Resolve the per-column sign ambiguity of the factorization. Columns with
    # all-zero U (zero singular values) are left untouched.
    u = u.copy()
    v = v.copy()
    idx = np.argmax(np.abs(u), axis=0)
    flip = u[idx, np.arange(u.shape[1])] < 0.0
    u[:, flip] *= -1.0
    v[:, flip] *= -1.0
    return u, v


def svd(m) -> SvdResult:
    """Thin SVD with deterministic column signs.

    Returns factors of rank r = min(rows, cols), including any zero singular
    values. Raises SvdConvergenceError (naming the dimensions) if the LAPACK
    iteration does not converge.
    """
    m = require_matrix(m)
    try:
        with _single_threaded_lapack():
            u, s, vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise SvdConvergenceError(
            f"SVD did not converge for {m.shape[0]}x{m.shape[1]} matrix"
        ) from exc
    u, v = _fix_signs(u, vt.T)
    return SvdResult(u, s, v)


# Fixed default seed keeps the randomized factorization (and everything built
# on it, e.g. spectral update steps) reproducible without threading a
# generator through every caller.
_DEFAULT_SKETCH_SEED = 0x52535644


def randomized_svd(
    m,
    target_rank: int,
    oversample: int = 10,
    power_iters: int = 2,
    rng: np.random.Generator | None = None,
) -> SvdResult:
    """Rank-`target_rank` approximate SVD via a Gaussian range finder.

    Sketches the range of `m` with a Gaussian test matrix of width
    target_rank + oversample, refines it with `power_iters` subspace
    iterations (QR-stabilized), then solves the small SVD exactly.
    """
    m = require_matrix(m)
    rows, cols = m.shape
    if target_rank < 1:
        raise ValueError("target_rank must be >= 1")
    if oversample < 0:
        raise ValueError("oversample must be >= 0")
    sketch = target_rank + oversample
    if sketch > min(rows, cols):
        raise ValueError(
            f"target_rank + oversample = {sketch} exceeds min(rows, cols) = {min(rows, cols)}"
        )
    if rng is None:
        rng = np.random.default_rng(_DEFAULT_SKETCH_SEED)
    omega = rng.standard_normal((cols, sketch))
    try:
        with _single_threaded_lapack():
            q, _ = np.linalg.qr(m @ omega)
            for _ in range(power_iters):
                q, _ = np.linalg.qr(m.T @ q)
                q, _ = np.linalg.qr(m @ q)
            b = q.T @ m
            ub, s, vt = np.linalg.svd(b, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise SvdConvergenceError(
            f"SVD did not converge for {rows}x{cols} matrix (randomized sketch)"
        ) from exc
    u = q @ ub
    u, v = _fix_signs(u[:, :target_rank], vt.T[:, :target_rank])
    return SvdResult(u, s[:target_rank].copy(), v)


def vector_norm(x, p) -> float:
    """l_p norm of a vector, p in {1, 2, inf}."""
    x = require_vector(x)
    if p == 1:
        return float(np.sum(np.abs(x)))
    if p == 2:
        return float(np.sqrt(np.sum(x * x)))
    if p == np.inf:
        return float(np.max(np.abs(x)))
    raise ValueError(f"p must be 1, 2, or inf, got {p!r}")


def schatten_norm(m, p) -> float:
    """l_p norm of the singular values of `m`.

    p=1 is the nuclear norm, p=2 the Frobenius norm, p=inf the spectral norm.
    """
    return vector_norm(svd(m).sigma, p)


def spectral_norm(m) -> float:
    """Largest singular value."""
    return schatten_norm(m, np.inf)


def nuclear_norm(m) -> float:
    """Sum of singular values."""
    return schatten_norm(m, 1)
