"""Two-layer energy models with binary hidden units and Bernoulli or Gaussian
visible units.

Parameters are a coupling matrix W (n_v x n_h), visible bias b, hidden bias a,
and, for the Gaussian family, a representation of the inverse covariance of
the visible units. A joint state (v, h) is scored by an energy

    Bernoulli:  E(v, h) = -v'Wh - v'b - h'a
    Gaussian:   E(v, h) = -v'C^-1 Wh + (v-b)'C^-1(v-b)/2 - h'a

and the unnormalized joint density is exp(-E). The averaged negative
log-likelihood of a dataset splits into a data-independent log-partition term
plus a data term; this module provides both, the closed-form conditionals,
exact enumeration oracles usable at small scale, a reconstruction-error
metric, and a bit-exact binary checkpoint format.
"""

from __future__ import annotations

import dataclasses
import struct
from dataclasses import dataclass

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))

# Enumeration caps for the exact oracles: 2^n_h terms for the Gaussian family,
# and for the Bernoulli family the smaller layer is enumerated while the other
# is summed analytically.
MAX_HIDDEN_ENUM = 20
MAX_JOINT_ENUM = 24

COVARIANCE_KINDS = ("identity", "isotropic", "diagonal_log", "full")


class OracleScaleError(ValueError):
    """Model too large for exact enumeration ("oracle scale" exceeded)."""


class CheckpointError(ValueError):
    """Checkpoint file is malformed or inconsistent."""


def sigmoid(x):
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))  # never overflows
    return np.where(x >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


def softplus(x):
    """log(1 + exp(x)) computed as max(x, 0) + log1p(exp(-|x|))."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def logsumexp(x, axis=None):
    """log(sum(exp(x))) with the max factored out."""
    x = np.asarray(x, dtype=np.float64)
    if axis is None:
        m = float(np.max(x))
        return m + float(np.log(np.sum(np.exp(x - m))))
    m = np.max(x, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def all_binary_states(n: int) -> np.ndarray:
    """All 2^n binary vectors of length n, row i = bits of i (LSB first)."""
    if n < 0:
        raise ValueError("n must be >= 0")
    ints = np.arange(2**n, dtype=np.int64)
    return ((ints[:, None] >> np.arange(n)) & 1).astype(np.float64)


@dataclass(frozen=True)
class Covariance:
    """Inverse-covariance representation for Gaussian visible units.

    kind / payload:
      identity      no payload; C^-1 = I
      isotropic     scalar precision c > 0; C^-1 = c I
      diagonal_log  per-unit log-precision vector; C^-1 = diag(exp(payload))
      full          symmetric positive-definite matrix; C^-1 = payload

    The diagonal kind stores log-precisions, so positivity survives arbitrary
    additive updates; the isotropic scalar must stay positive itself.
    """

    kind: str
    payload: float | np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in COVARIANCE_KINDS:
            raise ValueError(f"unknown covariance kind {self.kind!r}")
        if self.kind == "identity":
            if self.payload is not None:
                raise ValueError("identity covariance carries no payload")
        elif self.kind == "isotropic":
            c = float(self.payload)
            if not np.isfinite(c) or c <= 0.0:
                raise ValueError("isotropic precision must be finite and > 0")
            object.__setattr__(self, "payload", c)
        elif self.kind == "diagonal_log":
            p = np.asarray(self.payload, dtype=np.float64)
            if p.ndim != 1 or p.size < 1 or not np.all(np.isfinite(p)):
                raise ValueError("diagonal_log payload must be a finite 1-d vector")
            object.__setattr__(self, "payload", p.copy())
        else:  # full
            p = np.asarray(self.payload, dtype=np.float64)
            if p.ndim != 2 or p.shape[0] != p.shape[1] or not np.all(np.isfinite(p)):
                raise ValueError("full payload must be a finite square matrix")
            if np.max(np.abs(p - p.T)) > 1e-12 * max(1.0, np.max(np.abs(p))):
                raise ValueError("full inverse covariance must be symmetric (tol 1e-12)")
            if np.min(np.linalg.eigvalsh(p)) <= 0.0:
                raise ValueError("full inverse covariance must be positive definite")
            object.__setattr__(self, "payload", p.copy())

    @classmethod
    def identity(cls) -> "Covariance":
        return cls("identity")

    @classmethod
    def isotropic(cls, precision: float) -> "Covariance":
        return cls("isotropic", float(precision))

    @classmethod
    def diagonal_log(cls, log_precision) -> "Covariance":
        return cls("diagonal_log", np.asarray(log_precision, dtype=np.float64))

    @classmethod
    def full(cls, precision_matrix) -> "Covariance":
        return cls("full", np.asarray(precision_matrix, dtype=np.float64))

    def check_dim(self, n_v: int) -> None:
        if self.kind == "diagonal_log" and self.payload.shape != (n_v,):
            raise ValueError(f"diagonal_log payload has dim {self.payload.shape[0]}, expected {n_v}")
        if self.kind == "full" and self.payload.shape != (n_v, n_v):
            raise ValueError(f"full payload has shape {self.payload.shape}, expected ({n_v}, {n_v})")

    def apply_precision(self, x: np.ndarray) -> np.ndarray:
        """C^-1 applied along the last axis of x."""
        if self.kind == "identity":
            return np.asarray(x, dtype=np.float64)
        if self.kind == "isotropic":
            return self.payload * x
        if self.kind == "diagonal_log":
            return np.exp(self.payload) * x
        return x @ self.payload  # symmetric, so x C^-1 == (C^-1 x')'

    def quad_form(self, d: np.ndarray) -> np.ndarray:
        """d'C^-1 d along the last axis."""
        return np.sum(d * self.apply_precision(d), axis=-1)

    def precision_matrix(self, n_v: int) -> np.ndarray:
        """Dense C^-1."""
        if self.kind == "identity":
            return np.eye(n_v)
        if self.kind == "isotropic":
            return self.payload * np.eye(n_v)
        if self.kind == "diagonal_log":
            return np.diag(np.exp(self.payload))
        return self.payload.copy()

    def covariance_matrix(self, n_v: int) -> np.ndarray:
        """Dense C."""
        if self.kind == "full":
            return np.linalg.inv(self.payload)
        if self.kind == "identity":
            return np.eye(n_v)
        if self.kind == "isotropic":
            return np.eye(n_v) / self.payload
        return np.diag(np.exp(-self.payload))

    def covariance_diag(self, n_v: int) -> np.ndarray:
        """diag(C)."""
        if self.kind == "full":
            return np.diag(np.linalg.inv(self.payload)).copy()
        if self.kind == "identity":
            return np.ones(n_v)
        if self.kind == "isotropic":
            return np.full(n_v, 1.0 / self.payload)
        return np.exp(-self.payload)

    def logdet_cov(self, n_v: int) -> float:
        """log|C| = -log|C^-1|."""
        if self.kind == "identity":
            return 0.0
        if self.kind == "isotropic":
            return -n_v * float(np.log(self.payload))
        if self.kind == "diagonal_log":
            return -float(np.sum(self.payload))
        sign, ld = np.linalg.slogdet(self.payload)
        if sign <= 0:
            raise ValueError("full inverse covariance lost positive definiteness")
        return -float(ld)

    def cov_eig_range(self, n_v: int) -> tuple[float, float]:
        """(min, max) eigenvalue of C."""
        if self.kind == "identity":
            return 1.0, 1.0
        if self.kind == "isotropic":
            return 1.0 / self.payload, 1.0 / self.payload
        if self.kind == "diagonal_log":
            var = np.exp(-self.payload)
            return float(np.min(var)), float(np.max(var))
        eig = np.linalg.eigvalsh(self.payload)
        return 1.0 / float(np.max(eig)), 1.0 / float(np.min(eig))

    def sample_noise(self, rng: np.random.Generator, shape: tuple) -> np.ndarray:
        """Draw noise with covariance C; last axis is the visible dimension."""
        z = rng.standard_normal(shape)
        if self.kind == "identity":
            return z
        if self.kind == "isotropic":
            return z / np.sqrt(self.payload)
        if self.kind == "diagonal_log":
            return z * np.exp(-0.5 * self.payload)
        # full: C = (L L')^-1 with L = chol(C^-1), so L^-T z has covariance C
        try:
            chol = np.linalg.cholesky(self.payload)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(
                "Cholesky factorization of the inverse covariance failed (not SPD)"
            ) from exc
        flat = z.reshape(-1, shape[-1])
        out = np.linalg.solve(chol.T, flat.T).T
        return out.reshape(shape)

    def payload_shape(self, n_v: int):
        """Shape of the learnable payload: None, (), (n_v,), or (n_v, n_v)."""
        if self.kind == "identity":
            return None
        if self.kind == "isotropic":
            return ()
        if self.kind == "diagonal_log":
            return (n_v,)
        return (n_v, n_v)


@dataclass(frozen=True)
class RbmParams:
    """Immutable parameter set; updates construct new instances."""

    family: str  # "bernoulli" | "gaussian"
    W: np.ndarray
    b: np.ndarray
    a: np.ndarray
    cov: Covariance | None = None

    def __post_init__(self):
        if self.family not in ("bernoulli", "gaussian"):
            raise ValueError(f"unknown family {self.family!r}")
        W = np.ascontiguousarray(self.W, dtype=np.float64)
        b = np.ascontiguousarray(self.b, dtype=np.float64)
        a = np.ascontiguousarray(self.a, dtype=np.float64)
        if W.ndim != 2 or b.ndim != 1 or a.ndim != 1:
            raise ValueError("W must be a matrix; b, a must be vectors")
        n_v, n_h = W.shape
        if n_v < 1 or n_h < 1:
            raise ValueError("layer sizes must be >= 1")
        if b.shape != (n_v,) or a.shape != (n_h,):
            raise ValueError(
                f"bias shapes {b.shape}, {a.shape} do not match W {W.shape}"
            )
        for arr in (W, b, a):
            if not np.all(np.isfinite(arr)):
                raise ValueError("parameters must be finite")
        if self.family == "bernoulli":
            if self.cov is not None:
                raise ValueError("bernoulli family carries no covariance")
        else:
            if self.cov is None:
                raise ValueError("gaussian family requires a covariance")
            self.cov.check_dim(n_v)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "a", a)

    @property
    def n_v(self) -> int:
        return self.W.shape[0]

    @property
    def n_h(self) -> int:
        return self.W.shape[1]

    def replace(self, **kwargs) -> "RbmParams":
        return dataclasses.replace(self, **kwargs)


def _require_binary(x: np.ndarray, what: str) -> None:
    if not np.all((x == 0.0) | (x == 1.0)):
        raise ValueError(f"{what} must be binary (0/1)")


def validate_batch(params: RbmParams, batch) -> np.ndarray:
    """Coerce a batch to (B, n_v) float64 and check family constraints."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"batch must be 2-d with >= 1 rows, got shape {x.shape}")
    if x.shape[1] != params.n_v:
        raise ValueError(f"batch has {x.shape[1]} columns, model expects {params.n_v}")
    if not np.all(np.isfinite(x)):
        raise ValueError("batch entries must be finite")
    if params.family == "bernoulli":
        _require_binary(x, "bernoulli visible data")
    return x


def energy(params: RbmParams, v, h) -> float:
    """Energy of a single joint state."""
    v = np.asarray(v, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if v.shape != (params.n_v,) or h.shape != (params.n_h,):
        raise ValueError(
            f"state shapes {v.shape}, {h.shape} do not match model ({params.n_v}, {params.n_h})"
        )
    _require_binary(h, "hidden state")
    if params.family == "bernoulli":
        _require_binary(v, "bernoulli visible state")
        return float(-v @ params.W @ h - v @ params.b - h @ params.a)
    wh = params.W @ h
    d = v - params.b
    return float(
        -v @ params.cov.apply_precision(wh)
        + 0.5 * float(params.cov.quad_form(d))
        - h @ params.a
    )


def hidden_preactivation(params: RbmParams, v: np.ndarray) -> np.ndarray:
    """Input to the hidden sigmoid: W'v + a, with C^-1 folded in for Gaussians."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != params.n_v:
        raise ValueError(f"visible dim {v.shape[-1]} does not match model {params.n_v}")
    if params.family == "gaussian":
        v = params.cov.apply_precision(v)
    return v @ params.W + params.a


def hidden_probs(params: RbmParams, v) -> np.ndarray:
    """p(h_k = 1 | v) for each hidden unit; batched over leading axes."""
    return sigmoid(hidden_preactivation(params, v))


def visible_mean(params: RbmParams, h) -> np.ndarray:
    """Mean of p(v | h): sigmoid(Wh + b) or b + Wh; batched over leading axes."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != params.n_h:
        raise ValueError(f"hidden dim {h.shape[-1]} does not match model {params.n_h}")
    act = h @ params.W.T + params.b
    if params.family == "bernoulli":
        return sigmoid(act)
    return act


def visible_conditional(params: RbmParams, h):
    """Conditional of the visible layer given h.

    Bernoulli: the vector of unit probabilities. Gaussian: (mean, Covariance).
    """
    h = np.asarray(h, dtype=np.float64)
    _require_binary(h, "hidden state")
    mean = visible_mean(params, h)
    if params.family == "bernoulli":
        return mean
    return mean, params.cov


def neg_data_term(params: RbmParams, batch) -> float:
    """Averaged negative unnormalized log-likelihood of the batch.

    This is the data-dependent half of the loss; the hidden layer is summed
    out analytically, leaving one softplus per hidden unit.
    """
    x = validate_batch(params, batch)
    act = hidden_preactivation(params, x)
    free = softplus(act).sum(axis=1)
    if params.family == "bernoulli":
        return float(np.mean(-(x @ params.b) - free))
    d = x - params.b
    return float(np.mean(0.5 * params.cov.quad_form(d) - free))


def check_oracle_scale(params: RbmParams) -> None:
    """Raise OracleScaleError if exact enumeration would be too large."""
    if params.family == "gaussian":
        if params.n_h > MAX_HIDDEN_ENUM:
            raise OracleScaleError(
                f"exact oracle needs n_h <= {MAX_HIDDEN_ENUM} for gaussian models, got {params.n_h}"
            )
    else:
        if params.n_v + params.n_h > MAX_JOINT_ENUM:
            raise OracleScaleError(
                f"exact oracle needs n_v + n_h <= {MAX_JOINT_ENUM} for bernoulli models, "
                f"got {params.n_v + params.n_h}"
            )


def _gaussian_state_exponents(params: RbmParams) -> tuple[np.ndarray, np.ndarray]:
    """Per-hidden-configuration log weights of the integrated-out density.

    Returns (H, t) with H the 2^n_h binary configurations and
    t_i = h_i'a + b'C^-1 Wh_i + (Wh_i)'C^-1 Wh_i / 2, so that
    log Z = lse(t) + (n_v/2) log 2pi + log|C|/2.
    """
    H = all_binary_states(params.n_h)
    U = H @ params.W.T  # rows: W h_i
    PU = params.cov.apply_precision(U)
    t = H @ params.a + PU @ params.b + 0.5 * np.sum(U * PU, axis=1)
    return H, t


def exact_log_partition(params: RbmParams) -> float:
    """log Z by exact enumeration (log-space); subject to the oracle caps.

    Gaussian models integrate the visible layer analytically, so only the
    2^n_h hidden configurations are enumerated. Bernoulli models enumerate
    whichever layer is smaller and sum the other in closed form.
    """
    check_oracle_scale(params)
    if params.family == "gaussian":
        _, t = _gaussian_state_exponents(params)
        return (
            logsumexp(t)
            + 0.5 * params.n_v * LOG_2PI
            + 0.5 * params.cov.logdet_cov(params.n_v)
        )
    if params.n_h <= params.n_v:
        H = all_binary_states(params.n_h)
        t = H @ params.a + softplus(H @ params.W.T + params.b).sum(axis=1)
    else:
        V = all_binary_states(params.n_v)
        t = V @ params.b + softplus(V @ params.W + params.a).sum(axis=1)
    return logsumexp(t)


def exact_loss(params: RbmParams, batch) -> float:
    """Exact averaged negative log-likelihood: log-partition + data term."""
    return exact_log_partition(params) + neg_data_term(params, batch)


def reconstruction_sse(params: RbmParams, batch, rng) -> float:
    """Mean squared reconstruction error of one stochastic up-down pass.

    Hidden units are sampled from p(h|v); the reconstruction is the mean of
    p(v|h). Returns the batch average of ||v - vhat||^2.
    """
    x = validate_batch(params, batch)
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    p = hidden_probs(params, x)
    h = (rng.random(p.shape) < p).astype(np.float64)
    vhat = visible_mean(params, h)
    return float(np.mean(np.sum((x - vhat) ** 2, axis=1)))


# --- checkpoint format -----------------------------------------------------
#
# magic "RBMCKPT1" | family u8 (0 bernoulli, 1 gaussian) | cov kind u8 (0..3)
# | n_v u32le | n_h u32le | then little-endian f64: W row-major, b, a,
# covariance payload (nothing / 1 / n_v / n_v*n_v values).

CHECKPOINT_MAGIC = b"RBMCKPT1"
_FAMILY_CODES = {"bernoulli": 0, "gaussian": 1}
_KIND_CODES = {"identity": 0, "isotropic": 1, "diagonal_log": 2, "full": 3}
_FAMILY_NAMES = {v: k for k, v in _FAMILY_CODES.items()}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


def _cov_payload_array(params: RbmParams) -> np.ndarray:
    if params.family == "bernoulli" or params.cov.kind == "identity":
        return np.empty(0, dtype=np.float64)
    if params.cov.kind == "isotropic":
        return np.array([params.cov.payload], dtype=np.float64)
    return np.asarray(params.cov.payload, dtype=np.float64).reshape(-1)


def save_checkpoint(params: RbmParams, path) -> None:
    """Write the bit-exact binary checkpoint."""
    kind = 0 if params.family == "bernoulli" else _KIND_CODES[params.cov.kind]
    head = (
        CHECKPOINT_MAGIC
        + bytes([_FAMILY_CODES[params.family], kind])
        + struct.pack("<II", params.n_v, params.n_h)
    )
    body = b"".join(
        np.ascontiguousarray(arr, dtype="<f8").tobytes()
        for arr in (params.W, params.b, params.a, _cov_payload_array(params))
    )
    with open(path, "wb") as fh:
        fh.write(head + body)


def load_checkpoint(path) -> RbmParams:
    """Read a checkpoint written by save_checkpoint; strict about size."""
    with open(path, "rb") as fh:
        blob = fh.read()
    head_len = len(CHECKPOINT_MAGIC) + 2 + 8
    if len(blob) < head_len:
        raise CheckpointError("checkpoint truncated before header end")
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad checkpoint magic")
    fam_code = blob[len(CHECKPOINT_MAGIC)]
    kind_code = blob[len(CHECKPOINT_MAGIC) + 1]
    if fam_code not in _FAMILY_NAMES:
        raise CheckpointError(f"unknown family code {fam_code}")
    if kind_code not in _KIND_NAMES:
        raise CheckpointError(f"unknown covariance kind code {kind_code}")
    n_v, n_h = struct.unpack("<II", blob[len(CHECKPOINT_MAGIC) + 2 : head_len])
    if n_v < 1 or n_h < 1:
        raise CheckpointError(f"invalid dimensions n_v={n_v}, n_h={n_h}")
    family = _FAMILY_NAMES[fam_code]
    kind = _KIND_NAMES[kind_code]
    if family == "bernoulli":
        if kind_code != 0:
            raise CheckpointError("bernoulli checkpoint must have covariance kind 0")
        payload_count = 0
    else:
        payload_count = {"identity": 0, "isotropic": 1, "diagonal_log": n_v, "full": n_v * n_v}[kind]
    count = n_v * n_h + n_v + n_h + payload_count
    expected = head_len + 8 * count
    if len(blob) != expected:
        raise CheckpointError(
            f"checkpoint payload size mismatch: expected {expected} bytes, got {len(blob)}"
        )
    vals = np.frombuffer(blob, dtype="<f8", offset=head_len).astype(np.float64)
    W = vals[: n_v * n_h].reshape(n_v, n_h)
    b = vals[n_v * n_h : n_v * n_h + n_v]
    a = vals[n_v * n_h + n_v : n_v * n_h + n_v + n_h]
    rest = vals[n_v * n_h + n_v + n_h :]
    try:
        if family == "bernoulli":
            return RbmParams("bernoulli", W, b, a)
        if kind == "identity":
            cov = Covariance.identity()
        elif kind == "isotropic":
            cov = Covariance.isotropic(rest[0])
        elif kind == "diagonal_log":
            cov = Covariance.diagonal_log(rest)
        else:
            cov = Covariance.full(rest.reshape(n_v, n_v))
        return RbmParams("gaussian", W, b, a, cov)
    except ValueError as exc:
        raise CheckpointError(f"checkpoint contents invalid: {exc}") from exc
