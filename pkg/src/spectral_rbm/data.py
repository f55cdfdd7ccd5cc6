"""Dataset generation, ingestion, preprocessing, and minibatching.

Two on-disk formats are supported, both rejected outright on any structural
defect (no partially loaded datasets):

  * IDX image tensors (big-endian): 4-byte magic 0x0000.08.NN (unsigned-byte
    payload, NN dimensions), NN big-endian u32 dims, then the raw bytes.
    Pixel values are scaled to [0, 1] by /255 and images are flattened
    row-major.
  * "RBMMAT1" portable matrices: the 8-byte magic line, one ASCII header
    line "N N_v domain" with domain in {binary, unit, real}, then N * N_v
    little-endian float32 values.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .model import RbmParams
from .sampler import ChainState, gibbs_step, make_rng

DOMAINS = ("binary", "unit", "real")

IDX_UBYTE_DTYPE = 0x08
MATRIX_MAGIC = b"RBMMAT1\n"

# Header dims larger than this are treated as nonsense rather than attempted.
MAX_IDX_ELEMENTS = 2**33


class DatasetFormatError(ValueError):
    """A dataset file is malformed."""


class BadMagicError(DatasetFormatError):
    """The file does not start with the expected magic bytes."""


class TruncatedPayloadError(DatasetFormatError):
    """The payload is shorter (or longer) than the header promises."""


class DimensionOverflowError(DatasetFormatError):
    """Header dimensions are out of any plausible range."""


@dataclass(frozen=True)
class Dataset:
    """Dense example matrix with a declared value domain."""

    name: str
    X: np.ndarray  # (N, n_v) float64
    domain: str  # binary | unit | real

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ValueError(f"unknown domain {self.domain!r}")
        x = np.ascontiguousarray(self.X, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ValueError(f"examples must form a nonempty 2-d array, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("dataset values must be finite")
        if self.domain == "binary" and not np.all((x == 0.0) | (x == 1.0)):
            raise ValueError("binary dataset contains values outside {0, 1}")
        if self.domain == "unit" and (np.min(x) < 0.0 or np.max(x) > 1.0):
            raise ValueError("unit dataset contains values outside [0, 1]")
        object.__setattr__(self, "X", x)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def n_v(self) -> int:
        return self.X.shape[1]


def sample_from_model(params: RbmParams, n: int, burn_in: int, rng) -> np.ndarray:
    """Draw n visibles by running n independent Gibbs chains for burn_in steps.

    Chains start at uniform random visible states and the last visible sample
    of each chain is returned.
    """
    rng = make_rng(rng)
    if params.family == "bernoulli":
        v0 = (rng.random((n, params.n_v)) < 0.5).astype(np.float64)
    else:
        v0 = rng.standard_normal((n, params.n_v))
    state = ChainState(v0, np.zeros((n, params.n_h)))
    for _ in range(burn_in):
        state = gibbs_step(params, state, rng)
    return state.v


# Generation is deterministic in its arguments, so repeated calls (e.g. the
# same dataset under several optimizer policies) are served from a small memo.
_SYNTH_CACHE: dict[tuple, tuple["Dataset", "Dataset", RbmParams]] = {}
_SYNTH_CACHE_MAX = 16


def generate_synthetic(
    seed: int,
    n_v: int = 100,
    n_h: int = 25,
    n_train: int = 4000,
    n_test: int = 1000,
    burn_in: int = 1000,
) -> tuple[Dataset, Dataset, RbmParams]:
    """Binary datasets sampled from a random ground-truth model.

    The truth model has Gaussian couplings with variance 0.5 per entry and
    zero biases, and depends only on (seed, n_v, n_h); the examples are drawn
    with independent chains, burn_in Gibbs steps each.
    """
    if n_v < 1 or n_h < 1 or n_train < 1 or n_test < 1:
        raise ValueError("sizes must be >= 1")
    key = (seed, n_v, n_h, n_train, n_test, burn_in)
    hit = _SYNTH_CACHE.get(key)
    if hit is not None:
        return hit
    truth_rng = np.random.default_rng([seed, n_v, n_h, 0x7275])
    W = truth_rng.normal(0.0, np.sqrt(0.5), (n_v, n_h))
    truth = RbmParams("bernoulli", W, np.zeros(n_v), np.zeros(n_h))
    sample_rng = np.random.default_rng([seed, n_v, n_h, n_train, n_test, 0x7361])
    X = sample_from_model(truth, n_train + n_test, burn_in, sample_rng)
    train = Dataset("synthetic-train", X[:n_train], "binary")
    test = Dataset("synthetic-test", X[n_train:], "binary")
    if len(_SYNTH_CACHE) >= _SYNTH_CACHE_MAX:
        _SYNTH_CACHE.pop(next(iter(_SYNTH_CACHE)))
    _SYNTH_CACHE[key] = (train, test, truth)
    return train, test, truth


def load_idx(path) -> Dataset:
    """Parse a big-endian IDX unsigned-byte tensor into a unit-domain dataset."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4:
        raise BadMagicError("file too short for an IDX magic number")
    zero0, zero1, dtype, ndim = blob[0], blob[1], blob[2], blob[3]
    if zero0 != 0 or zero1 != 0 or dtype != IDX_UBYTE_DTYPE:
        raise BadMagicError(
            f"bad IDX magic bytes {blob[:4].hex()}: expected 0000{IDX_UBYTE_DTYPE:02x}NN"
        )
    if ndim < 2:
        raise BadMagicError(f"IDX tensor must have >= 2 dimensions, header says {ndim}")
    header_len = 4 + 4 * ndim
    if len(blob) < header_len:
        raise TruncatedPayloadError("file ends inside the IDX dimension header")
    dims = struct.unpack(f">{ndim}I", blob[4:header_len])
    if any(d == 0 for d in dims):
        raise DimensionOverflowError(f"IDX header contains a zero dimension: {dims}")
    count = 1
    for d in dims:
        count *= d
        if count > MAX_IDX_ELEMENTS:
            raise DimensionOverflowError(f"IDX header dimensions {dims} overflow any plausible size")
    if len(blob) - header_len != count:
        raise TruncatedPayloadError(
            f"IDX payload has {len(blob) - header_len} bytes, header promises {count}"
        )
    raw = np.frombuffer(blob, dtype=np.uint8, offset=header_len)
    X = raw.astype(np.float64).reshape(dims[0], -1) / 255.0
    return Dataset(str(path), X, "unit")


def load_matrix_file(path) -> Dataset:
    """Read an RBMMAT1 portable matrix file."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MATRIX_MAGIC) or blob[: len(MATRIX_MAGIC)] != MATRIX_MAGIC:
        raise BadMagicError("bad RBMMAT1 magic")
    nl = blob.find(b"\n", len(MATRIX_MAGIC), len(MATRIX_MAGIC) + 128)
    if nl < 0:
        raise DatasetFormatError("RBMMAT1 header line missing or overlong")
    header = blob[len(MATRIX_MAGIC) : nl]
    parts = header.split()
    if len(parts) != 3:
        raise DatasetFormatError(f"RBMMAT1 header must be 'N N_v domain', got {header!r}")
    try:
        n, n_v = int(parts[0]), int(parts[1])
    except ValueError as exc:
        raise DatasetFormatError(f"RBMMAT1 header counts not integers: {header!r}") from exc
    domain = parts[2].decode("ascii", errors="replace")
    if domain not in DOMAINS:
        raise DatasetFormatError(f"RBMMAT1 domain must be one of {DOMAINS}, got {domain!r}")
    if n < 1 or n_v < 1 or n * n_v > MAX_IDX_ELEMENTS:
        raise DimensionOverflowError(f"RBMMAT1 header sizes out of range: N={n}, N_v={n_v}")
    payload = blob[nl + 1 :]
    if len(payload) != 4 * n * n_v:
        raise TruncatedPayloadError(
            f"RBMMAT1 payload has {len(payload)} bytes, header promises {4 * n * n_v}"
        )
    vals = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(n, n_v)
    try:
        return Dataset(str(path), vals, domain)
    except ValueError as exc:
        raise DatasetFormatError(f"RBMMAT1 payload violates domain {domain!r}: {exc}") from exc


def save_matrix_file(path, dataset: Dataset) -> None:
    """Write an RBMMAT1 portable matrix file."""
    header = f"{dataset.n} {dataset.n_v} {dataset.domain}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC + header)
        fh.write(np.ascontiguousarray(dataset.X, dtype="<f4").tobytes())


def binarize(ds: Dataset, mode: str = "threshold", threshold: float = 0.5, seed: int = 0) -> Dataset:
    """Map a unit-domain dataset to binary, by threshold or per-pixel draw."""
    if ds.domain != "unit":
        raise ValueError(f"binarize expects a unit-domain dataset, got {ds.domain!r}")
    if mode == "threshold":
        X = (ds.X >= threshold).astype(np.float64)
    elif mode == "stochastic":
        rng = make_rng(seed)
        X = (rng.random(ds.X.shape) < ds.X).astype(np.float64)
    else:
        raise ValueError(f"unknown binarize mode {mode!r}")
    return Dataset(ds.name, X, "binary")


def minibatches(ds: Dataset, batch_size: int, seed: int, epoch: int):
    """Yield batches covering the dataset once, in a (seed, epoch) order.

    The final batch may be short. The permutation depends only on the seed
    and the epoch index.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    perm = np.random.default_rng([seed, epoch, 0x6D62]).permutation(ds.n)
    for start in range(0, ds.n, batch_size):
        yield ds.X[perm[start : start + batch_size]]
