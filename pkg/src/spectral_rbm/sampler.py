"""Block Gibbs sampling: hidden/visible updates, k-step contrastive chains
started at the data, and persistent chains.

All chains in a batch are advanced together with vectorized draws from a
single generator, so a fixed seed reproduces every sample bit for bit.
`spawn_streams` provides independent per-chain substreams for callers that
want to distribute chains instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import RbmParams, hidden_probs, validate_batch, visible_mean


@dataclass
class ChainState:
    """Current visible and (binary) hidden configuration of B chains."""

    v: np.ndarray  # (B, n_v)
    h: np.ndarray  # (B, n_h), binary


@dataclass(frozen=True)
class PhaseStats:
    """Sufficient statistics of one phase: visibles and hidden-unit means."""

    v: np.ndarray  # (B, n_v)
    h: np.ndarray  # (B, n_h), probabilities


def make_rng(seed) -> np.random.Generator:
    """Seed or pass through a generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def spawn_streams(seed, n: int) -> list[np.random.Generator]:
    """n independent substreams derived from one seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def sample_hidden(params: RbmParams, v, rng: np.random.Generator) -> np.ndarray:
    """Draw binary hidden units from p(h | v); batched over leading axes."""
    p = hidden_probs(params, v)
    return (rng.random(p.shape) < p).astype(np.float64)


def sample_visible(params: RbmParams, h, rng: np.random.Generator) -> np.ndarray:
    """Draw visibles from p(v | h): Bernoulli probs or Gaussian mean + noise."""
    mean = visible_mean(params, h)
    if params.family == "bernoulli":
        return (rng.random(mean.shape) < mean).astype(np.float64)
    return mean + params.cov.sample_noise(rng, mean.shape)


def gibbs_step(params: RbmParams, state: ChainState, rng: np.random.Generator) -> ChainState:
    """One full block update h' ~ p(h|v), v' ~ p(v|h'); input state untouched."""
    h = sample_hidden(params, state.v, rng)
    v = sample_visible(params, h, rng)
    return ChainState(v, h)


def cd_k(params: RbmParams, batch, k: int, rng) -> tuple[PhaseStats, PhaseStats]:
    """k-step contrastive chains started at the data.

    Returns (positive, negative) phase statistics. Hidden statistics are the
    unit means (probabilities) at each phase; the chain itself propagates
    sampled bits, and the negative visibles are the sampled values.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = make_rng(rng)
    x = validate_batch(params, batch)
    positive = PhaseStats(x, hidden_probs(params, x))
    v = x
    for _ in range(k):
        h = sample_hidden(params, v, rng)
        v = sample_visible(params, h, rng)
    return positive, PhaseStats(v, hidden_probs(params, v))


def pcd(params: RbmParams, state: ChainState, k: int, rng) -> tuple[ChainState, PhaseStats]:
    """Advance persistent chains k steps from their previous state.

    Returns the new state plus negative-phase statistics taken at the final
    visibles. Chains are never reset to the data.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if state.v.shape[1] != params.n_v or state.h.shape[1] != params.n_h:
        raise ValueError("persistent state does not match model dimensions")
    rng = make_rng(rng)
    v = state.v
    h = state.h
    for _ in range(k):
        h = sample_hidden(params, v, rng)
        v = sample_visible(params, h, rng)
    return ChainState(v, h), PhaseStats(v, hidden_probs(params, v))


def init_pcd_state(params: RbmParams, batch, rng) -> ChainState:
    """Persistent chains seeded by one sampled reconstruction of a batch."""
    rng = make_rng(rng)
    x = validate_batch(params, batch)
    h = sample_hidden(params, x, rng)
    v = sample_visible(params, h, rng)
    return ChainState(v, h)
