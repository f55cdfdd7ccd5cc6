"""Experiment runner: the training loop, evaluation, and wall-clock benchmarks.

Metrics go to an append-only CSV (one flushed row per eval interval) with the
exact header

    iter,epoch,wallclock_ms,train_recon_sse,test_recon_sse,grad_w_nuclear,step_size

and the final parameters to a binary checkpoint. Runs are reproducible from
(config, seed); deterministic mode additionally zeroes the wallclock column
so two identical runs produce byte-identical files.
"""

from __future__ import annotations

import time
from contextlib import nullcontext
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover - threadpoolctl is a declared dep
    threadpool_limits = None


def _deterministic_threads(enabled: bool):
    """Single-threaded BLAS for bit-exact runs."""
    if enabled and threadpool_limits is not None:
        return threadpool_limits(limits=1, user_api="blas")
    return nullcontext()

from . import data as data_mod
from .config import RunConfig, build_policy
from .gradient import estimate_gradients
from .linalg import nuclear_norm
from .model import (
    RbmParams,
    Covariance,
    hidden_probs,
    load_checkpoint,
    reconstruction_sse,
    save_checkpoint,
)
from .optimizer import MomentumState, apply_update, step_size
from .sampler import PhaseStats, cd_k, init_pcd_state, make_rng, pcd

METRICS_HEADER = "iter,epoch,wallclock_ms,train_recon_sse,test_recon_sse,grad_w_nuclear,step_size"


class DataError(ValueError):
    """Dataset could not be loaded or does not fit the model."""


@dataclass
class MetricsRecord:
    iteration: int
    epoch: int
    wallclock_ms: int
    train_recon_sse: float
    test_recon_sse: float
    grad_w_nuclear: float
    step_size_used: float

    def csv_row(self) -> str:
        return (
            f"{self.iteration},{self.epoch},{self.wallclock_ms},"
            f"{self.train_recon_sse!r},{self.test_recon_sse!r},"
            f"{self.grad_w_nuclear!r},{self.step_size_used!r}"
        )


@dataclass
class TrainResult:
    params: RbmParams
    metrics: list[MetricsRecord]
    metrics_path: Path
    checkpoint_path: Path


def eval_seed(seed: int, iteration: int) -> list:
    """Seed of the reconstruction draw at a given eval point."""
    return [seed, iteration, 0x6576]


def load_datasets(cfg: RunConfig) -> tuple[data_mod.Dataset, data_mod.Dataset | None]:
    """Resolve the config's data section to (train, test-or-None)."""
    try:
        if cfg.data == "synthetic":
            train, test, _ = data_mod.generate_synthetic(
                cfg.seed,
                cfg.synthetic_visible,
                cfg.synthetic_hidden,
                cfg.synthetic_train,
                cfg.synthetic_test,
                cfg.synthetic_burn_in,
            )
        else:
            loader = data_mod.load_idx if cfg.data == "idx" else data_mod.load_matrix_file
            train = loader(cfg.train_path)
            test = loader(cfg.test_path) if cfg.test_path else None
    except (data_mod.DatasetFormatError, OSError) as exc:
        raise DataError(str(exc)) from exc
    if cfg.binarize != "none":
        try:
            train = data_mod.binarize(train, cfg.binarize, cfg.binarize_threshold, cfg.seed)
            if test is not None:
                test = data_mod.binarize(test, cfg.binarize, cfg.binarize_threshold, cfg.seed + 1)
        except ValueError as exc:
            raise DataError(str(exc)) from exc
    if cfg.family == "bernoulli":
        for ds in filter(None, (train, test)):
            if ds.domain != "binary":
                raise DataError(
                    f"bernoulli training needs binary data; {ds.name!r} has domain {ds.domain!r} "
                    "(set binarize=threshold or binarize=stochastic)"
                )
    return train, test


def init_params(cfg: RunConfig, n_v: int) -> RbmParams:
    """Fresh parameters, or the configured checkpoint when one is given."""
    if cfg.init_checkpoint:
        params = load_checkpoint(cfg.init_checkpoint)
        if params.n_v != n_v:
            raise DataError(
                f"checkpoint has n_v={params.n_v}, dataset has n_v={n_v}"
            )
        return params
    rng = np.random.default_rng([cfg.seed, 0x696E])
    W = 0.01 * rng.standard_normal((n_v, cfg.n_hidden))
    b = np.zeros(n_v)
    a = np.zeros(cfg.n_hidden)
    if cfg.family == "bernoulli":
        return RbmParams("bernoulli", W, b, a)
    if cfg.covariance == "identity":
        cov = Covariance.identity()
    elif cfg.covariance == "isotropic":
        cov = Covariance.isotropic(1.0)
    elif cfg.covariance == "diagonal_log":
        cov = Covariance.diagonal_log(np.zeros(n_v))
    else:
        cov = Covariance.full(np.eye(n_v))
    return RbmParams("gaussian", W, b, a, cov)


class _MetricsWriter:
    def __init__(self, path: Path):
        self.path = path
        self.fh = open(path, "w", encoding="utf-8")
        self.fh.write(METRICS_HEADER + "\n")
        self.fh.flush()

    def write(self, rec: MetricsRecord) -> None:
        self.fh.write(rec.csv_row() + "\n")
        self.fh.flush()

    def close(self) -> None:
        self.fh.close()


def _measure(
    cfg: RunConfig,
    params: RbmParams,
    train_x: np.ndarray,
    test_x: np.ndarray | None,
    iteration: int,
    t0: float,
    grad_nuc: float,
    step: float,
) -> MetricsRecord:
    wall = 0 if cfg.deterministic else int((time.perf_counter() - t0) * 1000.0)
    train_sse = reconstruction_sse(params, train_x, np.random.default_rng(eval_seed(cfg.seed, iteration)))
    if test_x is None:
        test_sse = float("nan")
    else:
        test_sse = reconstruction_sse(
            params, test_x, np.random.default_rng(eval_seed(cfg.seed + 1, iteration))
        )
    epoch = iteration * cfg.batch_size // train_x.shape[0]
    return MetricsRecord(iteration, epoch, wall, train_sse, test_sse, grad_nuc, step)


def train(cfg: RunConfig, out_dir=None) -> TrainResult:
    """Run the training loop; writes metrics.csv and final.ckpt to out_dir.

    Deterministic mode pins BLAS to one thread and zeroes the wallclock
    column, so identical (config, seed) runs produce byte-identical outputs.
    """
    with _deterministic_threads(cfg.deterministic):
        return _train_inner(cfg, out_dir)


def _train_inner(cfg: RunConfig, out_dir=None) -> TrainResult:
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_ds, test_ds = load_datasets(cfg)
    params = init_params(cfg, train_ds.n_v)
    policy = build_policy(cfg)
    state = MomentumState.zeros(params)
    rng = make_rng([cfg.seed, 0x7472])
    persistent = None

    writer = _MetricsWriter(out / "metrics.csv")
    metrics: list[MetricsRecord] = []
    t0 = time.perf_counter()
    grad_nuc = 0.0
    last_step = 0.0

    def emit(iteration: int) -> None:
        rec = _measure(cfg, params, train_ds.X, None if test_ds is None else test_ds.X,
                       iteration, t0, grad_nuc, last_step)
        metrics.append(rec)
        writer.write(rec)

    try:
        emit(0)
        batches = None
        epoch = 0
        for it in range(1, cfg.iterations + 1):
            if batches is None:
                batches = data_mod.minibatches(train_ds, cfg.batch_size, cfg.seed, epoch)
            batch = next(batches, None)
            if batch is None:
                epoch += 1
                batches = data_mod.minibatches(train_ds, cfg.batch_size, cfg.seed, epoch)
                batch = next(batches)
            if cfg.cd_mode == "pcd":
                if persistent is None:
                    persistent = init_pcd_state(params, batch, rng)
                positive = PhaseStats(batch, hidden_probs(params, batch))
                persistent, negative = pcd(params, persistent, cfg.cd_k, rng)
            else:
                positive, negative = cd_k(params, batch, cfg.cd_k, rng)
            grads = estimate_gradients(params, positive, negative)
            last_step = step_size(policy.w.step, it - 1)
            params, state = apply_update(params, grads, policy, state, it - 1)
            if it % cfg.eval_interval == 0 or it == cfg.iterations:
                grad_nuc = nuclear_norm(grads.dW)
                emit(it)
    finally:
        writer.close()

    ckpt = out / "final.ckpt"
    save_checkpoint(params, ckpt)
    return TrainResult(params, metrics, writer.path, ckpt)


def evaluate(checkpoint_path, cfg: RunConfig, seed: int | None = None) -> MetricsRecord:
    """Reconstruction error of a checkpoint over the config's full datasets."""
    params = load_checkpoint(checkpoint_path)
    train_ds, test_ds = load_datasets(cfg)
    if params.n_v != train_ds.n_v:
        raise DataError(
            f"checkpoint has n_v={params.n_v}, dataset has n_v={train_ds.n_v}"
        )
    base = cfg.seed if seed is None else seed
    train_sse = reconstruction_sse(params, train_ds.X, np.random.default_rng(eval_seed(base, 0)))
    test_sse = (
        float("nan")
        if test_ds is None
        else reconstruction_sse(params, test_ds.X, np.random.default_rng(eval_seed(base + 1, 0)))
    )
    return MetricsRecord(0, 0, 0, train_sse, test_sse, 0.0, 0.0)


def policy_label(cfg: RunConfig) -> str:
    """Short name of the configured optimizer for benchmark rows."""
    rules = {blk: getattr(cfg, f"rule_{blk}") for blk in ("w", "b", "a", "cov")}
    active = {r for blk, r in rules.items() if r != "frozen" and not (blk == "cov" and cfg.family == "bernoulli")}
    if len(active) == 1:
        return active.pop()
    return "hybrid:" + ",".join(f"{blk}={rules[blk]}" for blk in ("w", "b", "a", "cov"))


def bench(cfg: RunConfig, iters: int) -> tuple[str, str, float]:
    """Time the training loop; returns (optimizer, family, ms per 1k iters).

    Runs the full minibatch -> chain -> gradient -> update cycle with metric
    evaluation disabled, after a short untimed warmup.
    """
    if iters < 1:
        raise ValueError("bench needs iters >= 1 (nothing to time)")
    train_ds, _ = load_datasets(cfg)
    params = init_params(cfg, train_ds.n_v)
    policy = build_policy(cfg)
    state = MomentumState.zeros(params)
    rng = make_rng([cfg.seed, 0x6265])
    persistent = None
    batches = data_mod.minibatches(train_ds, cfg.batch_size, cfg.seed, 0)

    def next_batch():
        nonlocal batches
        batch = next(batches, None)
        if batch is None:
            batches = data_mod.minibatches(train_ds, cfg.batch_size, cfg.seed, 0)
            batch = next(batches)
        return batch

    def one_iter(it: int):
        nonlocal params, state, persistent
        batch = next_batch()
        if cfg.cd_mode == "pcd":
            if persistent is None:
                persistent = init_pcd_state(params, batch, rng)
            positive = PhaseStats(batch, hidden_probs(params, batch))
            persistent, negative = pcd(params, persistent, cfg.cd_k, rng)
        else:
            positive, negative = cd_k(params, batch, cfg.cd_k, rng)
        grads = estimate_gradients(params, positive, negative)
        params, state = apply_update(params, grads, policy, state, it)

    for it in range(min(10, max(1, iters // 10))):
        one_iter(it)
    t0 = time.perf_counter()
    for it in range(iters):
        one_iter(it)
    elapsed_ms = (time.perf_counter() - t0) * 1000.0
    return policy_label(cfg), cfg.family, elapsed_ms / iters * 1000.0
