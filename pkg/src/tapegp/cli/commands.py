"""Implementations of the fit, predict, sample and bench commands."""

from __future__ import annotations

import contextlib
import functools
import itertools
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_info, threadpool_limits

from ..inference import HMCConfig, hmc_sample, minimize, model_log_target, write_trace
from ..kernels import parse_kernel
from ..likelihoods import MultiClass, parse_likelihood
from ..models import GPMC, GPR, SGPMC, SGPR, SVGP, VGP, Dataset, GPModel, check_combination, load_model, save_model
from .config import Config, ConfigError, matching, parse_prior
from .data import DatasetTable, load_csv, load_idx, synthetic_classes, write_csv

MCMC_KINDS = ("gpmc", "sgpmc")
SPARSE_KINDS = ("sgpr", "svgp", "sgpmc")
BENCH_COLUMNS = [
    "config_id",
    "threads",
    "minibatch",
    "inducing",
    "repeats",
    "iterations",
    "its_per_sec_mean",
    "its_per_sec_std",
]


@functools.lru_cache(maxsize=1)
def pool_capacity() -> int | None:
    """Smallest load-time thread count over the native pools, or None without pools.

    OpenBLAS sizes its buffers when it loads; raising its thread count past
    that value later corrupts memory, so requests are clamped to it.
    """
    counts = [d["num_threads"] for d in threadpool_info()]
    return min(counts) if counts else None


def effective_threads(threads: int) -> int:
    if threads < 1:
        raise ConfigError(f"thread count must be at least 1, got {threads}")
    cap = pool_capacity()
    return threads if cap is None else min(threads, cap)


def thread_limit(threads: int | None):
    """Cap BLAS/OpenMP worker threads, or do nothing when ``threads`` is None."""
    if threads is None:
        return contextlib.nullcontext()
    return threadpool_limits(limits=effective_threads(threads))


def load_table(cfg: Config, seed) -> DatasetTable:
    source = cfg.get("data.source").lower()
    if source == "csv":
        path = cfg.get("data.path")
        if not path:
            raise ConfigError("data.path is required when data.source = csv")
        return load_csv(path, cfg.get_int("data.label_column"), cfg.get_bool("data.header"))
    if source == "idx":
        if not (cfg.get("data.images") and cfg.get("data.labels")):
            raise ConfigError("data.images and data.labels are required when data.source = idx")
        return load_idx(cfg.get("data.images"), cfg.get("data.labels"))
    if source == "synthetic":
        return synthetic_classes(cfg.get_int("data.n"), cfg.get_int("data.d"), cfg.get_int("data.classes"), seed)
    raise ConfigError(f"unknown data.source {source!r}; use csv, idx or synthetic")


def initial_inducing(X: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    """``m`` distinct training inputs, kept in data order."""
    n = X.shape[0]
    if not 1 <= m <= n:
        raise ConfigError(f"inducing count must lie in [1, {n}], got {m}")
    return X[np.sort(rng.choice(n, size=m, replace=False))].copy()


def apply_parameter_settings(model: GPModel, cfg: Config) -> None:
    params = {p.name: p for p in model.parameters()}
    names = list(params)
    for pattern, text in cfg.patterns("init"):
        hits = matching(names, pattern)
        if not hits:
            raise ConfigError(f"init.{pattern} matches no parameter; parameters are {names}")
        try:
            value = float(text)
        except ValueError:
            raise ConfigError(f"init.{pattern} must be a number, got {text!r}") from None
        for name in hits:
            params[name].assign(np.full(params[name].shape, value))
    for pattern in cfg.get_list("fixed"):
        hits = matching(names, pattern)
        if not hits:
            raise ConfigError(f"fixed pattern {pattern!r} matches no parameter; parameters are {names}")
        for name in hits:
            params[name].fixed = True
    for pattern, text in cfg.patterns("prior"):
        hits = matching(names, pattern)
        if not hits:
            raise ConfigError(f"prior.{pattern} matches no parameter; parameters are {names}")
        prior = parse_prior(text)
        for name in hits:
            params[name].prior = prior


def build_model(cfg: Config, table: DatasetTable, rng: np.random.Generator) -> GPModel:
    kind = cfg.get("model").lower()
    likelihood = parse_likelihood(cfg.get("likelihood"))
    check_combination(kind, likelihood)
    if table.y is None:
        raise ConfigError("training data has no label column")
    data = Dataset(table.X, table.y)
    kernel = parse_kernel(cfg.get("kernel"), data.input_dim)
    jitter = cfg.get_float("jitter")
    Z = initial_inducing(data.X, cfg.get_int("inducing"), rng) if kind in SPARSE_KINDS else None
    if kind == "gpr":
        model = GPR(data, kernel, likelihood, jitter=jitter)
    elif kind == "sgpr":
        model = SGPR(data, kernel, Z, likelihood, jitter=jitter)
    elif kind == "vgp":
        model = VGP(data, kernel, likelihood, jitter=jitter)
    elif kind == "svgp":
        model = SVGP(data, kernel, likelihood, Z, whiten=cfg.get_bool("whiten"), jitter=jitter)
    elif kind == "gpmc":
        model = GPMC(data, kernel, likelihood, jitter=jitter)
    else:
        model = SGPMC(data, kernel, likelihood, Z, jitter=jitter)
    apply_parameter_settings(model, cfg)
    return model


def _minibatch(cfg: Config, model: GPModel) -> int | None:
    b = cfg.get_int("minibatch")
    if b == 0:
        return None
    if not isinstance(model, SVGP):
        raise ConfigError(f"minibatches are only supported by svgp, not {model.kind}")
    return b


def cmd_fit(cfg: Config, out: Path, seed: int, threads: int | None = None) -> dict:
    rng = np.random.default_rng(seed)
    out.mkdir(parents=True, exist_ok=True)
    with thread_limit(threads):
        if cfg.get("resume"):
            model = load_model(cfg.get("resume"))
        else:
            kind = cfg.get("model").lower()
            if kind in MCMC_KINDS:
                check_combination(kind, parse_likelihood(cfg.get("likelihood")))
                raise ConfigError(f"{kind} is sampled, not optimised; use the sample command")
            model = build_model(cfg, load_table(cfg, rng), rng)
        if model.kind in MCMC_KINDS:
            raise ConfigError(f"{model.kind} is sampled, not optimised; use the sample command")
        trace = minimize(
            model, cfg.get_int("iters"), rate=cfg.get_float("rate"), batch_size=_minibatch(cfg, model), seed=rng
        )
        model_path = out / "model.json"
        trace_path = out / "trace.csv"
        save_model(model, model_path)
        write_trace(trace, trace_path, timing=cfg.get_bool("trace.timing"))
    final = trace[-1].objective if trace else model.objective()
    return {"model": model_path, "trace": trace_path, "final_objective": final}


def cmd_predict(artifact, inputs, out: Path, header: bool = True, threads: int | None = None) -> dict:
    model = load_model(artifact)
    table = load_csv(inputs, label_column=None, header=header)
    if table.num_features != model.data.input_dim:
        raise ConfigError(f"inputs have {table.num_features} columns, model was trained on {model.data.input_dim}")
    out.mkdir(parents=True, exist_ok=True)
    path = out / "predictions.csv"
    with thread_limit(threads):
        if isinstance(model.likelihood, MultiClass):
            mean, var = model.predict_f(table.X)
            probs = model.likelihood.class_probabilities(mean, var)
            write_csv(path, [f"p{c}" for c in range(probs.shape[1])], probs)
        else:
            mean, var = model.predict_y(table.X)
            write_csv(path, ["mean", "variance"], np.hstack([mean[:, :1], var[:, :1]]))
    return {"predictions": path}


def _entry_labels(name: str, shape: tuple[int, int]) -> list[str]:
    if shape == (1, 1):
        return [name]
    return [f"{name}[{i}][{j}]" for i in range(shape[0]) for j in range(shape[1])]


def cmd_sample(cfg: Config, out: Path, seed: int, threads: int | None = None) -> dict:
    rng = np.random.default_rng(seed)
    kind = cfg.get("model").lower()
    if kind not in MCMC_KINDS:
        raise ConfigError(f"sample needs model gpmc or sgpmc, got {kind!r}; use fit for {kind}")
    out.mkdir(parents=True, exist_ok=True)
    with thread_limit(threads):
        model = build_model(cfg, load_table(cfg, rng), rng)
        target = model_log_target(model)
        config = HMCConfig(
            cfg.get_float("hmc.step"),
            cfg.get_int("hmc.leapfrog"),
            cfg.get_int("hmc.samples"),
            cfg.get_int("hmc.burn"),
            seed=rng,
        )
        chain = hmc_sample(target, model.free_state(), config)
        free = [p for p in model.parameters() if not p.fixed]
        hypers = model.sampled_hyperparameters()
        header = ["target"]
        for p in free:
            header += _entry_labels(p.name, p.shape)
        for p in hypers:
            header += _entry_labels(f"constrained:{p.name}", p.shape)
        rows = []
        for x, t in zip(chain.samples, chain.log_targets):
            model.set_free_state(x)
            rows.append([t, *x, *itertools.chain.from_iterable(p.value.ravel() for p in hypers)])
        path = out / "chain.csv"
        write_csv(path, header, rows)
    return {"chain": path, "acceptance_rate": chain.acceptance_rate, "rows": len(rows)}


@dataclass
class BenchResult:
    config_id: int
    threads: int
    minibatch: int
    inducing: int
    repeats: int
    iterations: int
    its_per_sec_mean: float
    its_per_sec_std: float

    def row(self) -> list[str]:
        ints = [self.config_id, self.threads, self.minibatch, self.inducing, self.repeats, self.iterations]
        return [str(v) for v in ints] + [format(self.its_per_sec_mean, ".17g"), format(self.its_per_sec_std, ".17g")]


def cmd_bench(cfg: Config, out: Path, seed: int, threads: list[int] | None = None, progress=None) -> dict:
    """Time stochastic training of the configured model over threads x minibatch sizes.

    Data loading and model construction happen outside the timed region;
    only the optimisation loop is bracketed by the clock. A single untimed
    warm-up iteration runs first.
    """
    thread_counts = threads if threads is not None else cfg.get_int_list("threads")
    batch_sizes = cfg.get_int_list("minibatch")
    if not thread_counts or any(t < 1 for t in thread_counts):
        raise ConfigError(f"thread counts must be positive integers, got {thread_counts}")
    if not batch_sizes:
        raise ConfigError("minibatch list is empty")
    iters, repeats, rate = cfg.get_int("iters"), cfg.get_int("repeats"), cfg.get_float("rate")
    if repeats < 1 or iters < 1:
        raise ConfigError("iters and repeats must be at least 1")
    seeds = np.random.SeedSequence(seed)
    table = load_table(cfg, np.random.default_rng(seeds.spawn(1)[0]))
    for b in batch_sizes:
        if not 1 <= b <= table.num_rows:
            raise ConfigError(f"minibatch {b} outside [1, {table.num_rows}]")
    combos = list(itertools.product(thread_counts, batch_sizes))
    clamped = sorted({t for t in thread_counts if effective_threads(t) < t})
    if clamped:
        print(
            f"note: native thread pools hold {pool_capacity()} thread(s); requests {clamped} run at that cap",
            file=sys.stderr,
        )
    repeat_seeds = seeds.spawn(len(combos) * repeats)
    # one untimed iteration so first-call costs do not land in the first configuration
    warm = np.random.default_rng(seeds.spawn(1)[0])
    with thread_limit(thread_counts[0]):
        minimize(build_model(cfg, table, warm), 1, rate=rate, batch_size=batch_sizes[0], seed=warm)
    results = []
    for cid, (t, b) in enumerate(combos):
        speeds = []
        for r in range(repeats):
            rng = np.random.default_rng(repeat_seeds[cid * repeats + r])
            model = build_model(cfg, table, rng)
            with thread_limit(t):
                start = time.perf_counter()
                minimize(model, iters, rate=rate, batch_size=b, seed=rng)
                elapsed = time.perf_counter() - start
            speeds.append(iters / elapsed)
        std = float(np.std(speeds, ddof=1)) if repeats > 1 else 0.0
        res = BenchResult(cid, t, b, cfg.get_int("inducing"), repeats, iters, float(np.mean(speeds)), std)
        results.append(res)
        if progress is not None:
            progress(res)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "bench.csv"
    with open(path, "w") as fh:
        fh.write(",".join(BENCH_COLUMNS) + "\n")
        for res in results:
            fh.write(",".join(res.row()) + "\n")
    return {"bench": path, "results": results}


def describe(result: dict) -> str:
    return json.dumps({k: (str(v) if isinstance(v, Path) else v) for k, v in result.items() if k != "results"})
