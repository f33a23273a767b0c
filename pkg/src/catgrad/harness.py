"""Experiment harness: training runs, sweeps, bias evaluation and timing.

All randomness is keyed by ``(seed, step)`` streams, and sweep cells derive
their seeds from a hash of the base seed and the cell's coordinates. Output
therefore never depends on worker count or scheduling. Wall-clock columns
are only written on request, so default CSV/JSON output is byte-stable.
"""
import csv
import hashlib
import io
import json
import logging
import math
import os
import time
import tracemalloc
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import List, Optional

import numpy as np

from catgrad.categorical import RngStream
from catgrad.errors import ConfigError, InvalidArgumentError
from catgrad.estimators import (
    EXPECTABLE_KINDS,
    BatchSpec,
    EstimatorConfig,
    Kind,
    cosine_similarity,
    estimate,
    exact_gradient,
    expected_estimate,
)
from catgrad.objectives import ENUMERATION_CAP, PolynomialObjective, QuadraticOracleObjective
from catgrad.optim import Algorithm, OptimConfig, OptimState, optim_step

log = logging.getLogger(__name__)

WORKERS_ENV = "CATGRAD_WORKERS"


def fmt(x):
    """CSV cell: empty for None, 17 significant digits for floats."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def _json_value(x):
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def dumps_json(obj):
    def walk(o):
        if isinstance(o, dict):
            return {k: walk(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [walk(v) for v in o]
        return _json_value(o)
    return json.dumps(walk(obj), indent=1, sort_keys=False) + "\n"


def derive_seed(seed, *coords):
    """64-bit seed from a base seed and cell coordinates."""
    h = hashlib.sha256(repr((int(seed),) + tuple(coords)).encode()).digest()
    return int.from_bytes(h[:8], "little")


def worker_count():
    raw = os.environ.get(WORKERS_ENV, "").strip()
    if not raw:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(WORKERS_ENV, f"expected a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(WORKERS_ENV, "must be >= 1")
    return n


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    estimator: str = "reinmax"
    tau: float = 1.0
    mc_samples: int = 1000
    reinforce_baseline: str = "none"
    objective: str = "poly"
    p: float = 2.0
    c: float = 0.45
    values: tuple = (0.0, 1.0)
    objective_seed: int = 0
    L: int = 16
    n: int = 2
    batch_size: int = 256
    optimizer: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 40
    steps_per_epoch: int = 100
    seed: int = 0
    bias_eval_every: Optional[int] = None
    output_path: Optional[str] = None

    def validate(self):
        try:
            Kind.parse(self.estimator)
        except InvalidArgumentError as exc:
            raise ConfigError("estimator", str(exc)) from None
        try:
            EstimatorConfig(self.estimator, self.tau, self.mc_samples, None, self.reinforce_baseline)
        except InvalidArgumentError as exc:
            msg = str(exc)
            name = ("tau" if "tau" in msg else "mc_samples" if "mc_samples" in msg
                    else "reinforce_baseline")
            raise ConfigError(name, msg) from None
        if self.objective not in ("poly", "quadratic_oracle"):
            raise ConfigError("objective", "must be 'poly' or 'quadratic_oracle'")
        if self.objective == "poly":
            if not (isinstance(self.p, (int, float)) and self.p > 1):
                raise ConfigError("p", f"requires p > 1, got {self.p!r}")
            if not math.isfinite(self.c):
                raise ConfigError("c", "must be finite")
            if len(self.values) != self.n:
                raise ConfigError("values", f"needs n={self.n} entries, got {len(self.values)}")
        for name in ("L", "batch_size", "steps_per_epoch"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(name, "must be a positive integer")
        if int(self.n) < 2:
            raise ConfigError("n", "must be >= 2")
        if int(self.epochs) < 0:
            raise ConfigError("epochs", "must be >= 0")
        try:
            OptimConfig(self.optimizer, self.lr, self.beta1, self.beta2, self.eps)
        except InvalidArgumentError as exc:
            msg = str(exc)
            name = next((k for k in ("beta1", "beta2", "epsilon", "learning_rate") if k in msg),
                        "optimizer")
            name = {"learning_rate": "lr", "epsilon": "eps"}.get(name, name)
            raise ConfigError(name, msg) from None
        if self.bias_eval_every is not None:
            if int(self.bias_eval_every) < 1:
                raise ConfigError("bias_eval_every", "must be a positive integer")
            if self.n ** self.L > ENUMERATION_CAP:
                raise ConfigError(
                    "bias_eval_every",
                    f"needs exact gradients but n**L = {self.n ** self.L} exceeds {ENUMERATION_CAP}",
                )
        return self

    def estimator_config(self):
        return EstimatorConfig(self.estimator, self.tau, self.mc_samples, None, self.reinforce_baseline)

    def optim_config(self):
        return OptimConfig(Algorithm(self.optimizer.lower()), self.lr, self.beta1, self.beta2, self.eps)

    def build_objective(self):
        if self.objective == "poly":
            return PolynomialObjective.filled(self.L, self.c, self.p, self.values)
        return QuadraticOracleObjective.random(self.objective_seed, self.L, self.n)


# --------------------------------------------------------------------------
# training


@dataclass
class StepRow:
    epoch: int
    step: int
    loss: float
    wall_time_ms: float
    cosine_vs_exact: Optional[float] = None
    bias_mode: Optional[str] = None


@dataclass
class RunRecord:
    config: ExperimentConfig
    rows: List[StepRow] = field(default_factory=list)
    summary: Optional[dict] = None
    thetas: Optional[List[np.ndarray]] = None

    COLUMNS = ("epoch", "step", "loss", "cosine_vs_exact", "bias_mode")

    def _columns(self, timing):
        return self.COLUMNS + (("wall_time_ms",) if timing else ())

    def _summary(self, timing):
        if self.summary is None:
            return None
        s = dict(self.summary)
        if not timing:
            s.pop("total_time_ms", None)
        return s

    def to_csv(self, timing=False):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = self._columns(timing)
        w.writerow(cols)
        for r in self.rows:
            w.writerow([fmt(getattr(r, c)) for c in cols])
        summary = self._summary(timing)
        if summary is not None:
            for k, v in summary.items():
                buf.write(f"# {k}={fmt(v)}\n")
        return buf.getvalue()

    def to_json(self, timing=False):
        cols = self._columns(timing)
        return dumps_json({
            "rows": [{c: getattr(r, c) for c in cols} for r in self.rows],
            "summary": self._summary(timing),
        })


def _bias_cosine(kind, theta, obj, ecfg, sampled_grad):
    exact = exact_gradient(theta, obj)
    if kind in EXPECTABLE_KINDS:
        approx, mode = expected_estimate(kind, theta, obj, ecfg.tau, ecfg.phi), "expected"
    elif kind in (Kind.STGS, Kind.GR_MC):
        approx, mode = sampled_grad, "sampled"
    else:
        approx, mode = sampled_grad, "deterministic"
    return cosine_similarity(approx, exact), mode


def run_training(cfg, record_theta=False):
    """Optimize ``theta`` (initialized at zero) with the configured estimator.

    Step ``s`` draws its batch from ``RngStream(cfg.seed, s)``. The logged
    loss is the batch mean of ``f(D)`` before the update of that step.
    """
    cfg.validate()
    obj = cfg.build_objective()
    ecfg = cfg.estimator_config()
    ocfg = cfg.optim_config()
    theta = np.zeros((cfg.L, cfg.n))
    state = OptimState.zeros(theta.shape)
    record = RunRecord(cfg, thetas=[] if record_theta else None)
    total = cfg.epochs * cfg.steps_per_epoch
    t_start = time.perf_counter()
    for s in range(total):
        t0 = time.perf_counter()
        if record_theta:
            record.thetas.append(theta.copy())
        est = estimate(theta, obj, BatchSpec(cfg.batch_size, RngStream(cfg.seed, s)), ecfg)
        loss = float(np.mean(est.values))
        if not math.isfinite(loss):
            raise FloatingPointError(f"non-finite loss at step {s}")
        cos = mode = None
        if cfg.bias_eval_every and (s + 1) % cfg.bias_eval_every == 0:
            cos, mode = _bias_cosine(ecfg.kind, theta, obj, ecfg, est.grad)
        state, theta = optim_step(state, theta, est.grad, ocfg)
        record.rows.append(StepRow(s // cfg.steps_per_epoch, s, loss,
                                   (time.perf_counter() - t0) * 1e3, cos, mode))
    if record.rows:
        last = [r.loss for r in record.rows[-cfg.steps_per_epoch:]]
        record.summary = {
            "final_loss": record.rows[-1].loss,
            "mean_loss_last_epoch": math.fsum(last) / len(last),
            "total_time_ms": (time.perf_counter() - t_start) * 1e3,
        }
    if record_theta:
        record.thetas.append(theta.copy())
    return record


def replay_losses(record, steps):
    """Recompute logged losses from the recorded theta trajectory."""
    cfg = record.config
    obj = cfg.build_objective()
    ecfg = cfg.estimator_config()
    out = []
    for s in steps:
        est = estimate(record.thetas[s], obj, BatchSpec(cfg.batch_size, RngStream(cfg.seed, s)), ecfg)
        out.append(float(np.mean(est.values)))
    return out


# --------------------------------------------------------------------------
# sweeps


@dataclass
class SweepGrid:
    axis1_name: str
    axis1_values: list
    axis2_name: str
    axis2_values: list
    cells: List[dict] = field(default_factory=list)

    def columns(self):
        return (self.axis1_name, self.axis2_name, "seed", "final_mean_loss", "status")

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns())
        for cell in self.cells:
            w.writerow([_echo(cell[self.axis1_name]),
                        _echo(cell[self.axis2_name]), fmt(cell["seed"]),
                        fmt(cell["final_mean_loss"]), cell["status"]])
        return buf.getvalue()

    def to_json(self):
        return dumps_json({"axes": {self.axis1_name: self.axis1_values,
                                    self.axis2_name: self.axis2_values},
                           "cells": self.cells})

    def value(self, a1, a2):
        for cell in self.cells:
            if cell[self.axis1_name] == a1 and cell[self.axis2_name] == a2:
                return cell["final_mean_loss"]
        raise KeyError((a1, a2))


def _echo(v):
    # Axis values are echoed in their shortest round-trip form (0.1 stays 0.1).
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _run_cell(cfg):
    try:
        rec = run_training(cfg)
        loss = rec.summary["mean_loss_last_epoch"] if rec.summary else float("nan")
        return loss, "ok"
    except Exception as exc:  # a failed cell must not sink the whole grid
        return float("nan"), f"error: {type(exc).__name__}: {exc}"


def _map_cells(configs, workers=None):
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(configs) <= 1:
        return [_run_cell(c) for c in configs]
    with ProcessPoolExecutor(max_workers=min(workers, len(configs))) as pool:
        return list(pool.map(_run_cell, configs))


def _collect(grid, coords, configs, results):
    for (a1, a2), cfg, (loss, status) in zip(coords, configs, results):
        if status != "ok":
            log.error("cell %s=%s %s=%s failed: %s", grid.axis1_name, a1, grid.axis2_name, a2, status)
        grid.cells.append({grid.axis1_name: a1, grid.axis2_name: a2, "seed": cfg.seed,
                           "final_mean_loss": loss, "status": "ok" if status == "ok" else "failed"})
    return grid


def run_heatmap_sweep(base, batch_sizes, variable_counts, workers=None):
    """Final mean loss over a batch-size x variable-count grid."""
    if not batch_sizes or not variable_counts:
        raise InvalidArgumentError("sweep axes must be non-empty")
    coords, configs = [], []
    for b in batch_sizes:
        for L in variable_counts:
            coords.append((int(b), int(L)))
            configs.append(replace(base, batch_size=int(b), L=int(L), output_path=None,
                                   seed=derive_seed(base.seed, "heatmap", int(b), int(L))))
    grid = SweepGrid("batch_size", [int(b) for b in batch_sizes], "L", [int(L) for L in variable_counts])
    return _collect(grid, coords, configs, _map_cells(configs, workers))


def run_temperature_sweep(base, taus, estimators=None, workers=None):
    """Final mean loss for every ``(estimator, tau)`` pair."""
    if not taus:
        raise InvalidArgumentError("taus must be non-empty")
    if any(not t > 0 for t in taus):
        raise ConfigError("taus", "temperatures must be positive")
    estimators = [base.estimator] if not estimators else list(estimators)
    names = [Kind.parse(e).value for e in estimators]
    coords, configs = [], []
    for name in names:
        for t in taus:
            coords.append((name, float(t)))
            configs.append(replace(base, estimator=name, tau=float(t), output_path=None,
                                   seed=derive_seed(base.seed, "temperature", name, float(t))))
    grid = SweepGrid("estimator", names, "tau", [float(t) for t in taus])
    return _collect(grid, coords, configs, _map_cells(configs, workers))


# --------------------------------------------------------------------------
# bias evaluation


def run_bias_eval(base, estimators, seeds):
    """Cosine similarity to the exact gradient along each estimator's own run."""
    if base.bias_eval_every is None:
        base = replace(base, bias_eval_every=base.steps_per_epoch)
    rows = []
    for name in estimators:
        name = Kind.parse(name).value
        for seed in seeds:
            rec = run_training(replace(base, estimator=name, seed=int(seed), output_path=None))
            for r in rec.rows:
                if r.cosine_vs_exact is not None:
                    rows.append({"estimator": name, "seed": int(seed), "step": r.step,
                                 "cosine_vs_exact": r.cosine_vs_exact, "bias_mode": r.bias_mode,
                                 "loss": r.loss})
    return rows


def bias_rows_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ("estimator", "seed", "step", "cosine_vs_exact", "bias_mode", "loss")
    w.writerow(cols)
    for r in rows:
        w.writerow([fmt(r[c]) for c in cols])
    return buf.getvalue()


# --------------------------------------------------------------------------
# timing


@dataclass
class BenchRow:
    estimator: str
    mc_samples: Optional[int]
    mean_step_ms: float
    peak_alloc_bytes: int
    digest: str


def _bench_theta(cfg):
    return np.random.default_rng(derive_seed(cfg.seed, "bench-theta")).uniform(-1, 1, (cfg.L, cfg.n))


def run_bench(base, estimators=("reinmax", "st", "stgs", "gr_mc"), mc_samples=(100, 1000),
              steps=20, warmup=2):
    """Per-step estimation time (no parameter updates) for each estimator.

    Every estimator sees the same theta and the same ``(seed, step)`` streams.
    ``digest`` hashes the produced estimates, so two runs with one seed can be
    compared for identical sampling even though timings differ.
    """
    base.validate()
    obj = base.build_objective()
    theta = _bench_theta(base)
    jobs = []
    for name in estimators:
        kind = Kind.parse(name)
        if kind is Kind.GR_MC:
            jobs.extend((kind, int(k)) for k in mc_samples)
        else:
            jobs.append((kind, None))
    out = []
    for kind, k in jobs:
        ecfg = EstimatorConfig(kind, base.tau, k or base.mc_samples, None, base.reinforce_baseline)

        def one(s):
            return estimate(theta, obj, BatchSpec(base.batch_size, RngStream(base.seed, s)), ecfg).grad

        for s in range(warmup):
            one(s)
        h = hashlib.sha256()
        elapsed = 0.0
        for s in range(steps):
            t0 = time.perf_counter()
            g = one(s)
            elapsed += time.perf_counter() - t0
            h.update(np.ascontiguousarray(g).tobytes())
        tracemalloc.start()
        one(0)
        _, peak = tracemalloc.get_traced_memory()
        tracemalloc.stop()
        out.append(BenchRow(kind.value, k, elapsed / steps * 1e3, int(peak), h.hexdigest()[:16]))
    return out


def bench_rows_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = [f.name for f in fields(BenchRow)]
    w.writerow(cols)
    for r in rows:
        w.writerow([fmt(getattr(r, c)) for c in cols])
    return buf.getvalue()


def bench_rows_to_json(rows):
    return dumps_json([asdict(r) for r in rows])
