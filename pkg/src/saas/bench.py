"""Desk-scale experiment harness with deterministic CSV/JSON output.

Each experiment returns an :class:`ExperimentResult` holding trajectory
rows, summary rows and metadata.  Run seeds come from
``derive_seed(master_seed, kind, run_index)``, so every sweep point is
independent of execution order; ``jobs > 1`` fans them out over
processes and the rows are gathered back in declared order.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import DataConfig, build_dataset, build_split, corrupt_labels, epoch_batches
from .nn_core import OptimizerState, grads, init_params, one_hot, sgd_step
from .saas_core import (
    LearningCurve,
    SaasConfig,
    cumulative_loss,
    posterior_accuracy,
    pseudo_labels,
    run_baseline,
    run_phase1,
    run_phase2,
)
from .seeding import derive_seed

SCHEMA_VERSION = 1


@dataclass
class ExperimentResult:
    kind: str
    columns: list
    rows: list
    summary_columns: list
    summary: list
    metadata: dict
    artifacts: dict = field(default_factory=dict)  # name -> 2-D array
    wall_time: float = 0.0  # kept out of the sidecar so reruns stay byte-identical


def _std(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    return float(values.std(ddof=1)) if values.size > 1 else 0.0


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def _metadata(kind: str, cfg: SaasConfig, data_cfg: DataConfig, **params) -> dict:
    echo = {"saas": asdict(cfg), "data": asdict(data_cfg), "params": params}
    return {
        "kind": kind,
        "schema_version": SCHEMA_VERSION,
        "master_seed": cfg.master_seed,
        "config_digest": _digest(echo),
        "config": echo,
    }


def _map(fn: Callable, items: Sequence, jobs: int = 1) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, *zip(*items)))


def supervised_curve(X, y, K: int, arch, seed: int, epochs: int, lr: float = 0.1,
                     momentum: float = 0.0, batch_size: int = 50,
                     init_scale: str = "fan_in") -> LearningCurve:
    """Plain mini-batch SGD on (X, y) from fresh weights; no augmentation."""
    params = init_params(arch, derive_seed(seed, "init"), init_scale)
    state = OptimizerState.fresh(params, lr, momentum)
    targets = one_hot(y, K)
    losses, bounds = [], []
    for epoch in range(epochs):
        bounds.append(len(losses))
        for b in epoch_batches(len(y), batch_size, derive_seed(seed, "batches", epoch)).batches:
            loss, g = grads(params, X[b], targets[b])
            params, state = sgd_step(params, g, state)
            losses.append(loss)
    return LearningCurve(np.array(losses), bounds)


def epoch_means(curve: LearningCurve) -> list[float]:
    edges = list(curve.epoch_boundaries) + [len(curve.step_losses)]
    return [float(np.mean(curve.step_losses[a:b])) for a, b in zip(edges[:-1], edges[1:])]


# ---------------------------------------------------------------------------
# corruption vs. speed

def _corruption_run(cfg, data_cfg, s, fractions, epochs, lr, momentum, mode):
    seed = derive_seed(cfg.master_seed, "corruption-speed", s)
    ds = build_dataset(data_cfg, seed)
    out = []
    for f in fractions:
        y = corrupt_labels(ds.y, f, ds.K, derive_seed(seed, "corrupt"), mode=mode)
        curve = supervised_curve(ds.X, y, ds.K, cfg.arch, derive_seed(seed, "train"), epochs,
                                 lr, momentum, cfg.batch_u, cfg.init_scale)
        out.append((f, epoch_means(curve), cumulative_loss(curve)))
    return out


def corruption_speed_experiment(cfg: SaasConfig, data_cfg: DataConfig,
                                fractions=(0.0, 0.25, 0.5, 0.75, 1.0), n_seeds: int = 3,
                                epochs_budget: int = 10, lr: float = 0.1, momentum: float = 0.0,
                                corruption_mode: str = "uniform", jobs: int = 1) -> ExperimentResult:
    """Cumulative training loss of fully supervised runs under label corruption.

    The whole dataset is labeled; ``fraction`` of the labels are corrupted.
    Per seed the same dataset, initial weights and batch order are shared
    across fractions.
    """
    fractions = sorted(float(f) for f in fractions)
    if any(not 0 <= f <= 1 for f in fractions):
        raise ValueError("fractions must lie in [0, 1]")
    t0 = time.perf_counter()
    runs = _map(_corruption_run,
                [(cfg, data_cfg, s, fractions, epochs_budget, lr, momentum, corruption_mode)
                 for s in range(n_seeds)], jobs)
    rows, lt = [], {f: [] for f in fractions}
    for f_idx, f in enumerate(fractions):
        for s in range(n_seeds):
            _, means, total = runs[s][f_idx]
            lt[f].append(total)
            rows += [(f, s, e + 1, m) for e, m in enumerate(means)]
    summary = [(f, float(np.mean(lt[f])), _std(lt[f])) for f in fractions]
    meta = _metadata("corruption-speed", cfg, data_cfg, fractions=fractions, n_seeds=n_seeds,
                     epochs_budget=epochs_budget, lr=lr, momentum=momentum,
                     corruption_mode=corruption_mode)
    return ExperimentResult("corruption-speed", ["fraction", "seed", "epoch", "loss"], rows,
                            ["fraction", "mean_LT", "std_LT"], summary, meta,
                            wall_time=time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# outer epochs vs. speed

def _outer_epoch_run(cfg, data_cfg, s, M_list, probe_epochs, probe_lr):
    seed = derive_seed(cfg.master_seed, "outer-epoch-speed", s)
    run_cfg = replace(cfg, master_seed=seed, outer_epochs=max(M_list), early_stop_tv=0.0)
    split = build_split(data_cfg, seed)
    report = run_phase1(split, run_cfg, snapshot_at=M_list)
    out = {}
    for M in M_list:
        y_hat = pseudo_labels(report.snapshots[M])
        curve = supervised_curve(split.unlabeled_X, y_hat, split.K, cfg.arch,
                                 derive_seed(seed, "probe"), probe_epochs, probe_lr,
                                 0.0, cfg.batch_u, cfg.init_scale)
        out[M] = (y_hat, posterior_accuracy(report.snapshots[M], split.unlabeled_true_y),
                  epoch_means(curve))
    return out


def outer_epoch_speed_experiment(cfg: SaasConfig, data_cfg: DataConfig, M_list=(1, 10, 40),
                                 probe_epochs: int = 10, n_seeds: int = 3, probe_lr: float = 0.1,
                                 jobs: int = 1) -> ExperimentResult:
    """Train fresh networks on pseudo-labels snapshotted after M outer epochs.

    One Phase I run per seed goes to max(M_list) and keeps snapshots; every
    snapshot is probed with the same fresh initialisation.
    """
    M_list = sorted(set(int(m) for m in M_list))
    if not M_list:
        raise ValueError("M_list must not be empty")
    if probe_epochs < 2:
        raise ValueError("probe_epochs must be >= 2 to report the epoch-2 loss")
    t0 = time.perf_counter()
    runs = _map(_outer_epoch_run,
                [(cfg, data_cfg, s, M_list, probe_epochs, probe_lr) for s in range(n_seeds)], jobs)
    rows, summary, artifacts = [], [], {}
    for M in M_list:
        e2, accs = [], []
        for s in range(n_seeds):
            y_hat, acc, means = runs[s][M]
            rows += [(M, s, e + 1, m, acc) for e, m in enumerate(means)]
            e2.append(means[1])
            accs.append(acc)
            artifacts[f"pseudo_labels_M{M}_seed{s}"] = y_hat[:, None]
        summary.append((M, float(np.median(e2)), float(np.mean(e2)), float(np.mean(accs))))
    meta = _metadata("outer-epoch-speed", cfg, data_cfg, M_list=M_list, probe_epochs=probe_epochs,
                     n_seeds=n_seeds, probe_lr=probe_lr)
    return ExperimentResult(
        "outer-epoch-speed", ["M", "seed", "epoch", "loss", "pseudo_label_accuracy"], rows,
        ["M", "median_epoch2_loss", "mean_epoch2_loss", "mean_pseudo_label_accuracy"], summary,
        meta, artifacts, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# number of unlabeled samples

def _sweep_run(cfg, data_cfg, s, counts):
    seed = derive_seed(cfg.master_seed, "sweep-unlabeled", s)
    run_cfg = replace(cfg, master_seed=seed)
    full = build_split(replace(data_cfg, n_unlabeled=max(counts)), seed)
    out = {}
    for count in counts:
        split = full.with_unlabeled_subset(count)
        report = run_phase1(split, run_cfg)
        _, metrics = run_phase2(split, pseudo_labels(report.posterior), run_cfg)
        out[count] = (metrics["test_error"], metrics["unlabeled_error"])
    return out


def unlabeled_sweep_experiment(cfg: SaasConfig, data_cfg: DataConfig, unlabeled_counts=(50, 200, 800),
                               n_seeds: int = 3, jobs: int = 1) -> ExperimentResult:
    """Full SaaS for nested unlabeled pools of increasing size.

    Per seed the labeled, validation and test sets are fixed and the smaller
    pools are prefixes of the largest one.  A count of 0 reduces to the
    labeled-only training path.
    """
    counts = sorted(set(int(c) for c in unlabeled_counts))
    t0 = time.perf_counter()
    runs = _map(_sweep_run, [(cfg, data_cfg, s, counts) for s in range(n_seeds)], jobs)
    rows, summary = [], []
    for c in counts:
        errs = [runs[s][c][0] for s in range(n_seeds)]
        rows += [(c, s, runs[s][c][0], runs[s][c][1]) for s in range(n_seeds)]
        accs = [1.0 - e for e in errs]
        summary.append((c, float(np.mean(accs)), _std(accs),
                        float(np.mean([runs[s][c][1] for s in range(n_seeds)]))))
    meta = _metadata("sweep-unlabeled", cfg, data_cfg, unlabeled_counts=counts, n_seeds=n_seeds)
    return ExperimentResult(
        "sweep-unlabeled", ["n_unlabeled", "seed", "test_error", "unlabeled_error"], rows,
        ["n_unlabeled", "mean_test_accuracy", "std_test_accuracy", "mean_unlabeled_error"],
        summary, meta, wall_time=time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# headline metrics

SSL_METRICS = ("baseline_test_error", "saas_unlabeled_error", "saas_test_error")


def _ssl_run(cfg, data_cfg, s, progress=None):
    seed = derive_seed(cfg.master_seed, "saas", s)
    run_cfg = replace(cfg, master_seed=seed)
    split = build_split(data_cfg, seed)
    base = run_baseline(split, run_cfg)
    report = run_phase1(split, run_cfg, progress=progress)
    _, metrics = run_phase2(split, pseudo_labels(report.posterior), run_cfg)
    values = {
        "baseline_test_error": base["test_error"],
        "saas_unlabeled_error": metrics["unlabeled_error"],
        "saas_test_error": metrics["test_error"],
    }
    return values, report.posterior.P, report.initial_accuracy, report.epochs


def run_ssl(cfg: SaasConfig, data_cfg: DataConfig, n_seeds: int = 3, jobs: int = 1,
            progress: Callable | None = None) -> ExperimentResult:
    """Baseline, Phase I and Phase II per seed; one row per metric per seed."""
    t0 = time.perf_counter()
    items = [(cfg, data_cfg, s) for s in range(n_seeds)]
    if jobs <= 1 and progress is not None:
        runs = [_ssl_run(*it, progress=progress) for it in items]
    else:
        runs = _map(_ssl_run, items, jobs)
    rows, artifacts, phase1 = [], {}, []
    for s, (values, P, acc0, epochs) in enumerate(runs):
        rows += [(s, k, values[k]) for k in SSL_METRICS]
        artifacts[f"posterior_seed{s}"] = P
        phase1.append({"seed": s, "initial_accuracy": acc0,
                       "final_accuracy": epochs[-1].pseudo_label_accuracy if epochs else acc0})
    summary = []
    for k in SSL_METRICS:
        vals = [r[2] for r in rows if r[1] == k]
        summary.append((k, float(np.mean(vals)), _std(vals)))
    meta = _metadata("saas", cfg, data_cfg, n_seeds=n_seeds)
    meta["phase1"] = phase1
    return ExperimentResult("saas", ["seed", "metric", "value"], rows,
                            ["metric", "mean", "std"], summary, meta, artifacts,
                            time.perf_counter() - t0)


def _baseline_run(cfg, data_cfg, s):
    seed = derive_seed(cfg.master_seed, "saas", s)  # same splits as run_ssl
    return run_baseline(build_split(data_cfg, seed), replace(cfg, master_seed=seed))


def baseline_experiment(cfg: SaasConfig, data_cfg: DataConfig, n_seeds: int = 3,
                        jobs: int = 1) -> ExperimentResult:
    t0 = time.perf_counter()
    runs = _map(_baseline_run, [(cfg, data_cfg, s) for s in range(n_seeds)], jobs)
    keys = ("test_error", "validation_error")
    rows = [(s, k, m[k]) for s, m in enumerate(runs) for k in keys]
    summary = [(k, float(np.mean([m[k] for m in runs])), _std([m[k] for m in runs])) for k in keys]
    return ExperimentResult("baseline", ["seed", "metric", "value"], rows, ["metric", "mean", "std"],
                            summary, _metadata("baseline", cfg, data_cfg, n_seeds=n_seeds),
                            wall_time=time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# output

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def to_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


def atomic_write(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_result(result: ExperimentResult, out_dir, extra_meta: dict | None = None) -> list[Path]:
    """Write ``<kind>.csv``, ``<kind>_summary.csv``, ``<kind>.json`` and one CSV per artifact."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name, text):
        atomic_write(out / name, text)
        written.append(out / name)

    put(f"{result.kind}.csv", to_csv(result.columns, result.rows))
    put(f"{result.kind}_summary.csv", to_csv(result.summary_columns, result.summary))
    for name, arr in sorted(result.artifacts.items()):
        arr = np.atleast_2d(np.asarray(arr))
        put(f"{result.kind}_{name}.csv", to_csv([f"c{j}" for j in range(arr.shape[1])], arr.tolist()))
    meta = dict(result.metadata)
    meta.update(extra_meta or {})
    put(f"{result.kind}.json", json.dumps(_jsonable(meta), indent=2, sort_keys=True) + "\n")
    return written
