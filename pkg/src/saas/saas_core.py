"""Speed-as-a-supervisor semi-supervised learning.

Phase I infers a posterior over the unknown labels.  Each outer epoch
draws fresh weights, runs a short, fixed budget of SGD on the labeled set
plus the unlabeled set under the current posterior, and moves the
posterior against the accumulated negative log-likelihood of the
unlabeled samples, i.e. toward labels on which that short run learns
fastest.  Phase II trains an ordinary classifier on the resulting
pseudo-labels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .data import AugmentationSpec, DatasetSplit, augment_batch, cycle_batches, epoch_batches
from .nn_core import (
    EPS,
    ModelParams,
    NumericError,
    OptimizerState,
    error_rate,
    forward,
    grads,
    init_params,
    one_hot,
    sgd_step,
)
from .seeding import derive_seed
from .simplex import project_floor


@dataclass
class Phase2Config:
    lr0: float = 0.1
    halve_after_epochs: int = 50
    lr_stop: float = 0.001

    def validate(self):
        if self.lr0 <= 0:
            raise ValueError("phase2.lr0: must be > 0")
        if self.halve_after_epochs < 1:
            raise ValueError("phase2.halve_after_epochs: must be >= 1")
        if not 0 < self.lr_stop <= self.lr0:
            raise ValueError("phase2.lr_stop: must be in (0, lr0]")


@dataclass
class SaasConfig:
    arch: list = field(default_factory=lambda: [2, 32, 32, 2])
    init_scale: str = "fan_in"  # unit | fan_in
    outer_epochs: int = 40
    inner_epochs: int = 5
    T_inner: int | None = None  # inner steps; overrides inner_epochs when set
    eta_w: float = 0.01
    eta_Pu: float = 1.0
    beta: float = 1.0
    alpha_floor: float = 0.05
    batch_u: int = 100
    batch_l: int = 100
    momentum: float = 0.9
    langevin_variance: float = 1e-7  # 1e-5 * eta_w
    resample_mode: str = "fresh_gaussian"  # fresh_gaussian | reset_to_w0
    delta_mode: str = "batch_mean"  # batch_mean | per_sample
    early_stop_tv: float = 0.0  # 0 disables the early stop
    augmentation: AugmentationSpec = field(default_factory=AugmentationSpec)
    master_seed: int = 0
    phase2: Phase2Config = field(default_factory=Phase2Config)

    def validate(self, K: int | None = None):
        if len(self.arch) < 2 or any(int(a) < 1 for a in self.arch):
            raise ValueError("arch: needs >= 2 positive layer sizes")
        K = self.arch[-1] if K is None else K
        checks = [
            ("eta_w", self.eta_w > 0, "must be > 0"),
            ("eta_Pu", self.eta_Pu >= 0, "must be >= 0"),
            ("beta", self.beta >= 0, "must be >= 0"),
            ("alpha_floor", 0 <= self.alpha_floor <= 1.0 / K, f"must be in [0, 1/K] = [0, {1.0 / K:g}]"),
            ("outer_epochs", self.outer_epochs >= 0, "must be >= 0"),
            ("inner_epochs", self.inner_epochs >= 1, "must be >= 1"),
            ("T_inner", self.T_inner is None or self.T_inner >= 1, "must be >= 1"),
            ("batch_u", self.batch_u >= 1, "must be >= 1"),
            ("batch_l", self.batch_l >= 1, "must be >= 1"),
            ("momentum", 0 <= self.momentum < 1, "must be in [0, 1)"),
            ("langevin_variance", self.langevin_variance >= 0, "must be >= 0"),
            ("early_stop_tv", self.early_stop_tv >= 0, "must be >= 0"),
            ("init_scale", self.init_scale in ("unit", "fan_in"), "must be 'unit' or 'fan_in'"),
            ("resample_mode", self.resample_mode in ("fresh_gaussian", "reset_to_w0"),
             "must be 'fresh_gaussian' or 'reset_to_w0'"),
            ("delta_mode", self.delta_mode in ("batch_mean", "per_sample"),
             "must be 'batch_mean' or 'per_sample'"),
        ]
        for key, ok, msg in checks:
            if not ok:
                raise ValueError(f"{key}: {msg}, got {getattr(self, key)!r}")
        self.phase2.validate()

    def inner_steps(self, n_unlabeled: int) -> int:
        if self.T_inner is not None:
            return self.T_inner
        return self.inner_epochs * math.ceil(n_unlabeled / self.batch_u)


@dataclass
class PosteriorMatrix:
    P: np.ndarray
    floor: float = 0.0

    def is_feasible(self, tol: float = 1e-9) -> bool:
        if self.P.size == 0:
            return True
        return bool(np.all(np.abs(self.P.sum(axis=1) - 1) <= tol) and self.P.min() >= self.floor - 1e-12)


@dataclass
class LearningCurve:
    step_losses: np.ndarray
    epoch_boundaries: list


@dataclass
class InnerResult:
    deltaP: np.ndarray
    curve: LearningCurve
    final_params: ModelParams


@dataclass
class EpochDiagnostics:
    epoch: int
    cumulative_loss: float
    pseudo_label_accuracy: float
    posterior_entropy: float
    tv_change: float


@dataclass
class Phase1Report:
    posterior: PosteriorMatrix
    epochs: list
    initial_accuracy: float
    snapshots: dict = field(default_factory=dict)


def cumulative_loss(curve: LearningCurve) -> float:
    """Area under the learning curve: mean of the per-step batch losses."""
    losses = np.asarray(curve.step_losses, dtype=np.float64)
    if losses.size == 0:
        raise ValueError("cumulative loss of an empty learning curve")
    return float(losses.mean())


def pseudo_labels(P) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest class index."""
    P = P.P if isinstance(P, PosteriorMatrix) else np.asarray(P)
    return np.argmax(P, axis=1)


def posterior_accuracy(P, y_true) -> float:
    y_true = np.asarray(y_true)
    if y_true.size == 0:
        return float("nan")
    return float(np.mean(pseudo_labels(P) == y_true))


def posterior_entropy(P) -> float:
    P = P.P if isinstance(P, PosteriorMatrix) else np.asarray(P)
    if P.size == 0:
        return float("nan")
    return float(-(P * np.log(np.maximum(P, EPS))).sum(axis=1).mean())


def outer_epoch(P, deltaP, eta_Pu: float, alpha: float) -> PosteriorMatrix:
    P = P.P if isinstance(P, PosteriorMatrix) else np.asarray(P, dtype=np.float64)
    if P.shape != np.shape(deltaP):
        raise ValueError(f"posterior {P.shape} and update {np.shape(deltaP)} differ in shape")
    if P.size == 0:
        return PosteriorMatrix(P.copy(), alpha)
    return PosteriorMatrix(project_floor(P - eta_Pu * np.asarray(deltaP), alpha), alpha)


def inner_simulation(split: DatasetSplit, P, cfg: SaasConfig, outer_seed: int,
                     w0: ModelParams | None = None) -> InnerResult:
    """Run T_inner interleaved unlabeled/labeled SGD steps with the posterior frozen.

    After each full step t the unlabeled batch is pushed through the new
    weights w_t; its negative log-probabilities are added to the posterior
    gradient (the dependence of w_t on the posterior is ignored) and the
    posterior-weighted cross-entropy is appended to the learning curve.
    """
    P = P.P if isinstance(P, PosteriorMatrix) else np.asarray(P, dtype=np.float64)
    Xu = split.unlabeled_X
    nu, K = Xu.shape[0], split.K
    if P.shape != (nu, K):
        raise ValueError(f"posterior has shape {P.shape}, expected {(nu, K)}")
    if nu == 0:
        raise ValueError("inner simulation needs unlabeled samples")
    T = cfg.inner_steps(nu)
    params = w0.copy() if w0 is not None else init_params(
        cfg.arch, derive_seed(outer_seed, "init"), cfg.init_scale)
    state = OptimizerState.fresh(params, cfg.eta_w, cfg.momentum, cfg.langevin_variance)
    Xl, Pl = split.labeled.X, one_hot(split.labeled.y, K)
    labeled = cycle_batches(len(Xl), cfg.batch_l, derive_seed(outer_seed, "labeled")) if len(Xl) else None

    deltaP = np.zeros((nu, K))
    losses, bounds = [], []
    t, epoch = 0, 0
    while t < T:
        bounds.append(t)
        for b in epoch_batches(nu, cfg.batch_u, derive_seed(outer_seed, "unlabeled", epoch)).batches:
            if t == T:
                break
            rng = np.random.default_rng(derive_seed(outer_seed, "augment", t))
            xu = augment_batch(cfg.augmentation, Xu[b], rng)
            try:
                _, g = grads(params, xu, P[b], cfg.beta, include_entropy=True)
                params, state = sgd_step(params, g, state, derive_seed(outer_seed, "noise", t, 0))
                if labeled is not None:
                    lb = next(labeled)
                    _, g = grads(params, augment_batch(cfg.augmentation, Xl[lb], rng), Pl[lb])
                    params, state = sgd_step(params, g, state, derive_seed(outer_seed, "noise", t, 1))
                nll = -np.log(forward(params, xu))
            except NumericError as err:
                raise NumericError(f"step {t}: {err} (learning rate too large?)", err.layer, t) from err
            loss = float((nll * P[b]).sum(axis=1).mean())
            if not np.isfinite(loss):
                raise NumericError(f"step {t}: non-finite unlabeled loss", step=t)
            deltaP[b] += nll / len(b) if cfg.delta_mode == "batch_mean" else nll
            losses.append(loss)
            t += 1
        epoch += 1
    return InnerResult(deltaP, LearningCurve(np.array(losses), bounds), params)


def initial_posterior(n_unlabeled: int, K: int, cfg: SaasConfig) -> PosteriorMatrix:
    rng = np.random.default_rng(derive_seed(cfg.master_seed, "posterior-init"))
    raw = rng.standard_normal((n_unlabeled, K))
    if n_unlabeled == 0:
        return PosteriorMatrix(raw, cfg.alpha_floor)
    return PosteriorMatrix(project_floor(raw, cfg.alpha_floor), cfg.alpha_floor)


def run_phase1(split: DatasetSplit, cfg: SaasConfig, snapshot_at: Iterable[int] = (),
               progress: Callable[[EpochDiagnostics], None] | None = None) -> Phase1Report:
    """Estimate the unlabeled posterior over ``cfg.outer_epochs`` outer epochs.

    ``snapshot_at`` lists outer-epoch counts whose posterior is kept in
    ``report.snapshots`` (0 is the projected random start).
    """
    cfg.validate(split.K)
    snapshot_at = set(snapshot_at)
    post = initial_posterior(split.n_unlabeled, split.K, cfg)
    truth = split.unlabeled_true_y  # evaluation only
    report = Phase1Report(post, [], posterior_accuracy(post, truth))
    if 0 in snapshot_at:
        report.snapshots[0] = post.P.copy()
    if split.n_unlabeled == 0:
        return report

    w0 = None
    if cfg.resample_mode == "reset_to_w0":
        w0 = init_params(cfg.arch, derive_seed(cfg.master_seed, "w0"), cfg.init_scale)
    for m in range(1, cfg.outer_epochs + 1):
        inner = inner_simulation(split, post, cfg, derive_seed(cfg.master_seed, "phase1", m), w0=w0)
        new = outer_epoch(post, inner.deltaP, cfg.eta_Pu, cfg.alpha_floor)
        tv = float(0.5 * np.abs(new.P - post.P).sum(axis=1).mean())
        post = new
        diag = EpochDiagnostics(m, cumulative_loss(inner.curve), posterior_accuracy(post, truth),
                                posterior_entropy(post), tv)
        report.epochs.append(diag)
        if m in snapshot_at:
            report.snapshots[m] = post.P.copy()
        if progress is not None:
            progress(diag)
        if cfg.early_stop_tv > 0 and tv < cfg.early_stop_tv:
            break
    report.posterior = post
    return report


class HalvingSchedule:
    """Hold the rate for a window of epochs; halve it after any window without
    a validation improvement; finished once the rate drops below ``lr_stop``."""

    def __init__(self, lr0: float, window: int, lr_stop: float):
        self.lr, self.window, self.lr_stop = lr0, window, lr_stop
        self.history = [lr0]

    @property
    def done(self) -> bool:
        return self.lr < self.lr_stop

    def end_window(self, improved: bool) -> None:
        if not improved:
            self.lr /= 2
            if not self.done:
                self.history.append(self.lr)


def _accuracy(params: ModelParams, X, y) -> float:
    return float("nan") if len(y) == 0 else 1.0 - error_rate(params, X, y)


def train_supervised(split: DatasetSplit, y_u, cfg: SaasConfig, key: str = "phase2") -> ModelParams:
    """Two-half-step supervised training under the validation-driven halving schedule.

    With ``y_u`` given, each step takes an unlabeled batch with its
    pseudo-labels and then a labeled batch; an epoch is one pass over the
    unlabeled set.  With ``y_u=None`` only labeled steps are taken and an
    epoch is one pass over the labeled set.  No entropy term, no noise.
    """
    K = split.K
    seed = derive_seed(cfg.master_seed, key)
    params = init_params(cfg.arch, derive_seed(seed, "init"), cfg.init_scale)
    sched = HalvingSchedule(cfg.phase2.lr0, cfg.phase2.halve_after_epochs, cfg.phase2.lr_stop)
    state = OptimizerState.fresh(params, sched.lr, cfg.momentum)
    Xl, Pl = split.labeled.X, one_hot(split.labeled.y, K)
    use_u = y_u is not None and len(y_u) > 0
    if use_u:
        Xu, Pu = split.unlabeled_X, one_hot(y_u, K)
    if not use_u and len(Xl) == 0:
        raise ValueError("nothing to train on: no labeled samples and no pseudo-labels")
    labeled = cycle_batches(len(Xl), cfg.batch_l, derive_seed(seed, "labeled")) if len(Xl) else None
    val = split.validation
    best = _accuracy(params, val.X, val.y)

    epoch, step = 0, 0
    while not sched.done:
        state = OptimizerState(sched.lr, state.momentum, state.velocity)
        window_best = -np.inf
        for _ in range(sched.window):
            if use_u:
                batches = epoch_batches(len(Xu), cfg.batch_u, derive_seed(seed, "unlabeled", epoch)).batches
            else:
                batches = [None] * math.ceil(len(Xl) / cfg.batch_l)
            for b in batches:
                rng = np.random.default_rng(derive_seed(seed, "augment", step))
                try:
                    if use_u:
                        _, g = grads(params, augment_batch(cfg.augmentation, Xu[b], rng), Pu[b])
                        params, state = sgd_step(params, g, state)
                    if labeled is not None:
                        lb = next(labeled)
                        _, g = grads(params, augment_batch(cfg.augmentation, Xl[lb], rng), Pl[lb])
                        params, state = sgd_step(params, g, state)
                except NumericError as err:
                    raise NumericError(f"{key} step {step}: {err}", err.layer, step) from err
                step += 1
            epoch += 1
            acc = _accuracy(params, val.X, val.y)
            if acc > window_best:
                window_best = acc
        improved = bool(window_best > best)
        if improved:
            best = window_best
        sched.end_window(improved)
    return params


def run_phase2(split: DatasetSplit, y_hat, cfg: SaasConfig) -> tuple[ModelParams, dict]:
    y_hat = np.asarray(y_hat, dtype=np.int64)
    if y_hat.shape != (split.n_unlabeled,):
        raise ValueError(f"need {split.n_unlabeled} pseudo-labels, got {y_hat.shape}")
    params = train_supervised(split, y_hat, cfg)
    metrics = {
        "test_error": error_rate(params, split.test.X, split.test.y),
        "unlabeled_error": (float(np.mean(y_hat != split.unlabeled_true_y))
                            if y_hat.size else float("nan")),
        "validation_error": error_rate(params, split.validation.X, split.validation.y),
    }
    return params, metrics


def run_baseline(split: DatasetSplit, cfg: SaasConfig) -> dict:
    """Phase II training loop on the labeled set alone."""
    if len(split.labeled) == 0:
        raise ValueError("baseline needs a non-empty labeled set")
    params = train_supervised(split, None, cfg)
    return {
        "test_error": error_rate(params, split.test.X, split.test.y),
        "validation_error": error_rate(params, split.validation.X, split.validation.y),
    }


def run_saas(split: DatasetSplit, cfg: SaasConfig, progress=None) -> tuple[Phase1Report, dict]:
    """Phase I followed by Phase II on the MAP pseudo-labels."""
    report = run_phase1(split, cfg, progress=progress)
    _, metrics = run_phase2(split, pseudo_labels(report.posterior), cfg)
    return report, metrics
