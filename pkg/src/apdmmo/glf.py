"""Global landscape fitting: sample the objective, then fit the surrogate.

The dataset is a uniform random sample of the search box.  Targets are the
*negated* fitness values, so that every stage downstream minimizes.  Samples
are split into ``s`` equal-width objective-value levels and each mini-batch
draws the same number of samples from every nonempty level (EPM sampling),
which keeps the rare high-fitness region from being drowned out by the bulk.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .benchmark import BudgetedEvaluator
from .landscape_model import (
    ModelParams, NonFiniteError, Normalization, loss_and_param_grads, predict_raw,
)

__all__ = [
    "AdamWState", "TrainConfig", "TrainingDataset", "TrainingDiverged",
    "adamw_step", "assign_levels", "build_dataset", "dump_dataset", "load_dataset",
    "make_dataset", "sample_epm_batch", "standardized_mse", "train", "write_loss_trace",
]


class TrainingDiverged(NonFiniteError):
    """Training hit a non-finite loss.  ``trace`` holds the epochs completed."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class TrainingDataset:
    X_raw: np.ndarray
    X_norm: np.ndarray
    y_raw: np.ndarray  # negated fitness, lower is better
    y_std: np.ndarray
    level: np.ndarray
    norm: Normalization
    n_levels: int

    def __len__(self):
        return len(self.y_raw)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 400
    batch_size: int = 400
    learning_rate: float = 5e-4
    levels: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.levels) < 1:
            raise ValueError("epochs, batch_size and levels must be >= 1")
        if self.learning_rate <= 0 or self.eps <= 0 or self.weight_decay < 0:
            raise ValueError("learning_rate and eps must be positive, weight_decay >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")


def assign_levels(y, s: int) -> np.ndarray:
    """Equal-width level index in [0, s) for each value of ``y``."""
    y = np.asarray(y, dtype=float)
    lo, hi = y.min(), y.max()
    if hi <= lo:
        return np.zeros(len(y), dtype=int)
    lev = np.floor((y - lo) / (hi - lo) * s).astype(int)
    return np.minimum(lev, s - 1)


def _standardize(y):
    mean = float(np.mean(y))
    std = float(np.std(y))
    if not std > 0:
        std = 1.0  # constant targets: keep them at zero
    return mean, std


def make_dataset(X_raw, fitness, lower, upper, levels: int = 10) -> TrainingDataset:
    """Wrap already-evaluated samples (maximization fitness) as a dataset."""
    X_raw = np.atleast_2d(np.asarray(X_raw, dtype=float))
    y_raw = -np.asarray(fitness, dtype=float)
    norm = Normalization.from_bounds(lower, upper)
    norm.y_mean, norm.y_std = _standardize(y_raw)
    return TrainingDataset(
        X_raw=X_raw, X_norm=norm.normalize_x(X_raw), y_raw=y_raw,
        y_std=norm.normalize_y(y_raw), level=assign_levels(y_raw, levels),
        norm=norm, n_levels=levels,
    )


def build_dataset(evaluator: BudgetedEvaluator, r: float, seed: int = 0,
                  levels: int = 10) -> TrainingDataset:
    """Draw ``floor(r * max_fes)`` uniform samples and evaluate them once each."""
    if not 0 < r < 1:
        raise ValueError("r must lie strictly between 0 and 1")
    m = int(math.floor(r * evaluator.max_fes))
    if m < 1:
        raise ValueError("r * max_fes leaves no training samples")
    prob = evaluator.problem
    rng = np.random.default_rng(seed)
    X = prob.lb + rng.random((m, prob.dim)) * (prob.ub - prob.lb)
    f = evaluator.evaluate(X)
    return make_dataset(X, f, prob.lb, prob.ub, levels)


def sample_epm_batch(dataset: TrainingDataset, n_batch: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of one stratified batch.

    Nonempty levels (in ascending order) each receive ``n_batch // L``
    indices and the first ``n_batch % L`` of them one more.  A level with
    enough members is sampled without replacement, a sparse one with.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    present = np.unique(dataset.level)
    base, extra = divmod(n_batch, len(present))
    parts = []
    for i, lev in enumerate(present):
        quota = base + (1 if i < extra else 0)
        if quota == 0:
            continue
        members = np.flatnonzero(dataset.level == lev)
        parts.append(rng.choice(members, size=quota, replace=len(members) < quota))
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# AdamW
# ---------------------------------------------------------------------------

@dataclass
class AdamWState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adamw_step(state: AdamWState, params: dict, grads: dict, lr: float,
               beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
               weight_decay: float = 0.01) -> None:
    """One in-place AdamW update of the arrays in ``params``.

    theta -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)
    """
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {name}")
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        theta = params[name]
        theta -= lr * ((m / c1) / (np.sqrt(v / c2) + eps) + weight_decay * theta)
        if not np.all(np.isfinite(theta)):
            raise NonFiniteError(f"parameter {name} became non-finite")


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def train(params: ModelParams, dataset: TrainingDataset, config: TrainConfig = TrainConfig()):
    """Fit ``params`` to the dataset.  Returns ``(trained_params, loss_trace)``.

    Each epoch runs ``ceil(M / batch_size)`` EPM batches; the trace holds the
    mean batch loss of every epoch.  The input ``params`` are not modified.
    """
    if params.config.input_dim != dataset.X_norm.shape[1]:
        raise ValueError("model input_dim does not match the dataset dimension")
    out = params.copy()
    out.norm = dataset.norm
    rng = np.random.default_rng(config.seed)
    state = AdamWState()
    n_batches = math.ceil(len(dataset) / config.batch_size)
    trace = []
    for epoch in range(config.epochs):
        total = 0.0
        for _ in range(n_batches):
            idx = sample_epm_batch(dataset, config.batch_size, rng)
            try:
                loss, grads = loss_and_param_grads(out, dataset.X_norm[idx], dataset.y_std[idx],
                                                   mode="train", rng=rng)
                adamw_step(state, out.arrays, grads, config.learning_rate, config.beta1,
                           config.beta2, config.eps, config.weight_decay)
            except NonFiniteError as exc:
                raise TrainingDiverged(f"diverged in epoch {epoch + 1}: {exc}", trace) from exc
            total += loss
        trace.append(total / n_batches)
    return out, np.array(trace)


def standardized_mse(params: ModelParams, X_raw, fitness) -> float:
    """MSE between model and ``-fitness`` in the model's standardized units."""
    pred = predict_raw(params, X_raw)
    err = (pred - (-np.asarray(fitness, dtype=float))) / params.norm.y_std
    return float(np.mean(err * err))


# ---------------------------------------------------------------------------
# text dumps
# ---------------------------------------------------------------------------

def dump_dataset(dataset: TrainingDataset, path: str | Path) -> None:
    """Columns x_1..x_d, y (raw fitness, maximization sign)."""
    d = dataset.X_raw.shape[1]
    header = " ".join([f"x{i + 1}" for i in range(d)] + ["y"])
    np.savetxt(path, np.column_stack([dataset.X_raw, -dataset.y_raw]), header=header,
               fmt="%.17g")


def load_dataset(path: str | Path, lower, upper, levels: int = 10) -> TrainingDataset:
    data = np.loadtxt(path, ndmin=2)
    return make_dataset(data[:, :-1], data[:, -1], lower, upper, levels)


def write_loss_trace(trace, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(trace, 1):
            w.writerow([i, repr(float(v))])
