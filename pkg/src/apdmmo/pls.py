"""Parallel local search: separable CMA-ES launched from archive centers.

The strategy keeps a diagonal covariance only, which makes one generation
O(lambda * d).  Constants are those of standard CMA-ES; the covariance
learning rate is multiplied by (d + 2) / 3 as the separable variant
prescribes, since a diagonal has far fewer degrees of freedom to learn.

Everything here minimizes.  Raw fitness (maximized by the benchmark) is
negated on the way in and reported back in raw units.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .benchmark import BudgetedEvaluator, SolutionSet

__all__ = [
    "LaunchRecord", "SepCmaConfig", "SepCmaState", "ask", "init_state",
    "round_robin_search", "run_local_search", "tell", "write_trace",
]


@dataclass(frozen=True)
class SepCmaConfig:
    popsize: int = 8
    sigma0: float = 0.1
    max_generations: int = 200
    es_threshold: float = 1e-5
    es_window: int | None = None  # None means 20 * popsize

    def __post_init__(self):
        if self.popsize < 2 or self.sigma0 <= 0 or self.max_generations < 1:
            raise ValueError("need popsize >= 2, sigma0 > 0 and max_generations >= 1")
        if self.es_threshold < 0 or (self.es_window is not None and self.es_window < 1):
            raise ValueError("invalid early-stop settings")

    @property
    def window(self) -> int:
        return 20 * self.popsize if self.es_window is None else self.es_window

    @classmethod
    def for_dim(cls, dim: int, **overrides) -> "SepCmaConfig":
        popsize = 8 if dim < 5 else (10 if dim < 20 else 20)
        sigma0 = 0.1 if dim < 5 else 0.5
        return cls(**{"popsize": popsize, "sigma0": sigma0, **overrides})


@dataclass
class SepCmaState:
    mean: np.ndarray
    sigma: float
    cov: np.ndarray  # diagonal entries
    p_sigma: np.ndarray
    p_c: np.ndarray
    weights: np.ndarray
    mu_eff: float
    c_sigma: float
    d_sigma: float
    c_c: float
    c_cov: float
    chi_n: float
    popsize: int
    generation: int = 0
    best_f: float = math.inf
    best_x: np.ndarray | None = None
    anchor_f: float = math.inf  # best value at the last counted improvement
    stale: int = 0  # evaluations since the last counted improvement
    es_threshold: float = 1e-5


def init_state(center, config: SepCmaConfig, dim: int | None = None) -> SepCmaState:
    m = np.asarray(center, dtype=float).ravel().copy()
    n = len(m) if dim is None else dim
    if len(m) != n:
        raise ValueError("center does not match dim")
    lam = config.popsize
    mu = lam // 2
    w = math.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    w /= w.sum()
    mu_eff = 1.0 / np.sum(w * w)
    c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0)
    d_sigma = 1.0 + 2.0 * max(0.0, math.sqrt((mu_eff - 1.0) / (n + 1.0)) - 1.0) + c_sigma
    c_c = 4.0 / (n + 4.0)
    mu_cov = mu_eff
    c_cov = (1.0 / mu_cov) * 2.0 / (n + math.sqrt(2.0)) ** 2 + (1.0 - 1.0 / mu_cov) * min(
        1.0, (2.0 * mu_eff - 1.0) / ((n + 2.0) ** 2 + mu_eff))
    c_cov = min(1.0, c_cov * (n + 2.0) / 3.0)
    chi_n = math.sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n))
    return SepCmaState(
        mean=m, sigma=float(config.sigma0), cov=np.ones(n), p_sigma=np.zeros(n),
        p_c=np.zeros(n), weights=w, mu_eff=float(mu_eff), c_sigma=c_sigma, d_sigma=d_sigma,
        c_c=c_c, c_cov=c_cov, chi_n=chi_n, popsize=lam, es_threshold=config.es_threshold,
    )


def ask(state: SepCmaState, rng: np.random.Generator, lower=None, upper=None) -> np.ndarray:
    """``popsize`` candidates m + sigma * sqrt(c) * z, clamped to the box."""
    z = rng.standard_normal((state.popsize, len(state.mean)))
    X = state.mean + state.sigma * np.sqrt(state.cov) * z
    if lower is not None:
        X = np.clip(X, lower, upper)
    return X


def record(state: SepCmaState, X, f) -> None:
    """Per-evaluation bookkeeping of best-so-far and the stagnation counter."""
    for x, v in zip(X, f):
        if v < state.best_f:
            state.best_f = float(v)
            state.best_x = np.array(x, dtype=float)
        if v < state.anchor_f - state.es_threshold or not math.isfinite(state.anchor_f):
            state.anchor_f = float(v)
            state.stale = 0
        else:
            state.stale += 1


def tell(state: SepCmaState, X, f) -> None:
    """Update the strategy from one full generation (minimization)."""
    X = np.asarray(X, dtype=float)
    f = np.asarray(f, dtype=float)
    if len(f) != state.popsize or X.shape[0] != state.popsize:
        raise ValueError("tell needs exactly popsize candidates")
    if not np.all(np.isfinite(f)):
        raise FloatingPointError("non-finite fitness")
    record(state, X, f)
    n = len(state.mean)
    mu = len(state.weights)
    idx = np.argsort(f, kind="stable")[:mu]
    Y = (X[idx] - state.mean) / state.sigma
    y_w = state.weights @ Y
    state.mean = state.mean + state.sigma * y_w

    cs, cc = state.c_sigma, state.c_c
    state.p_sigma = (1.0 - cs) * state.p_sigma + math.sqrt(cs * (2.0 - cs) * state.mu_eff) * (
        y_w / np.sqrt(state.cov))
    g = state.generation + 1
    norm_ps = float(np.linalg.norm(state.p_sigma))
    h_sigma = norm_ps / math.sqrt(1.0 - (1.0 - cs) ** (2 * g)) < (
        1.4 + 2.0 / (n + 1.0)) * state.chi_n
    state.p_c = (1.0 - cc) * state.p_c + h_sigma * math.sqrt(cc * (2.0 - cc) * state.mu_eff) * y_w

    c1 = state.c_cov / state.mu_eff
    cmu = state.c_cov * (1.0 - 1.0 / state.mu_eff)
    rank_one = state.p_c ** 2 + (0.0 if h_sigma else cc * (2.0 - cc)) * state.cov
    rank_mu = state.weights @ (Y * Y)
    state.cov = (1.0 - state.c_cov) * state.cov + c1 * rank_one + cmu * rank_mu
    state.sigma *= math.exp((cs / state.d_sigma) * (norm_ps / state.chi_n - 1.0))
    state.generation = g


# ---------------------------------------------------------------------------
# budgeted launches
# ---------------------------------------------------------------------------

@dataclass
class LaunchRecord:
    center_index: int
    evaluations: int
    generations: int
    best_x: np.ndarray
    best_fitness: float  # raw, maximization sign
    stop: str  # "stagnation", "generations", "budget"
    trace: list = field(default_factory=list)  # (generation, best raw fitness, sigma)


def run_local_search(evaluator: BudgetedEvaluator, center, config: SepCmaConfig,
                     rng: np.random.Generator, budget: int | None = None,
                     center_index: int = 0, keep_trace: bool = False) -> LaunchRecord:
    """One sep-CMA-ES launch from ``center``; spends at most ``budget`` evaluations.

    Stops on stagnation (``window`` evaluations without an improvement larger
    than ``es_threshold``), after ``max_generations`` or when the budget runs
    out.  A generation cut short by the stagnation window or the budget is
    evaluated only in part and is not passed to ``tell``.
    """
    budget = evaluator.remaining if budget is None else min(budget, evaluator.remaining)
    if budget <= 0:
        raise ValueError("no evaluations left for a local search")
    prob = evaluator.problem
    state = init_state(np.clip(center, prob.lb, prob.ub), config, prob.dim)
    lam = state.popsize
    window = config.window
    used = 0
    stop = "generations"
    trace = []
    for _ in range(config.max_generations):
        X = ask(state, rng, prob.lb, prob.ub)
        allowed = min(lam, budget - used)
        # never evaluate more than `window` candidates past the last counted
        # improvement; the very first evaluation sets the baseline
        allowed = min(allowed, window - state.stale if math.isfinite(state.anchor_f)
                      else window + 1)
        f = -evaluator.evaluate(X[:allowed])
        used += allowed
        if allowed < lam:
            record(state, X[:allowed], f)
            stop = "budget" if used >= budget else "stagnation"
            break
        tell(state, X, f)
        if keep_trace:
            trace.append((state.generation, -state.best_f, state.sigma))
        if state.stale >= window:
            stop = "stagnation"
            break
        if used >= budget:
            stop = "budget"
            break
    return LaunchRecord(center_index, used, state.generation, state.best_x, -state.best_f,
                        stop, trace)


def launch_rng(seed: int, launch: int) -> np.random.Generator:
    """Independent stream for launch number ``launch`` of a run seeded with ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([seed, launch]))


def round_robin_search(evaluator: BudgetedEvaluator, centers, config: SepCmaConfig,
                       budget: int, seed: int = 0, keep_trace: bool = False):
    """Cycle over ``centers`` in order until ``budget`` evaluations are spent.

    Returns ``(solutions, launches)``: the best point of every launch and
    the per-launch records.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    if len(centers) == 0:
        raise ValueError("empty archive")
    budget = min(budget, evaluator.remaining)
    solutions = SolutionSet()
    launches = []
    used = 0
    k = 0
    while used < budget:
        i = k % len(centers)
        rec = run_local_search(evaluator, centers[i], config, launch_rng(seed, k),
                               budget - used, i, keep_trace)
        used += rec.evaluations
        solutions.add(rec.best_x, rec.best_fitness)
        launches.append(rec)
        k += 1
    return solutions, launches


def write_trace(launches, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["launch", "center", "generation", "best_fitness", "sigma"])
        for k, rec in enumerate(launches):
            for g, best, sigma in rec.trace:
                w.writerow([k, rec.center_index, g, repr(best), repr(sigma)])
