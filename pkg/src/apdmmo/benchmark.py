"""Multimodal benchmark suite, evaluation budget and peak-counting metrics.

Functions follow the maximization convention of the niching benchmark:
every function has ``nkp`` global optima of equal fitness ``peak_value``.
F1-F10 are analytic.  F11-F20 are weighted compositions of basic functions
whose shifts and rotations are drawn from a seeded generator, so their
landscapes are reproducible but not identical to the official data files.
"""
from __future__ import annotations

import configparser
import threading
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, stats

__all__ = [
    "BudgetExhausted",
    "BudgetedEvaluator",
    "OutOfBounds",
    "ProblemSpec",
    "SolutionSet",
    "count_found_optima",
    "found_optima",
    "load_problem_table",
    "make_problem",
    "peak_ratio_success_rate",
    "PROBLEM_IDS",
]

PROBLEM_IDS = tuple(f"F{i}" for i in range(1, 21))


class BudgetExhausted(RuntimeError):
    """Raised when an evaluation would exceed ``max_fes``."""


class OutOfBounds(ValueError):
    """Raised when a point outside the box bounds is submitted."""


# ---------------------------------------------------------------------------
# analytic functions, all vectorized over rows of X with shape (n, d)
# ---------------------------------------------------------------------------

def five_uneven_peak_trap(X):
    x = X[:, 0]
    conds = [
        x < 2.5, x < 5.0, x < 7.5, x < 12.5,
        x < 17.5, x < 22.5, x < 27.5,
    ]
    vals = [
        80.0 * (2.5 - x), 64.0 * (x - 2.5), 64.0 * (7.5 - x), 28.0 * (x - 7.5),
        28.0 * (17.5 - x), 32.0 * (x - 17.5), 32.0 * (27.5 - x),
    ]
    return np.select(conds, vals, default=80.0 * (x - 27.5))


def equal_maxima(X):
    return np.sin(5.0 * np.pi * X[:, 0]) ** 6


def uneven_decreasing_maxima(X):
    x = X[:, 0]
    envelope = np.exp(-2.0 * np.log(2.0) * ((x - 0.08) / 0.854) ** 2)
    return envelope * np.sin(5.0 * np.pi * (x ** 0.75 - 0.05)) ** 6


def himmelblau(X):
    x, y = X[:, 0], X[:, 1]
    return 200.0 - (x ** 2 + y - 11.0) ** 2 - (x + y ** 2 - 7.0) ** 2


def six_hump_camel_back(X):
    x, y = X[:, 0], X[:, 1]
    x2 = x * x
    y2 = y * y
    return -((4.0 - 2.1 * x2 + x2 * x2 / 3.0) * x2 + x * y + (4.0 * y2 - 4.0) * y2)


def _shubert_1d(x):
    total = np.zeros_like(x)
    for j in range(1, 6):
        total += j * np.cos((j + 1) * x + j)
    return total


def shubert(X):
    return -np.prod(_shubert_1d(X), axis=1)


def vincent(X):
    return np.mean(np.sin(10.0 * np.log(X)), axis=1)


def modified_rastrigin(X):
    d = X.shape[1]
    k = {2: [3, 4], 8: [1, 2, 1, 2, 1, 3, 1, 4],
         16: [1, 1, 1, 2, 1, 1, 1, 2, 1, 1, 1, 3, 1, 1, 1, 4]}[d]
    k = np.asarray(k, dtype=float)
    return -np.sum(10.0 + 9.0 * np.cos(2.0 * np.pi * k * X), axis=1)


# ---------------------------------------------------------------------------
# basic functions used inside the compositions (minimization, min 0 at 0)
# ---------------------------------------------------------------------------

def _sphere(Z):
    return np.sum(Z * Z, axis=1)


def _griewank(Z):
    idx = np.sqrt(np.arange(1, Z.shape[1] + 1, dtype=float))
    return 1.0 + np.sum(Z * Z, axis=1) / 4000.0 - np.prod(np.cos(Z / idx), axis=1)


def _rastrigin(Z):
    return np.sum(Z * Z - 10.0 * np.cos(2.0 * np.pi * Z) + 10.0, axis=1)


_W_A = 0.5 ** np.arange(21)
_W_B = 3.0 ** np.arange(21)


def _weierstrass(Z):
    d = Z.shape[1]
    inner = np.cos(2.0 * np.pi * _W_B * (Z[:, :, None] + 0.5)) @ _W_A
    offset = d * np.dot(_W_A, np.cos(np.pi * _W_B))
    return inner.sum(axis=1) - offset


def _ef8f2(Z):
    Y = Z + 1.0
    nxt = np.roll(Y, -1, axis=1)
    f2 = 100.0 * (Y * Y - nxt) ** 2 + (1.0 - Y) ** 2
    return np.sum(1.0 + f2 * f2 / 4000.0 - np.cos(f2), axis=1)


_COMPOSITIONS = {
    "composition_1": dict(
        funcs=[_griewank, _griewank, _weierstrass, _weierstrass, _sphere, _sphere],
        sigma=[1.0] * 6,
        lam=[1.0, 1.0, 8.0, 8.0, 1.0 / 5.0, 1.0 / 5.0],
        rotate=False,
    ),
    "composition_2": dict(
        funcs=[_rastrigin, _rastrigin, _weierstrass, _weierstrass,
               _griewank, _griewank, _sphere, _sphere],
        sigma=[1.0] * 8,
        lam=[1.0, 1.0, 10.0, 10.0, 1.0 / 10.0, 1.0 / 10.0, 1.0 / 7.0, 1.0 / 7.0],
        rotate=False,
    ),
    "composition_3": dict(
        funcs=[_ef8f2, _ef8f2, _weierstrass, _weierstrass, _griewank, _griewank],
        sigma=[1.0, 1.0, 2.0, 2.0, 2.0, 2.0],
        lam=[1.0 / 4.0, 1.0 / 10.0, 2.0, 1.0, 2.0, 5.0],
        rotate=True,
    ),
    "composition_4": dict(
        funcs=[_rastrigin, _rastrigin, _ef8f2, _ef8f2,
               _weierstrass, _weierstrass, _griewank, _griewank],
        sigma=[1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0],
        lam=[4.0, 1.0, 4.0, 1.0, 1.0 / 10.0, 1.0 / 5.0, 1.0 / 10.0, 1.0 / 40.0],
        rotate=True,
    ),
}


class Composition:
    """Weighted composition of shifted/rotated basic functions.

    Every component has bias 0, so each shift vector is a global optimum
    with fitness exactly 0.
    """

    C = 2000.0

    def __init__(self, name: str, dim: int, seed: int, shift_range: float = 4.0):
        cfg = _COMPOSITIONS[name]
        self.funcs = cfg["funcs"]
        self.sigma = np.asarray(cfg["sigma"])
        self.lam = np.asarray(cfg["lam"])
        n = len(self.funcs)
        rng = np.random.default_rng(seed)
        self.shifts = rng.uniform(-shift_range, shift_range, size=(n, dim))
        if cfg["rotate"] and dim > 1:
            self.rotations = [stats.ortho_group.rvs(dim, random_state=rng) for _ in range(n)]
        else:
            self.rotations = [np.eye(dim) for _ in range(n)]
        x5 = np.full((1, dim), 5.0)
        self.fmax = np.array([
            f((x5 / lam) @ M)[0] for f, lam, M in zip(self.funcs, self.lam, self.rotations)
        ])

    def __call__(self, X):
        n_func = len(self.funcs)
        diff = X[None, :, :] - self.shifts[:, None, :]
        d = X.shape[1]
        w = np.exp(-np.sum(diff * diff, axis=2) / (2.0 * d * self.sigma[:, None] ** 2))
        maxw = w.max(axis=0)
        w = np.where(w != maxw, w * (1.0 - maxw ** 10), w)
        wsum = w.sum(axis=0)
        w = np.where(wsum == 0.0, 1.0 / n_func, w / np.where(wsum == 0.0, 1.0, wsum))
        total = np.zeros(X.shape[0])
        for i, f in enumerate(self.funcs):
            z = (diff[i] / self.lam[i]) @ self.rotations[i]
            total += w[i] * (self.C * f(z) / self.fmax[i])
        return -total


# ---------------------------------------------------------------------------
# catalogued optimum positions
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _shubert_extrema():
    """Positions in [-10, 10] of the three global minima and maxima of the 1-D Shubert factor."""
    grid = np.linspace(-10.0, 10.0, 200001)
    g = _shubert_1d(grid)

    def refine(sign):
        vals = sign * g
        # local minima on the grid
        idx = np.where((vals[1:-1] < vals[:-2]) & (vals[1:-1] <= vals[2:]))[0] + 1
        best = vals[idx].min()
        idx = idx[vals[idx] < best + 1e-3]
        out = []
        for i in idx:
            res = optimize.minimize_scalar(
                lambda t: sign * _shubert_1d(np.array([t]))[0],
                bracket=(grid[i - 1], grid[i], grid[i + 1]), tol=1e-14,
            )
            out.append(res.x)
        return np.array(sorted(out))

    return refine(1.0), refine(-1.0)


def _refine_max(func, x0, bounds):
    res = optimize.minimize(
        lambda x: -func(np.atleast_2d(x))[0], x0, method="L-BFGS-B",
        bounds=bounds, options={"ftol": 1e-15, "gtol": 1e-12},
    )
    return res.x


def _known_optima(name: str, dim: int, bounds, objective) -> np.ndarray | None:
    if name == "five_uneven_peak_trap":
        return np.array([[0.0], [30.0]])
    if name == "equal_maxima":
        return np.array([[0.1], [0.3], [0.5], [0.7], [0.9]])
    if name == "himmelblau":
        starts = [(3.0, 2.0), (-2.805118, 3.131312), (-3.779310, -3.283186), (3.584428, -1.848126)]
        return np.array([_refine_max(objective, s, bounds) for s in starts])
    if name == "six_hump_camel_back":
        starts = [(0.0898, -0.7126), (-0.0898, 0.7126)]
        return np.array([_refine_max(objective, s, bounds) for s in starts])
    if name == "shubert":
        mins, maxs = _shubert_extrema()
        pts = []
        for low_axis in range(dim):
            grids = [mins if a == low_axis else maxs for a in range(dim)]
            for combo in np.stack(np.meshgrid(*grids, indexing="ij"), -1).reshape(-1, dim):
                pts.append(combo)
        return np.array(pts)
    if name == "vincent":
        axis = np.exp((np.pi / 2 + 2 * np.pi * np.arange(-3, 5)) / 10.0)
        axis = axis[(axis >= 0.25) & (axis <= 10.0)]
        return np.stack(np.meshgrid(*[axis] * dim, indexing="ij"), -1).reshape(-1, dim)
    if name == "modified_rastrigin":
        axes = [(2 * np.arange(k) + 1) / (2.0 * k) for k in (3, 4)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, dim)
    if isinstance(objective, Composition):
        return objective.shifts.copy()
    # uneven_decreasing_maxima: the single peak sits near x=0.08 but its
    # value is not exactly the tabulated 1.0, so no position is catalogued
    return None


_FUNCTIONS: dict[str, Callable] = {
    "five_uneven_peak_trap": five_uneven_peak_trap,
    "equal_maxima": equal_maxima,
    "uneven_decreasing_maxima": uneven_decreasing_maxima,
    "himmelblau": himmelblau,
    "six_hump_camel_back": six_hump_camel_back,
    "shubert": shubert,
    "vincent": vincent,
    "modified_rastrigin": modified_rastrigin,
}


# ---------------------------------------------------------------------------
# problem table, spec and evaluator
# ---------------------------------------------------------------------------

def _parse_bounds(text: str, dim: int):
    parts = [p.strip() for p in text.split(",") if p.strip()]
    pairs = []
    for p in parts:
        lo, hi = p.split(":")
        pairs.append((float(lo), float(hi)))
    if len(pairs) == 1:
        pairs = pairs * dim
    if len(pairs) != dim:
        raise ValueError(f"bounds {text!r} do not match dim={dim}")
    return pairs


def load_problem_table(path: str | Path | None = None) -> dict[str, dict]:
    """Read the per-function settings table.

    With ``path=None`` the bundled table is used; otherwise ``path`` is read on
    top of the bundled table, so an override file may list only the keys it
    changes.
    """
    parser = configparser.ConfigParser()
    parser.read_string(resources.files("apdmmo.data").joinpath("problems.ini").read_text())
    if path is not None:
        with open(path) as fh:
            parser.read_file(fh)
    table = {}
    for pid in parser.sections():
        sec = parser[pid]
        dim = sec.getint("dim")
        table[pid] = dict(
            name=sec["name"],
            dim=dim,
            bounds=_parse_bounds(sec["bounds"], dim),
            nkp=sec.getint("nkp"),
            peak_value=sec.getfloat("peak_value"),
            niche_radius=sec.getfloat("niche_radius"),
            max_fes=sec.getint("max_fes"),
        )
    return table


@dataclass(frozen=True)
class ProblemSpec:
    id: str
    dim: int
    lower: tuple
    upper: tuple
    nkp: int
    peak_value: float
    niche_radius: float
    max_fes: int
    objective: Callable = field(compare=False, repr=False)
    known_optima: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if len(self.lower) != self.dim or len(self.upper) != self.dim:
            raise ValueError("bounds do not match dimension")
        if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("every lower bound must be below its upper bound")
        if self.nkp < 1 or self.niche_radius <= 0 or self.max_fes <= 0:
            raise ValueError("nkp, niche_radius and max_fes must be positive")

    @property
    def lb(self) -> np.ndarray:
        return np.asarray(self.lower, dtype=float)

    @property
    def ub(self) -> np.ndarray:
        return np.asarray(self.upper, dtype=float)

    def __call__(self, X) -> np.ndarray:
        """Unbudgeted evaluation, for oracles and plotting only."""
        return self.objective(np.atleast_2d(np.asarray(X, dtype=float)))


class BudgetedEvaluator:
    """Counts every evaluation and refuses to go past ``max_fes``.

    The counter is guarded by a lock so that concurrent batch submissions
    are neither lost nor double counted.
    """

    def __init__(self, problem: ProblemSpec, max_fes: int | None = None):
        self.problem = problem
        self.max_fes = problem.max_fes if max_fes is None else int(max_fes)
        self._used = 0
        self._lock = threading.Lock()

    @property
    def used_fes(self) -> int:
        return self._used

    @property
    def remaining(self) -> int:
        return self.max_fes - self._used

    def evaluate(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.problem.dim:
            raise ValueError(f"expected points of dimension {self.problem.dim}, got {X.shape[1]}")
        if np.any(X < self.problem.lb) or np.any(X > self.problem.ub):
            raise OutOfBounds("point outside the search box")
        n = X.shape[0]
        with self._lock:
            if self._used + n > self.max_fes:
                raise BudgetExhausted(
                    f"{n} evaluations requested, {self.max_fes - self._used} remaining"
                )
            self._used += n
        return self.problem.objective(X)

    __call__ = evaluate


def make_problem(
    problem_id: str, seed: int = 0, table: dict | None = None
) -> tuple[ProblemSpec, BudgetedEvaluator]:
    """Build the spec and a fresh budgeted evaluator for ``problem_id``.

    ``seed`` only matters for the composition functions F11-F20, where it
    fixes the shift vectors and rotation matrices.
    """
    table = load_problem_table() if table is None else table
    if problem_id not in table:
        raise KeyError(f"unknown problem {problem_id!r}")
    row = table[problem_id]
    name, dim = row["name"], row["dim"]
    if name in _FUNCTIONS:
        objective = _FUNCTIONS[name]
    elif name in _COMPOSITIONS:
        objective = Composition(name, dim, seed)
    else:
        raise KeyError(f"unknown function {name!r} for {problem_id}")
    lower = tuple(lo for lo, _ in row["bounds"])
    upper = tuple(hi for _, hi in row["bounds"])
    optima = _known_optima(name, dim, row["bounds"], objective)
    spec = ProblemSpec(
        id=problem_id, dim=dim, lower=lower, upper=upper, nkp=row["nkp"],
        peak_value=row["peak_value"], niche_radius=row["niche_radius"],
        max_fes=row["max_fes"], objective=objective, known_optima=optima,
    )
    return spec, BudgetedEvaluator(spec)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

@dataclass
class SolutionSet:
    """Solutions in maximization convention (raw fitness)."""

    points: list = field(default_factory=list)

    def add(self, x, fitness: float):
        self.points.append((np.asarray(x, dtype=float).copy(), float(fitness)))

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def arrays(self, dim: int) -> tuple[np.ndarray, np.ndarray]:
        if not self.points:
            return np.empty((0, dim)), np.empty(0)
        X = np.array([p for p, _ in self.points], dtype=float).reshape(-1, dim)
        y = np.array([f for _, f in self.points], dtype=float)
        return X, y


def found_optima(problem: ProblemSpec, solutions: SolutionSet, accuracy: float) -> np.ndarray:
    """Seeds of the distinct global optima found at ``accuracy``.

    Solutions are visited by fitness descending (stable, so ties keep their
    insertion order). A solution is accepted when it is within ``accuracy`` of
    the peak value and farther than the niche radius from every accepted seed.
    """
    if accuracy <= 0:
        raise ValueError("accuracy must be positive")
    X, y = solutions.arrays(problem.dim)
    seeds: list[np.ndarray] = []
    for i in np.argsort(-y, kind="stable"):
        if problem.peak_value - y[i] > accuracy:
            break
        if all(np.linalg.norm(X[i] - s) > problem.niche_radius for s in seeds):
            seeds.append(X[i])
            if len(seeds) == problem.nkp:
                break
    return np.array(seeds).reshape(-1, problem.dim)


def count_found_optima(problem: ProblemSpec, solutions: SolutionSet, accuracy: float) -> int:
    """Number of global optima found at ``accuracy`` (see :func:`found_optima`)."""
    return len(found_optima(problem, solutions, accuracy))


def peak_ratio_success_rate(npf_per_run: Sequence[int], nkp: int) -> tuple[float, float]:
    npf = np.asarray(npf_per_run, dtype=int)
    if npf.size == 0:
        raise ValueError("need at least one run")
    if np.any(npf > nkp) or np.any(npf < 0):
        raise ValueError("found-optima counts must lie in [0, nkp]")
    pr = npf.sum() / (nkp * npf.size)
    sr = np.count_nonzero(npf == nkp) / npf.size
    return float(pr), float(sr)
