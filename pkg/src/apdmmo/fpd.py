"""Free-of-trial peak detection on a trained surrogate.

Many uniformly drawn start points are pushed downhill on the surrogate
(no true evaluations are spent), the end points are clustered with DBSCAN,
and the lowest-predicted member of each cluster becomes a candidate peak.

Descent runs in the model's normalized coordinates, where the box is
[-1, 1]^d.  Each start point carries its own optimizer state, so the
result for a point does not depend on which other points share its chunk.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .landscape_model import ModelParams, NonFiniteError, forward_and_grad_input

__all__ = [
    "ClusterConfig", "DescentConfig", "DescentResult", "EmptyArchiveError", "PeakArchive",
    "build_archive", "cluster_coordinates", "dbscan", "default_cluster_config", "dump_points",
    "multistart_descent",
    "run_fpd",
]

NOISE = -1
_START_BLOCK = 65536  # starts are drawn in fixed blocks so chunking never changes them


class EmptyArchiveError(RuntimeError):
    """Every converged point was labelled noise."""


@dataclass(frozen=True)
class DescentConfig:
    n_starts: int = 100_000
    step_size: float = 0.005
    steps: int = 3000
    optimizer: str = "ADAMW"  # or "VANILLA"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    chunk: int = 4096
    # rows per network call inside a chunk; small enough to stay in cache
    eval_chunk: int = 256
    # a point stops once its largest coordinate move stays below freeze_tol
    # for freeze_patience consecutive steps; freeze_tol = 0 disables this
    freeze_tol: float = 0.0
    freeze_patience: int = 10

    def __post_init__(self):
        if min(self.n_starts, self.steps, self.chunk, self.eval_chunk) < 1:
            raise ValueError("n_starts, steps, chunk and eval_chunk must be >= 1")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.optimizer not in ("ADAMW", "VANILLA"):
            raise ValueError("optimizer must be ADAMW or VANILLA")
        if self.freeze_tol < 0 or self.freeze_patience < 1:
            raise ValueError("freeze_tol must be >= 0 and freeze_patience >= 1")

    @staticmethod
    def steps_for_dim(dim: int) -> int:
        return 3000 if dim < 20 else 5000


@dataclass(frozen=True)
class ClusterConfig:
    eps: float = 0.1
    min_pts: int = 2
    space: str = "unit"  # "unit": box mapped to [0,1]^d, "raw": problem units

    def __post_init__(self):
        if self.eps <= 0 or self.min_pts < 1:
            raise ValueError("eps must be positive and min_pts >= 1")
        if self.space not in ("unit", "raw"):
            raise ValueError("space must be 'unit' or 'raw'")


def default_cluster_config(dim: int, space: str = "unit") -> ClusterConfig:
    if dim < 5:
        return ClusterConfig(0.1, 2, space)
    if dim < 10:
        return ClusterConfig(0.1, 20, space)
    return ClusterConfig(0.2, 40, space)


@dataclass
class DescentResult:
    points: np.ndarray  # problem coordinates
    predicted: np.ndarray  # surrogate value, minimization sign, raw units
    steps_taken: np.ndarray


@dataclass
class PeakArchive:
    centers: np.ndarray  # (k, d) problem coordinates
    predicted: np.ndarray  # ascending
    cluster_sizes: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))

    def __len__(self):
        return len(self.predicted)


# ---------------------------------------------------------------------------
# multi-start descent
# ---------------------------------------------------------------------------

def _starts(seed: int, n: int, d: int) -> np.ndarray:
    blocks = math.ceil(n / _START_BLOCK)
    children = np.random.SeedSequence(seed).spawn(blocks)
    out = np.empty((n, d))
    for i, child in enumerate(children):
        lo = i * _START_BLOCK
        hi = min(lo + _START_BLOCK, n)
        out[lo:hi] = np.random.default_rng(child).uniform(-1.0, 1.0, size=(hi - lo, d))
    return out


def _descend_chunk(model: ModelParams, U: np.ndarray, cfg: DescentConfig) -> np.ndarray:
    """Run the descent on the rows of ``U`` (normalized coordinates) in place."""
    n = len(U)
    steps_taken = np.zeros(n, dtype=int)
    adam = cfg.optimizer == "ADAMW"
    if adam:
        M = np.zeros_like(U)
        V = np.zeros_like(U)
    calm = np.zeros(n, dtype=int)
    active = np.arange(n)
    for t in range(1, cfg.steps + 1):
        if len(active) == 0:
            break
        X = U[active]
        _, G = forward_and_grad_input(model, X, cfg.eval_chunk)
        if not np.all(np.isfinite(G)):
            raise NonFiniteError("non-finite surrogate gradient during descent")
        if adam:
            m = M[active] * cfg.beta1 + (1.0 - cfg.beta1) * G
            v = V[active] * cfg.beta2 + (1.0 - cfg.beta2) * G * G
            M[active] = m
            V[active] = v
            # per-point step count equals t while a point is active
            step = cfg.step_size * (m / (1.0 - cfg.beta1 ** t)) / (
                np.sqrt(v / (1.0 - cfg.beta2 ** t)) + cfg.eps)
        else:
            step = cfg.step_size * G
        Xn = np.clip(X - step, -1.0, 1.0)
        U[active] = Xn
        steps_taken[active] = t
        if cfg.freeze_tol > 0:
            moved = np.max(np.abs(Xn - X), axis=1)
            c = np.where(moved < cfg.freeze_tol, calm[active] + 1, 0)
            calm[active] = c
            active = active[c < cfg.freeze_patience]
    return steps_taken


def multistart_descent(model: ModelParams, config: DescentConfig = DescentConfig(),
                       seed: int = 0) -> DescentResult:
    """Descend from ``n_starts`` uniform points.  Spends no true evaluations."""
    if model.norm is None:
        raise ValueError("model has no normalization metadata; train it first")
    d = model.config.input_dim
    U = _starts(seed, config.n_starts, d)
    steps = np.empty(config.n_starts, dtype=int)
    pred = np.empty(config.n_starts)
    for lo in range(0, config.n_starts, config.chunk):
        hi = min(lo + config.chunk, config.n_starts)
        chunk = U[lo:hi].copy()
        steps[lo:hi] = _descend_chunk(model, chunk, config)
        U[lo:hi] = chunk
        pred[lo:hi] = forward_and_grad_input(model, chunk, config.eval_chunk)[0]
    X = np.clip(model.norm.denormalize_x(U), model.norm.x_center - model.norm.x_half,
                model.norm.x_center + model.norm.x_half)
    return DescentResult(points=X, predicted=model.norm.denormalize_y(pred), steps_taken=steps)


# ---------------------------------------------------------------------------
# DBSCAN
# ---------------------------------------------------------------------------

class _UnionFind:
    def __init__(self, n):
        self.parent = np.arange(n)

    def find(self, i):
        root = i
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[i] != root:
            self.parent[i], i = root, self.parent[i]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            if ra < rb:
                self.parent[rb] = ra
            else:
                self.parent[ra] = rb


def dbscan(points, config: ClusterConfig) -> np.ndarray:
    """Cluster labels (0, 1, ...) per point, ``-1`` for noise.

    Exact DBSCAN via a grid whose cells have diagonal ``eps``, so all points
    sharing a cell are neighbours of each other.  Labels follow the order of
    a sequential scan by point index: clusters are numbered by their
    lowest-index core point, and a border point reachable from several
    clusters joins the lowest-numbered one.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, d = X.shape
    if n == 0:
        raise ValueError("no points to cluster")
    eps, min_pts = config.eps, config.min_pts
    eps2 = eps * eps
    # shrink the cell a hair so rounding in the floor below cannot put two
    # points farther than eps apart into the same cell
    width = eps / math.sqrt(d) * (1.0 - 1e-9)
    keys = np.floor((X - X.min(axis=0)) / width).astype(np.int64)
    cell_keys, cell_of = np.unique(keys, axis=0, return_inverse=True)
    cell_of = cell_of.ravel()
    order = np.argsort(cell_of, kind="stable")
    starts = np.searchsorted(cell_of[order], np.arange(len(cell_keys) + 1))
    members = [order[starts[c]:starts[c + 1]] for c in range(len(cell_keys))]
    counts = np.diff(starts)

    # occupied cells whose boxes may hold points within eps of each other
    reach = math.floor(math.sqrt(d)) + 1
    ctree = cKDTree(cell_keys)
    cell_nbrs = ctree.query_ball_point(cell_keys, r=reach + 0.5, p=np.inf)

    def near(i, cand):
        diff = X[cand] - X[i]
        return cand[np.einsum("ij,ij->i", diff, diff) <= eps2]

    # core points: dense cells are all core; others count neighbours exactly
    core = np.zeros(n, dtype=bool)
    for c in range(len(cell_keys)):
        if counts[c] >= min_pts:
            core[members[c]] = True
            continue
        cand = np.concatenate([members[o] for o in cell_nbrs[c]])
        for i in members[c]:
            if len(near(i, cand)) >= min_pts:
                core[i] = True

    # join core points: whole cells are cliques, then link neighbouring cells
    uf = _UnionFind(n)
    core_in = [m[core[m]] for m in members]
    trees = {}
    for c in range(len(cell_keys)):
        cm = core_in[c]
        if len(cm) == 0:
            continue
        for j in cm[1:]:
            uf.union(cm[0], j)
        for o in cell_nbrs[c]:
            if o <= c or len(core_in[o]) == 0:
                continue
            om = core_in[o]
            if uf.find(cm[0]) == uf.find(om[0]):
                continue
            small, big = (cm, om) if len(cm) <= len(om) else (om, cm)
            key = o if big is om else c
            if key not in trees:
                trees[key] = cKDTree(X[big])
            dist, _ = trees[key].query(X[small], k=1, distance_upper_bound=eps * (1 + 1e-12))
            hit = np.flatnonzero(np.isfinite(dist))
            # the tree bound is for pruning only; confirm with the exact test
            for s in hit:
                if len(near(small[s], big)) > 0:
                    uf.union(cm[0], om[0])
                    break

    labels = np.full(n, NOISE, dtype=int)
    core_idx = np.flatnonzero(core)
    if len(core_idx) == 0:
        return labels
    roots = np.array([uf.find(i) for i in core_idx])
    # number clusters by their lowest core index (the scan order)
    first = {}
    for i, r in zip(core_idx, roots):
        if r not in first:
            first[r] = len(first)
    labels[core_idx] = [first[r] for r in roots]

    # border points take the lowest-numbered cluster among their core neighbours
    for c in range(len(cell_keys)):
        border = members[c][~core[members[c]]]
        if len(border) == 0:
            continue
        cand = np.concatenate([core_in[o] for o in cell_nbrs[c]])
        if len(cand) == 0:
            continue
        for i in border:
            nb = near(i, cand)
            if len(nb):
                labels[i] = labels[nb].min()
    return labels


# ---------------------------------------------------------------------------
# archive
# ---------------------------------------------------------------------------

def build_archive(points, labels, predicted) -> PeakArchive:
    """One center per cluster (its lowest prediction), sorted ascending."""
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    labels = np.asarray(labels)
    predicted = np.asarray(predicted, dtype=float)
    ids = np.unique(labels[labels != NOISE])
    if len(ids) == 0:
        raise EmptyArchiveError("DBSCAN labelled every point as noise")
    centers, values, sizes = [], [], []
    for c in ids:
        idx = np.flatnonzero(labels == c)
        best = idx[np.argmin(predicted[idx])]  # argmin keeps the first of ties
        centers.append(points[best])
        values.append(predicted[best])
        sizes.append(len(idx))
    order = np.argsort(values, kind="stable")
    return PeakArchive(np.array(centers)[order], np.array(values)[order],
                       np.array(sizes)[order])


def cluster_coordinates(points, lower, upper, space: str) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    if space == "raw":
        return points
    lower = np.asarray(lower, dtype=float)
    return (points - lower) / (np.asarray(upper, dtype=float) - lower)


def run_fpd(model: ModelParams, lower, upper, descent: DescentConfig,
            cluster: ClusterConfig, seed: int = 0):
    """Descent, clustering and archive extraction.  Returns ``(archive, result, labels)``."""
    result = multistart_descent(model, descent, seed)
    labels = dbscan(cluster_coordinates(result.points, lower, upper, cluster.space), cluster)
    archive = build_archive(result.points, labels, result.predicted)
    return archive, result, labels


def dump_points(result: DescentResult, labels, path) -> None:
    """Columns x_1..x_d, predicted, label."""
    d = result.points.shape[1]
    header = " ".join([f"x{i + 1}" for i in range(d)] + ["predicted", "label"])
    np.savetxt(path, np.column_stack([result.points, result.predicted, labels]),
               header=header, fmt="%.17g")
