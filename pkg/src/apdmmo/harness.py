"""End-to-end runs: fit, detect, refine, then score.

A run spends ``floor(r * max_fes)`` evaluations on the training sample and
the rest on local search.  Peak detection spends none; the report's budget
ledger is checked against the evaluator's counter before it is returned.

Two parameter profiles exist.  ``paper_scale`` uses the published settings
(width 128, depth 5, 10^6 descent starts, 3000 descent steps), which need a
GPU to finish in reasonable time.  ``desk`` is the default: a smaller
network, fewer epochs and 10^5 starts whose descent stops early once a
point has settled.  Every field of either profile can be overridden.

Seeds: the run seed ``s`` is expanded with ``numpy.random.SeedSequence(s)``
into five child streams, in order: dataset sampling, weight init, training
batches, descent starts, local-search launches (launch ``k`` then draws from
``SeedSequence([launch_seed, k])``).
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .benchmark import (
    SolutionSet, found_optima, load_problem_table, make_problem, peak_ratio_success_rate,
)
from .fpd import (
    ClusterConfig, DescentConfig, EmptyArchiveError, default_cluster_config, run_fpd,
)
from .glf import TrainConfig, build_dataset, train
from .landscape_model import ModelConfig, ModelParams, init_model, predict_raw
from .pls import SepCmaConfig, round_robin_search

__all__ = [
    "ACCURACIES", "REPORT_SCHEMA", "VARIANTS", "RunConfig", "RunReport", "allocate_budget",
    "emit_surrogate_grid", "resolve_settings", "run_apdmmo", "run_suite", "suite_table",
]

ACCURACIES = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5)
VARIANTS = ("FULL", "NO_FPD", "NO_PLS", "P1", "P5", "M1", "M5", "S1", "S5")
REPORT_SCHEMA = "apdmmo.run_report/1"
RATIO_SWEEP = tuple(k / 8 for k in range(1, 8))

# desk profile: what a single CPU core can do in a couple of minutes per run
DESK = {
    "model": {"hidden_dim": 32, "depth": 2, "block_kind": "NLA"},
    "train": {"epochs": 200},
    "descent": {"n_starts": 100_000, "steps": 500, "freeze_tol": 1e-3, "freeze_patience": 3},
    "cluster": {"space": "raw"},
}
PUBLISHED = {
    "model": {"hidden_dim": 128, "depth": 5, "block_kind": "NLA"},
    "train": {"epochs": 400},
    "descent": {"n_starts": 1_000_000, "freeze_tol": 0.0},
    "cluster": {"space": "raw"},
}


@dataclass
class RunConfig:
    problem: str = "F1"
    seed: int = 0
    r: float = 3 / 8
    variant: str = "FULL"
    paper_scale: bool = False
    problem_seed: int = 0  # fixes the composition functions F11-F20
    problem_table: str | None = None  # optional override file for the problem table
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    descent: dict = field(default_factory=dict)
    cluster: dict = field(default_factory=dict)
    cma: dict = field(default_factory=dict)
    accuracies: tuple = ACCURACIES

    def __post_init__(self):
        if not 0 < self.r < 1:
            raise ValueError("r must lie strictly between 0 and 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        acc = tuple(float(a) for a in self.accuracies)
        if not acc or min(acc) <= 0 or any(a <= b for a, b in zip(acc, acc[1:])):
            raise ValueError("accuracies must be positive and strictly descending")
        self.accuracies = acc

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown run settings: {sorted(unknown)}")
        return cls(**data)


@dataclass
class RunReport:
    schema: str
    problem: str
    seed: int
    variant: str
    nkp: int
    npf: dict  # accuracy -> optima found
    pr: dict
    sr: dict
    ledger: dict
    archive_size: int
    archive: list
    fallback: str | None
    timings: dict
    optima: dict  # accuracy -> list of seed points
    launches: int
    config: dict
    settings: dict

    def to_json(self, **kwargs) -> str:
        return json.dumps(asdict(self), **kwargs)

    def deterministic_view(self) -> dict:
        """The report without wall-clock fields."""
        d = asdict(self)
        d.pop("timings")
        return d


def allocate_budget(max_fes: int, r: float) -> tuple[int, int]:
    if not 0 < r < 1:
        raise ValueError("r must lie strictly between 0 and 1")
    train_fes = int(math.floor(r * max_fes))
    return train_fes, max_fes - train_fes


def _stage_seeds(seed: int) -> dict:
    names = ("dataset", "init", "train", "descent", "launch")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: int(c.generate_state(1)[0]) for n, c in zip(names, children)}


def resolve_settings(config: RunConfig, dim: int) -> dict:
    """Concrete stage configurations for a run (profile, then overrides)."""
    prof = PUBLISHED if config.paper_scale else DESK
    model = {**prof["model"], **config.model}
    if config.variant[0] in "PMS" and config.variant[1:].isdigit():
        kind = {"P": "NLA", "M": "MLP", "S": "SEQ_NLA"}[config.variant[0]]
        model.update(block_kind=kind, depth=int(config.variant[1:]))
    descent = {"steps": DescentConfig.steps_for_dim(dim), **prof["descent"], **config.descent}
    if not config.paper_scale and "steps" not in config.descent:
        descent["steps"] = min(descent["steps"], DescentConfig.steps_for_dim(dim))
    cluster_base = default_cluster_config(dim, prof["cluster"]["space"])
    cluster = {**asdict(cluster_base), **prof["cluster"], **config.cluster}
    return {
        "model": model,
        "train": {**prof["train"], **config.train},
        "descent": descent,
        "cluster": cluster,
        "cma": {**asdict(SepCmaConfig.for_dim(dim)), **config.cma},
    }


def _score(spec, solutions: SolutionSet, accuracies):
    npf, pr, sr, optima = {}, {}, {}, {}
    for acc in accuracies:
        seeds = found_optima(spec, solutions, acc)
        key = f"{acc:g}"
        npf[key] = len(seeds)
        pr[key], sr[key] = peak_ratio_success_rate([len(seeds)], spec.nkp)
        optima[key] = seeds.tolist()
    return npf, pr, sr, optima


def _random_centers(spec, n, seed):
    rng = np.random.default_rng(seed)
    return spec.lb + rng.random((n, spec.dim)) * (spec.ub - spec.lb)


def run_apdmmo(config: RunConfig, return_model: bool = False):
    """Run one configuration.  Returns a :class:`RunReport` (and the model if asked)."""
    table = None if config.problem_table is None else load_problem_table(config.problem_table)
    spec, evaluator = make_problem(config.problem, config.problem_seed, table)
    settings = resolve_settings(config, spec.dim)
    seeds = _stage_seeds(config.seed)
    train_fes, search_fes = allocate_budget(spec.max_fes, config.r)
    cma = SepCmaConfig(**settings["cma"])
    timings = {"glf": 0.0, "fpd": 0.0, "pls": 0.0}
    ledger = {"dataset_fes": 0, "fpd_fes": 0, "pls_fes": 0}
    archive_rows, fallback, model = [], None, None
    solutions, launches = SolutionSet(), []

    def local_search(centers, budget):
        t0 = time.perf_counter()
        before = evaluator.used_fes
        sols, recs = round_robin_search(evaluator, centers, cma, budget, seeds["launch"])
        ledger["pls_fes"] += evaluator.used_fes - before
        timings["pls"] += time.perf_counter() - t0
        return sols, recs

    def random_search(budget):
        n = math.ceil(budget / cma.popsize)
        return local_search(_random_centers(spec, n, seeds["launch"]), budget)

    if config.variant == "NO_FPD":
        # pure local-search baseline: no surrogate, the whole budget is search
        solutions, launches = random_search(spec.max_fes)
    else:
        t0 = time.perf_counter()
        dataset = build_dataset(evaluator, config.r, seeds["dataset"],
                                settings["train"].get("levels", 10))
        ledger["dataset_fes"] = evaluator.used_fes
        model_cfg = ModelConfig(input_dim=spec.dim, **settings["model"])
        tcfg = TrainConfig(**{**settings["train"], "seed": seeds["train"]})
        model, _ = train(init_model(model_cfg, seeds["init"]), dataset, tcfg)
        timings["glf"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        before = evaluator.used_fes
        try:
            archive, _, _ = run_fpd(model, spec.lb, spec.ub, DescentConfig(**settings["descent"]),
                                    ClusterConfig(**settings["cluster"]), seeds["descent"])
            centers = archive.centers
            archive_rows = [[*map(float, c), float(p)]
                            for c, p in zip(archive.centers, archive.predicted)]
        except EmptyArchiveError:
            centers = None
            fallback = "empty archive: local search from random centers"
        ledger["fpd_fes"] = evaluator.used_fes - before
        if ledger["fpd_fes"] != 0:
            raise AssertionError("peak detection spent true evaluations")
        timings["fpd"] = time.perf_counter() - t0

        budget = min(search_fes, evaluator.remaining)
        if centers is None:
            solutions, launches = random_search(budget)
        elif config.variant == "NO_PLS":
            t0 = time.perf_counter()
            k = min(len(centers), budget)
            if k:
                f = evaluator.evaluate(centers[:k])
                for x, v in zip(centers[:k], f):
                    solutions.add(x, v)
            ledger["pls_fes"] = k
            timings["pls"] = time.perf_counter() - t0
        else:
            solutions, launches = local_search(centers, budget)

    ledger["total_fes"] = ledger["dataset_fes"] + ledger["fpd_fes"] + ledger["pls_fes"]
    ledger["counter"] = evaluator.used_fes
    ledger["max_fes"] = spec.max_fes
    if ledger["total_fes"] != evaluator.used_fes or evaluator.used_fes > spec.max_fes:
        raise AssertionError(f"budget ledger does not balance: {ledger}")

    npf, pr, sr, optima = _score(spec, solutions, config.accuracies)
    report = RunReport(
        schema=REPORT_SCHEMA, problem=config.problem, seed=config.seed, variant=config.variant,
        nkp=spec.nkp, npf=npf, pr=pr, sr=sr, ledger=ledger, archive_size=len(archive_rows),
        archive=archive_rows, fallback=fallback, timings=timings, optima=optima,
        launches=len(launches), config={**asdict(config), "accuracies": list(config.accuracies)},
        settings={**settings, "package_version": __version__},
    )
    return (report, model) if return_model else report


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------

def run_suite(configs, repetitions: int = 1, out_dir: str | Path | None = None,
              progress=None):
    """Run every config ``repetitions`` times with seeds ``seed, seed+1, ...``.

    Returns ``(rows, reports)`` where each row aggregates one config: PR and
    SR per accuracy across its repetitions.
    """
    configs = list(configs)
    if not configs:
        raise ValueError("no configurations to run")
    rows, reports = [], []
    for cfg in configs:
        runs = []
        for rep in range(repetitions):
            rc = replace(cfg, seed=cfg.seed + rep)
            rep_report = run_apdmmo(rc)
            runs.append(rep_report)
            if out_dir is not None:
                out = Path(out_dir)
                out.mkdir(parents=True, exist_ok=True)
                name = f"{rc.problem}_{rc.variant}_r{rc.r:.4f}_seed{rc.seed}.json"
                (out / name).write_text(rep_report.to_json(indent=1))
            if progress is not None:
                progress(rep_report)
        row = {"problem": cfg.problem, "variant": cfg.variant, "r": cfg.r, "runs": repetitions,
               "nkp": runs[0].nkp}
        for acc in cfg.accuracies:
            key = f"{acc:g}"
            pr, sr = peak_ratio_success_rate([rep.npf[key] for rep in runs], runs[0].nkp)
            row[f"PR@{key}"] = pr
            row[f"SR@{key}"] = sr
        rows.append(row)
        reports.extend(runs)
    return rows, reports


def suite_table(rows, fmt: str = "text") -> str:
    """Render suite rows as CSV or as an aligned text table."""
    if not rows:
        return ""
    cols = list(rows[0])
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        return buf.getvalue()
    cells = [[_fmt(row[c]) for c in cols] for row in rows]
    widths = [max(len(c), *(len(r[i]) for r in cells)) for i, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(r, widths)) for r in cells]
    return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.3f}"
    return str(v)


def emit_surrogate_grid(model: ModelParams, lower, upper, resolution: int = 101,
                        path: str | Path | None = None) -> np.ndarray:
    """Predictions (raw fitness, maximization sign) on a uniform grid.

    Rows are ``x[, y], prediction``; written as text when ``path`` is given.
    """
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    d = len(lower)
    if d > 2:
        raise ValueError("surrogate grids are only available for 1D and 2D problems")
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    axes = [np.linspace(lo, hi, resolution) for lo, hi in zip(lower, upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    X = np.column_stack([m.ravel() for m in mesh])
    table = np.column_stack([X, -predict_raw(model, X)])
    if path is not None:
        header = " ".join(["x", "y"][:d] + ["prediction"])
        np.savetxt(path, table, header=header, fmt="%.17g")
    return table
