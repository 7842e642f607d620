"""Find candidate peaks of F4 on the surrogate alone.

Many descent starts slide downhill on the trained network; the points where
they settle are clustered, and the best point of each cluster becomes a
candidate peak.  None of this touches the true objective.

    python demos/02_peaks_without_evaluations.py
"""
import numpy as np

from apdmmo.benchmark import make_problem
from apdmmo.fpd import DescentConfig, default_cluster_config, run_fpd
from apdmmo.glf import TrainConfig, build_dataset, train
from apdmmo.landscape_model import ModelConfig, init_model

spec, evaluator = make_problem("F4")
data = build_dataset(evaluator, 3 / 8, seed=1)
model, _ = train(init_model(ModelConfig(2, 32, 2), 1), data, TrainConfig(epochs=100))
spent = evaluator.used_fes

descent = DescentConfig(n_starts=20_000, steps=500, freeze_tol=1e-3, freeze_patience=3)
archive, result, labels = run_fpd(model, spec.lb, spec.ub, descent,
                                  default_cluster_config(2, "raw"), seed=1)
assert evaluator.used_fes == spent  # peak detection is free
print(f"{len(archive)} candidate peaks from {descent.n_starts} starts "
      f"(median {int(np.median(result.steps_taken))} descent steps)")

print("\ntrue optimum        nearest candidate   distance")
for opt in spec.known_optima:
    dist = np.linalg.norm(archive.centers - opt, axis=1)
    c = archive.centers[dist.argmin()]
    print(f"({opt[0]:6.3f}, {opt[1]:6.3f})  ({c[0]:6.3f}, {c[1]:6.3f})  {dist.min():.3f}")
