"""Fit a surrogate to F2 and look at how well it tracks the true landscape.

F2 has five equal peaks on [0, 1].  We spend 3/8 of its budget on uniform
samples, train the desk-size network and compare both curves on a grid.

    python demos/01_fit_a_landscape.py
"""
import numpy as np

from apdmmo.benchmark import make_problem
from apdmmo.glf import TrainConfig, build_dataset, standardized_mse, train
from apdmmo.landscape_model import ModelConfig, init_model, predict_raw

spec, evaluator = make_problem("F2")
data = build_dataset(evaluator, 3 / 8, seed=0)
print(f"{len(data)} samples drawn, {evaluator.remaining} evaluations left for search")

model, trace = train(init_model(ModelConfig(1, 32, 2), 0), data, TrainConfig(epochs=100))
print(f"loss after epoch 1: {trace[0]:.4f}, after epoch {len(trace)}: {trace[-1]:.4f}")

grid = np.linspace(0, 1, 1001)[:, None]
print(f"standardized grid error: {standardized_mse(model, grid, spec(grid)):.2e}")

# the surrogate predicts the internal (negated) fitness, so flip the sign back
fitted = -predict_raw(model, grid)
print("\n     x    true  fitted")
for i in range(0, 1001, 50):
    print(f"{grid[i, 0]:6.2f}  {spec(grid[i:i + 1])[0]:6.3f}  {fitted[i]:6.3f}")
