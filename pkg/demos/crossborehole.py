"""Posterior sampling for a small cross-borehole tomography problem.

Builds the desk-scale preset, draws posterior samples through the adjoint
path, reports how well the posterior mean matches the truth, and times the
two direct samplers against each other.

    python3 demos/crossborehole.py
"""

import numpy as np

from splitrto import Rng, sample_general, whiten
from splitrto.benchmark import benchmark, format_table
from splitrto.problems import crossborehole_desk

problem = crossborehole_desk(seed=0)
model = problem.model
print(f"{problem.name}: m = {model.op.rows} rays, n = {model.op.cols} pixels")

batch = sample_general(model, 2000, Rng(1))
summary = batch.summary()
mean, std = summary["mean"], summary["std"]
err = np.linalg.norm(mean - problem.x_true) / np.linalg.norm(problem.x_true)
inside = np.mean(np.abs(problem.x_true - mean) <= 2 * std)
print(f"relative error of the posterior mean: {err:.3f}")
print(f"pixels whose truth lies within two posterior std: {inside:.0%}")

# posterior spread as a function of depth
img = problem.grid.to_image(std)
print("posterior std by depth (row averages, top to bottom):")
print(np.array2string(img.mean(axis=0)[::5], precision=3))

print()
print(format_table(benchmark(whiten(model), [100, 1000], seed=2)))
