# ---
# jupyter:
#   jupytext:
#     formats: py:percent
#     text_representation:
#       extension: .py
#       format_name: percent
# ---

# %% [markdown]
# # Exemplar samplers and memory size
#
# Each sampler picks which training rows of a finished class stay in memory.
# First a look at what they pick on a toy class, then a small grid over
# sampler and per-class holdout size with iCaRL.

# %%
import warnings

import numpy as np

from harcl.memory import SamplerWarning, sample_boundary, sample_exemplar, sample_fwsr, sample_herding

rng = np.random.default_rng(1)
centres = np.array([[6.0, 0.0], [0.0, 6.0], [-4.0, -4.0]])
points = np.vstack([c + rng.normal(scale=0.4, size=(8, 2)) for c in centres])
other = rng.normal(loc=[3.0, 3.0], scale=0.4, size=(8, 2))

with warnings.catch_warnings():
    warnings.simplefilter("ignore", SamplerWarning)
    picks = {
        "herding": sample_herding(points, 3),
        "exemplar": sample_exemplar(points, 3),
        "fwsr": sample_fwsr(points, 3),
        "boundary": sample_boundary(np.vstack([points, other]), [0] * 24 + [1] * 8, 0, 3),
    }
for name, idx in picks.items():
    print(f"{name:9s} rows {[int(i) for i in idx]}  clusters {sorted(int(i) // 8 for i in idx)}")

# %% [markdown]
# Herding takes the points nearest the overall mean, which sits between the
# clusters. FWSR and the k-medoid rule spread over the clusters. Boundary
# sampling takes the rows closest to the other class.

# %%
from harcl.cli import run_experiment

config = {
    "dataset": {"synthetic": {"classes": 8, "samples_per_class": 40, "dims": 8, "separation": 5.0, "seed": 2}},
    "standardize": True,
    "sequences": 4,
    "train": {"epochs": 40, "batch_size": 16, "lr": 0.1, "scheduler_step": 100, "weight_decay": 0.005},
    "strategies": ["icarl"],
    "samplers": ["random", "herding", "exemplar", "fwsr", "boundary"],
    "holdouts": [2, 6],
}
with warnings.catch_warnings():
    warnings.simplefilter("ignore", SamplerWarning)
    results = run_experiment(config)

# %%
for combo, runs in results.items():
    f1 = np.mean([r.final.scores["all"]["micro"] for r in runs])
    print(f"{combo.sampler:9s} s={combo.holdout:2d}  all micro-F1 {f1:.3f}")
