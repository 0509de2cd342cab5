# ---
# jupyter:
#   jupytext:
#     formats: py:percent
#     text_representation:
#       extension: .py
#       format_name: percent
# ---

# %% [markdown]
# # Forgetting on a synthetic sequence
#
# Ten Gaussian classes arrive two at a time. We train plain finetuning and a
# few rehearsal strategies on the same sequence and look at how the accuracy
# on earlier tasks evolves.

# %%
import numpy as np

from harcl.benchmark import ProtocolConfig, TaskSequence, _prepare_splits, run_sequence
from harcl.data import gen_synthetic
from harcl.network import TrainConfig
from harcl.strategies import StrategySpec

ds = gen_synthetic(classes=10, samples_per_class=50, dims=10, separation=6.0, seed=0)
protocol = ProtocolConfig(standardize=True)
train, test = _prepare_splits(ds, protocol)
train_cfg = TrainConfig(epochs=60, batch_size=16, lr=0.1, scheduler_step=100, weight_decay=5e-3)
seq = TaskSequence([[0, 1], [2, 3], [4, 5], [6, 7], [8, 9]], seed=0)
print(len(train), "training rows,", len(test), "test rows")

# %% [markdown]
# Row `k` holds the accuracy on every task seen so far after training task `k`.

# %%
def accuracy_matrix(run):
    n = len(run.records)
    out = np.full((n, n), np.nan)
    for k, rec in enumerate(run.records):
        out[k, : k + 1] = rec.task_accuracy
    return out


runs = {}
for sid in ("finetune", "icarl", "wa-mdf"):
    runs[sid] = run_sequence(StrategySpec(sid, train=train_cfg), train, test, seq, protocol)
    print(sid)
    with np.printoptions(precision=2, nanstr="-"):
        print(accuracy_matrix(runs[sid]))

# %% [markdown]
# Finetuning keeps only the newest task. The forgetting score after the last
# task is the mean relative drop from each task's best accuracy.

# %%
for sid, run in runs.items():
    rec = run.final
    print(f"{sid:9s} all {rec.scores['all']['micro']:.3f}  new {rec.scores['new']['micro']:.3f}  "
          f"old {rec.scores['old']['micro']:.3f}  forgetting {rec.forgetting:.3f}")

# %% [markdown]
# Weight aligning rescales the new-class output rows so their mean norm
# matches the old classes. The recorded gap is the remaining difference.

# %%
print([f"{rec.diagnostics['wa_norm_gap']:.1e}" for rec in runs["wa-mdf"].records[1:]])
