"""Task-incremental evaluation protocol and metrics.

A run trains one strategy over a random sequence of tasks (disjoint class
sets, two classes each by default). After every task the model is scored
on the held-out split for four class groups: ``base`` (first task),
``old`` (all earlier tasks), ``new`` (current task) and ``all`` (seen so
far), each as micro- and macro-F1. Per-task accuracies feed the
normalised forgetting score.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import LabeledDataset
from .network import default_hidden_dims, init_network, save_network
from .numerics import make_rng
from .strategies import StrategySpec, TaskContext, make_strategy, run_strategy_task, strategy_class

GROUPS = ("base", "old", "new", "all")


@dataclass
class TaskSequence:
    tasks: list[list[int]]
    seed: int
    index: int = 0

    @property
    def classes(self) -> list[int]:
        return [c for t in self.tasks for c in t]


def generate_task_sequences(class_ids, classes_per_task: int = 2, num_sequences: int = 30,
                            seed: int = 0) -> list[TaskSequence]:
    """Random partitions of ``class_ids`` into consecutive tasks; sequence ``i`` uses sub-stream ``i``."""
    classes = sorted(int(c) for c in class_ids)
    if not classes:
        raise ValueError("no classes to sequence")
    if classes_per_task < 1 or classes_per_task > len(classes):
        raise ValueError(f"classes_per_task must lie in [1, {len(classes)}]")
    out = []
    for i in range(num_sequences):
        order = [classes[j] for j in make_rng(seed, i).permutation(len(classes))]
        tasks = [order[k:k + classes_per_task] for k in range(0, len(order), classes_per_task)]
        out.append(TaskSequence(tasks, seed, i))
    return out


def _floor(x: float) -> int:
    # guards 0.7 * 30 = 20.999999999999996
    return int(math.floor(x + 1e-9))


def stratified_split(ds: LabeledDataset, train_frac: float = 0.7, seed: int = 0):
    """Per-class shuffle and split: ``floor(train_frac * n_c)`` rows to train, the rest to test."""
    if not 0 < train_frac < 1:
        raise ValueError("train_frac must lie in (0, 1)")
    rng = make_rng(seed)
    train, test = [], []
    for c in range(ds.num_classes):
        rows = np.flatnonzero(ds.y == c)
        if rows.size < 2:
            raise ValueError(f"class {ds.class_names[c]!r} has {rows.size} sample(s); need at least 2 to split")
        rows = rows[rng.permutation(rows.size)]
        k = min(max(_floor(train_frac * rows.size), 1), rows.size - 1)
        train.append(rows[:k])
        test.append(rows[k:])
    return ds.subset(np.sort(np.concatenate(train))), ds.subset(np.sort(np.concatenate(test)))


def user_split(ds: LabeledDataset, train_frac: float = 0.7, seed: int = 0):
    """Assign ``floor(train_frac * n_users)`` users to train and the others to test."""
    if ds.users is None:
        raise ValueError("dataset has no user column")
    users = sorted(set(ds.users.tolist()))
    if len(users) < 2:
        raise ValueError("user split needs at least two users")
    rng = make_rng(seed)
    order = [users[i] for i in rng.permutation(len(users))]
    k = min(max(_floor(train_frac * len(users)), 1), len(users) - 1)
    train_users = set(order[:k])
    mask = np.array([u in train_users for u in ds.users])
    return ds.subset(np.flatnonzero(mask)), ds.subset(np.flatnonzero(~mask))


def subsample_per_class(ds: LabeledDataset, fraction: float, seed: int = 0) -> LabeledDataset:
    """Keep ``fraction`` of every class (at least one row)."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    if fraction == 1:
        return ds
    rng = make_rng(seed)
    keep = []
    for c in np.unique(ds.y):
        rows = np.flatnonzero(ds.y == c)
        k = max(1, _floor(fraction * rows.size))
        keep.append(np.sort(rng.choice(rows, size=k, replace=False)))
    return ds.subset(np.sort(np.concatenate(keep)))


def f1_score(predictions, labels, mode: str = "micro", classes=None) -> float:
    """Micro- or macro-F1 for single-label predictions.

    Micro aggregates TP/FP/FN over every sample, which equals accuracy for
    single-label data. Macro averages per-class F1 over ``classes`` (default:
    every class appearing in ``labels`` or ``predictions``; a class that is
    only predicted scores 0).
    """
    pred = np.asarray(predictions).ravel()
    lab = np.asarray(labels).ravel()
    if pred.size == 0:
        raise ValueError("empty input")
    if pred.shape != lab.shape:
        raise ValueError("predictions and labels differ in length")
    if mode == "micro":
        tp = np.sum(pred == lab)
        wrong = pred.size - tp
        return float(2 * tp / (2 * tp + 2 * wrong))
    if mode != "macro":
        raise ValueError(f"mode must be 'micro' or 'macro', got {mode!r}")
    universe = np.union1d(lab, pred) if classes is None else np.asarray(list(classes))
    scores = []
    for c in universe:
        tp = np.sum((pred == c) & (lab == c))
        fp = np.sum((pred == c) & (lab != c))
        fn = np.sum((pred != c) & (lab == c))
        scores.append(0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn))
    return float(np.mean(scores))


def forgetting_score(acc_history: list[dict[int, float]], k: int) -> float | None:
    """Mean normalised drop ``1 - a_kj / max_{l<k} a_lj`` over earlier tasks ``j``.

    ``acc_history[l][j]`` is the accuracy on task ``j`` after training task
    ``l`` (0-based). Tasks whose best earlier accuracy is not positive are
    skipped; improvements count as zero forgetting. ``None`` for the first
    task or when every earlier task is skipped.
    """
    if k < 1:
        return None
    drops = []
    for j in range(k):
        best = max(acc_history[l][j] for l in range(j, k))
        if best <= 0:
            continue
        drops.append(min(1.0, max(0.0, 1.0 - acc_history[k][j] / best)))
    return float(np.mean(drops)) if drops else None


@dataclass
class EvalRecord:
    task: int
    classes_seen: int
    scores: dict[str, dict[str, float] | None]     # group -> {"micro", "macro"}; None when undefined
    task_accuracy: list[float]                     # a_{k,j} for j <= k
    forgetting: float | None = None
    seconds: float = 0.0
    diagnostics: dict[str, float] = field(default_factory=dict)


@dataclass
class ProtocolConfig:
    classes_per_task: int = 2
    num_sequences: int = 30
    train_frac: float = 0.7
    split: str = "stratified"               # or "user"
    train_size: float | None = None          # fraction of the whole dataset used for training
    hidden: list[int] | None = None
    standardize: bool = False
    seed: int = 0
    jobs: int = 1
    checkpoint_dir: str | None = None      # save the network after every task

    def __post_init__(self):
        if self.split not in ("stratified", "user"):
            raise ValueError(f"unknown split mode {self.split!r}")
        if self.train_size is not None and not 0 < self.train_size <= self.train_frac:
            raise ValueError("train_size must lie in (0, train_frac]")


@dataclass
class RunSummary:
    strategy: str
    sequence: int
    tasks: list[list[int]]
    records: list[EvalRecord]

    @property
    def final(self) -> EvalRecord:
        return self.records[-1]

    @property
    def total_seconds(self) -> float:
        return float(sum(r.seconds for r in self.records))

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_groups(predict, X, y, task_classes: list[list[int]]) -> tuple[dict, list[float]]:
    """Score the four class groups on test rows whose class has been trained.

    ``predict`` maps features to output indices; ``y`` holds output indices.
    """
    k = len(task_classes) - 1
    seen = [c for t in task_classes for c in t]
    mask = np.isin(y, seen)
    Xs, ys = X[mask], y[mask]
    pred = predict(Xs)
    groups = {
        "base": task_classes[0],
        "old": [c for t in task_classes[:k] for c in t],
        "new": task_classes[k],
        "all": seen,
    }
    scores: dict[str, dict[str, float] | None] = {}
    for name, cls in groups.items():
        sel = np.isin(ys, cls)
        if not cls or not np.any(sel):
            scores[name] = None
            continue
        present = np.unique(ys[sel])
        scores[name] = {
            "micro": f1_score(pred[sel], ys[sel], "micro"),
            "macro": f1_score(pred[sel], ys[sel], "macro", classes=present),
        }
    acc = []
    for cls in task_classes:
        sel = np.isin(ys, cls)
        acc.append(float(np.mean(pred[sel] == ys[sel])) if np.any(sel) else 0.0)
    return scores, acc


def _prepare_splits(dataset: LabeledDataset, protocol: ProtocolConfig):
    split = stratified_split if protocol.split == "stratified" else user_split
    train, test = split(dataset, protocol.train_frac, seed=protocol.seed)
    if protocol.train_size is not None:
        train = subsample_per_class(train, protocol.train_size / protocol.train_frac, seed=protocol.seed)
    if protocol.standardize:
        mu = train.X.mean(axis=0)
        sd = train.X.std(axis=0)
        sd[sd == 0] = 1.0
        train = train.subset(slice(None))
        test = test.subset(slice(None))
        train.X = (train.X - mu) / sd
        test.X = (test.X - mu) / sd
    return train, test


def run_sequence(spec: StrategySpec, train: LabeledDataset, test: LabeledDataset, seq: TaskSequence,
                 protocol: ProtocolConfig) -> RunSummary:
    cls = strategy_class(spec.id)
    tasks = [seq.classes] if spec.id == "offline" else seq.tasks
    order = [c for t in tasks for c in t]
    pos = {c: i for i, c in enumerate(order)}
    out_tasks, start = [], 0
    for t in tasks:
        out_tasks.append(list(range(start, start + len(t))))
        start += len(t)

    present = np.isin(train.y, order)
    Xtr, ytr = train.X[present], np.array([pos[c] for c in train.y[present]], dtype=np.int64)
    tmask = np.isin(test.y, order)
    Xte, yte = test.X[tmask], np.array([pos[c] for c in test.y[tmask]], dtype=np.int64)

    hidden = protocol.hidden if protocol.hidden is not None else default_hidden_dims(train.dims)
    init_seed = int(make_rng(protocol.seed, seq.index, 0).integers(2**31))
    net = init_network([train.dims, *hidden, len(out_tasks[0])], head=cls.head, seed=init_seed)
    strategy = make_strategy(spec, make_rng(protocol.seed, seq.index, 1))

    records: list[EvalRecord] = []
    acc_history: list[dict[int, float]] = []
    for k, classes in enumerate(out_tasks):
        rows = np.isin(ytr, classes)
        ctx = TaskContext(k, classes, Xtr[rows], ytr[rows], history=out_tasks[:k])
        net, info = run_strategy_task(strategy, net, ctx)
        if protocol.checkpoint_dir is not None:
            ckpt = Path(protocol.checkpoint_dir)
            ckpt.mkdir(parents=True, exist_ok=True)
            save_network(net, ckpt / f"seq{seq.index:02d}_task{k + 1}.json")
        scores, acc = evaluate_groups(lambda X: strategy.predict(net, X), Xte, yte, out_tasks[:k + 1])
        acc_history.append(dict(enumerate(acc)))
        diag = {key: float(v) for key, v in info.items() if key != "seconds"}
        if strategy.rehearsal:
            diag["memory_size"] = float(len(strategy.memory))
            diag["memory_classes"] = float(len(strategy.memory.classes))
        records.append(EvalRecord(k, len(order[:out_tasks[k][-1] + 1]), scores, acc,
                                  forgetting_score(acc_history, k), info["seconds"], diag))
    return RunSummary(spec.id, seq.index, [list(map(int, t)) for t in tasks], records)


def run_benchmark(spec: StrategySpec, dataset: LabeledDataset, protocol: ProtocolConfig,
                  splits=None) -> list[RunSummary]:
    """Run ``protocol.num_sequences`` independent sequences for one strategy.

    ``splits`` may pass a precomputed ``(train, test)`` pair. Results are
    ordered by sequence index regardless of ``protocol.jobs``.
    """
    train, test = splits if splits is not None else _prepare_splits(dataset, protocol)
    classes = np.unique(train.y)
    sequences = generate_task_sequences(classes, protocol.classes_per_task, protocol.num_sequences, protocol.seed)

    def one(seq):
        try:
            return run_sequence(spec, train, test, seq, protocol)
        except Exception as exc:
            raise RuntimeError(f"{spec.id}: sequence {seq.index} (seed {seq.seed}) failed: {exc}") from exc

    if protocol.jobs > 1:
        with ThreadPoolExecutor(max_workers=protocol.jobs) as pool:
            return list(pool.map(one, sequences))
    return [one(s) for s in sequences]


def _mean_std(values) -> dict[str, float] | None:
    vals = [v for v in values if v is not None]
    if not vals:
        return None
    return {"mean": float(np.mean(vals)), "std": float(np.std(vals)), "n": len(vals)}


def aggregate(summaries: list[RunSummary]) -> dict:
    """Mean and standard deviation across sequences of final and per-task scores.

    Timings are deliberately excluded so the result is reproducible bit-for-bit.
    """
    if not summaries:
        raise ValueError("nothing to aggregate")
    n_tasks = len(summaries[0].records)
    final = {}
    for g in GROUPS:
        for m in ("micro", "macro"):
            final[f"{g}_{m}"] = _mean_std(
                (s.final.scores[g] or {}).get(m) if s.final.scores[g] else None for s in summaries)
    per_task = []
    for k in range(n_tasks):
        entry = {"task": k}
        for g in GROUPS:
            for m in ("micro", "macro"):
                entry[f"{g}_{m}"] = _mean_std(
                    s.records[k].scores[g][m] if s.records[k].scores[g] else None for s in summaries)
        entry["forgetting"] = _mean_std(s.records[k].forgetting for s in summaries)
        per_task.append(entry)
    return {
        "strategy": summaries[0].strategy,
        "sequences": len(summaries),
        "final": final,
        "per_task": per_task,
    }


def timing_summary(summaries: list[RunSummary]) -> dict[str, float]:
    incre = [r.seconds for s in summaries for r in s.records[1:]] or [r.seconds for s in summaries for r in s.records]
    return {
        "incremental_mean_seconds": float(np.mean(incre)),
        "total_mean_seconds": float(np.mean([s.total_seconds for s in summaries])),
    }
