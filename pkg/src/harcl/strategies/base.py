"""Task lifecycle shared by every strategy: prepare, train, conclude."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np

from ..losses import LossWeights, cross_entropy_labels, kd_loss_logits
from ..memory import ReplayMemory, update_memory
from ..network import (Network, TrainConfig, backward, expand_output_layer, forward,
                       lr_at, penultimate_features, predict_logits, sgd_step)
from ..numerics import softmax


@dataclass
class StrategySpec:
    id: str
    weights: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    sampler: str | None = None      # None picks the strategy's default
    holdout: int = 6


@dataclass
class TaskContext:
    index: int                       # 0-based task position in the sequence
    classes: list[int]               # output indices introduced by this task
    X: np.ndarray
    y: np.ndarray                    # output-index labels
    history: list[list[int]] = field(default_factory=list)   # classes of earlier tasks


@dataclass
class Batch:
    X: np.ndarray
    y: np.ndarray
    rows: np.ndarray                 # positions in the task training set
    is_memory: np.ndarray


class Strategy:
    """Plain cross-entropy on the current training set (the finetuning baseline).

    Subclasses override the hooks: :meth:`training_set`, :meth:`prepare`,
    :meth:`batch_loss`, :meth:`adjust_gradient`, :meth:`after_step`,
    :meth:`conclude` and :meth:`logits`.
    """

    id: ClassVar[str] = "finetune"
    rehearsal: ClassVar[bool] = False
    head: ClassVar[str] = "linear"
    default_sampler: ClassVar[str] = "random"

    def __init__(self, spec: StrategySpec, rng: np.random.Generator):
        self.spec = spec
        self.w = spec.weights
        self.cfg = spec.train
        self.rng = rng
        sampler = spec.sampler or self.default_sampler
        if self.rehearsal and spec.holdout < 1:
            raise ValueError(f"{self.id} replays exemplars and needs holdout >= 1")
        self.memory = ReplayMemory(spec.holdout if self.rehearsal else 0, sampler)
        self.old_net: Network | None = None
        self.n_old = 0
        self.lr = self.cfg.lr
        self.diagnostics: dict[str, float] = {}

    # -- lifecycle -------------------------------------------------------

    def run_task(self, net: Network, ctx: TaskContext) -> tuple[Network, dict]:
        start = time.perf_counter()
        self.diagnostics = {}
        if ctx.index > 0:
            self.old_net = net.copy()
            net = expand_output_layer(net, len(ctx.classes), seed=int(self.rng.integers(2**31)))
        self.n_old = net.num_classes - len(ctx.classes)
        X, y, is_mem = self.training_set(ctx)
        self.prepare(net, X, y, is_mem, ctx)
        self.fit(net, X, y, is_mem)
        net = self.conclude(net, ctx)
        return net, {"seconds": time.perf_counter() - start, **self.diagnostics}

    def training_set(self, ctx: TaskContext):
        X, y = ctx.X, ctx.y
        is_mem = np.zeros(len(y), dtype=bool)
        if self.rehearsal and len(self.memory):
            mx, my = self.memory.arrays()
            X = np.vstack([X, mx])
            y = np.concatenate([y, my])
            is_mem = np.concatenate([is_mem, np.ones(len(my), dtype=bool)])
        return X, y, is_mem

    def prepare(self, net, X, y, is_mem, ctx) -> None:
        pass

    def fit(self, net: Network, X, y, is_mem) -> None:
        n = len(y)
        bs = self.cfg.batch_size
        for epoch in range(self.cfg.epochs):
            lr = self.lr = lr_at(epoch, self.cfg)
            order = self.rng.permutation(n)
            for start in range(0, n, bs):
                rows = order[start:start + bs]
                batch = Batch(X[rows], y[rows], rows, is_mem[rows])
                _, grads = self.batch_loss(net, batch)
                grads = self.adjust_gradient(net, grads, batch)
                sgd_step(net, grads, lr, self.cfg.weight_decay)
                self.after_step(net)

    def batch_loss(self, net: Network, batch: Batch):
        cache, logits = forward(net, batch.X)
        loss, dlogits = cross_entropy_labels(logits, batch.y)
        return loss, backward(net, cache, dlogits)

    def adjust_gradient(self, net, grads, batch):
        return grads

    def after_step(self, net) -> None:
        pass

    def conclude(self, net: Network, ctx: TaskContext) -> Network:
        if self.rehearsal:
            self.store_exemplars(net, ctx)
        return net

    def store_exemplars(self, net: Network, ctx: TaskContext) -> None:
        emb = penultimate_features(net, ctx.X)
        ctx_emb = ctx_lab = None
        if self.memory.sampler == "boundary" and len(self.memory):
            mx, ctx_lab = self.memory.arrays()
            ctx_emb = penultimate_features(net, mx)
        update_memory(self.memory, ctx.X, ctx.y, emb, ctx.classes, self.rng, ctx_emb, ctx_lab)

    def logits(self, net: Network, X) -> np.ndarray:
        return predict_logits(net, X)

    def predict(self, net: Network, X) -> np.ndarray:
        return np.argmax(self.logits(net, X), axis=1)


class DistillMixin:
    """Records the previous model's old-class outputs on the task's training set."""

    recorded: np.ndarray | None = None

    def record_old_outputs(self, X) -> None:
        if self.old_net is None or self.n_old == 0:
            self.recorded = None
            return
        # the old model is frozen, so recording once before training equals per-batch recording
        self.recorded = self.old_logits(X)

    def old_logits(self, X) -> np.ndarray:
        return predict_logits(self.old_net, X)

    def kd_term(self, logits, rows):
        probs = softmax(self.recorded[rows])
        return kd_loss_logits(probs, logits[:, :self.n_old], self.w.temperature)
