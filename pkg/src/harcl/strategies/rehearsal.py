"""Rehearsal strategies: replay stored exemplars alongside the new task's data."""

from __future__ import annotations

import numpy as np

from ..losses import (ImportanceMap, OutputGrad, cross_entropy_labels, fisher_diagonal, ilos_loss,
                      importance_prox_step, lucir_combined, mas_importance)
from ..network import backward, flatten, forward, penultimate_features, predict_logits, unflatten
from .alignment import (bic_apply, bic_fit, clamp_output_weights, normalize_output_rows, wa_adb_rescale,
                        wa_mdf_align, wa_mdf_norm_gap)
from .base import DistillMixin, Strategy
from .projection import agem_project, gem_project


class ICaRL(DistillMixin, Strategy):
    """Cross-entropy on new data plus memory, with distillation on old-class outputs."""

    id = "icarl"
    rehearsal = True
    default_sampler = "herding"

    def prepare(self, net, X, y, is_mem, ctx):
        self.record_old_outputs(X)

    def batch_loss(self, net, batch):
        cache, logits = forward(net, batch.X)
        loss, dlogits = cross_entropy_labels(logits, batch.y)
        if self.recorded is not None:
            kd, dkd = self.kd_term(logits, batch.rows)
            loss += self.w.lambda_o * kd
            dlogits[:, :self.n_old] += self.w.lambda_o * dkd
        return loss, backward(net, cache, dlogits)


class ILOS(DistillMixin, Strategy):
    id = "ilos"
    rehearsal = True

    def prepare(self, net, X, y, is_mem, ctx):
        self.record_old_outputs(X)

    def batch_loss(self, net, batch):
        if self.recorded is None:
            return super().batch_loss(net, batch)
        cache, logits = forward(net, batch.X)
        loss, dlogits = ilos_loss(logits, batch.y, self.recorded[batch.rows],
                                  self.w.alpha, self.w.beta, self.w.temperature)
        return loss, backward(net, cache, dlogits)


class LUCIR(Strategy):
    """Cosine head; cross-entropy, adaptive less-forget and margin ranking on memory anchors."""

    id = "lucir"
    rehearsal = True
    head = "cosine"
    terms = ("ce", "dis", "mr")
    old_features: np.ndarray | None = None

    def prepare(self, net, X, y, is_mem, ctx):
        self.old_features = None if self.old_net is None else penultimate_features(self.old_net, X)

    def batch_loss(self, net, batch):
        cache, logits = forward(net, batch.X)
        if self.old_features is None:
            loss, dlogits = cross_entropy_labels(logits, batch.y)
            return loss, backward(net, cache, dlogits)
        use_mr = "mr" in self.terms and bool(np.any(batch.is_memory))
        loss, g = lucir_combined(
            logits, cache.cos, cache.features, batch.y, batch.is_memory, self.old_features[batch.rows],
            self.n_old, self.w.lambda_base, self.w.margin, self.w.top_k,
            use_ce="ce" in self.terms, use_dis="dis" in self.terms, use_mr=use_mr,
        )
        return loss, backward(net, cache, g.dlogits, g.dfeatures, g.dcos)


class WAMDF(ICaRL):
    """Distillation with replay, non-negative output weights, and norm alignment after each task."""

    id = "wa-mdf"
    default_sampler = "random"

    def after_step(self, net):
        clamp_output_weights(net)

    def conclude(self, net, ctx):
        if self.n_old > 0:
            net = wa_mdf_align(net, self.n_old)
            self.diagnostics["wa_norm_gap"] = wa_mdf_norm_gap(net, self.n_old)
        return super().conclude(net, ctx)


class WAADB(ICaRL):
    """Unit-norm output rows during training, then per-class ``(n_1/n_i)^gamma`` rescaling."""

    id = "wa-adb"
    default_sampler = "random"
    largest_class = 0

    def after_step(self, net):
        normalize_output_rows(net)

    def conclude(self, net, ctx):
        counts = np.zeros(net.num_classes)
        for c in range(self.n_old):
            counts[c] = len(self.memory.store.get(c, ())) or self.spec.holdout
        new_counts = np.bincount(ctx.y, minlength=net.num_classes)
        for c in ctx.classes:
            counts[c] = new_counts[c]
        self.largest_class = max(self.largest_class, int(counts.max()))
        net = wa_adb_rescale(net, counts, self.w.wa_adb_gamma, largest=self.largest_class)
        return super().conclude(net, ctx)


class BiC(ICaRL):
    """Stage one as iCaRL on a reduced training set; stage two fits a two-scalar bias correction."""

    id = "bic"
    default_sampler = "random"
    val_fraction = 0.1

    def __init__(self, spec, rng):
        super().__init__(spec, rng)
        self.alpha, self.beta, self.corr_old = 1.0, 0.0, 0
        self.val = None

    def old_logits(self, X):
        return bic_apply(predict_logits(self.old_net, X), self.corr_old, self.alpha, self.beta)

    def training_set(self, ctx):
        X, y, is_mem = super().training_set(ctx)
        self.val = None
        if ctx.index == 0:
            return X, y, is_mem
        hold = []
        for c in ctx.classes:
            rows = np.flatnonzero((y == c) & ~is_mem)
            k = max(1, int(round(self.val_fraction * rows.size)))
            if rows.size > 1:
                hold.append(self.rng.choice(rows, size=min(k, rows.size - 1), replace=False))
        hold = np.sort(np.concatenate(hold)) if hold else np.zeros(0, dtype=np.int64)
        mem_rows = np.flatnonzero(is_mem)
        draw = self.rng.choice(mem_rows, size=min(hold.size, mem_rows.size), replace=False)
        self.val = (np.vstack([X[hold], X[draw]]), np.concatenate([y[hold], y[draw]]))
        keep = np.ones(len(y), dtype=bool)
        keep[hold] = False
        return X[keep], y[keep], is_mem[keep]

    def conclude(self, net, ctx):
        if self.val is not None and len(self.val[1]):
            vx, vy = self.val
            self.alpha, self.beta = bic_fit(predict_logits(net, vx), vy, self.n_old,
                                            epochs=self.w.bic_epochs, lr=self.w.bic_lr,
                                            batch_size=self.cfg.batch_size, rng=self.rng)
            self.corr_old = self.n_old
            self.diagnostics.update(bic_alpha=self.alpha, bic_beta=self.beta)
        elif ctx.index == 0:
            self.alpha, self.beta, self.corr_old = 1.0, 0.0, net.num_classes
        return super().conclude(net, ctx)

    def logits(self, net, X):
        return bic_apply(predict_logits(net, X), self.corr_old, self.alpha, self.beta)


class GEM(Strategy):
    """Memory is used as constraints: one gradient per earlier task must not be opposed."""

    id = "gem"
    rehearsal = True

    def training_set(self, ctx):
        self._history = ctx.history
        X, y = ctx.X, ctx.y
        return X, y, np.zeros(len(y), dtype=bool)

    def _memory_grad(self, net, classes) -> np.ndarray | None:
        mx, my = self.memory.arrays(classes)
        if len(my) == 0:
            return None
        cache, logits = forward(net, mx)
        _, dlogits = cross_entropy_labels(logits, my)
        return flatten(backward(net, cache, dlogits))

    def adjust_gradient(self, net, grads, batch):
        if self.n_old == 0:
            return grads
        refs = [g for g in (self._memory_grad(net, cl) for cl in self._history) if g is not None]
        if not refs:
            return grads
        projected = gem_project(flatten(grads), np.vstack(refs))
        return unflatten(projected, grads)


class AGEM(GEM):
    """Single constraint from the mean gradient over a random memory minibatch."""

    id = "agem"

    def adjust_gradient(self, net, grads, batch):
        if self.n_old == 0 or len(self.memory) == 0:
            return grads
        mx, my = self.memory.arrays()
        take = self.rng.choice(len(my), size=min(self.cfg.batch_size, len(my)), replace=False)
        cache, logits = forward(net, mx[take])
        _, dlogits = cross_entropy_labels(logits, my[take])
        ref = flatten(backward(net, cache, dlogits))
        if not np.any(ref):
            return grads
        return unflatten(agem_project(flatten(grads), ref), grads)


ABLATION_TERMS = ("ce", "kd", "ewc", "mas", "lucir-dis", "lucir-mr", "lucir", "ilos-ce", "ilos")


class ReplayAblation(DistillMixin, Strategy):
    """Shared replay pipeline (random exemplars, plain training) with one regulariser switched on."""

    rehearsal = True
    term = "ce"
    importance: ImportanceMap | None = None
    old_features: np.ndarray | None = None

    def prepare(self, net, X, y, is_mem, ctx):
        self.record_old_outputs(X)
        if self.term.startswith("lucir") and self.old_net is not None:
            self.old_features = penultimate_features(self.old_net, X)
        if self.importance is not None:
            self.importance = self.importance.expanded_to([p.shape for p in net.parameters()])

    def batch_loss(self, net, batch):
        cache, logits = forward(net, batch.X)
        if self.recorded is None:
            loss, dlogits = cross_entropy_labels(logits, batch.y)
            return loss, backward(net, cache, dlogits)
        t = self.term
        g = OutputGrad(np.zeros_like(logits))
        if t in ("ilos", "ilos-ce"):
            alpha = self.w.alpha if t == "ilos" else 0.0
            loss, g.dlogits = ilos_loss(logits, batch.y, self.recorded[batch.rows],
                                        alpha, self.w.beta, self.w.temperature)
        elif t.startswith("lucir"):
            use_dis = t in ("lucir", "lucir-dis")
            use_mr = t in ("lucir", "lucir-mr") and bool(np.any(batch.is_memory))
            loss, g = lucir_combined(logits, cache.cos, cache.features, batch.y, batch.is_memory,
                                     self.old_features[batch.rows], self.n_old, self.w.lambda_base,
                                     self.w.margin, self.w.top_k, use_dis=use_dis, use_mr=use_mr)
        else:
            loss, g.dlogits = cross_entropy_labels(logits, batch.y)
            if t == "kd":
                kd, dkd = self.kd_term(logits, batch.rows)
                loss += self.w.lambda_o * kd
                g.dlogits[:, :self.n_old] += self.w.lambda_o * dkd
        return loss, backward(net, cache, g.dlogits, g.dfeatures, g.dcos)

    def after_step(self, net):
        if self.term in ("ewc", "mas") and self.importance is not None:
            lam = self.w.ewc_lambda if self.term == "ewc" else self.w.mas_lambda
            importance_prox_step(net, self.importance, lam, self.lr)

    def conclude(self, net, ctx):
        if self.term in ("ewc", "mas"):
            fresh = (fisher_diagonal if self.term == "ewc" else mas_importance)(net, ctx.X)
            self.importance = fresh if self.importance is None else self.importance.merged(fresh)
        return super().conclude(net, ctx)


def make_ablation(term: str) -> type[ReplayAblation]:
    if term not in ABLATION_TERMS:
        raise ValueError(f"unknown ablation term {term!r}; choose from {ABLATION_TERMS}")
    return type(f"Replay_{term.replace('-', '_')}", (ReplayAblation,), {
        "id": f"replay-{term}",
        "term": term,
        "head": "cosine" if term.startswith("lucir") else "linear",
    })
