"""Regularisation-only strategies: distillation (LwF) and parameter-importance penalties (EWC, MAS)."""

from __future__ import annotations

from ..losses import ImportanceMap, cross_entropy_labels, fisher_diagonal, importance_prox_step, mas_importance
from ..network import backward, forward
from .base import DistillMixin, Strategy


class Finetune(Strategy):
    id = "finetune"


class Offline(Strategy):
    """Upper bound: all classes in one task. The benchmark collapses the sequence for it."""

    id = "offline"


class LwF(DistillMixin, Strategy):
    id = "lwf"

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


class _ImportancePenalty(Strategy):
    """Cross-entropy plus a running quadratic penalty; importances are merged after every task.

    The penalty is applied as a proximal step after each SGD update so that
    large importances cannot make the explicit step diverge.
    """

    importance: ImportanceMap | None = None

    def strength(self) -> float:
        raise NotImplementedError

    def estimate(self, net, X) -> ImportanceMap:
        raise NotImplementedError

    def prepare(self, net, X, y, is_mem, ctx):
        if self.importance is not None:
            self.importance = self.importance.expanded_to([p.shape for p in net.parameters()])

    def after_step(self, net):
        if self.importance is not None:
            importance_prox_step(net, self.importance, self.strength(), self.lr)

    def conclude(self, net, ctx):
        fresh = self.estimate(net, ctx.X)
        self.importance = fresh if self.importance is None else self.importance.merged(fresh)
        return super().conclude(net, ctx)


class EWC(_ImportancePenalty):
    id = "ewc"

    def strength(self):
        return self.w.ewc_lambda

    def estimate(self, net, X):
        return fisher_diagonal(net, X)


class MAS(_ImportancePenalty):
    id = "mas"

    def strength(self):
        return self.w.mas_lambda

    def estimate(self, net, X):
        return mas_importance(net, X)
