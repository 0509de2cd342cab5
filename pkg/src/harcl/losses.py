"""Training objectives and regularisers for the continual-learning strategies.

Every loss returns ``(value, gradient)``. Losses defined on network outputs
return gradients w.r.t. those outputs (logits, penultimate features or
cosine similarities) and are chained through :func:`harcl.network.backward`
by the caller; parameter-space penalties return per-parameter gradients.
All batch reductions are arithmetic means.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import Network, backward, forward
from .numerics import log_softmax, one_hot, row_normalize, softmax, temperature_rescale


@dataclass
class LossWeights:
    """Strategy hyperparameters with their default values."""

    lambda_o: float = 1.6        # LwF / KD balance
    ewc_lambda: float = 3.0
    mas_lambda: float = 0.25
    alpha: float = 0.5           # ILOS KD share
    beta: float = 0.5            # ILOS accommodation ratio
    lambda_base: float = 5.0     # LUCIR less-forget base weight
    margin: float = 0.5          # LUCIR margin
    top_k: int = 2               # LUCIR hard negatives
    temperature: float = 2.0     # KD temperature
    wa_adb_gamma: float = 0.5
    bic_epochs: int = 200
    bic_lr: float = 1e-3

    def __post_init__(self):
        if not 0 <= self.alpha <= 1 or not 0 <= self.beta <= 1:
            raise ValueError("alpha and beta must lie in [0, 1]")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.bic_epochs < 0 or self.bic_lr <= 0:
            raise ValueError("bic_epochs must be >= 0 and bic_lr positive")
        for name in ("lambda_o", "ewc_lambda", "mas_lambda", "lambda_base", "margin", "wa_adb_gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def _check_one_hot(targets: np.ndarray) -> None:
    if not (np.all((targets == 0) | (targets == 1)) and np.all(targets.sum(axis=1) == 1)):
        raise ValueError("targets must be one-hot rows")


def cross_entropy(logits, targets) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy against one-hot ``targets``; gradient w.r.t. logits."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if logits.shape != targets.shape:
        raise ValueError(f"logits {logits.shape} and targets {targets.shape} differ")
    _check_one_hot(targets)
    n = logits.shape[0]
    logp = log_softmax(logits)
    loss = -np.sum(targets * logp) / n
    return float(loss), (np.exp(logp) - targets) / n


def cross_entropy_labels(logits, labels) -> tuple[float, np.ndarray]:
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    return cross_entropy(logits, one_hot(labels, logits.shape[1]))


def kd_loss(recorded_probs, predicted_probs, T: float) -> tuple[float, np.ndarray]:
    """Distillation loss between recorded and predicted old-class probabilities.

    Both inputs are temperature-rescaled before the cross-entropy. The
    gradient is taken w.r.t. ``predicted_probs``.
    """
    rec = np.atleast_2d(np.asarray(recorded_probs, dtype=np.float64))
    pred = np.atleast_2d(np.asarray(predicted_probs, dtype=np.float64))
    if rec.shape != pred.shape:
        raise ValueError(f"recorded {rec.shape} and predicted {pred.shape} differ")
    if rec.shape[1] == 0:
        raise ValueError("distillation needs at least one old class")
    n = rec.shape[0]
    y = temperature_rescale(rec, T)
    q = temperature_rescale(pred, T)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(y > 0, y * np.log(q), 0.0)
        # d/dp_k of -sum_i y_i log q_i  =  (q_k - y_k) / (T p_k)
        grad = np.where(pred > 0, (q - y) / (T * pred), 0.0)
    return float(-terms.sum() / n), grad / n


def kd_loss_logits(recorded_probs, old_logits, T: float) -> tuple[float, np.ndarray]:
    """:func:`kd_loss` with predictions given as old-class logits.

    The temperature-rescaled softmax of ``z`` equals ``softmax(z / T)``, so
    the gradient w.r.t. the logits is ``(softmax(z/T) - y') / (T n)``.
    """
    rec = np.atleast_2d(np.asarray(recorded_probs, dtype=np.float64))
    z = np.atleast_2d(np.asarray(old_logits, dtype=np.float64))
    if rec.shape != z.shape:
        raise ValueError(f"recorded {rec.shape} and logits {z.shape} differ")
    if rec.shape[1] == 0:
        raise ValueError("distillation needs at least one old class")
    n = z.shape[0]
    y = temperature_rescale(rec, T)
    logq = log_softmax(z / T)
    loss = -np.sum(y * logq) / n
    return float(loss), (np.exp(logq) - y) / (T * n)


@dataclass
class ImportanceMap:
    """Per-parameter importances and the anchor parameters they protect."""

    importance: list[np.ndarray]
    anchors: list[np.ndarray]

    def __post_init__(self):
        if len(self.importance) != len(self.anchors):
            raise ValueError("importance and anchors differ in length")
        for imp, anc in zip(self.importance, self.anchors):
            if imp.shape != anc.shape:
                raise ValueError("importance and anchor shapes differ")
            if np.any(imp < 0):
                raise ValueError("importances must be non-negative")

    def merged(self, other: "ImportanceMap") -> "ImportanceMap":
        """Add ``other``'s importances into this map and take ``other``'s anchors."""
        grown = self.expanded_to([a.shape for a in other.anchors])
        return ImportanceMap(
            [a + b for a, b in zip(grown.importance, other.importance)],
            [a.copy() for a in other.anchors],
        )

    def expanded_to(self, shapes) -> "ImportanceMap":
        """Zero-pad to larger parameter shapes (new output rows carry no importance)."""
        imps, ancs = [], []
        for imp, anc, shape in zip(self.importance, self.anchors, shapes):
            if imp.shape == tuple(shape):
                imps.append(imp)
                ancs.append(anc)
                continue
            if any(s < t for s, t in zip(shape, imp.shape)) or len(shape) != imp.ndim:
                raise ValueError(f"cannot shrink importance from {imp.shape} to {shape}")
            pad = [(0, s - t) for s, t in zip(shape, imp.shape)]
            imps.append(np.pad(imp, pad))
            ancs.append(np.pad(anc, pad))
        return ImportanceMap(imps, ancs)


def quadratic_importance_penalty(net: Network, imap: ImportanceMap, lam: float) -> tuple[float, list[np.ndarray]]:
    """``(lam/2) * sum I (theta - theta*)^2`` and its gradient ``lam * I * (theta - theta*)``."""
    params = net.parameters()
    if len(params) != len(imap.importance):
        raise ValueError("importance map does not match the network's parameter list")
    loss = 0.0
    grads = []
    for p, imp, anc in zip(params, imap.importance, imap.anchors):
        if p.shape != imp.shape:
            raise ValueError(f"importance shape {imp.shape} != parameter shape {p.shape}")
        d = p - anc
        loss += 0.5 * lam * float(np.sum(imp * d * d))
        grads.append(lam * imp * d)
    return loss, grads


def importance_prox_step(net: Network, imap: ImportanceMap, lam: float, lr: float) -> None:
    """Exact implicit step on the quadratic penalty, in place.

    Minimises ``(lam/2) I (theta - theta*)^2 + (theta - theta0)^2 / (2 lr)`` per
    coordinate, i.e. ``theta <- (theta + lr lam I theta*) / (1 + lr lam I)``.
    Agrees with a gradient step to first order in ``lr`` but never overshoots
    the anchor, however large the importance.
    """
    if len(net.parameters()) != len(imap.importance):
        raise ValueError("importance map does not match the network's parameter list")
    for p, imp, anc in zip(net.parameters(), imap.importance, imap.anchors):
        c = lr * lam * imp
        p[...] = (p + c * anc) / (1.0 + c)


def _per_sample_importance(net: Network, X, output_grad, reduce) -> ImportanceMap:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("importance estimation needs a non-empty 2-D dataset")
    acc = net.zeros_like()
    for i in range(X.shape[0]):
        cache, logits = forward(net, X[i:i + 1])
        grads = backward(net, cache, output_grad(logits))
        for a, g in zip(acc, grads):
            a += reduce(g)
    n = X.shape[0]
    return ImportanceMap([a / n for a in acc], [p.copy() for p in net.parameters()])


def fisher_diagonal(net: Network, X) -> ImportanceMap:
    """Empirical diagonal Fisher: mean squared gradient of log p(argmax | x)."""
    def grad_logp(logits):
        label = np.argmax(logits, axis=1)
        return softmax(logits) - one_hot(label, logits.shape[1])

    return _per_sample_importance(net, X, grad_logp, np.square)


def mas_importance(net: Network, X) -> ImportanceMap:
    """Mean absolute gradient of the squared L2 norm of the output logits."""
    return _per_sample_importance(net, X, lambda logits: 2.0 * logits, np.abs)


def ilos_adjusted_logits(current, recorded_old, beta: float, n_old: int, n_new: int) -> np.ndarray:
    """Blend old-class outputs: ``beta * current + (1 - beta) * recorded`` on the first ``n_old`` entries.

    New-class entries are returned unchanged.
    """
    if not 0 <= beta <= 1:
        raise ValueError("beta must lie in [0, 1]")
    cur = np.asarray(current, dtype=np.float64)
    rec = np.asarray(recorded_old, dtype=np.float64)
    if cur.shape[-1] != n_old + n_new:
        raise ValueError(f"expected {n_old + n_new} outputs, got {cur.shape[-1]}")
    if rec.shape[-1] != n_old or rec.shape[:-1] != cur.shape[:-1]:
        raise ValueError(f"recorded outputs must have {n_old} old-class entries per sample")
    out = cur.copy()
    out[..., :n_old] = beta * cur[..., :n_old] + (1.0 - beta) * rec
    return out


def ilos_loss(logits, labels, recorded_old_logits, alpha: float, beta: float, T: float) -> tuple[float, np.ndarray]:
    """``alpha * KD + (1 - alpha) * CE(adjusted outputs)``; gradient w.r.t. current logits.

    The cross-entropy uses the true labels against the softmax of the
    blended outputs from :func:`ilos_adjusted_logits`; the distillation term
    compares current and recorded old-class outputs.
    """
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    if recorded_old_logits is None:
        raise ValueError("ILOS needs recorded old-model outputs")
    rec = np.atleast_2d(np.asarray(recorded_old_logits, dtype=np.float64))
    n_old = rec.shape[1]
    if n_old == 0:
        raise ValueError("ILOS needs at least one old class")
    n_new = logits.shape[1] - n_old
    adjusted = ilos_adjusted_logits(logits, rec, beta, n_old, n_new)
    ce, d_adj = cross_entropy_labels(adjusted, labels)
    d_ce = d_adj.copy()
    d_ce[:, :n_old] *= beta
    kd, d_kd_old = kd_loss_logits(softmax(rec), logits[:, :n_old], T)
    grad = (1.0 - alpha) * d_ce
    grad[:, :n_old] += alpha * d_kd_old
    return alpha * kd + (1.0 - alpha) * ce, grad


def lucir_less_forget(new_features, old_features) -> tuple[float, np.ndarray]:
    """Mean of ``1 - <f*/|f*|, f/|f|>``; gradient w.r.t. the (unnormalised) new features."""
    f = np.atleast_2d(np.asarray(new_features, dtype=np.float64))
    g = np.atleast_2d(np.asarray(old_features, dtype=np.float64))
    if f.shape != g.shape:
        raise ValueError(f"feature shapes {f.shape} and {g.shape} differ")
    fu, fn = row_normalize(f)
    gu, gn = row_normalize(g)
    if np.any(fn == 0) or np.any(gn == 0):
        raise ValueError("less-forget loss is undefined for a zero embedding")
    n = f.shape[0]
    cos = np.sum(fu * gu, axis=1)
    d_fu = -gu / n
    d_f = (d_fu - np.sum(d_fu * fu, axis=1, keepdims=True) * fu) / fn[:, None]
    return float(np.mean(1.0 - cos)), d_f


def lucir_margin_ranking(cos, labels, n_old: int, margin: float, top_k: int) -> tuple[float, np.ndarray]:
    """Margin ranking over cosine similarities for old-class anchors.

    ``cos`` has one row per anchor and one column per class; columns
    ``>= n_old`` are the new classes. For each anchor the ``top_k`` new
    classes with the highest cosine are the negatives and the loss is
    ``sum_k max(margin - cos_gt + cos_k, 0)``, averaged over anchors.
    Returns the gradient w.r.t. ``cos``.
    """
    cos = np.atleast_2d(np.asarray(cos, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64).ravel()
    n, c = cos.shape
    n_new = c - n_old
    if n_new < 1:
        raise ValueError("margin ranking needs at least one new class")
    if labels.shape[0] != n:
        raise ValueError("one label per anchor required")
    if np.any(labels >= n_old) or np.any(labels < 0):
        raise ValueError("anchors must belong to old classes")
    k = min(top_k, n_new)
    grad = np.zeros_like(cos)
    if n == 0:
        return 0.0, grad
    rows = np.arange(n)
    new_cos = cos[:, n_old:]
    # stable sort on the negated values keeps the lowest column on ties
    hard = np.argsort(-new_cos, axis=1, kind="stable")[:, :k] + n_old
    gt = cos[rows, labels]
    loss = 0.0
    for j in range(k):
        cols = hard[:, j]
        h = margin - gt + cos[rows, cols]
        active = h > 0
        loss += np.sum(h[active])
        np.add.at(grad, (rows[active], cols[active]), 1.0)
        np.add.at(grad, (rows[active], labels[active]), -1.0)
    return float(loss / n), grad / n


def lucir_lambda(lambda_base: float, n_new: int, n_old: int) -> float:
    """Adaptive less-forget weight ``lambda_base * sqrt(n_new / n_old)``."""
    if n_old < 1:
        raise ValueError("need at least one old class")
    return lambda_base * np.sqrt(n_new / n_old)


@dataclass
class OutputGrad:
    """Loss gradient w.r.t. the network outputs, ready for :func:`backward`."""

    dlogits: np.ndarray
    dfeatures: np.ndarray | None = None
    dcos: np.ndarray | None = None


def lucir_combined(logits, cos, features, labels, memory_mask, old_features, n_old: int,
                   lambda_base: float, margin: float, top_k: int,
                   use_ce: bool = True, use_dis: bool = True, use_mr: bool = True) -> tuple[float, OutputGrad]:
    """Cross-entropy plus adaptive less-forget over all samples, plus margin ranking over memory samples.

    ``memory_mask`` flags the rows that are replayed old-class samples. The
    ``use_*`` switches drop individual terms (used by the regulariser ablation).
    """
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    memory_mask = np.asarray(memory_mask, dtype=bool)
    n, c = logits.shape
    if n_old < 1:
        raise ValueError("combined loss needs old classes")
    if not np.any(memory_mask) and use_mr:
        raise ValueError("old classes are present but the batch holds no memory samples")
    lam = lucir_lambda(lambda_base, c - n_old, n_old)
    total = 0.0
    dlogits = np.zeros_like(logits)
    dfeat = np.zeros_like(features)
    dcos = np.zeros_like(cos)
    if use_ce:
        ce, dlogits = cross_entropy_labels(logits, labels)
        total += ce
    if use_dis:
        # rows whose embedding collapsed to zero have no direction to preserve
        ok = (np.linalg.norm(features, axis=1) > 0) & (np.linalg.norm(old_features, axis=1) > 0)
        if np.any(ok):
            dis, d = lucir_less_forget(features[ok], old_features[ok])
            frac = ok.sum() / n
            total += lam * dis * frac
            dfeat[ok] = lam * d * frac
    if use_mr and np.any(memory_mask):
        mr, d = lucir_margin_ranking(cos[memory_mask], labels[memory_mask], n_old, margin, top_k)
        total += mr
        dcos[memory_mask] = d
    return total, OutputGrad(dlogits, dfeat, dcos)
