"""Every training objective composed with the network, for finite-difference checks.

Each case builds ``(loss_fn, analytic_grads, params)`` where ``loss_fn()``
re-runs the forward pass on the current parameter values.
"""

from __future__ import annotations

import numpy as np

from harcl.losses import (ImportanceMap, cross_entropy_labels, ilos_loss, kd_loss_logits, lucir_combined,
                          lucir_less_forget, lucir_margin_ranking, quadratic_importance_penalty)
from harcl.network import add_grads, backward, forward, init_network
from harcl.numerics import softmax
from oracles import central_difference, max_relative_error

NET_SHAPES = [(6, 5, 4), (8, 6, 5, 4), (5, 7, 6)]
N_OLD = 2


def _net(shape, seed, head="linear"):
    net = init_network(list(shape), head=head, seed=seed)
    rng = np.random.default_rng(seed + 7)
    for i, b in enumerate(net.biases):
        if head == "linear" or i < len(net.biases) - 1:
            b[...] = rng.normal(scale=0.3, size=b.shape)
    return net


def _data(shape, seed, n=6):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, shape[0]))
    y = rng.integers(0, shape[-1], size=n)
    return rng, X, y


def case_ce(shape, seed):
    net = _net(shape, seed)
    _, X, y = _data(shape, seed)

    def f():
        return cross_entropy_labels(forward(net, X)[1], y)[0]

    cache, logits = forward(net, X)
    return f, backward(net, cache, cross_entropy_labels(logits, y)[1]), net.parameters()


def case_kd(shape, seed, T=2.0):
    net = _net(shape, seed)
    rng, X, _ = _data(shape, seed)
    rec = softmax(rng.normal(size=(X.shape[0], N_OLD)))

    def f():
        return kd_loss_logits(rec, forward(net, X)[1][:, :N_OLD], T)[0]

    cache, logits = forward(net, X)
    d = np.zeros_like(logits)
    d[:, :N_OLD] = kd_loss_logits(rec, logits[:, :N_OLD], T)[1]
    return f, backward(net, cache, d), net.parameters()


def case_penalty(shape, seed, lam=3.0):
    net = _net(shape, seed)
    rng, X, y = _data(shape, seed)
    imap = ImportanceMap([rng.uniform(0, 2, size=p.shape) for p in net.parameters()],
                         [p + rng.normal(scale=0.2, size=p.shape) for p in net.parameters()])

    def f():
        return cross_entropy_labels(forward(net, X)[1], y)[0] + quadratic_importance_penalty(net, imap, lam)[0]

    cache, logits = forward(net, X)
    g = backward(net, cache, cross_entropy_labels(logits, y)[1])
    return f, add_grads(g, quadratic_importance_penalty(net, imap, lam)[1]), net.parameters()


def case_ilos(shape, seed, alpha=0.5, beta=0.5, T=2.0):
    net = _net(shape, seed)
    rng, X, y = _data(shape, seed)
    rec = rng.normal(size=(X.shape[0], N_OLD))

    def f():
        return ilos_loss(forward(net, X)[1], y, rec, alpha, beta, T)[0]

    cache, logits = forward(net, X)
    return f, backward(net, cache, ilos_loss(logits, y, rec, alpha, beta, T)[1]), net.parameters()


def case_less_forget(shape, seed):
    net = _net(shape, seed, head="cosine")
    rng, X, _ = _data(shape, seed)
    old = np.abs(rng.normal(size=(X.shape[0], shape[-2])))

    def f():
        return lucir_less_forget(forward(net, X)[0].features, old)[0]

    cache, logits = forward(net, X)
    d = lucir_less_forget(cache.features, old)[1]
    return f, backward(net, cache, np.zeros_like(logits), dfeatures=d), net.parameters()


def case_margin_ranking(shape, seed, margin=0.5, top_k=2):
    net = _net(shape, seed, head="cosine")
    rng, X, _ = _data(shape, seed)
    y = rng.integers(0, N_OLD, size=X.shape[0])

    def f():
        return lucir_margin_ranking(forward(net, X)[0].cos, y, N_OLD, margin + 1.0, top_k)[0]

    cache, logits = forward(net, X)
    d = lucir_margin_ranking(cache.cos, y, N_OLD, margin + 1.0, top_k)[1]
    return f, backward(net, cache, np.zeros_like(logits), dcos=d), net.parameters()


def case_lucir_combined(shape, seed):
    net = _net(shape, seed, head="cosine")
    rng, X, y = _data(shape, seed)
    mem = np.zeros(X.shape[0], dtype=bool)
    mem[: X.shape[0] // 2] = True
    y[mem] = rng.integers(0, N_OLD, size=mem.sum())
    old = np.abs(rng.normal(size=(X.shape[0], shape[-2])))

    def run():
        cache, logits = forward(net, X)
        return cache, lucir_combined(logits, cache.cos, cache.features, y, mem, old, N_OLD, 5.0, 1.5, 2)

    cache, (_, g) = run()
    return (lambda: run()[1][0]), backward(net, cache, g.dlogits, g.dfeatures, g.dcos), net.parameters()


CASES = {
    "cross-entropy": case_ce,
    "distillation": case_kd,
    "importance penalty": case_penalty,
    "ilos": case_ilos,
    "lucir less-forget": case_less_forget,
    "lucir margin ranking": case_margin_ranking,
    "lucir combined": case_lucir_combined,
}


def check(case, shape, seed, eps=1e-5) -> float:
    f, analytic, params = case(shape, seed)
    numeric = central_difference(f, params, eps)
    return max_relative_error(analytic, numeric)
