"""Continual-learning strategies behind one task lifecycle.

``make_strategy(spec, rng)`` builds a strategy by id; ``run_strategy_task``
expands the output layer, trains on one task and concludes it.
"""

from __future__ import annotations

import numpy as np

from ..network import Network
from .alignment import (bic_apply, bic_fit, wa_adb_factors, wa_adb_rescale, wa_mdf_align,
                        wa_mdf_gamma, wa_mdf_norm_gap)
from .base import Strategy, StrategySpec, TaskContext
from .projection import ProjectionError, agem_project, gem_project
from .regularization import EWC, MAS, Finetune, LwF, Offline
from .rehearsal import (ABLATION_TERMS, AGEM, BiC, GEM, ICaRL, ILOS, LUCIR, WAADB, WAMDF,
                        ReplayAblation, make_ablation)

STRATEGIES: dict[str, type[Strategy]] = {
    cls.id: cls
    for cls in (Offline, Finetune, LwF, EWC, MAS, ICaRL, ILOS, GEM, AGEM, LUCIR, WAMDF, WAADB, BiC)
}
REGULARIZATION_IDS = ("lwf", "ewc", "mas")
BASELINE_IDS = ("offline", "finetune")
ABLATIONS: dict[str, type[Strategy]] = {f"replay-{t}": make_ablation(t) for t in ABLATION_TERMS}


def strategy_class(strategy_id: str) -> type[Strategy]:
    try:
        return STRATEGIES.get(strategy_id) or ABLATIONS[strategy_id]
    except KeyError:
        known = ", ".join(list(STRATEGIES) + list(ABLATIONS))
        raise ValueError(f"unknown strategy {strategy_id!r}; known ids: {known}") from None


def make_strategy(spec: StrategySpec, rng: np.random.Generator) -> Strategy:
    return strategy_class(spec.id)(spec, rng)


def run_strategy_task(strategy: Strategy, net: Network, ctx: TaskContext) -> tuple[Network, dict]:
    """Train ``net`` on one task; returns the updated network and a timing/diagnostics record."""
    seen = set(range(net.num_classes)) if ctx.index > 0 else set()
    if seen & set(ctx.classes):
        raise ValueError(f"task {ctx.index} reintroduces already trained classes {sorted(seen & set(ctx.classes))}")
    return strategy.run_task(net, ctx)


__all__ = [
    "ABLATIONS", "ABLATION_TERMS", "AGEM", "BASELINE_IDS", "BiC", "EWC", "Finetune", "GEM", "ICaRL", "ILOS",
    "LUCIR", "LwF", "MAS", "Offline", "ProjectionError", "REGULARIZATION_IDS", "ReplayAblation", "STRATEGIES",
    "Strategy", "StrategySpec", "TaskContext", "WAADB", "WAMDF", "agem_project", "bic_apply", "bic_fit",
    "gem_project", "make_strategy", "run_strategy_task", "strategy_class", "wa_adb_factors", "wa_adb_rescale",
    "wa_mdf_align", "wa_mdf_gamma", "wa_mdf_norm_gap",
]
