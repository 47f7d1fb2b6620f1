"""Learned environment models: state-transition and reward regressors.

The transition net predicts the state delta (residual form: next = state +
f(state, action)); the reward net regresses the realized step reward.  The
structured reward estimate combines the predicted node availability with the
current route bottleneck to score candidate actions before they are executed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import MsKey
from .nn import DenseNet, adam_init, backward, forward, init_dense, optimize_step
from .sim import FEATURES_PER_MS, ActionCommand, DecisionContext


@dataclass(frozen=True)
class Transition:
    """One replay record: state, raw action vector, reward, next state."""

    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool = False


@dataclass(frozen=True)
class TwinConfig:
    hidden: tuple[int, ...] = (128, 128)
    lr: float = 1e-3
    structured_estimate: bool = True
    use_predicted_links: bool = False
    availability_floor: float = 0.01  # fraction of speed / link capacity


class TwinModels:
    """Transition + reward regressors over (state ⊕ action) vectors."""

    def __init__(
        self,
        state_dim: int,
        action_dim: int,
        slots: int,
        cfg: TwinConfig,
        rng: np.random.Generator,
    ):
        self.cfg = cfg
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.slots = slots
        in_dim = state_dim + action_dim
        self.transition_net: DenseNet = init_dense((in_dim, *cfg.hidden, state_dim), rng)
        self.reward_net: DenseNet = init_dense((in_dim, *cfg.hidden, 1), rng)
        self.opt_transition = adam_init(self.transition_net.params(), cfg.lr)
        self.opt_reward = adam_init(self.reward_net.params(), cfg.lr)
        self.transition_losses: list[float] = []
        self.reward_losses: list[float] = []
        # Residual-resource entries live after the DAG feature block.
        self.residual_slice = slice(slots * FEATURES_PER_MS, state_dim)


def zero_transition_net(models: TwinModels) -> None:
    """Zero the transition net so predictions start at the identity."""
    for p in models.transition_net.params():
        p[...] = 0.0


def predict_next_state(models: TwinModels, state: np.ndarray, action: np.ndarray) -> np.ndarray:
    """Residual-form prediction, clamped to [0, 1] on the residual entries."""
    x = np.concatenate([state, action])
    delta = forward(models.transition_net, x)
    nxt = state + delta
    rs = models.residual_slice
    nxt[rs] = np.clip(nxt[rs], 0.0, 1.0)
    return nxt


def fit_models(models: TwinModels, batch: Sequence[Transition]) -> tuple[float, float]:
    """One optimizer step on each model against a minibatch; returns the
    (transition, reward) mean-squared errors before the step."""
    if not batch:
        raise ValueError("batch must be non-empty")
    states = np.stack([t.state for t in batch])
    actions = np.stack([t.action for t in batch])
    next_states = np.stack([t.next_state for t in batch])
    rewards = np.array([[t.reward] for t in batch])
    x = np.concatenate([states, actions], axis=1)

    target_delta = next_states - states
    pred_delta = forward(models.transition_net, x)
    err_t = pred_delta - target_delta
    loss_t = float(np.mean(err_t**2))
    upstream_t = 2.0 * err_t / err_t.size
    grads_t, _ = backward(models.transition_net, x, upstream_t)
    optimize_step(models.opt_transition, models.transition_net.params(), grads_t)

    pred_r = forward(models.reward_net, x)
    err_r = pred_r - rewards
    loss_r = float(np.mean(err_r**2))
    upstream_r = 2.0 * err_r / err_r.size
    grads_r, _ = backward(models.reward_net, x, upstream_r)
    optimize_step(models.opt_reward, models.reward_net.params(), grads_r)

    models.transition_losses.append(loss_t)
    models.reward_losses.append(loss_r)
    return loss_t, loss_r


def transition_mse(models: TwinModels, batch: Sequence[Transition]) -> float:
    """Held-out MSE of the transition model (no parameter update)."""
    if not batch:
        raise ValueError("batch must be non-empty")
    states = np.stack([t.state for t in batch])
    actions = np.stack([t.action for t in batch])
    next_states = np.stack([t.next_state for t in batch])
    x = np.concatenate([states, actions], axis=1)
    pred = forward(models.transition_net, x)
    return float(np.mean((pred - (next_states - states)) ** 2))


def identity_mse(batch: Sequence[Transition]) -> float:
    """MSE of predicting next state = state, the baseline the twin must beat."""
    if not batch:
        raise ValueError("batch must be non-empty")
    states = np.stack([t.state for t in batch])
    next_states = np.stack([t.next_state for t in batch])
    return float(np.mean((next_states - states) ** 2))


def estimate_reward(
    models: TwinModels,
    state: np.ndarray,
    action: np.ndarray,
    command: ActionCommand,
    ctx: DecisionContext,
) -> float:
    """Estimated step reward for a candidate action.

    Structured form: the negated worst per-microservice completion estimate,
    compute load over the predicted node availability plus the current queue
    backlog plus data over the route bottleneck.  Falls back to the reward net
    when the structured estimate is disabled.
    """
    if not models.cfg.structured_estimate:
        return float(forward(models.reward_net, np.concatenate([state, action]))[0])

    nxt = predict_next_state(models, state, action)
    n_links = len(ctx.link_order)
    link_off = models.residual_slice.start
    node_off = link_off + n_links
    floor = models.cfg.availability_floor

    assigned_nodes: dict[MsKey, str] = {
        key: act.target_node for key, act in command.entries.items()
    }
    worst = 0.0
    node_index = {nid: i for i, nid in enumerate(ctx.node_order)}
    link_index = {lid: i for i, lid in enumerate(ctx.link_order)}
    for p in ctx.pending:
        if p.key not in assigned_nodes:
            continue
        q = assigned_nodes[p.key]
        frac = max(float(nxt[node_off + node_index[q]]), floor)
        avail_speed = ctx.node_speed[q] * frac
        term = p.ms.compute_load_cycles / avail_speed + ctx.node_backlog_s[q]
        if p.ms.predecessors:
            data_term = 0.0
            for pid in sorted(p.ms.predecessors):
                key = (p.key[0], pid)
                src = assigned_nodes.get(key) or ctx.resolved_node(key)
                if src is None or src == q:
                    continue
                path = ctx.route(src, q)
                bw = math.inf
                cap_floor = math.inf
                for a, b in zip(path, path[1:]):
                    lid = ctx.topo.link_between(a, b).link_id
                    if models.cfg.use_predicted_links:
                        cand = float(nxt[link_off + link_index[lid]]) * ctx.link_capacity[lid]
                    else:
                        cand = ctx.link_residual_bps[lid]
                    bw = min(bw, cand)
                    cap_floor = min(cap_floor, ctx.link_capacity[lid])
                # Floor guards against division blowup on exhausted links.
                bw = max(bw, floor * cap_floor)
                data_term = max(data_term, p.ms.data_size_bits / bw)
            term += data_term
        worst = max(worst, term)
    return -worst
