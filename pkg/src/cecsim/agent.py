"""Deterministic policy-gradient learner with twin-guided action selection.

The actor emits one block per microservice slot (per-node logits plus
bandwidth and deferral pre-activations); decoding takes the argmax node, a
sigmoid bandwidth fraction, and a softplus deferral.  Candidate actions are
scored by the learned environment model before execution, and actor/critic
training follows the standard deterministic policy gradient with softly
updated target networks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .model import MsKey, NodeId
from .nn import (
    DenseNet,
    adam_init,
    backward,
    clone_net,
    forward,
    init_dense,
    load_nets,
    optimize_step,
    save_nets,
    soft_update,
)
from .sim import ActionCommand, CecEnv, DecisionContext, EnvState, MsAction
from .twin import Transition, TwinModels, estimate_reward, fit_models


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.9
    tau: float = 0.01
    lr_actor: float = 1e-3
    lr_critic: float = 2e-3
    buffer_capacity: int = 10_000
    batch_size: int = 64
    update_start: int = 200
    hidden_actor: tuple[int, ...] = (256, 256)
    hidden_critic: tuple[int, ...] = (256, 256)
    candidates: int = 8
    eval_candidate_spread: float = 0.3
    noise_std_start: float = 0.3
    noise_std_end: float = 0.05
    max_grad_norm: float = 1.0
    defer_max_s: float = 10.0
    min_fraction: float = 0.05
    twin_enabled: bool = True
    twin_warmup: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError("gamma must be in [0, 1)")
        if not (0.0 < self.tau <= 1.0):
            raise ValueError("tau must be in (0, 1]")
        if self.candidates < 1:
            raise ValueError("candidates must be >= 1")


class ReplayBuffer:
    """Bounded FIFO store of transitions with uniform sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._data: list[Transition] = []
        self._write = 0

    def __len__(self) -> int:
        return len(self._data)

    def add(self, transition: Transition) -> None:
        if len(self._data) < self.capacity:
            self._data.append(transition)
        else:
            self._data[self._write] = transition
            self._write = (self._write + 1) % self.capacity

    def sample(self, rng: np.random.Generator, n: int) -> list[Transition]:
        if n > len(self._data):
            raise ValueError(f"cannot sample {n} from {len(self._data)} transitions")
        idx = rng.choice(len(self._data), size=n, replace=False)
        return [self._data[i] for i in idx]


class DdpgAgent:
    def __init__(
        self,
        state_dim: int,
        slots: int,
        node_order: Sequence[NodeId],
        cfg: AgentConfig,
    ):
        self.cfg = cfg
        self.state_dim = state_dim
        self.slots = slots
        self.node_order = tuple(node_order)
        self.slot_width = len(self.node_order) + 2
        self.action_dim = slots * self.slot_width
        self.rng = np.random.default_rng([cfg.seed, 3])
        self.actor = init_dense((state_dim, *cfg.hidden_actor, self.action_dim), self.rng)
        # start deferrals near zero: softplus(-3) ~ 0.05 instead of
        # softplus(0) ~ 0.69 seconds of gratuitous waiting per flow
        for slot in range(slots):
            self.actor.biases[-1][slot * self.slot_width + len(self.node_order) + 1] -= 3.0
        self.critic = init_dense((state_dim + self.action_dim, *cfg.hidden_critic, 1), self.rng)
        self.actor_target = clone_net(self.actor)
        self.critic_target = clone_net(self.critic)
        self.opt_actor = adam_init(self.actor.params(), cfg.lr_actor)
        self.opt_critic = adam_init(self.critic.params(), cfg.lr_critic)
        self.buffer = ReplayBuffer(cfg.buffer_capacity)


def _softplus(z: float) -> float:
    if z > 30.0:
        return z
    return math.log1p(math.exp(z))


def _inv_softplus(y: float) -> float:
    if y <= 1e-9:
        return -40.0  # softplus(-40) ~ 4e-18, i.e. zero deferral
    if y > 30.0:
        return y
    return math.log(math.expm1(y))


def decode_action(
    raw: np.ndarray,
    pending_keys: Sequence[MsKey],
    node_order: Sequence[NodeId],
    slots: int,
    defer_max_s: float,
    min_fraction: float = 0.05,
) -> ActionCommand:
    """Map a raw actor output to a concrete command for the pending snapshot.

    Slot i drives the i-th pending microservice: argmax over node logits (ties
    resolve to the lowest node id via ordering), sigmoid bandwidth fraction
    clamped to [min_fraction, 1], softplus deferral clamped to [0, defer_max].
    """
    n_nodes = len(node_order)
    width = n_nodes + 2
    entries: dict[MsKey, MsAction] = {}
    for i, key in enumerate(pending_keys):
        if i >= slots:
            break
        seg = raw[i * width : (i + 1) * width]
        node = node_order[int(np.argmax(seg[:n_nodes]))]
        fraction = float(np.clip(1.0 / (1.0 + math.exp(-float(seg[n_nodes]))), min_fraction, 1.0))
        defer = float(np.clip(_softplus(float(seg[n_nodes + 1])), 0.0, defer_max_s))
        entries[key] = MsAction(node, fraction, defer)
    return ActionCommand(entries)


def encode_command(
    command: ActionCommand,
    pending_keys: Sequence[MsKey],
    node_order: Sequence[NodeId],
    slots: int,
) -> np.ndarray:
    """Inverse of decode_action (up to clamping); used to feed baseline
    decisions through the same replay/twin pipeline as learner actions."""
    n_nodes = len(node_order)
    width = n_nodes + 2
    index = {nid: i for i, nid in enumerate(node_order)}
    raw = np.zeros(slots * width)
    for i, key in enumerate(pending_keys):
        if i >= slots:
            break
        act = command.entries.get(key)
        if act is None:
            continue
        seg = raw[i * width : (i + 1) * width]
        seg[index[act.target_node]] = 1.0
        frac = min(max(act.bandwidth_fraction, 0.05), 0.999)
        seg[n_nodes] = math.log(frac / (1.0 - frac))
        seg[n_nodes + 1] = _inv_softplus(act.defer_s)
    return raw


def select_action(
    agent: DdpgAgent,
    state: EnvState,
    twin: TwinModels | None,
    ctx: DecisionContext,
    explore: bool,
    noise_std: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, ActionCommand]:
    """Actor output, optionally perturbed, optionally re-ranked by the twin.

    With k candidates the actor's (noisy) proposal plus k-1 perturbations are
    each scored by the estimated reward of the decoded command and the best
    one wins; k=1 (or no twin) is the plain deterministic policy.
    """
    if rng is None:
        rng = agent.rng
    s_vec = state.vector()
    base = forward(agent.actor, s_vec)
    k = agent.cfg.candidates if (twin is not None and agent.cfg.twin_enabled) else 1
    pending = [p.key for p in ctx.pending]

    def decode(raw: np.ndarray) -> ActionCommand:
        return decode_action(
            raw, pending, agent.node_order, agent.slots, agent.cfg.defer_max_s, agent.cfg.min_fraction
        )

    if k <= 1:
        raw = base + rng.normal(0.0, noise_std, base.shape) if explore else base
        return raw, decode(raw)

    spread = noise_std if explore else max(noise_std, 0.1)
    candidates = [base + rng.normal(0.0, noise_std, base.shape) if explore else base]
    for _ in range(k - 1):
        candidates.append(base + rng.normal(0.0, spread, base.shape))
    best_raw = candidates[0]
    best_cmd = decode(candidates[0])
    best_score = estimate_reward(twin, s_vec, candidates[0], best_cmd, ctx)
    for raw in candidates[1:]:
        cmd = decode(raw)
        score = estimate_reward(twin, s_vec, raw, cmd, ctx)
        if score > best_score:
            best_raw, best_cmd, best_score = raw, cmd, score
    return best_raw, best_cmd


def _clip_grads(grads: list[np.ndarray], max_norm: float) -> float:
    """Global-norm gradient clipping in place; returns the pre-clip norm."""
    total = math.sqrt(sum(float((g**2).sum()) for g in grads))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


def critic_update(agent: DdpgAgent, batch: Sequence[Transition]) -> float:
    """Temporal-difference regression against the target networks."""
    n = len(batch)
    states = np.stack([t.state for t in batch])
    actions = np.stack([t.action for t in batch])
    rewards = np.array([t.reward for t in batch])
    next_states = np.stack([t.next_state for t in batch])
    not_done = np.array([0.0 if t.done else 1.0 for t in batch])

    next_actions = forward(agent.actor_target, next_states)
    q_next = forward(agent.critic_target, np.concatenate([next_states, next_actions], axis=1))[:, 0]
    y = rewards + agent.cfg.gamma * not_done * q_next

    x = np.concatenate([states, actions], axis=1)
    q = forward(agent.critic, x)[:, 0]
    err = q - y
    loss = float(np.mean(err**2))
    upstream = (2.0 * err / n)[:, None]
    grads, _ = backward(agent.critic, x, upstream)
    _clip_grads(grads, agent.cfg.max_grad_norm)
    optimize_step(agent.opt_critic, agent.critic.params(), grads)
    return loss


def actor_gradients(agent: DdpgAgent, states: np.ndarray) -> list[np.ndarray]:
    """Gradients of -mean_i Q(s_i, mu(s_i)) w.r.t. the actor parameters."""
    n = states.shape[0]
    actions = forward(agent.actor, states)
    x = np.concatenate([states, actions], axis=1)
    _, input_grad = backward(agent.critic, x, np.ones((n, 1)))
    dq_da = input_grad[:, agent.state_dim :]
    grads, _ = backward(agent.actor, states, -dq_da / n)
    return grads


def actor_update(agent: DdpgAgent, batch: Sequence[Transition]) -> float:
    """Deterministic policy gradient through the frozen critic; returns the
    (pre-clip) gradient norm."""
    states = np.stack([t.state for t in batch])
    grads = actor_gradients(agent, states)
    norm = _clip_grads(grads, agent.cfg.max_grad_norm)
    optimize_step(agent.opt_actor, agent.actor.params(), grads)
    return norm


def soft_update_targets(agent: DdpgAgent) -> None:
    soft_update(agent.actor_target.params(), agent.actor.params(), agent.cfg.tau)
    soft_update(agent.critic_target.params(), agent.critic.params(), agent.cfg.tau)


@dataclass
class EpisodeRow:
    episode: int
    steps: int
    mean_reward: float
    critic_loss: float
    actor_grad_norm: float
    twin_transition_loss: float
    twin_reward_loss: float
    eval_act_s: float


@dataclass
class TrainReport:
    rows: list[EpisodeRow] = field(default_factory=list)

    def mean_rewards(self) -> list[float]:
        return [r.mean_reward for r in self.rows]

    def critic_losses(self) -> list[float]:
        return [r.critic_loss for r in self.rows]


class AgentScheduler:
    """Scheduler adapter so a trained agent can drive the simulator.

    Pass an `rng` (or `rng_seed`) to make evaluation runs independent of the
    agent's training RNG state and of each other.
    """

    def __init__(
        self,
        agent: DdpgAgent,
        twin: TwinModels | None,
        explore: bool = False,
        noise_std: float = 0.0,
        rng_seed: int | None = None,
    ):
        self.agent = agent
        self.twin = twin
        self.explore = explore
        self.noise_std = noise_std
        self.rng = np.random.default_rng([rng_seed, 7]) if rng_seed is not None else None
        self.name = "dtdrlmo" if (twin is not None and agent.cfg.twin_enabled) else "drl_no_dt"

    def decide(self, env: CecEnv) -> ActionCommand:
        ctx = env.decision_context()
        _, command = select_action(
            self.agent, env.observe(), self.twin, ctx, self.explore, self.noise_std, rng=self.rng
        )
        return command


def train(
    agent: DdpgAgent,
    env_factory: Callable[[int], CecEnv],
    twin: TwinModels | None,
    episodes: int,
    max_steps: int,
    eval_factory: Callable[[], CecEnv] | None = None,
    eval_every: int = 0,
    checkpoint_dir: str | Path | None = None,
) -> TrainReport:
    """Full training loop: twin-guided rollout, replay storage, critic and
    actor updates, soft target updates, and interleaved twin fitting.

    Deterministic for a fixed agent seed and deterministic env_factory.
    Aborts with a diagnostic checkpoint if a loss goes non-finite.
    """
    report = TrainReport()
    cfg = agent.cfg
    for ep in range(episodes):
        frac = ep / max(episodes - 1, 1)
        noise_std = cfg.noise_std_start + (cfg.noise_std_end - cfg.noise_std_start) * frac
        env = env_factory(ep)
        state = env.observe()
        rewards: list[float] = []
        critic_losses: list[float] = []
        actor_norms: list[float] = []
        twin_losses: list[tuple[float, float]] = []
        steps = 0
        while not env.done and steps < max_steps:
            ctx = env.decision_context()
            raw, command = select_action(agent, state, twin, ctx, explore=True, noise_std=noise_std)
            next_state, reward, done, _ = env.step(command)
            agent.buffer.add(
                Transition(state.vector(), raw, reward, next_state.vector(), done)
            )
            if (
                twin is not None
                and cfg.twin_enabled
                and len(agent.buffer) >= max(cfg.twin_warmup, cfg.batch_size)
            ):
                twin_losses.append(fit_models(twin, agent.buffer.sample(agent.rng, cfg.batch_size)))
            if len(agent.buffer) >= max(cfg.update_start, cfg.batch_size):
                batch = agent.buffer.sample(agent.rng, cfg.batch_size)
                closs = critic_update(agent, batch)
                anorm = actor_update(agent, batch)
                soft_update_targets(agent)
                if not (math.isfinite(closs) and math.isfinite(anorm)):
                    if checkpoint_dir is not None:
                        save_agent(Path(checkpoint_dir) / "diverged_checkpoint.json", agent, twin)
                    raise RuntimeError(f"non-finite loss at episode {ep}, step {steps}")
                critic_losses.append(closs)
                actor_norms.append(anorm)
            state = next_state
            rewards.append(reward)
            steps += 1
            if done:
                break
        eval_act = math.nan
        if eval_factory is not None and eval_every > 0 and (ep + 1) % eval_every == 0:
            from .sim import run_episode

            eval_env = eval_factory()
            result = run_episode(eval_env, AgentScheduler(agent, twin, rng_seed=ep))
            eval_act = result.act_s
        report.rows.append(
            EpisodeRow(
                episode=ep,
                steps=steps,
                mean_reward=sum(rewards) / len(rewards) if rewards else 0.0,
                critic_loss=sum(critic_losses) / len(critic_losses) if critic_losses else math.nan,
                actor_grad_norm=sum(actor_norms) / len(actor_norms) if actor_norms else math.nan,
                twin_transition_loss=twin_losses[-1][0] if twin_losses else math.nan,
                twin_reward_loss=twin_losses[-1][1] if twin_losses else math.nan,
                eval_act_s=eval_act,
            )
        )
    return report


def save_agent(path: str | Path, agent: DdpgAgent, twin: TwinModels | None) -> None:
    nets = {
        "actor": agent.actor,
        "critic": agent.critic,
        "actor_target": agent.actor_target,
        "critic_target": agent.critic_target,
    }
    if twin is not None:
        nets["twin_transition"] = twin.transition_net
        nets["twin_reward"] = twin.reward_net
    extra = {
        "state_dim": agent.state_dim,
        "slots": agent.slots,
        "node_order": list(agent.node_order),
        "twin_enabled": agent.cfg.twin_enabled,
    }
    save_nets(path, nets, extra)


def load_agent(path: str | Path, cfg: AgentConfig, twin_cfg=None) -> tuple[DdpgAgent, TwinModels | None]:
    from .twin import TwinConfig

    nets, extra = load_nets(path)
    agent = DdpgAgent(extra["state_dim"], extra["slots"], extra["node_order"], cfg)
    agent.actor = nets["actor"]
    agent.critic = nets["critic"]
    agent.actor_target = nets["actor_target"]
    agent.critic_target = nets["critic_target"]
    agent.opt_actor = adam_init(agent.actor.params(), cfg.lr_actor)
    agent.opt_critic = adam_init(agent.critic.params(), cfg.lr_critic)
    twin = None
    if "twin_transition" in nets:
        twin = TwinModels(
            extra["state_dim"],
            agent.action_dim,
            extra["slots"],
            twin_cfg if twin_cfg is not None else TwinConfig(),
            np.random.default_rng([cfg.seed, 4]),
        )
        twin.transition_net = nets["twin_transition"]
        twin.reward_net = nets["twin_reward"]
        twin.opt_transition = adam_init(twin.transition_net.params(), twin.cfg.lr)
        twin.opt_reward = adam_init(twin.reward_net.params(), twin.cfg.lr)
    return agent, twin
