"""Soft actor-critic on the shared-workspace environment.

Twin critics with Polyak-averaged targets, a squashed-Gaussian actor, and
a learned entropy temperature. Gradient routines take caller-supplied
standard-normal draws so independent reimplementations can replay them.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import nets
from .env import ArmEnv, Collision, EnvConfig, InstructionSatisfied
from .instruction import TaskSpec
from .params import AdamState, ParamSet, adam_step
from .tensor import Graph

Array = np.ndarray


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class SACHyper:
    """huber = 0 keeps the plain squared critic error; a positive value
    bounds each sample's influence to that threshold, which matters when
    rare completion-bonus transitions dominate small fresh batches."""
    gamma: float = 0.99
    tau: float = 0.005
    entropy_target: float = -float(nets.ACT_DIM)
    batch: int = 256
    capacity: int = 100_000
    lr: float = 3e-4
    hidden: int = 128
    start_steps: int = 1000
    log_alpha0: float = 0.0
    huber: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau {self.tau} outside (0,1)")
        if self.batch < 1 or self.capacity < self.batch:
            raise ValueError("need capacity >= batch >= 1")
        if not math.isfinite(self.log_alpha0):
            raise ValueError("log_alpha0 must be finite")
        if self.huber < 0.0:
            raise ValueError("huber must be non-negative")


@dataclass
class SACParams:
    actor: ParamSet
    c1: ParamSet
    c2: ParamSet
    t1: ParamSet
    t2: ParamSet
    log_alpha: float = 0.0

    def copy(self) -> "SACParams":
        """Deep copy; adapting the copy can never leak into the source."""
        return SACParams(self.actor.copy(), self.c1.copy(), self.c2.copy(),
                         self.t1.copy(), self.t2.copy(), self.log_alpha)

    @property
    def alpha(self) -> float:
        return math.exp(self.log_alpha)

    def digest(self) -> str:
        h = hashlib.sha256()
        for ps in (self.actor, self.c1, self.c2, self.t1, self.t2):
            h.update(ps.digest().encode())
        h.update(np.float64(self.log_alpha).tobytes())
        return h.hexdigest()


def init_sac(rng: np.random.Generator, hidden: int = 128,
             log_alpha0: float = 0.0) -> SACParams:
    actor = nets.init_policy(rng, hidden)
    c1 = nets.init_critic(rng, hidden)
    c2 = nets.init_critic(rng, hidden)
    return SACParams(actor, c1, c2, c1.replace({}), c2.replace({}),
                     log_alpha0)


class ReplayBuffer:
    """Fixed-capacity ring of transitions; batch sampling is uniform
    without replacement."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.s = np.empty((capacity, nets.OBS_DIM))
        self.a = np.empty((capacity, nets.ACT_DIM))
        self.r = np.empty(capacity)
        self.s2 = np.empty((capacity, nets.OBS_DIM))
        self.done = np.empty(capacity)
        self._cursor = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, s: Array, a: Array, r: float, s2: Array, done: float):
        i = self._cursor
        self.s[i], self.a[i], self.r[i] = s, a, r
        self.s2[i], self.done[i] = s2, done
        self._cursor = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, rng: np.random.Generator, batch: int) -> dict:
        if batch > self._size:
            raise ValueError(f"batch {batch} exceeds buffer size {self._size}")
        idx = rng.choice(self._size, size=batch, replace=False)
        return {"s": self.s[idx], "a": self.a[idx], "r": self.r[idx],
                "s2": self.s2[idx], "done": self.done[idx]}


def polyak(target: ParamSet, online: ParamSet, tau: float) -> ParamSet:
    return target.replace({name: tau * online[name] + (1.0 - tau) * value
                           for name, value in target.items()})


def critic_target(p: SACParams, batch: dict, noise_next: Array,
                  v_max: float, gamma: float) -> Array:
    """Soft Bellman backup y = r + γ(1-done)(min targets - α log π)."""
    mu2, logsig2 = nets.policy_forward(p.actor, batch["s2"])
    a2, logp2 = nets.sample_action(mu2, logsig2, noise_next, v_max)
    q1 = nets.critic_forward(p.t1, batch["s2"], a2).reshape(-1)
    q2 = nets.critic_forward(p.t2, batch["s2"], a2).reshape(-1)
    return batch["r"] + gamma * (1.0 - batch["done"]) * (
        np.minimum(q1, q2) - p.alpha * logp2)


def j_sac(p: SACParams, batch: dict, noise_next: Array, noise_pi: Array,
          v_max: float, hyper: SACHyper) -> tuple[dict, dict]:
    """Losses and gradients for one minibatch.

    Returns (losses, grads) with grads keyed 'actor', 'c1', 'c2' (name ->
    array dicts) and 'log_alpha' (float).
    """
    n = batch["s"].shape[0]
    y = critic_target(p, batch, noise_next, v_max, hyper.gamma)

    def bounded_sq(g: Graph, err: int):
        # squared error whose per-sample slope saturates at 2*huber:
        # |e| <= d gives e^2, beyond that 2d|e| - d^2
        if hyper.huber <= 0.0:
            return g.mean(g.square(err))
        d = hyper.huber
        mag = g.add(g.relu(err), g.relu(g.neg(err)))
        capped = g.minimum(mag, g.constant(np.full((n, 1), d)))
        return g.mean(g.add(g.square(capped),
                            g.scale(g.sub(mag, capped), 2.0 * d)))

    g = Graph()
    c1_ids = nets.register_params(g, p.c1)
    c2_ids = nets.register_params(g, p.c2)
    s_id = g.constant(batch["s"])
    a_id = g.constant(batch["a"])
    q1 = nets.critic_forward_g(g, c1_ids, s_id, a_id)
    q2 = nets.critic_forward_g(g, c2_ids, s_id, a_id)
    y_id = g.constant(y.reshape(-1, 1))
    closs = g.add(bounded_sq(g, g.sub(q1, y_id)),
                  bounded_sq(g, g.sub(q2, y_id)))
    critic_loss = float(g.value(closs))
    by_id = g.backward(closs)
    c1_g = {name: by_id[nid] for name, nid in c1_ids.items() if nid in by_id}
    c2_g = {name: by_id[nid] for name, nid in c2_ids.items() if nid in by_id}

    g = Graph()
    a_ids = nets.register_params(g, p.actor)
    mu_id, logsig_id = nets.policy_forward_g(g, a_ids, batch["s"])
    act_id, logp_id = nets.sample_action_g(g, mu_id, logsig_id, noise_pi,
                                           v_max)
    frozen1 = {name: g.constant(value) for name, value in p.c1.items()}
    frozen2 = {name: g.constant(value) for name, value in p.c2.items()}
    s2_id = g.constant(batch["s"])
    q1_id = g.reshape(nets.critic_forward_g(g, frozen1, s2_id, act_id), (n,))
    q2_id = g.reshape(nets.critic_forward_g(g, frozen2, s2_id, act_id), (n,))
    aloss = g.mean(g.sub(g.scale(logp_id, p.alpha),
                         g.minimum(q1_id, q2_id)))
    actor_loss = float(g.value(aloss))
    logp_vals = g.value(logp_id).copy()
    actor_g = nets.grads_by_name(g, a_ids, aloss)

    mean_excess = float(np.mean(logp_vals + hyper.entropy_target))
    temp_loss = -p.log_alpha * mean_excess
    losses = {"critic_loss": critic_loss, "actor_loss": actor_loss,
              "temp_loss": temp_loss}
    if not all(math.isfinite(v) for v in losses.values()):
        raise TrainingDiverged(f"non-finite SAC losses {losses}")
    grads = {"c1": c1_g, "c2": c2_g, "actor": actor_g,
             "log_alpha": -mean_excess}
    return losses, grads


@dataclass
class SACTrainState:
    params: SACParams
    hyper: SACHyper
    opt_actor: AdamState = None
    opt_c1: AdamState = None
    opt_c2: AdamState = None
    alpha_m: float = 0.0
    alpha_v: float = 0.0
    alpha_t: int = 0

    def __post_init__(self):
        if self.opt_actor is None:
            self.opt_actor = AdamState.init(self.params.actor)
            self.opt_c1 = AdamState.init(self.params.c1)
            self.opt_c2 = AdamState.init(self.params.c2)


def sac_update(state: SACTrainState, buffer: ReplayBuffer,
               rng: np.random.Generator, v_max: float) -> dict:
    """One gradient step on critics, actor, and temperature, then the
    Polyak target update. Mutates state in place."""
    h = state.hyper
    batch = buffer.sample(rng, h.batch)
    noise_next = rng.standard_normal((h.batch, nets.ACT_DIM))
    noise_pi = rng.standard_normal((h.batch, nets.ACT_DIM))
    p = state.params
    losses, grads = j_sac(p, batch, noise_next, noise_pi, v_max, h)

    c1 = adam_step(p.c1, grads["c1"], lr=h.lr, state=state.opt_c1)
    c2 = adam_step(p.c2, grads["c2"], lr=h.lr, state=state.opt_c2)
    actor = adam_step(p.actor, grads["actor"], lr=h.lr,
                      state=state.opt_actor)

    # scalar adam on log alpha, same moment schedule as the tensors
    b1, b2, eps = 0.9, 0.999, 1e-8
    state.alpha_t += 1
    ga = grads["log_alpha"]
    state.alpha_m = b1 * state.alpha_m + (1 - b1) * ga
    state.alpha_v = b2 * state.alpha_v + (1 - b2) * ga * ga
    mhat = state.alpha_m / (1 - b1 ** state.alpha_t)
    vhat = state.alpha_v / (1 - b2 ** state.alpha_t)
    log_alpha = p.log_alpha - h.lr * mhat / (math.sqrt(vhat) + eps)

    t1 = polyak(p.t1, c1, h.tau)
    t2 = polyak(p.t2, c2, h.tau)
    state.params = SACParams(actor, c1, c2, t1, t2, log_alpha)
    return losses


def stochastic_action(p: SACParams, obs: Array, rng: np.random.Generator,
                      v_max: float) -> Array:
    mu, logsig = nets.policy_forward(p.actor, obs.reshape(1, -1))
    noise = rng.standard_normal((1, nets.ACT_DIM))
    action, _ = nets.sample_action(mu, logsig, noise, v_max)
    if not np.all(np.isfinite(action)):
        raise TrainingDiverged("policy produced a non-finite action")
    return action[0]


def deterministic_action(p: SACParams, obs: Array, v_max: float) -> Array:
    mu, _ = nets.policy_forward(p.actor, obs.reshape(1, -1))
    if not np.all(np.isfinite(mu)):
        raise TrainingDiverged("policy produced a non-finite action")
    return v_max * np.tanh(mu[0])


def collect(p: SACParams, env: ArmEnv, task: TaskSpec, n_steps: int,
            rng: np.random.Generator, buffer: ReplayBuffer,
            uniform_until: int = 0) -> None:
    """Append exactly n_steps transitions to the buffer, resetting the
    episode whenever it ends.

    The stored done flag marks only instruction satisfaction; horizon
    truncation stores done=0 so bootstrapping stays valid.
    """
    v_max = env.config.v_max
    obs = env.reset(task.instruction)
    for step in range(n_steps):
        if len(buffer) + 1 <= uniform_until:
            action = rng.uniform(-v_max, v_max, nets.ACT_DIM)
        else:
            action = stochastic_action(p, obs, rng, v_max)
        result = env.step(action)
        satisfied = any(isinstance(e, InstructionSatisfied)
                        for e in result.events)
        buffer.push(obs, action, result.reward, result.obs,
                    1.0 if satisfied else 0.0)
        obs = result.obs
        if result.done:
            obs = env.reset(task.instruction)


def rollout_metrics(p: SACParams, env: ArmEnv, task: TaskSpec) -> dict:
    """One deterministic episode; per-episode reward sum, success flag,
    collision flag, steps."""
    v_max = env.config.v_max
    obs = env.reset(task.instruction)
    total = 0.0
    collided = False
    success = False
    steps = 0
    while True:
        action = deterministic_action(p, obs, v_max)
        result = env.step(action)
        total += result.reward
        steps += 1
        for e in result.events:
            if isinstance(e, Collision):
                collided = True
            elif isinstance(e, InstructionSatisfied):
                success = True
        obs = result.obs
        if result.done:
            break
    return {"reward": total, "success": success, "collided": collided,
            "steps": steps}


def evaluate(p: SACParams, cfg: EnvConfig, tasks: list[TaskSpec],
             episodes_per_task: int = 1) -> dict:
    """Deterministic-policy means over tasks x episodes."""
    env = ArmEnv(cfg)
    rows = [rollout_metrics(p, env, task)
            for task in tasks for _ in range(episodes_per_task)]
    return {
        "avg_reward": float(np.mean([r["reward"] for r in rows])),
        "success_rate": float(np.mean([r["success"] for r in rows])),
        "collision_rate": float(np.mean([r["collided"] for r in rows])),
    }


def scratch_sac(task: TaskSpec, cfg: EnvConfig, total_steps: int,
                rng: np.random.Generator,
                hyper: Optional[SACHyper] = None,
                eval_every: int = 5000,
                eval_episodes: int = 5,
                stop_at: Optional[float] = None) -> tuple[SACParams, list]:
    """Ordinary SAC from random init on one task.

    Returns (params, curve) where curve rows follow the evaluate schema
    plus a step counter.
    """
    h = hyper or SACHyper()
    env = ArmEnv(cfg)
    state = SACTrainState(init_sac(rng, h.hidden, h.log_alpha0), h)
    buffer = ReplayBuffer(h.capacity)
    curve = []
    v_max = cfg.v_max
    obs = env.reset(task.instruction)
    for step in range(1, total_steps + 1):
        if step <= h.start_steps:
            action = rng.uniform(-v_max, v_max, nets.ACT_DIM)
        else:
            action = stochastic_action(state.params, obs, rng, v_max)
        result = env.step(action)
        satisfied = any(isinstance(e, InstructionSatisfied)
                        for e in result.events)
        buffer.push(obs, action, result.reward, result.obs,
                    1.0 if satisfied else 0.0)
        obs = result.obs
        if result.done:
            obs = env.reset(task.instruction)
        if len(buffer) >= h.batch and step > h.start_steps:
            sac_update(state, buffer, rng, v_max)
        if step % eval_every == 0 or step == total_steps:
            metrics = evaluate(state.params, cfg, [task], eval_episodes)
            metrics["step"] = step
            curve.append(metrics)
            obs = env.reset(task.instruction)
            if stop_at is not None and metrics["success_rate"] >= stop_at:
                break
    return state.params, curve
