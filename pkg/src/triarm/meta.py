"""First-order meta-learning over the SAC learner, and the live
adapt-then-execute loop driven by the instruction queue.

The meta-initialization is trained with an inner/outer scheme: per task,
a copy of the parameters takes K plain-gradient steps on support data,
then the gradient of the SAC objective at the adapted parameters on
query data is applied back to the initialization (first-order, no
second-order terms). The live executor adapts on a rehearsal copy of the
environment so the real workspace only ever sees the adapted policy.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import nets
from .env import ArmEnv, Collision, EnvConfig, InstructionSatisfied, \
    WaypointCompleted
from .instruction import Difficulty, Instruction, InstructionQueue, \
    TaskSpec, sample_task
from .params import AdamState, ParamSet, adam_step, load_tensors, \
    save_tensors
from .sac import ReplayBuffer, SACHyper, SACParams, TrainingDiverged, \
    collect, deterministic_action, evaluate, init_sac, j_sac, polyak, \
    rollout_metrics

Array = np.ndarray


@dataclass(frozen=True)
class AdaptConfig:
    """Inner/outer loop schedule. Zero learning rates are legal and give
    exact identity behavior (useful for ablations); negatives are not.

    log_alpha_floor, outer_clip and outer_decay are long-run stabilizers
    and default to off (-inf / 0 / 0) so a single outer step stays an
    ordinary SAC step.
    """
    inner_lr: float = 3e-3
    inner_steps: int = 1
    outer_lr: float = 3e-4
    task_batch: int = 5
    support_steps: int = 600
    query_steps: int = 600
    meta_iterations: int = 1000
    log_alpha_floor: float = -math.inf
    outer_clip: float = 0.0
    outer_decay: float = 0.0
    query_batches: int = 1

    def __post_init__(self):
        if self.inner_lr < 0.0 or self.outer_lr < 0.0:
            raise ValueError("learning rates must be non-negative")
        if self.inner_steps < 1 or self.task_batch < 1:
            raise ValueError("need inner_steps >= 1 and task_batch >= 1")
        if self.support_steps < 1 or self.query_steps < 1:
            raise ValueError("support/query steps must be positive")
        if self.outer_clip < 0.0 or self.outer_decay < 0.0:
            raise ValueError("outer_clip/outer_decay must be non-negative")
        if self.query_batches < 1:
            raise ValueError("query_batches must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "AdaptConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown AdaptConfig keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class MetaState:
    """Meta-initialization plus outer optimizer state. `params` is
    replaced only by meta_update; every adaptation works on a copy."""
    params: SACParams
    cfg: AdaptConfig
    hyper: SACHyper
    rng: np.random.Generator
    seed: int = 0
    iteration: int = 0
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


def init_meta(cfg: AdaptConfig, seed: int = 0,
              hyper: Optional[SACHyper] = None) -> MetaState:
    hyper = hyper or SACHyper()
    rng = np.random.default_rng(seed)
    return MetaState(init_sac(rng, hyper.hidden, hyper.log_alpha0), cfg,
                     hyper, rng, seed=seed)


# -- inner loop --------------------------------------------------------------

def inner_adapt(params: SACParams, buffer: ReplayBuffer, inner_lr: float,
                inner_steps: int, hyper: SACHyper, v_max: float,
                rng: np.random.Generator) -> SACParams:
    """K plain-gradient steps on a copy of params; the source is never
    touched. Adapts actor and critics with a fresh minibatch per step and
    refreshes the Polyak targets after each; the entropy temperature is
    shared across tasks and stays fixed here.
    """
    adapted = params.copy()
    for _ in range(inner_steps):
        batch = buffer.sample(rng, hyper.batch)
        noise_next = rng.standard_normal((hyper.batch, nets.ACT_DIM))
        noise_pi = rng.standard_normal((hyper.batch, nets.ACT_DIM))
        _, grads = j_sac(adapted, batch, noise_next, noise_pi, v_max, hyper)
        adapted.actor = adapted.actor.replace(
            {n: adapted.actor[n] - inner_lr * g
             for n, g in grads["actor"].items()})
        adapted.c1 = adapted.c1.replace(
            {n: adapted.c1[n] - inner_lr * g
             for n, g in grads["c1"].items()})
        adapted.c2 = adapted.c2.replace(
            {n: adapted.c2[n] - inner_lr * g
             for n, g in grads["c2"].items()})
        if inner_lr > 0.0:
            # the target refresh belongs to the gradient step: a zero-rate
            # step must be a complete identity, targets included
            adapted.t1 = polyak(adapted.t1, adapted.c1, hyper.tau)
            adapted.t2 = polyak(adapted.t2, adapted.c2, hyper.tau)
    return adapted


def task_meta_grads(params: SACParams, task: TaskSpec, env: ArmEnv,
                    cfg: AdaptConfig, hyper: SACHyper,
                    rng: np.random.Generator) -> tuple[dict, dict]:
    """One task's contribution to the outer step: collect support with the
    init, adapt a copy, collect query with the adapted policy, and return
    the SAC gradients evaluated at the adapted parameters.

    With query_batches > 1 the returned gradient is the average over that
    many fresh minibatch draws — one lower-variance gradient, still one
    outer step."""
    v_max = env.config.v_max
    supp = ReplayBuffer(cfg.support_steps)
    collect(params, env, task, cfg.support_steps, rng, supp)
    adapted = inner_adapt(params, supp, cfg.inner_lr, cfg.inner_steps,
                          hyper, v_max, rng)
    query = ReplayBuffer(cfg.query_steps)
    collect(adapted, env, task, cfg.query_steps, rng, query)
    grads = None
    losses = None
    for _ in range(cfg.query_batches):
        batch = query.sample(rng, hyper.batch)
        noise_next = rng.standard_normal((hyper.batch, nets.ACT_DIM))
        noise_pi = rng.standard_normal((hyper.batch, nets.ACT_DIM))
        ls, gs = j_sac(adapted, batch, noise_next, noise_pi, v_max, hyper)
        if grads is None:
            grads, losses = gs, ls
        else:
            for group in ("actor", "c1", "c2"):
                for name in grads[group]:
                    grads[group][name] = grads[group][name] + gs[group][name]
            grads["log_alpha"] += gs["log_alpha"]
            for key in losses:
                losses[key] += ls[key]
    if cfg.query_batches > 1:
        inv = 1.0 / cfg.query_batches
        for group in ("actor", "c1", "c2"):
            for name in grads[group]:
                grads[group][name] = grads[group][name] * inv
        grads["log_alpha"] *= inv
        losses = {key: value * inv for key, value in losses.items()}
    post = rollout_metrics(adapted, env, task)
    return grads, {"losses": losses, "post": post}


# -- outer loop --------------------------------------------------------------

def meta_update(meta: MetaState, tasks: list[TaskSpec],
                env_factory: Callable[[], ArmEnv]) -> dict:
    """One outer optimizer step on the initialization, summing the
    first-order gradients over the task batch. Any task divergence aborts
    the whole iteration and leaves the initialization untouched."""
    cfg = meta.cfg
    if len(tasks) != cfg.task_batch:
        raise ValueError(
            f"got {len(tasks)} tasks, config says {cfg.task_batch}")
    ids = [t.instruction.id for t in tasks]
    if len(set(ids)) != len(ids):
        raise ValueError(f"instruction ids within a batch must be distinct: "
                         f"{ids}")

    # independent per-task streams, derived deterministically so a replay
    # with the same meta rng state reproduces every collection
    seeds = [int(s) for s in meta.rng.integers(0, 2**63, size=len(tasks))]
    total = {"actor": {}, "c1": {}, "c2": {}}
    total_alpha = 0.0
    infos = []
    try:
        for task, task_seed in zip(tasks, seeds):
            grads, info = task_meta_grads(
                meta.params, task, env_factory(), cfg, meta.hyper,
                np.random.default_rng(task_seed))
            for group in ("actor", "c1", "c2"):
                for name, g in grads[group].items():
                    if name in total[group]:
                        total[group][name] = total[group][name] + g
                    else:
                        total[group][name] = g
            total_alpha += grads["log_alpha"]
            infos.append(info)
    except TrainingDiverged as exc:
        return {"diverged": True, "error": str(exc), "task_ids": ids}

    grad_norm = math.sqrt(sum(
        float(np.sum(g * g)) for group in ("actor", "c1", "c2")
        for g in total[group].values()))
    if 0.0 < cfg.outer_clip < grad_norm:
        scale = cfg.outer_clip / grad_norm
        for group in ("actor", "c1", "c2"):
            for name in total[group]:
                total[group][name] = total[group][name] * scale

    p = meta.params
    # the decay is what keeps tens of thousands of sparse noisy updates
    # from ratcheting the weights into a steep high-gradient regime
    actor = adam_step(p.actor, total["actor"], lr=cfg.outer_lr,
                      state=meta.opt_actor, weight_decay=cfg.outer_decay)
    c1 = adam_step(p.c1, total["c1"], lr=cfg.outer_lr, state=meta.opt_c1,
                   weight_decay=cfg.outer_decay)
    c2 = adam_step(p.c2, total["c2"], lr=cfg.outer_lr, state=meta.opt_c2,
                   weight_decay=cfg.outer_decay)

    b1, b2, eps = 0.9, 0.999, 1e-8
    meta.alpha_t += 1
    meta.alpha_m = b1 * meta.alpha_m + (1 - b1) * total_alpha
    meta.alpha_v = b2 * meta.alpha_v + (1 - b2) * total_alpha * total_alpha
    mhat = meta.alpha_m / (1 - b1 ** meta.alpha_t)
    vhat = meta.alpha_v / (1 - b2 ** meta.alpha_t)
    log_alpha = p.log_alpha - cfg.outer_lr * mhat / (math.sqrt(vhat) + eps)

    if cfg.outer_lr > 0.0:
        # one temperature update per iteration is too slow to self-correct
        # once the policy sharpens, so a hard floor keeps exploitation
        # pressure bounded while the critics are still young
        log_alpha = max(log_alpha, cfg.log_alpha_floor)
        t1 = polyak(p.t1, c1, meta.hyper.tau)
        t2 = polyak(p.t2, c2, meta.hyper.tau)
    else:
        # zero-rate update is a full identity, target refresh included
        t1, t2 = p.t1, p.t2
    meta.params = SACParams(actor, c1, c2, t1, t2, log_alpha)
    meta.iteration += 1
    return {
        "diverged": False,
        "task_ids": ids,
        "grad_norm": grad_norm,
        "param_norm": float(math.sqrt(sum(
            float(np.sum(v * v)) for ps in (actor, c1, c2)
            for _, v in ps.items()))),
        "avg_reward": float(np.mean([i["post"]["reward"] for i in infos])),
        "success_rate": float(np.mean([i["post"]["success"]
                                       for i in infos])),
        "collision_rate": float(np.mean([i["post"]["collided"]
                                         for i in infos])),
        "query_critic_loss": float(np.mean(
            [i["losses"]["critic_loss"] for i in infos])),
    }


def sample_task_batch(rng: np.random.Generator, n: int,
                      difficulties: tuple = (Difficulty.EASY,
                                             Difficulty.MEDIUM),
                      ) -> list[TaskSpec]:
    tasks = [sample_task(rng, difficulties[int(rng.integers(len(difficulties)))])
             for _ in range(n)]
    ids = [t.instruction.id for t in tasks]
    assert len(set(ids)) == len(ids)
    return tasks


def meta_train(cfg: AdaptConfig, seed: int = 0,
               hyper: Optional[SACHyper] = None,
               env_cfg: Optional[EnvConfig] = None,
               difficulties: tuple = (Difficulty.EASY, Difficulty.MEDIUM),
               checkpoint_path: Optional[str] = None,
               checkpoint_every: int = 500,
               snapshot_every: int = 0,
               log: Optional[Callable[[dict], None]] = None,
               resume_from: Optional[str] = None,
               ) -> tuple[MetaState, list[dict]]:
    """Run the outer loop until cfg.meta_iterations total updates have
    been taken, resampling a fresh task batch each iteration. Returns the
    state and the metric stream (one record per attempted iteration).

    With resume_from, training continues from the saved state (keeping
    its config and counter) until the same total is reached. The rolling
    checkpoint is overwritten in place; snapshot_every > 0 additionally
    keeps numbered copies so a late regression cannot eat the whole run.
    """
    if resume_from is not None:
        meta = load_meta(resume_from)
        cfg = meta.cfg
    else:
        meta = init_meta(cfg, seed, hyper)
    env_cfg = env_cfg or EnvConfig()
    env_factory = lambda: ArmEnv(env_cfg)  # noqa: E731
    metrics = []
    for _ in range(cfg.meta_iterations - meta.iteration):
        t0 = time.perf_counter()
        tasks = sample_task_batch(meta.rng, cfg.task_batch, difficulties)
        info = meta_update(meta, tasks, env_factory)
        record = {"iter": meta.iteration, **info,
                  "wall_s": round(time.perf_counter() - t0, 4)}
        metrics.append(record)
        if log is not None:
            log(record)
        if checkpoint_path and meta.iteration % checkpoint_every == 0 \
                and not info["diverged"]:
            save_meta(checkpoint_path, meta)
            if snapshot_every and meta.iteration % snapshot_every == 0:
                root, ext = os.path.splitext(str(checkpoint_path))
                save_meta(f"{root}.i{meta.iteration:05d}{ext}", meta)
    if checkpoint_path:
        save_meta(checkpoint_path, meta)
    return meta, metrics


# -- per-task adaptation curves ---------------------------------------------

def adapt_curve(meta: MetaState, task: TaskSpec, epochs: int,
                rng: np.random.Generator,
                env_cfg: Optional[EnvConfig] = None) -> list[dict]:
    """Continued adaptation on one task starting from the initialization:
    each epoch collects support data with the current adapted policy,
    takes the inner gradient steps, and evaluates deterministically. The
    replay buffer persists across epochs."""
    cfg, hyper = meta.cfg, meta.hyper
    env_cfg = env_cfg or EnvConfig()
    env = ArmEnv(env_cfg)
    params = meta.params.copy()
    buf = ReplayBuffer(hyper.capacity)
    rows = []
    for epoch in range(1, epochs + 1):
        collect(params, env, task, cfg.support_steps, rng, buf)
        params = inner_adapt(params, buf, cfg.inner_lr, cfg.inner_steps,
                             hyper, env_cfg.v_max, rng)
        row = evaluate(params, env_cfg, [task], episodes_per_task=1)
        row["epoch"] = epoch
        rows.append(row)
    return rows


# -- live execution ----------------------------------------------------------

def _obs_row(tick: int, obs: Array, active, adapting: bool,
             queue_len: int, reward: float) -> dict:
    pos = [float(obs[5 * i + j]) for i in range(3) for j in range(3)]
    return {"tick": tick, "pos": pos,
            "dist": [float(obs[5 * i + 3]) for i in range(3)],
            "phase": [int(obs[5 * i + 4]) for i in range(3)],
            "active": active, "adapting": adapting,
            "queue_len": queue_len, "reward": float(reward)}


class LiveExecutor:
    """One live tick at a time: hold on an empty queue, adapt to a new
    queue head on a rehearsal environment, execute the adapted policy
    until satisfaction, then drop back to the initialization (verified by
    digest).

    Support collection runs on the rehearsal copy, so live ticks advance
    only while holding or executing; the tick that performed an
    adaptation is flagged in its telemetry row. An instruction still
    unsatisfied after timeout_factor * horizon execution ticks is
    force-dequeued and logged as a failure.
    """

    def __init__(self, meta: MetaState, queue: InstructionQueue,
                 env: ArmEnv, rng: np.random.Generator,
                 timeout_factor: int = 5,
                 env_factory: Optional[Callable[[], ArmEnv]] = None):
        self.meta = meta
        self.queue = queue
        self.env = env
        self.rng = rng
        self.timeout = timeout_factor * env.config.horizon
        self.env_factory = env_factory or (
            lambda: ArmEnv(env.config, env.homes, env.slots))
        self.live = meta.params
        self.active_id: Optional[int] = None
        self.exec_ticks = 0
        self.tick = 0

    def _reset_to_init(self, events: list[dict]) -> None:
        self.live = self.meta.params
        events.append({"tick": self.tick, "kind": "reset",
                       "digest_match":
                       self.live.digest() == self.meta.params.digest()})
        self.active_id = None
        self.exec_ticks = 0
        self.env.set_task(None)

    def _adapt(self, head: Instruction, events: list[dict]) -> None:
        cfg, meta = self.meta.cfg, self.meta
        t0 = time.perf_counter()
        events.append({"tick": self.tick, "kind": "adapt_start",
                       "id": head.id})
        rehearsal = self.env_factory()
        supp = ReplayBuffer(cfg.support_steps)
        collect(meta.params, rehearsal, TaskSpec.of(head),
                cfg.support_steps, self.rng, supp)
        self.live = inner_adapt(meta.params, supp, cfg.inner_lr,
                                cfg.inner_steps, meta.hyper,
                                self.env.config.v_max, self.rng)
        events.append({"tick": self.tick, "kind": "adapt_end",
                       "id": head.id,
                       "wall_s": round(time.perf_counter() - t0, 4)})
        self.env.set_task(head)
        self.active_id = head.id
        self.exec_ticks = 0

    def step(self) -> tuple[dict, list[dict]]:
        env, queue = self.env, self.queue
        events: list[dict] = []
        tick = self.tick
        queue.set_tick(tick)
        head = queue.active()
        if head is None:
            if env.task is not None:
                env.set_task(None)
            result = env.step(np.zeros(nets.ACT_DIM))
            self.tick += 1
            return _obs_row(tick, result.obs, None, False, len(queue),
                            result.reward), events

        adapted_now = head.id != self.active_id
        if adapted_now:
            self._adapt(head, events)

        result = env.step(deterministic_action(self.live, env.observe(),
                                               env.config.v_max))
        self.exec_ticks += 1
        row = _obs_row(tick, result.obs, self.active_id, adapted_now,
                       len(queue), result.reward)
        satisfied = False
        for e in result.events:
            if isinstance(e, WaypointCompleted):
                queue.advance()
                events.append({"tick": tick, "kind": "waypoint",
                               "id": self.active_id, "arm": e.arm,
                               "index": e.index})
            elif isinstance(e, Collision):
                events.append({"tick": tick, "kind": "collision",
                               "pair": list(e.pair)})
            elif isinstance(e, InstructionSatisfied):
                satisfied = True
        if satisfied:
            done = queue.dequeue_if_satisfied()
            events.append({"tick": tick, "kind": "satisfied",
                           "id": done.id if done else self.active_id})
            self._reset_to_init(events)
        elif self.exec_ticks >= self.timeout:
            dropped = queue.force_dequeue()
            events.append({"tick": tick, "kind": "timeout",
                           "id": dropped.id if dropped else self.active_id})
            self._reset_to_init(events)
        self.tick += 1
        return row, events


def online_execute(meta: MetaState, queue: InstructionQueue, env: ArmEnv,
                   max_ticks: int, rng: np.random.Generator,
                   timeout_factor: int = 5,
                   env_factory: Optional[Callable[[], ArmEnv]] = None,
                   ) -> tuple[list[dict], list[dict]]:
    """Drive the live loop for exactly max_ticks; see LiveExecutor."""
    ex = LiveExecutor(meta, queue, env, rng, timeout_factor, env_factory)
    telemetry: list[dict] = []
    events: list[dict] = []
    for _ in range(max_ticks):
        row, evs = ex.step()
        telemetry.append(row)
        events.extend(evs)
    return telemetry, events


# -- checkpointing -----------------------------------------------------------

_META_GROUPS = ("actor", "c1", "c2", "t1", "t2")


def save_meta(path, meta: MetaState) -> None:
    """Single-file checkpoint: parameter groups, outer optimizer moments,
    and the scalar training state. The task rng is reseeded from (seed,
    iteration) on load, so a resumed run is deterministic but not
    tick-identical to an uninterrupted one."""
    tensors: dict[str, Array] = {}
    for group in _META_GROUPS:
        for name, value in getattr(meta.params, group).items():
            tensors[f"{group}.{name}"] = value
    for group, opt in (("actor", meta.opt_actor), ("c1", meta.opt_c1),
                       ("c2", meta.opt_c2)):
        for name, value in opt.m.items():
            tensors[f"opt.{group}.m.{name}"] = value
        for name, value in opt.v.items():
            tensors[f"opt.{group}.v.{name}"] = value
        tensors[f"opt.{group}.t"] = np.asarray([float(opt.t)])
    tensors["scalars"] = np.asarray([
        meta.params.log_alpha, float(meta.iteration), float(meta.seed),
        meta.alpha_m, meta.alpha_v, float(meta.alpha_t)])
    c = meta.cfg
    tensors["adapt_cfg"] = np.asarray([
        c.inner_lr, float(c.inner_steps), c.outer_lr, float(c.task_batch),
        float(c.support_steps), float(c.query_steps),
        float(c.meta_iterations), c.log_alpha_floor, c.outer_clip,
        c.outer_decay, float(c.query_batches)])
    h = meta.hyper
    tensors["sac_hyper"] = np.asarray([
        h.gamma, h.tau, h.entropy_target, float(h.batch),
        float(h.capacity), h.lr, float(h.hidden), float(h.start_steps),
        h.log_alpha0, h.huber])
    save_tensors(path, tensors)


def load_meta(path) -> MetaState:
    tensors = load_tensors(path)

    def group_params(prefix: str) -> ParamSet:
        items = [(name[len(prefix):], value)
                 for name, value in tensors.items()
                 if name.startswith(prefix)]
        return ParamSet(items)

    sc = tensors["scalars"]
    ac = tensors["adapt_cfg"]
    hy = tensors["sac_hyper"]
    cfg = AdaptConfig(inner_lr=float(ac[0]), inner_steps=int(ac[1]),
                      outer_lr=float(ac[2]), task_batch=int(ac[3]),
                      support_steps=int(ac[4]), query_steps=int(ac[5]),
                      meta_iterations=int(ac[6]),
                      log_alpha_floor=float(ac[7]), outer_clip=float(ac[8]),
                      outer_decay=float(ac[9]), query_batches=int(ac[10]))
    hyper = SACHyper(gamma=float(hy[0]), tau=float(hy[1]),
                     entropy_target=float(hy[2]), batch=int(hy[3]),
                     capacity=int(hy[4]), lr=float(hy[5]),
                     hidden=int(hy[6]), start_steps=int(hy[7]),
                     log_alpha0=float(hy[8]), huber=float(hy[9]))
    params = SACParams(group_params("actor."), group_params("c1."),
                       group_params("c2."), group_params("t1."),
                       group_params("t2."), float(sc[0]))
    seed, iteration = int(sc[2]), int(sc[1])
    meta = MetaState(params, cfg, hyper,
                     np.random.default_rng([seed, iteration]), seed=seed,
                     iteration=iteration, alpha_m=float(sc[3]),
                     alpha_v=float(sc[4]), alpha_t=int(sc[5]))
    for group, opt in (("actor", meta.opt_actor), ("c1", meta.opt_c1),
                       ("c2", meta.opt_c2)):
        opt.m = {name[len(f"opt.{group}.m."):]: value
                 for name, value in tensors.items()
                 if name.startswith(f"opt.{group}.m.")}
        opt.v = {name[len(f"opt.{group}.v."):]: value
                 for name, value in tensors.items()
                 if name.startswith(f"opt.{group}.v.")}
        opt.t = int(tensors[f"opt.{group}.t"][0])
    return meta
