"""Policy and critic networks on top of the tape substrate.

Each network is a ParamSet plus a pair of forward paths: a plain numpy path
for rollouts (no tape) and a Graph path for gradient computation. Both paths
apply the same operations in the same order, so outputs are bit-identical.
"""

from __future__ import annotations

import math

import numpy as np

from .params import ParamSet
from .tensor import Graph, log1m_tanh_sq

Array = np.ndarray

OBS_DIM = 15
ACT_DIM = 9
LOGSTD_MIN = -5.0
LOGSTD_MAX = 2.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def _linear_init(rng: np.random.Generator, fan_in: int, fan_out: int,
                 scale: float = 1.0) -> tuple[Array, Array]:
    bound = scale / math.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    b = rng.uniform(-bound, bound, size=(fan_out,))
    return w, b


def init_policy(rng: np.random.Generator, hidden: int = 128) -> ParamSet:
    """15 -> hidden -> hidden -> dual 9-dim heads (mean, log-std).

    Head weights start small so initial actions sit near zero with unit
    exploration noise.
    """
    w1, b1 = _linear_init(rng, OBS_DIM, hidden)
    w2, b2 = _linear_init(rng, hidden, hidden)
    wm, bm = _linear_init(rng, hidden, ACT_DIM, scale=0.01)
    ws, bs = _linear_init(rng, hidden, ACT_DIM, scale=0.01)
    return ParamSet([
        ("l1.w", w1), ("l1.b", b1),
        ("l2.w", w2), ("l2.b", b2),
        ("mu.w", wm), ("mu.b", bm),
        ("logsig.w", ws), ("logsig.b", bs),
    ])


def init_critic(rng: np.random.Generator, hidden: int = 128) -> ParamSet:
    """(15+9) -> hidden -> hidden -> scalar Q."""
    w1, b1 = _linear_init(rng, OBS_DIM + ACT_DIM, hidden)
    w2, b2 = _linear_init(rng, hidden, hidden)
    wq, bq = _linear_init(rng, hidden, 1)
    return ParamSet([
        ("l1.w", w1), ("l1.b", b1),
        ("l2.w", w2), ("l2.b", b2),
        ("q.w", wq), ("q.b", bq),
    ])


def policy_param_count(hidden: int) -> int:
    return (OBS_DIM * hidden + hidden) + (hidden * hidden + hidden) \
        + 2 * (hidden * ACT_DIM + ACT_DIM)


def _as_batch(x: Array) -> tuple[Array, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


# -- plain numpy paths -------------------------------------------------------

def policy_forward(params: ParamSet, obs: Array) -> tuple[Array, Array]:
    """Return (mu, log_sigma); log_sigma clamped to [-5, 2]."""
    x, squeeze = _as_batch(obs)
    if x.shape[1] != OBS_DIM:
        raise ValueError(f"observation width {x.shape[1]}, expected {OBS_DIM}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite observation")
    h1 = np.tanh(x @ params["l1.w"] + params["l1.b"])
    h2 = np.tanh(h1 @ params["l2.w"] + params["l2.b"])
    mu = h2 @ params["mu.w"] + params["mu.b"]
    log_sigma = np.clip(h2 @ params["logsig.w"] + params["logsig.b"],
                        LOGSTD_MIN, LOGSTD_MAX)
    if squeeze:
        return mu[0], log_sigma[0]
    return mu, log_sigma


def critic_forward(params: ParamSet, obs: Array, act: Array) -> Array:
    xo, squeeze = _as_batch(obs)
    xa, _ = _as_batch(act)
    x = np.concatenate([xo, xa], axis=1)
    h1 = np.tanh(x @ params["l1.w"] + params["l1.b"])
    h2 = np.tanh(h1 @ params["l2.w"] + params["l2.b"])
    q = h2 @ params["q.w"] + params["q.b"]
    return q[0, 0] if squeeze else q[:, 0]


def sample_action(mu: Array, log_sigma: Array, noise: Array,
                  v_max: float) -> tuple[Array, Array]:
    """Reparameterized squashed-Gaussian draw.

    action = v_max * tanh(mu + sigma * noise); log_prob carries the tanh
    change-of-variables correction. noise is the caller's standard-normal
    draw, so identical inputs give identical outputs.
    """
    mu_b, squeeze = _as_batch(mu)
    ls_b, _ = _as_batch(log_sigma)
    nz_b, _ = _as_batch(noise)
    if mu_b.shape != ls_b.shape or mu_b.shape != nz_b.shape:
        raise ValueError("mu / log_sigma / noise shapes disagree")
    sigma = np.exp(ls_b)
    u = mu_b + sigma * nz_b
    action = v_max * np.tanh(u)
    base = -0.5 * nz_b * nz_b - ls_b - _HALF_LOG_2PI
    corr = math.log(v_max) + log1m_tanh_sq(u)
    log_prob = (base - corr).sum(axis=1)
    if squeeze:
        return action[0], log_prob[0]
    return action, log_prob


# -- graph paths -------------------------------------------------------------

def policy_forward_g(g: Graph, pids: dict[str, int], obs: Array
                     ) -> tuple[int, int]:
    x = g.constant(_as_batch(obs)[0])
    h1 = g.tanh(g.add(g.matmul(x, pids["l1.w"]), pids["l1.b"]))
    h2 = g.tanh(g.add(g.matmul(h1, pids["l2.w"]), pids["l2.b"]))
    mu = g.add(g.matmul(h2, pids["mu.w"]), pids["mu.b"])
    log_sigma = g.clamp(g.add(g.matmul(h2, pids["logsig.w"]), pids["logsig.b"]),
                        LOGSTD_MIN, LOGSTD_MAX)
    return mu, log_sigma


def critic_forward_g(g: Graph, pids: dict[str, int], obs_node: int,
                     act_node: int) -> int:
    x = g.concat(obs_node, act_node, axis=1)
    h1 = g.tanh(g.add(g.matmul(x, pids["l1.w"]), pids["l1.b"]))
    h2 = g.tanh(g.add(g.matmul(h1, pids["l2.w"]), pids["l2.b"]))
    return g.add(g.matmul(h2, pids["q.w"]), pids["q.b"])


def sample_action_g(g: Graph, mu: int, log_sigma: int, noise: Array,
                    v_max: float) -> tuple[int, int]:
    """Graph twin of sample_action; returns (action node, log_prob node).

    The Gaussian quadratic term reduces to the constant noise under
    reparameterization, so only -log_sigma and the squash correction carry
    gradient, matching the analytic total derivative.
    """
    nz = np.atleast_2d(np.asarray(noise, dtype=np.float64))
    noise_c = g.constant(nz)
    sigma = g.exp(log_sigma)
    u = g.add(mu, g.mul(sigma, noise_c))
    action = g.scale(g.tanh(u), v_max)
    # per_elem = -0.5 eps^2 - log sigma - 0.5 log 2pi
    #            - log v_max - log(1 - tanh(u)^2)
    # with log(1 - tanh(u)^2) = 2*(log 2 - u - softplus(-2u)); everything not
    # depending on (mu, sigma) collapses into one constant array.
    const = g.constant(-0.5 * nz * nz - _HALF_LOG_2PI - math.log(v_max)
                       - 2.0 * math.log(2.0))
    per_elem = g.add(g.add(g.sub(const, log_sigma), g.scale(u, 2.0)),
                     g.scale(g.softplus(g.scale(u, -2.0)), 2.0))
    log_prob = g.sum_axis(per_elem, axis=1)
    return action, log_prob


def register_params(g: Graph, params: ParamSet) -> dict[str, int]:
    return {name: g.param(value) for name, value in params.items()}


def grads_by_name(g: Graph, pids: dict[str, int], loss: int
                  ) -> dict[str, Array]:
    by_id = g.backward(loss)
    return {name: by_id[nid] for name, nid in pids.items() if nid in by_id}


# -- gradient checking -------------------------------------------------------

def _central_diff(loss_fn, params: ParamSet, eps: float = 1e-5) -> Array:
    flat = params.flatten()
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        bump = flat.copy()
        bump[i] += eps
        hi = loss_fn(params.unflatten(bump))
        bump[i] -= 2 * eps
        lo = loss_fn(params.unflatten(bump))
        grad[i] = (hi - lo) / (2 * eps)
    return grad


def _rel_err(analytic: Array, numeric: Array) -> float:
    denom = np.maximum(1e-6, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))


def grad_check(seed: int = 0, eps: float = 1e-5) -> float:
    """Worst relative error of tape gradients vs central differences.

    Builds one small random instance of each network family (policy head
    incl. squashing, critic, conv1d stack, conv2d stack) and compares every
    parameter gradient.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0

    # policy with squashed sampling, mean loss over action and log_prob
    pol = init_policy(rng, hidden=6)
    obs = rng.standard_normal((3, OBS_DIM))
    noise = rng.standard_normal((3, ACT_DIM)) * 0.5

    def pol_loss_np(ps: ParamSet) -> float:
        mu, ls = policy_forward(ps, obs)
        act, lp = sample_action(mu, ls, noise, v_max=0.5)
        return float((act * act).mean() + lp.mean())

    g = Graph()
    pids = register_params(g, pol)
    mu_n, ls_n = policy_forward_g(g, pids, obs)
    act_n, lp_n = sample_action_g(g, mu_n, ls_n, noise, v_max=0.5)
    loss_n = g.add(g.mean(g.square(act_n)), g.mean(lp_n))
    analytic = grads_by_name(g, pids, loss_n)
    flat_a = np.concatenate([analytic.get(n, np.zeros_like(v)).reshape(-1)
                             for n, v in pol.items()])
    worst = max(worst, _rel_err(flat_a, _central_diff(pol_loss_np, pol, eps)))

    # critic, squared-output loss
    cri = init_critic(rng, hidden=6)
    co = rng.standard_normal((4, OBS_DIM))
    ca = rng.standard_normal((4, ACT_DIM)) * 0.3

    def cri_loss_np(ps: ParamSet) -> float:
        q = critic_forward(ps, co, ca)
        return float((q * q).mean())

    g = Graph()
    pids = register_params(g, cri)
    q_n = critic_forward_g(g, pids, g.constant(co), g.constant(ca))
    analytic = grads_by_name(g, pids, g.mean(g.square(q_n)))
    flat_a = np.concatenate([analytic.get(n, np.zeros_like(v)).reshape(-1)
                             for n, v in cri.items()])
    worst = max(worst, _rel_err(flat_a, _central_diff(cri_loss_np, cri, eps)))

    # small conv1d stack
    sig = rng.standard_normal((2, 2, 17))
    conv1 = ParamSet([("k1", rng.standard_normal((3, 2, 4)) * 0.5),
                      ("k2", rng.standard_normal((2, 3, 3)) * 0.5)])

    def c1_loss_np(ps: ParamSet) -> float:
        g2 = Graph()
        a = g2.conv1d(g2.constant(sig), g2.constant(ps["k1"]), stride=2)
        b = g2.conv1d(g2.relu(a), g2.constant(ps["k2"]), stride=1)
        return float(g2.value(g2.mean(g2.square(b))))

    g = Graph()
    pids = register_params(g, conv1)
    a = g.conv1d(g.constant(sig), pids["k1"], stride=2)
    b = g.conv1d(g.relu(a), pids["k2"], stride=1)
    analytic = grads_by_name(g, pids, g.mean(g.square(b)))
    flat_a = np.concatenate([analytic[n].reshape(-1) for n in conv1.names])
    worst = max(worst, _rel_err(flat_a, _central_diff(c1_loss_np, conv1, eps)))

    # small conv2d stack
    img = rng.standard_normal((2, 1, 8, 8))
    conv2 = ParamSet([("k1", rng.standard_normal((2, 1, 3, 3)) * 0.5),
                      ("k2", rng.standard_normal((2, 2, 2, 2)) * 0.5)])

    def c2_loss_np(ps: ParamSet) -> float:
        g2 = Graph()
        a = g2.conv2d(g2.constant(img), g2.constant(ps["k1"]), stride=2)
        b = g2.conv2d(g2.relu(a), g2.constant(ps["k2"]), stride=1)
        return float(g2.value(g2.mean(g2.square(b))))

    g = Graph()
    pids = register_params(g, conv2)
    a = g.conv2d(g.constant(img), pids["k1"], stride=2)
    b = g.conv2d(g.relu(a), pids["k2"], stride=1)
    analytic = grads_by_name(g, pids, g.mean(g.square(b)))
    flat_a = np.concatenate([analytic[n].reshape(-1) for n in conv2.names])
    worst = max(worst, _rel_err(flat_a, _central_diff(c2_loss_np, conv2, eps)))

    return worst
