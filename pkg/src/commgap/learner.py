"""Tabular value learning and exact planning.

Centralized Q over joint observations stands in for the full-observability
critic; per-agent tables keyed on ``(o_i, m_-i)`` give the decentralized,
communication-conditioned policies.  ``value_iteration`` is the exact oracle
when the model is known.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cluster import (
    MessageFunction,
    RimConfig,
    align_labels,
    build_qvectors,
    build_qvectors_sampled,
    fit_messages,
    normalize_activation,
    rim_loss,
)
from .envs import DecPomdpSpec, Transition, as_dec_pomdp

log = logging.getLogger(__name__)


@dataclass
class ActionValueTable:
    """Action values over a ravelled key space ``key_dims``."""

    key_dims: tuple[int, ...]
    n_actions: int
    values: np.ndarray = None
    visit_counts: np.ndarray = None
    sa_counts: np.ndarray = None
    stages: list[np.ndarray] | None = None

    def __post_init__(self):
        self.key_dims = tuple(int(k) for k in self.key_dims)
        n = self.n_keys
        if self.values is None:
            self.values = np.zeros((n, self.n_actions))
        if self.values.shape != (n, self.n_actions):
            raise ValueError(f"values shape {self.values.shape} != {(n, self.n_actions)}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("action values must be finite")
        if self.visit_counts is None:
            self.visit_counts = np.zeros(n, dtype=np.int64)
        if self.sa_counts is None:
            self.sa_counts = np.zeros((n, self.n_actions), dtype=np.int64)

    @property
    def n_keys(self) -> int:
        return int(np.prod(self.key_dims))

    def key(self, *parts: int) -> int:
        if len(parts) != len(self.key_dims):
            raise KeyError(f"expected {len(self.key_dims)} key parts, got {len(parts)}")
        for p, k in zip(parts, self.key_dims):
            if not 0 <= p < k:
                raise KeyError(f"key part {p} outside [0, {k})")
        return int(np.ravel_multi_index(parts, self.key_dims))

    def check_key(self, key: int) -> int:
        if not 0 <= key < self.n_keys:
            raise KeyError(f"key {key} outside table of {self.n_keys} keys")
        return key

    def copy(self) -> "ActionValueTable":
        return ActionValueTable(
            self.key_dims,
            self.n_actions,
            self.values.copy(),
            self.visit_counts.copy(),
            self.sa_counts.copy(),
            None if self.stages is None else [s.copy() for s in self.stages],
        )


class ReplayBuffer:
    """FIFO ring of transitions."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: deque[Transition] = deque(maxlen=capacity)

    def add(self, tr: Transition) -> None:
        self._items.append(tr)

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def __getitem__(self, i: int) -> Transition:
        return self._items[i]


def replay_sample(buffer: ReplayBuffer, K1: int, rng: np.random.Generator) -> list[Transition]:
    """Uniform minibatch with replacement."""
    if len(buffer) == 0:
        raise ValueError("cannot sample from an empty buffer")
    return [buffer[int(i)] for i in rng.integers(0, len(buffer), size=K1)]


@dataclass
class LearnConfig:
    episodes: int = 50_000
    lr: float = 0.1
    lr_schedule: str = "constant"  # "harmonic": max(lr_min, 1 / n(key, action)); "linear": lr -> lr_min over the run
    lr_min: float = 0.0
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_frac: float = 0.5
    gamma: float = 0.95
    K1: int = 256
    buffer_capacity: int = 10_000
    eval_every: int = 1000
    seed: int = 0
    warmup_frac: float = 0.2
    refit_every_frac: float = 0.1
    refit_until_frac: float = 1.0  # no message refits at or after this fraction of the run

    def __post_init__(self):
        if not 0.0 < self.lr <= 1.0:
            raise ValueError("learning rate must lie in (0, 1]")
        if self.lr_schedule not in ("constant", "harmonic", "linear"):
            raise ValueError("lr_schedule must be 'constant', 'harmonic' or 'linear'")
        for e in (self.eps_start, self.eps_end):
            if not 0.0 <= e <= 1.0:
                raise ValueError("epsilon must lie in [0, 1]")
        if self.episodes < 0 or self.eval_every < 1:
            raise ValueError("episodes must be >= 0 and eval_every >= 1")

    def episode_lr(self, episode: int) -> float:
        if self.lr_schedule != "linear" or self.episodes <= 1:
            return self.lr
        return max(self.lr + (self.lr_min - self.lr) * episode / (self.episodes - 1), 1e-12)

    def epsilon(self, episode: int) -> float:
        span = self.eps_decay_frac * self.episodes
        if span <= 0 or episode >= span:
            return self.eps_end
        return self.eps_start + (self.eps_end - self.eps_start) * episode / span


# ---------------------------------------------------------------------------
# Updates and greedy selection
# ---------------------------------------------------------------------------


def _td(table: ActionValueTable, k: int, a: int, r: float, k2: int, done: bool, cfg_lr, gamma: float) -> None:
    vals = table.values
    table.visit_counts[k] += 1
    table.sa_counts[k, a] += 1
    if callable(cfg_lr):
        lr = cfg_lr(table.sa_counts[k, a])
    else:
        lr = cfg_lr
    y = r if done else r + gamma * vals[k2].max()
    vals[k, a] += lr * (y - vals[k, a])


def td_update(
    table: ActionValueTable,
    transition: Transition,
    lr: float,
    gamma: float,
    key_of: Callable[[Sequence[int]], int] | None = None,
    action_of: Callable[[Sequence[int]], int] | None = None,
) -> ActionValueTable:
    """One-step Q-learning backup of the cell addressed by ``transition``.

    By default the key is the ravelled joint observation and the action the
    ravelled joint action (the centralized table).
    """
    if not 0.0 < lr <= 1.0:
        raise ValueError("learning rate must lie in (0, 1]")
    key_of = key_of or (lambda obs: table.key(*obs))
    if action_of is None:
        if table.n_actions == 1:
            action_of = lambda act: 0  # noqa: E731
        else:
            raise ValueError("action_of is required unless the table has a single action")
    k = table.check_key(key_of(transition.joint_obs))
    k2 = table.check_key(key_of(transition.next_joint_obs))
    a = action_of(transition.joint_action)
    if not 0 <= a < table.n_actions:
        raise IndexError(f"action {a} out of range")
    _td(table, k, a, transition.reward, k2, transition.done, lr, gamma)
    return table


def greedy_action(table: ActionValueTable, key: int) -> int:
    """Argmax over actions, lowest index on ties."""
    return int(np.argmax(table.values[table.check_key(key)]))


def value_iteration(env, tol: float = 1e-10, max_iter: int = 100_000, gamma: float | None = None) -> ActionValueTable:
    """Exact optimal action values over states.

    Finite horizons use backward induction and keep every stage in
    ``.stages`` (stage 0 is returned as ``.values``); otherwise iterate to a
    sup-norm Bellman residual of ``tol``.
    """
    env = as_dec_pomdp(env)
    g = env.gamma if gamma is None else gamma
    S, JA = env.n_states, env.n_joint_actions
    alive = (~env.terminal).astype(float)
    P = env.transition * alive[None, None, :]
    R = env.reward
    table = ActionValueTable((S,), JA)
    if env.horizon > 0:
        stages = [np.array(R, dtype=float)]
        for _ in range(env.horizon - 1):
            V = stages[0].max(axis=1)
            stages.insert(0, R + g * P @ V)
        table.values = stages[0].copy()
        table.stages = stages
        return table
    Q = np.array(R, dtype=float)
    for it in range(max_iter):
        Qn = R + g * P @ Q.max(axis=1)
        resid = np.max(np.abs(Qn - Q))
        Q = Qn
        if resid <= tol * (1 - g) if g < 1 else resid <= tol:
            break
    else:
        raise RuntimeError(f"value iteration did not converge in {max_iter} iterations")
    table.values = Q
    return table


def state_table_to_obs_keys(env: DecPomdpSpec, table: ActionValueTable) -> ActionValueTable:
    """Re-key a state table over joint observations (requires a bijection)."""
    idx = env.obs_index
    if idx is None or env.n_states != env.n_joint_obs:
        raise ValueError("states and joint observations are not in bijection")
    keys = np.ravel_multi_index(tuple(idx.T), env.obs_dims)
    if len(set(keys.tolist())) != env.n_states:
        raise ValueError("states and joint observations are not in bijection")
    out = ActionValueTable(env.obs_dims, table.n_actions)
    out.values[keys] = table.values
    if table.stages is not None:
        out.stages = []
        for s in table.stages:
            v = np.empty_like(s)
            v[keys] = s
            out.stages.append(v)
    return out


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------


def centralized_policy(table: ActionValueTable) -> np.ndarray:
    """Deterministic joint action per joint observation."""
    return table.values.argmax(axis=1)


def stamp_labels(message_fns: Sequence[MessageFunction | None], env: DecPomdpSpec) -> list[np.ndarray]:
    out = []
    for j, mf in enumerate(message_fns):
        out.append(np.zeros(env.obs_dims[j], dtype=int) if mf is None else mf.labels)
    return out


def _alphabets(message_fns, n_agents: int) -> list[int]:
    return [1 if m is None else m.alphabet_size for m in message_fns] + [1] * (n_agents - len(message_fns))


def agent_key_dims(env: DecPomdpSpec, agent: int, message_fns) -> tuple[int, ...]:
    sizes = _alphabets(message_fns, env.n_agents)
    return (env.obs_dims[agent],) + tuple(sizes[j] for j in range(env.n_agents) if j != agent)


def decentralized_policy(
    env, tables: Sequence[ActionValueTable], message_fns: Sequence[MessageFunction | None]
) -> np.ndarray:
    """Joint action per joint observation when agent i acts on (o_i, m_-i)."""
    env = as_dec_pomdp(env)
    n = env.n_agents
    labels = stamp_labels(list(message_fns) + [None] * (n - len(message_fns)), env)
    policy = np.empty(env.n_joint_obs, dtype=int)
    for jo in range(env.n_joint_obs):
        obs = env.joint_obs_tuple(jo)
        acts = []
        for i in range(n):
            k = tables[i].key(obs[i], *(int(labels[j][obs[j]]) for j in range(n) if j != i))
            acts.append(int(np.argmax(tables[i].values[k])))
        policy[jo] = int(np.ravel_multi_index(tuple(acts), env.action_dims))
    return policy


def evaluate_policy(env, policy) -> float:
    from .gap import expected_return

    return expected_return(env, policy)


# ---------------------------------------------------------------------------
# Training loops
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    tables: list[ActionValueTable]
    curve: list[tuple[int, float]]
    critic: ActionValueTable | None = None
    message_fns: list[MessageFunction | None] = field(default_factory=list)
    emission_counts: list[np.ndarray] = field(default_factory=list)
    action_counts: list[np.ndarray] = field(default_factory=list)
    refits: list[int] = field(default_factory=list)

    @property
    def table(self) -> ActionValueTable:
        return self.tables[0]

    @property
    def final_return(self) -> float:
        return self.curve[-1][1] if self.curve else float("nan")


def _lr_rule(cfg: LearnConfig):
    if cfg.lr_schedule != "harmonic":
        return cfg.lr
    lr, lo = cfg.lr, cfg.lr_min
    return lambda n: max(lo, min(lr, 1.0 / n))


def _eps_greedy(row: np.ndarray, eps: float, rng: np.random.Generator) -> int:
    if eps > 0 and rng.random() < eps:
        return int(rng.integers(row.shape[0]))
    return int(row.argmax())


class _Runner:
    """Shared rollout plumbing for the tabular learners."""

    def __init__(self, env: DecPomdpSpec, cfg: LearnConfig):
        self.env = env
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.lr = _lr_rule(cfg)
        self.mu_cdf = np.cumsum(env.mu)
        self.obs_idx = env.obs_index
        self.det = env.det_next
        self.jo_of_state = (
            None if self.obs_idx is None else np.ravel_multi_index(tuple(self.obs_idx.T), env.obs_dims)
        )

    def start(self) -> tuple[int, tuple[int, ...]]:
        rng = self.rng
        s = int(np.searchsorted(self.mu_cdf, rng.random() * self.mu_cdf[-1], side="right"))
        s = min(s, self.env.n_states - 1)
        return s, self.observe(s)

    def observe(self, s: int) -> tuple[int, ...]:
        if self.obs_idx is not None:
            return tuple(self.obs_idx[s].tolist())
        return self.env.sample_obs(s, self.rng)

    def advance(self, s: int, ja: int, t: int) -> tuple[int, float, bool]:
        env = self.env
        s2 = int(self.det[s, ja]) if self.det is not None else env.sample_next(s, ja, self.rng)
        done = bool(env.terminal[s2]) or (env.horizon > 0 and t + 1 >= env.horizon)
        return s2, float(env.reward[s, ja]), done


def train_centralized(env, config: LearnConfig | None = None) -> TrainResult:
    """Q-learning over joint observations and joint actions."""
    cfg = config or LearnConfig()
    env = as_dec_pomdp(env)
    run = _Runner(env, cfg)
    table = ActionValueTable(env.obs_dims, env.n_joint_actions)
    curve = []
    obs_dims = env.obs_dims
    for ep in range(cfg.episodes):
        eps = cfg.epsilon(ep)
        if cfg.lr_schedule == "linear":
            run.lr = cfg.episode_lr(ep)
        s, obs = run.start()
        k = int(np.ravel_multi_index(obs, obs_dims))
        t, done = 0, False
        while not done:
            ja = _eps_greedy(table.values[k], eps, run.rng)
            s, r, done = run.advance(s, ja, t)
            obs = run.observe(s)
            k2 = int(np.ravel_multi_index(obs, obs_dims))
            _td(table, k, ja, r, k2, done, run.lr, cfg.gamma)
            k, t = k2, t + 1
            if env.horizon == 0 and t >= 10_000:
                break
        if (ep + 1) % cfg.eval_every == 0 or ep + 1 == cfg.episodes:
            curve.append((ep + 1, evaluate_policy(env, centralized_policy(table))))
    return TrainResult(tables=[table], curve=curve)


def _senders(env: DecPomdpSpec) -> list[int]:
    """Agents whose messages can change some teammate's decision."""
    return [j for j in range(env.n_agents) if any(env.action_dims[i] > 1 for i in range(env.n_agents) if i != j)]


def _comm_loop(
    env: DecPomdpSpec,
    cfg: LearnConfig,
    message_fns: list[MessageFunction | None],
    on_refit: Callable[[int, "_CommState"], None] | None = None,
    refit_at: Sequence[int] = (),
    critic: bool = False,
) -> "_CommState":
    st = _CommState(env, cfg, message_fns, critic)
    refit_at = set(refit_at)
    n = env.n_agents
    adims = env.action_dims
    run = st.run
    record_from = max(refit_at) if refit_at else 0
    for ep in range(cfg.episodes):
        if ep in refit_at and on_refit is not None:
            on_refit(ep, st)
        eps = cfg.epsilon(ep)
        if cfg.lr_schedule == "linear":
            run.lr = cfg.episode_lr(ep)
        s, obs = run.start()
        t, done = 0, False
        labels = st.labels
        while not done:
            msgs = [int(labels[j][obs[j]]) for j in range(n)]
            keys = [st.key(i, obs, msgs) for i in range(n)]
            acts = [_eps_greedy(st.tables[i].values[keys[i]], eps, run.rng) for i in range(n)]
            ja = int(np.ravel_multi_index(acts, adims))
            s, r, done = run.advance(s, ja, t)
            obs2 = run.observe(s)
            msgs2 = [int(labels[j][obs2[j]]) for j in range(n)]
            for i in range(n):
                _td(st.tables[i], keys[i], acts[i], r, st.key(i, obs2, msgs2), done, run.lr, cfg.gamma)
            if st.critic is not None:
                k = int(np.ravel_multi_index(obs, env.obs_dims))
                k2 = int(np.ravel_multi_index(obs2, env.obs_dims))
                _td(st.critic, k, ja, r, k2, done, run.lr, cfg.gamma)
                st.buffer.add(Transition(obs, tuple(acts), r, obs2, done))
            for j in range(n):
                st.obs_counts[j][obs[j]] += 1
            if ep >= record_from:
                for j in range(n):
                    st.emissions[j][obs[j], msgs[j]] += 1
                for i in range(n):
                    for j in range(n):
                        if j != i:
                            st.received[i][msgs[j], acts[i]] += 1
            obs, t = obs2, t + 1
            if env.horizon == 0 and t >= 10_000:
                break
        if (ep + 1) % cfg.eval_every == 0 or ep + 1 == cfg.episodes:
            st.curve.append((ep + 1, evaluate_policy(env, decentralized_policy(env, st.tables, st.message_fns))))
    return st


class _CommState:
    def __init__(self, env, cfg, message_fns, critic: bool):
        n = env.n_agents
        self.env, self.cfg = env, cfg
        self.message_fns = list(message_fns) + [None] * (n - len(message_fns))
        for j, mf in enumerate(self.message_fns):
            if mf is not None and mf.n_obs != env.obs_dims[j]:
                raise ValueError(f"message function of agent {j} covers {mf.n_obs} observations, expected {env.obs_dims[j]}")
        self.run = _Runner(env, cfg)
        self.tables = [
            ActionValueTable(agent_key_dims(env, i, self.message_fns), env.action_dims[i]) for i in range(n)
        ]
        self.critic = ActionValueTable(env.obs_dims, env.n_joint_actions) if critic else None
        self.buffer = ReplayBuffer(cfg.buffer_capacity)
        self.curve: list[tuple[int, float]] = []
        sizes = _alphabets(self.message_fns, n)
        self.emissions = [np.zeros((env.obs_dims[j], sizes[j])) for j in range(n)]
        self.received = [np.zeros((max(sizes[j] for j in range(n) if j != i) if n > 1 else 1, env.action_dims[i])) for i in range(n)]
        self.labels = stamp_labels(self.message_fns, env)
        self.obs_counts = [np.zeros(k) for k in env.obs_dims]
        self._mult = []
        for i in range(n):
            dims = self.tables[i].key_dims
            self._mult.append([int(np.prod(dims[p + 1 :])) for p in range(len(dims))])

    def key(self, i: int, obs, msgs) -> int:
        m = self._mult[i]
        k = obs[i] * m[0]
        p = 1
        for j in range(len(obs)):
            if j != i:
                k += msgs[j] * m[p]
                p += 1
        return k

    def set_messages(self, j: int, mf: MessageFunction, weights: np.ndarray | None = None) -> None:
        """Install agent j's new message function and carry receivers' values over.

        Each receiver's row for a new label starts from the ``weights``-average
        of its rows under the old labels of the observations now sent as that
        label, so a refit does not throw away what was learned.
        """
        old = self.labels[j]
        self.message_fns[j] = mf
        self.labels = stamp_labels(self.message_fns, self.env)
        new = self.labels[j]
        if np.array_equal(old, new):
            return
        w = np.ones(len(new)) if weights is None else np.asarray(weights, dtype=float) + 1e-12
        M = mf.alphabet_size
        mix = np.zeros((M, M))  # mix[new, old]
        np.add.at(mix, (new, old), w)
        mass = mix.sum(axis=1, keepdims=True)
        for i in range(self.env.n_agents):
            if i == j:
                continue
            t = self.tables[i]
            pos = 1 + sum(1 for k in range(self.env.n_agents) if k != i and k < j)
            V = np.moveaxis(t.values.reshape(t.key_dims + (t.n_actions,)), pos, -1)
            remapped = np.where(mass.T > 0, V @ np.divide(mix, mass, out=np.zeros_like(mix), where=mass > 0).T, V)
            t.values = np.moveaxis(remapped, -1, pos).reshape(t.values.shape)


def train_comm_conditioned(
    env, message_fns: Sequence[MessageFunction | None], config: LearnConfig | None = None
) -> TrainResult:
    """Per-agent Q-learning on (o_i, m_-i) with fixed message functions.

    ``message_fns[j]`` is agent j's broadcast function (None means a single
    constant label).  All agents learn from the shared team reward.
    """
    cfg = config or LearnConfig()
    env = as_dec_pomdp(env)
    for j, mf in enumerate(message_fns):
        if mf is not None and np.any(mf.labels >= mf.alphabet_size):
            raise ValueError(f"agent {j} emits a label outside its alphabet")
    st = _comm_loop(env, cfg, list(message_fns))
    return TrainResult(
        tables=st.tables,
        curve=st.curve,
        message_fns=st.message_fns,
        emission_counts=st.emissions,
        action_counts=st.received,
    )


def train_independent(env, config: LearnConfig | None = None) -> TrainResult:
    """Independent Q-learning: each agent conditions on its own observation only."""
    return train_comm_conditioned(env, [], config)


def refit_schedule(cfg: LearnConfig) -> list[int]:
    E = cfg.episodes
    start = int(round(cfg.warmup_frac * E))
    step = max(1, int(round(cfg.refit_every_frac * E)))
    stop = min(E, int(round(cfg.refit_until_frac * E)))
    return list(range(start, stop, step)) if E > 0 else []


def fit_agent_messages(
    critic: ActionValueTable,
    env: DecPomdpSpec,
    agent: int,
    alphabet_size: int,
    rim: RimConfig,
    batch: Sequence[Transition] | None = None,
    visitation=None,
    previous: MessageFunction | None = None,
    keep_margin: float | None = None,
) -> MessageFunction:
    """One message-function refit from the current critic.

    With ``batch`` the vectors are assembled from top-K2 replay pairs;
    otherwise from the full table weighted by ``visitation``.  With
    ``keep_margin`` set, ``previous`` is kept unless the new fit lowers the
    loss on the current vectors by more than that fraction of its magnitude.
    """
    if batch is not None:
        vs = build_qvectors_sampled(critic, batch, agent, rim.K2, env.obs_dims, env.action_dims)
    else:
        vs = build_qvectors(critic, visitation, agent, env.obs_dims)
    vs = normalize_activation(vs, activation=rim.activation)
    mf = fit_messages(vs, None, alphabet_size, rim, fallback=previous)
    if previous is not None and keep_margin is not None and len(vs) > 1:
        old_loss = rim_loss(previous, vs, rim)
        if old_loss <= mf.loss + keep_margin * abs(mf.loss):
            return previous
    if previous is not None:
        w = np.zeros(mf.n_obs)
        w[vs.obs_ids] = vs.weights
        mf = align_labels(mf, previous, w + 1e-9)
    return mf


def train_rgmcomm(
    env,
    rim: RimConfig | None = None,
    config: LearnConfig | None = None,
    alphabet_size: int = 2,
    vector_mode: str = "sampled",
    keep_margin: float | None = None,
) -> TrainResult:
    """Interleave comm-conditioned Q-learning with message refits.

    A centralized critic is learned off-policy from the same experience.
    After a warm-up the message function of every sender is refit from the
    critic at a fixed cadence; labels are aligned to the previous fit so the
    per-agent tables stay meaningful.
    """
    rim = rim or RimConfig()
    cfg = config or LearnConfig()
    env = as_dec_pomdp(env)
    if vector_mode not in ("sampled", "table"):
        raise ValueError("vector_mode must be 'sampled' or 'table'")
    senders = _senders(env)
    init = [MessageFunction.constant(env.obs_dims[j], alphabet_size, j) if j in senders else None for j in range(env.n_agents)]
    fit_rng = np.random.default_rng([cfg.seed, 7])
    refits: list[int] = []

    def on_refit(ep: int, st: _CommState) -> None:
        if len(st.buffer) == 0:
            return
        refits.append(ep)
        for j in senders:
            if vector_mode == "sampled":
                batch = replay_sample(st.buffer, rim.K1, fit_rng)
                mf = fit_agent_messages(st.critic, env, j, alphabet_size, rim, batch=batch, previous=st.message_fns[j], keep_margin=keep_margin)
            else:
                counts = np.zeros(env.n_joint_obs)
                for tr in st.buffer:
                    counts[env.joint_obs_index(tr.joint_obs)] += 1
                mf = fit_agent_messages(
                    st.critic, env, j, alphabet_size, rim, visitation=counts / counts.sum(), previous=st.message_fns[j], keep_margin=keep_margin
                )
            st.set_messages(j, mf, st.obs_counts[j])

    st = _comm_loop(env, cfg, init, on_refit=on_refit, refit_at=refit_schedule(cfg), critic=True)
    return TrainResult(
        tables=st.tables,
        curve=st.curve,
        critic=st.critic,
        message_fns=st.message_fns,
        emission_counts=st.emissions,
        action_counts=st.received,
        refits=refits,
    )
