"""Exact evaluation of communication-conditioned policies and the gap bound.

Policies are given over joint observations: either an integer array of
joint-action indices (deterministic) or a row-stochastic
``(n_joint_obs, n_joint_actions)`` matrix.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cluster import (
    MessageFunction,
    QVectorSet,
    RimConfig,
    build_qvectors,
    cosine_distance,
    fit_messages,
    normalize_activation,
)
from .envs import DecPomdpSpec, MatrixGameSpec, as_dec_pomdp

log = logging.getLogger(__name__)

ENUM_CAP = 10**6


class UnsupportedEnvError(ValueError):
    """The requested exact computation needs a one-step game."""


# ---------------------------------------------------------------------------
# Policy plumbing
# ---------------------------------------------------------------------------


def _policy_matrix(env: DecPomdpSpec, policy) -> np.ndarray:
    pi = np.asarray(policy)
    n_jo, JA = env.n_joint_obs, env.n_joint_actions
    if pi.ndim == 1:
        if pi.shape[0] != n_jo:
            raise KeyError(f"policy covers {pi.shape[0]} joint observations, expected {n_jo}")
        if pi.size and (pi.min() < 0 or pi.max() >= JA):
            raise KeyError("policy selects an undefined joint action")
        return np.eye(JA)[pi.astype(int)]
    if pi.shape != (n_jo, JA):
        raise KeyError(f"policy matrix shape {pi.shape} != {(n_jo, JA)}")
    return pi.astype(float)


def _state_chain(env: DecPomdpSpec, policy) -> tuple[np.ndarray, np.ndarray]:
    """State-to-state kernel (masked at terminal entries) and expected reward."""
    state_pi = env.joint_obs_matrix @ _policy_matrix(env, policy)  # (S, JA)
    r = (state_pi * env.reward).sum(axis=1)
    P = np.einsum("sa,sat->st", state_pi, env.transition)
    P = P * (~env.terminal)[None, :]
    return P, r


# ---------------------------------------------------------------------------
# Visitation and returns
# ---------------------------------------------------------------------------


@dataclass
class VisitationDist:
    """Discounted visitation over joint observations, with per-agent marginals."""

    joint_obs: np.ndarray
    obs_dims: tuple[int, ...]
    gamma: float
    policy_id: str = ""
    states: np.ndarray | None = None

    def __post_init__(self):
        if abs(self.joint_obs.sum() - 1.0) > 1e-10 or np.any(self.joint_obs < -1e-15):
            raise ValueError("visitation must be a probability distribution")

    def marginal(self, agent: int) -> np.ndarray:
        D = self.joint_obs.reshape(self.obs_dims)
        axes = tuple(k for k in range(len(self.obs_dims)) if k != agent)
        return D.sum(axis=axes)

    def message_marginal(self, agent: int, message_fn: MessageFunction) -> np.ndarray:
        """d(m) = sum of d(o_j) over observations sent to label m."""
        return self.marginal(agent) @ np.eye(message_fn.alphabet_size)[message_fn.labels]

    def within_cluster(self, agent: int, message_fn: MessageFunction) -> np.ndarray:
        """(|M|, |Omega_j|) rows d(o_j) / d(m); empty clusters get a zero row."""
        d = self.marginal(agent)
        onehot = np.eye(message_fn.alphabet_size)[message_fn.labels].T * d[None, :]
        mass = onehot.sum(axis=1, keepdims=True)
        return np.divide(onehot, mass, out=np.zeros_like(onehot), where=mass > 0)


def visitation(env, policy, gamma: float | None = None, tol: float = 1e-10, policy_id: str = "") -> VisitationDist:
    """Normalized discounted occupancy of joint observations under ``policy``.

    Finite horizons sum ``gamma^t P(s_t = s, episode alive)`` over the
    horizon; otherwise the linear system ``d (I - gamma P) = (1 - gamma) mu``
    is solved.  Terminal entries end the episode.
    """
    env = as_dec_pomdp(env)
    g = env.gamma if gamma is None else gamma
    P, _ = _state_chain(env, policy)
    mu = env.mu
    if env.horizon > 0:
        occ = np.zeros(env.n_states)
        x = mu.copy()
        for t in range(env.horizon):
            occ += g**t * x
            x = x @ P
    else:
        if g >= 1.0:
            raise np.linalg.LinAlgError("undiscounted infinite-horizon visitation is singular")
        A = np.eye(env.n_states) - g * P
        occ = np.linalg.solve(A.T, (1 - g) * mu)
        resid = np.max(np.abs(occ @ A - (1 - g) * mu))
        if resid > max(tol, 1e-9):
            raise np.linalg.LinAlgError(f"visitation residual {resid:.3g} exceeds {tol}")
    occ = np.maximum(occ, 0.0)
    occ = occ / occ.sum()
    d = occ @ env.joint_obs_matrix
    return VisitationDist(joint_obs=d / d.sum(), obs_dims=env.obs_dims, gamma=g, policy_id=policy_id, states=occ)


def expected_return(env, policy, gamma: float | None = None) -> float:
    """Exact mean episode return.

    Finite horizons return the expected undiscounted sum of rewards (for a
    one-step game, ``sum obs_dist(o) Q(o, pi(o))``); otherwise the average
    return ``(1 - gamma) mu V``.
    """
    env = as_dec_pomdp(env)
    g = env.gamma if gamma is None else gamma
    P, r = _state_chain(env, policy)
    if env.horizon > 0:
        V = np.zeros(env.n_states)
        for _ in range(env.horizon):
            V = r + P @ V
        return float(env.mu @ V)
    V = np.linalg.solve(np.eye(env.n_states) - g * P, r)
    return float((1 - g) * env.mu @ V)


def expected_return_mc(env, policy, episodes: int = 10_000, seed: int = 0, max_steps: int = 1000) -> tuple[float, float]:
    """Monte Carlo estimate of ``expected_return``: (mean, standard error)."""
    from .envs import reset, step

    env = as_dec_pomdp(env)
    pi = _policy_matrix(env, policy)
    cdf = np.cumsum(pi, axis=1)
    rng = np.random.default_rng(seed)
    totals = np.empty(episodes)
    limit = env.horizon if env.horizon > 0 else max_steps
    for e in range(episodes):
        s, obs = reset(env, rng)
        total, disc = 0.0, 1.0
        for t in range(limit):
            row = cdf[env.joint_obs_index(obs)]
            ja = min(int(np.searchsorted(row, rng.random() * row[-1], side="right")), env.n_joint_actions - 1)
            tr, s = step(env, s, env.joint_action_tuple(ja), rng, t, joint_obs=obs)
            total += tr.reward * (disc if env.horizon == 0 else 1.0)
            if env.horizon == 0:
                disc *= env.gamma
            obs = tr.next_joint_obs
            if tr.done:
                break
        totals[e] = total * ((1 - env.gamma) if env.horizon == 0 else 1.0)
    return float(totals.mean()), float(totals.std(ddof=1) / math.sqrt(episodes)) if episodes > 1 else 0.0


# ---------------------------------------------------------------------------
# One-step games
# ---------------------------------------------------------------------------


def _one_step(env) -> MatrixGameSpec:
    if isinstance(env, MatrixGameSpec):
        return env
    env = as_dec_pomdp(env)
    if env.horizon != 1 or env.n_agents != 2 or env.obs_index is None or env.n_states != env.n_joint_obs:
        raise UnsupportedEnvError("exact comm-policy search needs a two-agent one-step game")
    keys = np.ravel_multi_index(tuple(env.obs_index.T), env.obs_dims)
    q = np.empty((env.n_joint_obs, env.n_joint_actions))
    q[keys] = env.reward
    dist = np.empty(env.n_joint_obs)
    dist[keys] = env.mu
    return MatrixGameSpec(q.reshape(env.obs_dims + env.action_dims), dist.reshape(env.obs_dims), env.gamma, env.name)


def optimal_q_table(env) -> np.ndarray:
    """(n_joint_obs, n_joint_actions) optimal action values of a one-step game."""
    game = _one_step(env)
    O1, O2, A1, A2 = game.q_table.shape
    return game.q_table.reshape(O1 * O2, A1 * A2)


def optimal_policy(env) -> np.ndarray:
    return optimal_q_table(env).argmax(axis=1)


def _labels(message_fn: MessageFunction | None, n_obs: int) -> tuple[np.ndarray, int]:
    if message_fn is None:
        return np.zeros(n_obs, dtype=int), 1
    if message_fn.n_obs != n_obs:
        raise ValueError(f"message function covers {message_fn.n_obs} observations, expected {n_obs}")
    return message_fn.labels, message_fn.alphabet_size


@dataclass
class CommPolicy:
    """Deterministic decentralized policy tables for a two-agent one-step game.

    ``actions[i][o_i, m_-i]`` is agent i's action; ``joint`` is the compiled
    joint-action index per joint observation.
    """

    actions: list[np.ndarray]
    joint: np.ndarray
    value: float


def _compile(game: MatrixGameSpec, t1: np.ndarray, t2: np.ndarray, l1: np.ndarray, l2: np.ndarray) -> np.ndarray:
    O1, O2, A1, A2 = game.q_table.shape
    o1, o2 = np.unravel_index(np.arange(O1 * O2), (O1, O2))
    return t1[o1, l2[o2]] * A2 + t2[o2, l1[o1]]


def brute_force_comm_policy(
    env, message_fn: MessageFunction | None, other_message_fn: MessageFunction | None = None
) -> CommPolicy:
    """Optimal policy where agent 1 acts on (o_1, g_2(o_2)) and agent 2 on (o_2, g_1(o_1)).

    ``message_fn`` is agent 2's message function (what agent 1 receives);
    ``other_message_fn`` is agent 1's.  When agent 2 has a single action each
    key of agent 1 is optimized independently; otherwise every agent-2
    policy is enumerated and agent 1 best-responds per key.
    """
    game = _one_step(env)
    Q = game.q_table
    d = game.obs_dist
    O1, O2, A1, A2 = Q.shape
    l2, M2 = _labels(message_fn, O2)
    l1, M1 = _labels(other_message_fn, O1)
    msg2 = np.eye(M2)[l2]  # (O2, M2)
    WQ = Q * d[:, :, None, None]

    def best_response_1(t2: np.ndarray) -> tuple[np.ndarray, float]:
        # value of agent-1 action a at key (o1, m2) given agent 2's table t2[o2, m1]
        a2 = t2[:, l1].T  # (O1, O2)
        picked = np.take_along_axis(WQ, a2[:, :, None, None], axis=3)[..., 0]  # (O1, O2, A1)
        per_key = np.einsum("xya,ym->xma", picked, msg2)
        return per_key.argmax(axis=2), float(per_key.max(axis=2).sum())

    if A2 == 1:
        t2 = np.zeros((O2, M1), dtype=int)
        t1, val = best_response_1(t2)
    else:
        n_keys = O2 * M1
        total = A2**n_keys
        if total > ENUM_CAP:
            raise ValueError(f"enumerating {total} teammate policies exceeds cap {ENUM_CAP}")
        best = (-np.inf, None, None)
        for flat in itertools.product(range(A2), repeat=n_keys):
            t2 = np.array(flat, dtype=int).reshape(O2, M1)
            t1, val = best_response_1(t2)
            if val > best[0] + 1e-12:
                best = (val, t1, t2)
        val, t1, t2 = best
    joint = _compile(game, t1, t2, l1, l2)
    return CommPolicy(actions=[t1, t2], joint=joint, value=float(val))


def receiver_values(env, message_fn: MessageFunction | None) -> np.ndarray:
    """Agent 1's conditional return per own observation when agent 2 has one action.

    A constant message gives the partial-observation values; the identity
    message the full-observation ones.
    """
    game = _one_step(env)
    if game.q_table.shape[3] != 1:
        raise UnsupportedEnvError("receiver values need a teammate with a single action")
    Q = game.q_table[..., 0]
    d = game.obs_dist
    l2, M = _labels(message_fn, Q.shape[1])
    cond = d / d.sum(axis=1, keepdims=True)
    per = np.einsum("xya,ym->xma", Q * cond[:, :, None], np.eye(M)[l2])
    return per.max(axis=2).sum(axis=1)


def partial_action_values(env) -> np.ndarray:
    """[o_1, a_1] value of each action of agent 1 with no knowledge of o_2."""
    game = _one_step(env)
    Q = game.q_table[..., 0] if game.q_table.shape[3] == 1 else game.q_table.max(axis=3)
    cond = game.obs_dist / game.obs_dist.sum(axis=1, keepdims=True)
    return np.einsum("xya,xy->xa", Q, cond)


# ---------------------------------------------------------------------------
# Cluster geometry and the bound
# ---------------------------------------------------------------------------


@dataclass
class ClusterGeometry:
    centers: dict[int, np.ndarray]
    per_obs_eps: dict[int, float]
    eps: float
    q_max: float
    cluster_mass: dict[int, float] = field(default_factory=dict)
    zero_centers: list[int] = field(default_factory=list)


def cluster_geometry(vectors: QVectorSet, message_fn: MessageFunction, visitation_weights=None) -> ClusterGeometry:
    """Centers, per-observation cosine distance to the own center, and their average.

    Observations with zero weight are excluded.  A zero-norm center (or a
    zero member vector) counts as distance 1 for its members.
    """
    V = vectors.vectors
    if visitation_weights is None:
        w = vectors.weights
    elif isinstance(visitation_weights, VisitationDist):
        w = visitation_weights.marginal(vectors.agent)[vectors.obs_ids]
    else:
        w = np.asarray(visitation_weights, dtype=float)
    if w.shape[0] != len(vectors):
        raise ValueError("one weight per vector is required")
    w = w / w.sum()
    labels = message_fn.labels[vectors.obs_ids]
    live = w > 0
    centers, masses, per_obs, zero_centers = {}, {}, {}, []
    eps = 0.0
    for m in np.unique(labels[live]).tolist():
        members = np.flatnonzero(live & (labels == m))
        mass = float(w[members].sum())
        within = w[members] / mass
        H = within @ V[members]
        centers[m], masses[m] = H, mass
        zero = not np.any(H)
        if zero:
            zero_centers.append(m)
        for r, wr in zip(members.tolist(), within.tolist()):
            if zero or not np.any(V[r]):
                e = 1.0
            else:
                e = cosine_distance(V[r], H)
            per_obs[int(vectors.obs_ids[r])] = e
            eps += mass * wr * e
    norms = np.linalg.norm(V[live], axis=1)
    return ClusterGeometry(
        centers=centers,
        per_obs_eps=per_obs,
        eps=float(min(max(eps, 0.0), 2.0)),
        q_max=float(norms.max()) if norms.size else 0.0,
        cluster_mass=masses,
        zero_centers=zero_centers,
    )


def _phi(vector: np.ndarray, block_size: int) -> float:
    return float(vector.reshape(-1, block_size).max(axis=1).sum())


def center_policy_value(env, message_fn: MessageFunction, vectors: QVectorSet | None = None, visitation_weights=None) -> float:
    """Return of the policy that acts greedily on each cluster center.

    Per label the receiver picks, in every block, the action maximizing the
    center; the value is ``sum_m d(m) * sum_blocks max(center block)``.
    Needs agent 2 to be the only sender and agent 1 the only actor.
    """
    game = _one_step(env)
    if game.q_table.shape[3] != 1:
        raise UnsupportedEnvError("the center policy is defined for a single receiving actor")
    if vectors is None:
        vectors = build_qvectors(optimal_q_table(game), game.obs_dist.ravel(), 1, game.obs_dims)
    geo = cluster_geometry(vectors, message_fn, visitation_weights)
    return float(sum(geo.cluster_mass[m] * _phi(H, vectors.block_size) for m, H in geo.centers.items()))


def senders(env) -> list[int]:
    env = as_dec_pomdp(env)
    return [j for j in range(env.n_agents) if any(env.action_dims[i] > 1 for i in range(env.n_agents) if i != j)]


@dataclass
class GapReport:
    env_id: str
    n_labels: int
    j_full: float
    j_comm: float
    j_nocomm: float
    gap: float
    eps_per_agent: list[float]
    q_max_per_agent: list[float]
    bound: float
    bound_safe: float
    q_abs_max: float
    holds: bool
    message_fns: list[MessageFunction | None] = field(default_factory=list)
    center_value: float | None = None

    @property
    def eps(self) -> float:
        return float(sum(self.eps_per_agent))

    @property
    def q_max(self) -> float:
        return float(max(self.q_max_per_agent, default=0.0))

    @property
    def ratio(self) -> float:
        if self.bound > 0:
            return self.gap / self.bound
        return 0.0 if abs(self.gap) <= 1e-9 else math.inf

    def csv_row(self) -> list:
        return [self.env_id, self.n_labels, self.j_full, self.j_comm, self.j_nocomm, self.gap, self.eps, self.q_max, self.bound, self.holds]

    def summary(self) -> str:
        eps = ", ".join(f"{e:.6g}" for e in self.eps_per_agent)
        return (
            f"{self.env_id} |M|={self.n_labels}: J*={self.j_full:.10g} J(comm)={self.j_comm:.10g} "
            f"J(no comm)={self.j_nocomm:.10g} gap={self.gap:.10g} eps=[{eps}] "
            f"Q_max={self.q_max:.6g} (max |Q|={self.q_abs_max:.6g}) bound={self.bound:.6g} "
            f"safe bound={self.bound_safe:.6g} holds={self.holds}"
        )


def agent_qvectors(env, agent: int) -> QVectorSet:
    """Weighted optimal action-value vectors of ``agent`` in a one-step game."""
    game = _one_step(env)
    return build_qvectors(optimal_q_table(game), game.obs_dist.ravel(), agent, game.obs_dims)


def bound_terms(vectors: QVectorSet, message_fn: MessageFunction) -> tuple[float, float, ClusterGeometry]:
    """(per-agent bound with constant 1, with constant sqrt(n_blocks), geometry)."""
    geo = cluster_geometry(vectors, message_fn)
    term = geo.q_max * math.sqrt(2.0 * geo.eps)
    return term, math.sqrt(vectors.n_blocks) * term, geo


def gap_for_messages(env, message_fns: Sequence[MessageFunction | None], env_id: str | None = None) -> GapReport:
    """Gap report for given message functions (index = sending agent)."""
    game = _one_step(env)
    fns = list(message_fns) + [None] * (2 - len(message_fns))
    n_labels = max((m.alphabet_size for m in fns if m is not None), default=1)
    j_full = expected_return(game, optimal_policy(game))
    j_comm = brute_force_comm_policy(game, fns[1], fns[0]).value
    j_nocomm = brute_force_comm_policy(game, None, None).value
    eps, qmax = [], []
    bound = bound_safe = 0.0
    for j in senders(game):
        mf = fns[j] or MessageFunction.constant(game.obs_dims[j], 1, j)
        b, bs, geo = bound_terms(agent_qvectors(game, j), mf)
        eps.append(geo.eps)
        qmax.append(geo.q_max)
        bound += b
        bound_safe += bs
    gap = j_full - j_comm
    center = None
    if game.q_table.shape[3] == 1 and fns[1] is not None:
        center = center_policy_value(game, fns[1])
    return GapReport(
        env_id=env_id or game.name,
        n_labels=n_labels,
        j_full=j_full,
        j_comm=j_comm,
        j_nocomm=j_nocomm,
        gap=gap,
        eps_per_agent=eps,
        q_max_per_agent=qmax,
        bound=bound,
        bound_safe=bound_safe,
        q_abs_max=float(np.abs(game.q_table).max()),
        holds=bool(gap <= bound + 1e-9),
        message_fns=fns,
        center_value=center,
    )


def fit_game_messages(env, alphabet_size: int, config: RimConfig | None = None) -> list[MessageFunction | None]:
    """RIM message functions for every sender, fit on normalized optimal vectors."""
    config = config or RimConfig()
    game = _one_step(env)
    out: list[MessageFunction | None] = [None, None]
    for j in senders(game):
        if alphabet_size >= game.obs_dims[j]:
            # enough labels to name every observation: nothing to compress
            out[j] = MessageFunction.from_labels(np.arange(game.obs_dims[j]), alphabet_size, j)
            continue
        vs = agent_qvectors(game, j)
        out[j] = fit_messages(normalize_activation(vs, activation=config.activation), None, alphabet_size, config)
    return out


def gap_report(env, alphabet_size: int, config: RimConfig | None = None, env_id: str | None = None) -> GapReport:
    """Optimal values, RIM messages, brute-force comm return and the bound check."""
    return gap_for_messages(env, fit_game_messages(env, alphabet_size, config), env_id)


# ---------------------------------------------------------------------------
# Monotonicity in the alphabet size
# ---------------------------------------------------------------------------


def set_partitions(n: int, max_blocks: int):
    """Restricted-growth label strings of length ``n`` using at most ``max_blocks`` labels."""
    if n == 0:
        yield ()
        return

    def rec(prefix: list[int], used: int):
        if len(prefix) == n:
            yield tuple(prefix)
            return
        for b in range(min(used + 1, max_blocks)):
            prefix.append(b)
            yield from rec(prefix, max(used, b + 1))
            prefix.pop()

    yield from rec([0], 1)


def optimal_eps_messages(vectors: QVectorSet, alphabet_size: int, agent: int | None = None) -> tuple[MessageFunction, float]:
    """Exhaustive minimum-ε clustering; ties prefer more clusters, then lexicographic order."""
    n = vectors.n_obs
    agent = vectors.agent if agent is None else agent
    best = None
    count = 0
    for labels in set_partitions(n, alphabet_size):
        count += 1
        if count > ENUM_CAP:
            raise ValueError("set-partition enumeration exceeds cap")
        mf = MessageFunction.from_labels(labels, alphabet_size, agent)
        e = cluster_geometry(vectors, mf).eps
        key = (e, -len(set(labels)))
        if best is None or key[0] < best[0][0] - 1e-12 or (abs(key[0] - best[0][0]) <= 1e-12 and key[1] < best[0][1]):
            best = (key, mf)
    return best[1], best[0][0]


@dataclass
class MonotonicityRow:
    n_labels: int
    eps: float
    gap: float


def label_monotonicity_check(env, max_labels: int | None = None, agent: int = 1) -> list[MonotonicityRow]:
    """Best achievable ε and the resulting gap for |M| = 1 .. max_labels."""
    game = _one_step(env)
    vs = agent_qvectors(game, agent)
    max_labels = max_labels or game.obs_dims[agent]
    rows = []
    for M in range(1, max_labels + 1):
        mf, e = optimal_eps_messages(vs, M, agent)
        fns = [None, None]
        fns[agent] = mf
        rep = gap_for_messages(game, fns)
        rows.append(MonotonicityRow(M, e, rep.gap))
    return rows
