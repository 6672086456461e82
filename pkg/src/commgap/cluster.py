"""Message generation as clustering of action-value vectors.

An agent's message function groups its local observations so that the
observations sharing a label have action-value vectors pointing in similar
directions.  The objective is a regularized-information-maximization loss: a
k-nearest-neighbour locality term under cosine distance minus a weighted
mutual information between observations and labels.
"""

from __future__ import annotations

import logging
import warnings
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

log = logging.getLogger(__name__)

EXHAUSTIVE_CAP = 10**6
WEIGHT_MODES = ("distance", "similarity")
SOLVERS = ("exhaustive", "coordinate-descent", "soft-gradient")
ACTIVATIONS = ("tanh", "softmax", "none")


@dataclass
class QVectorSet:
    """Weighted action-value vectors of one agent, one row per observation.

    Row ``r`` belongs to observation ``obs_ids[r]``.  Each row is a
    concatenation of blocks of length ``block_size`` (one block per
    configuration of the other agents, identical ordering across rows).
    ``weights`` is the marginal visitation of each observation.
    """

    agent: int
    vectors: np.ndarray
    weights: np.ndarray
    block_size: int
    n_obs: int
    obs_ids: np.ndarray | None = None
    unvisited: np.ndarray | None = None

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.obs_ids is None:
            self.obs_ids = np.arange(self.vectors.shape[0])
        if self.unvisited is None:
            self.unvisited = np.zeros(self.vectors.shape[0], dtype=bool)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != self.weights.shape[0]:
            raise ValueError("vectors must be (n, L) with one weight per row")
        if self.vectors.shape[1] % self.block_size:
            raise ValueError("vector length must be a multiple of block_size")
        if np.any(self.weights < 0):
            raise ValueError("weights must be non-negative")

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def n_blocks(self) -> int:
        return self.vectors.shape[1] // self.block_size

    def blocks(self) -> np.ndarray:
        """View as (n, n_blocks, block_size)."""
        return self.vectors.reshape(len(self), self.n_blocks, self.block_size)


@dataclass
class MessageFunction:
    """Soft assignment of each observation of ``agent`` to ``alphabet_size`` labels."""

    agent: int
    probs: np.ndarray
    loss: float | None = field(default=None, compare=False)

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if self.probs.ndim != 2 or self.probs.shape[1] < 1:
            raise ValueError("probs must be (n_obs, |M|) with |M| >= 1")
        if np.any(self.probs < -1e-12) or np.any(np.abs(self.probs.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("assignment rows must be probability vectors")

    @classmethod
    def from_labels(cls, labels: Sequence[int], alphabet_size: int, agent: int = 0) -> "MessageFunction":
        labels = np.asarray(labels, dtype=int)
        if labels.size and (labels.min() < 0 or labels.max() >= alphabet_size):
            raise ValueError("label out of alphabet")
        return cls(agent=agent, probs=np.eye(alphabet_size)[labels])

    @classmethod
    def constant(cls, n_obs: int, alphabet_size: int = 1, agent: int = 0) -> "MessageFunction":
        return cls.from_labels(np.zeros(n_obs, dtype=int), alphabet_size, agent)

    @classmethod
    def identity(cls, n_obs: int, agent: int = 0) -> "MessageFunction":
        return cls.from_labels(np.arange(n_obs), n_obs, agent)

    @property
    def alphabet_size(self) -> int:
        return self.probs.shape[1]

    @property
    def n_obs(self) -> int:
        return self.probs.shape[0]

    @property
    def labels(self) -> np.ndarray:
        return self.probs.argmax(axis=1)

    def __call__(self, obs: int) -> int:
        return int(self.labels[obs])

    def csv_rows(self) -> list[list]:
        labels = self.labels
        return [
            [self.agent, o, int(labels[o]), *(float(p) for p in self.probs[o])]
            for o in range(self.n_obs)
        ]


@dataclass
class RimConfig:
    lam: float = 0.1
    k_neighbors: int | None = None  # None -> min(1, n - 1)
    K1: int = 256
    K2: int = 64
    weight_mode: str = "distance"
    solver: str = "coordinate-descent"
    restarts: int = 20
    seed: int = 0
    activation: str = "tanh"
    grad_steps: int = 400
    grad_lr: float = 0.5

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.weight_mode not in WEIGHT_MODES:
            raise ValueError(f"weight_mode must be one of {WEIGHT_MODES}")
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")

    def k_for(self, n: int) -> int:
        k = min(1, n - 1) if self.k_neighbors is None else self.k_neighbors
        if k < 0 or (n > 0 and k >= n):
            raise ValueError(f"k_neighbors={k} needs at least k+1 vectors, got {n}")
        return k


# ---------------------------------------------------------------------------
# Vector construction
# ---------------------------------------------------------------------------


def build_qvectors(q_table, visitation, agent_j: int, obs_dims: Sequence[int]) -> QVectorSet:
    """Action-value vectors of ``agent_j`` from a centralized table.

    ``q_table`` holds one row of joint-action values per joint observation;
    ``visitation`` is a distribution over joint observations.  Each block is
    ``Q(o_-j, o_j, .) * d(o_-j | o_j)``; observations never visited get a
    uniform conditional and are flagged in ``unvisited``.
    """
    q = np.asarray(getattr(q_table, "values", q_table), dtype=float)
    d = np.asarray(getattr(visitation, "joint_obs", visitation), dtype=float)
    obs_dims = tuple(obs_dims)
    n_jo = int(np.prod(obs_dims))
    if q.shape[0] != n_jo or d.size != n_jo:
        raise ValueError(f"table has {q.shape[0]} keys and visitation {d.size}; expected {n_jo}")
    JA = q.shape[1]
    Q = np.moveaxis(q.reshape(obs_dims + (JA,)), agent_j, 0)
    D = np.moveaxis(d.reshape(obs_dims), agent_j, 0)
    nj = obs_dims[agent_j]
    Q = Q.reshape(nj, -1, JA)
    D = D.reshape(nj, -1)
    marg = D.sum(axis=1)
    unvisited = marg <= 0
    cond = np.where(unvisited[:, None], 1.0 / D.shape[1], D / np.where(unvisited, 1.0, marg)[:, None])
    vectors = (Q * cond[:, :, None]).reshape(nj, -1)
    total = marg.sum()
    weights = marg / total if total > 0 else np.full(nj, 1.0 / nj)
    return QVectorSet(agent=agent_j, vectors=vectors, weights=weights, block_size=JA, n_obs=nj, unvisited=unvisited)


def top_k2_frequent(buffer: Iterable, agent_i: int, K2: int) -> list[tuple[tuple, tuple]]:
    """Most frequent (o_-i, a_-i) pairs, ties in first-seen order."""
    counts: Counter = Counter()
    for tr in buffer:
        o = tuple(x for k, x in enumerate(tr.joint_obs) if k != agent_i)
        a = tuple(x for k, x in enumerate(tr.joint_action) if k != agent_i)
        counts[(o, a)] += 1
    # Counter preserves insertion order and sorted() is stable
    ranked = sorted(counts, key=lambda key: -counts[key])
    return ranked[:K2]


def build_qvectors_sampled(
    q_table,
    batch: Sequence,
    agent_j: int,
    K2: int,
    obs_dims: Sequence[int],
    action_dims: Sequence[int],
) -> QVectorSet:
    """Model-free vectors from a replay minibatch.

    Rows are the distinct observations of ``agent_j`` in ``batch``; entries
    are ``Q(o_j, o_-j, a_j, a_-j)`` over the top-``K2`` other-agent pairs and
    every own action.  Weights are empirical frequencies of ``o_j``.
    """
    q = np.asarray(getattr(q_table, "values", q_table), dtype=float)
    pairs = top_k2_frequent(batch, agent_j, K2)
    own = Counter(tr.joint_obs[agent_j] for tr in batch)
    obs_ids = np.array(sorted(own), dtype=int)
    nA = action_dims[agent_j]
    rows = np.empty((len(obs_ids), len(pairs) * nA))
    for r, oj in enumerate(obs_ids):
        col = 0
        for o_rest, a_rest in pairs:
            obs = list(o_rest)
            obs.insert(agent_j, int(oj))
            key = int(np.ravel_multi_index(tuple(obs), tuple(obs_dims)))
            for aj in range(nA):
                act = list(a_rest)
                act.insert(agent_j, aj)
                rows[r, col] = q[key, int(np.ravel_multi_index(tuple(act), tuple(action_dims)))]
                col += 1
    w = np.array([own[o] for o in obs_ids], dtype=float)
    return QVectorSet(
        agent=agent_j,
        vectors=rows,
        weights=w / w.sum(),
        block_size=nA,
        n_obs=obs_dims[agent_j],
        obs_ids=obs_ids,
    )


def normalize_activation(
    vectors: QVectorSet,
    alpha: float | None = None,
    beta: float | None = None,
    activation: str = "tanh",
) -> QVectorSet:
    """Apply ``f((v - alpha) / beta)`` to every vector.

    Unset ``alpha``/``beta`` are computed over the whole batch:
    ``alpha = (max + min) / 2`` and ``beta`` the largest raw magnitude.
    """
    if activation not in ACTIVATIONS:
        raise ValueError(f"activation must be one of {ACTIVATIONS}")
    V = vectors.vectors
    if activation == "none":
        return replace(vectors, vectors=V.copy())
    if alpha is None:
        alpha = 0.5 * (V.max() + V.min()) if V.size else 0.0
    if beta is None:
        beta = float(np.abs(V).max()) if V.size else 0.0
    if beta == 0:
        warnings.warn("beta is zero; returning vectors unchanged", RuntimeWarning, stacklevel=2)
        return replace(vectors, vectors=V.copy())
    Z = (V - alpha) / beta
    if activation == "tanh":
        out = np.tanh(Z)
    else:
        Z = Z - Z.max(axis=1, keepdims=True)
        E = np.exp(Z)
        out = E / E.sum(axis=1, keepdims=True)
    return replace(vectors, vectors=out)


# ---------------------------------------------------------------------------
# Distances, information, loss
# ---------------------------------------------------------------------------


def cosine_distance(u, v) -> float:
    """1 - cos(u, v), in [0, 2]; zero vectors are rejected."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine distance is undefined for a zero vector")
    c = float(u @ v) / (nu * nv)
    return float(min(2.0, max(0.0, 1.0 - c)))


def pairwise_cosine(V: np.ndarray) -> np.ndarray:
    """Cosine-distance matrix; rows with zero norm get NaN entries."""
    norms = np.linalg.norm(V, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    U = V / safe[:, None]
    D = np.clip(1.0 - U @ U.T, 0.0, 2.0)
    np.fill_diagonal(D, 0.0)
    bad = norms == 0
    D[bad, :] = np.nan
    D[:, bad] = np.nan
    return D


def _entropy(p: np.ndarray, axis: int = -1) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(p > 0, -p * np.log(p), 0.0)
    return t.sum(axis=axis)


def mutual_information(message_fn, obs_weights) -> float:
    """I(o; m) = H(m) - H(m | o) in nats under ``obs_weights``."""
    P = np.asarray(getattr(message_fn, "probs", message_fn), dtype=float)
    w = np.asarray(obs_weights, dtype=float)
    w = w / w.sum()
    marginal = w @ P
    mi = float(_entropy(marginal) - w @ _entropy(P, axis=1))
    return max(mi, 0.0)


@dataclass
class NeighborGraph:
    """Directed k-NN edges ``p -> q`` with locality weights."""

    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    n: int
    zero_rows: np.ndarray

    def adjacency(self) -> list[list[tuple[int, float]]]:
        adj: list[list[tuple[int, float]]] = [[] for _ in range(self.n)]
        for p, q, w in zip(self.src.tolist(), self.dst.tolist(), self.weight.tolist()):
            adj[p].append((q, w))
            adj[q].append((p, w))
        return adj


def neighbor_graph(V: np.ndarray, k: int, weight_mode: str = "distance") -> NeighborGraph:
    """k nearest neighbours of every non-zero row under cosine distance.

    Ties go to the lower index.  ``distance`` weights an edge by the cosine
    distance itself; ``similarity`` by ``1 - D / 2``.
    """
    if weight_mode not in WEIGHT_MODES:
        raise ValueError(f"weight_mode must be one of {WEIGHT_MODES}")
    n = V.shape[0]
    D = pairwise_cosine(V)
    zero = np.linalg.norm(V, axis=1) == 0
    live = np.flatnonzero(~zero)
    src, dst, wt = [], [], []
    kk = min(k, len(live) - 1) if len(live) else 0
    for p in live:
        others = live[live != p]
        order = others[np.lexsort((others, D[p, others]))][:kk]
        for q in order:
            src.append(p)
            dst.append(q)
            d = D[p, q]
            wt.append(d if weight_mode == "distance" else 1.0 - 0.5 * d)
    return NeighborGraph(
        src=np.array(src, dtype=int),
        dst=np.array(dst, dtype=int),
        weight=np.array(wt, dtype=float),
        n=n,
        zero_rows=zero,
    )


def _graph_for(vectors, config: RimConfig) -> NeighborGraph:
    V = np.asarray(getattr(vectors, "vectors", vectors), dtype=float)
    n = V.shape[0]
    return neighbor_graph(V, config.k_for(n), config.weight_mode)


def _weights_for(vectors, n: int, obs_weights=None) -> np.ndarray:
    if obs_weights is None:
        obs_weights = getattr(vectors, "weights", None)
    w = np.full(n, 1.0 / n) if obs_weights is None else np.asarray(obs_weights, dtype=float)
    return w / w.sum()


def _loss_from_graph(P: np.ndarray, graph: NeighborGraph, w: np.ndarray, lam: float) -> float:
    diff = P[graph.src] - P[graph.dst]
    l_cd = float(graph.weight @ (diff * diff).sum(axis=1)) if graph.src.size else 0.0
    n = P.shape[0]
    return l_cd - lam * n * mutual_information(P, w)


def rim_loss(message_fn, vectors, config: RimConfig, obs_weights=None) -> float:
    """L_CD - lam * L_MI for the assignment rows matching ``vectors``.

    L_MI sums I(o; m) over the n vectors, i.e. ``n * I``.
    """
    P = np.asarray(getattr(message_fn, "probs", message_fn), dtype=float)
    V = np.asarray(getattr(vectors, "vectors", vectors), dtype=float)
    ids = getattr(vectors, "obs_ids", None)
    if ids is not None and P.shape[0] != V.shape[0]:
        P = P[ids]
    if P.shape[0] != V.shape[0]:
        raise ValueError("one assignment row per vector is required")
    graph = _graph_for(V, config)
    return _loss_from_graph(P, graph, _weights_for(vectors, V.shape[0], obs_weights), config.lam)


# ---------------------------------------------------------------------------
# Solvers
# ---------------------------------------------------------------------------


def _hard_losses(L: np.ndarray, graph: NeighborGraph, w: np.ndarray, M: int, lam: float) -> np.ndarray:
    """Loss of each hard labelling row of ``L`` (shape (C, n))."""
    n = L.shape[1]
    if graph.src.size:
        cut = L[:, graph.src] != L[:, graph.dst]
        cd = 2.0 * (cut * graph.weight).sum(axis=1)
    else:
        cd = np.zeros(L.shape[0])
    mbar = np.stack([(L == k) @ w for k in range(M)], axis=1)
    return cd - lam * n * _entropy(mbar, axis=1)


def _exhaustive(graph, w, M, lam, zero) -> tuple[np.ndarray, float]:
    n = len(w)
    free = np.flatnonzero(~zero)
    total = M ** len(free)
    if total > EXHAUSTIVE_CAP:
        raise ValueError(f"exhaustive search over {total} assignments exceeds cap {EXHAUSTIVE_CAP}")
    best_l, best = None, np.inf
    powers = M ** np.arange(len(free))[::-1]
    chunk = 1 << 16
    for start in range(0, total, chunk):
        idx = np.arange(start, min(total, start + chunk))
        L = np.zeros((idx.size, n), dtype=int)
        L[:, free] = (idx[:, None] // powers) % M
        losses = _hard_losses(L, graph, w, M, lam)
        i = int(np.argmin(losses))
        if losses[i] < best - 1e-12:
            best, best_l = float(losses[i]), L[i].copy()
    return best_l, best


def _mi_term(mass: list[float]) -> float:
    h = 0.0
    for x in mass:
        if x > 0:
            h -= x * np.log(x)
    return h


def _coordinate_descent(graph, w, M, lam, zero, restarts, seed) -> tuple[np.ndarray, float, list[float]]:
    n = len(w)
    adj = graph.adjacency()
    free = [o for o in range(n) if not zero[o]]
    wl = w.tolist()
    best_l, best, init_losses = None, np.inf, []
    for r in range(restarts):
        rng = np.random.default_rng([seed, r])
        labels = [0] * n
        for o, x in zip(free, rng.integers(0, M, len(free)).tolist()):
            labels[o] = x
        mass = [0.0] * M
        for o in range(n):
            mass[labels[o]] += wl[o]
        cur = float(_hard_losses(np.array([labels]), graph, w, M, lam)[0])
        init_losses.append(cur)
        improved = True
        while improved:
            improved = False
            for o in free:
                a = labels[o]
                h_old = _mi_term(mass)
                best_k, best_delta = a, -1e-12
                for b in range(M):
                    if b == a:
                        continue
                    d_cd = 0.0
                    for q, wt in adj[o]:
                        lq = labels[q]
                        d_cd += 2.0 * wt * ((lq != b) - (lq != a))
                    mass[a] -= wl[o]
                    mass[b] += wl[o]
                    d_mi = _mi_term(mass) - h_old
                    mass[b] -= wl[o]
                    mass[a] += wl[o]
                    delta = d_cd - lam * n * d_mi
                    if delta < best_delta:
                        best_k, best_delta = b, delta
                if best_k != a:
                    mass[a] -= wl[o]
                    mass[best_k] += wl[o]
                    labels[o] = best_k
                    cur += best_delta
                    improved = True
        cur = float(_hard_losses(np.array([labels]), graph, w, M, lam)[0])
        if cur < best - 1e-12:
            best, best_l = cur, np.array(labels)
    return best_l, best, init_losses


def _soft_gradient(graph, w, M, lam, zero, restarts, seed, steps, lr) -> tuple[np.ndarray, float]:
    n = len(w)
    best_P, best = None, np.inf
    for r in range(restarts):
        rng = np.random.default_rng([seed, r])
        Z = rng.normal(0.0, 1.0, (n, M))
        Z[zero] = 0.0
        Z[zero, 0] = 10.0
        for it in range(steps + 1):
            Zs = Z - Z.max(axis=1, keepdims=True)
            P = np.exp(Zs)
            P /= P.sum(axis=1, keepdims=True)
            loss = _loss_from_graph(P, graph, w, lam)
            if loss < best - 1e-12:
                best, best_P = loss, P.copy()
            if it == steps:
                break
            G = np.zeros_like(P)
            if graph.src.size:
                diff = 2.0 * graph.weight[:, None] * (P[graph.src] - P[graph.dst])
                np.add.at(G, graph.src, diff)
                np.add.at(G, graph.dst, -diff)
            mbar = w @ P
            with np.errstate(divide="ignore"):
                dI = w[:, None] * (np.log(np.maximum(P, 1e-300)) - np.log(np.maximum(mbar, 1e-300)))
            G -= lam * n * dI
            GZ = P * (G - (P * G).sum(axis=1, keepdims=True))
            GZ[zero] = 0.0
            Z -= lr * GZ
    return best_P, best


def fit_messages(
    vectors: QVectorSet,
    obs_weights=None,
    alphabet_size: int = 2,
    config: RimConfig | None = None,
    fallback: MessageFunction | None = None,
) -> MessageFunction:
    """Minimize the RIM loss over message functions for ``vectors``.

    Rows of the result not covered by ``vectors.obs_ids`` copy ``fallback``
    (or label 0).  The fitted loss is stored on ``.loss``.
    """
    config = config or RimConfig()
    if alphabet_size < 1:
        raise ValueError("alphabet_size must be >= 1")
    n = len(vectors)
    M = alphabet_size
    w = _weights_for(vectors, n, obs_weights)
    graph = _graph_for(vectors, config)
    zero = graph.zero_rows
    if M == 1 or n == 0:
        P = np.ones((n, 1)) if M == 1 else np.eye(M)[np.zeros(n, dtype=int)]
        loss = _loss_from_graph(P, graph, w, config.lam) if n else 0.0
    elif config.solver == "exhaustive":
        labels, loss = _exhaustive(graph, w, M, config.lam, zero)
        P = np.eye(M)[labels]
    elif config.solver == "coordinate-descent":
        labels, loss, _ = _coordinate_descent(graph, w, M, config.lam, zero, config.restarts, config.seed)
        P = np.eye(M)[labels]
    else:
        P, loss = _soft_gradient(
            graph, w, M, config.lam, zero, config.restarts, config.seed, config.grad_steps, config.grad_lr
        )
    if fallback is not None:
        if fallback.alphabet_size != M:
            raise ValueError("fallback alphabet differs")
        full = fallback.probs.copy()
    else:
        full = np.eye(M)[np.zeros(vectors.n_obs, dtype=int)]
    full[vectors.obs_ids] = P
    return MessageFunction(agent=vectors.agent, probs=full, loss=float(loss))


def align_labels(new: MessageFunction, old: MessageFunction, weights=None) -> MessageFunction:
    """Permute ``new``'s labels to maximize weighted agreement with ``old``."""
    if new.alphabet_size != old.alphabet_size or new.n_obs != old.n_obs:
        raise ValueError("message functions are not comparable")
    w = np.ones(new.n_obs) if weights is None else np.asarray(weights, dtype=float)
    overlap = (new.probs * w[:, None]).T @ old.probs
    rows, cols = linear_sum_assignment(-overlap)
    perm = np.empty(new.alphabet_size, dtype=int)
    perm[rows] = cols
    probs = np.zeros_like(new.probs)
    probs[:, perm] = new.probs
    return MessageFunction(agent=new.agent, probs=probs, loss=new.loss)
