"""Finite Dec-POMDP environments with exact tabular dynamics.

Three families live here: general `DecPomdpSpec` tables, two-agent one-step
matrix games (`MatrixGameSpec`, including the illustrative 2x4 game), and the
4x4 two-landmark maze.  Everything is immutable after construction; rollouts
carry their own RNG and state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Sequence

import numpy as np

PROB_TOL = 1e-12


class SpecError(ValueError):
    """Raised when an environment or game description is malformed."""


@dataclass(frozen=True, slots=True)
class Transition:
    joint_obs: tuple[int, ...]
    joint_action: tuple[int, ...]
    reward: float
    next_joint_obs: tuple[int, ...]
    done: bool


def _check_rows(name: str, rows: np.ndarray, tol: float = PROB_TOL) -> None:
    if np.any(rows < 0):
        raise SpecError(f"{name} has negative entries")
    sums = rows.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > tol):
        raise SpecError(f"{name} rows must sum to 1 (worst {np.max(np.abs(sums - 1.0)):.3g})")


@dataclass(frozen=True, eq=False)
class DecPomdpSpec:
    """Finite Dec-POMDP <S, A, P, Omega, O, I, n, R, gamma, mu>.

    ``observe[i]`` is an ``(S, |Omega_i|)`` row-stochastic matrix;
    ``transition`` is ``(S, |A|, S)`` over joint-action indices (row-major
    over ``action_dims``); entering a state flagged in ``terminal`` ends the
    episode, as does reaching ``horizon`` steps (0 means unbounded).
    """

    obs_dims: tuple[int, ...]
    action_dims: tuple[int, ...]
    observe: tuple[np.ndarray, ...]
    transition: np.ndarray
    reward: np.ndarray
    mu: np.ndarray
    gamma: float = 0.95
    horizon: int = 0
    terminal: np.ndarray | None = None
    name: str = "dec-pomdp"

    def __post_init__(self):
        n = len(self.obs_dims)
        if n < 1 or len(self.action_dims) != n or len(self.observe) != n:
            raise SpecError("obs_dims, action_dims and observe must agree on n_agents")
        S, JA = self.n_states, self.n_joint_actions
        if self.transition.shape != (S, JA, S):
            raise SpecError(f"transition shape {self.transition.shape} != {(S, JA, S)}")
        if self.reward.shape != (S, JA):
            raise SpecError(f"reward shape {self.reward.shape} != {(S, JA)}")
        if not np.all(np.isfinite(self.reward)):
            raise SpecError("reward must be finite")
        for i, (O, k) in enumerate(zip(self.observe, self.obs_dims)):
            if O.shape != (S, k):
                raise SpecError(f"observe[{i}] shape {O.shape} != {(S, k)}")
            _check_rows(f"observe[{i}]", O)
        _check_rows("transition", self.transition)
        _check_rows("mu", self.mu)
        if not 0.0 < self.gamma <= 1.0:
            raise SpecError("gamma must lie in (0, 1]")
        if self.horizon < 0:
            raise SpecError("horizon must be >= 0")
        if self.terminal is None:
            object.__setattr__(self, "terminal", np.zeros(S, dtype=bool))
        elif self.terminal.shape != (S,):
            raise SpecError("terminal mask must have one flag per state")

    @property
    def n_agents(self) -> int:
        return len(self.obs_dims)

    @property
    def n_states(self) -> int:
        return self.mu.shape[0]

    @property
    def n_joint_actions(self) -> int:
        return int(np.prod(self.action_dims))

    @property
    def n_joint_obs(self) -> int:
        return int(np.prod(self.obs_dims))

    def joint_action_index(self, actions: Sequence[int]) -> int:
        for a, k in zip(actions, self.action_dims):
            if not 0 <= a < k:
                raise IndexError(f"action {a} out of range for {k} actions")
        return int(np.ravel_multi_index(tuple(actions), self.action_dims))

    def joint_action_tuple(self, index: int) -> tuple[int, ...]:
        return tuple(int(x) for x in np.unravel_index(index, self.action_dims))

    def joint_obs_index(self, obs: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(obs), self.obs_dims))

    def joint_obs_tuple(self, index: int) -> tuple[int, ...]:
        return tuple(int(x) for x in np.unravel_index(index, self.obs_dims))

    @cached_property
    def joint_obs_matrix(self) -> np.ndarray:
        """(S, prod obs_dims) probability of each joint observation per state."""
        out = self.observe[0]
        for O in self.observe[1:]:
            out = (out[:, :, None] * O[:, None, :]).reshape(self.n_states, -1)
        return out

    @cached_property
    def obs_index(self) -> np.ndarray | None:
        """(S, n) deterministic observation per agent, or None if any is stochastic."""
        if not all(np.all((O == 0) | (O == 1)) for O in self.observe):
            return None
        return np.stack([O.argmax(axis=1) for O in self.observe], axis=1)

    @cached_property
    def det_next(self) -> np.ndarray | None:
        """(S, |A|) next state when every transition row is one-hot, else None."""
        T = self.transition
        if not np.all((T == 0) | (T == 1)):
            return None
        return T.argmax(axis=2)

    @cached_property
    def _transition_cdf(self) -> np.ndarray:
        return np.cumsum(self.transition, axis=2)

    @cached_property
    def _mu_cdf(self) -> np.ndarray:
        return np.cumsum(self.mu)

    def sample_obs(self, state: int, rng: np.random.Generator) -> tuple[int, ...]:
        idx = self.obs_index
        if idx is not None:
            return tuple(int(x) for x in idx[state])
        out = []
        for O in self.observe:
            out.append(_draw(np.cumsum(O[state]), rng))
        return tuple(out)

    def sample_next(self, state: int, joint_action: int, rng: np.random.Generator) -> int:
        det = self.det_next
        if det is not None:
            return int(det[state, joint_action])
        return _draw(self._transition_cdf[state, joint_action], rng)


def _draw(cdf: np.ndarray, rng: np.random.Generator) -> int:
    i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(i, len(cdf) - 1)


def reset(env: DecPomdpSpec, rng: np.random.Generator) -> tuple[int, tuple[int, ...]]:
    """Draw a start state from mu and observe it."""
    state = _draw(env._mu_cdf, rng)
    return state, env.sample_obs(state, rng)


def step(
    env: DecPomdpSpec,
    state: int,
    joint_action: Sequence[int],
    rng: np.random.Generator,
    t: int = 0,
    joint_obs: Sequence[int] | None = None,
) -> tuple[Transition, int]:
    """Advance one step; ``t`` is the zero-based index of the step being taken.

    ``joint_obs`` is what the agents saw in ``state`` (as returned by
    ``reset`` or the previous step); it is re-drawn when omitted.
    """
    ja = env.joint_action_index(joint_action)
    nxt = env.sample_next(state, ja, rng)
    done = bool(env.terminal[nxt]) or (env.horizon > 0 and t + 1 >= env.horizon)
    tr = Transition(
        joint_obs=tuple(int(x) for x in joint_obs) if joint_obs is not None else env.sample_obs(state, rng),
        joint_action=tuple(int(a) for a in joint_action),
        reward=float(env.reward[state, ja]),
        next_joint_obs=env.sample_obs(nxt, rng),
        done=done,
    )
    return tr, nxt


# ---------------------------------------------------------------------------
# Two-agent one-step matrix games
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MatrixGameSpec:
    """One-step two-agent game: payoff ``q_table[o1, o2, a1, a2]``."""

    q_table: np.ndarray
    obs_dist: np.ndarray
    gamma: float = 0.95
    name: str = "matrix"

    def __post_init__(self):
        q = np.asarray(self.q_table, dtype=float)
        d = np.asarray(self.obs_dist, dtype=float)
        object.__setattr__(self, "q_table", q)
        object.__setattr__(self, "obs_dist", d)
        if q.ndim != 4 or min(q.shape) < 1:
            raise SpecError(f"payoff must be a non-empty 4-d array, got shape {q.shape}")
        if d.shape != q.shape[:2]:
            raise SpecError(f"obs_dist shape {d.shape} does not match payoff {q.shape[:2]}")
        if not np.all(np.isfinite(q)):
            raise SpecError("payoff must be finite")
        if np.any(d < 0) or abs(d.sum() - 1.0) > 1e-9:
            raise SpecError(f"obs_dist must be a distribution (sums to {d.sum():.12g})")
        if not 0.0 < self.gamma <= 1.0:
            raise SpecError("gamma must lie in (0, 1]")

    @property
    def obs_dims(self) -> tuple[int, int]:
        return self.q_table.shape[0], self.q_table.shape[1]

    @property
    def action_dims(self) -> tuple[int, int]:
        return self.q_table.shape[2], self.q_table.shape[3]

    def to_dec_pomdp(self) -> DecPomdpSpec:
        """Lower to a horizon-1 Dec-POMDP whose states are the joint observations."""
        O1, O2, A1, A2 = self.q_table.shape
        S, JA = O1 * O2, A1 * A2
        o1, o2 = np.unravel_index(np.arange(S), (O1, O2))
        observe = (np.eye(O1)[o1], np.eye(O2)[o2])
        transition = np.broadcast_to(np.eye(S)[:, None, :], (S, JA, S)).copy()
        return DecPomdpSpec(
            obs_dims=(O1, O2),
            action_dims=(A1, A2),
            observe=observe,
            transition=transition,
            reward=self.q_table.reshape(S, JA).copy(),
            mu=self.obs_dist.reshape(S).copy(),
            gamma=self.gamma,
            horizon=1,
            name=self.name,
        )

    @cached_property
    def dec_pomdp(self) -> DecPomdpSpec:
        return self.to_dec_pomdp()


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _nested(a: np.ndarray) -> str:
    if a.ndim == 1:
        return "[" + ", ".join(_fmt(x) for x in a) + "]"
    return "[" + ", ".join(_nested(x) for x in a) + "]"


def dump_matrix_game(game: MatrixGameSpec) -> str:
    """Serialize to the JSON game-file format (17 significant digits)."""
    parts = [
        '"n_agents": 2',
        f'"obs_dims": {list(game.obs_dims)}',
        f'"action_dims": {list(game.action_dims)}',
        f'"payoff": {_nested(game.q_table)}',
        f'"obs_dist": {_nested(game.obs_dist)}',
        f'"gamma": {_fmt(game.gamma)}',
    ]
    if game.name != "matrix":
        parts.insert(0, f'"name": {json.dumps(game.name)}')
    return "{\n  " + ",\n  ".join(parts) + "\n}\n"


def matrix_game_from_dict(doc: dict) -> MatrixGameSpec:
    try:
        n = doc.get("n_agents", 2)
        obs_dims = tuple(int(x) for x in doc["obs_dims"])
        action_dims = tuple(int(x) for x in doc["action_dims"])
        payoff = np.asarray(doc["payoff"], dtype=float)
        obs_dist = np.asarray(doc["obs_dist"], dtype=float)
    except KeyError as exc:
        raise SpecError(f"missing key {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise SpecError(f"malformed array: {exc}") from None
    if n != 2 or len(obs_dims) != 2 or len(action_dims) != 2:
        raise SpecError("matrix games are two-agent")
    if payoff.shape != obs_dims + action_dims:
        raise SpecError(f"payoff shape {payoff.shape} != {obs_dims + action_dims}")
    return MatrixGameSpec(
        q_table=payoff,
        obs_dist=obs_dist,
        gamma=float(doc.get("gamma", 0.95)),
        name=str(doc.get("name", "matrix")),
    )


def load_matrix_game(text: str) -> MatrixGameSpec:
    """Parse a JSON game document into a validated game."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"not valid JSON: {exc}") from None
    return matrix_game_from_dict(doc)


def gen_random_game(
    sizes: tuple[int, int, int, int],
    payoff_range: tuple[float, float] = (0.0, 100.0),
    seed: int | np.random.SeedSequence = 0,
) -> MatrixGameSpec:
    """I.i.d. uniform payoffs over ``sizes = (|O1|, |O2|, |A1|, |A2|)``, uniform obs."""
    if len(sizes) != 4 or min(sizes) < 1:
        raise SpecError("sizes must be four positive integers")
    lo, hi = payoff_range
    if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
        raise SpecError("payoff_range must be finite with lo <= hi")
    rng = np.random.default_rng(seed)
    q = rng.uniform(lo, hi, size=tuple(sizes))
    O1, O2 = sizes[:2]
    return MatrixGameSpec(q_table=q, obs_dist=np.full((O1, O2), 1.0 / (O1 * O2)), name="random")


# Payoffs of the illustrative two-agent game, indexed [o1][a1][o2] (agent 2 has a
# single action).  12.0, 36.0 and 10.0 in the o12 rows are reconstructed so that
# the partial-observation value 35.6 and the pairwise cosine distances
# 0.03 / 0.02 come out as stated.
_FIG1 = np.array(
    [
        [[53.2, 4.5, 58.5, 0.3], [42.9, 1.2, 64.0, 16.1]],
        [[31.8, 12.0, 34.1, 36.0], [22.9, 28.0, 10.0, 81.5]],
    ]
)


def fig1_game() -> MatrixGameSpec:
    q = _FIG1.transpose(0, 2, 1)[..., None]  # -> [o1, o2, a1, a2]
    return MatrixGameSpec(q_table=q, obs_dist=np.full((2, 4), 1.0 / 8), name="fig1-matrix")


# ---------------------------------------------------------------------------
# Grid maze
# ---------------------------------------------------------------------------

MAZE_ACTIONS = ("up", "down", "left", "right", "stay")
_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1), (0, 0))


@dataclass(frozen=True)
class MazeSpec:
    """Two agents on a square grid; reward when both share a landmark.

    Landmarks are given as 0-indexed (row, col); the defaults are the
    upper-left cell and the third diagonal cell.
    """

    size: int = 4
    landmark_high: tuple[int, int] = (0, 0)
    landmark_low: tuple[int, int] = (2, 2)
    r1: float = 1.0
    r2: float = 0.5
    horizon: int = 3
    gamma: float = 0.95
    name: str = field(default="maze-4x4")

    def cell(self, row: int, col: int) -> int:
        return row * self.size + col

    def move(self, cell: int, action: int) -> int:
        r, c = divmod(cell, self.size)
        dr, dc = _MOVES[action]
        r = min(max(r + dr, 0), self.size - 1)
        c = min(max(c + dc, 0), self.size - 1)
        return self.cell(r, c)

    def to_dec_pomdp(self) -> DecPomdpSpec:
        n = self.size * self.size
        S, nA = n * n, len(_MOVES)
        JA = nA * nA
        hi, lo = self.cell(*self.landmark_high), self.cell(*self.landmark_low)
        transition = np.zeros((S, JA, S))
        reward = np.zeros((S, JA))
        terminal = np.zeros(S, dtype=bool)
        terminal[hi * n + hi] = terminal[lo * n + lo] = True
        for s in range(S):
            p1, p2 = divmod(s, n)
            for a1 in range(nA):
                q1 = self.move(p1, a1)
                for a2 in range(nA):
                    q2 = self.move(p2, a2)
                    ja, nxt = a1 * nA + a2, q1 * n + q2
                    transition[s, ja, nxt] = 1.0
                    if q1 == q2 == hi:
                        reward[s, ja] = self.r1
                    elif q1 == q2 == lo:
                        reward[s, ja] = self.r2
        cells = np.arange(S)
        observe = (np.eye(n)[cells // n], np.eye(n)[cells % n])
        return DecPomdpSpec(
            obs_dims=(n, n),
            action_dims=(nA, nA),
            observe=observe,
            transition=transition,
            reward=reward,
            mu=np.full(S, 1.0 / S),
            gamma=self.gamma,
            horizon=self.horizon,
            terminal=terminal,
            name=self.name,
        )


BUILTINS = ("fig1-matrix", "maze-4x4")


def builtin(env_id: str) -> MatrixGameSpec | MazeSpec:
    if env_id == "fig1-matrix":
        return fig1_game()
    if env_id == "maze-4x4":
        return MazeSpec()
    raise KeyError(f"unknown builtin environment {env_id!r}; choose from {BUILTINS}")


@lru_cache(maxsize=8)
def _lowered_maze(maze: MazeSpec) -> DecPomdpSpec:
    return maze.to_dec_pomdp()


def as_dec_pomdp(env) -> DecPomdpSpec:
    if isinstance(env, DecPomdpSpec):
        return env
    if isinstance(env, MatrixGameSpec):
        return env.dec_pomdp
    if isinstance(env, MazeSpec):
        return _lowered_maze(env)
    return env.to_dec_pomdp()
