import json

import numpy as np
import pytest

from commgap.envs import (
    MazeSpec,
    SpecError,
    as_dec_pomdp,
    builtin,
    dump_matrix_game,
    gen_random_game,
    load_matrix_game,
    reset,
    step,
)


def test_fig1_layout(fig1):
    assert fig1.q_table.shape == (2, 4, 2, 1)
    # agent-2 column of the first observation of agent 1, first action
    np.testing.assert_allclose(fig1.q_table[0, :, 0, 0], [53.2, 4.5, 58.5, 0.3])
    np.testing.assert_allclose(fig1.q_table[0, :, 1, 0], [42.9, 1.2, 64.0, 16.1])
    assert fig1.obs_dist.sum() == pytest.approx(1.0)


def test_matrix_lowering_is_one_step(fig1):
    env = as_dec_pomdp(fig1)
    assert env.horizon == 1 and env.n_states == 8 and env.n_joint_actions == 2
    rng = np.random.default_rng(0)
    s, obs = reset(env, rng)
    tr, _ = step(env, s, (1, 0), rng, 0, joint_obs=obs)
    assert tr.done
    assert tr.reward == fig1.q_table[obs[0], obs[1], 1, 0]


def test_game_json_roundtrip_is_exact():
    game = gen_random_game((3, 2, 4, 2), seed=7)
    back = load_matrix_game(dump_matrix_game(game))
    assert np.array_equal(back.q_table, game.q_table)
    assert np.array_equal(back.obs_dist, game.obs_dist)
    assert dump_matrix_game(back) == dump_matrix_game(game)


@pytest.mark.parametrize(
    "doc",
    [
        {"obs_dims": [2, 2], "action_dims": [1, 1], "payoff": [[[[1]], [[2]]]], "obs_dist": [[0.25, 0.25], [0.25, 0.25]]},
        {"obs_dims": [1, 1], "action_dims": [1, 1], "payoff": [[[[1]]]], "obs_dist": [[0.5]]},
        {"obs_dims": [1, 1], "action_dims": [1, 1], "payoff": [[[[1]]]]},
    ],
)
def test_malformed_games_are_rejected(doc):
    with pytest.raises(SpecError):
        load_matrix_game(json.dumps(doc))


def test_random_game_is_seeded():
    a = gen_random_game((2, 3, 2, 1), seed=5)
    b = gen_random_game((2, 3, 2, 1), seed=5)
    c = gen_random_game((2, 3, 2, 1), seed=6)
    assert np.array_equal(a.q_table, b.q_table)
    assert not np.array_equal(a.q_table, c.q_table)


def test_maze_dynamics():
    maze = MazeSpec()
    env = as_dec_pomdp(maze)
    assert env.n_states == 256 and env.n_joint_actions == 25
    assert env.obs_dims == (16, 16)
    # both agents one step right of the upper-left landmark, both move left
    s = maze.cell(0, 1) * 16 + maze.cell(0, 1)
    ja = 2 * 5 + 2
    nxt = int(np.argmax(env.transition[s, ja]))
    assert nxt == 0 and env.terminal[nxt]
    assert env.reward[s, ja] == maze.r1
    # the lower landmark pays less
    lo = maze.cell(2, 2)
    s = maze.cell(2, 1) * 16 + maze.cell(1, 2)
    assert env.reward[s, 3 * 5 + 1] == maze.r2
    # walls clip moves
    assert maze.move(maze.cell(0, 0), 0) == maze.cell(0, 0)
    assert env.terminal.sum() == 2 and env.terminal[lo * 16 + lo]


def test_maze_observations_are_own_positions():
    env = as_dec_pomdp(MazeSpec())
    s = 5 * 16 + 9
    assert env.observe[0][s].argmax() == 5
    assert env.observe[1][s].argmax() == 9


def test_builtin_lookup():
    assert builtin("fig1-matrix").obs_dims == (2, 4)
    with pytest.raises(KeyError):
        builtin("nope")
