import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from commgap.cluster import MessageFunction, RimConfig
from commgap.envs import DecPomdpSpec, MazeSpec, Transition, as_dec_pomdp
from commgap.gap import expected_return
from commgap.learner import (
    ActionValueTable,
    LearnConfig,
    ReplayBuffer,
    agent_key_dims,
    centralized_policy,
    decentralized_policy,
    fit_agent_messages,
    greedy_action,
    refit_schedule,
    replay_sample,
    state_table_to_obs_keys,
    td_update,
    train_centralized,
    train_comm_conditioned,
    train_independent,
    train_rgmcomm,
    value_iteration,
)

SMALL = LearnConfig(episodes=3000, eval_every=1000, lr_schedule="linear", seed=0)


def det_mdp(seed, S=5, A=3, gamma=0.9):
    rng = np.random.default_rng(seed)
    nxt = rng.integers(0, S, (S, A))
    T = np.zeros((S, A, S))
    T[np.arange(S)[:, None], np.arange(A)[None, :], nxt] = 1.0
    return DecPomdpSpec(
        obs_dims=(S,), action_dims=(A,), observe=(np.eye(S),), transition=T,
        reward=rng.uniform(-1, 1, (S, A)), mu=np.full(S, 1 / S), gamma=gamma,
    ), nxt


def test_table_keys_and_errors():
    t = ActionValueTable((3, 2), 4)
    assert t.key(2, 1) == 5
    with pytest.raises(KeyError):
        t.key(3, 0)
    with pytest.raises(KeyError):
        t.check_key(6)
    with pytest.raises(ValueError):
        ActionValueTable((2,), 1, values=np.array([[np.nan], [0.0]]))


def test_td_update_single_backup():
    t = ActionValueTable((2,), 2)
    t.values[1] = [3.0, 5.0]
    tr = Transition((0,), (1,), 1.0, (1,), False)
    td_update(t, tr, 0.5, 0.9, action_of=lambda a: a[0])
    assert t.values[0, 1] == pytest.approx(0.5 * (1.0 + 0.9 * 5.0))
    done = Transition((0,), (0,), 2.0, (1,), True)
    td_update(t, done, 1.0, 0.9, action_of=lambda a: a[0])
    assert t.values[0, 0] == 2.0
    with pytest.raises(ValueError):
        td_update(t, tr, 0.0, 0.9, action_of=lambda a: a[0])
    with pytest.raises(IndexError):
        td_update(t, tr, 0.5, 0.9, action_of=lambda a: 7)


def test_greedy_ties_go_low():
    t = ActionValueTable((1,), 3, values=np.array([[1.0, 1.0, 0.0]]))
    assert greedy_action(t, 0) == 0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([0.5, 1.0]))
def test_td_fixed_point_matches_value_iteration(seed, lr):
    env, nxt = det_mdp(seed)
    tol = 1e-10
    vi = value_iteration(env, tol=tol)
    t = ActionValueTable((env.n_states,), env.n_joint_actions)
    for _ in range(2000):
        before = t.values.copy()
        for s in range(env.n_states):
            for a in range(env.n_joint_actions):
                tr = Transition((s,), (a,), float(env.reward[s, a]), (int(nxt[s, a]),), False)
                td_update(t, tr, lr, env.gamma, action_of=lambda act: act[0])
        if np.max(np.abs(t.values - before)) < tol * (1 - env.gamma) / 10:
            break
    assert np.max(np.abs(t.values - vi.values)) <= 10 * tol


def test_finite_horizon_backward_induction():
    env = as_dec_pomdp(MazeSpec())
    vi = value_iteration(env)
    assert len(vi.stages) == env.horizon
    np.testing.assert_array_equal(vi.stages[-1], env.reward)
    # the upper-left landmark is reachable in one step from a neighbour pair
    s = 1 * 16 + 4
    assert vi.values[s].max() == pytest.approx(1.0)


def test_replay_buffer_fifo_and_sampling():
    buf = ReplayBuffer(2)
    for k in range(3):
        buf.add(Transition((k,), (0,), 0.0, (k,), True))
    assert [tr.joint_obs[0] for tr in buf] == [1, 2]
    batch = replay_sample(buf, 5, np.random.default_rng(0))
    assert len(batch) == 5
    with pytest.raises(ValueError):
        replay_sample(ReplayBuffer(1), 1, np.random.default_rng(0))
    with pytest.raises(ValueError):
        ReplayBuffer(0)


def test_schedules():
    cfg = LearnConfig(episodes=100, eps_start=1.0, eps_end=0.1, eps_decay_frac=0.5, lr=0.2, lr_schedule="linear")
    assert cfg.epsilon(0) == 1.0 and cfg.epsilon(50) == 0.1 and cfg.epsilon(99) == 0.1
    assert cfg.epsilon(25) == pytest.approx(0.55)
    assert cfg.episode_lr(0) == pytest.approx(0.2)
    assert cfg.episode_lr(99) == pytest.approx(1e-12)
    assert refit_schedule(LearnConfig(episodes=100)) == [20, 30, 40, 50, 60, 70, 80, 90]
    assert refit_schedule(LearnConfig(episodes=100, refit_until_frac=0.5)) == [20, 30, 40]
    with pytest.raises(ValueError):
        LearnConfig(lr=0.0)
    with pytest.raises(ValueError):
        LearnConfig(lr_schedule="cosine")


def test_key_dims_include_message_alphabets():
    env = as_dec_pomdp(MazeSpec())
    mfs = [MessageFunction.constant(16, 3, 0), MessageFunction.constant(16, 4, 1)]
    assert agent_key_dims(env, 0, mfs) == (16, 4)
    assert agent_key_dims(env, 1, mfs) == (16, 3)
    assert agent_key_dims(env, 0, []) == (16, 1)


def test_centralized_learner_approaches_optimum():
    env = as_dec_pomdp(MazeSpec())
    res = train_centralized(env, LearnConfig(episodes=15000, eval_every=5000, lr_schedule="linear", seed=1))
    best = expected_return(env, state_table_to_obs_keys(env, value_iteration(env)).values.argmax(axis=1))
    assert res.final_return >= 0.9 * best
    assert expected_return(env, centralized_policy(res.table)) == pytest.approx(res.final_return)


def test_training_is_seed_deterministic():
    env = as_dec_pomdp(MazeSpec())
    a = train_independent(env, SMALL)
    b = train_independent(env, SMALL)
    assert a.curve == b.curve
    assert all(np.array_equal(x.values, y.values) for x, y in zip(a.tables, b.tables))


def test_full_messages_beat_no_messages():
    env = as_dec_pomdp(MazeSpec())
    cfg = LearnConfig(episodes=15000, eval_every=15000, lr_schedule="linear", seed=0)
    ident = [MessageFunction.identity(16, 0), MessageFunction.identity(16, 1)]
    full = train_comm_conditioned(env, ident, cfg)
    none = train_independent(env, cfg)
    assert full.final_return > none.final_return
    pol = decentralized_policy(env, full.tables, full.message_fns)
    assert expected_return(env, pol) == pytest.approx(full.final_return)


def test_rejects_mismatched_message_functions():
    env = as_dec_pomdp(MazeSpec())
    with pytest.raises(ValueError):
        train_comm_conditioned(env, [MessageFunction.constant(5, 2, 0)], SMALL)


def test_rgmcomm_refits_and_records():
    env = as_dec_pomdp(MazeSpec())
    res = train_rgmcomm(env, RimConfig(seed=0), SMALL, alphabet_size=4, keep_margin=0.05)
    assert res.refits == refit_schedule(SMALL)
    assert all(mf.alphabet_size == 4 for mf in res.message_fns)
    assert res.critic is not None and res.critic.key_dims == (16, 16)
    assert res.emission_counts[0].shape == (16, 4)
    assert res.emission_counts[0].sum() > 0


def test_fit_agent_messages_keeps_previous_within_margin():
    env = as_dec_pomdp(MazeSpec())
    critic = state_table_to_obs_keys(env, value_iteration(env))
    d = np.full(256, 1 / 256)
    first = fit_agent_messages(critic, env, 0, 4, RimConfig(), visitation=d)
    again = fit_agent_messages(critic, env, 0, 4, RimConfig(seed=5), visitation=d, previous=first, keep_margin=0.0)
    assert again is first
