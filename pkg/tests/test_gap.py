import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from commgap.cluster import MessageFunction, RimConfig
from commgap.envs import DecPomdpSpec, MatrixGameSpec, MazeSpec, as_dec_pomdp, gen_random_game
from commgap.gap import (
    UnsupportedEnvError,
    agent_qvectors,
    brute_force_comm_policy,
    center_policy_value,
    cluster_geometry,
    expected_return,
    expected_return_mc,
    gap_for_messages,
    gap_report,
    label_monotonicity_check,
    optimal_eps_messages,
    optimal_policy,
    partial_action_values,
    receiver_values,
    set_partitions,
    visitation,
)
from commgap.learner import state_table_to_obs_keys, value_iteration

# Values re-summed by hand from the illustrative payoff table.
FIG1_SUMS = {
    "j_full": 39.15,
    "j_comm": 38.05,
    "j_nocomm": 33.325,
    "gap_2": 1.1,
    "gap_1": 5.825,
    "o11_full": 34.45,
    "o12_full": 43.85,
    "o11_comm": 32.25,
}
QUOTED_PARTITION = MessageFunction.from_labels([0, 1, 0, 1], 2, agent=1)
# cosine-to-center average for the partition above, frozen from a previous run
PARTITION_EPS = 0.006711610221005193

# A 4x2x2x1 game where the gap exceeds the constant-1 bound for the constant message.
COUNTEREXAMPLE = np.array(
    [[[88, 40], [47, 91]], [[25, 82], [74, 34]], [[75, 19], [22, 78]], [[18, 100], [100, 16]]], dtype=float
)[..., None]


def random_dec_pomdp(seed, S=4, obs=(2, 3), acts=(2, 2), horizon=0, gamma=0.9):
    rng = np.random.default_rng(seed)
    JA = int(np.prod(acts))
    return DecPomdpSpec(
        obs_dims=obs,
        action_dims=acts,
        observe=tuple(rng.dirichlet(np.ones(k), size=S) for k in obs),
        transition=rng.dirichlet(np.ones(S), size=(S, JA)),
        reward=rng.uniform(0, 1, (S, JA)),
        mu=rng.dirichlet(np.ones(S)),
        gamma=gamma,
        horizon=horizon,
    )


def test_fig1_values_against_hand_sums(fig1):
    rep2 = gap_for_messages(fig1, [None, QUOTED_PARTITION])
    rep1 = gap_for_messages(fig1, [None, None])
    assert rep2.j_full == pytest.approx(FIG1_SUMS["j_full"], abs=1e-9)
    assert rep2.j_comm == pytest.approx(FIG1_SUMS["j_comm"], abs=1e-9)
    assert rep2.j_nocomm == pytest.approx(FIG1_SUMS["j_nocomm"], abs=1e-9)
    assert rep2.gap == pytest.approx(FIG1_SUMS["gap_2"], abs=1e-9)
    assert rep1.gap == pytest.approx(FIG1_SUMS["gap_1"], abs=1e-9)
    full = receiver_values(fig1, MessageFunction.identity(4, 1))
    comm = receiver_values(fig1, QUOTED_PARTITION)
    none = receiver_values(fig1, None)
    np.testing.assert_allclose(full, [FIG1_SUMS["o11_full"], FIG1_SUMS["o12_full"]], atol=1e-9)
    np.testing.assert_allclose(comm, [FIG1_SUMS["o11_comm"], 43.85], atol=1e-9)
    np.testing.assert_allclose(none, [31.05, 35.6], atol=1e-9)
    np.testing.assert_allclose(partial_action_values(fig1)[0], [29.125, 31.05], atol=1e-9)


def test_fig1_pipeline_recovers_partition(fig1):
    rep = gap_report(fig1, 2)
    labels = rep.message_fns[1].labels
    assert labels[0] == labels[2] != labels[1] == labels[3]
    assert rep.holds
    assert rep.center_value == pytest.approx(rep.j_comm, abs=1e-9)


def test_frozen_partition_eps(fig1):
    geo = cluster_geometry(agent_qvectors(fig1, 1), QUOTED_PARTITION)
    assert geo.eps == pytest.approx(PARTITION_EPS, abs=1e-12)


def test_center_policy_matches_brute_force(fig1):
    for labels in set_partitions(4, 4):
        mf = MessageFunction.from_labels(labels, 4, 1)
        assert center_policy_value(fig1, mf) == pytest.approx(brute_force_comm_policy(fig1, mf).value, abs=1e-9)


def _enumerate_comm_value(game, l1, l2, M1, M2):
    """Independent route: enumerate both agents' full tables."""
    Q, d = game.q_table, game.obs_dist
    O1, O2, A1, A2 = Q.shape
    best = -np.inf
    for t1 in itertools.product(range(A1), repeat=O1 * M2):
        t1 = np.array(t1).reshape(O1, M2)
        for t2 in itertools.product(range(A2), repeat=O2 * M1):
            t2 = np.array(t2).reshape(O2, M1)
            v = sum(
                d[x, y] * Q[x, y, t1[x, l2[y]], t2[y, l1[x]]] for x in range(O1) for y in range(O2)
            )
            best = max(best, v)
    return best


@pytest.mark.parametrize("seed", range(8))
def test_brute_force_against_full_enumeration(seed):
    rng = np.random.default_rng(seed)
    sizes = (int(rng.integers(1, 4)), int(rng.integers(1, 4)), 2, int(rng.integers(1, 3)))
    game = gen_random_game(sizes, seed=seed)
    l1 = rng.integers(0, 2, sizes[0])
    l2 = rng.integers(0, 2, sizes[1])
    mf1, mf2 = MessageFunction.from_labels(l1, 2, 0), MessageFunction.from_labels(l2, 2, 1)
    got = brute_force_comm_policy(game, mf2, mf1)
    assert got.value == pytest.approx(_enumerate_comm_value(game, l1, l2, 2, 2), abs=1e-9)
    assert expected_return(game, got.joint) == pytest.approx(got.value, abs=1e-9)


def test_identity_messages_close_the_gap():
    game = gen_random_game((3, 3, 2, 2), seed=11)
    rep = gap_for_messages(game, [MessageFunction.identity(3, 0), MessageFunction.identity(3, 1)])
    assert rep.gap == pytest.approx(0.0, abs=1e-9)


def test_constant_one_bound_counterexample():
    game = MatrixGameSpec(COUNTEREXAMPLE, np.full((4, 2), 1 / 8))
    rep = gap_for_messages(game, [None, None])
    assert rep.gap == pytest.approx(27.75)
    assert rep.ratio == pytest.approx(1.2555507415619152, rel=1e-9)
    assert not rep.holds
    assert rep.gap <= rep.bound_safe


@settings(max_examples=150, deadline=None)
@given(
    st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3), st.integers(1, 2)),
    st.integers(0, 10**6),
)
def test_safe_bound_holds_for_any_messages(sizes, seed):
    game = gen_random_game(sizes, seed=seed)
    rng = np.random.default_rng(seed)
    M = int(rng.integers(1, 4))
    fns = [MessageFunction.from_labels(rng.integers(0, M, sizes[0]), M, 0), MessageFunction.from_labels(rng.integers(0, M, sizes[1]), M, 1)]
    rep = gap_for_messages(game, fns)
    assert rep.gap >= -1e-9
    assert rep.gap <= rep.bound_safe + 1e-9


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 6), st.integers(1, 4), st.integers(0, 10**6))
def test_eps_label_permutation_symmetry(n, M, seed):
    rng = np.random.default_rng(seed)
    game = gen_random_game((3, n, 2, 1), seed=seed)
    vs = agent_qvectors(game, 1)
    labels = rng.integers(0, M, n)
    perm = rng.permutation(M)
    a = cluster_geometry(vs, MessageFunction.from_labels(labels, M, 1)).eps
    b = cluster_geometry(vs, MessageFunction.from_labels(perm[labels], M, 1)).eps
    assert a == pytest.approx(b, abs=1e-12)
    assert 0.0 <= a <= 2.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 3), st.sampled_from([0.5, 0.9]))
def test_visitation_is_a_distribution(seed, horizon, gamma):
    env = random_dec_pomdp(seed, horizon=horizon, gamma=gamma)
    rng = np.random.default_rng(seed)
    pi = rng.dirichlet(np.ones(env.n_joint_actions), size=env.n_joint_obs)
    d = visitation(env, pi)
    assert d.joint_obs.sum() == pytest.approx(1.0, abs=1e-10)
    assert np.all(d.joint_obs >= 0)
    for j in range(env.n_agents):
        assert d.marginal(j).sum() == pytest.approx(1.0, abs=1e-10)
    mf = MessageFunction.from_labels(rng.integers(0, 2, env.obs_dims[1]), 2, 1)
    rows = d.within_cluster(1, mf)
    live = rows.sum(axis=1) > 0
    np.testing.assert_allclose(rows[live].sum(axis=1), 1.0, atol=1e-10)


def test_stationary_visitation_solves_flow_equation():
    env = random_dec_pomdp(3, obs=(4,), acts=(2,), gamma=0.8)
    env = DecPomdpSpec(
        obs_dims=(4,), action_dims=(2,), observe=(np.eye(4),), transition=env.transition,
        reward=env.reward, mu=env.mu, gamma=0.8,
    )
    pi = np.zeros(4, dtype=int)
    d = visitation(env, pi).states
    P = env.transition[:, 0, :]
    np.testing.assert_allclose(d, (1 - 0.8) * env.mu + 0.8 * d @ P, atol=1e-10)


def test_return_matches_monte_carlo_on_maze():
    env = as_dec_pomdp(MazeSpec())
    vi = state_table_to_obs_keys(env, value_iteration(env))
    pi = vi.values.argmax(axis=1)
    exact = expected_return(env, pi)
    mean, se = expected_return_mc(env, pi, episodes=4000, seed=0)
    assert abs(mean - exact) <= 4 * se + 1e-12
    assert 0.55 < exact < 0.7


def test_return_matches_monte_carlo_on_discounted_chain():
    env = random_dec_pomdp(9, gamma=0.7)
    pi = np.random.default_rng(0).integers(0, env.n_joint_actions, env.n_joint_obs)
    exact = expected_return(env, pi)
    mean, se = expected_return_mc(env, pi, episodes=4000, seed=1, max_steps=60)
    assert abs(mean - exact) <= 4 * se + 1e-3


def test_policy_shape_errors():
    game = gen_random_game((2, 2, 2, 1), seed=0)
    with pytest.raises(KeyError):
        expected_return(game, np.zeros(3, dtype=int))
    with pytest.raises(KeyError):
        expected_return(game, np.full(4, 5))


def test_exact_search_refuses_sequential_envs():
    with pytest.raises(UnsupportedEnvError):
        brute_force_comm_policy(MazeSpec(), None)


def test_optimal_policy_attains_full_value(fig1):
    assert expected_return(fig1, optimal_policy(fig1)) == pytest.approx(FIG1_SUMS["j_full"], abs=1e-9)


def test_set_partition_counts():
    assert sum(1 for _ in set_partitions(4, 4)) == 15  # Bell(4)
    assert sum(1 for _ in set_partitions(4, 2)) == 8  # S(4,1) + S(4,2)
    assert sum(1 for _ in set_partitions(5, 1)) == 1


def test_fig1_monotonicity(fig1):
    rows = label_monotonicity_check(fig1)
    eps = [r.eps for r in rows]
    assert all(b <= a + 1e-9 for a, b in zip(eps, eps[1:]))
    assert rows[-1].gap == pytest.approx(0.0, abs=1e-9)
    assert rows[0].gap == pytest.approx(FIG1_SUMS["gap_1"], abs=1e-9)


def test_optimal_eps_prefers_more_clusters_on_ties():
    vs = agent_qvectors(gen_random_game((1, 3, 2, 1), seed=0), 1)
    mf, e = optimal_eps_messages(vs, 3)
    assert e == pytest.approx(0.0, abs=1e-12)
    assert len(set(mf.labels.tolist())) == 3


def test_report_row_and_summary(fig1):
    rep = gap_report(fig1, 2, RimConfig(), env_id="fig1-matrix")
    row = rep.csv_row()
    assert row[0] == "fig1-matrix" and row[1] == 2 and row[-1] is True
    assert "fig1-matrix" in rep.summary()
