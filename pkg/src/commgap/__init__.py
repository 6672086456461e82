"""Return-gap analysis for communication by clustered action-value vectors."""

from .cluster import MessageFunction, QVectorSet, RimConfig, align_labels, build_qvectors, fit_messages, rim_loss
from .envs import DecPomdpSpec, MatrixGameSpec, MazeSpec, builtin, fig1_game, gen_random_game, load_matrix_game
from .gap import GapReport, brute_force_comm_policy, expected_return, gap_report, visitation
from .learner import ActionValueTable, LearnConfig, train_centralized, train_comm_conditioned, train_rgmcomm, value_iteration

__all__ = [
    "ActionValueTable",
    "DecPomdpSpec",
    "GapReport",
    "LearnConfig",
    "MatrixGameSpec",
    "MazeSpec",
    "MessageFunction",
    "QVectorSet",
    "RimConfig",
    "align_labels",
    "brute_force_comm_policy",
    "build_qvectors",
    "builtin",
    "expected_return",
    "fig1_game",
    "fit_messages",
    "gap_report",
    "gen_random_game",
    "load_matrix_game",
    "rim_loss",
    "train_centralized",
    "train_comm_conditioned",
    "train_rgmcomm",
    "value_iteration",
    "visitation",
]
