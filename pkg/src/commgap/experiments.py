"""Scenario drivers: goldens, bound sweeps, maze ablations and plot data.

Every driver writes CSV files that start with a ``# schema:`` line and are a
pure function of the configuration, so repeated runs are byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .cluster import MessageFunction, RimConfig
from .envs import MazeSpec, as_dec_pomdp, builtin, gen_random_game, load_matrix_game
from .gap import (
    GapReport,
    brute_force_comm_policy,
    gap_for_messages,
    gap_report,
    label_monotonicity_check,
    partial_action_values,
    receiver_values,
)
from .learner import LearnConfig, TrainResult, train_centralized, train_independent, train_rgmcomm

log = logging.getLogger(__name__)

GAP_COLUMNS = ["env_id", "n_labels", "j_full", "j_comm", "j_nocomm", "gap", "eps", "q_max", "bound", "holds"]
CURVE_COLUMNS = ["episode", "mean_episode_reward", "policy_kind", "seed"]

# Values quoted for the illustrative 2x4 game.
FIG1_GOLDENS = {
    "j_full": 39.1375,
    "j_comm": 38.775,
    "j_nocomm": 33.325,
    "gap_2_labels": 0.3625,
    "gap_1_label": 5.8125,
    "o11_a11_avg": 29.125,
    "o11_a12_avg": 31.05,
    "o11_full": 34.425,
    "o12_full": 43.85,
    "o11_comm": 33.7,
    "o12_nocomm": 35.6,
}
GOLDEN_TOL = 1e-9


def _cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return str(int(x))
    return str(x)


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """CSV with a leading ``# schema:`` line and ``\\n`` line endings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    buf.write("# schema: " + ",".join(columns) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(x) for x in row])
    path.write_text(buf.getvalue())
    return path


def read_csv(path: Path) -> list[dict[str, str]]:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    scenario: str = "maze"
    env: str = "maze-4x4"
    alphabet_size: int = 4
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    out_dir: str = "runs"
    activations: list[str] = field(default_factory=lambda: ["tanh", "softmax", "none"])
    rim: RimConfig = field(default_factory=RimConfig)
    # linear lr decay keeps late greedy returns from oscillating under moving messages
    learn: LearnConfig = field(
        default_factory=lambda: LearnConfig(
            episodes=40_000, eval_every=2_000, lr_schedule="linear", lr_min=0.0, eps_decay_frac=0.7
        )
    )
    vector_mode: str = "sampled"
    keep_margin: float | None = 0.05
    maze: dict = field(default_factory=dict)
    workers: int = 1

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if self.alphabet_size < 1:
            raise ValueError("alphabet_size must be >= 1")

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        doc = dict(doc)
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "rim" in doc:
            doc["rim"] = RimConfig(**doc["rim"])
        if "learn" in doc:
            base = asdict(cls().learn)
            base.update(doc["learn"])
            doc["learn"] = LearnConfig(**base)
        if "seeds" in doc:
            doc["seeds"] = [int(s) for s in doc["seeds"]]
        return cls(**doc)

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValueError(f"config {path} is not valid JSON: {exc}") from None
        return cls.from_dict(doc)

    def environment(self):
        if self.env in ("fig1-matrix", "maze-4x4"):
            base = builtin(self.env)
            if isinstance(base, MazeSpec) and self.maze:
                return MazeSpec(**self.maze)
            return base
        return load_matrix_game(Path(self.env).read_text())


def _fit_game_report(game, n_labels: int, rim: RimConfig, env_id: str) -> GapReport:
    return gap_report(game, n_labels, rim, env_id=env_id)


# ---------------------------------------------------------------------------
# Illustrative game
# ---------------------------------------------------------------------------


@dataclass
class GoldenCheck:
    name: str
    expected: float
    actual: float

    @property
    def error(self) -> float:
        return abs(self.actual - self.expected)

    @property
    def ok(self) -> bool:
        return self.error <= GOLDEN_TOL


@dataclass
class ExampleResult:
    reports: list[GapReport]
    checks: list[GoldenCheck]
    monotonicity: list

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)


def example_values(rim: RimConfig | None = None, n_labels: int = 2) -> dict[str, float]:
    """Every quantity with a quoted golden, computed by the pipeline."""
    game = builtin("fig1-matrix")
    rim = rim or RimConfig()
    rep = gap_report(game, n_labels, rim)
    rep1 = gap_report(game, 1, rim)
    partial = partial_action_values(game)
    full = receiver_values(game, MessageFunction.identity(4, 1))
    comm = receiver_values(game, rep.message_fns[1])
    nocomm = receiver_values(game, None)
    return {
        "j_full": rep.j_full,
        "j_comm": rep.j_comm,
        "j_nocomm": rep.j_nocomm,
        "gap_2_labels": rep.gap,
        "gap_1_label": rep1.gap,
        "o11_a11_avg": float(partial[0, 0]),
        "o11_a12_avg": float(partial[0, 1]),
        "o11_full": float(full[0]),
        "o12_full": float(full[1]),
        "o11_comm": float(comm[0]),
        "o12_nocomm": float(nocomm[1]),
    }


def run_example(n_labels: int | None = None, rim: RimConfig | None = None, out_dir: str | os.PathLike | None = None) -> ExampleResult:
    """Full pipeline on the illustrative game, compared with the quoted values.

    With ``n_labels`` given only the gap for that alphabet is checked
    (5.8125 for one label, 0 for four).
    """
    game = builtin("fig1-matrix")
    rim = rim or RimConfig()
    if n_labels is None:
        values = example_values(rim)
        checks = [GoldenCheck(k, FIG1_GOLDENS[k], values[k]) for k in FIG1_GOLDENS]
        label_set = (1, 2, 4)
    else:
        rep = gap_report(game, n_labels, rim)
        expected = {1: FIG1_GOLDENS["gap_1_label"], 2: FIG1_GOLDENS["gap_2_labels"]}.get(n_labels, 0.0)
        checks = [GoldenCheck(f"gap_{n_labels}_labels", expected, rep.gap)] if n_labels in (1, 2) or n_labels >= 4 else []
        label_set = (n_labels,)
    reports = [gap_report(game, M, rim) for M in label_set]
    mono = label_monotonicity_check(game)
    result = ExampleResult(reports, checks, mono)
    if out_dir is not None:
        out = Path(out_dir)
        write_csv(out / "example_report.csv", GAP_COLUMNS, (r.csv_row() for r in reports))
        write_csv(
            out / "example_goldens.csv",
            ["name", "expected", "actual", "abs_error", "match"],
            ([c.name, c.expected, c.actual, c.error, c.ok] for c in checks),
        )
        write_csv(out / "labels.csv", ["n_labels", "eps", "gap"], ([r.n_labels, r.eps, r.gap] for r in mono))
        for r in reports:
            if r.message_fns[1] is not None:
                write_message_fn(out / f"example_messages_{r.n_labels}.csv", r.message_fns[1])
        (out / "example_summary.txt").write_text(format_example(result))
    return result


def format_example(result: ExampleResult) -> str:
    lines = [r.summary() for r in result.reports]
    for c in result.checks:
        flag = "ok" if c.ok else "MISMATCH"
        lines.append(f"{flag:8s} {c.name:14s} expected {c.expected:.10g} got {c.actual:.10g} (|err| {c.error:.3g})")
    lines.append("eps by alphabet size: " + ", ".join(f"{r.n_labels}:{r.eps:.6g}" for r in result.monotonicity))
    return "\n".join(lines) + "\n"


def write_message_fn(path: Path, mf: MessageFunction) -> Path:
    cols = ["agent", "observation", "label"] + [f"p_{k}" for k in range(mf.alphabet_size)]
    return write_csv(path, cols, mf.csv_rows())


def run_matrix(spec_path: str | os.PathLike, n_labels: int, rim: RimConfig | None = None, out_dir=None) -> GapReport:
    game = load_matrix_game(Path(spec_path).read_text())
    rep = gap_report(game, n_labels, rim or RimConfig())
    if out_dir is not None:
        out = Path(out_dir)
        write_csv(out / "matrix_report.csv", GAP_COLUMNS, [rep.csv_row()])
        for j, mf in enumerate(rep.message_fns):
            if mf is not None:
                write_message_fn(out / f"matrix_messages_agent{j}.csv", mf)
        (out / "matrix_summary.txt").write_text(rep.summary() + "\n")
    return rep


# ---------------------------------------------------------------------------
# Bound sweep
# ---------------------------------------------------------------------------

SWEEP_COLUMNS = ["trial", "o1", "o2", "a1", "a2"] + GAP_COLUMNS + ["bound_safe", "ratio"]


@dataclass
class SweepResult:
    rows: list[list]
    violations: int
    max_ratio: float

    def summary(self) -> str:
        return f"{len(self.rows)} reports, {self.violations} bound violations, max gap/bound ratio {self.max_ratio:.6g}"


def sweep_game(seed: int, trial: int, max_sizes: Sequence[int]):
    ss = np.random.SeedSequence([seed, trial])
    size_seed, game_seed = ss.spawn(2)
    rng = np.random.default_rng(size_seed)
    sizes = tuple(int(rng.integers(1, m + 1)) for m in max_sizes)
    return sizes, gen_random_game(sizes, seed=game_seed)


def _sweep_trial(args) -> list[list]:
    seed, trial, max_sizes, labels, rim = args
    sizes, game = sweep_game(seed, trial, max_sizes)
    rows = []
    for M in labels:
        rep = gap_report(game, M, rim, env_id=f"random-{seed}-{trial}")
        ratio = rep.ratio
        if not 0.0 <= ratio <= 1.0:
            log.warning("trial %d |M|=%d: gap/bound ratio %.6g outside [0, 1]", trial, M, ratio)
        rows.append([trial, *sizes, *rep.csv_row(), rep.bound_safe, ratio])
    return rows


def run_bound_sweep(
    trials: int = 1000,
    max_sizes: Sequence[int] = (6, 6, 6, 1),
    labels: Sequence[int] = (1, 2, 3),
    seed: int = 0,
    rim: RimConfig | None = None,
    out_dir=None,
    workers: int = 1,
) -> SweepResult:
    """Gap reports over seeded random one-step games; one row per (game, |M|)."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rim = rim or RimConfig()
    jobs = [(seed, t, tuple(max_sizes), tuple(labels), rim) for t in range(trials)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_sweep_trial, jobs, chunksize=16))
    else:
        parts = [_sweep_trial(j) for j in jobs]
    rows = [r for part in parts for r in part]
    gi = 5 + GAP_COLUMNS.index("holds")
    violations = sum(1 for r in rows if not r[gi])
    ratios = [r[-1] for r in rows if math.isfinite(r[-1])]
    res = SweepResult(rows, violations, max(ratios, default=0.0))
    if out_dir is not None:
        out = Path(out_dir)
        write_csv(out / "bound_sweep.csv", SWEEP_COLUMNS, rows)
        (out / "bound_sweep_summary.txt").write_text(res.summary() + "\n")
    return res


# ---------------------------------------------------------------------------
# Maze ablation
# ---------------------------------------------------------------------------


@dataclass
class MessageMap:
    """Emission frequencies per observation and action frequencies per received label."""

    agent: int
    emission: np.ndarray  # (n_obs, |M|)
    action: np.ndarray  # (|M|, n_actions)

    @staticmethod
    def _rows(counts: np.ndarray) -> np.ndarray:
        tot = counts.sum(axis=1, keepdims=True)
        return np.divide(counts, tot, out=np.zeros_like(counts, dtype=float), where=tot > 0)

    @classmethod
    def from_counts(cls, agent: int, emission_counts: np.ndarray, action_counts: np.ndarray) -> "MessageMap":
        return cls(agent, cls._rows(np.asarray(emission_counts, float)), cls._rows(np.asarray(action_counts, float)))


def maze_kinds(cfg: RunConfig) -> list[str]:
    return ["centralized", "independent"] + [f"rgmcomm-{a}" for a in cfg.activations]


def _train_one(args) -> tuple[str, int, TrainResult]:
    kind, seed, cfg = args
    env = as_dec_pomdp(cfg.environment())
    learn = LearnConfig(**{**asdict(cfg.learn), "seed": seed})
    if kind == "centralized":
        res = train_centralized(env, learn)
    elif kind == "independent":
        res = train_independent(env, learn)
    else:
        act = kind.split("-", 1)[1]
        rim = RimConfig(**{**asdict(cfg.rim), "activation": act, "seed": seed})
        res = train_rgmcomm(env, rim, learn, cfg.alphabet_size, cfg.vector_mode, keep_margin=cfg.keep_margin)
    return kind, seed, res


@dataclass
class MazeResult:
    finals: dict[str, list[float]]
    curves: dict[tuple[str, int], list[tuple[int, float]]]
    maps: dict[tuple[str, int], list[MessageMap]]
    message_fns: dict[tuple[str, int], list[MessageFunction | None]]

    def mean(self, kind: str) -> float:
        return float(np.mean(self.finals[kind]))

    def ordering_checks(self) -> list[tuple[str, bool]]:
        m = {k: self.mean(k) for k in self.finals}
        out = []
        c, t = m.get("centralized"), m.get("rgmcomm-tanh")
        if c is not None and t is not None:
            out.append(("centralized >= rgmcomm-tanh", c >= t))
            out.append(("rgmcomm-tanh >= 0.9 * centralized", t >= 0.9 * c))
        if t is not None and "independent" in m:
            out.append(("rgmcomm-tanh > independent", t > m["independent"]))
        for other in ("softmax", "none"):
            k = f"rgmcomm-{other}"
            if t is not None and k in m:
                out.append((f"rgmcomm-tanh >= {k}", t >= m[k]))
        return out

    def summary(self) -> str:
        lines = []
        for k, v in self.finals.items():
            lines.append(f"{k:18s} final mean {np.mean(v):.6f} std {np.std(v):.6f} over {len(v)} seeds")
        for name, ok in self.ordering_checks():
            lines.append(f"{'ok' if ok else 'FAIL':4s} {name}")
        return "\n".join(lines) + "\n"


def run_maze(cfg: RunConfig, out_dir=None) -> MazeResult:
    """Train every policy kind on every seed and emit curves and message maps."""
    jobs = [(kind, seed, cfg) for kind in maze_kinds(cfg) for seed in cfg.seeds]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            done = list(pool.map(_train_one, jobs))
    else:
        done = [_train_one(j) for j in jobs]
    finals: dict[str, list[float]] = {k: [] for k in maze_kinds(cfg)}
    curves, maps, fns = {}, {}, {}
    for kind, seed, res in done:
        finals[kind].append(res.final_return)
        curves[(kind, seed)] = res.curve
        if kind.startswith("rgmcomm"):
            maps[(kind, seed)] = [
                MessageMap.from_counts(j, res.emission_counts[j], res.action_counts[j]) for j in range(len(res.tables))
            ]
            fns[(kind, seed)] = res.message_fns
    result = MazeResult(finals, curves, maps, fns)
    if out_dir is not None:
        _write_maze(result, cfg, Path(out_dir))
    return result


def _write_maze(result: MazeResult, cfg: RunConfig, out: Path) -> None:
    rows = [[ep, r, kind, seed] for (kind, seed), curve in result.curves.items() for ep, r in curve]
    write_csv(out / "curves.csv", CURVE_COLUMNS, rows)
    summary = []
    for kind in maze_kinds(cfg):
        per_seed = [dict(result.curves[(kind, s)]) for s in cfg.seeds]
        for ep in sorted(per_seed[0]):
            vals = np.array([c[ep] for c in per_seed])
            summary.append([ep, kind, float(vals.mean()), float(vals.std()), len(vals)])
    write_csv(out / "curves_summary.csv", ["episode", "policy_kind", "mean", "std", "n_seeds"], summary)
    write_csv(
        out / "final_returns.csv",
        ["policy_kind", "seed", "final_return"],
        ([k, s, v] for k in result.finals for s, v in zip(cfg.seeds, result.finals[k])),
    )
    emit, act = [], []
    for (kind, seed), mm in result.maps.items():
        for m in mm:
            for o, row in enumerate(m.emission):
                for lab, f in enumerate(row):
                    emit.append([kind, seed, m.agent, o, lab, float(f)])
            for lab, row in enumerate(m.action):
                for a, f in enumerate(row):
                    act.append([kind, seed, m.agent, lab, a, float(f)])
    write_csv(out / "message_map_emission.csv", ["policy_kind", "seed", "agent", "observation", "label", "frequency"], emit)
    write_csv(out / "message_map_action.csv", ["policy_kind", "seed", "agent", "label", "action", "frequency"], act)
    for (kind, seed), mfs in result.message_fns.items():
        for mf in mfs:
            if mf is not None:
                write_message_fn(out / f"messages_{kind}_seed{seed}_agent{mf.agent}.csv", mf)
    (out / "maze_summary.txt").write_text(result.summary())


# ---------------------------------------------------------------------------
# Plot data
# ---------------------------------------------------------------------------


class MissingArtifactsError(FileNotFoundError):
    def __init__(self, run_dir: Path, missing: list[str]):
        self.missing = missing
        super().__init__(f"{run_dir}: missing run artifacts: {', '.join(missing)}")


PLOT_SOURCES = {"learning_curves.dat": "curves_summary.csv", "gap_vs_labels.dat": "example_report.csv", "eps_vs_labels.dat": "labels.csv"}


def emit_plotdata(run_dir: str | os.PathLike, out_dir: str | os.PathLike | None = None) -> list[Path]:
    """Whitespace-separated columns for gnuplot, one file per figure analogue.

    Files whose source artifact is absent are skipped; if none is present the
    run directory is rejected with the full list of missing artifacts.
    """
    run = Path(run_dir)
    out = Path(out_dir) if out_dir is not None else run / "plot"
    present = {dat: src for dat, src in PLOT_SOURCES.items() if (run / src).is_file()}
    if not present:
        raise MissingArtifactsError(run, sorted(set(PLOT_SOURCES.values())))
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "learning_curves.dat" in present:
        rows = read_csv(run / "curves_summary.csv")
        kinds = list(dict.fromkeys(r["policy_kind"] for r in rows))
        eps = sorted({int(r["episode"]) for r in rows})
        table = {(int(r["episode"]), r["policy_kind"]): r for r in rows}
        lines = ["# episode " + " ".join(f"{k}_mean {k}_std" for k in kinds)]
        for e in eps:
            vals = []
            for k in kinds:
                r = table.get((e, k))
                vals += [r["mean"], r["std"]] if r else ["nan", "nan"]
            lines.append(" ".join([str(e)] + vals))
        written.append(_write_lines(out / "learning_curves.dat", lines))
    if "gap_vs_labels.dat" in present:
        rows = read_csv(run / "example_report.csv")
        lines = ["# n_labels gap"] + [f"{r['n_labels']} {r['gap']}" for r in rows]
        written.append(_write_lines(out / "gap_vs_labels.dat", lines))
    if "eps_vs_labels.dat" in present:
        rows = read_csv(run / "labels.csv")
        lines = ["# n_labels eps gap"] + [f"{r['n_labels']} {r['eps']} {r['gap']}" for r in rows]
        written.append(_write_lines(out / "eps_vs_labels.dat", lines))
    return written


def _write_lines(path: Path, lines: list[str]) -> Path:
    path.write_text("\n".join(lines) + "\n")
    return path
