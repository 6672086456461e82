import json

import numpy as np
import pytest

from commgap.cli import main
from commgap.envs import dump_matrix_game, gen_random_game
from commgap.experiments import (
    FIG1_GOLDENS,
    RunConfig,
    emit_plotdata,
    example_values,
    read_csv,
    run_bound_sweep,
    sweep_game,
    write_csv,
)

TINY_MAZE = ["--seeds", "0", "--episodes", "600", "--activation", "tanh"]


def test_csv_schema_and_cells(tmp_path):
    path = write_csv(tmp_path / "x.csv", ["a", "b", "c"], [[1, 0.1, True], [np.int64(2), np.float64(1 / 3), False]])
    text = path.read_text()
    assert text.splitlines()[0] == "# schema: a,b,c"
    assert "0.3333333333333333" in text and "true" in text
    assert read_csv(path) == [{"a": "1", "b": "0.1", "c": "true"}, {"a": "2", "b": "0.3333333333333333", "c": "false"}]


def test_config_rejects_unknown_keys(tmp_path):
    with pytest.raises(ValueError):
        RunConfig.from_dict({"nope": 1})
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seeds": [3], "learn": {"episodes": 10}, "rim": {"lam": 0.5}}))
    cfg = RunConfig.from_file(p)
    assert cfg.seeds == [3] and cfg.learn.episodes == 10 and cfg.learn.lr_schedule == "linear"
    assert cfg.rim.lam == 0.5
    with pytest.raises(ValueError):
        RunConfig(seeds=[])


def test_example_values_match_non_arithmetic_goldens():
    values = example_values()
    for key in ("j_nocomm", "o11_a11_avg", "o11_a12_avg", "o12_full", "o12_nocomm"):
        assert values[key] == pytest.approx(FIG1_GOLDENS[key], abs=1e-9), key


def test_sweep_games_are_seeded():
    a = sweep_game(0, 5, (6, 6, 6, 1))
    b = sweep_game(0, 5, (6, 6, 6, 1))
    assert a[0] == b[0] and np.array_equal(a[1].q_table, b[1].q_table)
    assert all(1 <= s <= m for s, m in zip(a[0], (6, 6, 6, 1)))


def test_small_sweep_has_no_violations(tmp_path):
    res = run_bound_sweep(trials=30, out_dir=tmp_path)
    assert res.violations == 0 and len(res.rows) == 90
    assert (tmp_path / "bound_sweep.csv").is_file()


def test_cli_example_writes_artifacts(tmp_path, capsys):
    code = main(["example", "--out", str(tmp_path)])
    out = capsys.readouterr().out
    # the quoted sums for the full-information and clustered values do not add up
    assert code == 1 and "MISMATCH" in out
    for name in ("example_report.csv", "example_goldens.csv", "labels.csv", "example_messages_2.csv"):
        assert (tmp_path / name).is_file()
    assert main(["example", "--labels", "4", "--out", str(tmp_path / "four")]) == 0


def test_cli_matrix(tmp_path, capsys):
    spec = tmp_path / "g.json"
    spec.write_text(dump_matrix_game(gen_random_game((3, 4, 2, 1), seed=1)))
    assert main(["matrix", "--spec", str(spec), "--labels", "2", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "matrix_report.csv")
    assert rows[0]["holds"] == "true"
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert main(["matrix", "--spec", str(bad), "--labels", "2", "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_cli_bound_sweep(tmp_path, capsys):
    assert main(["bound-sweep", "--trials", "10", "--out", str(tmp_path)]) == 0
    assert "0 bound violations" in capsys.readouterr().out


def test_cli_maze_and_plotdata(tmp_path):
    run = tmp_path / "run"
    code = main(["maze", *TINY_MAZE, "--out", str(run)])
    assert code in (0, 1)
    for name in ("curves.csv", "curves_summary.csv", "final_returns.csv", "message_map_emission.csv", "maze_summary.txt"):
        assert (run / name).is_file()
    assert main(["plotdata", "--run", str(run)]) == 0
    dat = (run / "plot" / "learning_curves.dat").read_text().splitlines()
    assert dat[0].startswith("# episode centralized_mean")


def test_plotdata_rejects_empty_run(tmp_path, capsys):
    assert main(["plotdata", "--run", str(tmp_path)]) == 2
    assert "missing run artifacts" in capsys.readouterr().err
    with pytest.raises(FileNotFoundError):
        emit_plotdata(tmp_path)


def test_cli_argument_errors():
    with pytest.raises(SystemExit):
        main(["bound-sweep", "--labels", "0"])
    with pytest.raises(SystemExit):
        main([])
