import csv
import json

import numpy as np

from markovlens.analysis import parse_panel_csv, read_panel_csv, write_panel_csv
from markovlens.cli import main
from markovlens.pcmci import TimeSeriesPanel


def write_panel(path, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(500, 3))
    x[3:, 2] += 0.9 * x[:-3, 0]
    write_panel_csv(TimeSeriesPanel(x, ["u", "v", "w"]), path)
    return x


def test_panel_csv_round_trip(tmp_path):
    x = write_panel(tmp_path / "p.csv")
    panel = read_panel_csv(tmp_path / "p.csv")
    assert panel.var_names == ["u", "v", "w"]
    np.testing.assert_array_equal(panel.data, x)
    assert parse_panel_csv("a,b\n1,2\n3,4\n").data.shape == (2, 2)


def test_analyze_command(tmp_path, capsys):
    write_panel(tmp_path / "p.csv")
    out = tmp_path / "links.csv"
    assert main(["analyze", "--panel", str(tmp_path / "p.csv"), "--tau-max", "4", "--alpha", "0.01",
                 "--links-out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert {"child": "w", "parent": "u", "lag": "-3"}.items() <= rows[0].items()
    assert "MVS" in capsys.readouterr().err


def test_analyze_bad_input(tmp_path, capsys):
    (tmp_path / "bad.csv").write_text("a,b\n1,x\n")
    assert main(["analyze", "--panel", str(tmp_path / "bad.csv")]) == 2
    assert main(["analyze", "--panel", str(tmp_path / "missing.csv")]) == 2
    (tmp_path / "short.csv").write_text("a,b\n" + "1,2\n" * 20)
    assert main(["analyze", "--panel", str(tmp_path / "short.csv")]) == 2
    assert "error:" in capsys.readouterr().err


def test_run_command(tmp_path, capsys):
    config = {"environments": [{"name": "CartPole-v1", "time_steps": 512}, {"name": "Pendulum-v1", "time_steps": 512}],
              "seeds": 2, "pcmci": {"tau_max": 2, "rollout_steps": 150, "runs": 1}, "ppo": {"rollout_length": 256}}
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    out = tmp_path / "out"
    code = main(["run", "--config-path", str(path), "--env", "Pendulum-v1", "--out", str(out),
                 "--parallelism", "1", "--seed-count", "1", "--ci", "t"])
    assert code == 0
    assert (out / "Pendulum-v1" / "summary.csv").exists()
    assert not (out / "CartPole-v1").exists()
    assert [p.name for p in (out / "Pendulum-v1" / "baseline").iterdir() if p.is_dir()] == ["10000"]
    assert "Pendulum-v1/baseline" in capsys.readouterr().out


def test_run_command_exit_codes(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"environments": [{"name": "CartPole-v1", "time_steps": 512, "speed": 3}]}))
    assert main(["run", "--config-path", str(bad), "--out", str(tmp_path / "o1")]) == 2
    failing = tmp_path / "failing.json"
    failing.write_text(json.dumps({"environments": [{"name": "CartPole-v1", "time_steps": 256}], "seeds": 1,
                                   "pcmci": {"tau_max": 2, "rollout_steps": 20, "runs": 1},
                                   "ppo": {"rollout_length": 256}}))
    assert main(["run", "--config-path", str(failing), "--out", str(tmp_path / "o2")]) == 1
