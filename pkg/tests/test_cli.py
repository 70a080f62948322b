import csv
import json
import subprocess
import sys

import pytest

from pcdde_lab.cli import main
from pcdde_lab.experiments import worker_count


def run(tmp_path, *args):
    out = tmp_path / "out"
    code = main([*args, "--out", str(out)])
    manifest = json.loads((out / "manifest.json").read_text()) if (out / "manifest.json").exists() else None
    return code, out, manifest


def rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_gradcheck_passes_and_writes_manifest(tmp_path, capsys):
    code, out, man = run(tmp_path, "gradcheck", "--cases", "12")
    assert code == 0
    assert man["passed"] and man["command"] == "gradcheck" and man["config"]["cases"] == 12
    assert {"version", "kernel_backend", "seed", "elapsed_s", "outputs"} <= set(man)
    assert len(rows(out / "gradcheck.csv")) == 13
    printed = capsys.readouterr().out.splitlines()
    assert printed[0].startswith("PASS adjoint_vs_bptt")


def test_gradcheck_single_case_is_deterministic(tmp_path):
    main(["gradcheck", "--cases", "1", "--seed", "7", "--out", str(tmp_path / "a")])
    main(["gradcheck", "--cases", "1", "--seed", "7", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "gradcheck.csv").read_text() == (tmp_path / "b" / "gradcheck.csv").read_text()


def test_sabotaged_gradcheck_fails(tmp_path, capsys):
    code, _, man = run(tmp_path, "gradcheck", "--cases", "6", "--sabotage")
    assert code == 1 and not man["passed"]
    assert "FAIL adjoint_vs_bptt" in capsys.readouterr().out


def test_console_script_exit_codes(tmp_path):
    ok = subprocess.run([sys.executable, "-m", "pcdde_lab.cli", "gradcheck", "--cases", "2", "--out", str(tmp_path / "g")])
    assert ok.returncode == 0
    bad = subprocess.run([sys.executable, "-m", "pcdde_lab.cli", "gradcheck", "--set", "nope=1", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert bad.returncode == 2 and "unknown config key" in bad.stderr


@pytest.mark.parametrize("content, message", [
    ('{"cases": 3, "bogus": 1}', "unknown config key"),
    ("{not json", "not valid JSON"),
    ('{"cases": "many"}', "must be an integer"),
    ('{"cases": 0}', "positive"),
    ("[1, 2]", "JSON object"),
])
def test_bad_config_exits_2(tmp_path, capsys, content, message):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(content)
    assert main(["gradcheck", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert message in capsys.readouterr().err


def test_missing_config_and_bad_override_exit_2(tmp_path):
    assert main(["map", "--config", str(tmp_path / "absent.json"), "--out", str(tmp_path)]) == 2
    assert main(["annuli", "--set", "r1=5", "--out", str(tmp_path)]) == 2
    assert main(["population", "--set", "models=[\"RNN\"]", "--out", str(tmp_path)]) == 2
    assert main(["fig1", "--set", "train.optimizer=\"lbfgs\"", "--out", str(tmp_path)]) == 2
    assert main(["nonsense"]) == 2


def test_thread_cap(monkeypatch, tmp_path):
    monkeypatch.setenv("PCDDE_LAB_THREADS", "1")
    assert worker_count() == 1
    monkeypatch.setenv("PCDDE_LAB_THREADS", "lots")
    assert main(["gradcheck", "--cases", "1", "--out", str(tmp_path)]) == 2


def test_map_scan(tmp_path):
    code, out, man = run(tmp_path, "map", "--set", "a_step=0.5")
    assert code == 0
    assert man["checks"]["a*_period3"]["period"] == 3
    assert man["checks"]["a0.5_period1"]["period"] == 1
    table = rows(out / "bifurcation.csv")
    assert table[0] == ["a", "period", "sample_index", "x"]
    a_values = {r[0] for r in table[1:]}
    assert {"0.5", "3.1167", "3.2", "4.0"} <= a_values
    assert len(table) == 1 + 64 * len(a_values)


def test_manifest_rerun_reproduces_outputs(tmp_path):
    first = tmp_path / "first"
    assert main(["map", "--set", "a_step=0.25", "--set", "samples=8", "--out", str(first)]) == 0
    second = tmp_path / "second"
    assert main(["map", "--config", str(first / "manifest.json"), "--out", str(second)]) == 0
    assert (first / "bifurcation.csv").read_bytes() == (second / "bifurcation.csv").read_bytes()
    assert main(["gradcheck", "--config", str(first / "manifest.json"), "--out", str(tmp_path / "x")]) == 2


def test_small_fig1_run(tmp_path):
    code, out, man = run(tmp_path, "fig1", "--iterations", "20", "--n-seeds", "1")
    assert code == 1   # far from either optimum after 20 steps
    loss = rows(out / "T=2tau" / "seed0" / "loss.csv")
    assert loss[0] == ["step", "train_loss"] and len(loss) == 22
    params = rows(out / "T=tau" / "seed0" / "params.csv")
    assert params[0] == ["step", "a", "b"] and params[1][1:] == ["0.0", "0.0"]
    assert man["checks"]["T=2tau_loss_decreased"]["passed"]


def test_small_annuli_run(tmp_path):
    code, out, man = run(tmp_path, "annuli", "--iterations", "3", "--n-seeds", "1", "--set", "n_per_class=20")
    assert code in (0, 1)
    data = rows(out / "data.csv")
    assert data[0] == ["x1", "x2", "label"] and len(data) == 41
    for model in ("NODE", "NPCDDE_n1", "NPCDDE_n2", "NPCDDE_skip"):
        feats = rows(out / model / "seed0" / "features_epoch0.csv")
        assert feats[0] == ["point_id", "z1", "z2", "label"] and len(feats) == 41
    acc = rows(out / "accuracy.csv")
    assert len(acc) == 5
    assert set(man["checks"]) == {"skip_accuracy", "node_loss_above_skip"}


def test_small_population_run(tmp_path):
    code, out, man = run(tmp_path, "population", "--iterations", "2", "--n-seeds", "1",
                         "--set", "a_values=[2.0]", "--set", "eval_every=1")
    assert code in (0, 1)
    assert len(rows(out / "a2" / "data_train.csv")) == 1 + 100 * 31
    assert len(rows(out / "a2" / "data_test.csv")) == 1 + 100 * 100
    for model in ("NPCDDE", "NODE", "NDDE", "ANODE"):
        traj = rows(out / "a2" / model / "seed0" / "trajectories.csv")
        assert traj[0] == ["traj_id", "t", "component_index", "value"]
        assert {r[0] for r in traj[1:]} == {str(i) for i in range(100)}
        loss = rows(out / "a2" / model / "seed0" / "loss.csv")
        assert loss[0] == ["step", "train_loss", "test_loss_h1", "test_loss_h2", "test_loss_h5", "test_loss_h10"]
        assert len(loss) == 4
    assert set(man["checks"]) == {"a2_train_gap", "a2_h1_test"}
