import json
import os
import subprocess
import sys
import time

import pytest

from entropylab import cli
from entropylab.cli import ExperimentConfig, ConfigError, main


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


# -- config ------------------------------------------------------------------------


def test_config_round_trip():
    cfg = ExperimentConfig.from_dict({"command": "verify", "p": 3.0, "seed": 4, "target": "one",
                                      "sigma": {"kind": "spike", "leaf": 2}})
    again = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg
    assert cfg.target == "thm-one"


@pytest.mark.parametrize("data,needle", [
    ({"command": "constants"}, "'p'"),
    ({"command": "verify", "p": 2.0}, "'seed'"),
    ({"command": "constants", "p": 1.0}, "'p'"),
    ({"command": "constants", "p": 2.0, "delta": 0}, "'delta'"),
    ({"command": "constants", "p": 2.0, "depth": 17}, "'depth'"),
    ({"command": "constants", "p": 2.0, "dimension": 2, "depth": 9}, "'depth'"),
    ({"command": "constants", "p": 2.0, "colour": "red"}, "colour"),
    ({"command": "launch", "p": 2.0}, "launch"),
    ({"command": "verify", "p": 2.0, "seed": 1, "target": "thm-three"}, "thm-three"),
])
def test_config_validation(data, needle):
    with pytest.raises(ConfigError, match=needle):
        ExperimentConfig.from_dict(data)


def test_parse_weight_arg():
    assert cli.parse_weight_arg("lognormal:seed=3,variance=2") == {"kind": "lognormal", "seed": 3, "variance": 2}
    assert cli.parse_weight_arg('{"kind": "constant"}') == {"kind": "constant"}
    assert cli.parse_weight_arg("power-law:center=[0.1],exponent=-0.5")["center"] == [0.1]
    with pytest.raises(ConfigError):
        cli.parse_weight_arg("spike:leaf")


# -- commands ------------------------------------------------------------------------


def test_constants_command(capsys):
    code, out, _ = run_cli(capsys, "constants", "--p", "2", "--delta", "1")
    assert code == 0
    report = json.loads(out)
    assert report["joint_bump"]["value"] == 1.0
    assert report["product_bump"]["value"] == 1.0
    assert report["report_version"] == 1


def test_missing_p_exit_2(capsys):
    code, _, err = run_cli(capsys, "constants")
    assert code == 2 and "'p'" in err


def test_bad_numeric_value_exit_2(capsys):
    code, _, _ = run_cli(capsys, "constants", "--p", "abc")
    assert code == 2


def test_malformed_config_reports_position(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"command": "constants",\n  "p": 2,,\n}')
    code, _, err = run_cli(capsys, "constants", "--config", str(bad))
    assert code == 2
    assert "line 2" in err and "column" in err


def test_unknown_config_field_exit_2(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"command": "constants", "p": 2, "bogus": 1}))
    code, _, err = run_cli(capsys, "constants", "--config", str(cfg))
    assert code == 2 and "bogus" in err


def test_flags_override_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"command": "constants", "p": 2, "depth": 3}))
    code, out, _ = run_cli(capsys, "constants", "--config", str(cfg), "--p", "3")
    assert code == 0
    assert json.loads(out)["inputs"]["p"] == 3.0


def test_degenerate_input_exit_3(capsys):
    zero = '{"kind":"explicit","densities":[0,0,0,0],"depth":2}'
    code, _, err = run_cli(capsys, "verify", "--p", "2", "--seed", "1", "--sigma", zero)
    assert code == 3 and "zero" in err


def test_zero_on_a_cube_is_not_degenerate(capsys):
    part = '{"kind":"explicit","densities":[0,0,1,3],"depth":2}'
    for target in ("max", "one", "two", "ap-ainfty"):
        code, out, _ = run_cli(capsys, "verify", "--p", "2", "--seed", "1", "--sigma", part,
                               "--target", target)
        assert code == 0
        assert "NaN" not in out and "Infinity" not in out


def test_non_sparse_collection_exit_2(capsys):
    full = json.dumps({"kind": "explicit", "cubes": [{"level": 0, "index": [0]}, {"level": 1, "index": [0]},
                                                     {"level": 1, "index": [1]}]})
    code, _, err = run_cli(capsys, "verify", "--p", "2", "--seed", "1", "--target", "one", "--sparse", full)
    assert code == 2 and "not sparse" in err


def test_io_failure_exit_4(tmp_path, capsys):
    code, _, _ = run_cli(capsys, "constants", "--p", "2", "--out", str(tmp_path / "missing" / "r.json"))
    assert code == 4


def test_out_file_written_atomically(tmp_path, capsys):
    target = tmp_path / "report.json"
    code, out, _ = run_cli(capsys, "constants", "--p", "2", "--out", str(target))
    assert code == 0 and out == ""
    assert json.loads(target.read_text())["joint_bump"]["value"] == 1.0
    assert [p.name for p in tmp_path.iterdir()] == ["report.json"]


@pytest.mark.parametrize("argv", [
    ["verify", "--target", "max", "--seed", "7", "--p", "2", "--depth", "5"],
    ["verify", "--target", "two", "--seed", "3", "--p", "3", "--instances", "3", "--depth", "5"],
    ["norm", "--seed", "5", "--p", "1.5", "--depth", "5"],
    ["search", "--target", "lemma", "--seed", "2", "--p", "3", "--budget", "30", "--depth", "4"],
])
def test_randomized_commands_deterministic(tmp_path, capsys, argv):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(argv + ["--out", str(a)]) == 0
    assert main(argv + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_verify_csv(capsys):
    code, out, _ = run_cli(capsys, "verify", "--target", "lemma", "--seed", "1", "--p", "2",
                           "--suite", "--instances", "4", "--format", "csv")
    assert code == 0
    assert len(out.strip().splitlines()) == 5


def test_gen_spike(capsys):
    code, out, _ = run_cli(capsys, "gen", "--sigma", "spike:leaf=0,mass=1", "--depth", "3")
    assert code == 0
    assert json.loads(out)["densities"] == [8.0] + [0.0] * 7


def test_explicit_sigma_sets_shape_of_default_w(capsys):
    sigma = '{"kind":"explicit","densities":[1,2,3,4],"depth":2}'
    code, out, _ = run_cli(capsys, "constants", "--p", "2", "--sigma", sigma)
    assert code == 0
    assert json.loads(out)["w"]["depth"] == 2


# -- selftest ------------------------------------------------------------------------


def test_selftest_passes_quickly(capsys):
    t0 = time.perf_counter()
    code, out, _ = run_cli(capsys, "selftest")
    assert code == 0
    assert time.perf_counter() - t0 < 60
    assert "FAIL" not in out


def test_selftest_corrupted_value(tmp_path, capsys):
    data = json.loads(cli.default_fixture_path().read_text())
    data["fixtures"][0]["expected"] = 12345.0
    path = tmp_path / "fixtures.json"
    path.write_text(json.dumps(data))
    code, out, _ = run_cli(capsys, "selftest", "--fixtures", str(path))
    assert code == 1
    assert f"FAIL {data['fixtures'][0]['name']}" in out


def test_selftest_corrupted_file(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text('{"fixtures": [')
    code, out, _ = run_cli(capsys, "selftest", "--fixtures", str(path))
    assert code == 1
    assert "broken.json" in out


def test_threads_env_does_not_change_output(tmp_path):
    outputs = []
    for threads in ("1", "3"):
        env = dict(os.environ, ENTROPYLAB_THREADS=threads)
        proc = subprocess.run(
            [sys.executable, "-m", "entropylab", "verify", "--target", "one", "--seed", "4",
             "--p", "3", "--depth", "4", "--suite", "--instances", "6"],
            capture_output=True, text=True, env=env, check=True)
        outputs.append(proc.stdout)
    assert outputs[0] == outputs[1]
