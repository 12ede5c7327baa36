import json

import numpy as np
import pytest

from ssmlab.cli import EXIT_RUNTIME, EXIT_USAGE, UsageError, main, parse_config, parse_x_grid

SYSTEM = {"form": "mode_switched",
          "modes": [{"A": [[-1, 0], [0, -2]], "B": [[1], [0]], "C": [[1, 0]]}],
          "input": {"kind": "white_noise", "seed": 3, "sample_dt": 0.01},
          "h0": [1, 1]}
CERT = {"Q": [[1, 0], [0, 1]], "iss_delta": 0.5}


def test_defaults():
    cfg = parse_config(["exp2", "--outdir", "out/"], env={})
    assert (cfg.command, cfg.outdir, cfg.seed, cfg.dt, cfg.horizon) == ("exp2", "out/", 7, 1e-3, 15.0)
    assert parse_config(["exp1"], env={}).horizon == 40.0
    assert parse_config(["exp3"], env={}).horizon == 20.0
    assert parse_config(["exp3"], env={}).eval_seed == 8
    np.testing.assert_allclose(parse_x_grid(parse_config(["exp3"], env={}).x_grid),
                               np.linspace(-3, 3, 61))


def test_usage_errors():
    for argv in (["exp2", "--dt", "0"], ["exp2", "--dt", "-1"], ["bogus"], [], ["exp2", "--nope"],
                 ["simulate"], ["certify", "--system", json.dumps(SYSTEM)], ["exp2", "--x-grid", "a:b"]):
        with pytest.raises(UsageError):
            parse_config(argv, env={})


def test_exit_status_usage(capsys):
    assert main(["exp2", "--dt", "0"]) == EXIT_USAGE
    assert "dt must be positive" in capsys.readouterr().err


def test_env_outdir_fallback():
    assert parse_config(["exp2"], env={"SSMLAB_OUTDIR": "/tmp/x"}).outdir == "/tmp/x"
    assert parse_config(["exp2", "--outdir", "y"], env={"SSMLAB_OUTDIR": "/tmp/x"}).outdir == "y"


def test_config_file_and_flag_precedence(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"command": "exp2", "seed": 3, "dt": 0.01}))
    cfg = parse_config(["--config", str(path), "--seed", "5"], env={})
    assert (cfg.command, cfg.seed, cfg.dt) == ("exp2", 5, 0.01)


def test_config_file_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"command": "exp2", "colour": "red"}))
    with pytest.raises(UsageError, match="colour"):
        parse_config(["--config", str(bad)], env={})
    with pytest.raises(UsageError, match="cannot read"):
        parse_config(["--config", str(tmp_path / "absent.json")], env={})
    junk = tmp_path / "junk.json"
    junk.write_text("{not json")
    with pytest.raises(UsageError, match="invalid JSON"):
        parse_config(["--config", str(junk)], env={})


def test_simulate_and_manifest_rerun(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--system", json.dumps(SYSTEM), "--horizon", "2", "--outdir", str(out1)]) == 0
    files = sorted(p.name for p in (out1 / "simulate").iterdir())
    assert files == ["manifest.json", "state_norm.svg", "summary.json", "trajectory.csv"]
    header = (out1 / "simulate" / "trajectory.csv").read_text().splitlines()[0]
    assert header == "t,h_1,h_2,u_1,y_1"
    assert main(["--config", str(out1 / "simulate" / "manifest.json"), "--outdir", str(out2)]) == 0
    for name in files:
        assert (out1 / "simulate" / name).read_bytes() == (out2 / "simulate" / name).read_bytes()


def test_system_from_file(tmp_path):
    path = tmp_path / "sys.json"
    path.write_text(json.dumps(SYSTEM))
    assert main(["simulate", "--system", str(path), "--horizon", "1", "--outdir", str(tmp_path)]) == 0


def test_certify_command(tmp_path):
    assert main(["certify", "--system", json.dumps(SYSTEM), "--certificate", json.dumps(CERT),
                 "--horizon", "4", "--dt", "0.01", "--outdir", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "certify" / "summary.json").read_text())
    assert rep["max_lmi_violation"] == 0 and rep["monotone"] and rep["loewner_ok"]
    assert rep["iss"]["min_margin"] >= -1e-6
    assert len(rep["dissipation"]) == 31
    assert (tmp_path / "certify" / "rank_profile.csv").read_text().splitlines() == ["t,rank", "0,2"]


def test_sweep_lmi_gated(tmp_path):
    system = {"form": "affine_gated", "A_base": [[-2.0]], "A_sel": [[-1.0]], "B": [[1.0]], "C": [[1.0]]}
    cert = {"Q": [[1.0]], "beta": 1.5}
    assert main(["sweep-lmi", "--system", json.dumps(system), "--certificate", json.dumps(cert),
                 "--x-grid=-3:3:7", "--outdir", str(tmp_path)]) == 0
    rows = (tmp_path / "sweep-lmi" / "lmi.csv").read_text().splitlines()
    assert rows[0] == "t,x,violation" and len(rows) == 8
    s = json.loads((tmp_path / "sweep-lmi" / "summary.json").read_text())
    # (1,1) entry is 2 beta - 4 - 2 tanh x: positive only for x < tanh^-1(-0.5)
    assert s["violating_fraction"] == pytest.approx(3 / 7)


def test_bad_system_is_usage_error(tmp_path):
    bad = {"form": "mode_switched", "modes": [{"A": [[1, 0]], "B": [[1]], "C": [[1]]}]}
    assert main(["simulate", "--system", json.dumps(bad), "--outdir", str(tmp_path)]) == EXIT_USAGE


def test_divergence_is_runtime_failure(tmp_path):
    unstable = {"modes": [{"A": [[1.0]], "B": [[0.0]], "C": [[1.0]]}], "h0": [1.0]}
    assert main(["simulate", "--system", json.dumps(unstable), "--horizon", "40", "--dt", "0.01",
                 "--outdir", str(tmp_path)]) == EXIT_RUNTIME
    s = json.loads((tmp_path / "simulate" / "summary.json").read_text())
    assert s["diverged_at"] == pytest.approx(np.log(1e12), abs=0.05)


def test_unwritable_outdir_is_runtime_failure(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["exp2", "--dt", "0.01", "--outdir", str(blocker)]) == EXIT_RUNTIME
