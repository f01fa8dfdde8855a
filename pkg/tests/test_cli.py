"""Config parsing, TOML echo, CSV outputs, and subcommand exit codes."""

import math
import os

import numpy as np
import pytest
import tomli

from mbsolve.cli import (
    ConfigError,
    config_hash,
    emit_toml,
    main,
    parse_config,
)

STEFAN_BODY = """\
[model]
preset = "stefan"
rho = 0.5
sigma = 0.3
kappa = 1.0
eta_plus = 1.0
eta_minus = 1.0
sigma_star = 0.4

[model.kernel]
ell = 0.3
amplitude = 0.4

[grid]
length = 2.0
n = 24

[noise]
seed = 7

[solver]
dt = 1e-3
t_final = 0.02
snapshot_stride = 10

[initial]
[initial.plus]
kind = "exp"
amplitude = 0.8
rate = 0.5
[initial.minus]
kind = "zero"
"""


def write_config(tmp_path, body, name="run.toml"):
    path = tmp_path / name
    path.write_text(body)
    return str(path)


def test_parse_fills_only_numerical_defaults(tmp_path):
    rc = parse_config(write_config(tmp_path, STEFAN_BODY))
    eff = rc.effective
    assert eff["noise"]["modes"] == 64
    assert eff["noise"]["z_max"] == pytest.approx(2.0 + 3 * 0.3)
    assert eff["solver"]["n_max"] == math.inf
    assert eff["solver"]["presmooth"] is True
    assert eff["solver"]["retain_increments"] is False
    assert eff["output"] == {"directory": "mbsolve-out", "stride": 1}
    assert rc.coeffs.name == "stefan"
    assert rc.grid.n == 24
    assert rc.solver.dt == pytest.approx(1e-3)
    assert rc.seed == 7


def test_initial_profile_arrays(tmp_path):
    body = STEFAN_BODY.replace(
        'kind = "exp"\namplitude = 0.8\nrate = 0.5',
        'kind = "gaussian"\namplitude = 2.0\ncenter = 0.5\nwidth = 0.25',
    ).replace('[initial.minus]\nkind = "zero"', '[initial.minus]\nkind = "constant"\namplitude = 1.5')
    rc = parse_config(write_config(tmp_path, body))
    x = rc.grid.nodes
    expected = 2.0 * np.exp(-((x - 0.5) ** 2) / (2 * 0.25**2))
    np.testing.assert_allclose(rc.solver.initial_u1, expected)
    np.testing.assert_allclose(rc.solver.initial_u2, np.full_like(x, 1.5))


def test_all_violations_collected(tmp_path):
    body = """\
[model]
preset = "nonsense"
rho = -1.0

[grid]
length = 2.0

[noise]
seed = -1

[solver]
dt = 1e-3
t_final = 0.05

[initial]
[initial.plus]
kind = "wedge"
[initial.minus]
kind = "zero"

[extra]
x = 1
"""
    with pytest.raises(ConfigError) as exc:
        parse_config(write_config(tmp_path, body))
    text = "\n".join(exc.value.violations)
    assert "unknown key 'extra'" in text
    assert "model.preset" in text and "stefan" in text
    assert "grid.n: required" in text
    assert "noise.seed" in text
    assert "initial.plus.kind" in text
    assert len(exc.value.violations) >= 5


def test_unknown_key_inside_tables(tmp_path):
    body = STEFAN_BODY.replace("[grid]", "[grid]\nspacing = 0.1")
    with pytest.raises(ConfigError) as exc:
        parse_config(write_config(tmp_path, body))
    assert any("grid: unknown key 'spacing'" in v for v in exc.value.violations)


def test_physical_parameters_are_never_defaulted(tmp_path):
    body = STEFAN_BODY.replace("sigma_star = 0.4\n", "")
    with pytest.raises(ConfigError) as exc:
        parse_config(write_config(tmp_path, body))
    assert any(
        "model.sigma_star" in v and "no silent default" in v
        for v in exc.value.violations
    )


def test_missing_table_reported(tmp_path):
    body = STEFAN_BODY.replace("[noise]\nseed = 7\n", "")
    with pytest.raises(ConfigError) as exc:
        parse_config(write_config(tmp_path, body))
    assert any("missing required table [noise]" in v for v in exc.value.violations)


def test_toml_syntax_error_is_config_error(tmp_path):
    with pytest.raises(ConfigError) as exc:
        parse_config(write_config(tmp_path, "[model\npreset =", name="broken.toml"))
    assert any("TOML syntax" in v for v in exc.value.violations)


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(str(tmp_path / "absent.toml"))


def test_lob_requires_all_profile_tables(tmp_path):
    body = """\
[model]
preset = "lob"
eta_plus = 1.0
eta_minus = 1.0
kappa_plus = 1.0
kappa_minus = 1.0
sigma_star = 0.1
alpha_plus = 0.1
alpha_minus = 0.1

[grid]
length = 2.0
n = 24

[noise]
seed = 1

[solver]
dt = 1e-3
t_final = 0.01

[initial]
[initial.plus]
kind = "zero"
[initial.minus]
kind = "zero"
"""
    with pytest.raises(ConfigError) as exc:
        parse_config(write_config(tmp_path, body))
    text = "\n".join(exc.value.violations)
    for name in ("f_plus", "f_minus", "g_plus", "g_minus", "sigma_plus",
                 "sigma_minus", "rho_imbalance"):
        assert f"model.{name}" in text


def test_step_size_guard_enforced(tmp_path):
    body = STEFAN_BODY.replace("dt = 1e-3", "dt = 0.5")
    with pytest.raises(ConfigError) as exc:
        parse_config(write_config(tmp_path, body))
    assert any("stability guard" in v for v in exc.value.violations)


def test_round_trip_is_identity(tmp_path):
    rc = parse_config(write_config(tmp_path, STEFAN_BODY))
    echoed = tmp_path / "echo.toml"
    echoed.write_text(emit_toml(rc.effective))
    rc2 = parse_config(str(echoed))
    assert rc.effective == rc2.effective
    assert config_hash(rc.effective) == config_hash(rc2.effective)


def test_emit_toml_scalar_fidelity(tmp_path):
    table = {
        "a": {"flag": True, "count": 3, "x": 0.1, "inf_val": math.inf,
              "name": "weird \"quoted\" text", "arr": [1.5, 2.5]},
    }
    parsed = tomli.loads(emit_toml(table))
    assert parsed["a"]["flag"] is True
    assert parsed["a"]["count"] == 3
    assert parsed["a"]["x"] == 0.1
    assert parsed["a"]["inf_val"] == math.inf
    assert parsed["a"]["name"] == 'weird "quoted" text'
    assert parsed["a"]["arr"] == [1.5, 2.5]


def test_simulate_writes_expected_files(tmp_path):
    cfg = write_config(tmp_path, STEFAN_BODY)
    out = tmp_path / "out"
    assert main(["simulate", cfg, "--out", str(out)]) == 0
    names = sorted(os.listdir(out))
    assert "path.csv" in names and "effective_config.toml" in names
    assert "metadata.txt" in names
    assert {"fields_0.csv", "fields_10.csv", "fields_20.csv"} <= set(names)
    lines = (out / "path.csv").read_text().splitlines()
    assert lines[0] == "t,p,y_plus,y_minus,g_plus,g_minus,l2_u,h1_u"
    assert len(lines) == 1 + 21  # header + every step of a 20-step run
    meta = (out / "metadata.txt").read_text()
    assert "config_sha256=" in meta and "seed=7" in meta
    fields = (out / "fields_0.csv").read_text().splitlines()
    assert fields[0] == "x,side,value"
    assert len(fields) == 1 + 2 * 25  # both phases on a 24-cell grid


def test_output_stride_decimates_with_final_row(tmp_path):
    body = STEFAN_BODY + "\n[output]\ndirectory = \"unused\"\nstride = 7\n"
    cfg = write_config(tmp_path, body)
    out = tmp_path / "out"
    assert main(["simulate", cfg, "--out", str(out)]) == 0
    lines = (out / "path.csv").read_text().splitlines()
    # steps 0,7,14 plus the forced final step 20
    assert len(lines) == 1 + 4
    assert float(lines[-1].split(",")[0]) == pytest.approx(0.02)


def test_seed_override_changes_path_and_metadata(tmp_path):
    cfg = write_config(tmp_path, STEFAN_BODY)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", cfg, "--out", str(out1)]) == 0
    assert main(["simulate", cfg, "--out", str(out2), "--seed", "99"]) == 0
    assert (out1 / "path.csv").read_text() != (out2 / "path.csv").read_text()
    assert "seed=99" in (out2 / "metadata.txt").read_text()


def test_reruns_are_byte_identical(tmp_path):
    cfg = write_config(tmp_path, STEFAN_BODY)
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    for out in (out1, out2):
        assert main(["simulate", cfg, "--out", str(out)]) == 0
    for name in ("path.csv", "fields_0.csv", "fields_10.csv", "fields_20.csv",
                 "effective_config.toml"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
    # metadata may differ only in its timestamp line
    m1 = [l for l in (out1 / "metadata.txt").read_text().splitlines()
          if not l.startswith("created=")]
    m2 = [l for l in (out2 / "metadata.txt").read_text().splitlines()
          if not l.startswith("created=")]
    assert m1 == m2


def test_ensemble_outputs(tmp_path):
    cfg = write_config(tmp_path, STEFAN_BODY)
    out = tmp_path / "ens"
    assert main(["ensemble", cfg, "--paths", "3", "--threads", "1",
                 "--out", str(out)]) == 0
    rows = (out / "ensemble.csv").read_text().splitlines()
    assert rows[0].startswith("path,stop_kind,stop_threshold,stop_time")
    assert len(rows) == 1 + 3
    assert all(r.split(",")[1] == "completed" for r in rows[1:])
    stats = (out / "stats.csv").read_text().splitlines()
    assert len(stats) == 2  # single default checkpoint at t_final
    cells = dict(zip(stats[0].split(","), stats[1].split(",")))
    assert cells["n_paths"] == "3"
    assert cells["k_hat"] == "nan"  # melting-front preset is not the bounded regime


def test_threads_env_variable(tmp_path, monkeypatch):
    cfg = write_config(tmp_path, STEFAN_BODY)
    monkeypatch.setenv("MBSOLVE_THREADS", "2")
    assert main(["ensemble", cfg, "--paths", "2", "--out", str(tmp_path / "e")]) == 0
    monkeypatch.setenv("MBSOLVE_THREADS", "lots")
    assert main(["ensemble", cfg, "--paths", "2", "--out", str(tmp_path / "f")]) == 2


def test_run_error_exits_1(tmp_path):
    # a coverage window with no slack: the first interface move evaluates
    # the noise modes outside the tabulated range
    body = STEFAN_BODY.replace("[noise]\nseed = 7", "[noise]\nseed = 7\nz_max = 2.0")
    body = body.replace("sigma_star = 0.4", "sigma_star = 1.0")
    body = body.replace("dt = 1e-3", "dt = 5e-4")
    cfg = write_config(tmp_path, body)
    assert main(["simulate", cfg, "--out", str(tmp_path / "o")]) == 1


def test_config_error_exits_2(tmp_path):
    cfg = write_config(tmp_path, STEFAN_BODY.replace("n = 24", ""))
    assert main(["simulate", cfg, "--out", str(tmp_path / "o")]) == 2


def test_verify_operators_passes_and_writes_csv(tmp_path):
    out = tmp_path / "v"
    assert main(["verify", "operators", "--out", str(out)]) == 0
    rows = (out / "operators.csv").read_text().splitlines()
    assert rows[0] == "check,n,eta,kappa,c,lhs,rhs,ratio,pass"
    assert len(rows) > 10
    assert all(r.endswith(",true") for r in rows[1:])


def test_verify_toy_default_passes(capsys):
    assert main(["verify", "toy"]) == 0
    assert "pass" in capsys.readouterr().out


def test_verify_toy_coarse_ladder_fails():
    assert main(["verify", "toy", "--dts", "0.5,0.25,0.125"]) == 3


def test_verify_toy_ladder_validation():
    assert main(["verify", "toy", "--dts", "0.5,0.25"]) == 2
    assert main(["verify", "toy", "--dts", "4e-3,2e-3,1.5e-3"]) == 2


def test_presets_listing(capsys):
    assert main(["presets"]) == 0
    out = capsys.readouterr().out
    for name in ("stefan", "burgers", "lob", "custom"):
        assert name in out
