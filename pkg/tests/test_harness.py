import dataclasses
import subprocess
import sys

import numpy as np
import pytest

from sgdlab.errors import ConfigError, InvalidArgument
from sgdlab.harness.cli import main
from sgdlab.harness.config import (
    ExperimentConfig,
    build_distribution,
    build_domain,
    build_loss,
    build_schedule,
    config_hash,
    parse_config,
    serialize_config,
    steps_for,
    validate_config,
)
from sgdlab.harness.experiments import CsvRow, run_experiment, write_csv
from sgdlab.harness.ratefit import fit_loglog_slope

FULL_TEXT = """
# exercises every section
[experiment]
kind = stability-sweep
n_grid = 8, 16, 32
T_rule = n_pow
T_pow = 1.5
replicates = 40
neighbor_subsample = 4
master_seed = 11
threads = 2
mc_pop = 1000
delta = 0.05
epochs = 3
draws = 500

[loss]
kind = q_hinge
q = 1.5

[distribution]
kind = margin_classif
w_star = 1.0, 0.0, 0.0
cov = 0.25
flip_prob = 0.1

[schedule]
kind = poly_decay
eta1 = 0.1
theta = 0.6

[domain]
kind = ball
radius = 2.5
"""


def _properties_text(out, draws=60, seed=3):
    return (f"[experiment]\nkind = properties\ndraws = {draws}\n"
            f"master_seed = {seed}\nout_path = {out}\n")


def _write(tmp_path, text, name="cfg.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------

def test_parse_round_trip():
    cfg = parse_config(FULL_TEXT)
    again = parse_config(serialize_config(cfg))
    assert again == cfg
    assert cfg.n_grid == (8, 16, 32)
    assert cfg.T_pow == 1.5 and cfg.neighbor_subsample == 4
    assert cfg.loss_q == 1.5 and cfg.w_star == (1.0, 0.0, 0.0)
    assert cfg.domain_kind == "ball" and cfg.radius == 2.5


def test_parse_repr_floats_round_trip():
    # repr-based serialization must survive awkward floats exactly
    cfg = parse_config(FULL_TEXT)
    cfg = dataclasses.replace(cfg, eta1=0.1 + 2e-17, T_pow=1 / 3)
    again = parse_config(serialize_config(cfg))
    assert again.eta1 == cfg.eta1 and again.T_pow == cfg.T_pow


def test_parse_subsample_all_keyword():
    text = _properties_text("out") + "neighbor_subsample = all\n"
    assert parse_config(text).neighbor_subsample is None


def test_parse_error_line_numbers():
    with pytest.raises(ConfigError, match="line 2.*unknown section"):
        parse_config("[experiment]\n[nonsense]\nkind = properties\n")
    with pytest.raises(ConfigError, match="line 3.*unknown key"):
        parse_config("[experiment]\nkind = properties\nwat = 1\n")
    with pytest.raises(ConfigError, match="line 3.*duplicate"):
        parse_config("[experiment]\nkind = properties\nkind = oracle\n")
    with pytest.raises(ConfigError, match="line 1.*outside"):
        parse_config("kind = properties\n")
    with pytest.raises(ConfigError, match="line 2.*key = value"):
        parse_config("[experiment]\njust words\n")
    with pytest.raises(ConfigError, match="line 3.*integer"):
        parse_config("[experiment]\nkind = properties\ndraws = many\n")
    with pytest.raises(ConfigError, match="kind"):
        parse_config("[loss]\nkind = least_squares\n")  # missing experiment kind


def test_config_hash_identity():
    cfg = parse_config(FULL_TEXT)
    h = config_hash(cfg)
    assert len(h) == 12 and int(h, 16) >= 0
    # threads / out_path are execution details, not experiment identity
    assert config_hash(dataclasses.replace(cfg, threads=8)) == h
    assert config_hash(dataclasses.replace(cfg, out_path="elsewhere")) == h
    assert config_hash(dataclasses.replace(cfg, replicates=41)) != h
    assert config_hash(dataclasses.replace(cfg, master_seed=12)) != h


def test_validate_config_rules():
    ok = parse_config(FULL_TEXT)
    validate_config(ok)
    bad = [
        dict(n_grid=()),
        dict(n_grid=(4, 4)),
        dict(n_grid=(8, 4)),
        dict(n_grid=(0,)),
        dict(T_rule="linear"),
        dict(T_rule="n_pow", T_pow=None),
        dict(replicates=0),
        dict(threads=0),
        dict(draws=0),
        dict(experiment="bound-check", target=None),
        dict(experiment="bound-check", target="thm99"),
        dict(output="median"),
        dict(loss_kind="l0"),
        dict(dist_kind="cauchy"),
        dict(sched_kind="cosine"),
        dict(domain_kind="box"),
        dict(domain_kind="ball", radius=None),
        dict(domain_kind="ball", radius=0.0),
        dict(delta=0.0),
        dict(delta=1.0),
        dict(epochs=0),
    ]
    for overrides in bad:
        with pytest.raises(ConfigError):
            validate_config(dataclasses.replace(ok, **overrides))


def test_steps_for_rules():
    cfg = ExperimentConfig(experiment="stability-sweep")
    assert steps_for(cfg, 16) == 16
    assert steps_for(dataclasses.replace(cfg, T_rule="n_squared"), 16) == 256
    half = dataclasses.replace(cfg, T_rule="n_pow", T_pow=0.5)
    assert steps_for(half, 16) == 4
    assert steps_for(half, 17) == 5  # ceil


def test_builders():
    cfg = parse_config(FULL_TEXT)
    loss = build_loss(cfg)
    assert loss.kind == "q_hinge" and loss.alpha == 0.5
    dist = build_distribution(cfg)
    assert dist.kind == "margin_classif" and dist.dim == 3
    dom = build_domain(cfg)
    assert dom is not None and dom.radius == 2.5
    sched = build_schedule(cfg, horizon=32)
    np.testing.assert_allclose(sched.etas(3), 0.1 * np.arange(1, 4) ** -0.6)
    # omitting q falls back to the plain hinge
    assert build_loss(dataclasses.replace(cfg, loss_q=None)).alpha == 0.0
    with pytest.raises(ConfigError, match="bad loss parameters"):
        build_loss(dataclasses.replace(cfg, loss_q=7.0))
    with pytest.raises(ConfigError, match=r"\[schedule\]"):
        build_schedule(dataclasses.replace(cfg, sched_kind=None), horizon=8)
    with pytest.raises(ConfigError, match="w_star"):
        build_distribution(dataclasses.replace(cfg, w_star=None))


# ---------------------------------------------------------------------------
# rate fit
# ---------------------------------------------------------------------------

def test_fit_loglog_frozen_slope():
    fit = fit_loglog_slope([(1.0, 1.0), (2.0, 0.5), (4.0, 0.25)])
    assert fit.slope == pytest.approx(-1.0, abs=1e-12)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
    fit2 = fit_loglog_slope([(2.0, 3.0), (4.0, 3.0), (8.0, 3.0)])
    assert fit2.slope == pytest.approx(0.0, abs=1e-12)
    assert fit2.r_squared == 1.0  # flat fit of a constant is perfect


def test_fit_loglog_validation():
    with pytest.raises(InvalidArgument):
        fit_loglog_slope([(1.0, 1.0), (2.0, 0.5)])
    with pytest.raises(InvalidArgument):
        fit_loglog_slope([(1.0, 1.0), (2.0, 0.0), (4.0, 0.25)])
    with pytest.raises(InvalidArgument):
        fit_loglog_slope([(0.0, 1.0), (2.0, 0.5), (4.0, 0.25)])


# ---------------------------------------------------------------------------
# csv
# ---------------------------------------------------------------------------

def test_csv_exact_formatting(tmp_path):
    rows = [
        CsvRow("oracle", "abcdef012345", 7, 2, 4, None, "l1_mc", 0.1, None, 2.0, True),
        CsvRow("oracle", "abcdef012345", 7, None, None, 0.75, "slope", -1.0,
               0.001953125, None, False),
    ]
    path = tmp_path / "rows.csv"
    write_csv(str(path), rows)
    lines = path.read_text().splitlines()
    assert lines[0] == "experiment,config_hash,seed,n,T,theta,metric,value,stderr,bound_rhs,satisfied"
    assert lines[1] == "oracle,abcdef012345,7,2,4,,l1_mc,0.10000000000000001,,2,1"
    assert lines[2] == "oracle,abcdef012345,7,,,0.75,slope,-1,0.001953125,,0"


def test_properties_experiment_rows(tmp_path):
    out = tmp_path / "res"
    cfg = parse_config(_properties_text(out, draws=40, seed=9))
    assert run_experiment(cfg) == 0
    lines = (out / "properties.csv").read_text().splitlines()
    assert len(lines) > 10
    header = lines[0].split(",")
    for line in lines[1:]:
        cells = line.split(",")
        assert len(cells) == len(header)
        assert cells[0] == "properties"
        assert cells[2] == "9"
        assert cells[3] == cells[4] == cells[5] == ""  # no n/T/theta
        assert ":" in cells[6]
        assert cells[7] == "0"     # zero failures
        assert cells[9] == "0"     # bound_rhs
        assert cells[10] == "1"    # satisfied
    names = {line.split(",")[6] for line in lines[1:]}
    assert any(m.startswith("self_bounding:") for m in names)
    assert any(m.startswith("nonexpansive:") for m in names)


def test_oracle_experiment_smoke(tmp_path):
    out = tmp_path / "res"
    text = (f"[experiment]\nkind = oracle\nn_grid = 2, 3\nreplicates = 600\n"
            f"master_seed = 4\nout_path = {out}\n"
            "[loss]\nkind = least_squares\n"
            "[distribution]\nkind = gauss_lin_reg\nw_star = 1.0, 0.0\n"
            "cov = 0.5\nnoise_sd = 0.3\n"
            "[schedule]\nkind = fixed_constant\neta1 = 0.1\n")
    cfg = parse_config(text)
    assert run_experiment(cfg) == 0
    lines = (out / "oracle.csv").read_text().splitlines()
    metrics = [line.split(",")[6] for line in lines[1:]]
    assert metrics == ["l1_mc", "l1_exact", "l1_agreement",
                       "l2_sq_mc", "l2_sq_exact", "l2_sq_agreement"] * 2


# ---------------------------------------------------------------------------
# cli
# ---------------------------------------------------------------------------

def test_cli_pass_and_seed_out_overrides(tmp_path):
    cfg_path = _write(tmp_path, _properties_text(tmp_path / "ignored", draws=40))
    out = tmp_path / "cli_out"
    code = main(["properties", "--config", cfg_path, "--seed", "42",
                 "--out", str(out)])
    assert code == 0
    lines = (out / "properties.csv").read_text().splitlines()
    assert all(line.split(",")[2] == "42" for line in lines[1:])


def test_cli_config_error_exit_2(tmp_path):
    bad = _write(tmp_path, "[experiment]\nkind = properties\nwat = 1\n")
    assert main(["properties", "--config", bad]) == 2
    missing = str(tmp_path / "definitely_not_here.ini")
    assert main(["properties", "--config", missing]) == 2


def test_cli_resource_limit_exit_3(tmp_path):
    # n = 8, T = 8 needs 8^8 > 10^6 enumerated sequences
    out = tmp_path / "res"
    text = (f"[experiment]\nkind = oracle\nn_grid = 8\nreplicates = 10\n"
            f"out_path = {out}\n"
            "[loss]\nkind = least_squares\n"
            "[distribution]\nkind = gauss_lin_reg\nw_star = 1.0\ncov = 1.0\n"
            "noise_sd = 0.1\n"
            "[schedule]\nkind = fixed_constant\neta1 = 0.1\n")
    assert main(["oracle", "--config", _write(tmp_path, text)]) == 3


def test_cli_gate_failure_exit_1(tmp_path):
    out = tmp_path / "res"
    text = (f"[experiment]\nkind = rate-fit\nn_grid = 4, 8, 16\nreplicates = 8\n"
            f"master_seed = 1\nslope_gate = -5.0\nout_path = {out}\n"
            "[loss]\nkind = least_squares\n"
            "[distribution]\nkind = realizable_lin_reg\nw_star = 1.0, 0.0\ncov = 0.5\n"
            "[schedule]\nkind = fixed_constant\neta1 = 0.05\n")
    assert main(["rate-fit", "--config", _write(tmp_path, text)]) == 1
    lines = (out / "rate-fit.csv").read_text().splitlines()
    slope_rows = [l for l in lines if l.split(",")[6] == "slope"]
    assert len(slope_rows) == 1 and slope_rows[0].split(",")[10] == "0"


def test_cli_lab_threads_env(tmp_path, monkeypatch):
    cfg_path = _write(tmp_path, _properties_text(tmp_path / "res", draws=30))
    monkeypatch.setenv("LAB_THREADS", "junk")
    assert main(["properties", "--config", cfg_path]) == 2
    monkeypatch.setenv("LAB_THREADS", "2")
    assert main(["properties", "--config", cfg_path]) == 0


def test_cli_thread_invariance_bytes(tmp_path):
    out1, out2 = tmp_path / "t1", tmp_path / "t4"
    text = ("[experiment]\nkind = stability-sweep\nn_grid = 4, 6\nreplicates = 12\n"
            "master_seed = 5\n"
            "[loss]\nkind = least_squares\n"
            "[distribution]\nkind = gauss_lin_reg\nw_star = 1.0, 0.0\ncov = 0.5\n"
            "noise_sd = 0.3\n"
            "[schedule]\nkind = fixed_constant\neta1 = 0.1\n")
    cfg_path = _write(tmp_path, text)
    assert main(["stability-sweep", "--config", cfg_path, "--out", str(out1),
                 "--threads", "1"]) == 0
    assert main(["stability-sweep", "--config", cfg_path, "--out", str(out2),
                 "--threads", "4"]) == 0
    b1 = (out1 / "stability-sweep.csv").read_bytes()
    b2 = (out2 / "stability-sweep.csv").read_bytes()
    assert b1 == b2


def test_console_script_installed(tmp_path):
    cfg_path = _write(tmp_path, _properties_text(tmp_path / "res", draws=20))
    proc = subprocess.run(["lab", "properties", "--config", cfg_path],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc2 = subprocess.run(["lab", "--help"], capture_output=True, text=True)
    assert proc2.returncode == 0
    assert "bound-check" in proc2.stdout
