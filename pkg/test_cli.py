"""
End-to-end tests for the command-line front end
Run with: pytest test_cli.py -v
"""

import json
import math

import pandas as pd
import pytest

from cli import ConfigError, ExperimentConfig, main


def run(tmp_path, *argv):
    return main([*argv, "--out-dir", str(tmp_path)])


def load_result(path):
    payload = json.loads(path.read_text())
    assert set(payload) == {"command", "generated_at", "result"}
    return payload["result"]


# certify

def test_certify_example(tmp_path, capsys):
    status = run(tmp_path, "certify", "--op", "example", "--alpha", "0.5,0.5", "--p", "2",
                 "--samples", "100000", "--seed", "7")
    assert status == 0
    assert "✓" in capsys.readouterr().out
    report = load_result(tmp_path / "certify-example.json")
    assert report["min_margin"] >= -1e-10
    assert report["violation"] is False
    summary = pd.read_csv(tmp_path / "certify-example.csv")
    assert list(summary.columns) == ["operator", "alpha", "p", "samples", "seed", "min_margin", "violation"]


def test_certify_scale_two_reports_violation(tmp_path, capsys):
    status = run(tmp_path, "certify", "--op", "scale:2", "--alpha", "0.5,0.5", "--p", "1",
                 "--samples", "1000", "--seed", "7")
    assert status == 2
    out = capsys.readouterr().out
    assert "✗" in out
    assert "witness x" in out
    assert load_result(tmp_path / "certify-scale-2.json")["violation"] is True


def test_certify_identity(tmp_path):
    status = run(tmp_path, "certify", "--op", "identity", "--alpha", "1.0", "--p", "1", "--samples", "200")
    assert status == 0
    assert load_result(tmp_path / "certify-identity.json")["min_margin"] == 0.0


def test_certify_rejects_bad_multi_index(tmp_path, capsys):
    assert run(tmp_path, "certify", "--op", "example", "--alpha", "0.5,0.6", "--samples", "10") == 1
    assert "Error" in capsys.readouterr().out
    assert run(tmp_path, "certify", "--op", "rotation", "--samples", "10") == 1


@pytest.mark.parametrize("flags", [["--n", "5"], ["--start", "e2"], ["--ref", "zero"]])
def test_certify_rejects_orbit_flags(tmp_path, flags):
    assert run(tmp_path, "certify", "--op", "example", "--samples", "10", *flags) == 1
    assert not (tmp_path / "certify-example.json").exists()


def test_usage_errors_exit_one(tmp_path):
    assert run(tmp_path, "iterate", "--n", "many") == 1
    assert main(["frobnicate"]) == 1


def test_certify_plot_data(tmp_path):
    assert run(tmp_path, "certify", "--op", "example", "--samples", "100", "--plot-data") == 0
    lines = (tmp_path / "certify-example.dat").read_text().splitlines()
    assert len(lines) == 2
    j, bound = lines[0].split()
    assert float(j) == 1.0
    assert float(bound) >= math.sqrt(2.0) - 1e-12


def test_certify_is_deterministic(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    for out in (first, second):
        assert main(["certify", "--op", "example", "--samples", "5000", "--seed", "3",
                     "--workers", "2", "--out-dir", str(out)]) == 0
    assert load_result(first / "certify-example.json") == load_result(second / "certify-example.json")


# iterate

def test_iterate_example(tmp_path, capsys):
    status = run(tmp_path, "iterate", "--op", "example", "--start", "e3", "--n", "50", "--ref", "zero")
    assert status == 0
    assert "clusters = 1" in capsys.readouterr().out
    result = load_result(tmp_path / "iterate-example.json")
    assert result["distance_limit"]["q"] == 0.0
    assert result["distance_limit"]["converged"] is True
    assert len(result["weak_clusters"]["points"]) == 1
    assert result["demiclosed"] is True
    assert result["sandwich_failures"] == []

    trace = pd.read_csv(tmp_path / "iterate-example.csv")
    assert list(trace.columns) == ["n", "residual", "distance", "f1", "f2", "f3"]
    assert len(trace) == 51


def test_iterate_identity(tmp_path):
    assert run(tmp_path, "iterate", "--op", "identity", "--start", "e1", "--n", "10", "--ref", "e1") == 0
    assert load_result(tmp_path / "iterate-identity.json")["distance_limit"]["q"] == 0.0


def test_iterate_planar_halving(tmp_path):
    status = run(tmp_path, "iterate", "--op", "planar-halving", "--start", "1,1", "--n", "60",
                 "--ref", "1,0", "--plot-data")
    assert status == 0
    result = load_result(tmp_path / "iterate-planar-halving.json")
    assert result["distance_limit"]["q"] == pytest.approx(0.0, abs=1e-15)
    cluster = result["weak_clusters"]["points"][0]["coeffs"]
    assert cluster[0] == pytest.approx(1.0, abs=1e-6)
    assert cluster[1] == pytest.approx(0.0, abs=1e-6)
    assert len((tmp_path / "iterate-planar-halving.dat").read_text().splitlines()) == 61


def test_iterate_rejects_reference_that_is_not_fixed(tmp_path, capsys):
    assert run(tmp_path, "iterate", "--op", "example", "--start", "e3", "--n", "10", "--ref", "e1") == 1
    assert "residual" in capsys.readouterr().out


def test_iterate_accepts_negative_start(tmp_path):
    assert run(tmp_path, "iterate", "--op", "planar-halving", "--start", "-1,2", "--n", "20") == 0


# probe

def test_probe_opial(tmp_path, capsys):
    assert run(tmp_path, "probe", "opial", "--p", "2", "--v", "e1", "--n", "64") == 0
    result = load_result(tmp_path / "probe-opial.json")
    assert result["margin"] == pytest.approx(math.sqrt(2.0) - 1.0, abs=1e-10)


def test_probe_duality(tmp_path):
    assert run(tmp_path, "probe", "duality", "--p", "3", "--x", "1,-2") == 0
    result = load_result(tmp_path / "probe-duality.json")
    assert result["jx"]["coeffs"] == [1.0, -4.0]
    assert result["identity_holds"] is True
    assert result["weak_continuity"]["passed"] is True


def test_duality_subcommand_on_short_sequence(tmp_path, capsys):
    assert run(tmp_path, "probe", "duality", "--p", "2", "--n", "20") == 0
    assert capsys.readouterr().out.startswith("✓")
    assert load_result(tmp_path / "probe-duality.json")["weak_continuity"]["passed"] is True


def test_probe_duality_rejects_l1(tmp_path):
    assert run(tmp_path, "probe", "duality", "--p", "1") == 1


def test_probe_modulus(tmp_path):
    assert run(tmp_path, "probe", "modulus", "--p", "2", "--eps", "1", "--samples", "200000", "--plot-data") == 0
    result = load_result(tmp_path / "probe-modulus.json")
    analytic = 1.0 - math.sqrt(3.0) / 2.0
    assert analytic - 1e-12 <= result["estimate"]["delta"] <= analytic + 5e-3
    curve = pd.read_csv(tmp_path / "probe-modulus.csv")
    assert curve["epsilon"].tolist() == [0.25, 0.5, 1.0, 1.5, 2.0]
    assert curve["delta"].is_monotonic_increasing
    assert len((tmp_path / "probe-modulus.dat").read_text().splitlines()) == 5


def test_probe_center(tmp_path, capsys):
    status = run(tmp_path, "probe", "center", "--op", "planar-halving", "--start", "1,1", "--grid", "-2:2:0.01")
    assert status == 0
    result = load_result(tmp_path / "probe-center.json")
    y0 = result["center"]["y0"]["coeffs"]
    assert y0[0] == pytest.approx(1.0, abs=1e-9)
    assert y0[1] == 0.0
    assert result["center"]["r0"] <= 1e-8
    assert result["level_set_diameter"] <= 0.02
    assert len(pd.read_csv(tmp_path / "probe-center.csv")) == 401


def test_probe_center_rejects_candidates_that_are_not_fixed(tmp_path):
    assert run(tmp_path, "probe", "center", "--op", "example", "--start", "e3", "--grid", "0:1:0.5") == 1


# corpus and configuration

def test_corpus(tmp_path, capsys):
    assert run(tmp_path, "corpus") == 0
    out = capsys.readouterr().out
    for name in ("example", "identity", "scale:0.5", "planar-halving", "shift"):
        assert name in out
    assert len(load_result(tmp_path / "corpus.json")) == 5


def test_config_round_trip():
    config = ExperimentConfig(operator="scale:0.5", alpha=(0.25, 0.75), p=1.5, reference="e1",
                              steps=17, seed=9, gauge=2.0, plot_data=True, tol=1e-9)
    assert ExperimentConfig.from_ini(config.to_ini()) == config
    assert ExperimentConfig.from_ini(ExperimentConfig().to_ini()) == ExperimentConfig()


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_ini("[experiment]\ncolour = blue\n")


def test_config_file_with_flag_override(tmp_path):
    config_file = tmp_path / "identity.ini"
    config_file.write_text("[experiment]\noperator = identity\nalpha = 1.0\np = 1\nsamples = 100\n")
    assert run(tmp_path, "certify", "--config", str(config_file)) == 0
    assert (tmp_path / "certify-identity.json").exists()

    assert run(tmp_path, "certify", "--config", str(config_file), "--op", "scale:2") == 2
    assert (tmp_path / "certify-scale-2.json").exists()


def test_missing_config_file(tmp_path):
    assert run(tmp_path, "corpus", "--config", str(tmp_path / "missing.ini")) == 1
