import os
import tempfile

import numpy as np
import pytest
from click.testing import CliRunner

from swarmflow.cli import cli
from swarmflow.constitutive import ConstitutiveSet
from swarmflow.convex_integration import build_density_potential, candidate_from_potential
from swarmflow.torus import ScalarField, TorusGrid, VectorField
from swarmflow.utils.io import read_json
from swarmflow.utils.presets import preset_names


@pytest.fixture
def runner():
    return CliRunner()


def _save_candidate(out_dir, lam, V0):
    grid = TorusGrid(2, 8)
    potential = build_density_potential(
        ScalarField.constant(grid, 1.0), ScalarField.constant(grid, 0.0), [0.0, 0.5], 0.5
    )
    zero = VectorField.constant(grid, [0.0, 0.0])
    candidate_from_potential(potential, zero, lam, ConstitutiveSet(), V0).save(out_dir)


def test_presets_command(runner):
    result = runner.invoke(cli, ["presets"])
    assert result.exit_code == 0
    assert result.output.split() == preset_names()

    result = runner.invoke(cli, ["presets", "--show", "cruise_translation"])
    assert result.exit_code == 0
    assert "scenario.pipeline = hydro" in result.output
    assert "friction.kind = linear" in result.output

    result = runner.invoke(cli, ["presets", "--show", "no_such_preset"])
    assert result.exit_code == 1


def test_run_command(runner):
    with tempfile.TemporaryDirectory() as tmp:
        out_dir = os.path.join(tmp, "run")
        result = runner.invoke(cli, ["--seed", "5", "run", "constant_state", "--output-dir", out_dir])
        assert result.exit_code == 0
        assert "verdict: pass" in result.output
        assert read_json(os.path.join(out_dir, "report.json"))["passed"] is True
        assert read_json(os.path.join(out_dir, "metadata.json"))["seed"] == 5


def test_run_command_with_unknown_scenario(runner):
    result = runner.invoke(cli, ["run", "no_such_scenario"])
    assert result.exit_code == 1


def test_run_command_with_invalid_config(runner):
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "broken.cfg")
        with open(path, "w") as f:
            f.write("scenario.name = broken\ngrid.dim 2\n")
        result = runner.invoke(cli, ["run", path])
        assert result.exit_code == 1


def test_run_command_reports_failed_checks(runner):
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "strict.cfg")
        with open(path, "w") as f:
            # a sine wave is not a steady state
            f.write("scenario.preset = constant_state\ntime.T = 0.1\ninitial.kind = sine\n")
        result = runner.invoke(cli, ["run", path])
        assert result.exit_code == 2
        assert "[FAIL] steady" in result.output


def test_audit_command(runner):
    with tempfile.TemporaryDirectory() as tmp:
        candidate_dir = os.path.join(tmp, "candidate")
        _save_candidate(candidate_dir, 1.0, [0.0, 0.0])
        out_dir = os.path.join(tmp, "audit")
        result = runner.invoke(cli, ["audit", candidate_dir, "--output-dir", out_dir])
        assert result.exit_code == 0
        assert "verdict: pass" in result.output
        assert os.path.exists(os.path.join(out_dir, "audit.csv"))
        audit = read_json(os.path.join(out_dir, "audit.json"))
        assert audit["passed"] is True
        assert audit["min_margin"] == pytest.approx(1.0)


def test_audit_command_fails_a_bad_candidate(runner):
    with tempfile.TemporaryDirectory() as tmp:
        candidate_dir = os.path.join(tmp, "candidate")
        _save_candidate(candidate_dir, 0.9, [1.0, 0.0])
        result = runner.invoke(cli, ["audit", candidate_dir, "--config", "subsolution_audit_basic"])
        assert result.exit_code == 2
        assert "verdict: fail" in result.output

        result = runner.invoke(cli, ["audit", os.path.join(tmp, "missing")])
        assert result.exit_code == 2


def test_ledger_command_replays_the_diagnostics(runner):
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "short.cfg")
        with open(path, "w") as f:
            f.write("scenario.preset = constant_state\ntime.T = 0.5\n")
        out_dir = os.path.join(tmp, "run")
        assert runner.invoke(cli, ["run", path, "--output-dir", out_dir]).exit_code == 0

        result = runner.invoke(cli, ["ledger", out_dir])
        assert result.exit_code == 0
        assert "[pass] d3" in result.output
        recorded = np.loadtxt(os.path.join(out_dir, "diagnostics.csv"), delimiter=",", skiprows=1)
        replayed = np.loadtxt(os.path.join(out_dir, "ledger.csv"), delimiter=",", skiprows=1)
        np.testing.assert_allclose(replayed, recorded, rtol=1e-12, atol=1e-14)

        result = runner.invoke(cli, ["ledger", os.path.join(tmp, "missing")])
        assert result.exit_code != 0


@pytest.mark.slow
def test_compare_command(runner):
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "compare.cfg")
        with open(path, "w") as f:
            f.write("scenario.preset = monokinetic_smooth\nparticles.n = 2000\ngrid.cells = 32\ntime.T = 0.25\n")
        out_dir = os.path.join(tmp, "compare")
        result = runner.invoke(cli, ["compare", path, "--output-dir", out_dir])
        assert result.exit_code in (0, 2)
        assert os.path.exists(os.path.join(out_dir, "monokinetic.csv"))
        assert os.path.exists(os.path.join(out_dir, "particles.csv"))
        report = read_json(os.path.join(out_dir, "report.json"))
        assert len(report["measurements"]["monokinetic.l1"]) == 6
