import os
import tempfile

import numpy as np
import pytest

from swarmflow.constitutive import ConstitutiveSet
from swarmflow.energy import total_energy
from swarmflow.errors import ConfigError
from swarmflow.relative_energy import GronwallFit, RelEnergyReport
from swarmflow.scenario import (
    EXIT_CHECK_FAILED,
    EXIT_PASS,
    PIPELINES,
    RunReport,
    _d3_refinement,
    _decreases_under_refinement,
    _drift_constitutive,
    _flock_drift,
    _rei_refinement,
    _shear_state,
    build_constitutive,
    build_grid,
    build_scheme,
    initial_data,
    resolve_config,
    run_scenario,
)
from swarmflow.torus import ScalarField, TorusGrid
from swarmflow.utils.config import ScenarioConfig
from swarmflow.utils.io import SNAPSHOT_DIR, read_json, read_snapshots
from swarmflow.utils.presets import load_preset, preset_names

EXPECTED_CHECKS = dict(
    constant_state=["mass", "d3", "steady"],
    cruise_translation=["mass", "d3", "steady"],
    flock_1d=["flock", "drift"],
    flock_disc=["flock"],
    perturbed_flock=["rei", "gronwall", "rei_refinement", "gronwall_stability"],
    random_smooth=["mass", "d3", "d3_refinement"],
    euler_poisson=["mass", "d3", "tzavaras"],
    subsolution_audit_basic=["continuity", "audit", "standard_inequality"],
    dissipative_lambda_demo=["dissipative_lambda"],
    monokinetic_smooth=["monokinetic"],
)


def _relative_energy(sup_energy, c):
    return RelEnergyReport(
        [0.0, 1.0], [0.0, sup_energy], np.zeros((2, 1)), [0.0, 0.0], 1.0, GronwallFit(c=c, verdict=True)
    )


def test_run_report():
    report = RunReport("sample")
    assert report.passed
    assert report.exit_code == EXIT_PASS

    report.check("mass", True, relative_drift=np.float64(1e-15))
    report.measure("l1", np.array([0.5, 0.25]))
    assert report.measurements["mass.relative_drift"] == 1e-15
    assert isinstance(report.measurements["mass.relative_drift"], float)
    assert report.measurements["l1"] == [0.5, 0.25]
    assert report.passed

    report.check("d3", False)
    report.notes.append("something happened")
    assert not report.passed
    assert report.exit_code == EXIT_CHECK_FAILED

    values = report.to_dict()
    assert values["checks"] == dict(mass=True, d3=False)
    assert values["passed"] is False
    text = report.to_text()
    assert "verdict: fail" in text
    assert "[FAIL] d3" in text
    assert "note: something happened" in text


def test_build_from_preset():
    config = load_preset("constant_state")
    grid = build_grid(config)
    assert grid.dim == 1
    assert grid.cells_per_axis == 64

    constitutive = build_constitutive(config)
    assert not constitutive.pressure.is_zero
    assert not constitutive.interaction.is_zero
    assert constitutive.friction.kind == "unit"

    scheme = build_scheme(config)
    assert scheme.flux == "rusanov"
    assert scheme.max_dt == 0.01


def test_build_errors_name_the_key():
    config = load_preset("constant_state")
    with pytest.raises(ConfigError) as excinfo:
        build_constitutive(config.with_overrides(pressure__kind="van_der_waals"))
    assert excinfo.value.key == "pressure.kind"

    with pytest.raises(ConfigError) as excinfo:
        build_constitutive(config.with_overrides(**{"kernel__K__kind": "no_such_kernel"}))
    assert excinfo.value.key == "kernel.K.kind"

    with pytest.raises(ConfigError) as excinfo:
        build_scheme(config.with_overrides(scheme__flux="roe"))
    assert excinfo.value.key == "scheme"


def test_initial_data():
    config = load_preset("cruise_translation")
    grid = build_grid(config)
    rho0, u0 = initial_data(config, grid)
    x = grid.centers()
    np.testing.assert_array_equal(rho0(x, x), 1.0)
    u = u0(x, x)
    np.testing.assert_array_equal(u[0], 1.0)
    np.testing.assert_array_equal(u[1], 0.0)

    with pytest.raises(ConfigError) as excinfo:
        initial_data(config.with_overrides(initial__u=[1.0, 0.0, 0.0]), grid)
    assert excinfo.value.key == "initial.u"
    with pytest.raises(ConfigError) as excinfo:
        initial_data(config.with_overrides(initial__kind="shock_tube"), grid)
    assert excinfo.value.key == "initial.kind"


def test_random_initial_data_follows_the_seed():
    config = load_preset("random_smooth")
    grid = build_grid(config)
    x = grid.centers()
    first = initial_data(config, grid)[0](x)
    np.testing.assert_array_equal(initial_data(config, grid)[0](x), first)
    assert not np.allclose(initial_data(config.with_overrides(runtime__seed=1), grid)[0](x), first)
    assert np.all(first > 0.0)


def test_resolve_config():
    assert resolve_config("constant_state") == load_preset("constant_state")

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "scenario.cfg")
        with open(path, "w") as f:
            f.write("scenario.preset = constant_state\ntime.T = 0.5\n")
        config = resolve_config(path)
        assert config.name == "constant_state"
        assert config["time.T"] == 0.5
        assert config["grid.cells"] == 64

        path = os.path.join(tmp, "standalone.cfg")
        load_preset("cruise_translation").save(path)
        assert resolve_config(path) == load_preset("cruise_translation")

    with pytest.raises(FileNotFoundError):
        resolve_config("no_such_scenario")


def test_unknown_pipeline():
    config = load_preset("constant_state").with_overrides(scenario__pipeline="magnetohydro")
    with pytest.raises(ConfigError) as excinfo:
        run_scenario(config)
    assert excinfo.value.key == "scenario.pipeline"


def test_every_preset_has_expected_checks():
    assert set(EXPECTED_CHECKS) == set(preset_names())
    assert set(PIPELINES) == {load_preset(name).pipeline for name in preset_names()}


def test_constant_state_run_writes_artifacts():
    config = load_preset("constant_state").with_overrides(time__T=0.5, time__outputs=5)
    with tempfile.TemporaryDirectory() as tmp:
        report = run_scenario(config, tmp)
        assert report.passed
        assert list(report.checks) == EXPECTED_CHECKS["constant_state"]

        for name in ("config.txt", "metadata.json", "report.json", "report.txt", "diagnostics.csv"):
            assert os.path.exists(os.path.join(tmp, name))
        assert ScenarioConfig.load(os.path.join(tmp, "config.txt")) == config

        metadata = read_json(os.path.join(tmp, "metadata.json"))
        assert metadata["fingerprint"] == config.fingerprint()
        assert metadata["seed"] == 0
        assert read_json(os.path.join(tmp, "report.json"))["passed"] is True

        snapshots = read_snapshots(os.path.join(tmp, SNAPSHOT_DIR))
        np.testing.assert_allclose(snapshots.times, [0.0, 0.1, 0.2, 0.3, 0.4, 0.5])


@pytest.mark.parametrize(
    "residuals, expected",
    [
        ([4e-3, 2e-3, 1e-3], True),
        ([1e-3, 1e-3, 1e-3], False),
        ([8e-3, 1e-3, 1.25e-4], False),
        ([4e-3, 2e-3, 0.0], False),
    ],
)
def test_d3_refinement_needs_first_order_decrease(monkeypatch, residuals, expected):
    remaining = list(residuals)

    def fake_check(report, trajectory, config, label="d3"):
        report.check(label, True)
        return remaining.pop(0)

    monkeypatch.setattr("swarmflow.scenario.run", lambda *args, **kwargs: None)
    monkeypatch.setattr("swarmflow.scenario._d3_check", fake_check)
    report = RunReport("random_smooth")
    _d3_refinement(load_preset("random_smooth"), report, progress=False)
    assert not remaining
    assert report.checks["d3_refinement"] is expected
    assert len(report.measurements["d3_refinement.rates"]) == 2


@pytest.mark.parametrize(
    "fine, rei_expected, stability_expected",
    [
        ([_relative_energy(1e-2, 1.1), _relative_energy(1e-4, 0.0)], True, True),
        ([_relative_energy(1e-2, 1.5), _relative_energy(1e-4, 0.0)], True, False),
        ([_relative_energy(1e-2, 1.0), _relative_energy(4e-4, 0.0)], False, True),
    ],
)
def test_rei_refinement_compares_two_resolutions(monkeypatch, fine, rei_expected, stability_expected):
    coarse = [(None, _relative_energy(1e-2, 1.0)), (None, _relative_energy(4e-4, 0.0))]
    monkeypatch.setattr(
        "swarmflow.scenario._weak_strong_level", lambda *args, **kwargs: (None, [(None, rel) for rel in fine])
    )
    report = RunReport("perturbed_flock")
    _rei_refinement(load_preset("perturbed_flock"), report, coarse, progress=False)
    assert report.checks["rei_refinement"] is rei_expected
    assert report.checks["gronwall_stability"] is stability_expected
    assert report.measurements["gronwall_stability.c"][0] == 1.0


def test_drift_keeps_regular_interaction_kernels():
    config = load_preset("flock_1d")
    grid = build_grid(config)
    report = RunReport("flock_1d")
    assert _drift_constitutive(config, grid, report).interaction.is_zero
    assert "singular on the torus" in report.notes[0]

    values = {key: value for (key, value) in config.to_dict().items() if not key.startswith("kernel.K.")}
    values.update({"kernel.K.kind": "cosine", "kernel.K.amplitude": 0.2})
    regular = ScenarioConfig.from_dict(values)
    report = RunReport("flock_1d")
    constitutive = _drift_constitutive(regular, grid, report)
    assert constitutive.interaction.kind == "cosine"
    assert constitutive.pressure.is_zero
    assert not report.notes


@pytest.mark.parametrize(
    "levels, expected",
    [
        ([(0.02, 0.2), (0.01, 0.1)], True),
        ([(0.02, 0.2), (0.02, 0.1)], False),
        ([(0.3, 0.2), (0.1, 0.1)], False),
    ],
)
def test_flock_drift_needs_bounded_first_order_drift(monkeypatch, levels, expected):
    remaining = [(drift, bound, None) for (drift, bound) in levels]
    monkeypatch.setattr("swarmflow.scenario._flock_drift_level", lambda *args, **kwargs: remaining.pop(0))
    report = RunReport("flock_1d")
    _flock_drift(load_preset("flock_1d"), report, None, progress=False)
    assert not remaining
    assert report.checks["drift"] is expected
    assert report.measurements["drift.l1_drift"] == [levels[0][0], levels[1][0]]


def test_monokinetic_decrease_holds_at_every_output_time():
    coarse = np.array([0.01, 0.02, 0.03, 0.04])
    assert _decreases_under_refinement(coarse, np.array([0.02, 0.01, 0.015, 0.02]))
    assert not _decreases_under_refinement(coarse, np.array([0.005, 0.03, 0.015, 0.02]))
    assert not _decreases_under_refinement(coarse, np.array([0.005, 0.01, 0.015, 0.05]))


def test_shear_state():
    grid = TorusGrid(2, 16)
    rho = ScalarField.from_function(grid, lambda x1, x2: 1.0 + 0.2 * np.cos(np.pi * x2))
    state = _shear_state(rho, 1.5)
    assert total_energy(state, ConstitutiveSet()).kinetic == pytest.approx(1.5 * grid.volume, rel=1e-12)
    assert np.abs(grid.divergence(state.m.values)).max() < 1e-12
    np.testing.assert_allclose(grid.mean(state.m.values), 0.0, atol=1e-14)

    with pytest.raises(ConfigError) as excinfo:
        _shear_state(ScalarField.constant(TorusGrid(1, 16), 1.0), 1.0)
    assert excinfo.value.key == "grid.dim"


def test_dissipative_lambda_follows_the_ledger():
    with tempfile.TemporaryDirectory() as tmp:
        report = run_scenario(load_preset("dissipative_lambda_demo"), tmp)
        assert os.path.exists(os.path.join(tmp, "diagnostics.csv"))
    assert list(report.checks) == EXPECTED_CHECKS["dissipative_lambda_demo"]
    assert report.passed, report.to_text()
    measurements = report.measurements
    assert len(measurements["dissipative_lambda.ledger_rate"]) == 5
    assert measurements["dissipative_lambda.certified"][0] is True
    assert all(measurements["dissipative_lambda.bounded"])
    assert measurements["dissipative_lambda.energy_slope"][0] <= measurements["dissipative_lambda.ledger_rate"][0]


@pytest.mark.slow
@pytest.mark.parametrize("name", preset_names())
def test_preset_scenarios(name):
    with tempfile.TemporaryDirectory() as tmp:
        report = run_scenario(load_preset(name), tmp)
        assert list(report.checks) == EXPECTED_CHECKS[name]
        assert read_json(os.path.join(tmp, "report.json"))["checks"] == report.checks
        assert report.passed, report.to_text()
