import os
import tempfile

import numpy as np
import pytest

from swarmflow.constitutive import (
    ConstitutiveSet,
    FrictionFunction,
    PressureLaw,
    communication_kernel,
    interaction_kernel,
)
from swarmflow.energy import (
    LedgerTracker,
    d3_residual,
    d3_tolerance,
    dissipation_rate,
    interaction_rate,
    total_energy,
)
from swarmflow.hydro.state import HydroState, Trajectory
from swarmflow.torus import ScalarField, TorusGrid, VectorField


def _state(grid, rho, u, t=0.0):
    if not callable(rho):
        rho_field = ScalarField.constant(grid, rho)
    else:
        rho_field = ScalarField.from_function(grid, rho)
    u_field = VectorField.from_function(grid, u) if callable(u) else VectorField.constant(grid, u)
    return HydroState.from_primitive(rho_field, u_field, t)


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_kinetic_energy_of_uniform_translation(dim):
    grid = TorusGrid(dim, 8)
    velocity = [1.0] + [0.0] * (dim - 1)
    energy = total_energy(_state(grid, 1.0, velocity), ConstitutiveSet())
    assert energy.kinetic == pytest.approx(2.0 ** (dim - 1))
    assert energy.total == energy.kinetic


def test_interaction_energy_of_uniform_density_vanishes():
    grid = TorusGrid(2, 16)
    constitutive = ConstitutiveSet(interaction=interaction_kernel("cosine"))
    energy = total_energy(_state(grid, 1.0, [0.0, 0.0]), constitutive)
    assert abs(energy.interaction) < 1e-14
    assert abs(energy.total) < 1e-14


def test_internal_and_interaction_energy():
    grid = TorusGrid(1, 32)
    law = PressureLaw.power_law(1.0, 2.0)
    constitutive = ConstitutiveSet(law, interaction_kernel("cosine"))
    state = _state(grid, lambda x: 1.0 + 0.5 * np.cos(np.pi * x), [0.0])

    energy = total_energy(state, constitutive)
    assert energy.internal == pytest.approx(grid.integrate(law.potential(state.rho.values)))
    # K * rho = 0.5 cos(pi x), so 1/2 int rho (K * rho) = 1/8
    assert energy.interaction == pytest.approx(0.125, abs=1e-12)
    assert energy.poisson == 0.0


def test_poisson_energy_is_positive_for_nonuniform_density():
    grid = TorusGrid(1, 32)
    state = _state(grid, lambda x: 1.0 + 0.5 * np.cos(np.pi * x), [0.0])
    # -lap Phi = rho - 1 gives Phi = 0.5 cos / pi^2
    expected = 0.5 * 0.25 / np.pi ** 2
    assert total_energy(state, ConstitutiveSet(), poisson=True).poisson == pytest.approx(expected, rel=1e-10)


def test_dissipation_vanishes_at_rest_and_for_flocks():
    grid = TorusGrid(2, 16)
    constitutive = ConstitutiveSet(communication=communication_kernel("gaussian"), friction=FrictionFunction("unit"))

    at_rest = dissipation_rate(_state(grid, lambda x1, x2: 1.0 + 0.3 * np.sin(np.pi * x1), [0.0, 0.0]), constitutive)
    assert at_rest.total == 0.0

    flock = dissipation_rate(_state(grid, lambda x1, x2: 1.0 + 0.3 * np.sin(np.pi * x1), [0.4, -0.2]), constitutive)
    assert abs(flock.alignment_term) < 1e-12
    assert flock.friction_term == 0.0
    assert flock.symmetric


def test_friction_vanishes_at_cruise_speed():
    grid = TorusGrid(1, 16)
    rate = dissipation_rate(_state(grid, 1.0, [0.5]), ConstitutiveSet(friction=FrictionFunction("linear", alpha=4.0)))
    assert abs(rate.friction_term) < 1e-14

    slow = dissipation_rate(_state(grid, 1.0, [0.25]), ConstitutiveSet(friction=FrictionFunction("linear", alpha=4.0)))
    assert slow.friction_term > 0.0


def test_alignment_with_all_to_all_communication():
    grid = TorusGrid(1, 32)
    constitutive = ConstitutiveSet(communication=communication_kernel("constant", value=1.0))
    rate = dissipation_rate(_state(grid, 1.0, lambda x: [np.sin(np.pi * x)]), constitutive)
    # -1/2 int int |u(x) - u(y)|^2 = -|Omega| int |u|^2 + |int u|^2
    assert rate.alignment_term == pytest.approx(-2.0, rel=1e-12)
    assert rate.total == pytest.approx(-2.0, rel=1e-12)


def test_alignment_matches_the_double_sum():
    grid = TorusGrid(2, 16)
    psi = communication_kernel("cucker_smale", strength=1.0, beta=0.5)
    state = _state(
        grid,
        lambda x, y: 1.0 + 0.3 * np.cos(np.pi * x) * np.sin(np.pi * y),
        lambda x, y: [np.sin(np.pi * y), 0.5 * np.cos(np.pi * (x + y))],
    )
    rate = dissipation_rate(state, ConstitutiveSet(communication=psi))

    points = np.stack([c.reshape(-1) for c in grid.coordinates()], axis=1)
    weights = state.rho.values.reshape(-1)
    velocity = state.velocity().reshape(grid.dim, -1).T
    kernel = psi(grid.wrap(points[:, None, :] - points[None, :, :]))
    jump = ((velocity[:, None, :] - velocity[None, :, :]) ** 2).sum(axis=-1)
    direct = -0.5 * grid.cell_volume ** 2 * np.sum(kernel * weights[:, None] * weights[None, :] * jump)
    assert rate.symmetric
    assert rate.alignment_term == pytest.approx(direct, abs=1e-12)


def test_non_symmetric_communication_is_flagged():
    grid = TorusGrid(1, 32)
    constitutive = ConstitutiveSet(communication=communication_kernel("shifted_gaussian", shift=0.25))
    rate = dissipation_rate(_state(grid, 1.0, lambda x: [np.sin(np.pi * x)]), constitutive)
    assert not rate.symmetric


def test_interaction_rate():
    grid = TorusGrid(1, 32)
    state = _state(grid, lambda x: 1.0 + 0.1 * np.cos(np.pi * x), lambda x: [np.zeros_like(x)])
    constitutive = ConstitutiveSet(interaction=interaction_kernel("cosine"))
    assert interaction_rate(state, constitutive) == 0.0

    m = VectorField.from_function(grid, lambda x: [np.sin(np.pi * x)])
    moving = HydroState(state.rho, m)
    # div m = pi cos, K * rho = 0.1 cos
    assert interaction_rate(moving, constitutive) == pytest.approx(-0.1 * np.pi, rel=1e-12)
    assert interaction_rate(moving, ConstitutiveSet()) == 0.0


def test_d3_tolerance():
    assert d3_tolerance(0.1, 0.01, 2.0) == pytest.approx(0.22)
    assert d3_tolerance(0.1, 0.01, 2.0, constant=0.5) == pytest.approx(0.11)


def test_d3_residual_of_steady_trajectory():
    grid = TorusGrid(1, 16)
    constitutive = ConstitutiveSet(PressureLaw.power_law(1.0, 1.4))
    states = [_state(grid, 1.0, [0.0], t) for t in (0.0, 0.5, 1.0)]
    result = d3_residual(Trajectory(states, max_step=0.01), constitutive)
    np.testing.assert_allclose(result.residual, 0.0, atol=1e-14)
    assert result.tolerance == pytest.approx((0.125 + 0.01) * 1.0)
    assert result.dissipative


def test_d3_residual_detects_energy_injection():
    grid = TorusGrid(1, 16)
    states = [_state(grid, 1.0, [speed], t) for (t, speed) in ((0.0, 0.0), (0.5, 0.5), (1.0, 1.0))]
    result = d3_residual(Trajectory(states), ConstitutiveSet())
    np.testing.assert_allclose(result.residual, [0.0, 0.25, 1.0])
    assert not result.dissipative


def test_ledger_tracker():
    grid = TorusGrid(2, 8)
    tracker = LedgerTracker(ConstitutiveSet(friction=FrictionFunction("linear", alpha=1.0)))
    tracker.record(_state(grid, 1.0, [1.0, 0.0], 0.0))
    tracker.record(_state(grid, 1.0, [1.0, 0.0], 0.5))

    assert tracker.columns[:4] == ["t", "mass", "momentum_1", "momentum_2"]
    assert tracker.columns[-1] == "d3_residual"
    table = tracker.table()
    assert table.shape == (2, len(tracker.columns))
    np.testing.assert_allclose(table[:, 1], 4.0)
    np.testing.assert_allclose(table[:, tracker.columns.index("kinetic_energy")], 2.0)
    np.testing.assert_allclose(table[:, -1], 0.0, atol=1e-14)

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "ledger.csv")
        tracker.write_csv(path)
        with open(path) as f:
            assert f.readline().strip() == ",".join(tracker.columns)
        loaded = np.loadtxt(path, delimiter=",", skiprows=1)
    np.testing.assert_array_equal(loaded, table)
