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
from swarmflow.convex_integration import (
    SubsolutionCandidate,
    _slice_margin,
    assemble_Xi,
    build_density_potential,
    candidate_from_initial_data,
    candidate_from_potential,
    dissipation_bound_constant,
    dissipative_lambda,
    energy_constraint_e,
    find_lambda0,
    kinetic_energy_defect,
    mean_free,
    solve_elliptic_M,
    solve_V_ode,
    standard_inequality_check,
    standard_inequality_slack,
    subsolution_check,
)
from swarmflow.errors import (
    DissipationBoundUnavailable,
    InadmissibleDensityPotential,
    NonPositiveEnergy,
    NonZeroMean,
)
from swarmflow.torus import ScalarField, SymTensorField, TorusGrid, VectorField


@pytest.fixture
def grid():
    return TorusGrid(2, 8)


@pytest.fixture
def flat_potential(grid):
    return build_density_potential(ScalarField.constant(grid, 1.0), ScalarField.constant(grid, 0.0), [0.0, 0.5], 0.5)


def _random_trace_free(rng, count, dim):
    a = rng.normal(size=(count, dim, dim))
    a = 0.5 * (a + np.swapaxes(a, 1, 2))
    return a - np.trace(a, axis1=1, axis2=2)[:, None, None] * np.eye(dim) / dim


def test_density_potential_without_phi_is_constant(grid, flat_potential):
    assert flat_potential.epsilon == 1.0
    for rho in flat_potential.rho():
        np.testing.assert_array_equal(rho.values, 1.0)
    assert flat_potential.continuity_defect() == 0.0


def test_density_potential_cosine_closed_form():
    grid = TorusGrid(1, 32)
    rho0 = ScalarField.constant(grid, 1.0)
    phi0 = ScalarField.from_function(grid, lambda x: 0.1 * np.cos(np.pi * x))
    potential = build_density_potential(rho0, phi0, [0.0, 0.5, 1.0], 0.5)

    eps = potential.epsilon
    assert 0.01 < eps < 1.0
    (x,) = grid.coordinates()
    for t in (0.0, 0.5, 1.0):
        rho, phi, phi_t, _ = potential.at(t)
        expected = 1.0 + eps * (1.0 - np.exp(-t / eps)) * np.pi ** 2 * 0.1 * np.cos(np.pi * x)
        np.testing.assert_allclose(rho, expected, atol=1e-12)
        np.testing.assert_allclose(phi, np.exp(-t / eps) * 0.1 * np.cos(np.pi * x), atol=1e-14)
        np.testing.assert_allclose(phi_t, -phi / eps, atol=1e-14)

    # the floor is reached exactly at the last time
    assert potential.at(1.0)[0].min() == pytest.approx(0.5, abs=1e-9)
    assert potential.continuity_defect() < 1e-10


def test_density_potential_rejects_bad_input():
    grid = TorusGrid(1, 32)
    rho0 = ScalarField.constant(grid, 1.0)
    huge = ScalarField.from_function(grid, lambda x: 100.0 * np.cos(np.pi * x))
    with pytest.raises(InadmissibleDensityPotential):
        build_density_potential(rho0, huge, [0.0, 1.0], 0.5)
    with pytest.raises(InadmissibleDensityPotential):
        build_density_potential(rho0, ScalarField.constant(grid, 0.0), [0.0, 1.0], 2.0)
    with pytest.raises(NonZeroMean):
        build_density_potential(rho0, ScalarField.constant(grid, 1.0), [0.0, 1.0], 0.5)


def test_energy_constraint(grid):
    rho = ScalarField.constant(grid, 1.0)
    phi_t = ScalarField.constant(grid, 0.0)
    e = energy_constraint_e(1.0, rho, phi_t, ConstitutiveSet().pressure)
    np.testing.assert_array_equal(e.values, 1.0)
    with pytest.raises(NonPositiveEnergy):
        energy_constraint_e(0.0, rho, phi_t, ConstitutiveSet().pressure)


@pytest.mark.parametrize("h0", [0.5, 1.0, 3.0])
def test_mean_momentum_ode_with_constant_friction(grid, h0):
    potential = build_density_potential(
        ScalarField.constant(grid, 1.0), ScalarField.constant(grid, 0.0), [0.0, 0.5, 1.0], 0.5
    )
    constitutive = ConstitutiveSet(friction=FrictionFunction("constant", alpha=h0))
    V = solve_V_ode(potential, VectorField.constant(grid, [0.0, 0.0]), 1.0, constitutive, [1.0, -2.0])
    expected = np.outer(np.exp(-(h0 - 1.0) * potential.times), [1.0, -2.0])
    np.testing.assert_allclose(V, expected, rtol=1e-5)


def test_assemble_xi_vanishes_for_trivial_data(grid):
    constitutive = ConstitutiveSet(
        interaction=interaction_kernel("cosine"), communication=communication_kernel("gaussian")
    )
    rho = ScalarField.constant(grid, 1.0)
    xi = assemble_Xi(
        VectorField.constant(grid, [0.0, 0.0]),
        np.zeros(2),
        ScalarField.constant(grid, 0.0),
        rho,
        ScalarField.constant(grid, 1.0),
        constitutive,
    )
    assert np.abs(xi.values).max() < 1e-14
    np.testing.assert_allclose(mean_free(xi).values, 0.0, atol=1e-14)


def test_elliptic_corrector_solves_divergence_equation(grid):
    zero = solve_elliptic_M(VectorField.constant(grid, [0.0, 0.0]))
    assert zero.trace_free
    assert np.abs(zero.to_matrix()).max() == 0.0

    G = VectorField.from_function(grid, lambda x1, x2: [np.sin(np.pi * x2), np.cos(np.pi * x1) + np.sin(np.pi * x1)])
    M = solve_elliptic_M(G).to_matrix()
    divergence = np.stack([sum(grid.gradient(M[..., i, j])[j] for j in range(2)) for i in range(2)])
    np.testing.assert_allclose(-divergence, G.values, atol=1e-10)
    np.testing.assert_allclose(M[..., 0, 0] + M[..., 1, 1], 0.0, atol=1e-12)

    with pytest.raises(ValueError):
        solve_elliptic_M(VectorField.constant(TorusGrid(1, 8), [0.0]))
    with pytest.raises(NonZeroMean):
        solve_elliptic_M(VectorField.constant(grid, [1.0, 0.0]))


def test_trivial_candidate_has_unit_margin(grid, flat_potential):
    zero = VectorField.constant(grid, [0.0, 0.0])
    candidate = candidate_from_potential(flat_potential, zero, 1.0, ConstitutiveSet(), [0.0, 0.0])
    report = subsolution_check(candidate, ConstitutiveSet())
    assert report.min_margin == pytest.approx(1.0)
    assert report.passed
    assert report.worst_time == 0.5
    np.testing.assert_allclose(kinetic_energy_defect(candidate), -4.0)


@pytest.mark.parametrize("lam, passed", [(1.5, True), (1.0, False), (0.9, False)])
def test_translation_candidate_needs_lambda_above_one(grid, flat_potential, lam, passed):
    constitutive = ConstitutiveSet()
    zero = VectorField.constant(grid, [0.0, 0.0])
    candidate = candidate_from_potential(flat_potential, zero, lam, constitutive, [1.0, 0.0])
    np.testing.assert_allclose(candidate.V, [[1.0, 0.0], [1.0, 0.0]])
    report = subsolution_check(candidate, constitutive, threads=2)
    assert report.min_margin == pytest.approx(lam - 1.0, abs=1e-12)
    assert report.passed is passed


def test_find_lambda0(grid, flat_potential):
    zero = VectorField.constant(grid, [0.0, 0.0])
    constitutive = ConstitutiveSet()

    at_rest = find_lambda0(zero, flat_potential, constitutive)
    assert 0.0 < at_rest < 1e-5

    translating = find_lambda0(zero, flat_potential, constitutive, V0=[1.0, 0.0])
    assert 1.0 < translating < 1.0 + 1e-5


def test_standard_inequality_equality_case():
    rng = np.random.RandomState(0)
    for dim in (2, 3):
        h = rng.normal(size=dim)
        r = 0.7
        H_tilde = np.outer(h, h) / r - np.dot(h, h) / (dim * r) * np.eye(dim)
        assert standard_inequality_slack(h, r, H_tilde) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("dim", [2, 3])
def test_standard_inequality_random(dim):
    rng = np.random.RandomState(dim)
    count = 100000
    h = rng.normal(size=(count, dim))
    r = rng.uniform(0.1, 2.0, size=count)
    H_tilde = _random_trace_free(rng, count, dim)
    assert standard_inequality_slack(h, r, H_tilde).min() >= -1e-12
    assert standard_inequality_check(np.zeros((count, dim)), np.ones(count), H_tilde)

    with pytest.raises(ValueError):
        standard_inequality_slack(h[:1], r[:1], np.eye(dim)[np.newaxis])


def test_dissipation_bound_constant(grid):
    constitutive = ConstitutiveSet(communication=communication_kernel("constant", value=1.0))
    assert dissipation_bound_constant(constitutive, grid, mass=4.0) == pytest.approx(2.0 * 4.0 * 8.0)

    clipped = ConstitutiveSet(friction=FrictionFunction("clipped", alpha=1.0, bound=3.0))
    assert dissipation_bound_constant(clipped, grid, mass=4.0) == pytest.approx(16.0)

    with pytest.raises(DissipationBoundUnavailable):
        dissipation_bound_constant(ConstitutiveSet(friction=FrictionFunction("linear")), grid, mass=4.0)


def test_dissipative_lambda():
    assert dissipative_lambda(1.0, 0.0, 4.0).rate == 1.0

    result = dissipative_lambda(5.0, 1.0, 4.0)
    assert result.rate == 2.0
    assert result.schedule(0.0) == pytest.approx(6.0)
    assert result.schedule(1.0) == pytest.approx(5.0 + np.exp(-2.0))

    with pytest.raises(DissipationBoundUnavailable):
        dissipative_lambda(1.0, None, 4.0)
    with pytest.raises(DissipationBoundUnavailable):
        dissipative_lambda(1.0, 1e9, 4.0)


def test_candidate_from_initial_data(grid):
    m0 = VectorField.from_function(grid, lambda x1, x2: [1.0 + 0.1 * np.sin(np.pi * x1), np.zeros_like(x1)])
    candidate = candidate_from_initial_data(
        ScalarField.constant(grid, 1.0), m0, [0.0, 0.25], 2.0, ConstitutiveSet(), rho_floor=0.5
    )
    np.testing.assert_allclose(candidate.V[0], [1.0, 0.0], atol=1e-14)
    assert np.abs(candidate.v[0].values).max() < 1e-12
    phi0 = candidate.phi[0].values
    np.testing.assert_allclose(grid.gradient(phi0), m0.values - np.array([1.0, 0.0]).reshape(2, 1, 1), atol=1e-12)


def test_candidate_validation(grid):
    rho = [ScalarField.constant(grid, 1.0)]
    phi = [ScalarField.constant(grid, 0.0)]
    F = [SymTensorField.zeros(grid)]
    compressible = VectorField.from_function(grid, lambda x1, x2: [np.sin(np.pi * x1), np.zeros_like(x1)])
    with pytest.raises(ValueError):
        SubsolutionCandidate([0.0], [compressible], F, rho, phi, phi, [[0.0, 0.0]], 1.0)
    with pytest.raises(ValueError):
        SubsolutionCandidate([0.0, 1.0], [VectorField.constant(grid, [0.0, 0.0])], F, rho, phi, phi, [[0.0, 0.0]], 1.0)


def test_candidate_save_and_load(grid, flat_potential):
    constitutive = ConstitutiveSet(friction=FrictionFunction("constant", alpha=2.0))
    v0 = VectorField.from_function(grid, lambda x1, x2: [np.sin(np.pi * x2), np.cos(np.pi * x1)])
    candidate = candidate_from_potential(flat_potential, v0, 3.0, constitutive, [0.5, 0.0])
    report = subsolution_check(candidate, constitutive)

    with tempfile.TemporaryDirectory() as tmp:
        candidate.save(os.path.join(tmp, "candidate"))
        loaded = SubsolutionCandidate.load(os.path.join(tmp, "candidate"))
        with pytest.raises(FileNotFoundError):
            SubsolutionCandidate.load(tmp)

        path = os.path.join(tmp, "audit.csv")
        report.write_csv(path)
        with open(path) as f:
            assert f.readline().strip() == "t,min_margin,judged"

    np.testing.assert_array_equal(loaded.times, candidate.times)
    np.testing.assert_allclose(loaded.V, candidate.V, rtol=1e-8)
    np.testing.assert_array_equal(loaded.v[1].values, candidate.v[1].values)
    assert subsolution_check(loaded, constitutive).min_margin == pytest.approx(report.min_margin, abs=1e-7)
    assert "verdict" in report.to_text()
    assert report.to_dict()["passed"] == report.passed


def _random_trigonometric(grid, rng, modes=2, count=3):
    (x1, x2) = grid.coordinates()
    wave_vectors = rng.integers(-modes, modes + 1, size=(count, 2))
    amplitudes = rng.normal(size=count)
    amplitudes /= np.abs(amplitudes).sum()
    phases = rng.uniform(0.0, 2.0 * np.pi, size=count)
    return sum(a * np.cos(np.pi * (k[0] * x1 + k[1] * x2) + p) for (k, a, p) in zip(wave_vectors, amplitudes, phases))


def test_slice_margin_is_monotone_in_lambda(grid):
    constitutive = ConstitutiveSet(PressureLaw.power_law(0.5, 2.0))
    rng = np.random.default_rng(0)
    for _ in range(100):
        stream = grid.gradient(_random_trigonometric(grid, rng))
        v0 = VectorField(grid, rng.uniform(0.1, 1.0) * np.stack([-stream[1], stream[0]]))
        rho0 = ScalarField(grid, 1.0 + 0.2 * _random_trigonometric(grid, rng))
        phi = _random_trigonometric(grid, rng)
        potential = build_density_potential(rho0, ScalarField(grid, 0.01 * (phi - phi.mean())), [0.0, 0.5], 0.5)
        V0 = rng.normal(size=2)
        lam = rng.uniform(1.5, 3.0)

        low = candidate_from_potential(potential, v0, lam, constitutive, V0)
        high = candidate_from_potential(potential, v0, lam + rng.uniform(1e-3, 1.0), constitutive, V0)
        for k in range(len(low.times)):
            assert np.all(_slice_margin(high, k, constitutive) >= _slice_margin(low, k, constitutive) - 1e-12)
