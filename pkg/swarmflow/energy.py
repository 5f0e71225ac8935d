import logging
from collections import namedtuple
from typing import List

import numpy as np

from swarmflow.constitutive import ConstitutiveSet
from swarmflow.hydro.sources import poisson_potential_array
from swarmflow.hydro.state import HydroState, Trajectory

D3_TOLERANCE_CONSTANT = 1.0

EnergyBreakdown = namedtuple("EnergyBreakdown", ["t", "kinetic", "internal", "interaction", "poisson", "total"])
DissipationRate = namedtuple("DissipationRate", ["t", "friction_term", "alignment_term", "symmetric", "total"])
D3Result = namedtuple("D3Result", ["times", "residual", "tolerance", "dissipative"])

logger = logging.getLogger(__name__)


def total_energy(state: HydroState, constitutive: ConstitutiveSet, poisson: bool = False) -> EnergyBreakdown:
    """Kinetic, internal and interaction energy (plus the Poisson energy 1/2 int rho Phi when ``poisson``)."""
    grid = state.grid
    rho = state.rho.values
    u = state.velocity()

    kinetic = 0.5 * grid.integrate((state.m.values * u).sum(axis=0))
    internal = grid.integrate(constitutive.pressure.potential(np.maximum(rho, 0.0)))

    kernels = constitutive.on_torus(grid)
    interaction = 0.0
    if kernels.interaction is not None:
        interaction = 0.5 * grid.integrate(rho * grid.convolve(kernels.interaction.values.values, rho))

    poisson_energy = 0.0
    if poisson:
        poisson_energy = 0.5 * grid.integrate(rho * poisson_potential_array(grid, rho))

    kinetic, internal, interaction, poisson_energy = (
        float(kinetic),
        float(internal),
        float(interaction),
        float(poisson_energy),
    )
    return EnergyBreakdown(
        t=state.t,
        kinetic=kinetic,
        internal=internal,
        interaction=interaction,
        poisson=poisson_energy,
        total=kinetic + internal + interaction + poisson_energy,
    )


def alignment_dissipation(grid, rho: np.ndarray, m: np.ndarray, u: np.ndarray, psi: np.ndarray, symmetric: bool):
    speed_sq = (u ** 2).sum(axis=0)
    self_term = grid.integrate(rho * speed_sq * grid.convolve(psi, rho))
    cross_term = grid.integrate((m * grid.convolve(psi, m)).sum(axis=0))
    if not symmetric:
        # int rho u(x) . (u(y) - u(x)) psi rho rho, exact for any psi
        return float(cross_term - self_term)
    other_term = grid.integrate(rho * grid.convolve(psi, rho * speed_sq))
    return float(-0.5 * (self_term + other_term - 2.0 * cross_term))


def dissipation_rate(state: HydroState, constitutive: ConstitutiveSet) -> DissipationRate:
    """Right-hand side of the energy identity: friction work plus alignment dissipation.

    For symmetric psi the alignment term is -1/2 int int psi(x-y) rho(x) rho(y) |u(y)-u(x)|^2, expanded into three
    convolutions. For a non-symmetric psi the unsymmetrized form is used and ``symmetric`` is False.
    """
    grid = state.grid
    rho = state.rho.values
    m = state.m.values
    u = state.velocity()

    speed_sq = (u ** 2).sum(axis=0)
    friction_term = float(grid.integrate(rho * speed_sq * (1.0 - constitutive.friction(speed_sq))))

    kernels = constitutive.on_torus(grid)
    symmetric = True
    alignment_term = 0.0
    if kernels.communication is not None:
        symmetric = kernels.communication.symmetric
        if not symmetric:
            logger.debug("Non-symmetric communication kernel, using the unsymmetrized alignment term")
        alignment_term = alignment_dissipation(grid, rho, m, u, kernels.communication.values.values, symmetric)

    return DissipationRate(
        t=state.t,
        friction_term=friction_term,
        alignment_term=alignment_term,
        symmetric=symmetric,
        total=friction_term + alignment_term,
    )


def interaction_rate(state: HydroState, constitutive: ConstitutiveSet) -> float:
    """-int div(rho u) (K * rho), the time derivative of the interaction energy along the continuity equation."""
    grid = state.grid
    kernels = constitutive.on_torus(grid)
    if kernels.interaction is None:
        return 0.0
    potential = grid.convolve(kernels.interaction.values.values, state.rho.values)
    return float(-grid.integrate(grid.divergence(state.m.values) * potential))


def d3_tolerance(spacing: float, dt: float, duration: float, constant: float = D3_TOLERANCE_CONSTANT) -> float:
    return constant * (spacing + dt) * duration


def _running_residual(times: np.ndarray, energies: np.ndarray, rates: np.ndarray) -> np.ndarray:
    increments = 0.5 * (rates[1:] + rates[:-1]) * np.diff(times)
    work = np.concatenate([[0.0], np.cumsum(increments)])
    return energies - energies[0] - work


def d3_residual(
    trajectory: Trajectory,
    constitutive: ConstitutiveSet,
    poisson: bool = False,
    tolerance_constant: float = D3_TOLERANCE_CONSTANT,
) -> D3Result:
    """E(tau) - E(0) - int_0^tau (friction + alignment) dt on the output times (trapezoid rule).

    The trajectory is dissipative when every residual stays below C (h + dt) T.
    """
    times = trajectory.times
    energies = np.array([total_energy(s, constitutive, poisson).total for s in trajectory])
    rates = np.array([dissipation_rate(s, constitutive).total for s in trajectory])
    residual = _running_residual(times, energies, rates)

    dt = trajectory.max_step if trajectory.max_step > 0.0 else float(np.max(np.diff(times), initial=0.0))
    tolerance = d3_tolerance(trajectory.grid.spacing, dt, float(times[-1] - times[0]), tolerance_constant)
    dissipative = bool(np.all(residual <= tolerance))
    if not dissipative:
        logger.info("Energy inequality violated: max residual %.3e > tol %.3e", residual.max(), tolerance)
    return D3Result(times=times, residual=residual, tolerance=tolerance, dissipative=dissipative)


class LedgerTracker(object):
    """Accumulates the per-output diagnostics row of a hydro run."""

    def __init__(self, constitutive: ConstitutiveSet, poisson: bool = False):
        self.constitutive = constitutive
        self.poisson = poisson
        self.columns: List[str] = []
        self._rows: List[List[float]] = []
        self._times: List[float] = []
        self._energies: List[float] = []
        self._rates: List[float] = []

    def record(self, state: HydroState):
        if not self.columns:
            self.columns = (
                ["t", "mass"]
                + [f"momentum_{d + 1}" for d in range(state.grid.dim)]
                + [
                    "kinetic_energy",
                    "internal_energy",
                    "interaction_energy",
                    "poisson_energy",
                    "total_energy",
                    "friction_rate",
                    "alignment_rate",
                    "dissipation_rate",
                    "d3_residual",
                ]
            )

        energy = total_energy(state, self.constitutive, self.poisson)
        rate = dissipation_rate(state, self.constitutive)
        self._times.append(state.t)
        self._energies.append(energy.total)
        self._rates.append(rate.total)
        residual = _running_residual(np.array(self._times), np.array(self._energies), np.array(self._rates))[-1]

        self._rows.append(
            [state.t, state.mass()]
            + list(state.momentum())
            + [
                energy.kinetic,
                energy.internal,
                energy.interaction,
                energy.poisson,
                energy.total,
                rate.friction_term,
                rate.alignment_term,
                rate.total,
                float(residual),
            ]
        )

    def table(self) -> np.ndarray:
        return np.array(self._rows, dtype=np.float64)

    def write_csv(self, path: str):
        np.savetxt(path, self.table(), fmt="%.17g", delimiter=",", header=",".join(self.columns), comments="")
