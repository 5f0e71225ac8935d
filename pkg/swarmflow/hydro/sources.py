from collections import namedtuple

import numpy as np

from swarmflow.constitutive import ConstitutiveSet
from swarmflow.torus import ScalarField, TorusGrid, VectorField, check_same_grid

SourceTerms = namedtuple("SourceTerms", ["friction", "interaction", "alignment", "poisson", "total"])


def poisson_potential_array(grid: TorusGrid, rho: np.ndarray) -> np.ndarray:
    """Zero-mean Phi with -Laplace(Phi) = rho - mean(rho)."""
    return grid.inverse_laplacian(rho - grid.mean(rho))


def source_arrays(
    grid: TorusGrid,
    rho: np.ndarray,
    m: np.ndarray,
    u: np.ndarray,
    constitutive: ConstitutiveSet,
    poisson_forcing: bool = False,
) -> SourceTerms:
    """Momentum sources on raw arrays; ``m`` and ``u`` have shape (N,) + grid.shape."""
    kernels = constitutive.on_torus(grid)

    speed_sq = (u ** 2).sum(axis=0)
    friction = (1.0 - constitutive.friction(speed_sq)) * m

    if kernels.interaction is None:
        interaction = np.zeros_like(m)
    else:
        interaction = -rho * grid.gradient(grid.convolve(kernels.interaction.values.values, rho))

    if kernels.communication is None:
        alignment = np.zeros_like(m)
    else:
        psi = kernels.communication.values.values
        alignment = rho * grid.convolve(psi, m) - m * grid.convolve(psi, rho)

    if poisson_forcing:
        poisson = -rho * grid.gradient(poisson_potential_array(grid, rho))
    else:
        poisson = np.zeros_like(m)

    return SourceTerms(
        friction=friction,
        interaction=interaction,
        alignment=alignment,
        poisson=poisson,
        total=friction + interaction + alignment + poisson,
    )


def compute_sources(
    rho: ScalarField, u: VectorField, constitutive: ConstitutiveSet, poisson_forcing: bool = False
) -> SourceTerms:
    """Friction, interaction, alignment and (optionally) Poisson forcing acting on the momentum equation.

    The alignment term rho * psi*(rho u) - rho u * psi*rho is the double integral
    int psi(x - y) (u(y) - u(x)) rho(x) rho(y) dy written as two convolutions.
    """
    grid = check_same_grid(rho, u)
    m = rho.values * u.values
    terms = source_arrays(grid, rho.values, m, u.values, constitutive, poisson_forcing)
    return SourceTerms(*(VectorField(grid, values) for values in terms))


def poisson_potential(rho: ScalarField) -> ScalarField:
    return ScalarField(rho.grid, poisson_potential_array(rho.grid, rho.values))


def poisson_force(rho: ScalarField) -> VectorField:
    """-rho grad(Phi) for the repulsive Poisson coupling."""
    grid = rho.grid
    return VectorField(grid, -rho.values * grid.gradient(poisson_potential_array(grid, rho.values)))
