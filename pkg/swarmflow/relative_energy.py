import logging
from collections import namedtuple
from typing import Dict

import numpy as np
from joblib import Parallel, delayed
from scipy.optimize import brentq

from swarmflow.constitutive import ConstitutiveSet
from swarmflow.energy import D3_TOLERANCE_CONSTANT, alignment_dissipation, d3_tolerance
from swarmflow.errors import DegenerateStrongDensity, GridMismatch, TimeGridMismatch
from swarmflow.hydro.sources import poisson_potential_array
from swarmflow.hydro.state import StrongSolution, Trajectory
from swarmflow.torus import ScalarField, TorusGrid, VectorField, check_same_grid, check_zero_mean

GRONWALL_EPS_FACTOR = 1e-12
CUTOFF_WIDTH_FACTOR = 0.1

REMAINDER_TERMS = (
    "convective",
    "interaction_strong",
    "interaction_difference",
    "pressure",
    "friction",
    "alignment_density",
    "alignment_strong",
    "poisson_strong",
    "poisson_difference",
)
RemainderTerms = namedtuple("RemainderTerms", REMAINDER_TERMS + ("total",))
GronwallFit = namedtuple("GronwallFit", ["c", "verdict"])
CoercivityResult = namedtuple("CoercivityResult", ["holds", "constant", "kkk_ratio", "residual_cells"])

__all__ = [
    "StrongSolution",
    "RemainderTerms",
    "EssResSplit",
    "RelEnergyReport",
    "relative_energy",
    "remainder",
    "reduced_pressure_block",
    "rei_residual",
    "ess_res_split",
    "coercivity_check",
    "negative_sobolev_norm",
    "poisson_relative_energy",
    "tzavaras_identity_check",
    "alignment_regularity_constant",
    "gronwall_fit",
]

logger = logging.getLogger(__name__)


def _check_strong_density(r: np.ndarray):
    if r.min() <= 0.0:
        raise DegenerateStrongDensity(f"Strong density must stay positive, got min r = {r.min():.3e}")


def _velocity_gradient(grid: TorusGrid, U: np.ndarray) -> np.ndarray:
    """grad_U[i, j] = d_j U_i."""
    return np.stack([grid.gradient(U[i]) for i in range(grid.dim)])


def _bregman(constitutive: ConstitutiveSet, rho: np.ndarray, r: np.ndarray) -> np.ndarray:
    pressure = constitutive.pressure
    if pressure.is_zero:
        return np.zeros_like(rho)
    return pressure.potential(rho) - pressure.potential_derivative(r) * (rho - r) - pressure.potential(r)


def negative_sobolev_norm(f: ScalarField) -> float:
    """int f (P * f) with -Laplace(P * f) = f, i.e. the squared W^{-1,2} norm of a zero-mean field."""
    check_zero_mean(f)
    return _negative_sobolev_norm(f.grid, f.values)


def _negative_sobolev_norm(grid: TorusGrid, values: np.ndarray) -> float:
    f_hat = grid.fft(values)
    nonzero = grid.wavenumber_sq > 0.0
    total = (np.abs(f_hat[nonzero]) ** 2 / grid.wavenumber_sq[nonzero]).sum()
    return float(grid.cell_volume / grid.size * total)


def relative_energy(
    rho: ScalarField, u: VectorField, r: ScalarField, U: VectorField, constitutive: ConstitutiveSet
) -> float:
    """int 1/2 rho |u - U|^2 + P(rho) - P'(r)(rho - r) - P(r)."""
    grid = check_same_grid(rho, u, r, U)
    _check_strong_density(r.values)
    w = u.values - U.values
    integrand = 0.5 * rho.values * (w ** 2).sum(axis=0) + _bregman(constitutive, rho.values, r.values)
    return float(grid.integrate(integrand))


def poisson_relative_energy(rho: ScalarField, u: VectorField, r: ScalarField, U: VectorField) -> float:
    """Pressureless Euler-Poisson relative energy int 1/2 rho |u - U|^2 + 1/2 int (r - rho) P * (r - rho)."""
    grid = check_same_grid(rho, u, r, U)
    w = u.values - U.values
    difference = rho.values - r.values
    kinetic = 0.5 * grid.integrate(rho.values * (w ** 2).sum(axis=0))
    return float(kinetic + 0.5 * _negative_sobolev_norm(grid, difference - grid.mean(difference)))


def remainder(
    rho: ScalarField,
    u: VectorField,
    r: ScalarField,
    U: VectorField,
    constitutive: ConstitutiveSet,
    r_t: ScalarField = None,
    U_t: VectorField = None,
    poisson: bool = False,
) -> RemainderTerms:
    """Remainder of the relative energy inequality, term by term.

    ``r_t`` and ``U_t`` are the time derivatives of the strong pair (zero when omitted). With ``poisson`` the
    repulsive Poisson coupling contributes as one more interaction kernel.
    """
    grid = check_same_grid(rho, u, r, U)
    _check_strong_density(r.values)
    rho_v, u_v, r_v, U_v = rho.values, u.values, r.values, U.values
    r_t_v = np.zeros_like(r_v) if r_t is None else r_t.values
    U_t_v = np.zeros_like(U_v) if U_t is None else U_t.values
    w = u_v - U_v
    terms: Dict[str, float] = dict.fromkeys(REMAINDER_TERMS, 0.0)

    grad_U = _velocity_gradient(grid, U_v)
    transport = U_t_v + np.einsum("j...,ij...->i...", u_v, grad_U)
    terms["convective"] = -grid.integrate(rho_v * (transport * w).sum(axis=0))

    kernels = constitutive.on_torus(grid)
    difference = rho_v - r_v
    if kernels.interaction is not None:
        K = kernels.interaction.values.values
        terms["interaction_strong"] = -grid.integrate(rho_v * (grid.gradient(grid.convolve(K, r_v)) * w).sum(axis=0))
        terms["interaction_difference"] = grid.integrate(
            difference * (grid.gradient(grid.convolve(K, difference)) * U_v).sum(axis=0)
        )

    terms["pressure"] = _pressure_block(grid, constitutive, rho_v, u_v, r_v, U_v, r_t_v)

    speed_sq = (u_v ** 2).sum(axis=0)
    terms["friction"] = grid.integrate((1.0 - constitutive.friction(speed_sq)) * rho_v * (u_v * w).sum(axis=0))

    if kernels.communication is not None:
        psi = kernels.communication.values.values
        density_part = grid.convolve(psi, difference * U_v) - U_v * grid.convolve(psi, difference)
        strong_part = grid.convolve(psi, r_v * U_v) - U_v * grid.convolve(psi, r_v)
        terms["alignment_density"] = grid.integrate(rho_v * (w * density_part).sum(axis=0))
        terms["alignment_strong"] = grid.integrate(rho_v * (w * strong_part).sum(axis=0))

    if poisson:
        phi_r = poisson_potential_array(grid, r_v)
        terms["poisson_strong"] = -grid.integrate(rho_v * (grid.gradient(phi_r) * w).sum(axis=0))
        potential = grid.inverse_laplacian(difference - grid.mean(difference))
        terms["poisson_difference"] = grid.integrate(difference * (grid.gradient(potential) * U_v).sum(axis=0))

    values = {k: float(v) for (k, v) in terms.items()}
    return RemainderTerms(total=sum(values.values()), **values)


def _pressure_block(grid, constitutive, rho, u, r, U, r_t) -> float:
    pressure = constitutive.pressure
    if pressure.is_zero:
        return 0.0
    # P''(r) = p'(r) / r
    second = pressure.derivative(r) / r
    enthalpy_t = second * r_t
    enthalpy_grad = second * grid.gradient(r)
    div_U = grid.divergence(U)
    integrand = (
        (r - rho) * enthalpy_t
        + (enthalpy_grad * (r * U - rho * u)).sum(axis=0)
        - div_U * (pressure.pressure(rho) - pressure.pressure(r))
    )
    return float(grid.integrate(integrand))


def reduced_pressure_block(
    rho: ScalarField, u: VectorField, r: ScalarField, U: VectorField, constitutive: ConstitutiveSet
) -> float:
    """-int div U (p(rho) - p'(r)(rho - r) - p(r)).

    Equals the raw pressure block plus int (rho / r) grad p(r) . (u - U) whenever r solves the continuity equation
    with velocity U.
    """
    grid = check_same_grid(rho, u, r, U)
    _check_strong_density(r.values)
    pressure = constitutive.pressure
    rho_v, r_v = rho.values, r.values
    bracket = pressure.pressure(rho_v) - pressure.derivative(r_v) * (rho_v - r_v) - pressure.pressure(r_v)
    return float(-grid.integrate(grid.divergence(U.values) * bracket))


def tzavaras_identity_check(rho: ScalarField, r: ScalarField, U: VectorField) -> float:
    """Residual of int d grad(w) . U = -int [1/2 div U |grad w|^2 - grad U : (grad w x grad w)] with -Laplace w = d.

    ``d`` is rho - r with its mean removed; the residual vanishes up to rounding for band-limited fields.
    """
    grid = check_same_grid(rho, r, U)
    difference = rho.values - r.values
    difference = difference - grid.mean(difference)
    grad_w = grid.gradient(grid.inverse_laplacian(difference))
    grad_U = _velocity_gradient(grid, U.values)

    transport = grid.integrate(difference * (grad_w * U.values).sum(axis=0))
    stretching = np.einsum("ij...,i...,j...->...", grad_U, grad_w, grad_w)
    bracket = grid.integrate(0.5 * grid.divergence(U.values) * (grad_w ** 2).sum(axis=0) - stretching)
    return float(transport + bracket)


def alignment_regularity_constant(psi: ScalarField) -> float:
    """C with sup |psi * f| <= C ||f||_{W^{-1,2}} for every zero-mean f, from the Fourier coefficients of psi."""
    grid = psi.grid
    psi_hat = grid.fft(psi.values)
    nonzero = grid.wavenumber_sq > 0.0
    weighted = (np.abs(psi_hat[nonzero]) ** 2 * grid.wavenumber_sq[nonzero]).sum()
    return float(np.sqrt(grid.cell_volume / grid.size) * np.sqrt(weighted))


class EssResSplit(object):
    """Smooth cutoff chi(rho) equal to 1 on [rho_low, rho_high] and vanishing outside the widened interval."""

    def __init__(self, rho: ScalarField, rho_low: float, rho_high: float, width: float = None):
        if not 0.0 < rho_low <= rho_high:
            raise ValueError(f"Need 0 < rho_low <= rho_high, got {rho_low}, {rho_high}")
        self.rho_low = rho_low
        self.rho_high = rho_high
        self.width = CUTOFF_WIDTH_FACTOR * rho_low if width is None else width
        self.chi = self.cutoff(rho.values)
        self.essential = self.chi == 1.0
        self.residual = ~self.essential

    def cutoff(self, rho: np.ndarray) -> np.ndarray:
        below = np.clip((rho - (self.rho_low - self.width)) / self.width, 0.0, 1.0)
        above = np.clip(((self.rho_high + self.width) - rho) / self.width, 0.0, 1.0)
        ramp = np.minimum(below, above)
        return ramp * ramp * (3.0 - 2.0 * ramp)

    def ess(self, values: np.ndarray) -> np.ndarray:
        return self.chi * values

    def res(self, values: np.ndarray) -> np.ndarray:
        return (1.0 - self.chi) * values


def ess_res_split(rho: ScalarField, strong: StrongSolution = None, rho_low: float = None, rho_high: float = None):
    if strong is not None:
        rho_low, rho_high = strong.rho_low, strong.rho_high
    if rho_low is None or rho_high is None:
        raise ValueError("Bounds come from a strong solution or explicit rho_low/rho_high")
    return EssResSplit(rho, rho_low, rho_high)


def coercivity_check(
    rho: ScalarField,
    u: VectorField,
    r: ScalarField,
    U: VectorField,
    constitutive: ConstitutiveSet,
    split: EssResSplit = None,
) -> CoercivityResult:
    """Fit the pointwise constant c in integrand >= c (rho |w|^2 + |[w]_ess|^2 + |[rho - r]_ess|^2 + residual block).

    The residual block is [1 + p(rho) + rho log+(rho)]_res with p the pressure.

    Also reports ||rho - r||_{L^1} / E^{1/2}.
    """
    grid = check_same_grid(rho, u, r, U)
    _check_strong_density(r.values)
    if split is None:
        split = EssResSplit(rho, float(r.values.min()), float(r.values.max()))

    rho_v = rho.values
    w_sq = ((u.values - U.values) ** 2).sum(axis=0)
    difference = rho_v - r.values
    integrand = 0.5 * rho_v * w_sq + _bregman(constitutive, rho_v, r.values)

    chi = split.chi
    log_plus = rho_v * np.log(np.maximum(rho_v, 1.0))
    residual_block = (1.0 - chi) * (1.0 + np.abs(constitutive.pressure.pressure(rho_v)) + log_plus)
    dominated = rho_v * w_sq + chi ** 2 * w_sq + chi ** 2 * difference ** 2 + residual_block

    positive = dominated > 0.0
    constant = float(np.min(integrand[positive] / dominated[positive])) if np.any(positive) else np.inf

    energy = float(grid.integrate(integrand))
    l1 = float(grid.integrate(np.abs(difference)))
    if energy > 0.0:
        kkk_ratio = l1 / np.sqrt(energy)
    else:
        kkk_ratio = 0.0 if l1 == 0.0 else np.inf

    return CoercivityResult(
        holds=bool(constant > 0.0),
        constant=constant,
        kkk_ratio=float(kkk_ratio),
        residual_cells=int(split.residual.sum()),
    )


def gronwall_fit(times, energies, budget: float = None) -> GronwallFit:
    """Smallest c >= 0 with E(tau) <= (E(0) + eps) exp(c tau) on every sample, eps = 1e-12 max(E)."""
    times = np.asarray(times, dtype=np.float64)
    energies = np.asarray(energies, dtype=np.float64)
    eps = GRONWALL_EPS_FACTOR * float(np.max(np.abs(energies)))
    offset = times - times[0]
    start = energies[0] + eps

    def excess(c):
        return float(np.max(energies - start * np.exp(c * offset)))

    if excess(0.0) <= 0.0:
        c = 0.0
    elif start <= 0.0:
        c = np.inf
    else:
        upper = 1.0
        while excess(upper) > 0.0:
            upper *= 2.0
            if upper > 1e12:
                return GronwallFit(c=np.inf, verdict=False)
        c = upper if excess(upper) == 0.0 else brentq(excess, 0.0, upper, xtol=1e-12)

    verdict = bool(np.isfinite(c)) if budget is None else bool(c <= budget)
    return GronwallFit(c=float(c), verdict=verdict)


class RelEnergyReport(object):
    COLUMNS = ["t", "relative_energy", "remainder", "residual"] + list(REMAINDER_TERMS)

    def __init__(self, times, energy, remainder_terms, residual, tolerance: float, gronwall: GronwallFit):
        self.times = np.asarray(times)
        self.energy = np.asarray(energy)
        self.remainder_terms = np.asarray(remainder_terms)
        self.remainder = self.remainder_terms.sum(axis=1)
        self.residual = np.asarray(residual)
        self.tolerance = tolerance
        self.gronwall = gronwall
        self.verdict = bool(np.all(self.residual <= tolerance))

    def summary(self) -> Dict:
        return dict(
            gronwall_c=self.gronwall.c,
            gronwall_verdict=self.gronwall.verdict,
            max_relative_energy=float(self.energy.max()),
            max_residual=float(self.residual.max()),
            tolerance=self.tolerance,
            verdict=self.verdict,
        )

    def write_csv(self, path: str):
        table = np.column_stack([self.times, self.energy, self.remainder, self.residual, self.remainder_terms])
        np.savetxt(path, table, fmt="%.17g", delimiter=",", header=",".join(self.COLUMNS), comments="")


def _trapezoid(times: np.ndarray, values: np.ndarray) -> np.ndarray:
    increments = 0.5 * (values[1:] + values[:-1]) * np.diff(times)
    return np.concatenate([[0.0], np.cumsum(increments)])


def _sample(weak_state, r, U, r_t, U_t, constitutive, poisson):
    grid = r.grid
    rho = weak_state.rho
    u = weak_state.velocity_field()
    difference = rho.values - r.values

    energy = relative_energy(rho, u, r, U, constitutive)
    kernels = constitutive.on_torus(grid)
    bracket = 0.0
    if kernels.interaction is not None:
        bracket = 0.5 * grid.integrate(difference * grid.convolve(kernels.interaction.values.values, difference))
    if poisson:
        bracket += 0.5 * _negative_sobolev_norm(grid, difference - grid.mean(difference))

    dissipation = 0.0
    if kernels.communication is not None:
        w = u.values - U.values
        dissipation = -alignment_dissipation(
            grid, rho.values, rho.values * w, w, kernels.communication.values.values, symmetric=True
        )

    terms = remainder(rho, u, r, U, constitutive, r_t=r_t, U_t=U_t, poisson=poisson)
    return energy, float(bracket), dissipation, [getattr(terms, name) for name in REMAINDER_TERMS]


def rei_residual(
    weak: Trajectory,
    strong: StrongSolution,
    constitutive: ConstitutiveSet,
    poisson: bool = False,
    tolerance_constant: float = D3_TOLERANCE_CONSTANT,
    budget: float = None,
    threads: int = 1,
) -> RelEnergyReport:
    """Relative energy inequality residual along matched weak and strong trajectories.

    residual(tau) = [E]_0^tau + [1/2 int (r - rho) K * (r - rho)]_0^tau
    + int_0^tau 1/2 int int psi rho rho |w(y) - w(x)|^2 - int_0^tau remainder, with w = u - U.
    """
    if weak.grid != strong.grid:
        raise GridMismatch(f"Weak trajectory on {weak.grid}, strong solution on {strong.grid}")
    times = weak.times
    scale = max(1.0, float(np.abs(times).max()))
    if len(times) != len(strong.times) or not np.allclose(times, strong.times, rtol=0.0, atol=1e-12 * scale):
        raise TimeGridMismatch(f"Weak output times {list(times)} differ from strong times {list(strong.times)}")

    r_t, U_t = strong.time_derivatives()
    samples = Parallel(n_jobs=threads, backend="threading")(
        delayed(_sample)(weak[k], strong.r[k], strong.U[k], r_t[k], U_t[k], constitutive, poisson)
        for k in range(len(times))
    )
    energy = np.array([s[0] for s in samples])
    bracket = np.array([s[1] for s in samples])
    dissipation = np.array([s[2] for s in samples])
    terms = np.array([s[3] for s in samples])

    residual = (
        energy
        - energy[0]
        + bracket
        - bracket[0]
        + _trapezoid(times, dissipation)
        - _trapezoid(times, terms.sum(axis=1))
    )

    dt = weak.max_step if weak.max_step > 0.0 else float(np.max(np.diff(times), initial=0.0))
    tolerance = d3_tolerance(weak.grid.spacing, dt, float(times[-1] - times[0]), tolerance_constant)
    report = RelEnergyReport(times, energy, terms, residual, tolerance, gronwall_fit(times, energy, budget))
    logger.info(
        "Relative energy: max E=%.3e, max residual=%.3e (tol %.3e), Gronwall c=%.4g",
        energy.max(),
        residual.max(),
        tolerance,
        report.gronwall.c,
    )
    return report
