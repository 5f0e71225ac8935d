import logging
import os
from collections import namedtuple
from typing import Callable, List, Sequence, Union

import numpy as np
import ujson as json
from joblib import Parallel, delayed
from scipy.optimize import brentq

from swarmflow.constitutive import ConstitutiveSet, PressureLaw
from swarmflow.errors import (
    DissipationBoundUnavailable,
    InadmissibleDensityPotential,
    LambdaSearchDiverged,
    NonPositiveEnergy,
)
from swarmflow.torus import (
    ScalarField,
    SymTensorField,
    TorusGrid,
    VectorField,
    check_zero_mean,
    helmholtz_decompose,
    lambda_max,
    load_field,
    save_field,
)

MARGIN_THRESHOLD = 1e-8
EPSILON_MIN = 1e-2
LAMBDA_TOL = 1e-6
FIXED_POINT_DAMPING = 0.5
FIXED_POINT_MAX_ITER = 100
DIVERGENCE_ATOL = 1e-10
MAX_LAMBDA_EXPONENT = 20

CANDIDATE_FILE = "candidate.json"

DissipativeLambda = namedtuple("DissipativeLambda", ["rate", "schedule"])

logger = logging.getLogger(__name__)


class DensityPotential(object):
    """rho(t) = rho0 - s(t) Laplace(Phi0), Phi(t) = exp(-t/eps) Phi0 with s(t) = eps (1 - exp(-t/eps))."""

    def __init__(self, rho0: ScalarField, phi0: ScalarField, epsilon: float, times: Sequence[float]):
        self.grid = rho0.grid
        self.rho0 = rho0.values
        self.phi0 = phi0.values
        self.laplacian0 = self.grid.laplacian(phi0.values)
        self.epsilon = epsilon
        self.times = np.asarray(times, dtype=np.float64)

    def at(self, t: float):
        """(rho, Phi, d_t Phi, d_t rho) at time t, time derivatives in closed form."""
        decay = np.exp(-t / self.epsilon)
        phi = decay * self.phi0
        rho = self.rho0 - self.epsilon * (1.0 - decay) * self.laplacian0
        return rho, phi, -phi / self.epsilon, -decay * self.laplacian0

    def rho(self) -> List[ScalarField]:
        return [ScalarField(self.grid, self.at(t)[0]) for t in self.times]

    def phi(self) -> List[ScalarField]:
        return [ScalarField(self.grid, self.at(t)[1]) for t in self.times]

    def phi_t(self) -> List[ScalarField]:
        return [ScalarField(self.grid, self.at(t)[2]) for t in self.times]

    def continuity_defect(self) -> float:
        """max |d_t rho + Laplace(Phi)| over the time samples."""
        defects = []
        for t in self.times:
            _, phi, _, rho_t = self.at(t)
            defects.append(np.abs(rho_t + self.grid.laplacian(phi)).max())
        return float(max(defects))


def build_density_potential(
    rho0: ScalarField, phi0: ScalarField, times: Sequence[float], rho_floor: float, epsilon_min: float = EPSILON_MIN
) -> DensityPotential:
    """Pick the largest eps <= 1 keeping rho(t) >= rho_floor up to the last time."""
    if rho0.values.min() < rho_floor:
        raise InadmissibleDensityPotential(f"min rho0 = {rho0.values.min():.6g} is below the floor {rho_floor}")
    check_zero_mean(phi0)

    horizon = float(np.max(times))
    laplacian = rho0.grid.laplacian(phi0.values)
    growing = laplacian > 0.0
    if not np.any(growing) or horizon == 0.0:
        return DensityPotential(rho0, phi0, 1.0, times)

    s_max = float(np.min((rho0.values[growing] - rho_floor) / laplacian[growing]))

    def budget(epsilon):
        return epsilon * (1.0 - np.exp(-horizon / epsilon)) - s_max

    if budget(1.0) <= 0.0:
        epsilon = 1.0
    elif budget(epsilon_min) > 0.0:
        raise InadmissibleDensityPotential(
            f"Phi0 too large for rho0: no eps >= {epsilon_min} keeps rho above {rho_floor} until t={horizon}"
        )
    else:
        epsilon = brentq(budget, epsilon_min, 1.0, xtol=1e-14)
    logger.debug("Density potential decay eps=%.6g", epsilon)
    return DensityPotential(rho0, phi0, epsilon, times)


def energy_constraint_e(lam: float, rho: ScalarField, phi_t: ScalarField, pressure: PressureLaw) -> ScalarField:
    """e = Lambda - (N/2)(p(rho) + d_t Phi), required to be positive."""
    grid = rho.grid
    e = lam - 0.5 * grid.dim * (pressure.pressure(rho.values) + phi_t.values)
    if e.min() <= 0.0:
        raise NonPositiveEnergy(f"Energy density e = {e.min():.3e} <= 0 for Lambda = {lam}")
    return ScalarField(grid, e)


def assemble_Xi(
    v: VectorField, V, phi: ScalarField, rho: ScalarField, e: ScalarField, constitutive: ConstitutiveSet
) -> VectorField:
    """w (1 - H(2e/rho)) - rho grad K*rho + rho psi*w - w psi*rho with w = v + V + grad Phi."""
    grid = rho.grid
    V = np.asarray(V, dtype=np.float64).reshape((grid.dim,) + (1,) * grid.dim)
    w = v.values + V + grid.gradient(phi.values)
    xi = w * (1.0 - constitutive.friction(2.0 * e.values / rho.values))

    kernels = constitutive.on_torus(grid)
    if kernels.interaction is not None:
        xi = xi - rho.values * grid.gradient(grid.convolve(kernels.interaction.values.values, rho.values))
    if kernels.communication is not None:
        psi = kernels.communication.values.values
        xi = xi + rho.values * grid.convolve(psi, w) - w * grid.convolve(psi, rho.values)
    return VectorField(grid, xi)


def mean_free(xi: VectorField) -> VectorField:
    grid = xi.grid
    return xi.like(xi.values - grid.mean(xi.values).reshape((grid.dim,) + (1,) * grid.dim))


def solve_elliptic_M(G: VectorField) -> SymTensorField:
    """Trace-free M = grad w + grad w^T - (2/N) div w I with -div M = G, solved mode by mode."""
    grid = G.grid
    dim = grid.dim
    if dim == 1:
        raise ValueError("The trace-free corrector is trivial in one dimension")
    for component in G.values:
        check_zero_mean(ScalarField(grid, component))

    G_hat = grid.fft(G.values)
    k = np.stack([np.broadcast_to(kd, grid.shape) for kd in grid.derivative_wavenumbers])
    k_sq = grid.derivative_wavenumber_sq
    nonzero = k_sq > 0.0
    safe = np.where(nonzero, k_sq, 1.0)

    parallel = (k * G_hat).sum(axis=0) * k / safe
    perpendicular = G_hat - parallel
    w_hat = np.where(nonzero, perpendicular / safe + parallel / ((2.0 - 2.0 / dim) * safe), 0.0)
    w = grid.ifft(w_hat)

    grad_w = np.stack([grid.gradient(w[i]) for i in range(dim)])
    div_w = sum(grad_w[i, i] for i in range(dim))
    matrix = np.moveaxis(grad_w + np.swapaxes(grad_w, 0, 1), (0, 1), (-2, -1))
    for i in range(dim):
        matrix[..., i, i] -= 2.0 / dim * div_w
    trace = sum(matrix[..., i, i] for i in range(dim))
    for i in range(dim):
        matrix[..., i, i] -= trace / dim
    return SymTensorField.from_matrix(grid, matrix, trace_free=True)


def _interpolate_series(values, times: np.ndarray) -> Callable:
    if callable(values):
        return values
    if np.ndim(values) == 0:
        return lambda t: float(values)
    values = np.asarray(values, dtype=np.float64)
    return lambda t: float(np.interp(t, times, values))


def _velocity_series(v, times: np.ndarray) -> Callable:
    if isinstance(v, VectorField):
        return lambda t: v.values
    stacked = np.stack([field.values for field in v])

    def at(t):
        k = int(np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(times) - 2))
        weight = (t - times[k]) / (times[k + 1] - times[k])
        return (1.0 - weight) * stacked[k] + weight * stacked[k + 1]

    return at


def solve_V_ode(
    potential: DensityPotential,
    v: Union[VectorField, Sequence[VectorField]],
    lam,
    constitutive: ConstitutiveSet,
    V0,
    substeps: int = 8,
) -> np.ndarray:
    """Classical RK4 for the mean-momentum ODE, returning V at ``potential.times`` (shape (T, N)).

    dV/dt + V mean(H(2e/rho) - 1) = mean[-(v + grad Phi)(H + psi*rho) + rho psi*(v + grad Phi) - rho grad K*rho].
    The V contributions of the alignment term cancel because mean(psi*rho) = mean(rho) int psi.
    ``v`` is a single stationary field or one field per time sample (linearly interpolated), ``lam`` a constant,
    a per-sample array or a callable of t.
    """
    grid = potential.grid
    times = potential.times
    lam_at = _interpolate_series(lam, times)
    v_at = _velocity_series(v, times)
    kernels = constitutive.on_torus(grid)

    def rhs(t, V):
        rho, phi, phi_t, _ = potential.at(t)
        e = energy_constraint_e(lam_at(t), ScalarField(grid, rho), ScalarField(grid, phi_t), constitutive.pressure)
        friction = constitutive.friction(2.0 * e.values / rho)
        a = v_at(t) + grid.gradient(phi)

        forcing = -a * friction
        if kernels.communication is not None:
            psi = kernels.communication.values.values
            forcing = forcing - a * grid.convolve(psi, rho) + rho * grid.convolve(psi, a)
        if kernels.interaction is not None:
            forcing = forcing - rho * grid.gradient(grid.convolve(kernels.interaction.values.values, rho))
        return -V * grid.mean(friction - 1.0) + grid.mean(forcing)

    V = np.asarray(V0, dtype=np.float64).reshape(grid.dim)
    result = [V.copy()]
    for (t0, t1) in zip(times[:-1], times[1:]):
        dt = (t1 - t0) / substeps
        t = t0
        for _ in range(substeps):
            k1 = rhs(t, V)
            k2 = rhs(t + 0.5 * dt, V + 0.5 * dt * k1)
            k3 = rhs(t + 0.5 * dt, V + 0.5 * dt * k2)
            k4 = rhs(t + dt, V + dt * k3)
            V = V + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t += dt
        result.append(V.copy())
    return np.array(result)


class SubsolutionCandidate(object):
    """Time slices of (v, F, rho, Phi, d_t Phi, V, Lambda) checked against the subsolution inequality."""

    def __init__(
        self,
        times: Sequence[float],
        v: List[VectorField],
        F: List[SymTensorField],
        rho: List[ScalarField],
        phi: List[ScalarField],
        phi_t: List[ScalarField],
        V,
        lam,
    ):
        self.times = np.asarray(times, dtype=np.float64)
        count = len(self.times)
        if not all(len(series) == count for series in (v, F, rho, phi, phi_t)):
            raise ValueError("Every candidate series needs one entry per time slice")
        self.V = np.asarray(V, dtype=np.float64).reshape(count, -1)
        self.lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), (count,)).copy()
        self.v, self.F, self.rho, self.phi, self.phi_t = v, F, rho, phi, phi_t
        grid = self.grid

        if self.V.shape[1] != grid.dim:
            raise ValueError(f"V must hold {grid.dim}-vectors, got shape {self.V.shape}")
        for (k, field) in enumerate(v):
            divergence = np.abs(grid.divergence(field.values)).max()
            mean = np.abs(grid.mean(field.values)).max()
            if divergence > DIVERGENCE_ATOL * max(1.0, np.abs(field.values).max()) or mean > DIVERGENCE_ATOL:
                raise ValueError(f"v at slice {k} is not divergence- and mean-free (|div|={divergence:.3e})")
        for (k, field) in enumerate(F):
            if not field.trace_free:
                raise ValueError(f"F at slice {k} must be trace-free")
        lowest = min(float(field.values.min()) for field in rho)
        if lowest <= 0.0:
            raise ValueError(f"Candidate density must be positive, got {lowest:.3e}")

    @property
    def grid(self) -> TorusGrid:
        return self.rho[0].grid

    def __len__(self):
        return len(self.times)

    def continuity_defect(self) -> float:
        """max |d_t rho + Laplace(Phi)|, d_t rho by differences in time (zero for a single slice)."""
        if len(self) < 2:
            return float(np.abs(self.grid.laplacian(self.phi[0].values)).max())
        rho_t = np.gradient(np.stack([field.values for field in self.rho]), self.times, axis=0)
        return float(
            max(np.abs(rho_t[k] + self.grid.laplacian(self.phi[k].values)).max() for k in range(len(self)))
        )

    def save(self, out_dir: str):
        os.makedirs(out_dir, exist_ok=True)
        grid = self.grid
        for k in range(len(self)):
            for (name, series) in (("v", self.v), ("F", self.F), ("rho", self.rho), ("phi", self.phi)):
                save_field(series[k], os.path.join(out_dir, f"{name}_{k:04d}.swfl"))
            save_field(self.phi_t[k], os.path.join(out_dir, f"phi_t_{k:04d}.swfl"))
        with open(os.path.join(out_dir, CANDIDATE_FILE), "w") as f:
            json.dump(
                dict(
                    dim=grid.dim,
                    cells_per_axis=grid.cells_per_axis,
                    times=self.times.tolist(),
                    V=self.V.tolist(),
                    lam=self.lam.tolist(),
                    trace_free=[field.trace_free for field in self.F],
                ),
                f,
                indent=2,
            )

    @staticmethod
    def load(in_dir: str) -> "SubsolutionCandidate":
        path = os.path.join(in_dir, CANDIDATE_FILE)
        if not os.path.exists(path):
            raise FileNotFoundError(f"No {CANDIDATE_FILE} in {in_dir}")
        with open(path) as f:
            meta = json.load(f)

        def series(name):
            return [load_field(os.path.join(in_dir, f"{name}_{k:04d}.swfl")) for k in range(len(meta["times"]))]

        F = [SymTensorField(field.grid, field.values, trace_free=True) for field in series("F")]
        candidate = SubsolutionCandidate(
            meta["times"], series("v"), F, series("rho"), series("phi"), series("phi_t"), meta["V"], meta["lam"]
        )
        if candidate.grid != TorusGrid(meta["dim"], meta["cells_per_axis"]):
            raise ValueError(f"Snapshots in {in_dir} do not match the grid recorded in {CANDIDATE_FILE}")
        return candidate


def _slice_margin(candidate: SubsolutionCandidate, k: int, constitutive: ConstitutiveSet) -> np.ndarray:
    grid = candidate.grid
    dim = grid.dim
    rho, phi = candidate.rho[k], candidate.phi[k]
    e = candidate.lam[k] - 0.5 * dim * (constitutive.pressure.pressure(rho.values) + candidate.phi_t[k].values)

    V = candidate.V[k].reshape((dim,) + (1,) * dim)
    momentum = candidate.v[k].values + V + grid.gradient(phi.values)
    matrix = np.einsum("i...,j...->...ij", momentum, momentum) / rho.values[..., np.newaxis, np.newaxis]
    matrix = matrix - candidate.F[k].to_matrix()
    if dim > 1:
        xi = assemble_Xi(candidate.v[k], candidate.V[k], phi, rho, ScalarField(grid, e), constitutive)
        matrix = matrix + solve_elliptic_M(mean_free(xi)).to_matrix()

    margin = e - 0.5 * dim * lambda_max(matrix)
    return np.where(e > 0.0, margin, np.minimum(margin, e))


class AuditReport(object):
    def __init__(self, times, slice_margins: List[np.ndarray], grid: TorusGrid, lambda0: float = None):
        self.times = np.asarray(times)
        self.grid = grid
        self.lambda0 = lambda0
        self.slice_margins = np.array([float(m.min()) for m in slice_margins])
        # t = 0 is reported but only later slices are judged
        self.judged = np.arange(len(self.times)) >= (1 if len(self.times) > 1 else 0)

        judged_index = int(np.argmin(np.where(self.judged, self.slice_margins, np.inf)))
        worst = slice_margins[judged_index]
        cell = np.unravel_index(int(np.argmin(worst)), worst.shape)
        centers = grid.centers()
        self.min_margin = float(self.slice_margins[judged_index])
        self.worst_time = float(self.times[judged_index])
        self.worst_cell = tuple(int(i) for i in cell)
        self.worst_position = tuple(float(centers[i]) for i in cell)
        self.passed = bool(self.min_margin >= MARGIN_THRESHOLD)

    def to_dict(self):
        return dict(
            lambda0=self.lambda0,
            min_margin=self.min_margin,
            worst_time=self.worst_time,
            worst_cell=list(self.worst_cell),
            worst_position=list(self.worst_position),
            passed=self.passed,
        )

    def to_text(self) -> str:
        lines = [
            f"Lambda0: {self.lambda0 if self.lambda0 is not None else 'n/a'}",
            f"min margin: {self.min_margin:.6e}",
            f"worst (t, x): ({self.worst_time:.6g}, {self.worst_position})",
            f"verdict: {'pass' if self.passed else 'fail'}",
        ]
        return "\n".join(lines) + "\n"

    def write_csv(self, path: str):
        table = np.column_stack([self.times, self.slice_margins, self.judged.astype(np.float64)])
        np.savetxt(path, table, fmt="%.17g", delimiter=",", header="t,min_margin,judged", comments="")


def subsolution_check(
    candidate: SubsolutionCandidate, constitutive: ConstitutiveSet, threads: int = 1, lambda0: float = None
) -> AuditReport:
    """Margin e - (N/2) lambda_max[(v + h)(v + h)/rho - F + M] on every cell of every slice, h = V + grad Phi."""
    margins = Parallel(n_jobs=threads, backend="threading")(
        delayed(_slice_margin)(candidate, k, constitutive) for k in range(len(candidate))
    )
    return AuditReport(candidate.times, margins, candidate.grid, lambda0)


def kinetic_energy_defect(candidate: SubsolutionCandidate) -> np.ndarray:
    """Per slice int 1/2 |v + h|^2 / rho - int e, with e taken from the pressureless constraint."""
    grid = candidate.grid
    defects = []
    for k in range(len(candidate)):
        V = candidate.V[k].reshape((grid.dim,) + (1,) * grid.dim)
        momentum = candidate.v[k].values + V + grid.gradient(candidate.phi[k].values)
        kinetic = grid.integrate(0.5 * (momentum ** 2).sum(axis=0) / candidate.rho[k].values)
        e = candidate.lam[k] - 0.5 * grid.dim * candidate.phi_t[k].values
        defects.append(float(kinetic - grid.integrate(e)))
    return np.array(defects)


def candidate_from_potential(
    potential: DensityPotential,
    v0: VectorField,
    lam,
    constitutive: ConstitutiveSet,
    V0,
    F: List[SymTensorField] = None,
) -> SubsolutionCandidate:
    """Stationary v = v0 with V from the mean-momentum ODE and F = 0 unless given."""
    grid = potential.grid
    times = potential.times
    V = solve_V_ode(potential, v0, lam, constitutive, V0)
    lam_at = _interpolate_series(lam, times)
    if F is None:
        F = [SymTensorField.zeros(grid) for _ in times]
    return SubsolutionCandidate(
        times,
        [v0] * len(times),
        F,
        potential.rho(),
        potential.phi(),
        potential.phi_t(),
        V,
        [lam_at(t) for t in times],
    )


def candidate_from_initial_data(
    rho0: ScalarField,
    m0: VectorField,
    times: Sequence[float],
    lam,
    constitutive: ConstitutiveSet,
    rho_floor: float,
) -> SubsolutionCandidate:
    """Split m0 = v0 + V0 + grad Phi0 and build the candidate generated by (rho0, Phi0, v0, V0)."""
    parts = helmholtz_decompose(m0)
    potential = build_density_potential(rho0, parts.potential, times, rho_floor)
    return candidate_from_potential(potential, parts.solenoidal, lam, constitutive, parts.mean)


def _lambda_lower_bound(potential: DensityPotential, pressure: PressureLaw, judged: np.ndarray) -> float:
    dim = potential.grid.dim
    bounds = []
    for t in potential.times[judged]:
        rho, _, phi_t, _ = potential.at(t)
        bounds.append(float(np.max(0.5 * dim * (pressure.pressure(rho) + phi_t))))
    return max(bounds)


def find_lambda0(
    v0: VectorField,
    potential: DensityPotential,
    constitutive: ConstitutiveSet,
    V0=None,
    threads: int = 1,
    tol: float = LAMBDA_TOL,
) -> float:
    """Smallest constant Lambda for which the candidate (v0, F = 0) keeps a margin >= 1e-8 on the judged slices.

    V and M depend on Lambda through e, so a damped fixed point on Lambda -> Lambda_needed(Lambda) is run first and
    the result is then refined by bisection.
    """
    grid = potential.grid
    if V0 is None:
        V0 = np.zeros(grid.dim)
    times = potential.times
    judged = np.arange(len(times)) >= (1 if len(times) > 1 else 0)

    def evaluate(lam):
        try:
            candidate = candidate_from_potential(potential, v0, lam, constitutive, V0)
        except NonPositiveEnergy:
            return None
        return subsolution_check(candidate, constitutive, threads=threads)

    def passes(lam):
        report = evaluate(lam)
        return report is not None and report.passed

    lower = _lambda_lower_bound(potential, constitutive.pressure, judged)
    lam = lower + 1.0
    for iteration in range(FIXED_POINT_MAX_ITER):
        report = evaluate(lam)
        if report is None:
            raise LambdaSearchDiverged(f"Fixed point left the admissible region at Lambda={lam}")
        needed = lam - report.min_margin + MARGIN_THRESHOLD
        step = FIXED_POINT_DAMPING * (needed - lam)
        logger.debug("Lambda fixed point %d: Lambda=%.9g, needed=%.9g", iteration, lam, needed)
        lam += step
        if abs(step) <= tol:
            break
    else:
        raise LambdaSearchDiverged(f"Lambda fixed point did not converge in {FIXED_POINT_MAX_ITER} iterations")

    upper = lam + tol
    gap = max(tol, 1e-3 * max(1.0, abs(upper)))
    for _ in range(50):
        if passes(upper):
            break
        upper += gap
        gap *= 2.0
    else:
        raise LambdaSearchDiverged(f"No admissible Lambda found above {lam}")

    while upper - lower > tol:
        middle = 0.5 * (lower + upper)
        if passes(middle):
            upper = middle
        else:
            lower = middle
    return upper


def standard_inequality_slack(h: np.ndarray, r, H_tilde: np.ndarray) -> np.ndarray:
    """(N/2) lambda_max[h h / r - H_tilde] - 1/2 |h|^2 / r for batches of (h, r, H_tilde)."""
    h = np.asarray(h, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    H_tilde = np.asarray(H_tilde, dtype=np.float64)
    dim = h.shape[-1]
    trace = np.trace(H_tilde, axis1=-2, axis2=-1)
    if np.any(np.abs(trace) > 1e-10 * max(1.0, float(np.abs(H_tilde).max()))):
        raise ValueError("H_tilde must be trace-free")
    outer = h[..., :, np.newaxis] * h[..., np.newaxis, :] / r[..., np.newaxis, np.newaxis]
    return 0.5 * dim * lambda_max(outer - H_tilde) - 0.5 * (h ** 2).sum(axis=-1) / r


def standard_inequality_check(h: np.ndarray, r: float, H_tilde: np.ndarray) -> bool:
    return bool(np.all(standard_inequality_slack(h, r, H_tilde) >= -1e-12))


def dissipation_bound_constant(constitutive: ConstitutiveSet, grid: TorusGrid, mass: float) -> float:
    """c with |energy input| <= c (1 + Lambda): 2|Omega| (max(H_inf - 1, 0) + 2 psi_max M)."""
    bound = constitutive.friction.bound
    if not np.isfinite(bound):
        raise DissipationBoundUnavailable(f"Friction {constitutive.friction} is unbounded")
    kernels = constitutive.on_torus(grid)
    psi_max = 0.0 if kernels.communication is None else float(kernels.communication.values.values.max())
    return 2.0 * grid.volume * (max(bound - 1.0, 0.0) + 2.0 * psi_max * mass)


def dissipative_lambda(lambda0: float, c: float, volume: float, horizon: Sequence[float] = (0.0,)) -> DissipativeLambda:
    """Smallest power of two lambda with |Omega| lambda e^{-lambda t} >= c (1 + Lambda(t)) on ``horizon``."""
    if c is None or c < 0.0:
        raise DissipationBoundUnavailable(f"Dissipation bound c={c} is unavailable")
    horizon = np.asarray(horizon, dtype=np.float64)

    for exponent in range(MAX_LAMBDA_EXPONENT + 1):
        rate = float(2 ** exponent)
        decay = np.exp(-rate * horizon)
        if np.all(volume * rate * decay >= c * (1.0 + lambda0 + decay)):
            return DissipativeLambda(rate=rate, schedule=lambda t, rate=rate: lambda0 + np.exp(-rate * np.asarray(t)))
    raise DissipationBoundUnavailable(f"No lambda <= 2^{MAX_LAMBDA_EXPONENT} meets the bound c={c}")
