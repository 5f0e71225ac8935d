import logging
from typing import Sequence, Tuple

import numpy as np
from tqdm import tqdm

from swarmflow.constitutive import ConstitutiveSet
from swarmflow.energy import LedgerTracker
from swarmflow.errors import NegativeDensityError
from swarmflow.hydro.sources import source_arrays
from swarmflow.hydro.state import NEGATIVE_DENSITY_TOL, HydroState, SchemeConfig, Trajectory
from swarmflow.torus import ScalarField, TorusGrid, VectorField

TIME_SNAP_RTOL = 1e-12

logger = logging.getLogger(__name__)


def _pressure(constitutive: ConstitutiveSet, scheme: SchemeConfig, rho: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    if scheme.pressureless or constitutive.pressure.is_zero:
        zeros = np.zeros_like(rho)
        return zeros, zeros
    return constitutive.pressure.pressure(rho), constitutive.pressure.sound_speed(rho)


def _velocity(rho: np.ndarray, m: np.ndarray, floor: float) -> np.ndarray:
    positive = rho > floor
    return np.where(positive, m / np.where(positive, rho, 1.0), 0.0)


def _physical_flux(q: np.ndarray, u: np.ndarray, p: np.ndarray, d: int) -> np.ndarray:
    """Flux along axis d of q = (rho, m_1, ..., m_N)."""
    flux = q * u[d]
    flux[1 + d] += p
    return flux


def _interface_flux(
    grid: TorusGrid, q: np.ndarray, u: np.ndarray, p: np.ndarray, c: np.ndarray, d: int, kind: str
) -> np.ndarray:
    """Numerical flux through the face between cell i and cell i+1 along axis d."""
    axis = d - grid.dim
    q_right = np.roll(q, -1, axis=axis)
    u_right = np.roll(u, -1, axis=axis)
    p_right = np.roll(p, -1, axis=axis)
    c_right = np.roll(c, -1, axis=axis)

    flux_left = _physical_flux(q, u, p, d)
    flux_right = _physical_flux(q_right, u_right, p_right, d)

    if kind == "rusanov":
        speed = np.maximum(np.abs(u[d]) + c, np.abs(u_right[d]) + c_right)
        return 0.5 * (flux_left + flux_right) - 0.5 * speed * (q_right - q)

    s_left = np.minimum(u[d] - c, u_right[d] - c_right)
    s_right = np.maximum(u[d] + c, u_right[d] + c_right)
    width = np.where(s_right > s_left, s_right - s_left, 1.0)
    middle = (s_right * flux_left - s_left * flux_right + s_left * s_right * (q_right - q)) / width
    return np.where(s_left >= 0.0, flux_left, np.where(s_right <= 0.0, flux_right, middle))


def _rhs(grid: TorusGrid, q: np.ndarray, constitutive: ConstitutiveSet, scheme: SchemeConfig) -> np.ndarray:
    """Semi-discrete right-hand side of the conserved variables."""
    rho, m = q[0], q[1:]
    u = _velocity(rho, m, scheme.vacuum_floor)
    p, c = _pressure(constitutive, scheme, rho)

    dq = np.zeros_like(q)
    for d in range(grid.dim):
        flux = _interface_flux(grid, q, u, p, c, d, scheme.flux)
        dq -= (flux - np.roll(flux, 1, axis=d - grid.dim)) / grid.spacing

    sources = source_arrays(grid, rho, m, u, constitutive, scheme.poisson_forcing)
    dq[1:] += sources.total

    return dq


def _apply_floor(q: np.ndarray, scheme: SchemeConfig, t: float) -> np.ndarray:
    rho = q[0]
    lowest = float(rho.min())
    if lowest < -NEGATIVE_DENSITY_TOL:
        where = np.unravel_index(int(np.argmin(rho)), rho.shape)
        raise NegativeDensityError(f"Density {lowest:.3e} at cell {where} near t={t:.6g}")

    vacuum = rho < scheme.vacuum_floor
    if np.any(vacuum):
        logger.warning("Clamped %d vacuum cells at t=%.6g", int(vacuum.sum()), t)
        q = q.copy()
        q[0][vacuum] = scheme.vacuum_floor
        q[1:, vacuum] = 0.0
    return q


def stable_dt(state: HydroState, constitutive: ConstitutiveSet, scheme: SchemeConfig) -> float:
    """CFL step cfl * h / max(sum_d |u_d| + c), capped by ``scheme.max_dt``."""
    grid = state.grid
    u = state.velocity(scheme.vacuum_floor)
    _, c = _pressure(constitutive, scheme, state.rho.values)
    speed = float(np.max(sum(np.abs(u[d]) + c for d in range(grid.dim))))
    dt = scheme.max_dt if speed <= 0.0 else min(scheme.cfl * grid.spacing / speed, scheme.max_dt)
    if scheme.dt is not None:
        if scheme.dt > dt:
            logger.info("Requested dt=%.3e violates the CFL bound, using dt=%.3e", scheme.dt, dt)
        else:
            dt = scheme.dt
    return dt


def _pack(state: HydroState) -> np.ndarray:
    return np.concatenate([state.rho.values[np.newaxis], state.m.values])


def _unpack(grid: TorusGrid, q: np.ndarray, t: float) -> HydroState:
    return HydroState(ScalarField(grid, q[0]), VectorField(grid, q[1:]), t)


def step(state: HydroState, scheme: SchemeConfig, constitutive: ConstitutiveSet, dt: float = None) -> HydroState:
    """Advance one time step; ``dt`` defaults to the CFL step."""
    grid = state.grid
    if dt is None:
        dt = stable_dt(state, constitutive, scheme)

    q = _pack(state)
    dq = _rhs(grid, q, constitutive, scheme)
    stage = _apply_floor(q + dt * dq, scheme, state.t + dt)
    if scheme.time == "ssp_rk2":
        dq = _rhs(grid, stage, constitutive, scheme)
        stage = _apply_floor(0.5 * q + 0.5 * (stage + dt * dq), scheme, state.t + dt)

    return _unpack(grid, stage, state.t + dt)


def run(
    initial: HydroState,
    scheme: SchemeConfig,
    constitutive: ConstitutiveSet,
    t_end: float,
    output_times: Sequence[float] = None,
    diagnostics_path: str = None,
    progress: bool = False,
) -> Trajectory:
    """Integrate from ``initial`` to ``t_end``, storing snapshots and energy diagnostics at ``output_times``.

    Internal steps are shortened so every output time is hit exactly. The diagnostics table is written as CSV to
    ``diagnostics_path`` when given.
    """
    if t_end < 0.0:
        raise ValueError(f"t_end must be >= 0, got {t_end}")
    if output_times is None:
        output_times = [t_end]
    if scheme.pressureless:
        constitutive = constitutive.pressureless()
    targets = sorted(set(float(t) for t in output_times if initial.t < t <= t_end))

    tracker = LedgerTracker(constitutive, poisson=scheme.poisson_forcing)
    tracker.record(initial)
    states = [initial]
    state = initial
    max_step = 0.0
    snap = TIME_SNAP_RTOL * max(1.0, t_end)

    with tqdm(total=t_end - initial.t, disable=not progress, unit="t") as bar:
        for target in targets:
            while state.t < target - snap:
                dt = min(stable_dt(state, constitutive, scheme), target - state.t)
                previous = state.t
                state = step(state, scheme, constitutive, dt)
                if target - state.t <= snap:
                    state = HydroState(state.rho, state.m, target)
                max_step = max(max_step, dt)
                bar.update(state.t - previous)
            states.append(state)
            tracker.record(state)
            logger.debug("Reached t=%.6g (mass %.12g)", state.t, state.mass())

    trajectory = Trajectory(states, max_step, tracker.columns, tracker.table())
    if diagnostics_path is not None:
        tracker.write_csv(diagnostics_path)
    return trajectory
