import logging
from typing import Callable, Sequence, Union

import numpy as np
from tqdm import tqdm

from swarmflow.constitutive import ConstitutiveSet
from swarmflow.errors import DegenerateStrongDensity
from swarmflow.hydro.sources import poisson_potential_array
from swarmflow.hydro.state import SchemeConfig, StrongSolution
from swarmflow.torus import ScalarField, TorusGrid, VectorField

DEFAULT_REFINEMENT = 4
BLOWUP_THRESHOLD = 1e3

logger = logging.getLogger(__name__)


def spectral_upsample(values: np.ndarray, grid: TorusGrid, fine: TorusGrid) -> np.ndarray:
    """Trigonometric interpolation of cell-centre samples from ``grid`` onto the cell centres of ``fine``."""
    n, nf = grid.cells_per_axis, fine.cells_per_axis
    half = n // 2
    shift = 0.5 * (fine.spacing - grid.spacing)
    modes = np.fft.fftfreq(n, 1.0 / n).astype(int)
    phase = np.exp(1j * np.pi * modes * shift)

    for axis in grid.axes:
        coarse_hat = np.moveaxis(np.fft.fft(values, axis=axis), axis, 0)
        fine_hat = np.zeros((nf,) + coarse_hat.shape[1:], dtype=np.complex128)
        regular = modes != -half
        fine_hat[np.mod(modes[regular], nf)] = coarse_hat[regular] * phase[regular].reshape(
            (-1,) + (1,) * (coarse_hat.ndim - 1)
        )
        # the Nyquist mode is split evenly between +n/2 and -n/2 to keep the interpolant real
        nyquist = 0.5 * coarse_hat[half]
        fine_hat[half] += nyquist * np.exp(1j * np.pi * half * shift)
        fine_hat[nf - half] += nyquist * np.exp(-1j * np.pi * half * shift)
        values = np.moveaxis(np.fft.ifft(fine_hat, axis=0).real * (nf / n), 0, axis)
    return values


def block_average(values: np.ndarray, grid: TorusGrid, factor: int) -> np.ndarray:
    for axis in grid.axes:
        moved = np.moveaxis(values, axis, -1)
        moved = moved.reshape(moved.shape[:-1] + (moved.shape[-1] // factor, factor)).mean(axis=-1)
        values = np.moveaxis(moved, -1, axis)
    return values


def _central(values: np.ndarray, d: int, grid: TorusGrid) -> np.ndarray:
    axis = d - grid.dim
    return (np.roll(values, -1, axis=axis) - np.roll(values, 1, axis=axis)) / (2.0 * grid.spacing)


class _PrimitiveScheme(object):
    """Conservative density update and primitive velocity update on the fine grid."""

    def __init__(self, grid: TorusGrid, constitutive: ConstitutiveSet, scheme: SchemeConfig):
        self.grid = grid
        self.constitutive = constitutive.pressureless() if scheme.pressureless else constitutive
        self.scheme = scheme
        self.kernels = self.constitutive.on_torus(grid)

    def sound_speed(self, r: np.ndarray) -> np.ndarray:
        return self.constitutive.pressure.sound_speed(r)

    def max_speed(self, r: np.ndarray, U: np.ndarray) -> float:
        c = self.sound_speed(r)
        return float(np.max(sum(np.abs(U[d]) + c for d in range(self.grid.dim))))

    def velocity_gradient_norm(self, U: np.ndarray) -> float:
        return float(max(np.abs(_central(U, d, self.grid)).max() for d in range(self.grid.dim)))

    def rhs(self, r: np.ndarray, U: np.ndarray):
        grid = self.grid
        h = grid.spacing
        c = self.sound_speed(r)
        p = self.constitutive.pressure.pressure(r)

        dr = np.zeros_like(r)
        dU = np.zeros_like(U)
        for d in range(grid.dim):
            axis = d - grid.dim
            speed = np.abs(U[d]) + c
            face_speed = np.maximum(speed, np.roll(speed, -1, axis=axis))

            flux = r * U[d]
            face_flux = 0.5 * (flux + np.roll(flux, -1, axis=axis)) - 0.5 * face_speed * (np.roll(r, -1, axis=axis) - r)
            dr -= (face_flux - np.roll(face_flux, 1, axis=axis)) / h

            jump = np.roll(U, -1, axis=axis) - U
            viscous = face_speed * jump
            dU += (viscous - np.roll(viscous, 1, axis=axis)) / (2.0 * h)
            dU -= U[d] * _central(U, d, grid)
            dU[d] -= _central(p, d, grid) / r

        speed_sq = (U ** 2).sum(axis=0)
        dU += (1.0 - self.constitutive.friction(speed_sq)) * U
        if self.kernels.interaction is not None:
            dU -= grid.gradient(grid.convolve(self.kernels.interaction.values.values, r))
        if self.kernels.communication is not None:
            psi = self.kernels.communication.values.values
            dU += grid.convolve(psi, r * U) - U * grid.convolve(psi, r)
        if self.scheme.poisson_forcing:
            dU -= grid.gradient(poisson_potential_array(grid, r))
        return dr, dU

    def step(self, r: np.ndarray, U: np.ndarray, dt: float):
        dr, dU = self.rhs(r, U)
        r1, U1 = r + dt * dr, U + dt * dU
        if self.scheme.time == "euler":
            return r1, U1
        dr, dU = self.rhs(r1, U1)
        return 0.5 * (r + r1 + dt * dr), 0.5 * (U + U1 + dt * dU)


def _fine_values(data, grid: TorusGrid, fine: TorusGrid, vector: bool) -> np.ndarray:
    if callable(data):
        field_class = VectorField if vector else ScalarField
        return np.array(field_class.from_function(fine, data).values)
    return spectral_upsample(np.asarray(data.values), grid, fine)


def strong_reference(
    rho0: Union[ScalarField, Callable],
    u0: Union[VectorField, Callable],
    constitutive: ConstitutiveSet,
    scheme: SchemeConfig,
    t_end: float,
    output_times: Sequence[float],
    grid: TorusGrid = None,
    refinement: int = DEFAULT_REFINEMENT,
    blowup_threshold: float = BLOWUP_THRESHOLD,
    progress: bool = False,
) -> StrongSolution:
    """Smooth reference solution computed ``refinement`` times finer and block-averaged back to the coarse grid.

    Initial data may be fields on the coarse grid (spectrally interpolated) or callables of the coordinates. The
    run stops when |grad U| exceeds ``blowup_threshold`` or the density stops being positive; the time reached is
    recorded as ``t_strong`` and only the samples before it are returned.
    """
    if grid is None:
        if callable(rho0):
            raise ValueError("A coarse grid is required when the initial data are callables")
        grid = rho0.grid
    if refinement < 1:
        raise ValueError(f"refinement must be >= 1, got {refinement}")

    fine = TorusGrid(grid.dim, grid.cells_per_axis * refinement)
    r = _fine_values(rho0, grid, fine, vector=False)
    U = _fine_values(u0, grid, fine, vector=True)
    if r.min() <= 0.0:
        raise DegenerateStrongDensity(f"Strong reference needs r > 0, got min r = {r.min():.3e}")

    solver = _PrimitiveScheme(fine, constitutive, scheme)
    targets = [0.0] + sorted(set(float(t) for t in output_times if 0.0 < t <= t_end))
    snap = 1e-12 * max(1.0, t_end)

    samples_r, samples_U, times = [], [], []
    t = 0.0
    t_strong = None

    def store():
        r_coarse = block_average(r, fine, refinement)
        samples_r.append(ScalarField(grid, r_coarse))
        samples_U.append(VectorField(grid, block_average(r * U, fine, refinement) / r_coarse))
        times.append(t)

    with tqdm(total=t_end, disable=not progress, unit="t") as bar:
        for target in targets:
            while t < target - snap:
                speed = solver.max_speed(r, U)
                dt = scheme.max_dt if speed <= 0.0 else min(scheme.cfl * fine.spacing / speed, scheme.max_dt)
                dt = min(dt, target - t)
                r_next, U_next = solver.step(r, U, dt)
                if (
                    not np.all(np.isfinite(U_next))
                    or r_next.min() <= 0.0
                    or solver.velocity_gradient_norm(U_next) > blowup_threshold
                ):
                    t_strong = t + dt
                    break
                r, U = r_next, U_next
                t = target if target - (t + dt) <= snap else t + dt
                bar.update(dt)
            if t_strong is not None:
                logger.warning("Strong reference lost regularity near t=%.6g; keeping %d samples", t_strong, len(times))
                break
            store()

    return StrongSolution(samples_r, samples_U, times, t_strong)
