import itertools
import logging
from typing import List, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.optimize import minimize
from scipy.spatial.distance import cdist
from tqdm import tqdm

from swarmflow.constitutive import Kernel, ZeroKernel, sample_kernel_on_torus
from swarmflow.errors import FlockNotConverged, SwarmDiverged
from swarmflow.torus import PERIOD, ScalarField, TorusGrid, VectorField

BLOCK_SIZE = 256
FLOCK_RESTARTS = 5

logger = logging.getLogger(__name__)


class ParticleState(object):
    def __init__(self, x, v, t: float = 0.0, torus: bool = True):
        x = np.array(x, dtype=np.float64)
        v = np.array(v, dtype=np.float64)
        if x.ndim != 2 or x.shape != v.shape or x.shape[0] < 1:
            raise ValueError(f"Positions and velocities must share a shape (n, N), got {x.shape} and {v.shape}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            raise SwarmDiverged(f"Non-finite particle coordinates at t={t}")
        if torus:
            x = np.mod(x + 1.0, PERIOD) - 1.0

        self.x = x
        self.v = v
        self.t = float(t)
        self.torus = torus

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def __repr__(self):
        return f"ParticleState(n={self.n}, dim={self.dim}, t={self.t})"


class SwarmConfig(object):
    def __init__(
        self,
        alpha: float = 0.0,
        self_propulsion: bool = True,
        mean_field_scaling: bool = True,
        interaction: Kernel = None,
        communication: Kernel = None,
        dt: float = 0.01,
        torus: bool = True,
        force_method: str = "direct",
        grid: TorusGrid = None,
        threads: int = 1,
    ):
        if dt <= 0.0:
            raise ValueError(f"dt must be positive, got {dt}")
        if alpha < 0.0:
            raise ValueError(f"alpha must be non-negative, got {alpha}")
        if force_method not in ("direct", "mesh"):
            raise ValueError(f"Unknown force method: {force_method}")
        if force_method == "mesh" and (grid is None or not torus):
            raise ValueError("Mesh forces need torus mode and a grid")

        self.alpha = alpha
        self.self_propulsion = self_propulsion
        self.mean_field_scaling = mean_field_scaling
        self.interaction = interaction if interaction is not None else ZeroKernel()
        self.communication = communication if communication is not None else ZeroKernel()
        self.dt = dt
        self.torus = torus
        self.force_method = force_method
        self.grid = grid
        self.threads = threads
        self._mesh_kernels = None

    def mesh_kernels(self):
        if self._mesh_kernels is None:
            self._mesh_kernels = tuple(
                None if kernel.is_zero else sample_kernel_on_torus(kernel, self.grid).values.values
                for kernel in (self.interaction, self.communication)
            )
        return self._mesh_kernels


def _pair_block(x, v, rows, interaction, communication, torus) -> Tuple[np.ndarray, int]:
    dz = x[rows, None, :] - x[None, :, :]
    if torus:
        dz -= PERIOD * np.round(dz / PERIOD)
    local = np.arange(rows.stop - rows.start)
    force = np.zeros((len(local), x.shape[1]))
    singular = 0

    if not interaction.is_zero:
        with np.errstate(divide="ignore", invalid="ignore"):
            grad = interaction.gradient(dz)
        grad[local, local + rows.start] = 0.0
        bad = ~np.all(np.isfinite(grad), axis=-1)
        singular = int(bad.sum())
        grad[bad] = 0.0
        force -= grad.sum(axis=1)

    if not communication.is_zero:
        weights = communication(dz)
        force += weights @ v - weights.sum(axis=1)[:, None] * v[rows]

    return force, singular


def _direct_forces(state: ParticleState, cfg: SwarmConfig) -> np.ndarray:
    blocks = [slice(start, min(start + BLOCK_SIZE, state.n)) for start in range(0, state.n, BLOCK_SIZE)]
    results = Parallel(n_jobs=cfg.threads, backend="threading")(
        delayed(_pair_block)(state.x, state.v, rows, cfg.interaction, cfg.communication, state.torus)
        for rows in blocks
    )
    singular = sum(count for (_, count) in results)
    if singular:
        logger.warning("Zeroed %d singular pair forces at t=%.6g (coincident particles)", singular, state.t)
    return np.concatenate([force for (force, _) in results])


def _cic_stencil(grid: TorusGrid, x: np.ndarray) -> List[Tuple[np.ndarray, np.ndarray]]:
    s = (x + 1.0) / grid.spacing - 0.5
    base = np.floor(s).astype(np.int64)
    frac = s - base

    stencil = []
    for corner in itertools.product((0, 1), repeat=grid.dim):
        corner = np.array(corner)
        index = np.mod(base + corner, grid.cells_per_axis)
        weight = np.prod(np.where(corner == 1, frac, 1.0 - frac), axis=1)
        stencil.append((np.ravel_multi_index(tuple(index.T), grid.shape), weight))
    return stencil


def _deposit_arrays(grid: TorusGrid, x: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mass = 1.0 / x.shape[0]
    rho = np.zeros(grid.size)
    m = np.zeros((grid.dim, grid.size))
    for (flat, weight) in _cic_stencil(grid, x):
        rho += np.bincount(flat, weights=mass * weight, minlength=grid.size)
        for d in range(grid.dim):
            m[d] += np.bincount(flat, weights=mass * weight * v[:, d], minlength=grid.size)
    return rho.reshape(grid.shape) / grid.cell_volume, m.reshape((grid.dim,) + grid.shape) / grid.cell_volume


def interpolate(grid: TorusGrid, values: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Cloud-in-cell interpolation of a grid array with optional leading component axis onto positions."""
    flat_values = values.reshape(values.shape[: values.ndim - grid.dim] + (grid.size,))
    return sum(flat_values[..., flat] * weight for (flat, weight) in _cic_stencil(grid, x))


def _mesh_forces(state: ParticleState, cfg: SwarmConfig) -> np.ndarray:
    grid = cfg.grid
    (kernel_k, kernel_psi) = cfg.mesh_kernels()
    rho, m = _deposit_arrays(grid, state.x, state.v)
    force = np.zeros_like(state.v)

    if kernel_k is not None:
        force -= interpolate(grid, grid.gradient(grid.convolve(kernel_k, rho)), state.x).T
    if kernel_psi is not None:
        psi_rho = interpolate(grid, grid.convolve(kernel_psi, rho), state.x)
        psi_m = interpolate(grid, grid.convolve(kernel_psi, m), state.x).T
        force += psi_m - psi_rho[:, None] * state.v

    # the mesh route is mean-field by construction (deposited mass 1/n per particle)
    if not cfg.mean_field_scaling:
        force *= state.n
    return force


def particle_rhs(state: ParticleState, cfg: SwarmConfig) -> Tuple[np.ndarray, np.ndarray]:
    dx = state.v.copy()
    dv = np.zeros_like(state.v)

    if cfg.self_propulsion:
        speed_sq = (state.v ** 2).sum(axis=1, keepdims=True)
        dv += state.v - cfg.alpha * state.v * speed_sq

    if cfg.interaction.is_zero and cfg.communication.is_zero:
        return dx, dv

    if cfg.force_method == "mesh":
        dv += _mesh_forces(state, cfg)
    else:
        weight = 1.0 / state.n if cfg.mean_field_scaling else 1.0
        dv += weight * _direct_forces(state, cfg)
    return dx, dv


def step_rk4(state: ParticleState, cfg: SwarmConfig, dt: float = None) -> ParticleState:
    dt = cfg.dt if dt is None else dt

    def stage(k_prev, fraction):
        if k_prev is None:
            return state
        x = state.x + fraction * dt * k_prev[0]
        v = state.v + fraction * dt * k_prev[1]
        return _unchecked_state(x, v, state.t + fraction * dt, state.torus)

    k1 = particle_rhs(stage(None, 0.0), cfg)
    k2 = particle_rhs(stage(k1, 0.5), cfg)
    k3 = particle_rhs(stage(k2, 0.5), cfg)
    k4 = particle_rhs(stage(k3, 1.0), cfg)

    x = state.x + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
    v = state.v + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
        raise SwarmDiverged(
            f"Swarm diverged between t={state.t:.6g} and t={state.t + dt:.6g}: "
            f"max |v| before the step was {np.abs(state.v).max():.3e}"
        )
    return ParticleState(x, v, state.t + dt, torus=state.torus)


def _unchecked_state(x, v, t, torus) -> ParticleState:
    state = ParticleState.__new__(ParticleState)
    state.x, state.v, state.t, state.torus = x, v, t, torus
    return state


def evolve(state: ParticleState, cfg: SwarmConfig, t_end: float, progress: bool = False) -> ParticleState:
    num_steps = int(np.ceil((t_end - state.t) / cfg.dt - 1e-9))
    for _ in tqdm(range(num_steps), disable=not progress):
        state = step_rk4(state, cfg, dt=min(cfg.dt, t_end - state.t))
    return state


def deposit(state: ParticleState, grid: TorusGrid) -> Tuple[ScalarField, VectorField]:
    if not state.torus:
        raise ValueError("Deposition needs torus-mode particles")
    if state.dim != grid.dim:
        raise ValueError(f"Particles live in {state.dim}D, grid in {grid.dim}D")
    rho, m = _deposit_arrays(grid, state.x, state.v)
    return ScalarField(grid, rho), VectorField(grid, m)


def sample_from_density(
    rho: ScalarField, velocity: VectorField, n: int, rng: np.random.Generator
) -> ParticleState:
    """Draw n particles from a cell-wise density, uniform inside cells, with velocities u(x_i) (no spread)."""
    grid = rho.grid
    weights = np.clip(rho.values, 0.0, None).reshape(-1)
    cells = rng.choice(grid.size, size=n, p=weights / weights.sum())
    index = np.stack(np.unravel_index(cells, grid.shape), axis=1)
    x = -1.0 + (index + rng.uniform(size=(n, grid.dim))) * grid.spacing
    v = interpolate(grid, velocity.values, x).T
    return ParticleState(x, v, 0.0, torus=True)


def _flock_energy(y: np.ndarray, kernel: Kernel, n: int, dim: int) -> Tuple[float, np.ndarray]:
    x = y.reshape(n, dim)
    energy = 0.0
    grad = np.empty_like(x)
    for start in range(0, n, BLOCK_SIZE):
        rows = slice(start, min(start + BLOCK_SIZE, n))
        local = np.arange(rows.stop - rows.start)
        dz = x[rows, None, :] - x[None, :, :]
        # keep the diagonal away from the singularity, its contribution is masked below
        dz[local, local + start] = 1.0
        values = kernel(dz)
        values[local, local + start] = 0.0
        pair_grad = kernel.gradient(dz)
        pair_grad[local, local + start] = 0.0
        energy += values.sum()
        grad[rows] = pair_grad.sum(axis=1)
    return energy / (2.0 * n), grad.reshape(-1) / n


def relax_to_flock(
    kernel: Kernel,
    n: int,
    dim: int = 1,
    tol: float = 1e-5,
    max_iter: int = 20000,
    seed: int = 0,
    initial: np.ndarray = None,
) -> np.ndarray:
    """Steady flock profile sample: rest state of dx_i/dtau = -(1/n) sum_j grad K(x_i - x_j) in whole space.

    The overdamped flow is the gradient flow of (1/2n) sum_{i != j} K(x_i - x_j); its rest state is reached
    by quasi-Newton descent on that energy.
    """
    if initial is None:
        rng = np.random.default_rng(seed)
        if dim == 1:
            initial = np.sort(rng.uniform(-1.0, 1.0, size=(n, 1)), axis=0)
        else:
            radius = 0.5 * np.sqrt(rng.uniform(size=n))
            angle = rng.normal(size=(n, dim))
            initial = radius[:, None] * angle / np.linalg.norm(angle, axis=1, keepdims=True)
    y = np.asarray(initial, dtype=np.float64).reshape(-1)

    max_force = np.inf
    iterations = 0
    for attempt in range(FLOCK_RESTARTS):
        result = minimize(
            _flock_energy,
            y,
            args=(kernel, n, dim),
            jac=True,
            method="L-BFGS-B",
            options=dict(maxiter=max_iter, gtol=tol / np.sqrt(dim), ftol=0.0, maxcor=30),
        )
        y = result.x
        iterations += result.nit
        max_force = np.linalg.norm(result.jac.reshape(n, dim), axis=1).max()
        logger.debug("Flock relaxation pass %d: %d iterations, max force %.3e", attempt, result.nit, max_force)
        if max_force <= tol:
            break
    else:
        raise FlockNotConverged(f"Max force {max_force:.3e} > {tol:g} after {iterations} iterations")

    logger.info("Flock of %d particles relaxed in %d iterations (max force %.3e)", n, iterations, max_force)
    positions = y.reshape(n, dim)
    return positions[np.lexsort(positions.T[::-1])]


def mean_velocity(state: ParticleState) -> np.ndarray:
    return state.v.mean(axis=0)


def velocity_diameter(state: ParticleState) -> float:
    diameter = 0.0
    for start in range(0, state.n, BLOCK_SIZE):
        diameter = max(diameter, float(cdist(state.v[start : start + BLOCK_SIZE], state.v).max()))
    return diameter


def write_particle_csv(states: List[ParticleState], path: str):
    dim = states[0].dim
    header = ",".join(["t", "id"] + [f"x{d + 1}" for d in range(dim)] + [f"v{d + 1}" for d in range(dim)])
    rows = [
        np.column_stack([np.full(s.n, s.t), np.arange(s.n), s.x, s.v]) for s in states
    ]
    np.savetxt(path, np.concatenate(rows), delimiter=",", header=header, comments="", fmt="%.17g")
