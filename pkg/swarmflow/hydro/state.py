import logging
from typing import Dict, List

import joblib
import numpy as np

from swarmflow.errors import NegativeDensityError
from swarmflow.torus import ScalarField, TorusGrid, VectorField

VACUUM_FLOOR = 1e-12
NEGATIVE_DENSITY_TOL = 1e-12

logger = logging.getLogger(__name__)


class HydroState(object):
    """Conserved variables (rho, m = rho u) at time t."""

    def __init__(self, rho: ScalarField, m: VectorField, t: float = 0.0):
        if rho.grid != m.grid:
            raise ValueError(f"Density on {rho.grid} but momentum on {m.grid}")
        if rho.values.min() < -NEGATIVE_DENSITY_TOL:
            raise NegativeDensityError(f"Density {rho.values.min():.3e} < 0 at t={t}")
        self.rho = rho
        self.m = m
        self.t = float(t)

    @classmethod
    def from_primitive(cls, rho: ScalarField, u: VectorField, t: float = 0.0) -> "HydroState":
        return cls(rho, VectorField(rho.grid, rho.values * u.values), t)

    @property
    def grid(self) -> TorusGrid:
        return self.rho.grid

    def velocity(self, floor: float = VACUUM_FLOOR) -> np.ndarray:
        rho = self.rho.values
        safe = np.where(rho > floor, rho, 1.0)
        return np.where(rho > floor, self.m.values / safe, 0.0)

    def velocity_field(self, floor: float = VACUUM_FLOOR) -> VectorField:
        return VectorField(self.grid, self.velocity(floor))

    def mass(self) -> float:
        return float(self.rho.integral())

    def momentum(self) -> np.ndarray:
        return np.asarray(self.m.integral())

    def __repr__(self):
        return f"HydroState(grid={self.grid}, t={self.t}, mass={self.mass():.12g})"


class SchemeConfig(object):
    FLUXES = ("rusanov", "hll")
    TIME_STEPPERS = ("euler", "ssp_rk2")

    def __init__(
        self,
        cfl: float = 0.9,
        flux: str = "rusanov",
        time: str = "ssp_rk2",
        vacuum_floor: float = VACUUM_FLOOR,
        pressureless: bool = False,
        poisson_forcing: bool = False,
        dt: float = None,
        max_dt: float = 1e-2,
    ):
        if not 0.0 < cfl <= 1.0:
            raise ValueError(f"cfl must lie in (0, 1], got {cfl}")
        if flux not in self.FLUXES:
            raise ValueError(f"Unknown flux: {flux}")
        if time not in self.TIME_STEPPERS:
            raise ValueError(f"Unknown time stepper: {time}")
        if vacuum_floor < 0.0:
            raise ValueError(f"vacuum_floor must be >= 0, got {vacuum_floor}")

        self.cfl = cfl
        self.flux = flux
        self.time = time
        self.vacuum_floor = vacuum_floor
        self.pressureless = pressureless
        self.poisson_forcing = poisson_forcing
        self.dt = dt
        self.max_dt = max_dt

    def to_dict(self) -> Dict:
        return dict(
            cfl=self.cfl,
            flux=self.flux,
            time=self.time,
            vacuum_floor=self.vacuum_floor,
            pressureless=self.pressureless,
            poisson_forcing=self.poisson_forcing,
            dt=self.dt,
            max_dt=self.max_dt,
        )


class Trajectory(object):
    """Snapshots of a hydro run at its output times, plus the per-output diagnostics table."""

    def __init__(self, states: List[HydroState], max_step: float = 0.0, columns: List[str] = None, diagnostics=None):
        if not states:
            raise ValueError("A trajectory needs at least one state")
        self.states = states
        self.max_step = max_step
        self.columns = columns or []
        self.diagnostics = np.asarray(diagnostics) if diagnostics is not None else np.zeros((0, 0))

    @property
    def grid(self) -> TorusGrid:
        return self.states[0].grid

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    def __len__(self):
        return len(self.states)

    def __getitem__(self, index) -> HydroState:
        return self.states[index]

    def save(self, out_file: str):
        joblib.dump(
            dict(
                dim=self.grid.dim,
                cells_per_axis=self.grid.cells_per_axis,
                times=self.times,
                rho=np.stack([s.rho.values for s in self.states]),
                m=np.stack([s.m.values for s in self.states]),
                max_step=self.max_step,
                columns=self.columns,
                diagnostics=self.diagnostics,
            ),
            out_file,
        )

    @staticmethod
    def load(in_file: str) -> "Trajectory":
        data = joblib.load(in_file)
        grid = TorusGrid(data["dim"], data["cells_per_axis"])
        states = [
            HydroState(ScalarField(grid, rho), VectorField(grid, m), t)
            for (t, rho, m) in zip(data["times"], data["rho"], data["m"])
        ]
        return Trajectory(states, data["max_step"], data["columns"], data["diagnostics"])


class StrongSolution(object):
    """Smooth reference (r, U) sampled on the coarse grid at the output times."""

    def __init__(self, r: List[ScalarField], U: List[VectorField], times, t_strong: float = None):
        if len(r) != len(U) or len(r) != len(times) or not r:
            raise ValueError("r, U and times must be non-empty and of equal length")
        self.r = r
        self.U = U
        self.times = np.asarray(times, dtype=np.float64)
        self.t_strong = t_strong

    @property
    def grid(self) -> TorusGrid:
        return self.r[0].grid

    @property
    def rho_low(self) -> float:
        return float(min(r.values.min() for r in self.r))

    @property
    def rho_high(self) -> float:
        return float(max(r.values.max() for r in self.r))

    def lipschitz(self) -> Dict[str, float]:
        grid = self.grid
        return dict(
            grad_U=float(max(np.abs(grid.gradient(c)).max() for U in self.U for c in U.values)),
            grad_r=float(max(np.abs(grid.gradient(r.values)).max() for r in self.r)),
        )

    def time_derivatives(self):
        """Centred differences in time (one-sided at the ends) of r and U."""
        if len(self.times) < 2:
            zeros_r = [r.like(np.zeros_like(r.values)) for r in self.r]
            zeros_u = [U.like(np.zeros_like(U.values)) for U in self.U]
            return zeros_r, zeros_u
        r_t = np.gradient(np.stack([r.values for r in self.r]), self.times, axis=0)
        U_t = np.gradient(np.stack([U.values for U in self.U]), self.times, axis=0)
        return [self.r[0].like(v) for v in r_t], [self.U[0].like(v) for v in U_t]

    def save(self, out_file: str):
        joblib.dump(
            dict(
                dim=self.grid.dim,
                cells_per_axis=self.grid.cells_per_axis,
                times=self.times,
                r=np.stack([r.values for r in self.r]),
                U=np.stack([U.values for U in self.U]),
                t_strong=self.t_strong,
            ),
            out_file,
        )

    @staticmethod
    def load(in_file: str) -> "StrongSolution":
        data = joblib.load(in_file)
        grid = TorusGrid(data["dim"], data["cells_per_axis"])
        return StrongSolution(
            [ScalarField(grid, r) for r in data["r"]],
            [VectorField(grid, U) for U in data["U"]],
            data["times"],
            data["t_strong"],
        )
