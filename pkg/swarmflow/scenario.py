import logging
import os
import time
from collections import OrderedDict
from typing import Callable, Dict, Tuple

import click
import numpy as np
import ujson as json
from scipy.integrate import trapezoid

from swarmflow.constitutive import (
    ConstitutiveSet,
    FrictionFunction,
    PressureLaw,
    communication_kernel,
    cruise_speed,
    interaction_kernel,
    sample_kernel_on_torus,
)
from swarmflow.convex_integration import (
    SubsolutionCandidate,
    build_density_potential,
    candidate_from_potential,
    dissipation_bound_constant,
    dissipative_lambda,
    find_lambda0,
    kinetic_energy_defect,
    standard_inequality_slack,
    subsolution_check,
)
from swarmflow.energy import LedgerTracker, d3_tolerance
from swarmflow.errors import ConfigError, SingularOnTorus, SwarmflowError
from swarmflow.hydro.solver import run
from swarmflow.hydro.state import HydroState, SchemeConfig, Trajectory
from swarmflow.hydro.strong import strong_reference
from swarmflow.particles import (
    SwarmConfig,
    deposit,
    evolve,
    relax_to_flock,
    sample_from_density,
    write_particle_csv,
)
from swarmflow.relative_energy import (
    alignment_regularity_constant,
    coercivity_check,
    poisson_relative_energy,
    rei_residual,
    tzavaras_identity_check,
)
from swarmflow.torus import ScalarField, TorusGrid, VectorField, helmholtz_decompose
from swarmflow.utils.config import ScenarioConfig
from swarmflow.utils.io import SNAPSHOT_DIR, read_snapshots, write_json, write_snapshots
from swarmflow.utils.presets import load_preset, preset_names

EXIT_PASS = 0
EXIT_ERROR = 1
EXIT_CHECK_FAILED = 2

# accepted log2 ratios of errors between consecutive resolutions
D3_RATE_WINDOW = (0.8, 1.3)
MIN_REFINEMENT_RATE = 0.8
GRONWALL_STABILITY = 0.2

logger = logging.getLogger(__name__)


class RunReport(object):
    """Per-check verdicts and measured quantities of one scenario run."""

    def __init__(self, name: str):
        self.name = name
        self.checks: Dict[str, bool] = OrderedDict()
        self.measurements: Dict[str, object] = OrderedDict()
        self.notes = []
        self.wall_time = 0.0

    def check(self, name: str, passed: bool, **measurements):
        self.checks[name] = bool(passed)
        for (key, value) in measurements.items():
            self.measure(f"{name}.{key}", value)
        logger.info("Check %s: %s", name, "pass" if passed else "FAIL")

    def measure(self, key: str, value):
        if isinstance(value, np.generic):
            value = value.item()
        elif isinstance(value, np.ndarray):
            value = value.tolist()
        self.measurements[key] = value

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    @property
    def exit_code(self) -> int:
        return EXIT_PASS if self.passed else EXIT_CHECK_FAILED

    def to_dict(self) -> Dict:
        return dict(
            name=self.name,
            passed=self.passed,
            checks=dict(self.checks),
            measurements=dict(self.measurements),
            notes=list(self.notes),
            wall_time=self.wall_time,
        )

    def to_text(self) -> str:
        lines = [f"scenario: {self.name}", f"verdict: {'pass' if self.passed else 'fail'}", ""]
        lines += [f"  [{'pass' if ok else 'FAIL'}] {name}" for (name, ok) in self.checks.items()]
        lines.append("")
        lines += [f"  {key} = {value}" for (key, value) in self.measurements.items()]
        lines += [f"  note: {note}" for note in self.notes]
        lines.append(f"wall time: {self.wall_time:.2f} s")
        return "\n".join(lines) + "\n"

    def save(self, out_dir: str):
        write_json(os.path.join(out_dir, "report.json"), self.to_dict())
        with open(os.path.join(out_dir, "report.txt"), "w") as f:
            f.write(self.to_text())


def _wrap_config_errors(key: str, func: Callable, *args, **kwargs):
    try:
        return func(*args, **kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e), key=key)


def build_grid(config: ScenarioConfig) -> TorusGrid:
    return _wrap_config_errors("grid.cells", TorusGrid, config.get_int("grid.dim"), config.get_int("grid.cells"))


def build_constitutive(config: ScenarioConfig) -> ConstitutiveSet:
    pressure_kind = config.get("pressure.kind", "zero")
    if pressure_kind == "power_law":
        pressure = _wrap_config_errors(
            "pressure.gamma",
            PressureLaw.power_law,
            config.get_float("pressure.a", 1.0),
            config.get_float("pressure.gamma", 1.0),
        )
    elif pressure_kind == "zero":
        pressure = PressureLaw.zero()
    else:
        raise ConfigError(f"Unsupported pressure law {pressure_kind!r}", key="pressure.kind")

    interaction = _wrap_config_errors(
        "kernel.K.kind", interaction_kernel, config.get("kernel.K.kind", "zero"), **config.params("kernel.K")
    )
    communication = _wrap_config_errors(
        "kernel.psi.kind", communication_kernel, config.get("kernel.psi.kind", "zero"), **config.params("kernel.psi")
    )
    friction = _wrap_config_errors(
        "friction.kind",
        FrictionFunction,
        config.get("friction.kind", "unit"),
        alpha=config.get_float("friction.alpha", 1.0),
        bound=config.get("friction.bound"),
        monotone_from=config.get_float("friction.Z0", 0.0),
    )
    return ConstitutiveSet(pressure, interaction, communication, friction)


def build_scheme(config: ScenarioConfig) -> SchemeConfig:
    return _wrap_config_errors(
        "scheme",
        SchemeConfig,
        cfl=config.get_float("scheme.cfl", 0.9),
        flux=config.get("scheme.flux", "rusanov"),
        time=config.get("scheme.time", "ssp_rk2"),
        vacuum_floor=config.get_float("scheme.vacuum_floor", 1e-12),
        pressureless=bool(config.get("scheme.pressureless", False)),
        poisson_forcing=bool(config.get("scheme.poisson", False)),
        dt=config.get("time.dt"),
        max_dt=config.get_float("scheme.max_dt", 1e-2),
    )


def _constant_vector(value, dim: int) -> np.ndarray:
    vector = np.atleast_1d(np.asarray(value, dtype=np.float64))
    if vector.size == 1:
        vector = np.concatenate([vector, np.zeros(dim - 1)])
    if vector.size != dim:
        raise ConfigError(f"Expected {dim} velocity components, got {vector.size}", key="initial.u")
    return vector


def _random_modes(dim: int, modes: int, rng: np.random.Generator):
    """Non-zero integer wave vectors with entries in [-modes, modes] and random amplitudes and phases."""
    grids = np.meshgrid(*([np.arange(-modes, modes + 1)] * dim), indexing="ij")
    vectors = np.stack([g.reshape(-1) for g in grids], axis=1)
    vectors = vectors[np.abs(vectors).sum(axis=1) > 0]
    amplitudes = rng.normal(size=len(vectors)) / np.linalg.norm(vectors, axis=1) ** 2
    phases = rng.uniform(0.0, 2.0 * np.pi, size=len(vectors))
    return vectors, amplitudes / np.abs(amplitudes).sum(), phases


def _trigonometric(vectors, amplitudes, phases) -> Callable:
    def evaluate(*x):
        total = 0.0
        for (k, a, phase) in zip(vectors, amplitudes, phases):
            total = total + a * np.cos(np.pi * sum(kd * xd for (kd, xd) in zip(k, x)) + phase)
        return total

    return evaluate


def _semicircle_flock(radius: float, mollifier: float) -> Callable:
    """Unit-mass semicircle of the given radius smoothed by a Gaussian, periodized over the neighbouring cells."""
    nodes = np.linspace(-radius, radius, 801)
    weights = np.sqrt(np.clip(radius ** 2 - nodes ** 2, 0.0, None))
    weights /= trapezoid(weights, nodes)

    def evaluate(x):
        total = np.zeros_like(x)
        for shift in (-2.0, 0.0, 2.0):
            z = (x[..., None] + shift - nodes) / mollifier
            kernel = np.exp(-0.5 * z ** 2) / (np.sqrt(2.0 * np.pi) * mollifier)
            total = total + trapezoid(kernel * weights, nodes, axis=-1)
        return total

    return evaluate


def initial_data(config: ScenarioConfig, grid: TorusGrid) -> Tuple[Callable, Callable]:
    """Initial density and velocity as functions of the coordinates."""
    kind = config.get("initial.kind", "constant")
    dim = grid.dim
    amplitude = config.get_float("initial.amplitude", 0.1)

    if kind == "constant":
        rho0 = config.get_float("initial.rho", 1.0)
        u0 = _constant_vector(config.get("initial.u", 0.0), dim)
        return (lambda *x: np.full(x[0].shape, rho0)), (lambda *x: [np.full(x[0].shape, c) for c in u0])

    if kind == "sine":
        a = config.get_float("initial.rho_amplitude", 0.2)
        b = config.get_float("initial.u_amplitude", 0.2)
        return (
            lambda *x: 1.0 + a * np.sin(np.pi * x[0]),
            lambda *x: [b * np.sin(np.pi * x[0])] + [np.zeros(x[0].shape)] * (dim - 1),
        )

    if kind == "random_smooth":
        rng = np.random.default_rng(config.seed)
        modes = config.get_int("initial.modes", 3)
        density = _trigonometric(*_random_modes(dim, modes, rng))
        velocity = [_trigonometric(*_random_modes(dim, modes, rng)) for _ in range(dim)]
        return (
            lambda *x: 1.0 + amplitude * density(*x),
            lambda *x: [amplitude * component(*x) for component in velocity],
        )

    if kind == "smooth_flock":
        speed = config.get_float("initial.velocity", 0.5)
        return (
            lambda *x: 1.0 + amplitude * np.cos(np.pi * x[0]),
            lambda *x: [np.full(x[0].shape, speed)] + [np.zeros(x[0].shape)] * (dim - 1),
        )

    raise ConfigError(f"Unknown initial data {kind!r}", key="initial.kind")


def _perturbed(rho0: Callable, u0: Callable, delta: float, dim: int) -> Tuple[Callable, Callable]:
    return (
        lambda *x: rho0(*x) + delta * np.sin(np.pi * x[0]),
        lambda *x: [c + delta * np.cos(np.pi * x[0]) for c in u0(*x)],
    )


def _initial_state(grid: TorusGrid, rho0: Callable, u0: Callable) -> HydroState:
    return HydroState.from_primitive(ScalarField.from_function(grid, rho0), VectorField.from_function(grid, u0))


def _save_trajectory(trajectory: Trajectory, out_dir: str):
    if out_dir is not None:
        write_snapshots(trajectory, os.path.join(out_dir, SNAPSHOT_DIR))
        trajectory.save(os.path.join(out_dir, "trajectory.joblib"))


def _d3_check(report: RunReport, trajectory: Trajectory, config: ScenarioConfig, label: str = "d3"):
    residual = trajectory.diagnostics[:, trajectory.columns.index("d3_residual")]
    T = float(trajectory.times[-1] - trajectory.times[0])
    tolerance = d3_tolerance(
        trajectory.grid.spacing, trajectory.max_step, T, config.get_float("tolerance.d3", 1.0)
    )
    report.check(label, np.all(residual <= tolerance), max_residual=float(residual.max()), tolerance=tolerance)
    return float(np.abs(residual[-1]))


def _hydro_pipeline(config: ScenarioConfig, report: RunReport, out_dir: str, progress: bool):
    grid = build_grid(config)
    constitutive = build_constitutive(config)
    scheme = build_scheme(config)
    rho0, u0 = initial_data(config, grid)
    initial = _initial_state(grid, rho0, u0)
    T = config.get_float("time.T")

    diagnostics = None if out_dir is None else os.path.join(out_dir, "diagnostics.csv")
    trajectory = run(initial, scheme, constitutive, T, config.output_times(), diagnostics, progress)
    _save_trajectory(trajectory, out_dir)

    if config.get("checks.mass", True):
        masses = trajectory.diagnostics[:, trajectory.columns.index("mass")]
        drift = float(np.max(np.abs(masses - masses[0])) / masses[0])
        report.check("mass", drift <= config.get_float("tolerance.mass", 1e-10), relative_drift=drift)

    if config.get("checks.d3", False):
        _d3_check(report, trajectory, config)

    if config.get("checks.steady", False):
        final = trajectory[-1]
        change = max(
            float(np.abs(final.rho.values - initial.rho.values).max()),
            float(np.abs(final.m.values - initial.m.values).max()),
        )
        report.check("steady", change <= config.get_float("tolerance.steady", 1e-12), max_change=change)

    if config.get("checks.refinement", False):
        _d3_refinement(config, report, progress)

    if config.get("checks.tzavaras", False):
        rho = initial.rho
        r = ScalarField.constant(grid, float(rho.mean()))
        u = VectorField(grid, initial.velocity())
        residual = abs(tzavaras_identity_check(rho, r, u))
        final = trajectory[-1]
        identical = poisson_relative_energy(final.rho, final.velocity_field(), final.rho, final.velocity_field())
        report.check(
            "tzavaras",
            residual <= config.get_float("tolerance.tzavaras", 1e-10) and identical == 0.0,
            residual=residual,
            identical_relative_energy=identical,
        )


def _refinement_rate(coarse: float, fine: float) -> float:
    return float(np.log2(coarse / fine)) if coarse > 0.0 and fine > 0.0 else float("nan")


def _d3_refinement(config: ScenarioConfig, report: RunReport, progress: bool):
    """Final d3 residual at cells n, 2n, 4n with dt halved alongside h; it must fall at first order."""
    cells = config.get_int("grid.cells")
    max_dt = config.get_float("scheme.max_dt", 1e-2)
    residuals = []
    verdicts = []
    for level in range(3):
        refined = config.with_overrides(grid__cells=cells * 2 ** level, scheme__max_dt=max_dt / 2 ** level)
        sub_report = RunReport(f"{config.name}@{cells * 2 ** level}")
        grid = build_grid(refined)
        constitutive = build_constitutive(refined)
        rho0, u0 = initial_data(refined, grid)
        trajectory = run(
            _initial_state(grid, rho0, u0),
            build_scheme(refined),
            constitutive,
            refined.get_float("time.T"),
            refined.output_times(),
            progress=progress,
        )
        residuals.append(_d3_check(sub_report, trajectory, refined))
        verdicts.append(sub_report.passed)
    rates = [_refinement_rate(a, b) for (a, b) in zip(residuals, residuals[1:])]
    low = config.get_float("tolerance.d3_rate_low", D3_RATE_WINDOW[0])
    high = config.get_float("tolerance.d3_rate_high", D3_RATE_WINDOW[1])
    # nan rates fail the window
    first_order = all(low <= rate <= high for rate in rates)
    report.check("d3_refinement", all(verdicts) and first_order, residuals=residuals, rates=rates)


def _semicircle_cdf(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, -np.sqrt(2.0), np.sqrt(2.0))
    return 0.5 + (x * np.sqrt(2.0 - x ** 2) + 2.0 * np.arcsin(x / np.sqrt(2.0))) / (2.0 * np.pi)


def _flock_pipeline(config: ScenarioConfig, report: RunReport, out_dir: str, progress: bool):
    grid = build_grid(config)
    constitutive = build_constitutive(config)
    dim = grid.dim

    if config.get("checks.flock", True):
        n = config.get_int("particles.n", 400)
        positions = relax_to_flock(
            constitutive.interaction, n, dim, tol=config.get_float("particles.tol", 1e-5), seed=config.seed
        )
        positions = positions - positions.mean(axis=0)
        if out_dir is not None:
            np.savetxt(os.path.join(out_dir, "flock.csv"), positions, fmt="%.17g", delimiter=",",
                       header=",".join(f"x{d + 1}" for d in range(dim)), comments="")
        if dim == 1:
            ordered = np.sort(positions[:, 0])
            empirical_hi = np.arange(1, n + 1) / n
            empirical_lo = np.arange(n) / n
            exact = _semicircle_cdf(ordered)
            distance = float(max(np.abs(empirical_hi - exact).max(), np.abs(empirical_lo - exact).max()))
            report.check("flock", distance <= config.get_float("tolerance.flock_cdf", 0.05), cdf_distance=distance)
        else:
            radii = np.linalg.norm(positions, axis=1)
            r90 = float(np.quantile(radii, 0.9))
            edges = r90 * np.sqrt(np.linspace(0.0, 1.0, 11))
            counts = np.histogram(radii, bins=edges)[0].astype(np.float64)
            cv = float(counts.std() / counts.mean())
            report.check("flock", cv <= config.get_float("tolerance.flock_cv", 0.1), coefficient_of_variation=cv,
                         radius_90=r90)

    if config.get("checks.drift", False):
        _flock_drift(config, report, out_dir, progress)


def _drift_constitutive(config: ScenarioConfig, grid: TorusGrid, report: RunReport) -> ConstitutiveSet:
    """Pressureless relations of the drift run; K is kept unless it is singular on the torus."""
    constitutive = build_constitutive(config)
    interaction = constitutive.interaction
    if not interaction.is_zero:
        try:
            sample_kernel_on_torus(interaction, grid)
        except SingularOnTorus:
            report.notes.append(f"{interaction} is singular on the torus, the drift run transports the flock without K")
            interaction = None
    return ConstitutiveSet(PressureLaw.zero(), interaction, constitutive.communication, constitutive.friction)


def _flock_drift_level(config: ScenarioConfig, constitutive: ConstitutiveSet, progress: bool):
    grid = build_grid(config)
    speed = cruise_speed(constitutive.friction)
    T = config.get_float("time.T")

    profile = _semicircle_flock(0.5, config.get_float("initial.mollifier", 0.1))
    rho0 = ScalarField.from_function(grid, lambda *x: 0.1 + profile(x[0]))
    u0 = VectorField.constant(grid, [speed] + [0.0] * (grid.dim - 1))
    trajectory = run(
        HydroState.from_primitive(rho0, u0), build_scheme(config), constitutive, T, config.output_times(),
        progress=progress,
    )

    shift = np.exp(-1j * grid.wavenumbers[0] * speed * T)
    exact = grid.ifft(grid.fft(rho0.values) * shift)
    drift = float(grid.integrate(np.abs(trajectory[-1].rho.values - exact)))
    bound = config.get_float("tolerance.drift", 5.0) * (grid.spacing + trajectory.max_step) * T
    return drift, bound, trajectory


def _flock_drift(config: ScenarioConfig, report: RunReport, out_dir: str, progress: bool):
    """Transport of a mollified semicircle at the cruise speed at cells n and 2n; the exact solution is a translation.

    Both L1 drifts must stay under C (h + dt) T and fall at first order between the two resolutions.
    """
    constitutive = _drift_constitutive(config, build_grid(config), report)
    cells = config.get_int("grid.cells")
    refined = config.with_overrides(
        grid__cells=2 * cells, scheme__max_dt=0.5 * config.get_float("scheme.max_dt", 1e-2)
    )
    (coarse, coarse_bound, trajectory) = _flock_drift_level(config, constitutive, progress)
    (fine, fine_bound, _) = _flock_drift_level(refined, constitutive, progress)
    if out_dir is not None:
        write_snapshots(trajectory, os.path.join(out_dir, SNAPSHOT_DIR))

    rate = _refinement_rate(coarse, fine)
    min_rate = config.get_float("tolerance.drift_rate", MIN_REFINEMENT_RATE)
    bounded = coarse <= coarse_bound and fine <= fine_bound
    report.check(
        "drift", bounded and rate >= min_rate, l1_drift=[coarse, fine], bound=[coarse_bound, fine_bound], rate=rate
    )


def _weak_strong_level(config: ScenarioConfig, deltas, report: RunReport, progress: bool):
    """Strong reference of the configured data and one weak run with its relative energy per perturbation size."""
    grid = build_grid(config)
    constitutive = build_constitutive(config)
    scheme = build_scheme(config)
    T = config.get_float("time.T")
    rho0, u0 = initial_data(config, grid)

    strong = strong_reference(
        rho0, u0, constitutive, scheme, T, config.output_times(), grid=grid,
        refinement=config.get_int("strong.refinement", 4), progress=progress,
    )
    if strong.t_strong is not None:
        report.notes.append(f"strong reference on {grid} lost regularity at t={strong.t_strong:.6g}")

    runs = []
    for delta in deltas:
        weak_rho0, weak_u0 = _perturbed(rho0, u0, delta, grid.dim)
        weak = run(
            _initial_state(grid, weak_rho0, weak_u0), scheme, constitutive, float(strong.times[-1]), strong.times,
            progress=progress,
        )
        rel = rei_residual(
            weak,
            strong,
            constitutive,
            poisson=scheme.poisson_forcing,
            tolerance_constant=config.get_float("tolerance.d3", 1.0),
            budget=config.get("tolerance.gronwall_budget"),
            threads=config.threads,
        )
        runs.append((weak, rel))
    return strong, runs


def _rei_refinement(config: ScenarioConfig, report: RunReport, coarse, progress: bool):
    """Compare the perturbed and the identical-data runs of ``coarse`` with the same pair at cells 2n.

    For identical data the sup of the relative energy is a pure discretization error and must fall at first order.
    The Gronwall constant of the perturbed run must not move by more than 20%.
    """
    refined = config.with_overrides(
        grid__cells=2 * config.get_int("grid.cells"), scheme__max_dt=0.5 * config.get_float("scheme.max_dt", 1e-2)
    )
    delta = config.get_float("initial.perturbation", 0.0)
    _, fine = _weak_strong_level(refined, (delta, 0.0), report, progress)

    sup_energy = [float(np.max(np.abs(runs[1][1].energy))) for runs in (coarse, fine)]
    rate = _refinement_rate(*sup_energy)
    min_rate = config.get_float("tolerance.rei_rate", MIN_REFINEMENT_RATE)
    report.check("rei_refinement", rate >= min_rate, sup_relative_energy=sup_energy, rate=rate)

    c = [runs[0][1].gronwall.c for runs in (coarse, fine)]
    spread = config.get_float("tolerance.gronwall_stability", GRONWALL_STABILITY)
    stable = bool(np.all(np.isfinite(c))) and abs(c[1] - c[0]) <= spread * abs(c[0])
    report.check("gronwall_stability", stable, c=c)


def _weak_strong_pipeline(config: ScenarioConfig, report: RunReport, out_dir: str, progress: bool):
    refinement = config.get("checks.rei_refinement", False)
    delta = config.get_float("initial.perturbation", 0.0)
    deltas = (delta, 0.0) if refinement else (delta,)
    strong, runs = _weak_strong_level(config, deltas, report, progress)
    (weak, rel) = runs[0]
    grid = weak.grid
    constitutive = build_constitutive(config)
    _save_trajectory(weak, out_dir)
    if out_dir is not None:
        strong.save(os.path.join(out_dir, "strong.joblib"))
        rel.write_csv(os.path.join(out_dir, "relative_energy.csv"))
    for (key, value) in rel.summary().items():
        report.measure(f"rei.{key}", value)

    final = weak[-1]
    coercivity = coercivity_check(final.rho, final.velocity_field(), strong.r[-1], strong.U[-1], constitutive)
    report.measure("coercivity.constant", coercivity.constant)
    report.measure("coercivity.kkk_ratio", coercivity.kkk_ratio)
    kernels = constitutive.on_torus(grid)
    if kernels.communication is not None:
        report.measure("alignment_regularity_constant", alignment_regularity_constant(kernels.communication.values))

    if config.get("checks.rei", True):
        report.check("rei", rel.verdict)
        report.check("gronwall", rel.gronwall.verdict, c=rel.gronwall.c)

    if refinement:
        _rei_refinement(config, report, runs, progress)


def _random_trace_free(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    matrices = rng.normal(size=(count, dim, dim))
    matrices = 0.5 * (matrices + np.swapaxes(matrices, 1, 2))
    trace = np.trace(matrices, axis1=1, axis2=2)
    return matrices - trace[:, None, None] / dim * np.eye(dim)


def _audit_pipeline(config: ScenarioConfig, report: RunReport, out_dir: str, progress: bool):
    grid = build_grid(config)
    constitutive = build_constitutive(config)
    times = config.output_times()
    rho0, u0 = initial_data(config, grid)
    initial = _initial_state(grid, rho0, u0)

    parts = helmholtz_decompose(initial.m)
    potential = build_density_potential(initial.rho, parts.potential, times, config.get_float("audit.rho_floor", 0.5))
    report.measure("audit.epsilon", potential.epsilon)
    report.check("continuity", potential.continuity_defect() <= 1e-10, defect=potential.continuity_defect())

    lambda0 = find_lambda0(parts.solenoidal, potential, constitutive, parts.mean, threads=config.threads)
    lam = lambda0 + config.get_float("audit.lambda_margin", 0.1)
    candidate = candidate_from_potential(potential, parts.solenoidal, lam, constitutive, parts.mean)
    audit = subsolution_check(candidate, constitutive, threads=config.threads, lambda0=lambda0)
    if out_dir is not None:
        candidate.save(os.path.join(out_dir, "candidate"))
        audit.write_csv(os.path.join(out_dir, "audit.csv"))
    report.measure("audit.kinetic_energy_defect", kinetic_energy_defect(candidate))
    if config.get("checks.audit", True):
        report.check("audit", audit.passed, min_margin=audit.min_margin, worst_time=audit.worst_time,
                     worst_position=list(audit.worst_position), lambda0=lambda0)

    if config.get("checks.standard_inequality", False):
        rng = np.random.default_rng(config.seed)
        samples = config.get_int("audit.samples", 10000)
        worst = np.inf
        for dim in (2, 3):
            slack = standard_inequality_slack(
                rng.normal(size=(samples, dim)),
                rng.uniform(0.1, 2.0, size=samples),
                _random_trace_free(rng, samples, dim),
            )
            worst = min(worst, float(slack.min()))
        report.check("standard_inequality", worst >= -1e-12, min_slack=worst)


def _shear_state(rho: ScalarField, energy_density: float) -> HydroState:
    """Divergence-free, zero-mean momentum (a sin(pi x2), 0, ...) with mean kinetic energy density as given."""
    grid = rho.grid
    if grid.dim < 2:
        raise ConfigError("A divergence-free shear needs grid.dim >= 2", key="grid.dim")
    profile = np.sin(np.pi * grid.coordinates()[1])
    amplitude = np.sqrt(2.0 * energy_density * grid.volume / float(grid.integrate(profile ** 2 / rho.values)))
    m = np.zeros((grid.dim,) + grid.shape)
    m[0] = amplitude * profile
    return HydroState(rho, VectorField(grid, m))


def _dissipative_lambda_pipeline(config: ScenarioConfig, report: RunReport, out_dir: str, progress: bool):
    """Energy-compatible schedule Lambda(t) = Lambda0 + exp(-lambda t), checked against the ledger of a real run.

    The run starts from constant-in-time density data with a divergence-free momentum whose kinetic energy matches
    Lambda(0). At every output time the ledger rate must respect the bound -c (1 + Lambda) behind the choice of
    lambda, and wherever the schedule certifies |Omega| Lambda' <= -c (1 + Lambda) the slope must undercut it.
    """
    grid = build_grid(config)
    constitutive = build_constitutive(config)
    times = config.output_times()
    rho0, _ = initial_data(config, grid)
    rho = ScalarField.from_function(grid, rho0)

    potential = build_density_potential(rho, ScalarField.constant(grid, 0.0), times, 0.5 * float(rho.values.min()))
    zero = VectorField.constant(grid, np.zeros(grid.dim))
    lambda0 = find_lambda0(zero, potential, constitutive, np.zeros(grid.dim), threads=config.threads)
    c = dissipation_bound_constant(constitutive, grid, float(rho.integral()))
    result = dissipative_lambda(lambda0, c, grid.volume)
    report.measure("dissipative_lambda.lambda0", lambda0)
    report.measure("dissipative_lambda.c", c)

    diagnostics = None if out_dir is None else os.path.join(out_dir, "diagnostics.csv")
    initial = _shear_state(rho, float(result.schedule(0.0)))
    trajectory = run(initial, build_scheme(config), constitutive, config.get_float("time.T"), times, diagnostics,
                     progress)
    _save_trajectory(trajectory, out_dir)

    t = trajectory.times
    schedule = result.schedule(t)
    decay = np.exp(-result.rate * t)
    slope = -grid.volume * result.rate * decay
    ledger = trajectory.diagnostics[:, trajectory.columns.index("dissipation_rate")]
    kinetic = trajectory.diagnostics[:, trajectory.columns.index("kinetic_energy")]
    bounded = ledger >= -c * (1.0 + kinetic / grid.volume)
    certified = grid.volume * result.rate * decay >= c * (1.0 + schedule)
    report.measure("dissipative_lambda.schedule", schedule)
    if config.get("checks.dissipative_lambda", True):
        consistent = bool(certified[0] and np.all(bounded) and np.all(slope[certified] <= ledger[certified]))
        report.check("dissipative_lambda", consistent, rate=result.rate, energy_slope=slope, ledger_rate=ledger,
                     certified=certified, bounded=bounded)


def monokinetic_compare(config: ScenarioConfig, out_dir: str = None, progress: bool = False) -> RunReport:
    """L1 distance between deposited particle densities and the pressureless hydro density at the output times."""
    report = RunReport(config.name)
    started = time.time()
    _monokinetic(config, report, out_dir, progress)
    report.wall_time = time.time() - started
    return report


def _particle_config(config: ScenarioConfig, constitutive: ConstitutiveSet, grid: TorusGrid) -> SwarmConfig:
    friction = constitutive.friction
    if friction.kind == "unit":
        alpha, self_propulsion = 0.0, False
    elif friction.kind == "linear":
        alpha, self_propulsion = friction.alpha, True
    else:
        raise ConfigError("Particles support H = 1 or H(Z) = alpha Z only", key="friction.kind")
    mesh = not (constitutive.interaction.is_zero and constitutive.communication.is_zero)
    return SwarmConfig(
        alpha=alpha,
        self_propulsion=self_propulsion,
        interaction=constitutive.interaction,
        communication=constitutive.communication,
        dt=config.get_float("particles.dt", 0.005),
        force_method="mesh" if mesh else "direct",
        grid=grid,
        threads=config.threads,
    )


def _monokinetic_distances(config: ScenarioConfig, progress: bool):
    """Hydro trajectory, L1 distances and the particle snapshots at the output times."""
    grid = build_grid(config)
    constitutive = build_constitutive(config)
    scheme = build_scheme(config)
    if not (scheme.pressureless or constitutive.pressure.is_zero):
        raise ConfigError("The mono-kinetic comparison needs a pressureless configuration", key="scheme.pressureless")
    rho0, u0 = initial_data(config, grid)
    initial = _initial_state(grid, rho0, u0)
    times = config.output_times()
    trajectory = run(initial, scheme, constitutive, config.get_float("time.T"), times, progress=progress)

    rng = np.random.default_rng(config.seed)
    velocity = VectorField(grid, initial.velocity())
    particles = sample_from_density(initial.rho, velocity, config.get_int("particles.n"), rng)
    swarm = _particle_config(config, constitutive, grid)
    distances = []
    snapshots = []
    for state in trajectory:
        particles = evolve(particles, swarm, state.t, progress=progress)
        snapshots.append(particles)
        deposited, _ = deposit(particles, grid)
        scale = state.mass() / float(deposited.integral())
        distances.append(float(grid.integrate(np.abs(scale * deposited.values - state.rho.values))))
    return trajectory, np.array(distances), snapshots


def _shock_time(u0: Callable, grid: TorusGrid) -> float:
    u = VectorField.from_function(grid, u0)
    compression = -min(float(grid.gradient(u.values[d])[d].min()) for d in range(grid.dim))
    return np.inf if compression <= 0.0 else 1.0 / compression


def _decreases_under_refinement(coarse: np.ndarray, fine: np.ndarray) -> bool:
    """Refined distances stay at or below the coarse ones at every output time after the initial one."""
    return bool(np.all(fine[1:] <= coarse[1:]))


def _monokinetic(config: ScenarioConfig, report: RunReport, out_dir: str, progress: bool):
    grid = build_grid(config)
    _, u0 = initial_data(config, grid)
    T = config.get_float("time.T")
    shock = _shock_time(u0, grid)
    expected = T < shock
    if not expected:
        report.notes.append(f"T={T} is past the shock time {shock:.4g}: densities are not expected to agree")

    coarse_trajectory, coarse, particles = _monokinetic_distances(config, progress)
    report.measure("monokinetic.l1", coarse)
    if out_dir is not None:
        table = np.column_stack([coarse_trajectory.times, coarse])
        np.savetxt(os.path.join(out_dir, "monokinetic.csv"), table, fmt="%.17g", delimiter=",", header="t,l1",
                   comments="")
        write_particle_csv(particles, os.path.join(out_dir, "particles.csv"))

    if config.get("checks.monokinetic_refinement", True):
        refined = config.with_overrides(
            grid__cells=2 * config.get_int("grid.cells"), particles__n=4 * config.get_int("particles.n")
        )
        _, fine, _ = _monokinetic_distances(refined, progress)
        report.measure("monokinetic.l1_refined", fine)
        report.measure("monokinetic.refinement_slope", _refinement_rate(coarse[-1], fine[-1]))
        if config.get("checks.monokinetic", True) and expected:
            report.check("monokinetic", _decreases_under_refinement(coarse, fine), coarse=coarse, refined=fine)


PIPELINES = OrderedDict(
    hydro=_hydro_pipeline,
    flock=_flock_pipeline,
    weak_strong=_weak_strong_pipeline,
    audit=_audit_pipeline,
    dissipative_lambda=_dissipative_lambda_pipeline,
    monokinetic=_monokinetic,
)


def resolve_config(source: str) -> ScenarioConfig:
    """A config file path, or the name of a preset when no such file exists."""
    if os.path.exists(source):
        config = ScenarioConfig.load(source)
        if "scenario.preset" in config:
            values = load_preset(str(config["scenario.preset"])).to_dict()
            values.update(config.to_dict())
            config = ScenarioConfig.from_dict(values)
        return config.validate()
    if source in preset_names():
        return load_preset(source)
    raise FileNotFoundError(f"{source} is neither a config file nor a preset ({', '.join(preset_names())})")


def run_scenario(config: ScenarioConfig, out_dir: str = None, progress: bool = False) -> RunReport:
    config.validate()
    if config.pipeline not in PIPELINES:
        raise ConfigError(f"Unknown pipeline {config.pipeline!r}", key="scenario.pipeline")
    logger.info(
        "Starting scenario with the following configuration: %s", json.dumps(config.to_dict(), indent=2, sort_keys=True)
    )

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        config.save(os.path.join(out_dir, "config.txt"))
        write_json(
            os.path.join(out_dir, "metadata.json"),
            dict(config=config.to_dict(), fingerprint=config.fingerprint(), seed=config.seed, threads=config.threads),
        )

    report = RunReport(config.name)
    started = time.time()
    PIPELINES[config.pipeline](config, report, out_dir, progress)
    report.wall_time = time.time() - started
    if out_dir is not None:
        report.save(out_dir)
    verdict = "pass" if report.passed else "fail"
    logger.info("Scenario %s finished in %.2f s: %s", config.name, report.wall_time, verdict)
    return report


def replay_ledger(run_dir: str) -> Tuple[ScenarioConfig, Trajectory]:
    """Re-evaluate the energy ledger of the snapshots a hydro run left in ``run_dir``."""
    config = ScenarioConfig.load(os.path.join(run_dir, "config.txt")).validate()
    constitutive = build_constitutive(config)
    scheme = build_scheme(config)
    if scheme.pressureless:
        constitutive = constitutive.pressureless()
    stored = read_snapshots(os.path.join(run_dir, SNAPSHOT_DIR))

    tracker = LedgerTracker(constitutive, poisson=scheme.poisson_forcing)
    for state in stored:
        tracker.record(state)
    logger.info("Replayed the ledger of %d snapshots from %s", len(stored), run_dir)
    return config, Trajectory(stored.states, stored.max_step, tracker.columns, tracker.table())


def _exit_with(ctx: click.Context, func: Callable):
    try:
        code = func()
    except (SwarmflowError, ValueError, FileNotFoundError):
        logger.exception("Scenario failed")
        code = EXIT_ERROR
    ctx.exit(code)


def _apply_seed(ctx: click.Context, config: ScenarioConfig) -> ScenarioConfig:
    seed = (ctx.obj or {}).get("seed")
    if seed is not None:
        config = config.with_overrides(runtime__seed=seed)
    return config


@click.command(name="run")
@click.argument("config_source")
@click.option("--output-dir", type=click.Path(), default=None)
@click.option("--progress", is_flag=True)
@click.pass_context
def run_command(ctx: click.Context, config_source: str, output_dir: str, progress: bool):
    def execute():
        config = _apply_seed(ctx, resolve_config(config_source))
        out_dir = output_dir or config.get("output.dir")
        report = run_scenario(config, out_dir, progress)
        click.echo(report.to_text())
        return report.exit_code

    _exit_with(ctx, execute)


@click.command(name="presets")
@click.option("--show", default=None, help="Print the resolved configuration of one preset.")
@click.pass_context
def presets_command(ctx: click.Context, show: str):
    def execute():
        if show is not None:
            click.echo(load_preset(show).dumps(), nl=False)
        else:
            for name in preset_names():
                click.echo(name)
        return EXIT_PASS

    _exit_with(ctx, execute)


@click.command(name="audit")
@click.argument("candidate_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--config", "config_source", default=None, help="Scenario supplying the constitutive relations.")
@click.option("--output-dir", type=click.Path(), default=None)
@click.pass_context
def audit_command(ctx: click.Context, candidate_dir: str, config_source: str, output_dir: str):
    def execute():
        candidate = SubsolutionCandidate.load(candidate_dir)
        if config_source is not None:
            config = resolve_config(config_source)
            constitutive = build_constitutive(config)
            threads = config.threads
        else:
            constitutive, threads = ConstitutiveSet(), 1
        audit = subsolution_check(candidate, constitutive, threads=threads)
        click.echo(audit.to_text(), nl=False)
        if output_dir is not None:
            os.makedirs(output_dir, exist_ok=True)
            audit.write_csv(os.path.join(output_dir, "audit.csv"))
            write_json(os.path.join(output_dir, "audit.json"), audit.to_dict())
        return EXIT_PASS if audit.passed else EXIT_CHECK_FAILED

    _exit_with(ctx, execute)


@click.command(name="compare")
@click.argument("config_source")
@click.option("--output-dir", type=click.Path(), default=None)
@click.option("--progress", is_flag=True)
@click.pass_context
def compare_command(ctx: click.Context, config_source: str, output_dir: str, progress: bool):
    def execute():
        config = _apply_seed(ctx, resolve_config(config_source))
        if output_dir is not None:
            os.makedirs(output_dir, exist_ok=True)
        report = monokinetic_compare(config, output_dir, progress)
        if output_dir is not None:
            report.save(output_dir)
        click.echo(report.to_text())
        return report.exit_code

    _exit_with(ctx, execute)


@click.command(name="ledger")
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--output", type=click.Path(), default=None, help="CSV path, ledger.csv inside RUN_DIR by default.")
@click.pass_context
def ledger_command(ctx: click.Context, run_dir: str, output: str):
    def execute():
        config, trajectory = replay_ledger(run_dir)
        np.savetxt(output or os.path.join(run_dir, "ledger.csv"), trajectory.diagnostics, fmt="%.17g", delimiter=",",
                   header=",".join(trajectory.columns), comments="")
        report = RunReport(config.name)
        _d3_check(report, trajectory, config)
        click.echo(report.to_text())
        return report.exit_code

    _exit_with(ctx, execute)
