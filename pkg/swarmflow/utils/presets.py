from collections import OrderedDict
from typing import List

from swarmflow.errors import ConfigError
from swarmflow.utils.config import ScenarioConfig

_COMMON = """
runtime.seed = 0
runtime.threads = 1
scheme.cfl = 0.9
scheme.flux = rusanov
scheme.time = ssp_rk2
scheme.vacuum_floor = 1e-12
scheme.max_dt = 0.01
checks.mass = true
tolerance.mass = 1e-10
tolerance.d3 = 1.0
"""

PRESET_TEXTS = OrderedDict(
    constant_state="""
# resting constant state with every force switched on; must stay steady
scenario.name = constant_state
scenario.pipeline = hydro
grid.dim = 1
grid.cells = 64
time.T = 2.0
time.outputs = 10
pressure.kind = power_law
pressure.a = 1.0
pressure.gamma = 2.0
kernel.K.kind = gaussian
kernel.K.amplitude = -1.0
kernel.K.length = 0.3
kernel.psi.kind = gaussian
kernel.psi.amplitude = 1.0
kernel.psi.length = 0.5
friction.kind = unit
initial.kind = constant
initial.rho = 1.0
initial.u = 0.0
checks.d3 = true
checks.steady = true
tolerance.steady = 1e-12
""",
    cruise_translation="""
# uniform motion at the cruise speed of H(Z) = Z; all sources vanish
scenario.name = cruise_translation
scenario.pipeline = hydro
grid.dim = 2
grid.cells = 32
time.T = 1.0
time.outputs = 4
scheme.pressureless = true
pressure.kind = zero
kernel.K.kind = zero
kernel.psi.kind = zero
friction.kind = linear
friction.alpha = 1.0
initial.kind = constant
initial.rho = 1.0
initial.u = 1.0, 0.0
checks.d3 = true
checks.steady = true
tolerance.steady = 1e-12
""",
    flock_1d="""
# semicircle flock of K = |x|^2/2 - log|x|, then transport of a mollified flock on the torus at two resolutions
scenario.name = flock_1d
scenario.pipeline = flock
grid.dim = 1
grid.cells = 64
time.T = 1.0
time.outputs = 4
scheme.pressureless = true
pressure.kind = zero
kernel.K.kind = power
kernel.K.a = 2.0
kernel.K.b = 0.0
kernel.psi.kind = cucker_smale
kernel.psi.strength = 1.0
kernel.psi.beta = 0.5
friction.kind = linear
friction.alpha = 1.0
particles.n = 400
particles.tol = 1e-6
initial.mollifier = 0.1
checks.flock = true
checks.drift = true
tolerance.flock_cdf = 0.05
tolerance.drift = 5.0
""",
    flock_disc="""
# 2D Newtonian repulsion with quadratic attraction: uniform density on the unit disc
scenario.name = flock_disc
scenario.pipeline = flock
grid.dim = 2
grid.cells = 32
time.T = 1.0
scheme.pressureless = true
pressure.kind = zero
kernel.K.kind = power
kernel.K.a = 2.0
kernel.K.b = 0.0
kernel.psi.kind = zero
friction.kind = linear
friction.alpha = 1.0
particles.n = 400
particles.tol = 1e-5
checks.flock = true
checks.drift = false
tolerance.flock_cv = 0.1
""",
    perturbed_flock="""
# weak-strong experiment: perturbed and identical data against a refined reference, at cells n and 2n
scenario.name = perturbed_flock
scenario.pipeline = weak_strong
grid.dim = 1
grid.cells = 64
time.T = 1.0
time.outputs = 10
pressure.kind = power_law
pressure.a = 1.0
pressure.gamma = 2.0
kernel.K.kind = cosine
kernel.K.amplitude = 0.2
kernel.psi.kind = gaussian
kernel.psi.amplitude = 1.0
kernel.psi.length = 0.5
friction.kind = saturating
initial.kind = smooth_flock
initial.amplitude = 0.2
initial.velocity = 0.5
initial.perturbation = 1e-2
strong.refinement = 4
checks.rei = true
checks.rei_refinement = true
tolerance.gronwall_budget = 50.0
""",
    random_smooth="""
# random band-limited data; the energy inequality is checked under refinement
scenario.name = random_smooth
scenario.pipeline = hydro
grid.dim = 1
grid.cells = 64
time.T = 1.0
time.outputs = 10
pressure.kind = power_law
pressure.a = 1.0
pressure.gamma = 2.0
kernel.K.kind = gaussian
kernel.K.amplitude = -0.5
kernel.K.length = 0.4
kernel.psi.kind = cucker_smale
kernel.psi.strength = 1.0
kernel.psi.beta = 0.5
friction.kind = saturating
initial.kind = random_smooth
initial.modes = 3
initial.amplitude = 0.1
checks.d3 = true
checks.refinement = true
""",
    euler_poisson="""
# pressureless Euler-Poisson with repulsive Poisson coupling
scenario.name = euler_poisson
scenario.pipeline = hydro
grid.dim = 2
grid.cells = 32
time.T = 0.5
time.outputs = 5
scheme.pressureless = true
scheme.poisson = true
pressure.kind = zero
kernel.K.kind = zero
kernel.psi.kind = zero
friction.kind = unit
initial.kind = random_smooth
initial.modes = 2
initial.amplitude = 0.1
checks.d3 = true
checks.tzavaras = true
tolerance.tzavaras = 1e-10
""",
    subsolution_audit_basic="""
# subsolution built from smooth initial data, audited with the minimal Lambda plus a safety margin
scenario.name = subsolution_audit_basic
scenario.pipeline = audit
grid.dim = 2
grid.cells = 16
time.T = 0.5
time.outputs = 5
pressure.kind = power_law
pressure.a = 1.0
pressure.gamma = 2.0
kernel.K.kind = zero
kernel.psi.kind = gaussian
kernel.psi.amplitude = 0.5
kernel.psi.length = 0.5
friction.kind = saturating
initial.kind = random_smooth
initial.modes = 2
initial.amplitude = 0.1
audit.rho_floor = 0.5
audit.lambda_margin = 0.1
checks.audit = true
checks.standard_inequality = true
audit.samples = 10000
""",
    dissipative_lambda_demo="""
# energy-compatible Lambda(t) = Lambda0 + exp(-lambda t) against the ledger of a shear flow at constant density
scenario.name = dissipative_lambda_demo
scenario.pipeline = dissipative_lambda
grid.dim = 2
grid.cells = 16
time.T = 1.0
time.outputs = 4
pressure.kind = zero
kernel.K.kind = zero
kernel.psi.kind = gaussian
kernel.psi.amplitude = 0.5
kernel.psi.length = 0.5
friction.kind = clipped
friction.alpha = 1.0
friction.bound = 2.0
initial.kind = constant
initial.rho = 1.0
initial.u = 0.0, 0.0
checks.dissipative_lambda = true
""",
    monokinetic_smooth="""
# particles sampled from smooth pressureless data against the hydro solution before the shock
scenario.name = monokinetic_smooth
scenario.pipeline = monokinetic
grid.dim = 1
grid.cells = 64
time.T = 0.5
time.outputs = 5
scheme.pressureless = true
pressure.kind = zero
kernel.K.kind = zero
kernel.psi.kind = zero
friction.kind = unit
initial.kind = sine
initial.rho_amplitude = 0.2
initial.u_amplitude = 0.2
particles.n = 10000
particles.dt = 0.005
checks.monokinetic = true
""",
)


def preset_names() -> List[str]:
    return list(PRESET_TEXTS.keys())


def load_preset(name: str) -> ScenarioConfig:
    if name not in PRESET_TEXTS:
        raise ConfigError(f"Unknown preset {name!r}; available: {', '.join(PRESET_TEXTS)}", key="scenario.preset")
    values = ScenarioConfig.loads(_COMMON).to_dict()
    values.update(ScenarioConfig.loads(PRESET_TEXTS[name]).to_dict())
    values["scenario.preset"] = name
    return ScenarioConfig.from_dict(values).validate()
