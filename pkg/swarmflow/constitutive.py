import logging
from collections import namedtuple
from typing import Callable, Dict, List

import numpy as np
from scipy.integrate import quad
from scipy.optimize import bisect
from scipy.special import xlogy

from swarmflow.errors import FrictionNotMonotone, NegativeDensityError, NoCruiseSpeed, SingularOnTorus
from swarmflow.torus import ScalarField, TorusGrid, VectorField

SYMMETRY_ATOL = 1e-12
CRUISE_XTOL = 1e-12
CRUISE_MAX_Z = 1e12
SPLIT_SAMPLES = 10000

PressureVerdict = namedtuple("PressureVerdict", ["weak_strong", "existence", "reasons"])
FrictionSplit = namedtuple("FrictionSplit", ["compact", "monotone"])
KernelSamples = namedtuple("KernelSamples", ["values", "gradient", "symmetric"])
TorusKernels = namedtuple("TorusKernels", ["interaction", "communication"])

logger = logging.getLogger(__name__)


class PressureLaw(object):
    def __init__(
        self, kind: str, a: float = 1.0, gamma: float = 1.0, pressure: Callable = None, derivative: Callable = None
    ):
        if kind not in ("power_law", "zero", "custom"):
            raise ValueError(f"Unknown pressure law: {kind}")
        if kind == "power_law" and (a <= 0.0 or gamma < 1.0):
            raise ValueError(f"Power law needs a > 0 and gamma >= 1, got a={a}, gamma={gamma}")
        if kind == "custom" and (pressure is None or derivative is None):
            raise ValueError("Custom pressure law needs both p and p'")

        self.kind = kind
        self.a = a
        self.gamma = gamma
        self._pressure = pressure
        self._derivative = derivative

    @staticmethod
    def power_law(a: float, gamma: float) -> "PressureLaw":
        return PressureLaw("power_law", a=a, gamma=gamma)

    @staticmethod
    def zero() -> "PressureLaw":
        return PressureLaw("zero")

    @staticmethod
    def custom(pressure: Callable, derivative: Callable) -> "PressureLaw":
        return PressureLaw("custom", pressure=pressure, derivative=derivative)

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero"

    def __repr__(self):
        if self.kind == "power_law":
            return f"PressureLaw(power_law, a={self.a}, gamma={self.gamma})"
        return f"PressureLaw({self.kind})"

    def pressure(self, rho):
        rho = np.asarray(rho, dtype=np.float64)
        if self.kind == "zero":
            return np.zeros_like(rho)
        if self.kind == "custom":
            return np.asarray(self._pressure(rho), dtype=np.float64)
        return self.a * rho ** self.gamma

    def derivative(self, rho):
        rho = np.asarray(rho, dtype=np.float64)
        if self.kind == "zero":
            return np.zeros_like(rho)
        if self.kind == "custom":
            return np.asarray(self._derivative(rho), dtype=np.float64)
        return self.a * self.gamma * rho ** (self.gamma - 1.0)

    def sound_speed(self, rho):
        return np.sqrt(np.maximum(self.derivative(rho), 0.0))

    def potential(self, rho):
        return pressure_potential(self, rho)

    def potential_derivative(self, rho):
        """P'(rho); finite for rho > 0 only when gamma == 1."""
        rho = np.asarray(rho, dtype=np.float64)
        if self.kind == "zero":
            return np.zeros_like(rho)
        if self.kind == "custom":
            integral = _custom_integral(self._pressure, rho)
            return integral + np.asarray(self._pressure(rho)) / rho
        if self.gamma == 1.0:
            return self.a * (np.log(rho) + 1.0)
        return self.a * (self.gamma * rho ** (self.gamma - 1.0) - 1.0) / (self.gamma - 1.0)


def _custom_integral(pressure: Callable, rho: np.ndarray) -> np.ndarray:
    def integral(value):
        if value == 0.0:
            return 0.0
        return quad(lambda z: float(pressure(z)) / z ** 2, 1.0, value)[0]

    return np.vectorize(integral, otypes=[np.float64])(rho)


def pressure_potential(law: PressureLaw, rho):
    """P(rho) = rho * int_1^rho p(z)/z^2 dz with 0 ln 0 = 0."""
    rho = np.asarray(rho, dtype=np.float64)
    if np.any(rho < 0.0):
        raise NegativeDensityError(f"Pressure potential requested at negative density {rho.min():.3e}")

    if law.kind == "zero":
        result = np.zeros_like(rho)
    elif law.kind == "custom":
        result = rho * _custom_integral(law._pressure, rho)
    elif law.gamma == 1.0:
        result = law.a * xlogy(rho, rho)
    else:
        result = law.a * (rho ** law.gamma - rho) / (law.gamma - 1.0)

    if result.ndim == 0:
        return float(result)
    return result


def check_pressure_admissible(law: PressureLaw) -> PressureVerdict:
    """Check p(0) = 0 and the monotonicity/growth conditions used by the weak-strong argument."""
    reasons: List[str] = []

    if law.kind == "zero":
        return PressureVerdict(
            weak_strong=False, existence=True, reasons=["p' vanishes identically (pressureless system)"]
        )
    if law.kind == "power_law":
        return PressureVerdict(weak_strong=True, existence=True, reasons=[])

    p0 = float(law.pressure(np.array(0.0)))
    if abs(p0) > 1e-12:
        reasons.append(f"p(0) = {p0:.3e} != 0")
    existence = not reasons

    samples = np.logspace(-6.0, 6.0, 2001)
    dp = law.derivative(samples)
    if np.any(dp <= 0.0):
        reasons.append(f"p' <= 0 at rho = {samples[np.argmax(dp <= 0.0)]:.6g}")

    tail = samples[samples >= 1e3]
    if law.derivative(tail).min() <= 0.0:
        reasons.append("liminf of p' at infinity is not positive")
    ratio = law.potential(tail) / law.pressure(tail)
    if ratio.min() <= 0.0:
        reasons.append("liminf of P/p at infinity is not positive")

    return PressureVerdict(weak_strong=not reasons, existence=existence, reasons=reasons)


class FrictionFunction(object):
    KINDS = ("unit", "constant", "linear", "clipped", "saturating", "custom")

    def __init__(
        self,
        kind: str,
        alpha: float = 1.0,
        bound: float = None,
        func: Callable = None,
        derivative: Callable = None,
        monotone_from: float = 0.0,
    ):
        if kind not in self.KINDS:
            raise ValueError(f"Unknown friction function: {kind}")
        if kind == "clipped" and bound is None:
            raise ValueError("Clipped friction needs a bound")
        if kind == "custom" and func is None:
            raise ValueError("Custom friction needs an evaluator")
        if monotone_from < 0.0:
            raise ValueError(f"monotone_from must be >= 0, got {monotone_from}")

        self.kind = kind
        self.alpha = alpha
        self._bound = bound
        self._func = func
        self._derivative = derivative
        self.monotone_from = monotone_from

    def __repr__(self):
        return f"FrictionFunction({self.kind}, alpha={self.alpha}, bound={self._bound})"

    def __call__(self, z):
        z = np.asarray(z, dtype=np.float64)
        if self.kind == "unit":
            return np.ones_like(z)
        if self.kind == "constant":
            return np.full_like(z, self.alpha)
        if self.kind == "linear":
            return self.alpha * z
        if self.kind == "clipped":
            return np.minimum(self.alpha * z, self._bound)
        if self.kind == "saturating":
            return z / (1.0 + z)
        return np.asarray(self._func(z), dtype=np.float64)

    def derivative(self, z):
        z = np.asarray(z, dtype=np.float64)
        if self.kind in ("unit", "constant"):
            return np.zeros_like(z)
        if self.kind == "linear":
            return np.full_like(z, self.alpha)
        if self.kind == "clipped":
            return np.where(self.alpha * z < self._bound, self.alpha, 0.0)
        if self.kind == "saturating":
            return 1.0 / (1.0 + z) ** 2
        if self._derivative is not None:
            return np.asarray(self._derivative(z), dtype=np.float64)
        step = 1e-6 * np.maximum(z, 1.0)
        lower = np.maximum(z - step, 0.0)
        return (self(z + step) - self(lower)) / (z + step - lower)

    @property
    def bound(self) -> float:
        """H_infinity; infinite for the linear law of the particle model."""
        if self.kind == "unit":
            return 1.0
        if self.kind == "constant":
            return self.alpha
        if self.kind == "linear":
            return np.inf
        if self.kind == "clipped":
            return self._bound
        if self.kind == "saturating":
            return 1.0
        if self._bound is not None:
            return self._bound
        return float(np.max(self(np.logspace(-6.0, 12.0, 1000))))


def cruise_speed(friction: FrictionFunction) -> float:
    """Unique s > 0 with H(s^2) = 1."""
    h0 = float(friction(0.0))
    if h0 >= 1.0:
        raise NoCruiseSpeed(f"H(0) = {h0} >= 1, no positive cruise speed")

    z = 1.0
    while float(friction(z)) < 1.0:
        z *= 4.0
        if z > CRUISE_MAX_Z:
            raise NoCruiseSpeed(f"H stays below 1 up to Z = {CRUISE_MAX_Z:g}")

    s_hi = np.sqrt(z)
    if float(friction(z)) == 1.0:
        return float(s_hi)
    return float(bisect(lambda s: float(friction(s * s)) - 1.0, 0.0, s_hi, xtol=CRUISE_XTOL))


def split_friction(friction: FrictionFunction, z0: float = None) -> FrictionSplit:
    """Write H = H1 + H2 with H1 supported in [0, z0] and H2 non-decreasing."""
    if z0 is None:
        z0 = friction.monotone_from
    samples = np.linspace(z0, z0 + 10.0 * max(z0, 1.0), SPLIT_SAMPLES)
    increments = np.diff(friction(samples))
    if np.any(increments < -1e-12):
        bad = samples[1:][increments < -1e-12][0]
        raise FrictionNotMonotone(f"H decreases at Z = {bad:.6g} beyond Z0 = {z0}")

    def monotone(z):
        return friction(np.maximum(z, z0))

    def compact(z):
        z = np.asarray(z, dtype=np.float64)
        return np.where(z > z0, 0.0, friction(z) - monotone(z))

    return FrictionSplit(
        compact=FrictionFunction("custom", func=compact, bound=float(np.max(np.abs(compact(samples))))),
        monotone=FrictionFunction("custom", func=monotone, bound=friction.bound),
    )


class Kernel(object):
    """Radial or translation-invariant kernel evaluated on displacement arrays of shape (..., N)."""

    kind = "abstract"
    symmetric = True
    whole_space = False
    is_zero = False

    def __init__(self, **params):
        self.params = params

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for (k, v) in sorted(self.params.items()))
        return f"{type(self).__name__}({args})"

    def __call__(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError()

    def gradient(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError()


class ZeroKernel(Kernel):
    kind = "zero"
    is_zero = True

    def __call__(self, z):
        return np.zeros(z.shape[:-1])

    def gradient(self, z):
        return np.zeros(z.shape)


class CosineKernel(Kernel):
    kind = "cosine"

    def __init__(self, amplitude: float = 1.0):
        super(CosineKernel, self).__init__(amplitude=amplitude)
        self.amplitude = amplitude

    def __call__(self, z):
        return self.amplitude * np.cos(np.pi * z).sum(axis=-1)

    def gradient(self, z):
        return -self.amplitude * np.pi * np.sin(np.pi * z)


class ConstantKernel(Kernel):
    kind = "constant"

    def __init__(self, value: float = 1.0):
        super(ConstantKernel, self).__init__(value=value)
        self.value = value

    def __call__(self, z):
        return np.full(z.shape[:-1], self.value)

    def gradient(self, z):
        return np.zeros(z.shape)


class RaisedCosineKernel(Kernel):
    """amplitude * prod_d (1 + cos(pi z_d)); non-negative, vanishing at the antipodal points."""

    kind = "raised_cosine"

    def __init__(self, amplitude: float = 1.0):
        super(RaisedCosineKernel, self).__init__(amplitude=amplitude)
        self.amplitude = amplitude

    def __call__(self, z):
        return self.amplitude * np.prod(1.0 + np.cos(np.pi * z), axis=-1)

    def gradient(self, z):
        factors = 1.0 + np.cos(np.pi * z)
        gradient = np.empty(z.shape)
        for d in range(z.shape[-1]):
            others = np.prod(np.delete(factors, d, axis=-1), axis=-1)
            gradient[..., d] = -self.amplitude * np.pi * np.sin(np.pi * z[..., d]) * others
        return gradient


class GaussianKernel(Kernel):
    kind = "gaussian"

    def __init__(self, amplitude: float = 1.0, length: float = 0.5):
        super(GaussianKernel, self).__init__(amplitude=amplitude, length=length)
        self.amplitude = amplitude
        self.length = length

    def __call__(self, z):
        return self.amplitude * np.exp(-(z ** 2).sum(axis=-1) / self.length ** 2)

    def gradient(self, z):
        return (-2.0 / self.length ** 2) * self(z)[..., None] * z


class MorseKernel(Kernel):
    """Difference of Gaussians: repulsive at short range, attractive at long range."""

    kind = "morse"

    def __init__(
        self,
        repulsion: float = 1.0,
        repulsion_length: float = 0.2,
        attraction: float = 0.5,
        attraction_length: float = 0.6,
    ):
        super(MorseKernel, self).__init__(
            repulsion=repulsion,
            repulsion_length=repulsion_length,
            attraction=attraction,
            attraction_length=attraction_length,
        )
        self._repulsive = GaussianKernel(repulsion, repulsion_length)
        self._attractive = GaussianKernel(attraction, attraction_length)

    def __call__(self, z):
        return self._repulsive(z) - self._attractive(z)

    def gradient(self, z):
        return self._repulsive.gradient(z) - self._attractive.gradient(z)


class QuadraticKernel(Kernel):
    kind = "quadratic"

    def __init__(self, amplitude: float = 1.0):
        super(QuadraticKernel, self).__init__(amplitude=amplitude)
        self.amplitude = amplitude

    def __call__(self, z):
        return 0.5 * self.amplitude * (z ** 2).sum(axis=-1)

    def gradient(self, z):
        return self.amplitude * z


class PowerKernel(Kernel):
    """Attractive-repulsive family |z|^a/a - |z|^b/b, where b = 0 stands for log|z|."""

    kind = "power"

    def __init__(self, a: float = 2.0, b: float = 0.0):
        if a <= 0.0 or a <= b:
            raise ValueError(f"Power kernel needs a > max(b, 0), got a={a}, b={b}")
        super(PowerKernel, self).__init__(a=a, b=b)
        self.a = a
        self.b = b
        self.whole_space = b <= 0.0

    def __call__(self, z):
        r = np.sqrt((z ** 2).sum(axis=-1))
        with np.errstate(divide="ignore", invalid="ignore"):
            repulsive = np.log(r) if self.b == 0.0 else r ** self.b / self.b
            return r ** self.a / self.a - repulsive

    def gradient(self, z):
        r2 = (z ** 2).sum(axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            factor = r2 ** (0.5 * self.a - 1.0) - r2 ** (0.5 * self.b - 1.0)
        return factor[..., None] * z


class CuckerSmaleKernel(Kernel):
    kind = "cucker_smale"

    def __init__(self, strength: float = 1.0, beta: float = 0.5):
        super(CuckerSmaleKernel, self).__init__(strength=strength, beta=beta)
        self.strength = strength
        self.beta = beta

    def __call__(self, z):
        return self.strength / (1.0 + (z ** 2).sum(axis=-1)) ** self.beta

    def gradient(self, z):
        r2 = (z ** 2).sum(axis=-1)
        return (-2.0 * self.beta * self.strength / (1.0 + r2) ** (self.beta + 1.0))[..., None] * z


class ShiftedGaussianKernel(GaussianKernel):
    """Gaussian centred off the origin; breaks psi(z) = psi(-z)."""

    kind = "shifted_gaussian"
    symmetric = False

    def __init__(self, amplitude: float = 1.0, length: float = 0.5, shift: float = 0.25):
        super(ShiftedGaussianKernel, self).__init__(amplitude, length)
        self.params["shift"] = shift
        self.shift = shift

    def _shifted(self, z):
        z = np.array(z, dtype=np.float64)
        z[..., 0] -= self.shift
        return z

    def __call__(self, z):
        return super(ShiftedGaussianKernel, self).__call__(self._shifted(z))

    def gradient(self, z):
        return super(ShiftedGaussianKernel, self).gradient(self._shifted(z))


INTERACTION_KERNELS: Dict[str, type] = {
    cls.kind: cls for cls in (ZeroKernel, CosineKernel, GaussianKernel, MorseKernel, QuadraticKernel, PowerKernel)
}
COMMUNICATION_KERNELS: Dict[str, type] = {
    cls.kind: cls
    for cls in (
        ZeroKernel,
        ConstantKernel,
        CuckerSmaleKernel,
        GaussianKernel,
        RaisedCosineKernel,
        ShiftedGaussianKernel,
    )
}


def interaction_kernel(kind: str, **params) -> Kernel:
    if kind not in INTERACTION_KERNELS:
        raise ValueError(f"Unknown interaction kernel: {kind}")
    return INTERACTION_KERNELS[kind](**params)


def communication_kernel(kind: str, **params) -> Kernel:
    if kind not in COMMUNICATION_KERNELS:
        raise ValueError(f"Unknown communication kernel: {kind}")
    kernel = COMMUNICATION_KERNELS[kind](**params)
    points = np.random.RandomState(0).uniform(-1.0, 1.0, size=(1000, 3))
    if np.any(kernel(points) < 0.0):
        raise ValueError(f"Communication kernel {kernel} takes negative values")
    return kernel


def _reflect(values: np.ndarray, axes) -> np.ndarray:
    for axis in axes:
        values = np.roll(np.flip(values, axis=axis), 1, axis=axis)
    return values


def sample_kernel_on_torus(kernel: Kernel, grid: TorusGrid) -> KernelSamples:
    """Sample K and grad K on the displacement lattice of ``grid`` (see TorusGrid.displacements)."""
    z = np.stack(grid.displacements(), axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        values = kernel(z)
        gradient = np.moveaxis(kernel.gradient(z), -1, 0)

    if kernel.whole_space or not np.all(np.isfinite(values)) or not np.all(np.isfinite(gradient)):
        raise SingularOnTorus(f"{kernel} is singular on the torus; use particle flock mode")

    deviation = np.abs(values - _reflect(values, grid.axes)).max()
    symmetric = bool(deviation <= SYMMETRY_ATOL * max(1.0, np.abs(values).max()))
    if kernel.symmetric and not symmetric:
        raise ValueError(f"{kernel} is declared symmetric but samples deviate by {deviation:.3e}")

    return KernelSamples(values=ScalarField(grid, values), gradient=VectorField(grid, gradient), symmetric=symmetric)


class ConstitutiveSet(object):
    def __init__(
        self,
        pressure: PressureLaw = None,
        interaction: Kernel = None,
        communication: Kernel = None,
        friction: FrictionFunction = None,
    ):
        self.pressure = pressure if pressure is not None else PressureLaw.zero()
        self.interaction = interaction if interaction is not None else ZeroKernel()
        self.communication = communication if communication is not None else ZeroKernel()
        self.friction = friction if friction is not None else FrictionFunction("unit")
        self._samples: Dict[TorusGrid, TorusKernels] = {}

    def __repr__(self):
        return (
            f"ConstitutiveSet(pressure={self.pressure}, K={self.interaction}, psi={self.communication}, "
            f"H={self.friction})"
        )

    def on_torus(self, grid: TorusGrid) -> TorusKernels:
        if grid not in self._samples:
            self._samples[grid] = TorusKernels(
                interaction=None if self.interaction.is_zero else sample_kernel_on_torus(self.interaction, grid),
                communication=None
                if self.communication.is_zero
                else sample_kernel_on_torus(self.communication, grid),
            )
        return self._samples[grid]

    def pressureless(self) -> "ConstitutiveSet":
        """Same kernels and friction with p = 0; shares the sampled-kernel cache."""
        result = ConstitutiveSet(PressureLaw.zero(), self.interaction, self.communication, self.friction)
        result._samples = self._samples
        return result
