import logging
import struct
from collections import namedtuple
from typing import Tuple, Union

import numpy as np

from swarmflow.errors import GridMismatch, NonZeroMean

PERIOD = 2.0
ZERO_MEAN_RTOL = 1e-10
TRACE_FREE_ATOL = 1e-12

SNAPSHOT_MAGIC = b"SWFL"
SNAPSHOT_VERSION = 1
SNAPSHOT_HEADER = struct.Struct("<4sIIII")

HelmholtzParts = namedtuple("HelmholtzParts", ["solenoidal", "mean", "potential", "gradient"])

logger = logging.getLogger(__name__)


class TorusGrid(object):
    """Uniform cell-centred grid on the flat torus [-1, 1)^N.

    Arrays handled by the grid carry the spatial axes last, so a scalar field has shape ``grid.shape`` and a
    field with ``c`` components has shape ``(c,) + grid.shape``.
    """

    def __init__(self, dim: int, cells_per_axis: int):
        if dim not in (1, 2, 3):
            raise ValueError(f"Unsupported dimension: {dim}")
        if cells_per_axis < 4 or cells_per_axis % 2 != 0:
            raise ValueError(f"cells_per_axis must be even and >= 4, got {cells_per_axis}")

        self.dim = dim
        self.cells_per_axis = cells_per_axis
        self.spacing = PERIOD / cells_per_axis
        self.shape = (cells_per_axis,) * dim
        self.axes = tuple(range(-dim, 0))

        k = 2.0 * np.pi * np.fft.fftfreq(cells_per_axis, d=self.spacing)
        k_derivative = k.copy()
        # the Nyquist mode has no odd partner, zeroing it keeps the derivative skew-adjoint
        k_derivative[cells_per_axis // 2] = 0.0

        self.wavenumbers = tuple(self._along_axis(k, d) for d in range(dim))
        self.derivative_wavenumbers = tuple(self._along_axis(k_derivative, d) for d in range(dim))
        self.wavenumber_sq = sum(np.broadcast_to(kd ** 2, self.shape) for kd in self.wavenumbers)
        self.derivative_wavenumber_sq = sum(np.broadcast_to(kd ** 2, self.shape) for kd in self.derivative_wavenumbers)

    def _along_axis(self, values: np.ndarray, axis: int) -> np.ndarray:
        shape = [1] * self.dim
        shape[axis] = self.cells_per_axis
        return values.reshape(shape)

    def __eq__(self, other):
        return (
            isinstance(other, TorusGrid) and self.dim == other.dim and self.cells_per_axis == other.cells_per_axis
        )

    def __hash__(self):
        return hash((self.dim, self.cells_per_axis))

    def __repr__(self):
        return f"TorusGrid(dim={self.dim}, cells_per_axis={self.cells_per_axis})"

    @property
    def size(self) -> int:
        return self.cells_per_axis ** self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.dim

    @property
    def volume(self) -> float:
        return PERIOD ** self.dim

    def centers(self) -> np.ndarray:
        return -1.0 + (np.arange(self.cells_per_axis) + 0.5) * self.spacing

    def coordinates(self) -> Tuple[np.ndarray, ...]:
        centers = self.centers()
        return tuple(np.meshgrid(*([centers] * self.dim), indexing="ij"))

    def displacements(self) -> Tuple[np.ndarray, ...]:
        """Lattice of cell-centre differences j*h wrapped into [-1, 1), index 0 being the zero displacement."""
        lattice = np.fft.fftfreq(self.cells_per_axis) * PERIOD
        return tuple(np.meshgrid(*([lattice] * self.dim), indexing="ij"))

    def wrap(self, x: np.ndarray) -> np.ndarray:
        return np.mod(x + 1.0, PERIOD) - 1.0

    def fft(self, values: np.ndarray) -> np.ndarray:
        return np.fft.fftn(values, axes=self.axes)

    def ifft(self, values: np.ndarray) -> np.ndarray:
        return np.fft.ifftn(values, axes=self.axes).real

    def integrate(self, values: np.ndarray) -> Union[float, np.ndarray]:
        return self.cell_volume * values.sum(axis=self.axes)

    def mean(self, values: np.ndarray) -> Union[float, np.ndarray]:
        return values.mean(axis=self.axes)

    def gradient(self, values: np.ndarray) -> np.ndarray:
        values_hat = self.fft(values)
        return np.stack([self.ifft(1j * kd * values_hat) for kd in self.derivative_wavenumbers])

    def divergence(self, values: np.ndarray) -> np.ndarray:
        total = sum(1j * kd * self.fft(values[d]) for (d, kd) in enumerate(self.derivative_wavenumbers))
        return self.ifft(total)

    def laplacian(self, values: np.ndarray) -> np.ndarray:
        return self.ifft(-self.wavenumber_sq * self.fft(values))

    def inverse_laplacian(self, values: np.ndarray) -> np.ndarray:
        """Zero-mean solution of -Laplace(phi) = values; the mean of ``values`` is discarded."""
        values_hat = self.fft(values)
        phi_hat = np.zeros_like(values_hat)
        nonzero = self.wavenumber_sq > 0.0
        phi_hat[..., nonzero] = values_hat[..., nonzero] / self.wavenumber_sq[nonzero]
        return self.ifft(phi_hat)

    def convolve(self, kernel: np.ndarray, values: np.ndarray) -> np.ndarray:
        return self.cell_volume * self.ifft(self.fft(kernel) * self.fft(values))


class ScalarField(object):
    rank = 0

    def __init__(self, grid: TorusGrid, values):
        values = np.array(values, dtype=np.float64)
        if values.shape != self._expected_shape(grid):
            raise ValueError(
                f"{type(self).__name__} on {grid} expects shape {self._expected_shape(grid)}, got {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError(f"{type(self).__name__} values must be finite")
        values.setflags(write=False)

        self.grid = grid
        self.values = values

    @staticmethod
    def _expected_shape(grid: TorusGrid) -> Tuple[int, ...]:
        return grid.shape

    def like(self, values):
        return type(self)(self.grid, values)

    def integral(self):
        return self.grid.integrate(self.values)

    def mean(self):
        return self.grid.mean(self.values)

    @classmethod
    def constant(cls, grid: TorusGrid, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def from_function(cls, grid: TorusGrid, func) -> "ScalarField":
        return cls(grid, np.broadcast_to(func(*grid.coordinates()), grid.shape))


class VectorField(ScalarField):
    rank = 1

    @staticmethod
    def _expected_shape(grid: TorusGrid) -> Tuple[int, ...]:
        return (grid.dim,) + grid.shape

    @classmethod
    def constant(cls, grid: TorusGrid, value) -> "VectorField":
        value = np.asarray(value, dtype=np.float64).reshape((grid.dim,) + (1,) * grid.dim)
        return cls(grid, np.broadcast_to(value, (grid.dim,) + grid.shape))

    @classmethod
    def from_function(cls, grid: TorusGrid, func) -> "VectorField":
        components = func(*grid.coordinates())
        return cls(grid, np.stack([np.broadcast_to(c, grid.shape) for c in components]))


class SymTensorField(ScalarField):
    """Symmetric N x N matrix per cell, stored as the upper triangle in row-major order."""

    rank = 2

    def __init__(self, grid: TorusGrid, values, trace_free: bool = False):
        super(SymTensorField, self).__init__(grid, values)
        self.trace_free = trace_free
        if trace_free:
            max_trace = np.abs(self.trace()).max()
            if max_trace > TRACE_FREE_ATOL:
                raise ValueError(f"Trace-free tensor field has |tr| = {max_trace:.3e}")

    @staticmethod
    def _expected_shape(grid: TorusGrid) -> Tuple[int, ...]:
        return (grid.dim * (grid.dim + 1) // 2,) + grid.shape

    def like(self, values):
        return SymTensorField(self.grid, values, trace_free=self.trace_free)

    @staticmethod
    def component_indices(dim: int):
        return list(zip(*np.triu_indices(dim)))

    def trace(self) -> np.ndarray:
        return sum(self.values[c] for (c, (i, j)) in enumerate(self.component_indices(self.grid.dim)) if i == j)

    def to_matrix(self) -> np.ndarray:
        dim = self.grid.dim
        matrix = np.empty(self.grid.shape + (dim, dim))
        for (c, (i, j)) in enumerate(self.component_indices(dim)):
            matrix[..., i, j] = self.values[c]
            matrix[..., j, i] = self.values[c]
        return matrix

    @classmethod
    def from_matrix(cls, grid: TorusGrid, matrix: np.ndarray, trace_free: bool = False) -> "SymTensorField":
        values = np.stack([0.5 * (matrix[..., i, j] + matrix[..., j, i]) for (i, j) in cls.component_indices(grid.dim)])
        return cls(grid, values, trace_free=trace_free)

    @classmethod
    def zeros(cls, grid: TorusGrid) -> "SymTensorField":
        return cls(grid, np.zeros(cls._expected_shape(grid)), trace_free=True)


def check_same_grid(*fields):
    grid = fields[0].grid
    for field in fields[1:]:
        if field.grid != grid:
            raise GridMismatch(f"Fields live on different grids: {grid} and {field.grid}")
    return grid


def periodic_convolve(kernel: ScalarField, f: ScalarField) -> ScalarField:
    grid = check_same_grid(kernel, f)
    return kernel.like(grid.convolve(kernel.values, f.values))


def spectral_gradient(f: ScalarField) -> VectorField:
    return VectorField(f.grid, f.grid.gradient(f.values))


def spectral_divergence(v: VectorField) -> ScalarField:
    return ScalarField(v.grid, v.grid.divergence(v.values))


def check_zero_mean(f: ScalarField) -> float:
    mean = float(f.mean())
    scale = float(np.abs(f.values).max())
    if abs(mean) > ZERO_MEAN_RTOL * scale:
        raise NonZeroMean(f"Field mean {mean:.3e} exceeds {ZERO_MEAN_RTOL:g} * sup norm {scale:.3e}")
    return mean


def invert_laplacian(f: ScalarField) -> ScalarField:
    check_zero_mean(f)
    return ScalarField(f.grid, f.grid.inverse_laplacian(f.values))


def helmholtz_decompose(m: VectorField) -> HelmholtzParts:
    """Split m = v + V + grad(Phi) with div v = 0, mean v = 0, mean Phi = 0 and V the mean of m."""
    grid = m.grid
    mean = grid.mean(m.values)
    m_hat = grid.fft(m.values)
    projection = sum(kd * m_hat[d] for (d, kd) in enumerate(grid.derivative_wavenumbers))

    potential_hat = np.zeros_like(projection)
    nonzero = grid.derivative_wavenumber_sq > 0.0
    potential_hat[nonzero] = -1j * projection[nonzero] / grid.derivative_wavenumber_sq[nonzero]
    potential = grid.ifft(potential_hat)
    gradient = grid.gradient(potential)

    solenoidal = m.values - mean.reshape((grid.dim,) + (1,) * grid.dim) - gradient
    return HelmholtzParts(
        solenoidal=VectorField(grid, solenoidal),
        mean=np.asarray(mean),
        potential=ScalarField(grid, potential),
        gradient=VectorField(grid, gradient),
    )


def lambda_max(matrix: np.ndarray) -> Union[float, np.ndarray]:
    """Largest eigenvalue of symmetric 1x1, 2x2 or 3x3 matrices (batched over leading axes), in closed form."""
    matrix = np.asarray(matrix, dtype=np.float64)
    dim = matrix.shape[-1]
    if matrix.shape[-2] != dim or dim not in (1, 2, 3):
        raise ValueError(f"Expected symmetric matrices of size 1, 2 or 3, got shape {matrix.shape}")

    if dim == 1:
        result = matrix[..., 0, 0]
    elif dim == 2:
        a, b, d = matrix[..., 0, 0], matrix[..., 0, 1], matrix[..., 1, 1]
        result = 0.5 * (a + d) + np.hypot(0.5 * (a - d), b)
    else:
        result = _lambda_max_3(matrix)

    if result.ndim == 0:
        return float(result)
    return result


def _lambda_max_3(matrix: np.ndarray) -> np.ndarray:
    a00, a11, a22 = matrix[..., 0, 0], matrix[..., 1, 1], matrix[..., 2, 2]
    a01, a02, a12 = matrix[..., 0, 1], matrix[..., 0, 2], matrix[..., 1, 2]

    q = (a00 + a11 + a22) / 3.0
    off = a01 ** 2 + a02 ** 2 + a12 ** 2
    p = np.sqrt(((a00 - q) ** 2 + (a11 - q) ** 2 + (a22 - q) ** 2 + 2.0 * off) / 6.0)

    with np.errstate(divide="ignore", invalid="ignore"):
        safe_p = np.where(p > 0.0, p, 1.0)
        b00, b11, b22 = (a00 - q) / safe_p, (a11 - q) / safe_p, (a22 - q) / safe_p
        b01, b02, b12 = a01 / safe_p, a02 / safe_p, a12 / safe_p
        det = b00 * (b11 * b22 - b12 ** 2) - b01 * (b01 * b22 - b12 * b02) + b02 * (b01 * b12 - b11 * b02)
        phi = np.arccos(np.clip(0.5 * det, -1.0, 1.0)) / 3.0

    return np.where(p > 0.0, q + 2.0 * p * np.cos(phi), q)


def save_field(field: ScalarField, path: str):
    grid = field.grid
    with open(path, "wb") as f:
        f.write(SNAPSHOT_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, grid.dim, grid.cells_per_axis, field.rank))
        f.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def load_field(path: str) -> ScalarField:
    with open(path, "rb") as f:
        header = f.read(SNAPSHOT_HEADER.size)
        payload = f.read()

    if len(header) != SNAPSHOT_HEADER.size:
        raise ValueError(f"Truncated snapshot header in {path}")
    magic, version, dim, cells_per_axis, rank = SNAPSHOT_HEADER.unpack(header)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"{path} is not a field snapshot")
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"Unsupported snapshot version {version} in {path}")

    grid = TorusGrid(dim, cells_per_axis)
    field_class = {0: ScalarField, 1: VectorField, 2: SymTensorField}[rank]
    shape = field_class._expected_shape(grid)
    values = np.frombuffer(payload, dtype="<f8")
    if values.size != int(np.prod(shape)):
        raise ValueError(f"Snapshot payload of {path} has {values.size} values, expected {int(np.prod(shape))}")

    return field_class(grid, values.reshape(shape))
