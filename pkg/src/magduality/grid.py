"""Vector fields on a periodic box and spectral differential operators.

The box ``[0, L)^3`` is sampled at cell centres ``x_i = (i + 1/2) L / N``.
All derivatives are taken in Fourier space; the derivative multiplier of the
unmatched Nyquist frequency ``N/2`` is set to zero so that real fields stay
real and ``div∘curl`` / ``curl∘grad`` vanish identically.
"""
from __future__ import annotations

import csv
import functools
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft as sfft

__all__ = [
    "GridSpec",
    "VectorField",
    "ScalarField",
    "Region",
    "SpecMismatchError",
    "inner_product",
    "divergence",
    "curl",
    "gradient_of_scalar",
    "curl_residual",
    "divergence_residual",
    "save_field_csv",
    "load_field_csv",
    "save_scalar_csv",
    "load_scalar_csv",
    "save_field_binary",
    "load_field_binary",
]


class SpecMismatchError(ValueError):
    """Raised when fields living on different grids are combined."""


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("MAGDUALITY_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class GridSpec:
    """Periodic computational box.

    Parameters
    ----------
    edge_length : float
        Side ``L`` of the cubic box.
    resolution : int
        Samples per axis ``N`` (even, at least 4).
    mu0 : float
        Vacuum permeability.
    """

    edge_length: float
    resolution: int
    mu0: float = 1.0

    def __post_init__(self):
        if not (isinstance(self.resolution, (int, np.integer)) and self.resolution >= 4
                and self.resolution % 2 == 0):
            raise ValueError(f"resolution must be an even integer >= 4, got {self.resolution!r}")
        if not self.edge_length > 0:
            raise ValueError(f"edge_length must be positive, got {self.edge_length!r}")
        if not self.mu0 > 0:
            raise ValueError(f"mu0 must be positive, got {self.mu0!r}")
        object.__setattr__(self, "resolution", int(self.resolution))
        object.__setattr__(self, "edge_length", float(self.edge_length))
        object.__setattr__(self, "mu0", float(self.mu0))

    @property
    def shape(self) -> tuple[int, int, int]:
        n = self.resolution
        return (n, n, n)

    @property
    def spacing(self) -> float:
        return self.edge_length / self.resolution

    @property
    def cell_volume(self) -> float:
        return self.spacing ** 3

    @property
    def volume(self) -> float:
        return self.edge_length ** 3

    def coordinates(self) -> np.ndarray:
        """Node coordinates, shape ``(3, N, N, N)``."""
        x = (np.arange(self.resolution) + 0.5) * self.spacing
        return np.stack(np.meshgrid(x, x, x, indexing="ij"))

    @property
    def kmax(self) -> float:
        """Largest resolved wavenumber magnitude (bound for ``|i k|``)."""
        return float(np.sqrt(3.0) * 2 * np.pi / self.edge_length * (self.resolution // 2 - 1))

    def to_dict(self) -> dict:
        return {"edge_length": self.edge_length, "resolution": self.resolution, "mu0": self.mu0}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(edge_length=d["edge_length"], resolution=d["resolution"], mu0=d["mu0"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "GridSpec":
        return cls.from_dict(json.loads(text))


@functools.lru_cache(maxsize=16)
def wavevectors(spec: GridSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Broadcastable derivative wavenumbers for the real-FFT layout.

    The Nyquist entries are zero.
    """
    n = spec.resolution
    scale = 2 * np.pi / spec.edge_length
    k_full = sfft.fftfreq(n, d=1.0 / n)
    k_full[n // 2] = 0.0
    k_half = sfft.rfftfreq(n, d=1.0 / n)
    k_half[-1] = 0.0
    kx = (scale * k_full).reshape(n, 1, 1)
    ky = (scale * k_full).reshape(1, n, 1)
    kz = (scale * k_half).reshape(1, 1, n // 2 + 1)
    for k in (kx, ky, kz):
        k.flags.writeable = False
    return kx, ky, kz


@functools.lru_cache(maxsize=16)
def _k_squared(spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    kx, ky, kz = wavevectors(spec)
    k2 = kx ** 2 + ky ** 2 + kz ** 2
    inv = np.zeros_like(k2)
    nz = k2 > 0
    inv[nz] = 1.0 / k2[nz]
    k2.flags.writeable = False
    inv.flags.writeable = False
    return k2, inv


def fft3(a: np.ndarray) -> np.ndarray:
    return sfft.rfftn(a, axes=(-3, -2, -1), workers=_workers())


def ifft3(a: np.ndarray, n: int) -> np.ndarray:
    return sfft.irfftn(a, s=(n, n, n), axes=(-3, -2, -1), workers=_workers())


# -- array-level kernels (used by the solvers to avoid wrapper overhead) ----------

def div_array(u: np.ndarray, spec: GridSpec) -> np.ndarray:
    kx, ky, kz = wavevectors(spec)
    uh = fft3(u)
    return ifft3(1j * (kx * uh[0] + ky * uh[1] + kz * uh[2]), spec.resolution)


def curl_array(u: np.ndarray, spec: GridSpec) -> np.ndarray:
    kx, ky, kz = wavevectors(spec)
    uh = fft3(u)
    ch = np.stack([
        1j * (ky * uh[2] - kz * uh[1]),
        1j * (kz * uh[0] - kx * uh[2]),
        1j * (kx * uh[1] - ky * uh[0]),
    ])
    return ifft3(ch, spec.resolution)


def grad_array(phi: np.ndarray, spec: GridSpec) -> np.ndarray:
    kx, ky, kz = wavevectors(spec)
    ph = fft3(phi)
    return ifft3(np.stack([1j * kx * ph, 1j * ky * ph, 1j * kz * ph]), spec.resolution)


def l2_norm(a: np.ndarray, spec: GridSpec) -> float:
    return float(np.sqrt(np.sum(a * a) * spec.cell_volume))


# -- field carriers -------------------------------------------------------------

def _frozen_copy(data, shape) -> np.ndarray:
    arr = np.array(data, dtype=float, copy=True)
    if arr.shape != shape:
        raise ValueError(f"expected array of shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("field entries must be finite")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class VectorField:
    """Real 3-vector per grid node; ``data`` has shape ``(3, N, N, N)``."""

    spec: GridSpec
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "data", _frozen_copy(self.data, (3,) + self.spec.shape))

    @classmethod
    def zeros(cls, spec: GridSpec) -> "VectorField":
        return cls(spec, np.zeros((3,) + spec.shape))

    @classmethod
    def uniform(cls, spec: GridSpec, value) -> "VectorField":
        v = np.asarray(value, dtype=float).reshape(3, 1, 1, 1)
        return cls(spec, np.broadcast_to(v, (3,) + spec.shape))

    @classmethod
    def from_function(cls, spec: GridSpec, fn) -> "VectorField":
        """Sample ``fn(x, y, z) -> (vx, vy, vz)`` at the grid nodes."""
        x, y, z = spec.coordinates()
        comps = fn(x, y, z)
        return cls(spec, np.stack([np.broadcast_to(c, spec.shape) for c in comps]))

    @property
    def vectors(self) -> np.ndarray:
        """View of the data as an ``(N, N, N, 3)`` array of node vectors."""
        return np.moveaxis(self.data, 0, -1)

    @classmethod
    def from_vectors(cls, spec: GridSpec, vecs: np.ndarray) -> "VectorField":
        return cls(spec, np.moveaxis(np.asarray(vecs), -1, 0))

    def _check(self, other) -> None:
        if not isinstance(other, VectorField):
            raise TypeError(f"cannot combine VectorField with {type(other).__name__}")
        if other.spec != self.spec:
            raise SpecMismatchError(f"grid mismatch: {self.spec} vs {other.spec}")

    def __add__(self, other: "VectorField") -> "VectorField":
        self._check(other)
        return VectorField(self.spec, self.data + other.data)

    def __sub__(self, other: "VectorField") -> "VectorField":
        self._check(other)
        return VectorField(self.spec, self.data - other.data)

    def __mul__(self, scalar) -> "VectorField":
        if isinstance(scalar, VectorField):
            raise TypeError("use inner_product for field pairings")
        return VectorField(self.spec, self.data * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "VectorField":
        return VectorField(self.spec, -self.data)

    def masked(self, region: "Region") -> "VectorField":
        if region.spec != self.spec:
            raise SpecMismatchError("region lives on a different grid")
        return VectorField(self.spec, self.data * region.mask)

    def norm(self) -> float:
        return l2_norm(self.data, self.spec)

    def max_abs(self) -> float:
        return float(np.max(np.linalg.norm(self.data, axis=0)))


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Real scalar per grid node; ``data`` has shape ``(N, N, N)``."""

    spec: GridSpec
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "data", _frozen_copy(self.data, self.spec.shape))

    @classmethod
    def zeros(cls, spec: GridSpec) -> "ScalarField":
        return cls(spec, np.zeros(spec.shape))

    @classmethod
    def from_function(cls, spec: GridSpec, fn) -> "ScalarField":
        x, y, z = spec.coordinates()
        return cls(spec, np.broadcast_to(fn(x, y, z), spec.shape))

    def __add__(self, other: "ScalarField") -> "ScalarField":
        if other.spec != self.spec:
            raise SpecMismatchError("grid mismatch")
        return ScalarField(self.spec, self.data + other.data)

    def __mul__(self, scalar) -> "ScalarField":
        return ScalarField(self.spec, self.data * float(scalar))

    __rmul__ = __mul__

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.data ** 2) * self.spec.cell_volume))


@dataclass(frozen=True, eq=False)
class Region:
    """Boolean body mask on the grid."""

    spec: GridSpec
    mask: np.ndarray = field(repr=False)
    allow_empty: bool = False

    def __post_init__(self):
        m = np.array(self.mask, dtype=bool, copy=True)
        if m.shape != self.spec.shape:
            raise ValueError(f"mask shape {m.shape} does not match grid {self.spec.shape}")
        if not self.allow_empty and not m.any():
            raise ValueError("region is empty; use Region.empty() for an intentional empty body")
        m.flags.writeable = False
        object.__setattr__(self, "mask", m)

    @classmethod
    def full(cls, spec: GridSpec) -> "Region":
        return cls(spec, np.ones(spec.shape, dtype=bool))

    @classmethod
    def empty(cls, spec: GridSpec) -> "Region":
        return cls(spec, np.zeros(spec.shape, dtype=bool), allow_empty=True)

    @classmethod
    def box(cls, spec: GridSpec, center, half_extents) -> "Region":
        x = spec.coordinates()
        c = np.asarray(center, dtype=float).reshape(3, 1, 1, 1)
        h = np.asarray(half_extents, dtype=float).reshape(3, 1, 1, 1)
        return cls(spec, np.all(np.abs(x - c) < h, axis=0))

    @classmethod
    def ball(cls, spec: GridSpec, center, radius: float) -> "Region":
        x = spec.coordinates()
        c = np.asarray(center, dtype=float).reshape(3, 1, 1, 1)
        return cls(spec, np.sum((x - c) ** 2, axis=0) < radius ** 2)

    @classmethod
    def centered_cube(cls, spec: GridSpec, fraction: float = 0.5) -> "Region":
        """Cube of edge ``fraction * L`` centred in the box."""
        L = spec.edge_length
        return cls.box(spec, [L / 2] * 3, [fraction * L / 2] * 3)

    @property
    def is_empty(self) -> bool:
        return not self.mask.any()

    @property
    def is_full(self) -> bool:
        return bool(self.mask.all())

    @property
    def volume(self) -> float:
        return float(self.mask.sum()) * self.spec.cell_volume


# -- operations -----------------------------------------------------------------

def inner_product(u: VectorField, v: VectorField) -> float:
    """Midpoint-rule approximation of ``∫ u·v`` over the box."""
    u._check(v)
    return float(np.sum(u.data * v.data) * u.spec.cell_volume)


def divergence(u: VectorField) -> ScalarField:
    return ScalarField(u.spec, div_array(u.data, u.spec))


def curl(u: VectorField) -> VectorField:
    return VectorField(u.spec, curl_array(u.data, u.spec))


def gradient_of_scalar(phi: ScalarField) -> VectorField:
    return VectorField(phi.spec, grad_array(phi.data, phi.spec))


def curl_residual(u: VectorField, reference: VectorField | None = None) -> float:
    """``‖curl u‖ / (kmax ‖ref‖)``; dimensionless, at most about 1."""
    ref = u if reference is None else reference
    scale = ref.spec.kmax * ref.norm()
    c = l2_norm(curl_array(u.data, u.spec), u.spec)
    return c / scale if scale > 0 else c


def divergence_residual(u: VectorField, reference: VectorField | None = None) -> float:
    """``‖div u‖ / (kmax ‖ref‖)``."""
    ref = u if reference is None else reference
    scale = ref.spec.kmax * ref.norm()
    d = float(np.sqrt(np.sum(div_array(u.data, u.spec) ** 2) * u.spec.cell_volume))
    return d / scale if scale > 0 else d


# -- serialization ---------------------------------------------------------------

_VECTOR_HEADER = ["x_index", "y_index", "z_index", "vx", "vy", "vz"]
_SCALAR_HEADER = ["x_index", "y_index", "z_index", "value"]


def _index_columns(n: int) -> np.ndarray:
    ix, iy, iz = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    return np.stack([ix.ravel(), iy.ravel(), iz.ravel()], axis=1)


def save_field_csv(u: VectorField, path) -> None:
    """Write one row per node, x slowest and z fastest."""
    idx = _index_columns(u.spec.resolution)
    vals = u.vectors.reshape(-1, 3)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_VECTOR_HEADER)
        for (i, j, k), (a, b, c) in zip(idx, vals):
            w.writerow([i, j, k, repr(float(a)), repr(float(b)), repr(float(c))])


def load_field_csv(path, spec: GridSpec) -> VectorField:
    with open(path, newline="") as fh:
        header = fh.readline().strip().split(",")
        if header != _VECTOR_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = np.loadtxt(fh, delimiter=",", ndmin=2)
    n = spec.resolution
    if rows.shape != (n ** 3, 6):
        raise ValueError(f"{path}: expected {n**3} rows of 6 columns, got {rows.shape}")
    vecs = np.zeros(spec.shape + (3,))
    ijk = rows[:, :3].astype(int)
    vecs[ijk[:, 0], ijk[:, 1], ijk[:, 2]] = rows[:, 3:]
    return VectorField.from_vectors(spec, vecs)


def save_scalar_csv(phi: ScalarField, path) -> None:
    idx = _index_columns(phi.spec.resolution)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_SCALAR_HEADER)
        for (i, j, k), a in zip(idx, phi.data.ravel()):
            w.writerow([i, j, k, repr(float(a))])


def load_scalar_csv(path, spec: GridSpec) -> ScalarField:
    with open(path, newline="") as fh:
        header = fh.readline().strip().split(",")
        if header != _SCALAR_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = np.loadtxt(fh, delimiter=",", ndmin=2)
    out = np.zeros(spec.shape)
    ijk = rows[:, :3].astype(int)
    out[ijk[:, 0], ijk[:, 1], ijk[:, 2]] = rows[:, 3]
    return ScalarField(spec, out)


def save_field_binary(u: VectorField, path) -> None:
    """Little-endian float64, node-major (x, y, z) with the 3 components innermost."""
    Path(path).write_bytes(np.ascontiguousarray(u.vectors, dtype="<f8").tobytes())


def load_field_binary(path, spec: GridSpec) -> VectorField:
    raw = np.frombuffer(Path(path).read_bytes(), dtype="<f8")
    return VectorField.from_vectors(spec, raw.reshape(spec.shape + (3,)))
