"""Orthogonal projection onto gradient fields, stray field and potential recovery."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import (
    GridSpec,
    Region,
    ScalarField,
    SpecMismatchError,
    VectorField,
    _k_squared,
    curl_residual,
    fft3,
    ifft3,
    wavevectors,
)

__all__ = [
    "HelmholtzSplit",
    "NotCurlFreeError",
    "project_array",
    "project_curl_free",
    "helmholtz_split",
    "stray_field",
    "recover_potential",
]


class NotCurlFreeError(ValueError):
    """Raised by :func:`recover_potential` when the input has a curl."""

    def __init__(self, residual: float, tolerance: float):
        super().__init__(f"field is not curl-free: relative curl residual {residual:.3e} "
                         f"exceeds tolerance {tolerance:.3e}")
        self.residual = residual
        self.tolerance = tolerance


def project_array(u: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Apply ``k (k·û) / |k|²`` mode by mode; the zero mode goes to zero."""
    kx, ky, kz = wavevectors(spec)
    _, inv_k2 = _k_squared(spec)
    uh = fft3(u)
    s = (kx * uh[0] + ky * uh[1] + kz * uh[2]) * inv_k2
    return ifft3(np.stack([kx * s, ky * s, kz * s]), spec.resolution)


def project_curl_free(u: VectorField) -> VectorField:
    """Curl-free (gradient) part of ``u``.

    Idempotent and self-adjoint with respect to :func:`~magduality.grid.inner_product`.
    Constants are divergence-free on the torus and are annihilated.
    """
    return VectorField(u.spec, project_array(u.data, u.spec))


@dataclass(frozen=True)
class HelmholtzSplit:
    curl_free: VectorField
    div_free: VectorField


def helmholtz_split(u: VectorField) -> HelmholtzSplit:
    p = project_array(u.data, u.spec)
    return HelmholtzSplit(VectorField(u.spec, p), VectorField(u.spec, u.data - p))


def stray_field(m: VectorField, body: Region) -> VectorField:
    """``h_s = -P[χ m]``, the unique curl-free field with ``div(χ m + h_s) = 0``."""
    if body.spec != m.spec:
        raise SpecMismatchError("body and magnetization live on different grids")
    return VectorField(m.spec, -project_array(m.data * body.mask, m.spec))


def recover_potential(h: VectorField, tolerance: float = 1e-8) -> ScalarField:
    """Mean-zero potential ``φ`` with ``∇φ = -h``.

    Raises
    ------
    NotCurlFreeError
        If the relative curl residual of ``h`` exceeds ``tolerance``.
    """
    res = curl_residual(h)
    if res > tolerance:
        raise NotCurlFreeError(res, tolerance)
    spec = h.spec
    kx, ky, kz = wavevectors(spec)
    _, inv_k2 = _k_squared(spec)
    hh = fft3(h.data)
    ph = 1j * (kx * hh[0] + ky * hh[1] + kz * hh[2]) * inv_k2
    return ScalarField(spec, ifft3(ph, spec.resolution))
