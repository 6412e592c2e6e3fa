"""Constitutive energy densities for homogeneous magnetic materials.

Every model carries both descriptions of the same material:

* ``phi(b)``: the density of the induction-based energy;
* ``psi_hat(m) = phi_hat(m) + mu0/2 |m|^2``: the augmented density of the
  magnetization/stray-field energy, related to ``phi`` by ``phi = -psi_hat◇``.

All pointwise methods are vectorized over a trailing axis of length 3, so they
accept a single vector, a batch ``(n, 3)`` or the node array ``(N, N, N, 3)``
of a :class:`~magduality.grid.VectorField`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import ClassVar, Optional

import numpy as np

from .grid import VectorField
from .legendre import Convexity, ScalarFunction3, numeric_gradient_inverse

__all__ = [
    "MaterialModel",
    "Paramagnet",
    "Diamagnet",
    "AnisotropicMixed",
    "PermanentMagnet",
    "SoftSaturation",
    "Langevin",
    "HardSaturation",
    "Subdifferential",
    "NonConvexError",
    "NonDifferentiableError",
    "DomainError",
    "CLASSIFICATION",
    "material_from_dict",
    "phi",
    "grad_phi",
    "psi_hat",
    "grad_or_subdiff_psi_hat",
    "prox_psi_hat",
    "phi_hat",
]

# relative slack for membership in closed balls, spheres and points
DOMAIN_SLACK = 1e-12


class NonConvexError(ValueError):
    """Operation requires a convex augmented density."""


class NonDifferentiableError(ValueError):
    """Gradient requested at a point where the density is not differentiable."""


class DomainError(ValueError):
    """Point lies outside the effective domain."""


def _v(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


def _sq(x: np.ndarray) -> np.ndarray:
    return np.sum(x * x, axis=-1)


def _norm(x: np.ndarray) -> np.ndarray:
    return np.sqrt(_sq(x))


@dataclass(frozen=True)
class Subdifferential:
    """Closed convex set ``{base + λ·direction : λ ≥ 0}``, a singleton or R^3."""

    base: Optional[np.ndarray] = None
    direction: Optional[np.ndarray] = None
    full_space: bool = False

    def contains(self, w, tol: float = 1e-9) -> bool:
        w = _v(w)
        if self.full_space:
            return True
        d = w - self.base
        if self.direction is None:
            return bool(np.linalg.norm(d) <= tol * (1 + np.linalg.norm(self.base)))
        lam = max(0.0, float(d @ self.direction))
        return bool(np.linalg.norm(d - lam * self.direction) <= tol * (1 + np.linalg.norm(w)))

    @property
    def is_singleton(self) -> bool:
        return not self.full_space and self.direction is None


class MaterialModel:
    """Base class; subclasses fix the variant and its closed forms."""

    variant: ClassVar[str] = ""
    phi_convexity: ClassVar[Convexity] = Convexity.UNKNOWN
    psi_convexity: ClassVar[Convexity] = Convexity.UNKNOWN
    smooth_psi: ClassVar[bool] = False
    # barred from both solvers
    solver_admissible: ClassVar[bool] = True

    mu0: float

    # -- densities -----------------------------------------------------------
    def phi(self, b) -> np.ndarray:
        raise NotImplementedError

    def grad_phi(self, b) -> np.ndarray:
        raise NotImplementedError

    def psi_hat(self, m) -> np.ndarray:
        raise NotImplementedError

    def grad_psi_hat(self, m) -> np.ndarray:
        """Single-valued gradient of ``psi_hat``; only for smooth variants."""
        raise NonDifferentiableError(f"{self.variant}: psi_hat is not differentiable; "
                                     f"use grad_or_subdiff_psi_hat")

    def grad_or_subdiff_psi_hat(self, m):
        return self.grad_psi_hat(_v(m))

    def prox_psi_hat(self, step: float, v) -> np.ndarray:
        raise NonConvexError(f"{self.variant}: psi_hat is {self.psi_convexity.value}, "
                             f"the proximal map is not defined")

    def phi_hat(self, m) -> np.ndarray:
        m = _v(m)
        return self.psi_hat(m) - 0.5 * self.mu0 * _sq(m)

    def psi_hat_conjugate(self, b) -> np.ndarray:
        """Closed-form transform of ``psi_hat``; equals ``-phi``."""
        return -self.phi(b)

    # -- metadata ------------------------------------------------------------
    @property
    def psi_is_convex(self) -> bool:
        return self.psi_convexity is Convexity.CONVEX

    def lipschitz_grad_phi(self) -> float:
        raise NotImplementedError

    def saturation(self) -> float:
        return 0.0

    def search_radius(self, z_star) -> float:
        """Default radius for brute-force conjugates of this model's densities."""
        return max(4.0 * self.saturation(), 4.0 * float(np.linalg.norm(z_star)) / self.mu0, 4.0)

    def params(self) -> dict:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"variant": self.variant, "params": self.params()}

    def restrict(self, body) -> "MaterialModel":
        """Model for the flat array of body nodes (matters only for node-wise data)."""
        return self

    # -- ScalarFunction3 views ----------------------------------------------
    def psi_function(self) -> ScalarFunction3:
        inv = getattr(self, "_grad_psi_inverse", None)
        return ScalarFunction3(
            self.psi_hat,
            gradient=self.grad_psi_hat if self.smooth_psi else None,
            gradient_inverse=inv,
            convexity=self.psi_convexity,
            conjugate=self.psi_hat_conjugate,
            radius_hint=self.search_radius,
            **self._chart(),
        )

    def neg_phi_function(self) -> ScalarFunction3:
        return ScalarFunction3(
            lambda b: -self.phi(b),
            gradient=lambda b: -self.grad_phi(b),
            convexity=self.phi_convexity.flipped(),
            radius_hint=self.search_radius,
        )

    def _chart(self) -> dict:
        return {}


# -- linear materials -------------------------------------------------------------

class _Linear(MaterialModel):
    smooth_psi = True

    def __init__(self, mu: float, mu0: float = 1.0):
        self.mu = float(mu)
        self.mu0 = float(mu0)
        self._validate()
        # c = (1/mu0 - 1/mu)^-1, the psi_hat coefficient
        self.c = self.mu0 * self.mu / (self.mu - self.mu0)

    def _validate(self):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}(mu={self.mu!r}, mu0={self.mu0!r})"

    def phi(self, b):
        return 0.5 * (1 / self.mu - 1 / self.mu0) * _sq(_v(b))

    def grad_phi(self, b):
        return (1 / self.mu - 1 / self.mu0) * _v(b)

    def psi_hat(self, m):
        return 0.5 * self.c * _sq(_v(m))

    def grad_psi_hat(self, m):
        return self.c * _v(m)

    def _grad_psi_inverse(self, b):
        return _v(b) / self.c

    def phi_hat(self, m):
        return 0.5 * self.mu0 ** 2 / (self.mu - self.mu0) * _sq(_v(m))

    def psi_hat_conjugate(self, b):
        return _sq(_v(b)) / (2 * self.c)

    def lipschitz_grad_phi(self):
        return abs(1 / self.mu - 1 / self.mu0)

    def params(self):
        return {"mu": self.mu}


class Paramagnet(_Linear):
    """``b = μ h`` with ``μ > μ0``."""

    variant = "Paramagnet"
    phi_convexity = Convexity.CONCAVE
    psi_convexity = Convexity.CONVEX

    def _validate(self):
        if not self.mu > self.mu0 > 0:
            raise ValueError(f"Paramagnet needs mu > mu0 > 0, got mu={self.mu}, mu0={self.mu0}")

    def prox_psi_hat(self, step, v):
        return _v(v) / (1 + step * self.c)


class Diamagnet(_Linear):
    """``b = μ h`` with ``0 < μ < μ0``; ``psi_hat`` is concave."""

    variant = "Diamagnet"
    phi_convexity = Convexity.CONVEX
    psi_convexity = Convexity.CONCAVE

    def _validate(self):
        if not 0 < self.mu < self.mu0:
            raise ValueError(f"Diamagnet needs 0 < mu < mu0, got mu={self.mu}, mu0={self.mu0}")


class AnisotropicMixed(MaterialModel):
    """Paramagnetic along ``e1`` (``μ_p``), diamagnetic along ``e2, e3`` (``μ_d``).

    Both densities are indefinite quadratic forms (saddles).
    """

    variant = "AnisotropicMixed"
    phi_convexity = Convexity.SADDLE
    psi_convexity = Convexity.SADDLE
    smooth_psi = True

    def __init__(self, mu_p: float, mu_d: float, frame=None, mu0: float = 1.0):
        self.mu_p = float(mu_p)
        self.mu_d = float(mu_d)
        self.mu0 = float(mu0)
        if not 0 < self.mu_d < self.mu0 < self.mu_p:
            raise ValueError(f"AnisotropicMixed needs 0 < mu_d < mu0 < mu_p, got "
                             f"mu_d={self.mu_d}, mu0={self.mu0}, mu_p={self.mu_p}")
        e = np.eye(3) if frame is None else _v(frame)
        if e.shape != (3, 3) or np.max(np.abs(e @ e.T - np.eye(3))) > 1e-12:
            raise ValueError("frame must be three orthonormal row vectors (to 1e-12)")
        self.frame = e
        mus = np.array([self.mu_p, self.mu_d, self.mu_d])
        self._a = 1 / mus - 1 / self.mu0            # phi coefficients
        self._c = 1 / (1 / self.mu0 - 1 / mus)      # psi_hat coefficients
        # symmetric matrices in the standard basis
        self._A = e.T @ np.diag(self._a) @ e
        self._C = e.T @ np.diag(self._c) @ e

    def __repr__(self):
        return f"AnisotropicMixed(mu_p={self.mu_p!r}, mu_d={self.mu_d!r}, mu0={self.mu0!r})"

    def phi(self, b):
        b = _v(b)
        return 0.5 * np.sum(b * (b @ self._A), axis=-1)

    def grad_phi(self, b):
        return _v(b) @ self._A

    def psi_hat(self, m):
        m = _v(m)
        return 0.5 * np.sum(m * (m @ self._C), axis=-1)

    def grad_psi_hat(self, m):
        return _v(m) @ self._C

    def _grad_psi_inverse(self, b):
        return _v(b) @ np.linalg.inv(self._C)

    def oracle_psi_function(self) -> ScalarFunction3:
        """``psi_hat`` whose gradient inverse is found numerically (oracle use)."""
        def inverse(w):
            w = _v(w)
            flat = w.reshape(-1, 3)
            out = np.array([numeric_gradient_inverse(self.grad_psi_hat, x) for x in flat])
            return out.reshape(w.shape)

        return ScalarFunction3(self.psi_hat, gradient=self.grad_psi_hat, gradient_inverse=inverse,
                               convexity=Convexity.SADDLE)

    def lipschitz_grad_phi(self):
        return float(np.max(np.abs(self._a)))

    def params(self):
        return {"mu_p": self.mu_p, "mu_d": self.mu_d, "frame": self.frame.tolist()}


# -- nonsmooth and saturating materials ---------------------------------------------

class PermanentMagnet(MaterialModel):
    """Rigid magnetization ``m0``: ``phi = -b·m0``, ``psi_hat`` = indicator of ``{m0}``.

    ``m0`` is a 3-vector, a :class:`VectorField` (node-wise magnetization)
    or an array of node vectors with trailing axis 3.
    """

    variant = "PermanentMagnet"
    phi_convexity = Convexity.CONCAVE
    psi_convexity = Convexity.CONVEX

    def __init__(self, m0, mu0: float = 1.0):
        self.mu0 = float(mu0)
        if isinstance(m0, VectorField):
            self.m0 = m0.vectors.copy()
        else:
            self.m0 = _v(m0)
            if self.m0.ndim == 0 or self.m0.shape[-1] != 3:
                raise ValueError("m0 must be a 3-vector, a VectorField or an array of 3-vectors")
        if not np.all(np.isfinite(self.m0)):
            raise ValueError("m0 must be finite")

    def __repr__(self):
        return f"PermanentMagnet(m0={self.m0.tolist() if self.m0.ndim == 1 else '<field>'})"

    @property
    def is_uniform(self) -> bool:
        return self.m0.ndim == 1

    def restrict(self, body) -> "PermanentMagnet":
        if self.is_uniform:
            return self
        return PermanentMagnet(self.m0[body.mask], mu0=self.mu0)

    def _on_point(self, m):
        d = _norm(_v(m) - self.m0)
        return d <= DOMAIN_SLACK * (1 + _norm(self.m0))

    def phi(self, b):
        return -np.sum(_v(b) * self.m0, axis=-1)

    def grad_phi(self, b):
        return -np.broadcast_to(self.m0, np.broadcast_shapes(_v(b).shape, self.m0.shape)).copy()

    def psi_hat(self, m):
        return np.where(self._on_point(m), 0.0, np.inf)

    def grad_or_subdiff_psi_hat(self, m):
        m = _v(m)
        if not bool(np.all(self._on_point(m))):
            raise DomainError(f"m={m} differs from m0; psi_hat is +inf there")
        return Subdifferential(full_space=True)

    def prox_psi_hat(self, step, v):
        v = _v(v)
        return np.broadcast_to(self.m0, np.broadcast_shapes(v.shape, self.m0.shape)).copy()

    def lipschitz_grad_phi(self):
        return 0.0

    def _chart(self):
        if not self.is_uniform:
            return {}
        m0 = self.m0
        return {"chart": lambda p: np.broadcast_to(m0, (len(p), 3)).copy(), "chart_box": ()}

    def params(self):
        if not self.is_uniform:
            raise ValueError("only uniform m0 is serializable")
        return {"m0": self.m0.tolist()}


class _Saturating(MaterialModel):
    def __init__(self, m_s: float, mu0: float = 1.0):
        self.m_s = float(m_s)
        self.mu0 = float(mu0)
        if not self.m_s > 0:
            raise ValueError(f"m_s must be positive, got {m_s}")

    def saturation(self):
        return self.m_s

    def _in_ball(self, m):
        return _norm(_v(m)) <= self.m_s * (1 + DOMAIN_SLACK)


class SoftSaturation(_Saturating):
    """Convex constraint ``|m| ≤ m_s`` with no further energy."""

    variant = "SoftSaturation"
    phi_convexity = Convexity.CONCAVE
    psi_convexity = Convexity.CONVEX

    def __repr__(self):
        return f"SoftSaturation(m_s={self.m_s!r}, mu0={self.mu0!r})"

    def phi(self, b):
        r = _norm(_v(b))
        inner = -r ** 2 / (2 * self.mu0)
        outer = -self.m_s * r + 0.5 * self.mu0 * self.m_s ** 2
        return np.where(r <= self.mu0 * self.m_s, inner, outer)

    def grad_phi(self, b):
        b = _v(b)
        r = _norm(b)[..., None]
        inner = -b / self.mu0
        with np.errstate(invalid="ignore", divide="ignore"):
            outer = -self.m_s * b / r
        return np.where(r <= self.mu0 * self.m_s, inner, outer)

    def psi_hat(self, m):
        m = _v(m)
        return np.where(self._in_ball(m), 0.5 * self.mu0 * _sq(m), np.inf)

    def grad_or_subdiff_psi_hat(self, m):
        m = _v(m)
        r = float(np.linalg.norm(m))
        if r > self.m_s * (1 + DOMAIN_SLACK):
            raise DomainError(f"|m|={r} exceeds m_s={self.m_s}")
        if r < self.m_s * (1 - DOMAIN_SLACK):
            return Subdifferential(base=self.mu0 * m)
        return Subdifferential(base=self.mu0 * m, direction=m / r)

    def prox_psi_hat(self, step, v):
        w = _v(v) / (1 + step * self.mu0)
        r = _norm(w)[..., None]
        scale = np.minimum(1.0, self.m_s / np.maximum(r, 1e-300))
        return w * scale

    def lipschitz_grad_phi(self):
        return 1 / self.mu0

    def params(self):
        return {"m_s": self.m_s}


class Langevin(_Saturating):
    """Entropic saturation ``phi_hat = κ[s·artanh s + ½ ln(1 − s²)]``, ``s = |m|/m_s``.

    ``phi`` has no closed form and is evaluated through the smooth transform of
    ``psi_hat``, i.e. by inverting the radial gradient profile.
    """

    variant = "Langevin"
    phi_convexity = Convexity.CONCAVE
    psi_convexity = Convexity.CONVEX
    smooth_psi = True

    def __init__(self, kappa: float, m_s: float, mu0: float = 1.0):
        super().__init__(m_s, mu0)
        self.kappa = float(kappa)
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {kappa}")

    def __repr__(self):
        return f"Langevin(kappa={self.kappa!r}, m_s={self.m_s!r}, mu0={self.mu0!r})"

    def _radial_solve(self, a: float, y: np.ndarray) -> np.ndarray:
        """Solve ``a ρ + (κ/m_s) artanh(ρ/m_s) = y`` for ``ρ ∈ [0, m_s)``.

        Works in ``u = artanh(ρ/m_s)`` where the equation is smooth, increasing
        and concave, so Newton from ``u = 0`` increases monotonically to the root.
        """
        ms, k = self.m_s, self.kappa / self.m_s
        y = np.asarray(y, dtype=float)
        u = np.zeros_like(y)
        hi = y / k
        for _ in range(200):
            t = np.tanh(u)
            f = a * ms * t + k * u - y
            fp = a * ms * (1 - t * t) + k
            du = -f / fp
            u = np.clip(u + du, 0.0, hi)
            if np.all(np.abs(du) <= 1e-15 * (1 + np.abs(u))):
                break
        return u

    def _rho(self, u):
        return np.minimum(self.m_s * np.tanh(u), np.nextafter(self.m_s, 0.0))

    def _phi_hat_u(self, s, u):
        # κ[s·u − ln cosh u] with u = artanh s
        logcosh = u + np.log1p(np.exp(-2 * u)) - math.log(2.0)
        return self.kappa * (s * u - logcosh)

    def phi_hat(self, m):
        s = _norm(_v(m)) / self.m_s
        inside = s < 1
        with np.errstate(divide="ignore", invalid="ignore"):
            ss = np.where(inside, s, 0.0)
            val = self.kappa * (ss * np.arctanh(ss) + 0.5 * np.log1p(-ss * ss))
        return np.where(inside, val, np.inf)

    def psi_hat(self, m):
        m = _v(m)
        return self.phi_hat(m) + 0.5 * self.mu0 * _sq(m)

    def _radial_gain(self, r):
        # g(r)/r with g(r) = μ0 r + (κ/m_s) artanh(r/m_s); limit μ0 + κ/m_s² at 0
        s = r / self.m_s
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(s > 1e-4, np.arctanh(np.minimum(s, 1.0)) / np.where(s > 0, s, 1.0),
                         1 + s * s / 3)
        return self.mu0 + self.kappa / self.m_s ** 2 * q

    def grad_psi_hat(self, m):
        m = _v(m)
        r = _norm(m)
        if np.any(r >= self.m_s):
            raise DomainError("Langevin psi_hat is differentiable only on |m| < m_s")
        return self._radial_gain(r)[..., None] * m

    def _grad_psi_inverse(self, b):
        b = _v(b)
        beta = _norm(b)
        rho = self._rho(self._radial_solve(self.mu0, beta))
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(beta[..., None] > 0, b / beta[..., None], 0.0)
        return rho[..., None] * unit

    def phi(self, b):
        b = _v(b)
        beta = _norm(b)
        u = self._radial_solve(self.mu0, beta)
        rho = self._rho(u)
        s = rho / self.m_s
        psi = self._phi_hat_u(s, u) + 0.5 * self.mu0 * rho ** 2
        return -(beta * rho - psi)

    def grad_phi(self, b):
        return -self._grad_psi_inverse(b)

    def prox_psi_hat(self, step, v):
        v = _v(v)
        nv = _norm(v)
        u = self._radial_solve(self.mu0 + 1 / step, nv / step)
        rho = self._rho(u)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(nv[..., None] > 0, v / nv[..., None], 0.0)
        return rho[..., None] * unit

    def lipschitz_grad_phi(self):
        return 1 / (self.mu0 + self.kappa / self.m_s ** 2)

    def params(self):
        return {"kappa": self.kappa, "m_s": self.m_s}


class HardSaturation(_Saturating):
    """Nonconvex constraint ``|m| = m_s``; kept only to exhibit the failure of involution."""

    variant = "HardSaturation"
    phi_convexity = Convexity.CONCAVE
    psi_convexity = Convexity.UNKNOWN
    solver_admissible = False

    def __repr__(self):
        return f"HardSaturation(m_s={self.m_s!r}, mu0={self.mu0!r})"

    def _on_sphere(self, m):
        return np.abs(_norm(_v(m)) - self.m_s) <= DOMAIN_SLACK * self.m_s

    def phi(self, b):
        return -self.m_s * _norm(_v(b)) + 0.5 * self.mu0 * self.m_s ** 2

    def grad_phi(self, b):
        b = _v(b)
        r = _norm(b)
        if np.any(r == 0):
            raise NonDifferentiableError("HardSaturation phi is not differentiable at b=0; "
                                         "its superdifferential there is the ball of radius m_s")
        return -self.m_s * b / r[..., None]

    def psi_hat(self, m):
        return np.where(self._on_sphere(m), 0.5 * self.mu0 * self.m_s ** 2, np.inf)

    def phi_hat(self, m):
        return self.phi_hat_sat(m)

    def phi_hat_sat(self, m):
        """Indicator of the sphere ``|m| = m_s``."""
        return np.where(self._on_sphere(m), 0.0, np.inf)

    def phi_hat_c(self, m):
        """Indicator of the ball, the convex hull of :meth:`phi_hat_sat`."""
        return np.where(self._in_ball(m), 0.0, np.inf)

    def phi_hat_sat_prime(self, m):
        """Density recovered from ``phi`` by transforming back: ``μ0/2 (m_s² − |m|²)`` on the ball."""
        m = _v(m)
        return np.where(self._in_ball(m), 0.5 * self.mu0 * (self.m_s ** 2 - _sq(m)), np.inf)

    def grad_or_subdiff_psi_hat(self, m):
        raise NonConvexError("HardSaturation psi_hat is neither convex nor concave")

    def lipschitz_grad_phi(self):
        return math.inf

    def neg_phi_function(self) -> ScalarFunction3:
        # not differentiable at 0, so no gradient for the refinement step
        return ScalarFunction3(lambda b: -self.phi(b), convexity=Convexity.CONVEX,
                               radius_hint=self.search_radius)

    def _chart(self):
        ms = self.m_s

        def sphere(p):
            th, ph = p[:, 0], p[:, 1]
            return ms * np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)],
                                 axis=-1)

        return {"chart": sphere, "chart_box": ((0.0, math.pi), (-math.pi, math.pi))}

    def params(self):
        return {"m_s": self.m_s}


# Φ / Ψ̂ classification, also available per class as phi_convexity / psi_convexity
CLASSIFICATION = {
    cls.variant: {"phi": cls.phi_convexity, "psi_hat": cls.psi_convexity}
    for cls in (Paramagnet, Diamagnet, AnisotropicMixed, PermanentMagnet, SoftSaturation,
                Langevin, HardSaturation)
}

_VARIANTS = {cls.variant: cls for cls in (Paramagnet, Diamagnet, AnisotropicMixed,
                                          PermanentMagnet, SoftSaturation, Langevin,
                                          HardSaturation)}


def material_from_dict(d: dict, mu0: float) -> MaterialModel:
    """Build a model from ``{"variant": ..., "params": {...}}``."""
    try:
        cls = _VARIANTS[d["variant"]]
    except KeyError:
        raise ValueError(f"unknown material variant {d.get('variant')!r}; "
                         f"expected one of {sorted(_VARIANTS)}") from None
    return cls(**d.get("params", {}), mu0=mu0)


# functional aliases
def phi(model: MaterialModel, b):
    return model.phi(b)


def grad_phi(model: MaterialModel, b):
    return model.grad_phi(b)


def psi_hat(model: MaterialModel, m):
    return model.psi_hat(m)


def grad_or_subdiff_psi_hat(model: MaterialModel, m):
    return model.grad_or_subdiff_psi_hat(m)


def prox_psi_hat(model: MaterialModel, step: float, v):
    return model.prox_psi_hat(step, v)


def phi_hat(model: MaterialModel, m):
    return model.phi_hat(m)
