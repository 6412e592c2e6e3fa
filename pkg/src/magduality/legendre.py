"""Legendre–Fenchel transforms of functions on R^3.

Two transforms are provided:

* the smooth transform ``f◇(z*) = z*·(∇f)⁻¹(z*) − f((∇f)⁻¹(z*))``, defined
  whenever the gradient is invertible (convex, concave or saddle);
* the convex/concave transform, ``f*`` for convex ``f`` and ``−(−f)*(−z*)``
  for concave ``f``, evaluated here by a brute-force scan followed by local
  refinement (:func:`numeric_conjugate`).

The brute-force route is deliberately simple; it is the independent oracle
against which the closed-form conjugates of :mod:`magduality.materials` are
checked.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize

__all__ = [
    "Convexity",
    "ScalarFunction3",
    "RadiusTooSmallError",
    "ExtendedRealError",
    "ext_add",
    "smooth_conjugate",
    "numeric_conjugate",
    "numeric_gradient_inverse",
    "diamond_transform",
    "fenchel_residual",
    "double_transform",
    "involution_check",
]

Array = np.ndarray


class Convexity(str, enum.Enum):
    CONVEX = "convex"
    CONCAVE = "concave"
    SADDLE = "saddle"
    UNKNOWN = "unknown"

    def flipped(self) -> "Convexity":
        if self is Convexity.CONVEX:
            return Convexity.CONCAVE
        if self is Convexity.CONCAVE:
            return Convexity.CONVEX
        return self


class RadiusTooSmallError(ValueError):
    """The best scan sample of a conjugate lies on the search boundary.

    Either the radius is too small or the supremum is ``+inf``.
    """


class ExtendedRealError(ArithmeticError):
    """Undefined extended-real arithmetic (``inf - inf``) or an unexpected infinity."""


def ext_add(*terms: float) -> float:
    """Sum extended reals: ``inf + finite = inf``; ``inf - inf`` raises."""
    has_pos = any(t == math.inf for t in terms)
    has_neg = any(t == -math.inf for t in terms)
    if has_pos and has_neg:
        raise ExtendedRealError("inf - inf is undefined")
    if has_pos:
        return math.inf
    if has_neg:
        return -math.inf
    return float(math.fsum(terms))


def _as_points(z) -> Array:
    return np.asarray(z, dtype=float)


def _default_radius(z_star: Array) -> float:
    return max(4.0, 4.0 * float(np.linalg.norm(z_star)))


@dataclass(frozen=True)
class ScalarFunction3:
    """Extended-real function on R^3 with optional calculus data.

    All callables are vectorized over a trailing axis of length 3.

    Attributes
    ----------
    evaluator
        ``z -> f(z)``; may return ``+inf`` off the effective domain.
    gradient, gradient_inverse
        ``∇f`` and ``(∇f)⁻¹`` where available.
    convexity
        Tag used to route transforms.
    conjugate
        Closed-form transform ``f◇`` if known.
    chart, chart_box
        Parametrisation of an effective domain of lower dimension (a point,
        a sphere), which a volumetric scan would miss. ``chart`` maps
        parameters of shape ``(n, d)`` to points ``(n, 3)``; ``chart_box``
        holds the ``d`` parameter intervals (empty for a single point).
    radius_hint
        ``z* -> R`` used as the default search radius of conjugate scans.
    """

    evaluator: Callable[[Array], Array]
    gradient: Optional[Callable[[Array], Array]] = None
    gradient_inverse: Optional[Callable[[Array], Array]] = None
    convexity: Convexity = Convexity.UNKNOWN
    conjugate: Optional[Callable[[Array], Array]] = None
    chart: Optional[Callable[[Array], Array]] = None
    chart_box: tuple = ()
    radius_hint: Optional[Callable[[Array], float]] = None

    def __call__(self, z) -> Array:
        return self.evaluator(_as_points(z))

    def negated(self) -> "ScalarFunction3":
        """``-f`` with all derived data transformed consistently.

        For both the smooth and the convex/concave transform,
        ``(-f)◇(w) = -f◇(-w)``.
        """
        f = self
        return replace(
            self,
            evaluator=lambda z: -f.evaluator(z),
            gradient=None if f.gradient is None else (lambda z: -f.gradient(z)),
            gradient_inverse=None if f.gradient_inverse is None
            else (lambda w: f.gradient_inverse(-_as_points(w))),
            convexity=f.convexity.flipped(),
            conjugate=None if f.conjugate is None else (lambda w: -f.conjugate(-_as_points(w))),
        )

    def check_inverse(self, probes, tol: float = 1e-9) -> float:
        """Max deviation of ``∇f((∇f)⁻¹(w))`` from ``w`` over probes."""
        if self.gradient is None or self.gradient_inverse is None:
            raise ValueError("gradient and gradient_inverse are both required")
        w = np.atleast_2d(_as_points(probes))
        err = float(np.max(np.abs(self.gradient(self.gradient_inverse(w)) - w)))
        if err > tol:
            raise ValueError(f"gradient inverse check failed: deviation {err:.3e} > {tol:.1e}")
        return err


def smooth_conjugate(f: ScalarFunction3, z_star) -> Array:
    """``z*·(∇f)⁻¹(z*) − f((∇f)⁻¹(z*))``."""
    if f.gradient_inverse is None:
        raise ValueError("smooth_conjugate needs a gradient inverse")
    w = _as_points(z_star)
    z = f.gradient_inverse(w)
    return np.sum(w * z, axis=-1) - f.evaluator(z)


def numeric_gradient_inverse(gradient: Callable[[Array], Array], w, x0=None,
                             tol: float = 1e-13) -> Array:
    """Solve ``∇f(z) = w`` for a single point by Newton-type root finding."""
    w = _as_points(w)
    x0 = np.zeros(3) if x0 is None else np.asarray(x0, dtype=float)
    sol = optimize.root(lambda z: gradient(z) - w, x0, method="hybr", tol=tol)
    if not sol.success:
        raise RuntimeError(f"gradient inversion failed at {w}: {sol.message}")
    return sol.x


def _scan_box(f: ScalarFunction3, z_star: Array, radius: float, samples: int):
    t = np.linspace(-radius, radius, samples)
    pts = np.stack(np.meshgrid(t, t, t, indexing="ij"), axis=-1).reshape(-1, 3)
    with np.errstate(invalid="ignore", over="ignore"):
        vals = pts @ z_star - f.evaluator(pts)
    vals = np.where(np.isnan(vals), -np.inf, vals)
    on_edge = np.any(np.abs(pts) >= radius * (1 - 1e-12), axis=1)
    return pts, vals, on_edge, t[1] - t[0]


def _pull_back(gain, anchor: Array, cand: Array, vals: Array, steps: int = 40):
    """Move infeasible candidates onto the domain boundary along the segment
    from a feasible ``anchor`` (bisection; exact for convex domains)."""
    bad = ~np.isfinite(vals)
    if anchor is None or not bad.any():
        return cand, vals
    c = cand[bad]
    d = c - anchor
    lo = np.zeros(len(c))
    hi = np.ones(len(c))
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        ok = np.isfinite(gain(anchor + mid[:, None] * d))
        lo = np.where(ok, mid, lo)
        hi = np.where(ok, hi, mid)
    cand = cand.copy()
    vals = vals.copy()
    cand[bad] = anchor + lo[:, None] * d
    vals[bad] = gain(cand[bad])
    return cand, vals


def _zoom(gain, x0: Array, h: float, anchor: Array | None = None, tol: float = 1e-11,
          half: int = 2, max_levels: int = 400):
    """Iterated local scans on a ``(2·half+1)^d`` stencil around the incumbent.

    The spacing is halved whenever the incumbent stays strictly inside the
    stencil, so the search can also travel. No derivatives are needed, which
    suits maxima on the boundary of an indicator's domain.
    """
    x = np.array(x0, dtype=float)
    d = x.size
    best = float(gain(x[None, :])[0])
    offs = np.arange(-half, half + 1, dtype=float)
    stencil = np.stack(np.meshgrid(*([offs] * d), indexing="ij"), axis=-1).reshape(-1, d)
    for _ in range(max_levels):
        if h <= tol:
            break
        cand = x + h * stencil
        cand, vals = _pull_back(gain, anchor, cand, gain(cand))
        i = int(np.argmax(vals))
        moved_to_edge = False
        if vals[i] > best:
            moved_to_edge = bool(np.max(np.abs(stencil[i])) == half)
            x, best = cand[i], float(vals[i])
        if not moved_to_edge:
            h *= 0.5
    return x, best


def _refine(gain, x0: Array, h: float, jac=None, anchor: Array | None = None):
    """Maximize ``gain`` locally: zoom scan, then a quasi-Newton polish when a
    gradient is available. The best point seen is kept."""
    x, best = _zoom(gain, x0, h, anchor)
    if jac is not None and np.isfinite(best):
        with warnings.catch_warnings(), np.errstate(all="ignore"):
            warnings.simplefilter("ignore")
            try:
                res = optimize.minimize(lambda z: -float(gain(z[None, :])[0]), x,
                                        jac=lambda z: -jac(z), method="BFGS",
                                        options={"gtol": 1e-12, "maxiter": 200})
                if np.isfinite(res.fun) and -res.fun > best:
                    x, best = res.x, float(-res.fun)
            except (ValueError, FloatingPointError, np.linalg.LinAlgError):
                pass
    return x, best


def numeric_conjugate(f: ScalarFunction3, z_star, search_radius: float | None = None,
                      samples: int = 33) -> float:
    """Brute-force ``sup_z (z*·z − f(z))``.

    A regular scan of ``samples**3`` points over the cube ``[-R, R]^3`` is
    followed by local refinement from the best sample: iterated local scans
    with halving spacing (robust for maxima on the boundary of an indicator's
    domain), then a quasi-Newton polish when a gradient is available.
    Functions with a ``chart`` are scanned over the chart parameters instead.

    Raises
    ------
    RadiusTooSmallError
        If the best sample is on the boundary of the cube and strictly beats
        every interior sample, or refinement leaves the cube.
    """
    z_star = _as_points(z_star).reshape(3)
    if f.chart is not None:
        return _chart_conjugate(f, z_star, samples)
    if search_radius is None:
        search_radius = (f.radius_hint or _default_radius)(z_star)
    pts, vals, on_edge, spacing = _scan_box(f, z_star, search_radius, samples)
    vmax = float(np.max(vals))
    if vmax == -np.inf:
        raise ValueError("effective domain missed by the scan; supply a chart")
    interior = vals[~on_edge]
    interior_max = float(np.max(interior)) if interior.size else -np.inf
    if vmax > interior_max + 1e-12 * (1 + abs(vmax)):
        raise RadiusTooSmallError(
            f"supremum not attained inside radius {search_radius:g} at z*={z_star}")
    idx = int(np.flatnonzero(~on_edge)[np.argmax(interior)])

    def gain(z):
        with np.errstate(invalid="ignore", over="ignore"):
            v = z @ z_star - f.evaluator(z)
        return np.where(np.isnan(v), -np.inf, v)

    jac = None
    if f.gradient is not None:
        jac = lambda z: z_star - f.gradient(z[None, :])[0]  # noqa: E731
    # feasible centroid: an interior point of a convex effective domain
    anchor = np.mean(pts[np.isfinite(vals)], axis=0)
    x, v = _refine(gain, pts[idx], spacing, jac, anchor)
    if np.max(np.abs(x)) > search_radius * (1 + 1e-9):
        raise RadiusTooSmallError(
            f"refinement left the search cube of radius {search_radius:g} at z*={z_star}")
    return v


def _chart_conjugate(f: ScalarFunction3, z_star: Array, samples: int) -> float:
    dim = len(f.chart_box)
    if dim == 0:
        p = f.chart(np.zeros((1, 0)))
        return float(p[0] @ z_star - f.evaluator(p)[0])
    n = max(samples, 4 * samples // dim)
    axes = [np.linspace(lo, hi, n) for lo, hi in f.chart_box]
    params = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    pts = f.chart(params)
    vals = pts @ z_star - f.evaluator(pts)
    i = int(np.argmax(vals))

    def gain(p):
        q = f.chart(p)
        return q @ z_star - f.evaluator(q)

    h = min(hi - lo for lo, hi in f.chart_box) / (n - 1)
    _, v = _refine(gain, params[i], h)
    return v


def diamond_transform(f: ScalarFunction3, z_star, search_radius: float | None = None,
                      closed_form: bool = False) -> float:
    """Convex/concave transform: ``f*`` if convex, ``−(−f)*(−z*)`` if concave."""
    if f.convexity not in (Convexity.CONVEX, Convexity.CONCAVE):
        raise ValueError(f"diamond_transform needs a convex or concave function, got "
                         f"{f.convexity.value}; use smooth_conjugate instead")
    z_star = _as_points(z_star)
    if closed_form and f.conjugate is not None:
        return float(f.conjugate(z_star))
    if f.convexity is Convexity.CONVEX:
        return numeric_conjugate(f, z_star, search_radius)
    return -numeric_conjugate(f.negated(), -z_star, search_radius)


def _transform(f: ScalarFunction3, z_star, closed_form: bool = True) -> float:
    if closed_form and f.conjugate is not None:
        return float(f.conjugate(_as_points(z_star)))
    if f.convexity in (Convexity.CONVEX, Convexity.CONCAVE):
        return diamond_transform(f, z_star)
    return float(smooth_conjugate(f, z_star))


def fenchel_residual(psi: ScalarFunction3, m, b, closed_form: bool = True) -> float:
    """``Ψ(m) + Ψ◇(b) − m·b``; zero iff ``b`` is dual to ``m``.

    Raises
    ------
    ExtendedRealError
        If either value is infinite.
    """
    m = _as_points(m)
    b = _as_points(b)
    a = float(psi(m))
    c = _transform(psi, b, closed_form)
    if not (math.isfinite(a) and math.isfinite(c)):
        raise ExtendedRealError(f"infinite value in Fenchel residual: Ψ(m)={a}, Ψ◇(b)={c}")
    return ext_add(a, c, -float(m @ b))


def double_transform(f: ScalarFunction3, z, search_radius: float | None = None) -> float:
    """``(f◇)◇(z)``.

    Convex functions and functions of unknown type are transformed with the
    sup-conjugate twice (the formal route, defined for any proper function);
    concave ones through ``−((−f)**)``; saddles through the smooth transform.
    The inner transform uses ``f.conjugate`` or the smooth formula, the outer
    one is computed numerically. An unbounded outer supremum yields ``+inf``.
    """
    z = _as_points(z).reshape(3)
    if f.convexity is Convexity.CONCAVE:
        return -double_transform(f.negated(), z, search_radius)
    if f.convexity is Convexity.SADDLE:
        if f.gradient is None:
            raise ValueError("saddle functions need a gradient for the smooth transform")
        w = f.gradient(z)
        return float(z @ w - smooth_conjugate(f, w))
    if f.conjugate is not None:
        inner = f.conjugate
    elif f.gradient_inverse is not None:
        inner = lambda w: smooth_conjugate(f, w)  # noqa: E731
    else:
        raise ValueError("double_transform needs a closed-form conjugate or a gradient inverse")
    g = ScalarFunction3(
        inner,
        gradient=f.gradient_inverse,
        convexity=Convexity.CONVEX,
        radius_hint=f.radius_hint,
    )
    try:
        return numeric_conjugate(g, z, search_radius)
    except RadiusTooSmallError:
        return math.inf


def involution_check(f: ScalarFunction3, probes: Sequence, search_radius: float | None = None) -> float:
    """Max over probes of ``|(f◇)◇(z) − f(z)|``.

    Both values infinite counts as agreement; exactly one infinite gives ``inf``.
    """
    worst = 0.0
    for z in np.atleast_2d(_as_points(probes)):
        a = float(f(z))
        b = double_transform(f, z, search_radius)
        if math.isinf(a) or math.isinf(b):
            dev = 0.0 if a == b else math.inf
        else:
            dev = abs(a - b)
        worst = max(worst, dev)
    return worst
