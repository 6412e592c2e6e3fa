"""Critical points of the induction energy and of the magnetization energy.

``solve_b`` minimizes ``E(b) = ∫_body Φ(b) + (1/2μ0)∫|b - b_a|²`` over
divergence-free ``b`` by projected (accelerated) gradient descent. The
projection ``I - P`` onto divergence-free fields makes the Lagrange multiplier
``∇φ`` implicit.

``solve_mh`` eliminates the stray field through ``h_s = -P[χm]`` and
minimizes the reduced functional

    F(m) = ∫_body Ψ̂(m) - (μ0/2)‖(I - P)[χm]‖² - ∫_body m·b_a

by proximal gradient steps: the prox acts on ``Ψ̂``, the remaining part is
smooth with gradient ``-χ(μ0(m + h_s) + b_a)`` and Lipschitz constant ``μ0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .equivalence import (
    MagneticState,
    energy_b,
    energy_mh,
    state_from_b,
    state_from_mh,
)
from .grid import Region, SpecMismatchError, VectorField, divergence_residual, l2_norm
from .helmholtz import project_array, stray_field
from .materials import Diamagnet, MaterialModel

__all__ = [
    "SolverConfig",
    "SolveReport",
    "UnboundedWitness",
    "energy_b",
    "energy_mh",
    "solve_b",
    "solve_mh",
    "residuals",
    "residual_b",
    "residual_mh",
]

CONVERGED = "converged"
MAX_ITERS = "max_iters"
REFUSED = "refused_nonconvex"
UNBOUNDED = "unbounded_witness"


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 5000
    step: Union[float, str] = "auto"
    tol_residual: float = 1e-8
    acceleration: bool = True

    def __post_init__(self):
        if self.step != "auto" and not (isinstance(self.step, (int, float)) and self.step > 0):
            raise ValueError(f"step must be positive or 'auto', got {self.step!r}")
        if not self.tol_residual > 0:
            raise ValueError("tol_residual must be positive")
        if int(self.max_iters) < 1:
            raise ValueError("max_iters must be at least 1")

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        return cls(**d)

    def to_dict(self) -> dict:
        return {"max_iters": self.max_iters, "step": self.step,
                "tol_residual": self.tol_residual, "acceleration": self.acceleration}


@dataclass(frozen=True)
class UnboundedWitness:
    """Ray ``t ↦ t·direction`` (with ``h_s = -P[χ t d]``) along which the energy is unbounded below.

    ``energy(t) = t² quadratic - t linear`` with ``quadratic < 0``.
    """

    direction: VectorField
    quadratic: float
    linear: float

    def energy(self, t: float) -> float:
        return t * t * self.quadratic - t * self.linear


@dataclass(frozen=True)
class SolveReport:
    state: Optional[MagneticState]
    energy_b: float
    energy_mh: float
    residual_b: float
    residual_mh: float
    iterations: int
    status: str
    message: str = ""
    witness: Optional[UnboundedWitness] = field(default=None, repr=False)
    history: tuple = field(default=(), repr=False)

    def to_dict(self) -> dict:
        d = {
            "status": self.status,
            "iterations": self.iterations,
            "energy_b": self.energy_b,
            "energy_mh": self.energy_mh,
            "residual_b": self.residual_b,
            "residual_mh": self.residual_mh,
            "message": self.message,
        }
        if self.witness is not None:
            d["witness"] = {"quadratic": self.witness.quadratic, "linear": self.witness.linear,
                            "energy_t1": self.witness.energy(1.0),
                            "energy_t10": self.witness.energy(10.0)}
        return d


def _refused(message: str, status: str = REFUSED) -> SolveReport:
    nan = float("nan")
    return SolveReport(None, nan, nan, nan, nan, 0, status, message)


def _check_inputs(model: MaterialModel, body: Region, b_a: VectorField) -> None:
    if body.spec != b_a.spec:
        raise SpecMismatchError("body and applied field live on different grids")
    if abs(model.mu0 - b_a.spec.mu0) > 1e-15 * b_a.spec.mu0:
        raise ValueError(f"model mu0={model.mu0} differs from grid mu0={b_a.spec.mu0}")


def _to_nodes(a: np.ndarray) -> np.ndarray:
    return np.moveaxis(a, 0, -1)


def _from_body(vecs: np.ndarray, body: Region) -> np.ndarray:
    out = np.zeros(body.spec.shape + (3,))
    out[body.mask] = vecs
    return np.moveaxis(out, -1, 0)


# -- first-order maps ------------------------------------------------------------

def _b_gradient(b: np.ndarray, b_a: np.ndarray, local: MaterialModel, body: Region,
                mu0: float) -> np.ndarray:
    """``g = χ∇Φ(b) + (b - b_a)/μ0``."""
    g = (b - b_a) / mu0
    if not body.is_empty:
        g = g + _from_body(local.grad_phi(_to_nodes(b)[body.mask]), body)
    return g


def residual_b(b: VectorField, b_a: VectorField, model: MaterialModel, body: Region) -> float:
    """``‖(I - P) g‖ / (1 + ‖g‖)`` with ``g = χ∇Φ(b) + (b - b_a)/μ0``."""
    spec = b.spec
    g = _b_gradient(b.data, b_a.data, model.restrict(body), body, spec.mu0)
    r = g - project_array(g, spec)
    return l2_norm(r, spec) / (1 + l2_norm(g, spec))


def _smooth_grad_m(m: np.ndarray, h_s: np.ndarray, b_a: np.ndarray, body: Region,
                   mu0: float) -> np.ndarray:
    return -(mu0 * (m + h_s) + b_a) * body.mask


def _prox_body(local: MaterialModel, step: float, v: np.ndarray, body: Region) -> np.ndarray:
    return _from_body(local.prox_psi_hat(step, _to_nodes(v)[body.mask]), body)


def residual_mh(m: VectorField, h_s: VectorField, b_a: VectorField, model: MaterialModel,
                body: Region) -> float:
    """First-order residual of the magnetization problem.

    For convex ``Ψ̂`` the prox-gradient fixed-point residual
    ``‖m - prox(m - τ∇S)‖ / (τ(1 + ‖m‖))`` with ``τ = 1/μ0``; otherwise the
    gradient form ``‖∇Ψ̂(m) - μ0(m + h_s) - b_a‖_body / (1 + ‖m‖)``.
    """
    spec = m.spec
    mu0 = spec.mu0
    if body.is_empty:
        return 0.0
    local = model.restrict(body)
    chi_m = m.data * body.mask
    denom = 1 + l2_norm(chi_m, spec)
    if model.psi_is_convex:
        tau = 1 / mu0
        grad = _smooth_grad_m(chi_m, h_s.data, b_a.data, body, mu0)
        new = _prox_body(local, tau, chi_m - tau * grad, body)
        return l2_norm(chi_m - new, spec) / (tau * denom)
    gp = _from_body(local.grad_psi_hat(_to_nodes(chi_m)[body.mask]), body)
    r = (gp - mu0 * (chi_m + h_s.data) - b_a.data) * body.mask
    return l2_norm(r, spec) / denom


def residuals(state: MagneticState, model: MaterialModel, body: Region,
              b_a: VectorField) -> tuple[float, float]:
    """``(residual_b, residual_mh)`` of an arbitrary state, without iterating."""
    rb = residual_b(state.b, b_a, model, body)
    try:
        rm = residual_mh(state.m, state.h_s, b_a, model, body)
    except ValueError:
        rm = math.inf
    return rb, rm


# -- solvers -----------------------------------------------------------------------

def solve_b(model: MaterialModel, body: Region, b_a: VectorField,
            config: SolverConfig = SolverConfig(),
            initial: Optional[VectorField] = None) -> SolveReport:
    """Minimize the induction energy over divergence-free fields.

    Iterates ``b ← y - τ (I - P) g(y)`` from ``b = b_a`` (or ``initial``,
    which must be divergence-free) with FISTA momentum and gradient-based
    restart (plain projected gradient if acceleration is off). All iterates
    stay divergence-free up to roundoff.
    """
    _check_inputs(model, body, b_a)
    if initial is not None:
        if initial.spec != b_a.spec:
            raise SpecMismatchError("initial field lives on a different grid")
        if divergence_residual(initial) > 1e-10:
            raise ValueError("initial induction must be divergence-free")
    if not model.solver_admissible:
        return _refused(f"{model.variant}: the induction integrand is not convex; "
                        f"this material is outside the scope of both solvers")
    spec = b_a.spec
    mu0 = spec.mu0
    local = model.restrict(body)
    tau = (mu0 / (1 + mu0 * model.lipschitz_grad_phi()) if config.step == "auto"
           else float(config.step))
    ba = b_a.data

    def proj_grad(y):
        g = _b_gradient(y, ba, local, body, mu0)
        r = g - project_array(g, spec)
        return r, l2_norm(r, spec) / (1 + l2_norm(g, spec))

    x = ba.copy() if initial is None else initial.data.copy()
    y = x
    t = 1.0
    res = math.inf
    history = []
    status = MAX_ITERS
    it = 0
    for it in range(1, int(config.max_iters) + 1):
        r, res = proj_grad(y)
        if res <= config.tol_residual:
            x = y
            status = CONVERGED
            break
        x_new = y - tau * r
        if not np.all(np.isfinite(x_new)):
            break
        if config.acceleration:
            if np.sum(r * (x_new - x)) > 0:
                # momentum points uphill: restart
                t = 1.0
                y = x_new
            else:
                t_new = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
                y = x_new + ((t - 1) / t_new) * (x_new - x)
                t = t_new
        else:
            y = x_new
        x = x_new
        if not config.acceleration:
            history.append(energy_b(VectorField(spec, x), b_a, model, body))
    else:
        it = int(config.max_iters)
        x = y
        _, res = proj_grad(x)
        if res <= config.tol_residual:
            status = CONVERGED

    if not np.all(np.isfinite(x)):
        return _refused("iterates diverged", MAX_ITERS)
    b = VectorField(spec, x)
    state = state_from_b(b, b_a, model, body)
    rb, rm = residuals(state, model, body, b_a)
    return SolveReport(
        state=state,
        energy_b=energy_b(state.b, b_a, model, body),
        energy_mh=energy_mh(state.m, state.h_s, b_a, model, body),
        residual_b=rb,
        residual_mh=rm,
        iterations=it,
        status=status,
        message="" if status == CONVERGED else f"residual {res:.3e} after {it} iterations",
        history=tuple(history),
    )


def _reduced_objective(m: np.ndarray, b_a: np.ndarray, local: MaterialModel, body: Region,
                       spec) -> float:
    mu0 = spec.mu0
    dv = spec.cell_volume
    chi_m = m * body.mask
    psi = float(np.sum(local.psi_hat(_to_nodes(chi_m)[body.mask]))) * dv
    q = chi_m - project_array(chi_m, spec)
    return psi - 0.5 * mu0 * float(np.sum(q * q)) * dv - float(np.sum(chi_m * b_a)) * dv


def diamagnet_witness(model: MaterialModel, body: Region, b_a: VectorField) -> UnboundedWitness:
    """Ray along ``χ b_a`` (or ``χ e_x`` if that vanishes) on which ``Ê → -∞``."""
    spec = b_a.spec
    d = b_a.data * body.mask
    if not np.any(d):
        d = np.zeros((3,) + spec.shape)
        d[0] = body.mask
    direction = VectorField(spec, d)
    h = stray_field(direction, body)
    zero = VectorField.zeros(spec)
    # Ê(t d, t h) = t² Ê_quadratic - t ⟨χd, b_a⟩
    quad = energy_mh(direction, h, zero, model, body)
    lin = float(np.sum(d * b_a.data)) * spec.cell_volume
    return UnboundedWitness(direction, quad, lin)


def solve_mh(model: MaterialModel, body: Region, b_a: VectorField,
             config: SolverConfig = SolverConfig(),
             initial: Optional[VectorField] = None) -> SolveReport:
    """Proximal-gradient minimization of the magnetization energy with ``h_s`` eliminated.

    Diamagnets return ``unbounded_witness`` with a descent ray; saddle or
    nonconvex augmented densities return ``refused_nonconvex`` (solve the
    induction problem and transfer instead). Iterations start from ``m = 0``
    or from ``initial`` restricted to the body.
    """
    _check_inputs(model, body, b_a)
    spec = b_a.spec
    mu0 = spec.mu0
    if isinstance(model, Diamagnet) and not body.is_empty:
        w = diamagnet_witness(model, body, b_a)
        st = state_from_mh(w.direction, b_a, body)
        return SolveReport(
            state=st,
            energy_b=energy_b(st.b, b_a, model, body),
            energy_mh=w.energy(1.0),
            residual_b=float("nan"),
            residual_mh=float("nan"),
            iterations=0,
            status=UNBOUNDED,
            message=(f"magnetization energy is concave and unbounded below: "
                     f"E(t) = {w.quadratic:.6g} t^2 - {w.linear:.6g} t along the returned ray"),
            witness=w,
        )
    if not model.psi_is_convex:
        return _refused(f"{model.variant}: psi_hat is {model.psi_convexity.value}; "
                        f"use solve_b and transfer with b_to_mh")
    local = model.restrict(body)
    tau = 1 / mu0 if config.step == "auto" else float(config.step)
    ba = b_a.data

    def step(y):
        h = -project_array(y, spec)
        grad = _smooth_grad_m(y, h, ba, body, mu0)
        new = _prox_body(local, tau, y - tau * grad, body)
        return new, l2_norm(y - new, spec) / (tau * (1 + l2_norm(y, spec)))

    if initial is None:
        x = np.zeros((3,) + spec.shape)
    else:
        if initial.spec != spec:
            raise SpecMismatchError("initial field lives on a different grid")
        x = initial.data * body.mask
    y = x
    t = 1.0
    res = math.inf
    history = []
    status = MAX_ITERS
    it = 0
    for it in range(1, int(config.max_iters) + 1):
        x_new, res = step(y)
        if res <= config.tol_residual:
            x = y
            status = CONVERGED
            break
        if not np.all(np.isfinite(x_new)):
            break
        if config.acceleration:
            if np.sum((y - x_new) * (x_new - x)) > 0:
                t = 1.0
                y = x_new
            else:
                t_new = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
                y = x_new + ((t - 1) / t_new) * (x_new - x)
                t = t_new
                # keep the extrapolated point feasible for indicator-type densities
                if not np.isfinite(_reduced_objective(y, ba, local, body, spec)):
                    t = 1.0
                    y = x_new
        else:
            y = x_new
        x = x_new
        if not config.acceleration:
            history.append(_reduced_objective(x, ba, local, body, spec))
    else:
        it = int(config.max_iters)
        x = y
        _, res = step(x)
        if res <= config.tol_residual:
            status = CONVERGED

    if not np.all(np.isfinite(x)):
        return _refused("iterates diverged", MAX_ITERS)
    m = VectorField(spec, x)
    state = state_from_mh(m, b_a, body)
    rb, rm = residuals(state, model, body, b_a)
    return SolveReport(
        state=state,
        energy_b=energy_b(state.b, b_a, model, body),
        energy_mh=energy_mh(state.m, state.h_s, b_a, model, body),
        residual_b=rb,
        residual_mh=rm,
        iterations=it,
        status=status,
        message="" if status == CONVERGED else f"residual {res:.3e} after {it} iterations",
        history=tuple(history),
    )
