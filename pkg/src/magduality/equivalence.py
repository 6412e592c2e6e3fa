"""Transfer maps between the two formulations and certification of critical states.

A critical state is a triplet ``(m, h_s, b)`` with

* ``curl h_s = 0`` and ``div b = 0`` (Maxwell constraints),
* ``b = b_a + μ0 (χ m + h_s)`` (induction relation),
* ``m = -∇Φ(b)`` in the body (constitutive duality).

At such a state the induction energy and the magnetization energy coincide.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .grid import (
    GridSpec,
    Region,
    ScalarField,
    SpecMismatchError,
    VectorField,
    curl_residual,
    divergence_residual,
    l2_norm,
    load_field_csv,
    load_scalar_csv,
    save_field_csv,
    save_scalar_csv,
)
from .helmholtz import project_array, recover_potential, stray_field
from .materials import MaterialModel, material_from_dict

__all__ = [
    "MagneticState",
    "Tolerances",
    "EquivalenceVerdict",
    "RoundtripReport",
    "mh_to_b",
    "b_to_mh",
    "state_from_b",
    "state_from_mh",
    "alternative_stray_field",
    "certify",
    "roundtrip_check",
    "save_state",
    "load_state",
]


@dataclass(frozen=True, eq=False)
class MagneticState:
    """Magnetization, stray field, induction and the mean-zero potential ``φ`` with ``∇φ = -h_s``."""

    m: VectorField
    h_s: VectorField
    b: VectorField
    phi: ScalarField

    def __post_init__(self):
        spec = self.m.spec
        for f in (self.h_s, self.b, self.phi):
            if f.spec != spec:
                raise SpecMismatchError("state fields live on different grids")

    @property
    def spec(self) -> GridSpec:
        return self.m.spec


def _potential(h_s: VectorField) -> ScalarField:
    # h_s built by projection is curl-free to roundoff; externally supplied
    # fields are only used as diagnostics here, hence the loose tolerance
    return recover_potential(h_s, tolerance=1e-6)


def mh_to_b(m: VectorField, h_s: VectorField, b_a: VectorField, body: Optional[Region] = None,
            mu0: Optional[float] = None) -> VectorField:
    """``b = b_a + μ0 (χ m + h_s)``; ``χ m`` is ``m`` itself when no body is given."""
    mu0 = m.spec.mu0 if mu0 is None else mu0
    chi_m = m if body is None else m.masked(body)
    return b_a + mu0 * (chi_m + h_s)


def _body_vectors(u: VectorField, body: Region) -> np.ndarray:
    return u.vectors[body.mask]


def _scatter(spec: GridSpec, body: Region, vecs: np.ndarray) -> VectorField:
    out = np.zeros(spec.shape + (3,))
    out[body.mask] = vecs
    return VectorField.from_vectors(spec, out)


def b_to_mh(b: VectorField, b_a: VectorField, model: MaterialModel, body: Region):
    """``m = -∇Φ(b)`` in the body (zero outside) and ``h_s = -P[χ m]``.

    Raises
    ------
    NonDifferentiableError
        If ``Φ`` has no gradient at some body node; the message names the node.
    """
    vecs = _body_vectors(b, body)
    local = model.restrict(body)
    try:
        mv = -local.grad_phi(vecs)
    except ValueError as exc:
        idx = np.argwhere(body.mask)
        bad = idx[np.argmin(np.linalg.norm(vecs, axis=-1))] if len(idx) else None
        raise type(exc)(f"{exc} (first offending node index {None if bad is None else tuple(bad)})"
                        ) from exc
    if not np.all(np.isfinite(mv)):
        i = int(np.flatnonzero(~np.all(np.isfinite(mv), axis=-1))[0])
        node = tuple(np.argwhere(body.mask)[i])
        raise ValueError(f"constitutive map is set-valued at node {node}")
    m = _scatter(b.spec, body, mv)
    return m, stray_field(m, body)


def state_from_b(b: VectorField, b_a: VectorField, model: MaterialModel, body: Region) -> MagneticState:
    m, h_s = b_to_mh(b, b_a, model, body)
    return MagneticState(m, h_s, b, _potential(h_s))


def state_from_mh(m: VectorField, b_a: VectorField, body: Region) -> MagneticState:
    h_s = stray_field(m, body)
    b = mh_to_b(m, h_s, b_a, body)
    return MagneticState(m.masked(body), h_s, b, _potential(h_s))


def alternative_stray_field(b: VectorField, b_a: VectorField, m: VectorField, body: Region) -> VectorField:
    """Diagnostic ``h_s = (b - b_a)/μ0 - χ m``; curl-free only at critical states."""
    return (1 / b.spec.mu0) * (b - b_a) - m.masked(body)


# -- energies ---------------------------------------------------------------------

def energy_b(b: VectorField, b_a: VectorField, model: MaterialModel, body: Region) -> float:
    """``∫_body Φ(b) + (1/2μ0) ∫ |b - b_a|²``."""
    spec = b.spec
    dv = spec.cell_volume
    dens = float(np.sum(model.restrict(body).phi(_body_vectors(b, body)))) * dv if not body.is_empty else 0.0
    d = b.data - b_a.data
    return dens + float(np.sum(d * d)) * dv / (2 * spec.mu0)


def energy_mh(m: VectorField, h_s: VectorField, b_a: VectorField, model: MaterialModel,
              body: Region) -> float:
    """``∫_body Φ̂(m) + (μ0/2) ∫ |h_s|² - ∫_body m·b_a``."""
    spec = m.spec
    dv = spec.cell_volume
    if body.is_empty:
        dens = 0.0
    else:
        with np.errstate(invalid="ignore"):
            dens = float(np.sum(model.restrict(body).phi_hat(_body_vectors(m, body)))) * dv
    chi_m = m.data * body.mask
    return (dens + 0.5 * spec.mu0 * float(np.sum(h_s.data ** 2)) * dv
            - float(np.sum(chi_m * b_a.data)) * dv)


# -- certification ----------------------------------------------------------------

@dataclass(frozen=True)
class Tolerances:
    maxwell: float = 1e-9
    induction: float = 1e-9
    duality: float = 1e-8
    fenchel: float = 1e-7
    energy: float = 1e-8


@dataclass(frozen=True)
class EquivalenceVerdict:
    is_critical_state: bool
    curl_h: float
    div_b: float
    induction_gap: float
    duality_residual: float
    fenchel_residual_field: float
    energy_b: float
    energy_mh: float
    energy_gap: float
    energy_gap_ok: bool
    fenchel_ok: bool

    @property
    def maxwell_residuals(self) -> tuple[float, float, float]:
        return (self.curl_h, self.div_b, self.induction_gap)

    def to_dict(self) -> dict:
        return {
            "is_critical_state": self.is_critical_state,
            "residuals": {
                "curl_h": self.curl_h,
                "div_b": self.div_b,
                "induction_gap": self.induction_gap,
                "duality": self.duality_residual,
                "fenchel": self.fenchel_residual_field,
            },
            "energies": {"b": self.energy_b, "mh": self.energy_mh, "gap": self.energy_gap},
            "checks": {"energy_gap_ok": self.energy_gap_ok, "fenchel_ok": self.fenchel_ok},
        }


def _max_norm(a: np.ndarray) -> float:
    return float(np.max(np.linalg.norm(a, axis=-1))) if a.size else 0.0


def duality_residual(state: MagneticState, model: MaterialModel, body: Region) -> float:
    """``max_body |m + ∇Φ(b)| / (1 + max |m|)`` (induction-side constitutive form)."""
    if body.is_empty:
        return _max_norm(state.m.vectors.reshape(-1, 3))
    mv = _body_vectors(state.m, body)
    gv = model.restrict(body).grad_phi(_body_vectors(state.b, body))
    outside = state.m.vectors[~body.mask]
    return max(_max_norm(mv + gv), _max_norm(outside)) / (1 + _max_norm(mv))


def fenchel_field(state: MagneticState, model: MaterialModel, body: Region) -> np.ndarray:
    """Per-node ``Ψ̂(m) + Ψ̂◇(b) - m·b`` over body nodes (``+inf`` off the domain)."""
    if body.is_empty:
        return np.zeros(0)
    local = model.restrict(body)
    mv = _body_vectors(state.m, body)
    bv = _body_vectors(state.b, body)
    with np.errstate(invalid="ignore"):
        return local.psi_hat(mv) + local.psi_hat_conjugate(bv) - np.sum(mv * bv, axis=-1)


def certify(state: MagneticState, model: MaterialModel, body: Region, b_a: VectorField,
            tolerances: Tolerances = Tolerances()) -> EquivalenceVerdict:
    """Evaluate every criticality residual and both energies; never raises on bad states."""
    spec = state.spec
    curl_h = curl_residual(state.h_s)
    div_b = divergence_residual(state.b)
    gap = state.b.data - b_a.data - spec.mu0 * (state.m.data * body.mask + state.h_s.data)
    induction = _max_norm(np.moveaxis(gap, 0, -1).reshape(-1, 3)) / (1 + state.b.max_abs())
    try:
        duality = duality_residual(state, model, body)
    except ValueError:
        duality = float("inf")
    ff = fenchel_field(state, model, body)
    fenchel = float(np.max(np.abs(ff))) if ff.size else 0.0
    if np.isnan(fenchel):
        fenchel = float("inf")
    e_b = energy_b(state.b, b_a, model, body)
    e_mh = energy_mh(state.m, state.h_s, b_a, model, body)
    e_gap = abs(e_b - e_mh) if np.isfinite(e_b) and np.isfinite(e_mh) else float("inf")
    critical = (curl_h <= tolerances.maxwell and div_b <= tolerances.maxwell
                and induction <= tolerances.induction and duality <= tolerances.duality)
    return EquivalenceVerdict(
        is_critical_state=bool(critical),
        curl_h=curl_h,
        div_b=div_b,
        induction_gap=induction,
        duality_residual=duality,
        fenchel_residual_field=fenchel,
        energy_b=e_b,
        energy_mh=e_mh,
        energy_gap=e_gap,
        energy_gap_ok=bool(e_gap <= tolerances.energy * (1 + abs(e_b))),
        fenchel_ok=bool(fenchel <= tolerances.fenchel),
    )


# -- round trip -------------------------------------------------------------------

@dataclass
class RoundtripReport:
    variant: str
    b_status: str
    mh_status: str
    b_verdict: Optional[EquivalenceVerdict] = None
    mh_verdict: Optional[EquivalenceVerdict] = None
    field_deviation: float = float("nan")
    energy_gap_b: float = float("nan")
    energy_gap_mh: float = float("nan")
    minmin_gap: float = float("nan")
    transferred_residual_mh: float = float("nan")
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["b_verdict"] = None if self.b_verdict is None else self.b_verdict.to_dict()
        d["mh_verdict"] = None if self.mh_verdict is None else self.mh_verdict.to_dict()
        return d


def _rel(u: VectorField, v: VectorField) -> float:
    return l2_norm(u.data - v.data, u.spec) / (1 + u.norm())


def roundtrip_check(model: MaterialModel, body: Region, b_a: VectorField, config=None,
                    tolerances: Tolerances = Tolerances()) -> RoundtripReport:
    """Solve in each admissible formulation, transfer, certify and transfer back.

    ``field_deviation`` is the largest relative L2 distance among: ``b`` versus
    ``b`` after the round trip through ``(m, h_s)``, the same for ``m`` when
    the magnetization solve ran, and the induction fields of both solves.
    ``minmin_gap`` compares the two minimal energies when both solves converged.
    """
    from .solvers import SolverConfig, residuals, solve_b, solve_mh

    config = SolverConfig() if config is None else config
    rep = RoundtripReport(model.variant, b_status="not_run", mh_status="not_run")
    devs = []

    rb = solve_b(model, body, b_a, config)
    rep.b_status = rb.status
    b_ok = rb.status == "converged"
    if b_ok:
        st = rb.state
        rep.b_verdict = certify(st, model, body, b_a, tolerances)
        rep.energy_gap_b = rep.b_verdict.energy_gap
        b_back = mh_to_b(st.m, st.h_s, b_a, body)
        devs.append(_rel(st.b, b_back))
        rep.transferred_residual_mh = residuals(st, model, body, b_a)[1]
    else:
        rep.notes.append(f"solve_b: {rb.message}")

    rm = solve_mh(model, body, b_a, config)
    rep.mh_status = rm.status
    if rm.status == "converged":
        st = rm.state
        rep.mh_verdict = certify(st, model, body, b_a, tolerances)
        rep.energy_gap_mh = rep.mh_verdict.energy_gap
        m_back, _ = b_to_mh(st.b, b_a, model, body)
        devs.append(_rel(st.m, m_back))
        if b_ok:
            devs.append(_rel(rb.state.b, st.b))
            rep.minmin_gap = abs(rb.energy_b - rm.energy_mh) / (1 + abs(rb.energy_b))
    else:
        rep.notes.append(f"solve_mh: {rm.message}")
    if devs:
        rep.field_deviation = max(devs)
    return rep


# -- state directories ---------------------------------------------------------------

_STATE_FILES = ("m", "h_s", "b", "b_a")


def save_state(directory, state: MagneticState, model: MaterialModel, body: Region,
               b_a: VectorField) -> None:
    """Write ``grid.json``, ``material.json``, ``body.csv`` and one CSV per field."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "grid.json").write_text(state.spec.to_json())
    (d / "material.json").write_text(json.dumps(model.to_dict()))
    save_scalar_csv(ScalarField(state.spec, body.mask.astype(float)), d / "body.csv")
    for name, f in (("m", state.m), ("h_s", state.h_s), ("b", state.b), ("b_a", b_a)):
        save_field_csv(f, d / f"{name}.csv")
    save_scalar_csv(state.phi, d / "phi.csv")


def load_state(directory):
    """Inverse of :func:`save_state`; returns ``(state, model, body, b_a)``."""
    d = Path(directory)
    spec = GridSpec.from_json((d / "grid.json").read_text())
    model = material_from_dict(json.loads((d / "material.json").read_text()), spec.mu0)
    mask = load_scalar_csv(d / "body.csv", spec).data > 0.5
    body = Region(spec, mask, allow_empty=True)
    fields = {n: load_field_csv(d / f"{n}.csv", spec) for n in _STATE_FILES}
    phi_path = d / "phi.csv"
    phi = load_scalar_csv(phi_path, spec) if phi_path.exists() else _potential(fields["h_s"])
    state = MagneticState(fields["m"], fields["h_s"], fields["b"], phi)
    return state, model, body, fields["b_a"]


def transfer_consistency(state: MagneticState, body: Region, b_a: VectorField) -> tuple[float, float]:
    """Relative errors of ``P[χm] = -h_s`` and ``(I-P)[χm] = (b - b_a)/μ0``."""
    spec = state.spec
    chi_m = state.m.data * body.mask
    p = project_array(chi_m, spec)
    ref = 1 + l2_norm(chi_m, spec)
    e1 = l2_norm(p + state.h_s.data, spec) / ref
    e2 = l2_norm(chi_m - p - (state.b.data - b_a.data) / spec.mu0, spec) / ref
    return e1, e2
