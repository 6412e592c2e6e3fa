"""Scenario-driven command line interface.

Usage::

    magduality run <scenario.json> [--out DIR] [--strict]
    magduality conjugate-table <scenario.json> [--out DIR]
    magduality verify <state-dir>

Scenario format (JSON)::

    {
      "grid": {"edge_length": 1.0, "resolution": 16, "mu0": 1.0},
      "material": {"variant": "Paramagnet", "params": {"mu": 2.0}},
      "body": {"kind": "full"},
      "applied_field": {"kind": "uniform", "value": [1, 0, 0]},
      "solver": {"max_iters": 5000, "step": "auto", "tol_residual": 1e-10, "acceleration": true},
      "pipeline": ["solve-b", "solve-mh", "transfer", "certify"],
      "outputs": ["report", "fields"],
      "seed": 7
    }

Material parameters per variant: ``Paramagnet``/``Diamagnet`` ``{mu}``;
``AnisotropicMixed`` ``{mu_p, mu_d, frame?}``; ``PermanentMagnet`` ``{m0}``;
``SoftSaturation``/``HardSaturation`` ``{m_s}``; ``Langevin`` ``{kappa, m_s}``.

Bodies: ``full``, ``empty``, ``box`` (``center``, ``half_extents``), ``ball``
(``center``, ``radius``), ``centered_cube`` (``fraction`` of the edge).
Applied fields: ``uniform`` (``value``) or ``file`` (``path`` relative to the
scenario, ``format`` ``csv`` or ``binary``); file fields must be
divergence-free to ``1e-8`` relative.

Pipeline steps: ``solve-b``, ``solve-mh``, ``transfer``, ``certify``,
``roundtrip``, ``perturb`` (needs ``seed``) and ``conjugate-table``.

Outputs: ``"report"`` (``report.json``), ``"fields"`` (one state directory
per solve) and conjugate tables::

    {"kind": "conjugate_table", "function": "psi_hat", "range": [-2, 2],
     "samples": 41, "direction": [1, 0, 0], "name": "psi"}

Table functions, written as CSV ``zx,zy,zz,f,f_diamond``:

* ``psi_hat``: ``f = Ψ̂(z)``, ``f_diamond`` its closed-form transform (``-Φ``);
* ``neg_phi``: ``f = -Φ(z)``, ``f_diamond = (-Φ)◇(z)`` by brute force;
* ``phi_hat_from_phi``: ``f = Φ̂(z)`` as shipped, ``f_diamond = (-Φ)◇(z) - μ0/2|z|²``,
  the density recovered from ``Φ``; both agree exactly for convex ``Ψ̂``.

Exit codes: 0 success; 1 a requested certification failed; 2 invalid
scenario; 3 a solver refused and ``--strict`` was given.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import re
import sys
from dataclasses import replace
from pathlib import Path

import jsonschema
import numpy as np

from .equivalence import (
    Tolerances,
    b_to_mh,
    certify,
    load_state,
    mh_to_b,
    roundtrip_check,
    save_state,
    state_from_b,
    state_from_mh,
    transfer_consistency,
)
from .grid import (
    GridSpec,
    Region,
    VectorField,
    divergence_residual,
    l2_norm,
    load_field_binary,
    load_field_csv,
)
from .helmholtz import project_array
from .legendre import (
    Convexity,
    RadiusTooSmallError,
    diamond_transform,
    numeric_gradient_inverse,
    smooth_conjugate,
)
from .materials import MaterialModel, material_from_dict
from .solvers import SolverConfig, residuals, solve_b, solve_mh

__all__ = ["main", "SCENARIO_SCHEMA", "ScenarioError", "load_scenario", "dumps"]

EXIT_OK, EXIT_CERT, EXIT_SCHEMA, EXIT_STRICT = 0, 1, 2, 3

_vec3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_pos = {"type": "number", "exclusiveMinimum": 0}


def _params(required: list, props: dict) -> dict:
    return {"type": "object", "required": required, "properties": props,
            "additionalProperties": False}


_MATERIAL_PARAMS = {
    "Paramagnet": _params(["mu"], {"mu": _pos}),
    "Diamagnet": _params(["mu"], {"mu": _pos}),
    "AnisotropicMixed": _params(["mu_p", "mu_d"], {
        "mu_p": _pos, "mu_d": _pos,
        "frame": {"type": "array", "items": _vec3, "minItems": 3, "maxItems": 3}}),
    "PermanentMagnet": _params(["m0"], {"m0": _vec3}),
    "SoftSaturation": _params(["m_s"], {"m_s": _pos}),
    "Langevin": _params(["kappa", "m_s"], {"kappa": _pos, "m_s": _pos}),
    "HardSaturation": _params(["m_s"], {"m_s": _pos}),
}

SCENARIO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["grid", "material", "body", "applied_field"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "grid": {
            "type": "object",
            "required": ["edge_length", "resolution", "mu0"],
            "additionalProperties": False,
            "properties": {
                "edge_length": _pos,
                "resolution": {"type": "integer", "minimum": 4, "multipleOf": 2},
                "mu0": _pos,
            },
        },
        "material": {
            "type": "object",
            "required": ["variant", "params"],
            "additionalProperties": False,
            "properties": {"variant": {"enum": sorted(_MATERIAL_PARAMS)}, "params": {"type": "object"}},
            "allOf": [
                {"if": {"properties": {"variant": {"const": v}}},
                 "then": {"properties": {"params": s}}}
                for v, s in _MATERIAL_PARAMS.items()
            ],
        },
        "body": {
            "type": "object",
            "required": ["kind"],
            "properties": {"kind": {"enum": ["full", "empty", "box", "ball", "centered_cube"]}},
            "allOf": [
                {"if": {"properties": {"kind": {"const": "box"}}},
                 "then": {"required": ["center", "half_extents"],
                          "properties": {"center": _vec3, "half_extents": _vec3}}},
                {"if": {"properties": {"kind": {"const": "ball"}}},
                 "then": {"required": ["center", "radius"],
                          "properties": {"center": _vec3, "radius": _pos}}},
                {"if": {"properties": {"kind": {"const": "centered_cube"}}},
                 "then": {"properties": {"fraction": {"type": "number", "exclusiveMinimum": 0,
                                                      "maximum": 1}}}},
            ],
        },
        "applied_field": {
            "type": "object",
            "required": ["kind"],
            "properties": {"kind": {"enum": ["uniform", "file"]}},
            "allOf": [
                {"if": {"properties": {"kind": {"const": "uniform"}}},
                 "then": {"required": ["value"], "properties": {"value": _vec3}}},
                {"if": {"properties": {"kind": {"const": "file"}}},
                 "then": {"required": ["path"],
                          "properties": {"path": {"type": "string"},
                                         "format": {"enum": ["csv", "binary"]}}}},
            ],
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "max_iters": {"type": "integer", "minimum": 1},
                "step": {"oneOf": [_pos, {"const": "auto"}]},
                "tol_residual": _pos,
                "acceleration": {"type": "boolean"},
            },
        },
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: _pos for k in ("maxwell", "induction", "duality", "fenchel", "energy")},
        },
        "pipeline": {
            "type": "array",
            "items": {"enum": ["solve-b", "solve-mh", "transfer", "certify", "roundtrip",
                               "perturb", "conjugate-table"]},
        },
        "outputs": {
            "type": "array",
            "items": {
                "oneOf": [
                    {"enum": ["report", "fields"]},
                    {
                        "type": "object",
                        "required": ["kind", "function", "range", "samples"],
                        "additionalProperties": False,
                        "properties": {
                            "kind": {"const": "conjugate_table"},
                            "function": {"enum": ["psi_hat", "neg_phi", "phi_hat_from_phi"]},
                            "range": {"type": "array", "items": {"type": "number"},
                                      "minItems": 2, "maxItems": 2},
                            "samples": {"type": "integer", "minimum": 2, "maximum": 10000},
                            "direction": _vec3,
                            "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
                        },
                    },
                ]
            },
        },
        "seed": {"type": "integer", "minimum": 0},
    },
    "if": {"properties": {"pipeline": {"contains": {"const": "perturb"}}},
           "required": ["pipeline"]},
    "then": {"required": ["seed"]},
}


class ScenarioError(ValueError):
    """Invalid scenario; the message lists one diagnostic per line."""


# -- JSON output -------------------------------------------------------------------

def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return format(x, ".17g")


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """Deterministic JSON: sorted keys, 17 significant digits, non-finite floats as strings."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}"
                 for k, v in sorted(obj.items())]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if obj is None:
        return "null"
    if isinstance(obj, Convexity):
        return json.dumps(obj.value)
    return json.dumps(str(obj))


# -- scenario loading ----------------------------------------------------------------

def _line_of(text: str, path) -> int | None:
    """Best-effort line of the innermost named key of a schema error path."""
    keys = [p for p in path if isinstance(p, str)]
    pos = 0
    line = None
    for k in keys:
        m = re.compile(r'"%s"\s*:' % re.escape(k)).search(text, pos)
        if not m:
            break
        pos = m.start()
        line = text.count("\n", 0, pos) + 1
    return line


def _format_error(text: str, err: jsonschema.ValidationError) -> str:
    where = ".".join(str(p) for p in err.absolute_path) or "<root>"
    line = _line_of(text, err.absolute_path)
    loc = f"line {line}: " if line else ""
    return f"{loc}{where}: {err.message}"


class Scenario:
    """Validated scenario with constructed grid, material, body and applied field."""

    def __init__(self, data: dict, base_dir: Path):
        self.data = data
        self.name = data.get("name", "scenario")
        g = data["grid"]
        self.spec = GridSpec(g["edge_length"], g["resolution"], g["mu0"])
        try:
            self.model = material_from_dict(data["material"], self.spec.mu0)
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"material.params: {exc}") from None
        self.body = self._body(data["body"])
        self.b_a = self._applied(data["applied_field"], base_dir)
        self.config = SolverConfig.from_dict(data.get("solver", {}))
        self.tolerances = Tolerances(**data.get("tolerances", {}))
        self.pipeline = list(data.get("pipeline", ["solve-b", "transfer", "certify"]))
        self.outputs = list(data.get("outputs", ["report"]))
        self.seed = data.get("seed")

    def _body(self, d: dict) -> Region:
        spec = self.spec
        kind = d["kind"]
        try:
            if kind == "full":
                return Region.full(spec)
            if kind == "empty":
                return Region.empty(spec)
            if kind == "box":
                return Region.box(spec, d["center"], d["half_extents"])
            if kind == "ball":
                return Region.ball(spec, d["center"], d["radius"])
            return Region.centered_cube(spec, d.get("fraction", 0.5))
        except ValueError as exc:
            raise ScenarioError(f"body: {exc}") from None

    def _applied(self, d: dict, base_dir: Path) -> VectorField:
        spec = self.spec
        if d["kind"] == "uniform":
            return VectorField.uniform(spec, d["value"])
        path = base_dir / d["path"]
        try:
            if d.get("format", "csv") == "binary":
                field = load_field_binary(path, spec)
            else:
                field = load_field_csv(path, spec)
        except (OSError, ValueError) as exc:
            raise ScenarioError(f"applied_field.path: cannot load {path}: {exc}") from None
        res = divergence_residual(field)
        if res > 1e-8:
            raise ScenarioError(f"applied_field: field is not divergence-free "
                                f"(relative residual {res:.3e} > 1e-8)")
        return field


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"line {exc.lineno}, column {exc.colno}: invalid JSON: {exc.msg}") from None
    validator = jsonschema.Draft202012Validator(SCENARIO_SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: [str(p) for p in e.absolute_path])
    if errors:
        raise ScenarioError("\n".join(_format_error(text, e) for e in errors))
    return Scenario(data, path.parent)


# -- conjugate tables ----------------------------------------------------------------

def _neg_phi_diamond(model: MaterialModel, z: np.ndarray) -> float:
    f = model.neg_phi_function()
    try:
        if f.convexity is Convexity.SADDLE:
            # smooth transform with a numerically inverted gradient
            g = f.gradient
            h = replace(f, gradient_inverse=lambda w: numeric_gradient_inverse(g, w))
            return float(smooth_conjugate(h, z))
        return float(diamond_transform(f, z))
    except RadiusTooSmallError:
        return math.inf


def conjugate_table(model: MaterialModel, function: str, lo: float, hi: float, samples: int,
                    direction=(1.0, 0.0, 0.0)) -> list[tuple]:
    """Rows ``(zx, zy, zz, f, f_diamond)`` along ``t·direction``, ``t ∈ [lo, hi]``."""
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    rows = []
    for t in np.linspace(lo, hi, samples):
        z = t * d + 0.0
        if function == "psi_hat":
            f = float(model.psi_hat(z))
            fd = float(model.psi_hat_conjugate(z))
        elif function == "neg_phi":
            f = float(-model.phi(z))
            fd = _neg_phi_diamond(model, z)
        elif function == "phi_hat_from_phi":
            f = float(model.phi_hat(z))
            fd = _neg_phi_diamond(model, z) - 0.5 * model.mu0 * float(z @ z)
        else:
            raise ValueError(f"unknown table function {function!r}")
        rows.append((z[0], z[1], z[2], f, fd))
    return rows


def table_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["zx", "zy", "zz", "f", "f_diamond"])
    for r in rows:
        w.writerow([format(float(x), ".17g") for x in r])
    return buf.getvalue()


def _table_outputs(sc: Scenario) -> list[dict]:
    tabs = [o for o in sc.outputs if isinstance(o, dict)]
    if not tabs:
        tabs = [{"kind": "conjugate_table", "function": "psi_hat", "range": [-2.0, 2.0],
                 "samples": 41}]
    return tabs


def _write_tables(sc: Scenario, out: Path | None) -> dict:
    written = {}
    for i, spec in enumerate(_table_outputs(sc)):
        name = spec.get("name", f"conjugate_{spec['function']}_{i}")
        rows = conjugate_table(sc.model, spec["function"], spec["range"][0], spec["range"][1],
                               spec["samples"], spec.get("direction", (1.0, 0.0, 0.0)))
        text = table_csv(rows)
        if out is None:
            sys.stdout.write(text)
        else:
            (out / f"{name}.csv").write_text(text)
        written[name] = {"function": spec["function"], "rows": len(rows)}
    return written


# -- run -----------------------------------------------------------------------------

def _div_free_noise(spec: GridSpec, rng: np.random.Generator) -> np.ndarray:
    n = rng.standard_normal((3,) + spec.shape)
    n = n - project_array(n, spec)
    n -= n.mean(axis=(1, 2, 3), keepdims=True)
    return n / np.sqrt(np.mean(np.sum(n * n, axis=0)))


def _perturb(sc: Scenario, base_state) -> dict:
    rng = np.random.default_rng(sc.seed)
    spec = sc.spec
    out = {"seed": sc.seed, "amplitude": 0.1}
    # induction side: divergence-free noise on b, constitutive transfer
    b_pert = VectorField(spec, base_state.b.data + 0.1 * _div_free_noise(spec, rng))
    try:
        st_b = state_from_b(b_pert, sc.b_a, sc.model, sc.body)
        rb, _ = residuals(st_b, sc.model, sc.body, sc.b_a)
        out["b_side"] = {"residual_b": rb,
                         "verdict": certify(st_b, sc.model, sc.body, sc.b_a, sc.tolerances).to_dict()}
    except ValueError as exc:
        out["b_side"] = {"error": str(exc)}
    # magnetization side: noise on m, Maxwell-consistent h_s and b
    noise = rng.standard_normal((3,) + spec.shape)
    m_pert = VectorField(spec, (base_state.m.data + 0.1 * noise) * sc.body.mask)
    st_m = state_from_mh(m_pert, sc.b_a, sc.body)
    out["mh_side"] = {"verdict": certify(st_m, sc.model, sc.body, sc.b_a, sc.tolerances).to_dict()}
    return out


def run_scenario(sc: Scenario, out: Path, strict: bool = False) -> tuple[int, dict]:
    """Execute the pipeline; returns ``(exit_code, report)`` and writes artifacts into ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    report = {
        "scenario": sc.name,
        "grid": sc.spec.to_dict(),
        "material": {"variant": sc.model.variant,
                     "classification": {"phi": sc.model.phi_convexity.value,
                                        "psi_hat": sc.model.psi_convexity.value}},
        "pipeline": sc.pipeline,
        "steps": {},
    }
    steps = report["steps"]
    solves = {}
    refusals = []
    cert_ok = True
    for step in sc.pipeline:
        if step == "solve-b":
            r = solve_b(sc.model, sc.body, sc.b_a, sc.config)
            solves["b"] = r
            steps["solve_b"] = r.to_dict()
        elif step == "solve-mh":
            r = solve_mh(sc.model, sc.body, sc.b_a, sc.config)
            solves["mh"] = r
            steps["solve_mh"] = r.to_dict()
        elif step == "transfer":
            tr = {}
            for key, r in solves.items():
                if r.state is None or r.status != "converged":
                    continue
                st = r.state
                e1, e2 = transfer_consistency(st, sc.body, sc.b_a)
                if key == "b":
                    back = mh_to_b(st.m, st.h_s, sc.b_a, sc.body)
                    dev = l2_norm(st.b.data - back.data, sc.spec) / (1 + st.b.norm())
                else:
                    m_back, _ = b_to_mh(st.b, sc.b_a, sc.model, sc.body)
                    dev = l2_norm(st.m.data - m_back.data, sc.spec) / (1 + st.m.norm())
                tr[key] = {"roundtrip_deviation": dev, "projection_consistency": e1,
                           "complement_consistency": e2}
            steps["transfer"] = tr
        elif step == "certify":
            cv = {}
            for key, r in solves.items():
                if r.state is None or r.status != "converged":
                    continue
                v = certify(r.state, sc.model, sc.body, sc.b_a, sc.tolerances)
                cv[key] = v.to_dict()
                cert_ok &= v.is_critical_state and v.energy_gap_ok
            steps["certify"] = cv
        elif step == "roundtrip":
            rr = roundtrip_check(sc.model, sc.body, sc.b_a, sc.config, sc.tolerances)
            steps["roundtrip"] = rr.to_dict()
            for v in (rr.b_verdict, rr.mh_verdict):
                if v is not None:
                    cert_ok &= v.is_critical_state and v.energy_gap_ok
            for st in (rr.b_status, rr.mh_status):
                if st in ("refused_nonconvex", "unbounded_witness"):
                    refusals.append(st)
        elif step == "perturb":
            base = solves.get("b")
            if base is None or base.state is None:
                base = solve_b(sc.model, sc.body, sc.b_a, sc.config)
            if base.state is None:
                steps["perturb"] = {"error": base.message}
            else:
                steps["perturb"] = _perturb(sc, base.state)
        elif step == "conjugate-table":
            steps["conjugate_table"] = _write_tables(sc, out)
    for key, r in solves.items():
        if r.status in ("refused_nonconvex", "unbounded_witness"):
            refusals.append(r.status)
        elif r.status != "converged":
            cert_ok = False
    if "fields" in sc.outputs:
        for key, r in solves.items():
            if r.state is not None:
                save_state(out / f"state_{key}", r.state, sc.model, sc.body, sc.b_a)
    code = EXIT_OK
    if not cert_ok:
        code = EXIT_CERT
    elif strict and refusals:
        code = EXIT_STRICT
    report["refusals"] = sorted(set(refusals))
    report["exit_code"] = code
    if "report" in sc.outputs:
        (out / "report.json").write_text(dumps(report) + "\n")
    return code, report


def _cmd_run(args) -> int:
    sc = load_scenario(args.scenario)
    out = Path(args.out) if args.out else Path(f"{Path(args.scenario).stem}_out")
    code, report = run_scenario(sc, out, args.strict)
    summary = {k: v.get("status") for k, v in report["steps"].items()
               if isinstance(v, dict) and "status" in v}
    print(f"{sc.name}: exit {code}; steps {summary}; output in {out}")
    return code


def _cmd_table(args) -> int:
    sc = load_scenario(args.scenario)
    out = None
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
    _write_tables(sc, out)
    return EXIT_OK


def _cmd_verify(args) -> int:
    try:
        state, model, body, b_a = load_state(args.state_dir)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: cannot load state from {args.state_dir}: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    verdict = certify(state, model, body, b_a)
    rb, rm = residuals(state, model, body, b_a)
    out = verdict.to_dict()
    out["residual_b"] = rb
    out["residual_mh"] = rm
    print(dumps(out))
    return EXIT_OK if verdict.is_critical_state and verdict.energy_gap_ok else EXIT_CERT


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="magduality",
                                description="Induction vs magnetization energies on a periodic box.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="execute a scenario pipeline")
    r.add_argument("scenario")
    r.add_argument("--out", help="output directory (default: <scenario>_out)")
    r.add_argument("--strict", action="store_true", help="treat solver refusals as failures")
    r.set_defaults(func=_cmd_run)
    t = sub.add_parser("conjugate-table", help="write conjugate tables as CSV")
    t.add_argument("scenario")
    t.add_argument("--out", help="directory for the CSV files (default: stdout)")
    t.set_defaults(func=_cmd_table)
    v = sub.add_parser("verify", help="certify a saved state directory")
    v.add_argument("state_dir")
    v.set_defaults(func=_cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: invalid scenario {getattr(args, 'scenario', '')}:\n{exc}", file=sys.stderr)
        return EXIT_SCHEMA


if __name__ == "__main__":
    sys.exit(main())
