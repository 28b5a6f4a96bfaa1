"""Command-line front end.

Every subcommand reads an optional JSON ``--config`` whose keys mirror the
command-line flags (flags win), validates it against a schema that rejects
unknown keys, runs the library operation and writes its artifact to
``--out`` (standard output when omitted).  Exit status: 0 when every check
passes, 1 on a failed check, 2 on a bad configuration, 3 on an I/O failure.
"""

from __future__ import annotations

import argparse
import json
import math
import re
import sys
from typing import Sequence

import jsonschema
import numpy as np

from . import acceptance
from . import holonomy as Hm
from . import kepler as K
from . import quantize as Q
from ._backend import kernels
from .core import PhaseChart, integrate_hamilton, parse_observable, poisson_bracket
from .core import expr as ex
from .core.integrate import fmt
from .errors import ActionAngleError, ChartBoundaryError, ConfigError

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3


# ---------------------------------------------------------------------------
# JSON output
# ---------------------------------------------------------------------------

def _scalar(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt(v) if math.isfinite(v) else "null"
    if isinstance(v, str):
        return json.dumps(v, ensure_ascii=False)
    if hasattr(v, "value") and not isinstance(v, (list, tuple, dict)):  # enums
        return _scalar(v.value)
    raise TypeError(f"cannot serialize {type(v).__name__}")


def _encode(obj, indent: int, level: int) -> str:
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        items = [(str(k), v) for k, v in obj.items()]
        items.sort()
        if not items:
            return "{}"
        pad, inner = " " * (indent * level), " " * (indent * (level + 1))
        body = [f"{inner}{json.dumps(k)}: {_encode(v, indent, level + 1)}" for k, v in items]
        return "{\n" + ",\n".join(body) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_scalar(v) for v in obj) + "]"
        pad, inner = " " * (indent * level), " " * (indent * (level + 1))
        return ("[\n" + ",\n".join(inner + _encode(v, indent, level + 1) for v in obj)
                + "\n" + pad + "]")
    return _scalar(obj)


def dumps(obj, indent: int = 2) -> str:
    """JSON with sorted keys, floats at 17 significant digits and NaN/inf as null."""
    return _encode(obj, indent, 0) + "\n"


# ---------------------------------------------------------------------------
# schemas
# ---------------------------------------------------------------------------

_NUM = {"type": "number"}
_INT = {"type": "integer"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_STR = {"type": "string"}
_VEC = {"type": "array", "items": _NUM}
_STRS = {"type": "array", "items": _STR, "minItems": 1}


def _obj(props: dict, required: Sequence[str] = ()) -> dict:
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


_PATH = {"oneOf": [
    _obj({"T": _POS, "components": _STRS, "derivatives": _STRS}, ["T", "components"]),
    _obj({"pieces": {"type": "array", "minItems": 1, "items": _obj(
        {"t0": _NUM, "t1": _NUM, "components": _STRS, "derivatives": _STRS},
        ["t0", "t1", "components"])}}, ["pieces"]),
]}
_CONNECTION = _obj({
    "m": {"type": "integer", "minimum": 1},
    "d": {"type": "integer", "minimum": 1},
    "coeffs": {"type": "array", "minItems": 1, "items": _STRS},
}, ["coeffs"])
_MODES = {"type": "array", "items": _obj(
    {"n": _VEC, "re": _NUM, "im": _NUM}, ["n"])}

SCHEMAS = {
    "bracket": _obj({"f": _STR, "g": _STR, "dof": {"type": "integer", "minimum": 1},
                     "points": {"oneOf": [_INT, {"type": "array", "items": _VEC}]},
                     "seed": _INT, "h": _POS, "tol": _POS}),
    "kepler-verify": _obj({"points": {"type": "integer", "minimum": 1}, "seed": _INT,
                           "tol": _POS}),
    "kepler-orbit": _obj({
        "point": {**_VEC, "minItems": 4, "maxItems": 4},
        "elements": _obj({"a": _POS, "e": {"type": "number", "minimum": 0},
                          "omega": _NUM, "prograde": {"type": "boolean"}}, ["a", "e"]),
        "T": _POS, "step": _POS, "method": {"enum": ["rk4", "implicit_midpoint"]},
        "stride": {"type": "integer", "minimum": 1}, "tol": _POS}),
    "kepler-chart": _obj({"points": {"oneOf": [_INT, {"type": "array", "items": {
        **_VEC, "minItems": 4, "maxItems": 4}}]}, "seed": _INT, "tol": _POS}),
    "quantize-spectrum": _obj({
        "H": _STR, "m": {"type": "integer", "minimum": 1}, "lambda": _VEC,
        "box": {"type": "array", "items": {**_VEC, "minItems": 2, "maxItems": 2},
                "minItems": 1}}),
    "quantize-dirac": _obj({"pairs": {"type": "integer", "minimum": 1},
                            "m": {"type": "integer", "minimum": 1},
                            "band": {"type": "integer", "minimum": 0},
                            "radius": {"type": "integer", "minimum": 0},
                            "seed": _INT, "tol": _POS}),
    "holonomy-classical": _obj({
        "connection": _CONNECTION, "path": _PATH,
        "initial": _obj({"I": _VEC, "phi": _VEC}, ["I", "phi"]),
        "lambda": _VEC, "step": _POS,
        "columns": {"type": "object", "additionalProperties": _STR},
        "conserved": {"type": "array", "items": _STR},
        "tol": _POS}, ["connection", "path", "initial", "step"]),
    "holonomy-quantum": _obj({
        "connection": _CONNECTION, "path": _PATH,
        "initial": _obj({"grid_N": {"type": "integer", "minimum": 1}, "psi0_modes": _MODES},
                        ["grid_N", "psi0_modes"]),
        "lambda": _VEC, "step": _POS, "check_grid": {"type": "boolean"}, "tol": _POS},
        ["connection", "path", "initial", "step"]),
    "report-all": _obj({"seed": _INT, "only": {"type": "array", "items": {
        "type": "integer", "minimum": 1, "maximum": len(acceptance.CRITERIA)}}}),
}

DEFAULTS = {
    "bracket": {"points": 10, "seed": 0, "h": 1e-6, "tol": 1e-6},
    "kepler-verify": {"points": 100, "seed": 0, "tol": 1e-12},
    "kepler-orbit": {"step": 1e-3, "method": "rk4", "stride": 1, "tol": 1e-6},
    "kepler-chart": {"points": 10, "seed": 0, "tol": 1e-12},
    "quantize-spectrum": {},
    "quantize-dirac": {"pairs": 50, "m": 2, "band": 5, "radius": 4, "seed": 0, "tol": 1e-13},
    "holonomy-classical": {"columns": {}, "conserved": [], "tol": 1e-9},
    "holonomy-quantum": {"check_grid": True, "tol": 1e-10},
    "report-all": {"seed": 0},
}


# ---------------------------------------------------------------------------
# small parsers for flag values
# ---------------------------------------------------------------------------

def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as err:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from err


def _boxes(text: str) -> list:
    """``lo:hi`` or ``lo:hi,lo:hi``."""
    out = []
    for part in text.split(","):
        lo, sep, hi = part.partition(":")
        if not sep:
            raise ConfigError(f"box {part!r} is not lo:hi")
        try:
            out.append([int(lo), int(hi)])
        except ValueError as err:
            raise ConfigError(f"box bounds must be integers, got {part!r}") from err
    return out


def _check(name: str, value: float, threshold: float) -> dict:
    value = float(value)
    return {"name": name, "value": value, "threshold": threshold,
            "pass": bool(value < threshold)}


def _report(command: str, config: dict, checks: list, **body) -> dict:
    return {"command": command, "config": config, "checks": checks,
            "pass": all(c["pass"] for c in checks), **body}


# ---------------------------------------------------------------------------
# commands; each returns (artifact text, report)
# ---------------------------------------------------------------------------

def cmd_bracket(cfg: dict):
    if "f" not in cfg or "g" not in cfg:
        raise ConfigError("bracket needs f and g")
    pts = cfg["points"]
    if isinstance(pts, list):
        if not pts:
            raise ConfigError("no points given")
        dof = cfg.get("dof", len(pts[0]) // 2)
    else:
        dof = cfg.get("dof")
        if dof is None:
            raise ConfigError("give dof or explicit points")
        pts = np.random.default_rng(cfg["seed"]).uniform(-1.0, 1.0, (pts, 2 * dof)).tolist()
    chart = PhaseChart.canonical(dof)
    f = parse_observable(cfg["f"], chart, "f")
    g = parse_observable(cfg["g"], chart, "g")
    rows, worst = [], 0.0
    for z in pts:
        if len(z) != 2 * dof:
            raise ConfigError(f"point {z} needs {2 * dof} coordinates")
        a = poisson_bracket(f, g, z)
        d = poisson_bracket(f, g, z, ("finite_diff", cfg["h"]))
        worst = max(worst, abs(a - d) / max(1.0, abs(a)))
        rows.append({"point": z, "analytic": a, "finite_diff": d})
    checks = [_check("analytic vs finite difference (scaled)", worst, cfg["tol"])]
    rep = _report("bracket", cfg, checks, bracket=f"{{{f.text()}, {g.text()}}}", results=rows)
    return dumps(rep), rep


def cmd_kepler_verify(cfg: dict):
    rng = np.random.default_rng(cfg["seed"])
    records = [K.verify_algebra(z) for z in K.sample_points(rng, cfg["points"])]
    checks = []
    for regime in (K.Regime.U_minus, K.Regime.U_plus):
        sub = [r for r in records if r["regime"] == regime.value]
        if sub:
            worst = max(K.max_residual(r) for r in sub)
            checks.append(_check(f"max scaled residual on {regime.value} ({len(sub)} points)",
                                 worst, cfg["tol"]))
    rep = _report("kepler-verify", cfg, checks, points=[K.algebra_report(r) for r in records])
    return dumps(rep), rep


def _wrap(d, period):
    return (d + 0.5 * period) % period - 0.5 * period


def cmd_kepler_orbit(cfg: dict):
    if ("point" in cfg) == ("elements" in cfg):
        raise ConfigError("give exactly one of point or elements")
    if "elements" in cfg:
        el = cfg["elements"]
        z0 = K.from_elements(el["a"], el["e"], el.get("omega", 0.0), el.get("prograde", True))
    else:
        z0 = np.array(cfg["point"], dtype=float)
    start = K.to_action_angle(z0)
    T = cfg.get("T", start.period)
    if not math.isfinite(T):
        raise ConfigError("unbound orbit: give T")
    cat = K.kepler_observables()
    traj = integrate_hamilton(cat.H, z0, (0.0, T), cfg["step"], cfg["method"])
    keep = slice(None, None, cfg["stride"])
    states, t = traj.states[keep], traj.times[keep]
    cols = K.chart_along(states)
    period = start.period
    angle_period = 2 * math.pi if start.regime is K.Regime.U_minus else math.inf

    def dev(x, x0, p):
        d = x - x0
        return np.max(np.abs(d if math.isinf(p) else _wrap(d, p)))

    checks = [
        _check("drift of I", dev(cols["I"], start.I, math.inf), cfg["tol"]),
        _check("drift of x1", dev(cols["x1"], start.x1, math.inf), cfg["tol"]),
        _check("drift of the angle", dev(cols["gamma"], start.angle, angle_period), cfg["tol"]),
        _check("time angle minus t", dev(cols["alpha"] - t, start.time_angle, period),
               cfg["tol"]),
    ]
    sub = type(traj)(traj.chart, t, states, traj.method, traj.step)
    text = sub.to_csv(extra_columns=cols)
    return text, _report("kepler-orbit", cfg, checks, regime=start.regime.value)


def cmd_kepler_chart(cfg: dict):
    pts = cfg["points"]
    explicit = isinstance(pts, list)
    if not explicit:
        rng = np.random.default_rng(cfg["seed"])
        pts = K.sample_points(rng, 4 * pts)
    charts, worst, want = [], 0.0, len(pts) if explicit else cfg["points"]
    for z in pts:
        try:
            st = K.to_action_angle(z)
            dar = K.verify_darboux_triplet(z, relative=True)
        except ChartBoundaryError:
            if explicit:
                raise
            continue
        sign = dar.pop("x1_lambda_sign", None)
        worst = max(worst, max(dar.values()))
        row = {"point": np.asarray(z, dtype=float).tolist(), "regime": st.regime.value,
               "I": st.I, "x1": st.x1, "angle": st.angle, "time_angle": st.time_angle,
               "a": st.a, "e": st.e, "darboux": dar}
        if sign is not None:
            row["x1_lambda_sign"] = sign
        charts.append(row)
        if len(charts) == want:
            break
    checks = [_check("Darboux triplet (scaled)", worst, cfg["tol"])]
    rep = _report("kepler-chart", cfg, checks, charts=charts)
    return dumps(rep), rep


def cmd_quantize_spectrum(cfg: dict):
    if "H" not in cfg or "box" not in cfg:
        raise ConfigError("quantize-spectrum needs H and box")
    lam = cfg.get("lambda", [0.0] * cfg.get("m", 1))
    m = cfg.get("m", len(lam))
    if len(lam) == 1 and m > 1:
        lam = lam * m
    H = Q.action_hamiltonian(cfg["H"], m)
    spec = Q.spectrum(H, lam, cfg["box"] if len(cfg["box"]) > 1 else cfg["box"][0])
    return Q.spectrum_csv(spec), _report("quantize-spectrum", cfg, [])


def cmd_quantize_dirac(cfg: dict):
    rng = np.random.default_rng(cfg["seed"])
    m, worst = cfg["m"], 0.0
    for _ in range(cfg["pairs"]):
        f = Q.random_affine(rng, m, cfg["band"])
        g = Q.random_affine(rng, m, cfg["band"])
        probe = Q.random_state(rng, m, cfg["radius"])
        worst = max(worst, Q.dirac_residual(f, g, probe))
    checks = [_check(f"Dirac residual over {cfg['pairs']} random affine pairs", worst, cfg["tol"])]
    rep = _report("quantize-dirac", cfg, checks)
    return dumps(rep), rep


def _holonomy_inputs(cfg: dict):
    c = cfg["connection"]
    conn = Hm.ConnectionField.parse(c["coeffs"], c.get("m"), c.get("d"))
    p = cfg["path"]
    if "pieces" in p:
        path = Hm.ParameterPath.from_pieces(p["pieces"])
    else:
        path = Hm.ParameterPath.from_exprs(p["T"], p["components"], p.get("derivatives"))
    if path.d != conn.d:
        raise ConfigError(f"path has {path.d} components, connection expects {conn.d}")
    return conn, path


def _columns(exprs: dict, traj: Hm.HolonomyTrajectory) -> dict:
    """Extra CSV columns from expressions in ``t``, ``I1..``, ``phi1..``."""
    m = traj.m
    symbols = ("t", *(f"I{k + 1}" for k in range(m)), *(f"phi{k + 1}" for k in range(m)))
    aliases = {"I": "I1", "phi": "phi1"} if m == 1 else {}
    names = list(exprs)
    parsed = [Hm._parse(exprs[n], symbols, aliases) for n in names]
    if not parsed:
        return {}
    vals = kernels.eval_tape_batch(ex.Tape(parsed, symbols),
                                   np.column_stack([traj.t, traj.I, traj.phi]))
    vals = np.asarray(vals).reshape(len(traj.t), len(names))
    return {n: vals[:, j] for j, n in enumerate(names)}


def cmd_holonomy_classical(cfg: dict):
    conn, path = _holonomy_inputs(cfg)
    ini = cfg["initial"]
    if len(ini["I"]) != conn.m or len(ini["phi"]) != conn.m:
        raise ConfigError(f"initial I and phi need {conn.m} entries")
    traj = Hm.classical_holonomy(conn, path, Hm.HolonomyState(ini["I"], ini["phi"]), cfg["step"])
    cols = _columns(cfg["columns"], traj)
    checks = []
    for name in cfg["conserved"]:
        if name not in cols:
            raise ConfigError(f"conserved column {name!r} is not defined")
        checks.append(_check(f"spread of {name}", np.ptp(cols[name]), cfg["tol"]))
    return traj.to_csv(extra_columns=cols), _report("holonomy-classical", cfg, checks)


def cmd_holonomy_quantum(cfg: dict):
    conn, path = _holonomy_inputs(cfg)
    ini = cfg["initial"]
    lam = cfg.get("lambda", [0.0] * conn.m)
    psi0 = Q.TorusState.from_json_obj({"m": conn.m, "lambda": lam, "modes": ini["psi0_modes"]})
    N = ini["grid_N"]
    out = Hm.quantum_holonomy(conn, path, psi0, lam, N, cfg["step"], cfg["check_grid"])
    n0 = Hm.grid_norm(Hm.grid_values(psi0, N))
    checks = [_check("grid norm change (relative)", abs(out.norm() - n0) / max(n0, 1e-300),
                     cfg["tol"])]
    doc = out.state().to_json_obj(half_labels=True)
    return dumps(doc), _report("holonomy-quantum", cfg, checks, norm=out.norm())


def cmd_report_all(cfg: dict):
    results = acceptance.run_all(cfg["seed"], cfg.get("only"))
    for r in results:
        print(r.line(), flush=True)
    checks = [{"name": f"criterion {r.number}", "value": float(not r.passed),
               "threshold": 1.0, "pass": r.passed} for r in results]
    rep = _report("report-all", cfg, checks, criteria=[r.as_dict() for r in results])
    return dumps(rep), rep


COMMANDS = {
    "bracket": cmd_bracket,
    "kepler-verify": cmd_kepler_verify,
    "kepler-orbit": cmd_kepler_orbit,
    "kepler-chart": cmd_kepler_chart,
    "quantize-spectrum": cmd_quantize_spectrum,
    "quantize-dirac": cmd_quantize_dirac,
    "holonomy-classical": cmd_holonomy_classical,
    "holonomy-quantum": cmd_holonomy_quantum,
    "report-all": cmd_report_all,
}

# commands whose artifact is CSV or a state: the report goes to --report
_SIDE_REPORT = {"kepler-orbit", "quantize-spectrum", "holonomy-classical", "holonomy-quantum"}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="actionangle", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--out", help="artifact path (default: standard output)")
        p.add_argument("--tol", type=float, help="check threshold override")
        p.add_argument("--step", type=float, help="integration step override")
        p.add_argument("--seed", type=int, help="seed for random sampling")
        if name in _SIDE_REPORT:
            p.add_argument("--report", help="write the JSON check report here")
        return p

    p = add("bracket", "analytic and finite-difference Poisson brackets")
    p.add_argument("--f")
    p.add_argument("--g")
    p.add_argument("--dof", type=int)
    p.add_argument("--point", action="append", type=_floats, dest="point_list",
                   help="q1,..,qn,p1,..,pn (repeatable)")
    p.add_argument("--points", type=int, help="number of random points")

    p = add("kepler-verify", "Kepler bracket relations at random points")
    p.add_argument("--points", type=int)

    p = add("kepler-orbit", "integrate an orbit and append its chart coordinates")
    p.add_argument("--point", type=_floats, help="q1,q2,p1,p2")
    p.add_argument("--T", type=float)
    p.add_argument("--method", choices=["rk4", "implicit_midpoint"])

    p = add("kepler-chart", "action-angle coordinates and Darboux residuals")
    p.add_argument("--point", action="append", type=_floats, dest="point_list")
    p.add_argument("--points", type=int)

    p = add("quantize-spectrum", "energies H(n + lambda) on a mode box")
    p.add_argument("--H")
    p.add_argument("--m", type=int)
    p.add_argument("--lambda", dest="lam", type=_floats)
    p.add_argument("--box", type=_boxes, help="lo:hi or lo:hi,lo:hi")

    p = add("quantize-dirac", "commutator vs bracket on random affine pairs")
    p.add_argument("--pairs", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--band", type=int)

    add("holonomy-classical", "classical holonomy trajectory (CSV)")
    add("holonomy-quantum", "quantum holonomy of a torus state (JSON)")

    p = add("report-all", "run the acceptance suite")
    p.add_argument("--only", type=lambda s: [int(v) for v in s.split(",")])
    return ap


_FLAG_KEYS = {"tol": "tol", "step": "step", "seed": "seed", "f": "f", "g": "g", "dof": "dof",
              "points": "points", "point": "point", "T": "T", "method": "method",
              "H": "H", "m": "m", "lam": "lambda", "box": "box", "pairs": "pairs",
              "band": "band", "only": "only", "point_list": "points"}


def _config(args) -> dict:
    cfg = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
        try:
            cfg = json.loads(text)
        except json.JSONDecodeError as err:
            raise ConfigError(f"{args.config}: {err}") from err
    schema = SCHEMAS[args.command]
    jsonschema.validate(cfg, schema)
    for attr, key in _FLAG_KEYS.items():
        v = getattr(args, attr, None)
        if v is not None and key in schema["properties"]:
            cfg[key] = v
    jsonschema.validate(cfg, schema)
    return DEFAULTS[args.command] | cfg


def _write(path, text: str):
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


_NEGATIVE = re.compile(r"-[\d.]")


def _join_negative_values(argv: Sequence[str]) -> list:
    """``--box -2:2`` reads as ``--box=-2:2``; argparse would take ``-2:2`` for a flag."""
    out, it = [], iter(argv)
    for tok in it:
        if tok.startswith("--") and "=" not in tok:
            nxt = next(it, None)
            if nxt is not None and _NEGATIVE.match(nxt):
                out.append(f"{tok}={nxt}")
                continue
            out.append(tok)
            if nxt is not None:
                out.append(nxt)
            continue
        out.append(tok)
    return out


def run(argv: Sequence[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(_join_negative_values(argv))
    try:
        cfg = _config(args)
        artifact, report = COMMANDS[args.command](cfg)
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO
    except jsonschema.ValidationError as err:
        print(f"bad config: {err.message}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, ValueError) as err:
        print(f"bad config: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except ActionAngleError as err:
        print(f"failed: {err}", file=sys.stderr)
        return EXIT_CHECK
    try:
        if args.command == "report-all":
            if args.out:
                _write(args.out, artifact)
        else:
            _write(args.out, artifact)
        if getattr(args, "report", None):
            _write(args.report, dumps(report))
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO
    for c in report["checks"]:
        if not c["pass"]:
            print(f"check failed: {c['name']}: {c['value']:.3g} >= {c['threshold']:.3g}",
                  file=sys.stderr)
    return EXIT_OK if report["pass"] else EXIT_CHECK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
