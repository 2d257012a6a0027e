"""Command-line entry point: ``gasflow <subcommand> [options]``.

Configs are JSON files carrying ``"schema": 1``; reports are JSON with the
command, an echo of the inputs, the results, the tool version and the seed.
Exit codes: 0 pass/supported, 2 fail/falsified/obstructed, 1 usage or runtime
error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys

import jsonschema
import numpy as np

from gasflow import __version__, sampling
from gasflow import conjugacy, degree, homotopy, lyapunov, stability
from gasflow.expr import ExprError, parse_scalar, parse_vector
from gasflow.flow import DEFAULT_SPEC, FlowError

EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2

_NUM = {"type": "number"}
_POINT = {"type": "array", "items": _NUM, "minItems": 1}

INTEGRATOR_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "rel_tol": {"type": "number", "exclusiveMinimum": 0},
        "abs_tol": {"type": "number", "exclusiveMinimum": 0},
        "max_step": {"type": "number", "exclusiveMinimum": 0},
        "max_time": {"type": "number", "exclusiveMinimum": 0},
        "max_steps": {"type": "integer", "minimum": 1},
        "escape_norm": {"type": "number", "exclusiveMinimum": 0},
    },
}

SYSTEM_SCHEMA = {
    "type": "object",
    "required": ["schema", "dimension"],
    "additionalProperties": False,
    "properties": {
        "schema": {"const": 1},
        "name": {"type": "string"},
        "dimension": {"type": "integer", "minimum": 1},
        "field": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "potential": {"type": "string"},
        "lyapunov": {"type": "string"},
        "params": {"type": "object", "additionalProperties": _NUM},
        "equilibrium_guess": _POINT,
        "integrator": INTEGRATOR_SCHEMA,
    },
    "oneOf": [{"required": ["field"]}, {"required": ["potential"]}],
}

FAMILY_SCHEMA = {
    "type": "object",
    "required": ["schema", "dimension", "field", "parameter"],
    "additionalProperties": False,
    "properties": {
        "schema": {"const": 1},
        "name": {"type": "string"},
        "dimension": {"type": "integer", "minimum": 1},
        "field": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "parameter": {"type": "string"},
        "params": {"type": "object", "additionalProperties": _NUM},
        "probe": {"type": "array", "items": {"type": "string"}},
        "curve": {"type": "array", "items": {"type": "string"}},
        "t_range": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
        "integrator": INTEGRATOR_SCHEMA,
    },
}

REPORT_SCHEMA = {
    "type": "object",
    "required": ["command", "inputs", "results", "tool_version", "seed"],
    "additionalProperties": False,
    "properties": {
        "command": {"enum": ["check-gas", "lyapunov", "homotopy", "linearize", "morse",
                             "degree", "obstruct", "family-check"]},
        "inputs": {"type": "object"},
        "results": {"type": "object"},
        "tool_version": {"type": "string"},
        "seed": {"type": "integer"},
        "verdict": {"type": "string"},
    },
}


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------------ configs


def _pointer(path):
    return "/" + "/".join(str(p) for p in path)


def validate(doc, schema, label="config"):
    errors = sorted(jsonschema.Draft7Validator(schema).iter_errors(doc), key=lambda e: list(e.path))
    if errors:
        lines = [f"{label} {_pointer(e.path)}: {e.message}" for e in errors]
        raise ConfigError("; ".join(lines))


def load_json(path, schema, label):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {label} {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{label} {path} is not valid JSON: {exc}") from None
    validate(doc, schema, label)
    return doc


class System:
    """A parsed system config."""

    def __init__(self, doc):
        self.doc = doc
        n = doc["dimension"]
        self.dimension = n
        self.params = {k: float(v) for k, v in doc.get("params", {}).items()}
        names = tuple(sorted(self.params))
        self.field = self.potential = self.lyapunov = None
        try:
            if "field" in doc:
                if len(doc["field"]) != n:
                    raise ConfigError(f"config /field: {len(doc['field'])} components but "
                                      f"dimension {n}")
                self.field = parse_vector(doc["field"], n, names)
            else:
                self.potential = parse_scalar(doc["potential"], n, names)
            if "lyapunov" in doc:
                self.lyapunov = parse_scalar(doc["lyapunov"], n, names)
        except ExprError as exc:
            key = "field" if "field" in doc else "potential"
            comp = getattr(exc, "component", None)
            where = f"/{key}" + (f"/{comp}" if comp is not None else "")
            raise ConfigError(f"config {where}: {exc}") from None
        guess = doc.get("equilibrium_guess", [0.0] * n)
        if len(guess) != n:
            raise ConfigError(f"config /equilibrium_guess: length {len(guess)} != dimension {n}")
        self.guess = np.asarray(guess, dtype=float)
        self.spec = DEFAULT_SPEC.replace(**doc.get("integrator", {}))

    def need_field(self):
        if self.field is None:
            raise ConfigError("config /field: this command needs a vector field")
        return self.field

    def need_potential(self):
        if self.potential is None:
            raise ConfigError("config /potential: this command needs a potential")
        return self.potential

    def equilibrium(self):
        if self.field is not None:
            return lyapunov.find_equilibrium(self.field, self.guess, self.params)
        return homotopy.locate_center(self.potential, self.guess, self.params)

    def lyapunov_fn(self, horizon=20.0):
        x_eq = self.equilibrium()
        if self.lyapunov is not None:
            return lyapunov.ExplicitLyapunov(self.lyapunov, x_eq, self.params)
        return lyapunov.massera_lyapunov(self.need_field(), x_eq, horizon, self.spec, self.params)


class Family:
    def __init__(self, doc):
        self.doc = doc
        n = doc["dimension"]
        if len(doc["field"]) != n:
            raise ConfigError(f"family /field: {len(doc['field'])} components but dimension {n}")
        self.param = doc["parameter"]
        self.params = {k: float(v) for k, v in doc.get("params", {}).items()}
        if self.param in self.params:
            raise ConfigError(f"family /params: {self.param!r} is the family parameter")
        names = tuple(sorted({*self.params, self.param}))
        try:
            self.field = parse_vector(doc["field"], n, names)
            self.probe = [parse_scalar(s, 0, (self.param,)) for s in doc.get("probe", [])] or None
            self.curve = [parse_scalar(s, 0, (self.param,)) for s in doc.get("curve", [])] or None
        except ExprError as exc:
            raise ConfigError(f"family: {exc}") from None
        if self.curve is not None and len(self.curve) != n:
            raise ConfigError(f"family /curve: {len(self.curve)} components but dimension {n}")
        self.t_range = tuple(doc.get("t_range", (0.0, 1.0)))
        self.spec = DEFAULT_SPEC.replace(**doc.get("integrator", {}))


# ------------------------------------------------------------------ output


def _clean(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, (np.floating,)):
        return _clean(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def render_report(report):
    return json.dumps(_clean(report), indent=2, sort_keys=True) + "\n"


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])


def _read_points(path, n):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    pts = []
    for i, row in enumerate(rows):
        try:
            vals = [float(v) for v in row]
        except ValueError:
            if i == 0:
                continue  # header
            raise ConfigError(f"{path} row {i + 1}: not numeric") from None
        if len(vals) != n:
            raise ConfigError(f"{path} row {i + 1}: expected {n} columns")
        pts.append(vals)
    return pts


# ------------------------------------------------------------------ commands


def cmd_check_gas(a):
    sys_ = System(load_json(a.system, SYSTEM_SCHEMA, "config"))
    F = sys_.need_field()
    x_eq = sys_.equilibrium()
    lower, upper = x_eq - a.box, x_eq + a.box
    tol = 1e-6 if a.tol is None else a.tol
    ev = stability.check_gas(F, x_eq, (lower, upper), a.samples, a.horizon, tol,
                             a.certificate, a.seed, spec=sys_.spec, params=sys_.params,
                             threads=a.threads)
    res = {"equilibrium": x_eq, **ev.to_dict()}
    code = EXIT_OK if ev.verdict == "supported" else EXIT_FAIL
    return sys_.doc, res, ev.verdict, code


def cmd_lyapunov(a):
    sys_ = System(load_json(a.system, SYSTEM_SCHEMA, "config"))
    F = sys_.need_field()
    V = sys_.lyapunov_fn(a.horizon)
    cert = lyapunov.verify_certificate(V, F, tuple(a.annulus), a.samples, a.seed,
                                       threads=a.threads, params=sys_.params)
    res = {"lyapunov": V.describe(), "certificate": cert.to_dict()}
    if a.grid_csv:
        lo, hi = a.grid_box
        axes = [np.linspace(lo, hi, a.grid_n)] * sys_.dimension
        mesh = np.array(np.meshgrid(*axes, indexing="ij")).reshape(sys_.dimension, -1).T + V.equilibrium
        vals = sampling.pmap(lambda x: lyapunov._safe_value(V, x)[0], mesh, a.threads)
        rows = [[*x, math.nan if v is None else v] for x, v in zip(mesh, vals)]
        _write_csv(a.grid_csv, [f"x{i + 1}" for i in range(sys_.dimension)] + ["V"], rows)
        res["grid_csv"] = a.grid_csv
    return sys_.doc, res, cert.verdict, EXIT_OK if cert.passed else EXIT_FAIL


def _build_family(a, src, dst):
    kind = a.kind
    if kind == "to-gradient":
        return homotopy.to_gradient_family(src.need_field(), src.lyapunov_fn(a.horizon), src.params)
    if kind == "complete":
        return homotopy.complete_rescale_family(src.need_field(), a.phi, src.params)
    if kind == "sontag":
        F = src.need_field()
        if np.linalg.norm(src.equilibrium()) > 1e-9:
            raise ConfigError("sontag homotopy needs the equilibrium at the origin")
        return homotopy.sontag_family(F, src.spec, src.params)
    if kind == "alexander":
        V = src.need_potential()
        J = dst.need_potential() if dst else V
        return homotopy.alexander_family(V, J, src.spec, src.params)
    if kind == "continuation":
        if dst is None:
            raise ConfigError("continuation needs --to")
        fam, _ = homotopy.continuation_homotopy(
            src.need_field(), dst.need_field(), src.lyapunov_fn(a.horizon),
            dst.lyapunov_fn(a.horizon), params=src.params, verify=False)
        return fam
    if kind == "translate":
        f = src.field if src.field is not None else src.potential
        target = a.target if a.target is not None else [0.0] * src.dimension
        return homotopy.translate_family(f, target, src.params, src.guess)
    if kind == "appendix-morse":
        return homotopy.appendix_family(src.need_potential(), src.params)
    if kind == "appendix-hyp":
        return homotopy.appendix_family(src.need_field(), src.params)
    raise ConfigError(f"unknown homotopy kind {kind!r}")


def cmd_homotopy(a):
    src_path = a.source or a.system
    if not src_path:
        raise ConfigError("homotopy needs --from (or --system)")
    src = System(load_json(src_path, SYSTEM_SCHEMA, "config"))
    dst = System(load_json(a.target_system, SYSTEM_SCHEMA, "config")) if a.target_system else None
    if dst is not None and dst.dimension != src.dimension:
        raise ConfigError("--from and --to systems differ in dimension")
    fam = _build_family(a, src, dst)
    res = {"family": fam.describe()}
    start_err, end_err = homotopy.endpoint_fidelity(fam, 200, a.seed)
    res["endpoint_fidelity"] = {"start": start_err, "end": end_err}
    verdict, code = "built", EXIT_OK
    if a.verify:
        ref = fam.reference if not fam.scalar else None
        rep = homotopy.check_admissibility(fam, tuple(a.annulus), a.t_grid, a.samples, V_ref=ref,
                                           seed=a.seed, threads=a.threads)
        res["admissibility"] = rep.to_dict()
        verdict = rep.verdict
        code = EXIT_OK if rep.passed else EXIT_FAIL
    if a.trace:
        ts = np.linspace(0.0, 1.0, a.t_grid)
        pts = sampling.annulus_samples(a.trace_points, fam.dimension, *a.annulus, a.seed)
        rows = []
        for t in ts:
            c = fam.center(float(t))
            for x in pts:
                xc = x + c
                v = np.atleast_1d(fam(float(t), xc))
                rows.append([t, *xc, *v])
        n = fam.dimension
        out_cols = ["H"] if fam.scalar else [f"H{i + 1}" for i in range(n)]
        _write_csv(a.trace, ["t"] + [f"x{i + 1}" for i in range(n)] + out_cols, rows)
        res["trace_csv"] = a.trace
    inputs = {"from": src.doc, "to": dst.doc if dst else None}
    return inputs, res, verdict, code


def _eval_points(a, h, n):
    if not a.eval:
        return None
    pts = _read_points(a.eval, n)
    out = [np.atleast_1d(h(p)).tolist() for p in pts]
    if a.eval_out:
        _write_csv(a.eval_out, [f"x{i + 1}" for i in range(n)] + [f"h{i + 1}" for i in range(n)],
                   [[*p, *v] for p, v in zip(pts, out)])
    return [{"x": p, "h": v} for p, v in zip(pts, out)]


def cmd_linearize(a):
    sys_ = System(load_json(a.system, SYSTEM_SCHEMA, "config"))
    F = sys_.need_field()
    x_eq = sys_.equilibrium()
    V = (lyapunov.ExplicitLyapunov(sys_.lyapunov, x_eq, sys_.params) if sys_.lyapunov is not None
         else conjugacy.squared_distance(x_eq))
    chart = conjugacy.LevelSetChart(V, a.level, seed=a.seed)
    res = {"equilibrium": x_eq, "chart": {"lyapunov": V.describe(), "level": a.level,
                                          "star_shaped": chart.star_shaped}}
    if not chart.star_shaped["passed"]:
        return sys_.doc, res, "fail", EXIT_FAIL
    h = conjugacy.hartman_grobman_map(F, chart, sys_.spec, sys_.params)
    res["points"] = _eval_points(a, h, sys_.dimension)
    verdict, code = "built", EXIT_OK
    if a.check:
        tol = 1e-4 if a.tol is None else a.tol
        stats = conjugacy.verify_conjugacy(F, h, a.samples, a.t_set, a.seed,
                                           annulus=tuple(a.annulus), spec=sys_.spec,
                                           params=sys_.params, threads=a.threads)
        ok = stats["max"] is not None and stats["max"] <= tol and not stats["failures"]
        res["check"] = {**stats, "tol": tol}
        verdict, code = ("pass", EXIT_OK) if ok else ("fail", EXIT_FAIL)
    return sys_.doc, res, verdict, code


def cmd_morse(a):
    sys_ = System(load_json(a.system, SYSTEM_SCHEMA, "config"))
    V = sys_.need_potential()
    x_min = sys_.equilibrium()
    L = lyapunov.ExplicitLyapunov(V, x_min, sys_.params)
    chart = conjugacy.LevelSetChart(L, a.level, seed=a.seed)
    res = {"minimum": x_min, "chart": {"level": a.level, "star_shaped": chart.star_shaped}}
    if not chart.star_shaped["passed"]:
        return sys_.doc, res, "fail", EXIT_FAIL
    h = conjugacy.morse_map(L, chart, sys_.spec, sys_.params)
    res["points"] = _eval_points(a, h, sys_.dimension)
    verdict, code = "built", EXIT_OK
    if a.check:
        tol = 1e-6 if a.tol is None else a.tol
        stats = conjugacy.verify_squared_norm(L, h, a.samples, a.seed, annulus=tuple(a.annulus),
                                              threads=a.threads)
        ok = stats["max"] is not None and stats["max"] <= tol and not stats["failures"]
        res["check"] = {**stats, "tol": tol}
        verdict, code = ("pass", EXIT_OK) if ok else ("fail", EXIT_FAIL)
    return sys_.doc, res, verdict, code


def cmd_degree(a):
    sys_ = System(load_json(a.system, SYSTEM_SCHEMA, "config"))
    F = sys_.need_field()
    center = np.asarray(a.center, dtype=float) if a.center else sys_.guess
    d = degree.brouwer_degree(F, center, a.radius, a.resolution, sys_.params)
    return sys_.doc, {"center": center, "radius": a.radius, **d.to_dict()}, "computed", EXIT_OK


def cmd_obstruct(a):
    fam = Family(load_json(a.family, FAMILY_SCHEMA, "family"))
    out = degree.family_obstruction_s1(fam.field, fam.probe, a.resolution, param=fam.param,
                                       params=fam.params)
    code = EXIT_FAIL if out["verdict"] == "OBSTRUCTED" else EXIT_OK
    return fam.doc, out, out["verdict"], code


def cmd_family_check(a):
    fam = Family(load_json(a.family, FAMILY_SCHEMA, "family"))
    if fam.curve is None:
        raise ConfigError("family /curve: family-check needs the equilibrium curve")
    tol = 1e-3 if a.tol is None else a.tol
    spec = fam.spec.replace(max_time=max(fam.spec.max_time, 2 * a.horizon))
    t_range = tuple(a.t_range) if a.t_range else fam.t_range
    rep = stability.check_family_attraction(
        fam.field, fam.curve, a.box, a.samples, a.horizon, tol, a.seed, param=fam.param,
        t_range=t_range, curve_range=fam.t_range, spec=spec, params=fam.params, threads=a.threads)
    res = rep.to_dict()
    if a.local_t:
        z = stability._curve_fn(fam.curve, fam.param)
        res["local_checks"] = []
        for t in a.local_t:
            xt = z(t)
            r = min(0.01, 0.5 * max(float(np.linalg.norm(xt)), 1e-3))
            loc = stability.local_stability_check(fam.field, xt, r, params={**fam.params, fam.param: t},
                                                  spec=spec)
            res["local_checks"].append({"t": t, **loc})
    code = EXIT_FAIL if rep.verdict == "not-attracting" else EXIT_OK
    return fam.doc, res, rep.verdict, code


COMMANDS = {
    "check-gas": cmd_check_gas,
    "lyapunov": cmd_lyapunov,
    "homotopy": cmd_homotopy,
    "linearize": cmd_linearize,
    "morse": cmd_morse,
    "degree": cmd_degree,
    "obstruct": cmd_obstruct,
    "family-check": cmd_family_check,
}


# ------------------------------------------------------------------ parser


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="report file (default: stdout)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--tol", type=float)

    p = argparse.ArgumentParser(prog="gasflow", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"gasflow {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("check-gas", parents=[common], help="sampled GAS evidence")
    s.add_argument("--system", required=True)
    s.add_argument("--samples", type=int, default=200)
    s.add_argument("--box", type=float, default=5.0, help="half-width of the sample box")
    s.add_argument("--horizon", type=float, default=30.0)
    s.add_argument("--certificate", action="store_true")

    s = sub.add_parser("lyapunov", parents=[common], help="Lyapunov certificate")
    s.add_argument("--system", required=True)
    s.add_argument("--horizon", type=float, default=20.0, help="Massera horizon T")
    s.add_argument("--annulus", type=float, nargs=2, default=[0.1, 5.0])
    s.add_argument("--samples", type=int, default=1000)
    s.add_argument("--grid-csv")
    s.add_argument("--grid-box", type=float, nargs=2, default=[-2.0, 2.0])
    s.add_argument("--grid-n", type=int, default=21)

    s = sub.add_parser("homotopy", parents=[common], help="build (and verify) a homotopy")
    s.add_argument("--kind", required=True,
                   choices=["to-gradient", "complete", "sontag", "alexander", "continuation",
                            "translate", "appendix-morse", "appendix-hyp"])
    s.add_argument("--from", dest="source")
    s.add_argument("--system", help="alias for --from")
    s.add_argument("--to", dest="target_system")
    s.add_argument("--verify", action="store_true")
    s.add_argument("--trace")
    s.add_argument("--trace-points", type=int, default=20)
    s.add_argument("--t-grid", type=int, default=11)
    s.add_argument("--samples", type=int, default=200)
    s.add_argument("--annulus", type=float, nargs=2, default=[0.1, 5.0])
    s.add_argument("--phi", type=float, default=1.0)
    s.add_argument("--target", type=float, nargs="+", help="translate target point")
    s.add_argument("--horizon", type=float, default=20.0)

    for name, helptext, t_default in (("linearize", "global linearizing conjugacy", None),
                                      ("morse", "degenerate Morse transform", None)):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--system", required=True)
        s.add_argument("--level", type=float, default=1.0)
        s.add_argument("--eval", help="CSV of points to map")
        s.add_argument("--eval-out", help="CSV of mapped points")
        s.add_argument("--check", action="store_true")
        s.add_argument("--samples", type=int, default=500)
        s.add_argument("--annulus", type=float, nargs=2,
                       default=[0.1, 5.0] if name == "linearize" else [0.1, 3.0])
        if name == "linearize":
            s.add_argument("--t-set", type=float, nargs="+", default=[0.5, 1.0, 2.0])

    s = sub.add_parser("degree", parents=[common], help="Brouwer degree on a sphere")
    s.add_argument("--system", required=True)
    s.add_argument("--radius", type=float, default=1.0)
    s.add_argument("--center", type=float, nargs="+")
    s.add_argument("--resolution", type=int)

    s = sub.add_parser("obstruct", parents=[common], help="circle-family winding obstruction")
    s.add_argument("--family", required=True)
    s.add_argument("--resolution", type=int, default=256)

    s = sub.add_parser("family-check", parents=[common], help="family attraction to Z")
    s.add_argument("--family", required=True)
    s.add_argument("--samples", type=int, default=40)
    s.add_argument("--box", type=float, default=0.05)
    s.add_argument("--horizon", type=float, default=2e4)
    s.add_argument("--t-range", type=float, nargs=2)
    s.add_argument("--local-t", type=float, nargs="*")
    return p


def run(argv=None, stdout=None, stderr=None):
    """Run the CLI; returns the exit code."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    if getattr(a, "threads", 1) < 1:
        print("gasflow: --threads must be >= 1", file=stderr)
        return EXIT_ERROR
    try:
        inputs, results, verdict, code = COMMANDS[a.command](a)
    except (ConfigError, ExprError, FlowError, ArithmeticError, ValueError) as exc:
        print(f"gasflow {a.command}: error: {exc}", file=stderr)
        return EXIT_ERROR
    report = {
        "command": a.command,
        "inputs": {"config": inputs, "options": _options(a)},
        "results": results,
        "verdict": verdict,
        "tool_version": __version__,
        "seed": a.seed,
    }
    text = render_report(report)
    if a.out:
        with open(a.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        stdout.write(text)
    return code


def _options(a):
    # threads and output paths do not change results, so they stay out of the report
    skip = {"command", "threads", "out"}
    return {k: v for k, v in sorted(vars(a).items()) if k not in skip}


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
