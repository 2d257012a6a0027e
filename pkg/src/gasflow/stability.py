"""Sampled evidence for (or against) global asymptotic stability.

Verdicts are ``supported``, ``falsified`` or ``inconclusive``; sampling can
refute stability with a replayable witness but never prove it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from gasflow import sampling
from gasflow.expr import ScalarExpr, parse_scalar
from gasflow.flow import (
    DEFAULT_SPEC,
    FiniteEscapeError,
    FlowError,
    as_rhs,
    integrate,
)
from gasflow.lyapunov import massera_lyapunov, verify_certificate

STALL = 1e-6  # a trajectory that ends no closer than (1 - STALL) * start is not converging


@dataclass
class GasEvidence:
    n_trajectories: int
    converged: int
    max_final_dist: float | None
    verdict: str
    escape_witnesses: list = field(default_factory=list)
    nonconvergent_witnesses: list = field(default_factory=list)
    lyapunov_verdict: object = None
    horizon: float = 0.0
    tol: float = 0.0

    def to_dict(self):
        return {
            "n_trajectories": self.n_trajectories,
            "converged": self.converged,
            "max_final_dist": self.max_final_dist,
            "verdict": self.verdict,
            "escape_witnesses": self.escape_witnesses,
            "nonconvergent_witnesses": self.nonconvergent_witnesses,
            "certificate": None if self.lyapunov_verdict is None else self.lyapunov_verdict.to_dict(),
            "horizon": self.horizon,
            "tol": self.tol,
        }


def _run_trajectory(F, x0, x_eq, T, spec, params):
    d0 = float(np.linalg.norm(x0 - x_eq))
    try:
        xT = integrate(F, x0, T, spec, params).final_state
    except FiniteEscapeError as exc:
        return {"x0": x0.tolist(), "kind": "escape", "time": exc.time, "initial_dist": d0}
    except FlowError as exc:
        return {"x0": x0.tolist(), "kind": "integration_failure", "reason": str(exc),
                "initial_dist": d0}
    return {"x0": x0.tolist(), "kind": "ok", "final_dist": float(np.linalg.norm(xT - x_eq)),
            "final_state": xT.tolist(), "initial_dist": d0}


def check_gas(F, x_eq, sample_box, n, T, tol, with_certificate=False, seed=0, *,
              spec=DEFAULT_SPEC, params=None, threads=1, certificate_annulus=None,
              certificate_samples=500, massera_T=20.0):
    """Integrate ``n`` seeded initial conditions from a box for time T.

    Falsified when some orbit escapes, or ends farther than ``tol`` from
    ``x_eq`` without having moved closer at all. Supported when every orbit
    ends within ``tol`` (and, if requested, a Massera certificate passes).
    Anything else is inconclusive.
    """
    x_eq = np.atleast_1d(np.asarray(x_eq, dtype=float))
    res = float(np.linalg.norm(as_rhs(F, params)(x_eq.tolist())))
    if res > 1e-9:
        raise ValueError(f"x_eq is not an equilibrium: |F(x_eq)| = {res:.3g}")
    lower, upper = sample_box
    pts = sampling.box_samples(n, lower, upper, seed)
    runs = sampling.pmap(lambda x0: _run_trajectory(F, x0, x_eq, T, spec, params), pts, threads)

    escapes, stalls = [], []
    converged = 0
    finals = []
    unresolved = False
    for r in runs:
        if r["kind"] == "escape":
            escapes.append(r)
        elif r["kind"] == "integration_failure":
            unresolved = True
        else:
            finals.append(r["final_dist"])
            if r["final_dist"] <= tol:
                converged += 1
            elif r["final_dist"] >= r["initial_dist"] * (1 - STALL):
                stalls.append({k: r[k] for k in ("x0", "initial_dist", "final_dist")})
    cert = None
    if with_certificate and not escapes:
        box_r = 0.5 * float(np.min(np.asarray(upper, float) - np.asarray(lower, float)))
        ann = certificate_annulus or (0.1, max(box_r, 0.2))
        try:
            V = massera_lyapunov(F, x_eq, massera_T, spec, params)
            cert = verify_certificate(V, F, ann, certificate_samples, seed, threads=threads,
                                      params=params)
        except FlowError:
            cert = None
            unresolved = True
    if escapes or stalls:
        verdict = "falsified"
    elif converged == n and not unresolved and (not with_certificate or (cert and cert.passed)):
        verdict = "supported"
    else:
        verdict = "inconclusive"
    return GasEvidence(n, converged, max(finals) if finals else None, verdict,
                       escapes[:50], stalls[:50], cert, float(T), float(tol))


def replay_witness(F, witness, x_eq, T, tol, spec=DEFAULT_SPEC, params=None):
    """Re-integrate a witness and say whether its failure reproduces."""
    x0 = np.asarray(witness["x0"], dtype=float)
    r = _run_trajectory(F, x0, np.atleast_1d(np.asarray(x_eq, float)), T, spec, params)
    if witness.get("kind") == "escape" or "final_dist" not in witness:
        return r["kind"] == "escape"
    return r["kind"] == "ok" and r["final_dist"] > tol


# ------------------------------------------------------------------ families


@dataclass
class FamilyAttractionReport:
    Z: list
    witnesses: list
    verdict: str
    samples: int
    tol: float
    horizon: float

    def to_dict(self):
        return {
            "Z": self.Z,
            "witnesses": self.witnesses,
            "verdict": self.verdict,
            "samples": self.samples,
            "tol": self.tol,
            "horizon": self.horizon,
            "note": ("a witness started near Z and ended away from it"
                     if self.verdict == "not-attracting"
                     else "every sampled start ended near Z (evidence only)"),
        }


def _curve_fn(Z, param):
    if callable(Z):
        return lambda t: np.atleast_1d(np.asarray(Z(t), dtype=float))
    comps = [c if isinstance(c, ScalarExpr) else parse_scalar(c, 0, (param,)) for c in Z]
    fns = [c.function for c in comps]
    return lambda t: np.array([fn({param: t})([]) for fn in fns], dtype=float)


class _CurveDistance:
    """Distance from ``(t, x)`` to the graph ``{(s, Z(s)) : s in [t0, t1]}``."""

    def __init__(self, z, t_range, grid=2001):
        self.z = z
        self.t0, self.t1 = t_range
        self.s = np.linspace(self.t0, self.t1, grid)
        self.pts = np.array([z(s) for s in self.s])

    def _d2(self, s, t, x):
        return (t - s) ** 2 + float(np.sum((x - self.z(s)) ** 2))

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        d2 = (self.s - t) ** 2 + np.sum((self.pts - x) ** 2, axis=1)
        k = int(np.argmin(d2))
        lo = self.s[max(k - 1, 0)]
        hi = self.s[min(k + 1, len(self.s) - 1)]
        # golden-section polish inside the bracketing grid cell pair
        g = (math.sqrt(5) - 1) / 2
        a, b = lo, hi
        for _ in range(60):
            c1, c2 = b - g * (b - a), a + g * (b - a)
            if self._d2(c1, t, x) < self._d2(c2, t, x):
                b = c2
            else:
                a = c1
        return math.sqrt(min(float(d2[k]), self._d2(0.5 * (a + b), t, x)))


def _signed_offsets(n_samples, dim, width, seed):
    """Offsets in ``[-width, width]^dim`` covering every orthant equally."""
    gen = sampling.rng(seed)
    signs = np.array(np.meshgrid(*[[1.0, -1.0]] * dim, indexing="ij")).reshape(dim, -1).T
    base = math.ceil(n_samples / len(signs))
    mags = width * gen.random((base, dim))
    ts = gen.random(base)
    out = []
    for m, u in zip(mags, ts):
        for s in signs:
            out.append((float(u), s * m))
    return out[:n_samples]


def check_family_attraction(H, Z, box, n, T, tol, seed=0, *, param="t", t_range=(0.0, 1.0),
                            curve_range=(0.0, 1.0), starts=None, spec=None, params=None,
                            threads=1):
    """Look for starts near the equilibrium curve Z whose frozen-t orbits end away from Z.

    Each start is ``(t, Z(t) + offset)`` with ``t`` drawn from ``t_range`` and
    the offset from ``[-box, box]^n``, split evenly over sign patterns: a
    family can attract from one side only. The orbit of ``x' = H_t(x)`` (t
    frozen) runs for time T; its end is compared with Z as a curve in
    ``I x R^n`` (parametrized over ``curve_range``). Explicit ``starts``, a
    list of ``(t, x)``, replace the sampled ones.
    """
    spec = spec or DEFAULT_SPEC.replace(max_time=max(DEFAULT_SPEC.max_time, 2 * T))
    z = _curve_fn(Z, param)
    dist = _CurveDistance(z, curve_range)
    others = dict(params or {})
    t0, t1 = t_range
    if starts is None:
        offsets = _signed_offsets(n, H.dimension, box, seed)
        starts = [(t0 + u * (t1 - t0), z(t0 + u * (t1 - t0)) + off) for u, off in offsets]
    starts = [(float(t), np.atleast_1d(np.asarray(x, dtype=float))) for t, x in starts]

    def run(item):
        t, x0 = item
        d0 = dist(t, x0)
        try:
            xT = integrate(H, x0, T, spec, {**others, param: t}).final_state
        except FiniteEscapeError as exc:
            return {"start": [t, *x0.tolist()], "limit": None, "escape_time": exc.time,
                    "initial_dist": d0, "dist_to_Z": math.inf}
        return {"start": [t, *x0.tolist()], "limit": xT.tolist(), "initial_dist": d0,
                "dist_to_Z": dist(t, xT)}

    rows = sampling.pmap(run, starts, threads)
    witnesses = [r for r in rows if r["dist_to_Z"] > tol and r["initial_dist"] < box * math.sqrt(H.dimension + 1)]
    for w in witnesses:
        if w["dist_to_Z"] == math.inf:
            w["dist_to_Z"] = None
    witnesses.sort(key=lambda w: w["start"])
    curve = [[float(s), *z(float(s)).tolist()] for s in np.linspace(*curve_range, 11)]
    verdict = "not-attracting" if witnesses else "attracting-evidence"
    return FamilyAttractionReport(curve, witnesses[:50], verdict, len(starts), float(tol), float(T))


def replay_family_witness(H, witness, Z, T, tol, *, param="t", curve_range=(0.0, 1.0), spec=None,
                          params=None):
    spec = spec or DEFAULT_SPEC.replace(max_time=max(DEFAULT_SPEC.max_time, 2 * T))
    t, *x0 = witness["start"]
    dist = _CurveDistance(_curve_fn(Z, param), curve_range)
    try:
        xT = integrate(H, x0, T, spec, {**(params or {}), param: t}).final_state
    except FiniteEscapeError:
        return True
    return dist(t, xT) > tol


def local_stability_check(F, x_eq, radius, n=32, T=5000.0, tol=1e-6, seed=0, *, params=None,
                          spec=None):
    """Linearization plus short sampled orbits in a small ball around ``x_eq``."""
    spec = spec or DEFAULT_SPEC.replace(max_time=max(DEFAULT_SPEC.max_time, 2 * T))
    x_eq = np.atleast_1d(np.asarray(x_eq, dtype=float))
    _, J = F.jacobian_function(params)(x_eq.tolist())
    eig = np.linalg.eigvals(np.asarray(J, dtype=float))
    hurwitz = bool(np.max(eig.real) < 0)
    dim = len(x_eq)
    pts = [x_eq + off for _, off in _signed_offsets(n, dim, radius, seed)]
    worst = 0.0
    ok = True
    for x0 in pts:
        try:
            xT = integrate(F, x0, T, spec, params).final_state
        except FlowError:
            ok = False
            continue
        worst = max(worst, float(np.linalg.norm(xT - x_eq)))
    ok = ok and worst <= tol
    return {"equilibrium": x_eq.tolist(), "eigenvalues_real": sorted(eig.real.tolist()),
            "hurwitz": hurwitz, "max_final_dist": worst, "samples": len(pts),
            "verdict": "pass" if ok and hurwitz else "fail"}
