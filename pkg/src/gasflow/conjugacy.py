"""Global linearizing conjugacy and the degenerate Morse transform.

Both maps are built from a level set ``L = {V = level}`` of a Lyapunov-type
function, trivialized by radial projection onto the unit sphere around the
equilibrium. That projection is only valid for star-shaped level sets, which
:class:`LevelSetChart` tests along sampled rays before anything uses it.
"""

from __future__ import annotations

import math

import numpy as np

from gasflow import sampling
from gasflow.expr import ScalarExpr, parse_scalar
from gasflow.flow import (
    DEFAULT_SPEC,
    FlowError,
    as_rhs,
    flow_map,
    flow_to_event,
    normalized_gradient_field,
)
from gasflow.lyapunov import ExplicitLyapunov, LyapunovFn


class ChartError(ValueError):
    """The level set failed the star-shapedness test (or was never tested)."""


def squared_distance(x_eq):
    """``|x - x_eq|^2`` as an explicit Lyapunov function."""
    x_eq = np.atleast_1d(np.asarray(x_eq, dtype=float))
    terms = [f"(x{i + 1} - ({float(c)!r}))^2" if c else f"x{i + 1}^2" for i, c in enumerate(x_eq)]
    return ExplicitLyapunov(parse_scalar(" + ".join(terms), len(x_eq)), x_eq)


def _value_fn(V, params=None):
    if isinstance(V, ScalarExpr):
        return V.function(params)
    return V.value


class LevelSetChart:
    """The level set ``{V = level}`` with its radial projection to the unit sphere."""

    def __init__(self, V, level=1.0, *, equilibrium=None, n_rays=500, seed=0, params=None,
                 check=True):
        if isinstance(V, ScalarExpr):
            V = ExplicitLyapunov(V, equilibrium, params)
        if not isinstance(V, LyapunovFn):
            raise TypeError("chart needs a LyapunovFn or ScalarExpr")
        self.V = V
        self.level = float(level)
        self.equilibrium = V.equilibrium if equilibrium is None else np.atleast_1d(
            np.asarray(equilibrium, dtype=float))
        self.dimension = len(self.equilibrium)
        self.value = V.value
        self.star_shaped = None
        if check:
            self.star_shaped = self.star_shaped_check(n_rays, seed)

    def project(self, u):
        d = np.asarray(u, dtype=float) - self.equilibrium
        r = float(np.linalg.norm(d))
        if r == 0:
            raise ChartError("cannot project the equilibrium")
        return d / r

    def require(self):
        if self.star_shaped is None:
            raise ChartError("star-shapedness of the level set has not been checked")
        if not self.star_shaped["passed"]:
            raise ChartError(f"level set is not star-shaped: {self.star_shaped['failures'][:3]}")

    def _ray_crossings(self, d, grid=256, r_cap=1e8):
        c = self.equilibrium

        def g(r):
            return self.value((c + r * d).tolist()) - self.level

        r_hi = 1.0
        while g(r_hi) <= 0:
            r_hi *= 2.0
            if r_hi > r_cap:
                return 0, None
        # look past the first exit as well: a second crossing would break the chart
        rs = np.linspace(0.0, 4.0 * r_hi, grid + 1)[1:]
        vals = [g(r) for r in rs]
        count = sum(1 for a, b in zip(vals, vals[1:]) if (a <= 0) != (b <= 0))
        if vals[0] > 0:
            count += 1
        return count, r_hi

    def star_shaped_check(self, n_rays=500, seed=0):
        """Count level crossings along sampled rays; exactly one each is required."""
        dirs = sampling.unit_directions(sampling.rng(seed), n_rays, self.dimension)
        if self.dimension == 1:
            dirs = np.array([[1.0], [-1.0]] * ((n_rays + 1) // 2))[:n_rays]
        failures = []
        for d in dirs:
            try:
                count, _ = self._ray_crossings(d)
            except (FlowError, ArithmeticError) as exc:
                failures.append({"direction": d.tolist(), "reason": str(exc)})
                continue
            if count != 1:
                failures.append({"direction": d.tolist(), "crossings": count})
        return {"rays": int(n_rays), "passed": not failures, "failures": failures[:20]}


def tau_rho(F, chart, x, spec=DEFAULT_SPEC, params=None):
    """Signed flow time ``tau`` from x to the chart level set and the landing point ``rho``.

    ``tau < 0`` when x lies inside the level set, so ``tau(Phi^t x) = tau(x) - t``.
    """
    chart.require()
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.array_equal(x, chart.equilibrium):
        raise ValueError("tau is undefined at the equilibrium (it tends to -infinity)")
    v = chart.value(x.tolist())
    if v == chart.level:
        return 0.0, x.copy()
    direction = -1 if v < chart.level else 1
    cr = flow_to_event(F, x, chart.value, chart.level, direction, spec, params)
    return cr.time, np.asarray(cr.point, dtype=float)


class ConjugacyMap:
    """A coordinate change ``x -> h(x)``; ``h(x_eq) = 0``."""

    def __init__(self, kind, fn, chart, source=None):
        self.kind = kind
        self.fn = fn
        self.chart = chart
        self.source = source
        self.defect = None

    def __call__(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if np.array_equal(x, self.chart.equilibrium):
            return np.zeros_like(x)
        return np.asarray(self.fn(x), dtype=float)


def hartman_grobman_map(F, chart=None, spec=DEFAULT_SPEC, params=None, x_eq=None):
    """``h(x) = e^{tau(x)} proj(rho(x))``, so that ``h(Phi^t x) = e^{-t} h(x)``."""
    if chart is None:
        n = F.dimension
        chart = LevelSetChart(squared_distance(np.zeros(n) if x_eq is None else x_eq))
    chart.require()

    def fn(x):
        tau, rho = tau_rho(F, chart, x, spec, params)
        return math.exp(tau) * chart.project(rho)
    return ConjugacyMap("hartman_grobman", fn, chart, F)


def hartman_grobman(F, chart, x, spec=DEFAULT_SPEC, params=None):
    return hartman_grobman_map(F, chart, spec, params)(x)


def morse_map(V, chart=None, spec=DEFAULT_SPEC, params=None):
    """``h(x) = proj(Phi^{level - V(x)}(x)) sqrt(V(x))`` with Phi the unit-rate gradient flow of V.

    By construction ``|h|^2 = V``.
    """
    if chart is None:
        chart = LevelSetChart(V, params=params)
    chart.require()
    ngf = normalized_gradient_field(chart.V if not isinstance(V, ScalarExpr) else V, params)
    value = chart.value

    def fn(x):
        v = value(x.tolist())
        y = flow_map(ngf, x, chart.level - v, spec)
        return chart.project(y) * math.sqrt(v)
    return ConjugacyMap("morse", fn, chart, V)


def morse_transform(V, chart, x, spec=DEFAULT_SPEC, params=None):
    return morse_map(V, chart, spec, params)(x)


def _stats(residuals, failures, count):
    arr = np.asarray(residuals, dtype=float)
    return {
        "max": float(arr.max()) if arr.size else None,
        "mean": float(arr.mean()) if arr.size else None,
        "evaluated": int(arr.size),
        "requested": int(count),
        "failures": failures[:20],
    }


def verify_conjugacy(F, h, samples, t_set, seed, *, annulus=(0.1, 5.0), center=None,
                     spec=DEFAULT_SPEC, params=None, threads=1):
    """Residual of ``h(Phi^t x) = e^{-t} h(x)``, relative to ``|h(x)|``."""
    c = getattr(getattr(h, "chart", None), "equilibrium", None) if center is None else center
    n = F.dimension
    pts = sampling.annulus_samples(samples, n, *annulus, seed, c)
    t_set = [float(t) for t in t_set]

    def one(x):
        out = []
        try:
            hx = np.asarray(h(x), dtype=float)
            for t in t_set:
                y = flow_map(F, x, t, spec, params)
                r = np.linalg.norm(np.asarray(h(y)) - math.exp(-t) * hx) / (1e-12 + np.linalg.norm(hx))
                out.append((float(r), None))
        except (FlowError, ArithmeticError, ValueError) as exc:
            out.append((None, f"{type(exc).__name__}: {exc}"))
        return out

    rows = sampling.pmap(one, pts, threads)
    res, fails = [], []
    for x, row in zip(pts, rows):
        for r, err in row:
            if err is None:
                res.append(r)
            else:
                fails.append({"x": x.tolist(), "reason": err})
    stats = _stats(res, fails, samples * len(t_set))
    stats["t_set"] = t_set
    if isinstance(h, ConjugacyMap):
        h.defect = stats
    return stats


def verify_squared_norm(V, h, samples, seed, *, annulus=(0.1, 3.0), center=None, params=None,
                        threads=1):
    """Residual ``|V(x) - |h(x)|^2| / (1 + |V(x)|)``."""
    value = _value_fn(V, params)
    if center is None:
        center = getattr(getattr(h, "chart", None), "equilibrium", None)
    n = V.dimension
    pts = sampling.annulus_samples(samples, n, *annulus, seed, center)

    def one(x):
        try:
            v = value(x.tolist())
            hx = np.asarray(h(x), dtype=float)
            return abs(v - float(hx @ hx)) / (1 + abs(v)), None
        except (FlowError, ArithmeticError, ValueError) as exc:
            return None, f"{type(exc).__name__}: {exc}"

    rows = sampling.pmap(one, pts, threads)
    res = [r for r, e in rows if e is None]
    fails = [{"x": x.tolist(), "reason": e} for x, (_, e) in zip(pts, rows) if e]
    stats = _stats(res, fails, samples)
    if isinstance(h, ConjugacyMap):
        h.defect = stats
    return stats


def cocycle_defects(F, chart, samples, t_set, seed, *, annulus=(0.1, 5.0), spec=DEFAULT_SPEC,
                    params=None):
    """Max of ``|tau(Phi^t x) - (tau(x) - t)|`` and ``|rho(Phi^t x) - rho(x)|`` over samples."""
    pts = sampling.annulus_samples(samples, F.dimension, *annulus, seed, chart.equilibrium)
    dt = dr = 0.0
    for x in pts:
        tau, rho = tau_rho(F, chart, x, spec, params)
        for t in t_set:
            y = flow_map(F, x, t, spec, params)
            tau2, rho2 = tau_rho(F, chart, y, spec, params)
            dt = max(dt, abs(tau2 - (tau - t)))
            dr = max(dr, float(np.linalg.norm(rho2 - rho)))
    return {"tau": dt, "rho": dr}
