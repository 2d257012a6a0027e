"""Adaptive Dormand-Prince 5(4) integration with dense output and level-crossing events.

The stepper works on plain Python lists: the systems handled here have a
handful of components, where list arithmetic beats small-array numpy calls.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from gasflow.expr import ScalarExpr, VectorExpr

# Dormand-Prince 5(4) tableau; P gives Shampine's quartic continuous extension.
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B = _A[6]
_E = (-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40)
_P = (
    (1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432),
    (0.0, 0.0, 0.0, 0.0),
    (0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799),
    (0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072),
    (0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632),
    (0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844),
    (0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423),
)

_SAFETY = 0.9
_BETA = 0.04  # PI controller memory exponent
_ALPHA = 0.2 - 0.75 * _BETA
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0
_EPS = np.finfo(float).eps

EVENT_TOL = 1e-10


class FlowError(RuntimeError):
    """Integration could not produce the requested trajectory."""


class FiniteEscapeError(FlowError):
    def __init__(self, message, time=None, state=None, trajectory=None):
        super().__init__(message)
        self.time = time
        self.state = None if state is None else np.asarray(state, dtype=float)
        self.trajectory = trajectory


class StepLimitError(FlowError):
    pass


class StepUnderflowError(FlowError):
    pass


class NoCrossingError(FlowError):
    pass


class TangentialCrossingError(FlowError):
    pass


class GradientSingularityError(FlowError, ArithmeticError):
    def __init__(self, point, norm):
        self.point = tuple(float(v) for v in point)
        self.norm = norm
        super().__init__(f"gradient singularity at {self.point} (|grad V| = {norm:.3g})")


@dataclass(frozen=True)
class IntegratorSpec:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    max_step: float = math.inf
    max_time: float = 1e4
    max_steps: int = 10_000_000
    escape_norm: float = 1e12

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if not self.max_time > 0:
            raise ValueError("max_time must be positive")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return {k: (None if v == math.inf else v) for k, v in dataclasses.asdict(self).items()}


DEFAULT_SPEC = IntegratorSpec()


@dataclass
class Event:
    time: float
    point: np.ndarray
    event_id: str = "level"


@dataclass
class _Segment:
    t0: float
    h: float
    y0: list
    k: list  # seven stage derivatives

    def at(self, t):
        theta = (t - self.t0) / self.h
        th = (theta, theta * theta, theta**3, theta**4)
        h = self.h
        out = list(self.y0)
        for i, ki in enumerate(self.k):
            row = _P[i]
            w = h * (row[0] * th[0] + row[1] * th[1] + row[2] * th[2] + row[3] * th[3])
            if w:
                for j in range(len(out)):
                    out[j] += w * ki[j]
        return out


@dataclass
class Trajectory:
    """Accepted steps of one solve plus the quartic interpolant between them."""

    times: np.ndarray
    states: np.ndarray
    segments: list = field(repr=False)
    events: list = field(default_factory=list)

    @property
    def dimension(self):
        return self.states.shape[1]

    @property
    def final_time(self):
        return float(self.times[-1])

    @property
    def final_state(self):
        return self.states[-1].copy()

    def _segment_for(self, t):
        forward = self.times[-1] >= self.times[0]
        if forward:
            i = bisect_right(self._starts, t) - 1
        else:
            i = bisect_right(self._starts, -t) - 1
        return self.segments[min(max(i, 0), len(self.segments) - 1)]

    def __post_init__(self):
        forward = len(self.times) < 2 or self.times[-1] >= self.times[0]
        self._starts = [s.t0 if forward else -s.t0 for s in self.segments]

    def __call__(self, t):
        """Dense-output state at time ``t`` (must lie in the covered interval)."""
        lo, hi = sorted((self.times[0], self.times[-1]))
        if not lo - 1e-12 * (1 + abs(lo)) <= t <= hi + 1e-12 * (1 + abs(hi)):
            raise ValueError(f"t = {t} outside trajectory interval [{lo}, {hi}]")
        if not self.segments:
            return self.states[0].copy()
        return np.array(self._segment_for(t).at(t))

    def to_csv(self, fh):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t"] + [f"x{i + 1}" for i in range(self.dimension)])
        for t, y in zip(self.times, self.states):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in y])

    def to_json(self):
        return {
            "times": [float(t) for t in self.times],
            "states": [[float(v) for v in y] for y in self.states],
            "events": [
                {"time": float(e.time), "point": [float(v) for v in e.point], "id": e.event_id}
                for e in self.events
            ],
        }


@dataclass
class Crossing:
    """First level crossing found by :func:`flow_to_event`; unpacks as ``(t, x)``."""

    time: float
    point: np.ndarray
    trajectory: Trajectory = field(repr=False)
    residual: float = 0.0

    def __iter__(self):
        return iter((self.time, self.point))


def as_rhs(F, params=None):
    """Turn a VectorExpr (or any ``x -> sequence`` callable) into a list-based rhs."""
    if isinstance(F, VectorExpr):
        return F.function(params)
    if hasattr(F, "function") and callable(F.function):
        return F.function(params)
    return F


def as_scalar(g, params=None):
    if isinstance(g, ScalarExpr):
        return g.function(params)
    return g


def _norm(y):
    return math.sqrt(math.fsum(v * v for v in y))


def _initial_step(f, y0, f0, direction, spec):
    n = len(y0)
    scale = [spec.abs_tol + spec.rel_tol * abs(v) for v in y0]
    d0 = math.sqrt(sum((y0[i] / scale[i]) ** 2 for i in range(n)) / n)
    d1 = math.sqrt(sum((f0[i] / scale[i]) ** 2 for i in range(n)) / n)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, spec.max_step)
    y1 = [y0[i] + direction * h0 * f0[i] for i in range(n)]
    f1 = f(y1)
    d2 = math.sqrt(sum(((f1[i] - f0[i]) / scale[i]) ** 2 for i in range(n)) / n) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, spec.max_step)


def _solve(f, y0, t_end, spec, event=None):
    """Integrate ``y' = f(y)`` from time 0 to ``t_end``.

    ``event`` is ``(g, level)``; when given, integration stops at the first
    crossing of ``g(y) = level`` and the Crossing is returned instead.
    """
    y = [float(v) for v in y0]
    n = len(y)
    direction = 1.0 if t_end >= 0 else -1.0
    t = 0.0
    times = [0.0]
    states = [list(y)]
    segments = []
    if t_end == 0:
        return Trajectory(np.array(times), np.array(states, dtype=float), segments)
    k1 = list(f(y))
    y0_norm = _norm(y)
    if event is not None:
        g, level = event
        s_old = g(y) - level
        if s_old == 0:
            raise ValueError("initial point already lies on the event level")
    h_abs = _initial_step(f, y, k1, direction, spec)
    err_prev = 1e-4
    rejected = False
    rtol, atol = spec.rel_tol, spec.abs_tol
    steps = 0

    def partial():
        return Trajectory(np.array(times), np.array(states, dtype=float), segments)

    while direction * (t_end - t) > 0:
        steps += 1
        if steps > spec.max_steps:
            raise StepLimitError(f"step budget {spec.max_steps} exhausted at t = {t}")
        min_step = 10 * _EPS * max(abs(t), 1.0)
        if h_abs < min_step:
            ynorm = _norm(y)
            if ynorm >= 1e3 * max(1.0, y0_norm):
                raise FiniteEscapeError(
                    f"finite escape near t = {t} (|x| = {ynorm:.3g}, step underflow)",
                    t, y, partial(),
                )
            raise StepUnderflowError(f"step size underflow at t = {t}, state {y}")
        h_abs = min(h_abs, spec.max_step)
        remaining = abs(t_end - t)
        if h_abs >= remaining:
            h_abs = remaining
        h = direction * h_abs

        ks = [k1]
        for s in range(1, 7):
            a = _A[s]
            ys = list(y)
            for j, aj in enumerate(a):
                if aj:
                    kj = ks[j]
                    c = h * aj
                    for i in range(n):
                        ys[i] += c * kj[i]
            if s == 6:
                y_new = ys
            ks.append(list(f(ys)))

        err_sum = 0.0
        finite = True
        for i in range(n):
            e = 0.0
            for j in range(7):
                ej = _E[j]
                if ej:
                    e += ej * ks[j][i]
            e *= h
            sc = atol + rtol * max(abs(y[i]), abs(y_new[i]))
            r = e / sc
            err_sum += r * r
        err = math.sqrt(err_sum / n)
        if not math.isfinite(err):
            finite = False
            err = 1e10

        if err <= 1.0:
            factor = _MAX_FACTOR if err == 0 else _SAFETY * err ** (-_ALPHA) * err_prev**_BETA
            factor = min(_MAX_FACTOR, max(_MIN_FACTOR, factor))
            if rejected:
                factor = min(1.0, factor)
            err_prev = max(err, 1e-4)
            rejected = False
            t_new = t_end if h_abs == remaining else t + h
            seg = _Segment(t, h, y, ks)
            segments.append(seg)
            t, y = t_new, y_new
            times.append(t)
            states.append(list(y))
            k1 = ks[6]
            ynorm = _norm(y)
            if not math.isfinite(ynorm) or ynorm > spec.escape_norm:
                raise FiniteEscapeError(
                    f"finite escape at t = {t} (|x| = {ynorm:.3g} > {spec.escape_norm:g})",
                    t, y, partial(),
                )
            if event is not None:
                s_new = g(y) - level
                if s_old * s_new <= 0:
                    traj = partial()
                    return _refine_crossing(seg, g, level, s_old, s_new, traj)
                s_old = s_new
            h_abs *= factor
        else:
            rejected = True
            if not finite:
                h_abs *= _MIN_FACTOR
            else:
                h_abs *= max(_MIN_FACTOR, _SAFETY * err ** (-1 / 5))

    if event is not None:
        raise NoCrossingError(f"no crossing of level {event[1]} within |t| <= {abs(t_end)}")
    return partial()


def _refine_crossing(seg, g, level, s_lo, s_hi, traj):
    """Bisect the step interpolant for ``g = level``; check the crossing is transverse."""
    a, b = 0.0, 1.0
    fa, fb = s_lo, s_hi
    h = seg.h
    best_theta, best_f = (1.0, fb) if abs(fb) <= abs(fa) else (0.0, fa)
    for _ in range(200):
        if abs(best_f) <= EVENT_TOL:
            break
        m = 0.5 * (a + b)
        if m <= a or m >= b:
            break
        fm = g(seg.at(seg.t0 + m * h)) - level
        if abs(fm) < abs(best_f):
            best_theta, best_f = m, fm
        if fm == 0:
            break
        if (fa < 0) == (fm < 0):
            a, fa = m, fm
        else:
            b, fb = m, fm
    t_star = seg.t0 + best_theta * h
    x_star = np.array(seg.at(t_star))
    # transversality: g - level must change sign across the root
    delta = 1e-6
    f_minus = g(seg.at(seg.t0 + (best_theta - delta) * h)) - level
    f_plus = g(seg.at(seg.t0 + (best_theta + delta) * h)) - level
    slope = (f_plus - f_minus) / (2 * delta * abs(h))
    if f_minus * f_plus >= 0 or abs(slope) < 1e-12:
        raise TangentialCrossingError(
            f"crossing of level {level} at t = {t_star} is not transverse (slope {slope:.3g})"
        )
    traj.events.append(Event(t_star, x_star))
    return Crossing(t_star, x_star, traj, abs(best_f))


def integrate(F, x0, t_final, spec=DEFAULT_SPEC, params=None):
    """Solve ``x' = F(x)``, ``x(0) = x0`` on ``[0, t_final]`` (``t_final`` may be negative)."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if isinstance(F, VectorExpr) and F.dimension != len(x0):
        raise ValueError(f"field dimension {F.dimension} != initial state dimension {len(x0)}")
    return _solve(as_rhs(F, params), x0.tolist(), float(t_final), spec)


def flow_map(F, x0, t, spec=DEFAULT_SPEC, params=None):
    """Time-``t`` flow ``Phi^t(x0)``."""
    return integrate(F, x0, t, spec, params).final_state


def flow_to_event(F, x0, g, level, direction=1, spec=DEFAULT_SPEC, params=None):
    """First time ``t*`` (in the chosen time direction) with ``g(Phi^t*(x0)) = level``."""
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    g_fn = as_scalar(g, params)
    return _solve(as_rhs(F, params), x0.tolist(), direction * spec.max_time, spec,
                  event=(g_fn, float(level)))


class NormalizedGradientField:
    """The field ``grad V / |grad V|^2``, along whose flow V grows at unit rate."""

    SINGULAR = 1e-12

    def __init__(self, V, params=None):
        if isinstance(V, ScalarExpr):
            self.dimension = V.dimension
            self._grad = V.gradient_function(params)
        else:
            # any object exposing value_and_grad(x)
            self.dimension = len(V.equilibrium)
            self._grad = lambda x: V.value_and_grad(x)
        self.V = V

    def __call__(self, x):
        _, g = self._grad(x)
        s = 0.0
        for v in g:
            s += v * v
        if s < self.SINGULAR**2:
            raise GradientSingularityError(x, math.sqrt(s))
        return [v / s for v in g]


def normalized_gradient_field(V, params=None):
    return NormalizedGradientField(V, params)
