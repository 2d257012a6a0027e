"""Converse Lyapunov functions (finite-horizon Massera integral) and sampled certificates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from gasflow import sampling
from gasflow.expr import VectorExpr, parse_scalar
from gasflow.flow import DEFAULT_SPEC, FiniteEscapeError, FlowError, _solve, as_rhs

GRAD_SINGULAR = 1e-12


class NotGASError(FiniteEscapeError):
    """Finite escape inside the Massera horizon: evidence the field is not GAS."""


class NonConvergenceError(ArithmeticError):
    pass


class SingularJacobianError(NonConvergenceError):
    pass


class LyapunovFn:
    """A scalar function with gradient access, minimized at ``equilibrium``."""

    kind = "abstract"

    def __init__(self, equilibrium):
        self.equilibrium = np.atleast_1d(np.asarray(equilibrium, dtype=float))

    @property
    def dimension(self):
        return len(self.equilibrium)

    def value(self, x):
        return self.value_and_grad(x)[0]

    def gradient(self, x):
        return np.asarray(self.value_and_grad(x)[1], dtype=float)

    def value_and_grad(self, x):
        raise NotImplementedError

    def __call__(self, x):
        return self.value(x)

    def describe(self):
        return {"kind": self.kind, "equilibrium": self.equilibrium.tolist()}


class ExplicitLyapunov(LyapunovFn):
    kind = "explicit"

    def __init__(self, expr, equilibrium=None, params=None):
        if equilibrium is None:
            equilibrium = np.zeros(expr.dimension)
        super().__init__(equilibrium)
        self.expr = expr
        self.params = params
        self._value = expr.function(params)
        self._grad = expr.gradient_function(params)

    def value(self, x):
        return self._value(_point(x))

    def value_and_grad(self, x):
        v, g = self._grad(_point(x))
        return v, g

    def describe(self):
        return {**super().describe(), "expression": self.expr.source}


def explicit_lyapunov(src_or_expr, dimension=None, equilibrium=None, params=None):
    expr = src_or_expr
    if isinstance(src_or_expr, str):
        expr = parse_scalar(src_or_expr, dimension, tuple(params or ()))
    return ExplicitLyapunov(expr, equilibrium, params)


class MasseraLyapunov(LyapunovFn):
    """``V(x) = integral_0^T |Phi^s(x) - x_eq|^2 ds`` with its exact gradient.

    The gradient comes from the variational equation integrated alongside the
    flow; everything is integrated in deviation coordinates ``e = x - x_eq``.
    """

    kind = "massera"

    def __init__(self, F, x_eq, T=20.0, spec=DEFAULT_SPEC, params=None):
        if not T > 0:
            raise ValueError("Massera horizon T must be positive")
        super().__init__(x_eq)
        self.F = F
        self.T = float(T)
        self.spec = spec
        self.params = params
        n = self.dimension
        f = as_rhs(F, params)
        xe = self.equilibrium.tolist()
        if hasattr(F, "jacobian_function"):
            jac = F.jacobian_function(params)
        else:
            jac = None

        def rhs_value(s):
            e = s[:n]
            fx = f([xe[i] + e[i] for i in range(n)])
            out = list(fx)
            out.append(sum(v * v for v in e))
            return out

        def rhs_full(s):
            e = s[:n]
            fx, J = jac([xe[i] + e[i] for i in range(n)])
            out = list(fx)
            for i in range(n):
                Ji = J[i]
                for k in range(n):
                    acc = 0.0
                    for j in range(n):
                        acc += Ji[j] * s[n + j * n + k]
                    out.append(acc)
            out.append(sum(v * v for v in e))
            for k in range(n):
                acc = 0.0
                for i in range(n):
                    acc += s[n + i * n + k] * e[i]
                out.append(2.0 * acc)
            return out

        self._rhs_value = rhs_value
        self._rhs_full = rhs_full if jac is not None else None

    def _run(self, rhs, state):
        try:
            return _solve(rhs, state, self.T, self.spec).final_state
        except FiniteEscapeError as exc:
            raise NotGASError(
                f"finite escape within the Massera horizon (not-GAS evidence): {exc}",
                exc.time, exc.state,
            ) from exc

    def value(self, x):
        e = (np.asarray(x, dtype=float) - self.equilibrium).tolist()
        out = self._run(self._rhs_value, e + [0.0])
        return float(out[self.dimension])

    def evaluate(self, x):
        """``(V(x), grad V(x), Phi^T(x))`` from one augmented solve."""
        if self._rhs_full is None:
            raise TypeError("Massera gradients need a field with a Jacobian (VectorExpr)")
        n = self.dimension
        e = (np.asarray(x, dtype=float) - self.equilibrium).tolist()
        eye = [1.0 if i == j else 0.0 for i in range(n) for j in range(n)]
        out = self._run(self._rhs_full, e + eye + [0.0] + [0.0] * n)
        v = float(out[n + n * n])
        g = np.array(out[n + n * n + 1:], dtype=float)
        end = self.equilibrium + out[:n]
        return v, g, end

    def value_and_grad(self, x):
        v, g, _ = self.evaluate(x)
        return v, g

    def orbital_identity(self, x):
        """``(<grad V, F>(x), |Phi^T x - x_eq|^2 - |x - x_eq|^2)``; equal in exact arithmetic."""
        x = np.asarray(x, dtype=float)
        _, g, end = self.evaluate(x)
        fx = np.asarray(as_rhs(self.F, self.params)(x.tolist()), dtype=float)
        lhs = float(g @ fx)
        rhs = float(np.sum((end - self.equilibrium) ** 2) - np.sum((x - self.equilibrium) ** 2))
        return lhs, rhs

    def describe(self):
        return {**super().describe(), "horizon": self.T}


def massera_lyapunov(F, x_eq, T=20.0, spec=DEFAULT_SPEC, params=None):
    """Converse Lyapunov function for a field believed GAS at ``x_eq``."""
    x_eq = np.atleast_1d(np.asarray(x_eq, dtype=float))
    fx = np.asarray(as_rhs(F, params)(x_eq.tolist()), dtype=float)
    if np.linalg.norm(fx) > 1e-9:
        raise ValueError(f"x_eq is not an equilibrium: |F(x_eq)| = {np.linalg.norm(fx):.3g}")
    return MasseraLyapunov(F, x_eq, T, spec, params)


def _point(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (int, float)):
        return [float(x)]
    return list(x)


# ------------------------------------------------------------------ certificate


@dataclass
class Certificate:
    decrease_margin: float | None
    properness_proxy: float | None
    samples: int
    annulus: tuple
    verdict: str
    failures: list = field(default_factory=list)
    margin_floor: float = 0.0

    @property
    def passed(self):
        return self.verdict == "pass"

    def to_dict(self):
        return {
            "decrease_margin": self.decrease_margin,
            "properness_proxy": self.properness_proxy,
            "samples": self.samples,
            "annulus": list(self.annulus),
            "margin_floor": self.margin_floor,
            "verdict": self.verdict,
            "failures": self.failures,
        }


def _decrease_cosine(V, f, x):
    try:
        _, g = V.value_and_grad(x)
    except (FlowError, ArithmeticError) as exc:
        return None, f"{type(exc).__name__}: {exc}"
    g = np.asarray(g, dtype=float)
    fx = np.asarray(f(x.tolist()), dtype=float)
    gn = float(np.linalg.norm(g))
    fn = float(np.linalg.norm(fx))
    if gn < GRAD_SINGULAR:
        return None, f"gradient singularity (|grad V| = {gn:.3g})"
    if fn == 0.0:
        return 0.0, None
    return -float(g @ fx) / (gn * fn), None


def _safe_value(V, x):
    try:
        return float(V.value(x)), None
    except (FlowError, ArithmeticError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


def verify_certificate(V, F, annulus, n_samples, seed, *, center=None, n_sphere=None,
                       margin_floor=1e-6, threads=1, params=None):
    """Sample the Lyapunov decrease and properness conditions on an annulus.

    ``decrease_margin`` is the minimum cosine of the angle between ``-grad V``
    and ``F``; the verdict passes when it exceeds ``margin_floor`` (a noise
    floor for numerically constructed V) and the properness proxy is positive.
    """
    r_in, r_out = annulus
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    c = V.equilibrium if center is None else np.asarray(center, dtype=float)
    n = len(c)
    pts = sampling.annulus_samples(n_samples, n, r_in, r_out, seed, c)
    f = as_rhs(F, params)
    results = sampling.pmap(lambda x: _decrease_cosine(V, f, x), pts, threads)
    failures = []
    cosines = []
    for x, (cos, err) in zip(pts, results):
        if err is not None:
            failures.append({"point": x.tolist(), "reason": err})
        else:
            cosines.append(cos)
            if cos <= margin_floor and len(failures) < 20:
                failures.append({"point": x.tolist(), "reason": f"decrease cosine {cos:.3g}"})
    margin = min(cosines) if cosines else None

    m = n_sphere if n_sphere is not None else min(n_samples, 200)
    sphere_in = sampling.sphere_points(m, n, r_in, c, seed)
    sphere_out = sampling.sphere_points(m, n, r_out, c, seed)
    vals = sampling.pmap(lambda x: _safe_value(V, x), list(sphere_in) + list(sphere_out), threads)
    v_in, v_out = vals[: len(sphere_in)], vals[len(sphere_in):]
    bad = [(x, e) for x, (_, e) in zip(list(sphere_in) + list(sphere_out), vals) if e]
    for x, e in bad:
        failures.append({"point": x.tolist(), "reason": e})
    proper = None
    if not bad:
        proper = min(v for v, _ in v_out) - max(v for v, _ in v_in)
    ok = (
        margin is not None and proper is not None and margin > margin_floor and proper > 0
        and len(cosines) == n_samples
    )
    return Certificate(margin, proper, n_samples, (r_in, r_out), "pass" if ok else "fail",
                       failures, margin_floor)


# ------------------------------------------------------------------ equilibria


def find_equilibrium(F, guess, params=None, jacobian=None, tol=1e-10, max_iter=100):
    """Damped Newton iteration for a zero of ``F``.

    Stops once ``|F| <= tol`` and the Newton step has stalled, so slowly
    converging (degenerate) zeros are still pushed close to the root.
    """
    if isinstance(F, VectorExpr):
        jac_fn = F.jacobian_function(params)
        f = F.function(params)
    else:
        if jacobian is None:
            raise TypeError("callable fields need an explicit jacobian")
        f, jac_fn = F, jacobian
    x = np.atleast_1d(np.asarray(guess, dtype=float))

    def residual(y):
        return np.asarray(f(y.tolist()), dtype=float)

    fx = residual(x)
    norm = float(np.linalg.norm(fx))
    for _ in range(max_iter):
        if norm == 0.0:
            break
        out = jac_fn(x.tolist())
        J = np.asarray(out[1] if isinstance(out, tuple) and len(out) == 2 else out, dtype=float)
        J = J.reshape(len(x), len(x))
        singular = not np.all(np.isfinite(J)) or np.linalg.cond(J) > 1 / np.finfo(float).eps
        if singular:
            if norm <= tol:
                break
            raise SingularJacobianError(f"singular Jacobian at {x.tolist()} (|F| = {norm:.3g})")
        dx = np.linalg.solve(J, -fx)
        lam = 1.0
        while True:
            trial = x + lam * dx
            ft = residual(trial)
            nt = float(np.linalg.norm(ft))
            if nt < norm or lam < 1e-10:
                break
            lam *= 0.5
        step = float(np.linalg.norm(lam * dx))
        x, fx, norm = trial, ft, nt
        if norm <= tol and step <= 1e-12 * (1 + float(np.linalg.norm(x))):
            break
    if not norm <= tol:
        raise NonConvergenceError(f"Newton did not converge from {list(np.atleast_1d(guess))}: |F| = {norm:.3g}")
    return x
