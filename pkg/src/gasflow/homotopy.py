"""Explicit homotopies and retractions between stable vector fields and potentials.

Every family is a :class:`HomotopyFamily`: a map ``(t, x) -> H_t(x)`` on
``t in [0, 1]`` with declared endpoint maps. :func:`check_admissibility`
samples a family on an annulus and checks that each frozen field stays
nonvanishing (and, given a reference Lyapunov function, strictly decreasing).
The check is evidence at sampling fidelity, not a proof.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

from gasflow import sampling
from gasflow.expr import ScalarExpr, VectorExpr, eval_jet
from gasflow.flow import (
    DEFAULT_SPEC,
    FlowError,
    NoCrossingError,
    _solve,
    as_rhs,
    flow_map,
    normalized_gradient_field,
)
from gasflow.lyapunov import (
    ExplicitLyapunov,
    LyapunovFn,
    NotGASError,
    find_equilibrium,
)

BLOWUP_SWITCH = 1e-6  # t >= 1 - BLOWUP_SWITCH uses the t = 1 branch
SONTAG_SHORTCUT = 1e-6
ENDPOINT_TOL = 1e-9


class HomotopyError(ValueError):
    pass


class EndpointMismatchError(HomotopyError):
    pass


class ClassMembershipError(HomotopyError):
    """A matrix fails the Hurwitz / positive-definite precondition."""


class HalvingTimeError(NotGASError):
    """No time within ``max_time`` at which the orbit halves its norm."""


def _pt(x):
    if isinstance(x, np.ndarray):
        return x.astype(float).ravel().tolist()
    if isinstance(x, (int, float)):
        return [float(x)]
    return [float(v) for v in x]


# ------------------------------------------------------------------ evaluables


class EvalField:
    """A vector field given by a list-based callable; usable wherever a VectorExpr is."""

    def __init__(self, fn, dimension, label=""):
        self.fn = fn
        self.dimension = dimension
        self.label = label

    def __call__(self, x):
        return np.asarray(self.fn(_pt(x)), dtype=float)

    def function(self, params=None):
        return self.fn


class EvalScalar:
    def __init__(self, fn, dimension, label=""):
        self.fn = fn
        self.dimension = dimension
        self.label = label

    def __call__(self, x):
        return float(self.fn(_pt(x)))

    def function(self, params=None):
        return self.fn


def _vector_fn(F, params=None):
    if isinstance(F, (VectorExpr, EvalField)):
        return as_rhs(F, params), F.dimension
    if callable(F):
        return F, getattr(F, "dimension", None)
    raise TypeError(f"not a vector field: {F!r}")


def _scalar_fn(V, params=None):
    if isinstance(V, ScalarExpr):
        return V.function(params), V.dimension
    if isinstance(V, LyapunovFn):
        return V.value, V.dimension
    if isinstance(V, EvalScalar):
        return V.fn, V.dimension
    if callable(V):
        return V, getattr(V, "dimension", None)
    raise TypeError(f"not a scalar function: {V!r}")


def _as_lyapunov(Y, params=None):
    if isinstance(Y, LyapunovFn):
        return Y
    if isinstance(Y, ScalarExpr):
        return ExplicitLyapunov(Y, params=params)
    raise TypeError("expected a LyapunovFn or ScalarExpr")


def _is_scalar(obj):
    return isinstance(obj, (ScalarExpr, LyapunovFn, EvalScalar))


# ------------------------------------------------------------------ families


class HomotopyFamily:
    """``(t, x) -> H_t(x)`` for ``t in [0, 1]``.

    ``fn`` works on plain lists. ``start`` and ``end`` are the declared
    endpoint maps; ``reference`` optionally gives the Lyapunov function that
    should decrease along the frozen field ``H_t``; ``center`` gives the
    equilibrium of ``H_t`` (origin when absent).
    """

    def __init__(self, kind, fn, dimension, *, start=None, end=None, scalar=False,
                 metadata=None, reference=None, center=None):
        self.kind = kind
        self.fn = fn
        self.dimension = dimension
        self.start = start
        self.end = end
        self.scalar = scalar
        self.metadata = metadata or {}
        self.reference = reference
        self._center = center

    t_domain = (0.0, 1.0)

    def __call__(self, t, x):
        t = float(t)
        if not -1e-12 <= t <= 1 + 1e-12:
            raise ValueError(f"homotopy parameter t = {t} outside [0, 1]")
        v = self.fn(min(max(t, 0.0), 1.0), _pt(x))
        return float(v) if self.scalar else np.asarray(v, dtype=float)

    def frozen(self, t):
        """The map ``H_t`` on its own."""
        if self.scalar:
            return EvalScalar(lambda x: self.fn(t, x), self.dimension, f"{self.kind}@{t}")
        return EvalField(lambda x: self.fn(t, x), self.dimension, f"{self.kind}@{t}")

    def center(self, t):
        if self._center is None:
            return np.zeros(self.dimension)
        return np.asarray(self._center(t), dtype=float)

    def describe(self):
        return {"kind": self.kind, "dimension": self.dimension, "scalar": self.scalar,
                **{k: v for k, v in self.metadata.items() if _jsonable(v)}}


def _jsonable(v):
    return isinstance(v, (int, float, str, bool, type(None), list, tuple, dict))


def endpoint_fidelity(H, n_samples=200, seed=0, annulus=(0.1, 3.0)):
    """Max over samples of ``|H_0 - start| / (1+|x|)`` and ``|H_1 - end| / (1+|x|)``."""
    pts = sampling.annulus_samples(n_samples, H.dimension, *annulus, seed, H.center(0.0))
    worst = [0.0, 0.0]
    for x in pts:
        xl = x.tolist()
        scale = 1.0 + float(np.linalg.norm(x))
        for k, (t, ref) in enumerate(((0.0, H.start), (1.0, H.end))):
            if ref is None:
                continue
            d = np.asarray(H.fn(t, xl), dtype=float) - np.asarray(ref(xl), dtype=float)
            worst[k] = max(worst[k], float(np.linalg.norm(np.atleast_1d(d))) / scale)
    return tuple(worst)


# ------------------------------------------------------------------ smooth step


def _sigma(u):
    return math.exp(-1.0 / u) if u > 0 else 0.0


def smooth_step(t):
    """C-infinity monotone step: 0 on ``[0, 1/3]``, 1 on ``[2/3, 1]``."""
    a = _sigma(3.0 * t - 1.0)
    b = _sigma(2.0 - 3.0 * t)
    return a / (a + b)


# ------------------------------------------------------------------ concatenation


def concat_smooth(*families, tol=ENDPOINT_TOL, probe=None, seed=0, kind="concat"):
    """Run ``k`` families one after the other, each over ``[i/k, (i+1)/k]``.

    Inside each piece the local parameter is passed through :func:`smooth_step`,
    so the joined family is stationary at every seam. Consecutive families
    must agree at the seam within ``tol * max(1, |value|)`` on probe points.
    """
    if len(families) < 2:
        raise ValueError("concat_smooth needs at least two families")
    dims = {f.dimension for f in families}
    scal = {f.scalar for f in families}
    if len(dims) != 1 or len(scal) != 1:
        raise HomotopyError("families differ in dimension or in scalar/vector type")
    n = families[0].dimension
    if probe is None:
        probe = sampling.annulus_samples(24, n, 0.5, 2.0, seed)
    for i, (A, B) in enumerate(zip(families, families[1:])):
        c = A.center(1.0)
        for x in probe:
            xl = (np.asarray(x) + c).tolist()
            try:
                a = np.atleast_1d(np.asarray(A.fn(1.0, xl), dtype=float))
                b = np.atleast_1d(np.asarray(B.fn(0.0, xl), dtype=float))
            except (FlowError, ArithmeticError):
                continue
            gap = float(np.linalg.norm(a - b))
            if gap > tol * max(1.0, float(np.linalg.norm(a))):
                raise EndpointMismatchError(
                    f"family {i} ends at {a.tolist()} but family {i + 1} starts at "
                    f"{b.tolist()} (x = {xl})"
                )
    k = len(families)

    def locate(t):
        i = min(int(t * k), k - 1)
        return i, smooth_step(t * k - i)

    def fn(t, x):
        i, u = locate(t)
        return families[i].fn(u, x)

    reference = None
    if any(f.reference is not None for f in families):
        def reference(t):
            i, u = locate(t)
            ref = families[i].reference
            return ref(u) if callable(ref) and not isinstance(ref, LyapunovFn) else ref

    def center(t):
        i, u = locate(t)
        return families[i].center(u)

    return HomotopyFamily(
        kind, fn, n, start=families[0].start, end=families[-1].end,
        scalar=families[0].scalar, reference=reference, center=center,
        metadata={"stages": [f.kind for f in families]},
    )


# ------------------------------------------------------------------ elementary kinds


def straight_line(F, G, params=None):
    """``(1 - t) F + t G`` for two fields (or two potentials)."""
    scalar = _is_scalar(F)
    if scalar:
        f, n = _scalar_fn(F, params)
        g, _ = _scalar_fn(G, params)

        def fn(t, x):
            return (1.0 - t) * f(x) + t * g(x)
    else:
        f, n = _vector_fn(F, params)
        g, m = _vector_fn(G, params)
        n = n or m

        def fn(t, x):
            a, b = f(x), g(x)
            return [(1.0 - t) * a[i] + t * b[i] for i in range(len(a))]
    return HomotopyFamily("straight_line", fn, n, start=f, end=g, scalar=scalar)


def complete_rescale(F, t, phi, params=None):
    """``x -> F(x) / (1 + t phi |F(x)|^2)``: same zeros, bounded by ``1/(2 sqrt(t phi))``."""
    if phi < 0:
        raise ValueError("phi must be nonnegative")
    f, n = _vector_fn(F, params)
    c = float(t) * float(phi)

    def h(x):
        v = f(x)
        s = 1.0 / (1.0 + c * sum(u * u for u in v))
        return [s * u for u in v]
    return EvalField(h, n, "complete_rescale")


def complete_rescale_family(F, phi=1.0, params=None):
    f, n = _vector_fn(F, params)

    def fn(t, x):
        v = f(x)
        s = 1.0 / (1.0 + t * phi * sum(u * u for u in v))
        return [s * u for u in v]
    return HomotopyFamily("complete_rescale", fn, n, start=f,
                          end=lambda x: fn(1.0, x), metadata={"phi": phi})


def to_gradient(F, Y, t, params=None):
    """``h_t = -t grad Y + (1 - t) F``."""
    return to_gradient_family(F, Y, params).frozen(float(t))


def to_gradient_family(F, Y, params=None):
    f, n = _vector_fn(F, params)
    Y = _as_lyapunov(Y, params)

    def fn(t, x):
        v = f(x)
        if t == 0.0:
            return list(v)
        _, g = Y.value_and_grad(x)
        return [-t * g[i] + (1.0 - t) * v[i] for i in range(len(v))]

    def end(x):
        return [-v for v in Y.value_and_grad(x)[1]]
    return HomotopyFamily("to_gradient", fn, n, start=f, end=end, reference=Y,
                          center=lambda t: Y.equilibrium)


# ------------------------------------------------------------------ Sontag


class SontagNullhomotopy:
    """Two-stage contraction of a GAS field (equilibrium at the origin) to ``-x``.

    For ``x != 0`` let ``tau(x)`` be the first time the orbit reaches half of
    ``|x|``. Stage 1 (``t <= 1/2``) is the difference quotient
    ``(Phi^{s tau}(x) - x) / (s tau)`` with ``s = psi(2t)``; stage 2 moves in a
    straight line from ``D(x) = (Phi^tau(x) - x) / tau`` to ``-x``. Orbits are
    integrated as displacements ``z = Phi^s(x) - x`` so short-time quotients
    keep their relative accuracy. Per-point ``tau`` and trajectories are cached.
    """

    def __init__(self, F, spec=DEFAULT_SPEC, params=None, cache_size=4096):
        self.f, self.dimension = _vector_fn(F, params)
        self.F = F
        self.spec = spec
        self._halving = functools.lru_cache(maxsize=cache_size)(self._compute)

    def _compute(self, key):
        x = list(key)
        r2 = sum(v * v for v in x)
        if r2 == 0.0:
            raise ValueError("Sontag homotopy is undefined at the equilibrium x = 0")
        f = self.f

        def rhs(z):
            return f([x[i] + z[i] for i in range(len(z))])

        def g(z):
            return sum((x[i] + z[i]) ** 2 for i in range(len(z)))

        try:
            cr = _solve(rhs, [0.0] * len(x), self.spec.max_time, self.spec, event=(g, r2 / 4.0))
        except NoCrossingError as exc:
            raise HalvingTimeError(
                f"orbit of {x} never halves its norm within t = {self.spec.max_time:g} "
                "(not-GAS evidence)"
            ) from exc
        return cr.time, cr.trajectory

    def halving_time(self, x):
        return self._halving(tuple(_pt(x)))[0]

    def endpoint(self, x):
        """``D(x)``, the stage-1 endpoint."""
        return self._stage1(1.0, _pt(x))

    def _stage1(self, s, x):
        tau, traj = self._halving(tuple(x))
        z = traj(s * tau)
        return [v / (s * tau) for v in z]

    def value(self, t, x):
        x = _pt(x)
        if t <= 0.5:
            s = smooth_step(2.0 * t)
            if s < SONTAG_SHORTCUT:
                if not any(x):
                    raise ValueError("Sontag homotopy is undefined at the equilibrium x = 0")
                return list(self.f(x))
            return self._stage1(s, x)
        u = smooth_step(2.0 * t - 1.0)
        d = self._stage1(1.0, x)
        return [(1.0 - u) * d[i] - u * x[i] for i in range(len(x))]


def sontag_nullhomotopy(F, t, x, spec=DEFAULT_SPEC, params=None):
    return np.asarray(SontagNullhomotopy(F, spec, params).value(float(t), x), dtype=float)


def sontag_family(F, spec=DEFAULT_SPEC, params=None):
    S = SontagNullhomotopy(F, spec, params)
    return HomotopyFamily("sontag", S.value, S.dimension, start=S.f,
                          end=lambda x: [-v for v in x], metadata={"engine": S})


# ------------------------------------------------------------------ Alexander trick


class AlexanderHomotopy:
    """``alpha_t(x) = J(Phi^{(t-1) V(x)}(x)) / t`` with Phi the flow of ``grad V / |grad V|^2``.

    Along that flow V grows at unit rate, so the flowed point sits on the level
    ``t V(x)``; wherever J agrees with V there, ``alpha_t = V``.
    """

    def __init__(self, V, J, spec=DEFAULT_SPEC, params=None):
        self.v, self.dimension = _scalar_fn(V, params)
        self.j, _ = _scalar_fn(J, params)
        self.field = normalized_gradient_field(V, params)
        self.spec = spec

    def value(self, t, x):
        x = _pt(x)
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"t = {t} outside [0, 1]")
        vx = self.v(x)
        if t == 0.0:
            return vx
        y = flow_map(self.field, x, (t - 1.0) * vx, self.spec)
        return self.j(y.tolist()) / t


def alexander_homotopy(V, J, t, x, spec=DEFAULT_SPEC, params=None):
    return AlexanderHomotopy(V, J, spec, params).value(float(t), x)


def alexander_family(V, J, spec=DEFAULT_SPEC, params=None):
    A = AlexanderHomotopy(V, J, spec, params)
    return HomotopyFamily("alexander", A.value, A.dimension, start=A.v, end=A.j, scalar=True)


# ------------------------------------------------------------------ continuation


class BlendedLyapunov(LyapunovFn):
    """``W_s = (1 - s) V_F + s V_G``."""

    kind = "blend"

    def __init__(self, VF, VG, s):
        super().__init__(VF.equilibrium)
        self.VF, self.VG, self.s = VF, VG, float(s)

    def value_and_grad(self, x):
        s = self.s
        if s == 0.0:
            return self.VF.value_and_grad(x)
        if s == 1.0:
            return self.VG.value_and_grad(x)
        a, ga = self.VF.value_and_grad(x)
        b, gb = self.VG.value_and_grad(x)
        return (1 - s) * a + s * b, [(1 - s) * ga[i] + s * gb[i] for i in range(len(ga))]


class CachedLyapunov(LyapunovFn):
    """Memoizes ``value_and_grad`` per point (admissibility sweeps revisit points)."""

    def __init__(self, V, size=65536):
        super().__init__(V.equilibrium)
        self.base = V
        self.kind = V.kind
        self._vg = functools.lru_cache(maxsize=size)(
            lambda key: _freeze(V.value_and_grad(list(key)))
        )

    def value_and_grad(self, x):
        return self._vg(tuple(_pt(x)))

    def describe(self):
        return self.base.describe()


def _freeze(vg):
    v, g = vg
    return float(v), tuple(float(u) for u in g)


def gradient_bridge_family(VF, VG):
    """``s -> -grad((1 - s) V_F + s V_G)``."""
    n = VF.dimension

    def fn(s, x):
        return [-v for v in BlendedLyapunov(VF, VG, s).value_and_grad(x)[1]]
    return HomotopyFamily(
        "gradient_bridge", fn, n,
        start=lambda x: [-v for v in VF.value_and_grad(x)[1]],
        end=lambda x: [-v for v in VG.value_and_grad(x)[1]],
        reference=lambda s: BlendedLyapunov(VF, VG, s),
    )


def continuation_homotopy(F, G, V_F, V_G, *, params=None, verify=True, annulus=(0.1, 5.0),
                          t_grid=11, n_samples=200, seed=0, threads=1):
    """``F -> -grad V_F -> -grad V_G -> G`` joined with :func:`concat_smooth`.

    Each stage is checked against its own Lyapunov function: V_F, then the
    blend ``W_s``, then V_G. Returns ``(family, report)``; the report is None
    when ``verify`` is false.
    """
    VF = CachedLyapunov(_as_lyapunov(V_F, params))
    VG = CachedLyapunov(_as_lyapunov(V_G, params))
    f, n = _vector_fn(F, params)
    g, _ = _vector_fn(G, params)
    stage1 = to_gradient_family(F, VF, params)
    stage2 = gradient_bridge_family(VF, VG)

    def fn3(t, x):
        a = VG.value_and_grad(x)[1]
        b = g(x)
        return [-(1.0 - t) * a[i] + t * b[i] for i in range(n)]
    stage3 = HomotopyFamily("straight_line", fn3, n, start=stage2.end, end=g, reference=VG)
    fam = concat_smooth(stage1, stage2, stage3, kind="continuation")
    report = None
    if verify:
        report = check_admissibility(fam, annulus, t_grid, n_samples, V_ref=fam.reference,
                                     seed=seed, threads=threads)
    return fam, report


# ------------------------------------------------------------------ retractions


def _potential_minimum(V, guess, params=None):
    gf = V.gradient_function(params)

    def grad(x):
        return list(gf(x)[1])

    def hess(x):
        return np.asarray(eval_jet(V, x, params, order=2).hess, dtype=float)
    return find_equilibrium(grad, guess, jacobian=hess)


def locate_center(f, guess=None, params=None):
    """Equilibrium of a field, or minimum of a potential, by Newton iteration."""
    n = f.dimension
    guess = np.zeros(n) if guess is None else guess
    if isinstance(f, ScalarExpr):
        return _potential_minimum(f, guess, params)
    return find_equilibrium(f, guess, params)


def translate_family(f, y, params=None, guess=None):
    """``H_t(f)(x) = f(x + (x_* - y) t)``: slides the equilibrium/minimum from ``x_*`` to ``y``."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    xs = locate_center(f, guess, params)
    shift = (xs - y).tolist()
    scalar = isinstance(f, ScalarExpr)
    fn0 = f.function(params)

    def fn(t, x):
        return fn0([x[i] + t * shift[i] for i in range(len(x))])
    return HomotopyFamily(
        "translate", fn, f.dimension, start=fn0, end=lambda x: fn(1.0, x), scalar=scalar,
        metadata={"x_star": xs.tolist(), "target": y.tolist()},
        center=lambda t: xs - t * (xs - y),
    )


def translate_retraction(f, y, t, params=None, guess=None):
    return translate_family(f, y, params, guess).frozen(float(t))


class BlowupRetraction:
    """Blow-up retraction onto the linearization (fields) or the Hessian quadratic (potentials).

    Potentials: ``V((1-t) x) / (1-t)^2`` tending to ``<x, D^2V(0) x> / 2``.
    Fields: ``F((1-t) x) / (1-t)`` tending to ``DF(0) x``.
    """

    def __init__(self, f, params=None):
        self.scalar = isinstance(f, ScalarExpr)
        self.dimension = f.dimension
        self.f = f.function(params)
        origin = [0.0] * f.dimension
        if self.scalar:
            self.D = np.asarray(eval_jet(f, origin, params, order=2).hess, dtype=float)
        else:
            self.D = np.asarray(f.jacobian_function(params)(origin)[1], dtype=float)

    def limit(self, x):
        x = np.asarray(x, dtype=float)
        if self.scalar:
            return 0.5 * float(x @ self.D @ x)
        return (self.D @ x).tolist()

    def value(self, t, x):
        if t >= 1.0 - BLOWUP_SWITCH:
            return self.limit(x)
        c = 1.0 - t
        v = self.f([c * u for u in x])
        if self.scalar:
            return v / (c * c)
        return [u / c for u in v]


def appendix_retraction(f, t, x, params=None):
    v = BlowupRetraction(f, params).value(float(t), _pt(x))
    return float(v) if isinstance(v, float) else np.asarray(v, dtype=float)


def appendix_family(f, params=None):
    R = BlowupRetraction(f, params)
    return HomotopyFamily(
        "appendix_morse" if R.scalar else "appendix_hyp", R.value, R.dimension,
        start=R.f, end=R.limit, scalar=R.scalar,
        metadata={"hessian" if R.scalar else "jacobian": R.D.tolist()},
    )


def matrix_contractions(A, t, kind):
    """``(1-t) A - t I`` (Hurwitz) or ``(1-t) A + t I`` (positive definite)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    eye = np.eye(A.shape[0])
    if kind == "hurwitz":
        worst = float(np.max(np.linalg.eigvals(A).real))
        if not worst < -1e-10:
            raise ClassMembershipError(f"matrix is not Hurwitz (max Re eigenvalue {worst:.3g})")
        return (1 - t) * A - t * eye
    if kind == "pds":
        if np.max(np.abs(A - A.T)) > 1e-12:
            raise ClassMembershipError("matrix is not symmetric")
        low = float(np.min(np.linalg.eigvalsh(A)))
        if not low > 1e-12:
            raise ClassMembershipError(f"matrix is not positive definite (min eigenvalue {low:.3g})")
        return (1 - t) * A + t * eye
    raise ValueError(f"unknown matrix class {kind!r}")


def hurwitz_line(A):
    """Linear fields ``x -> M_t x`` with ``M_t`` the Hurwitz contraction of A to ``-I``."""
    matrix_contractions(A, 0.0, "hurwitz")
    A = np.atleast_2d(np.asarray(A, dtype=float))

    def fn(t, x):
        return (matrix_contractions(A, t, "hurwitz") @ np.asarray(x)).tolist()
    return HomotopyFamily("hurwitz_line", fn, A.shape[0], start=lambda x: (A @ np.asarray(x)).tolist(),
                          end=lambda x: [-v for v in x])


def pds_line(A):
    """Quadratic potentials ``x -> <x, M_t x> / 2`` with ``M_t`` running from A to I."""
    matrix_contractions(A, 0.0, "pds")
    A = np.atleast_2d(np.asarray(A, dtype=float))

    def fn(t, x):
        x = np.asarray(x)
        return 0.5 * float(x @ matrix_contractions(A, t, "pds") @ x)
    return HomotopyFamily("pds_line", fn, A.shape[0], scalar=True,
                          start=lambda x: 0.5 * float(np.asarray(x) @ A @ np.asarray(x)),
                          end=lambda x: 0.5 * float(np.dot(x, x)))


# ------------------------------------------------------------------ admissibility


@dataclass
class AdmissibilityReport:
    t_grid: list
    zero_gap: list
    decrease_margin: list | None
    verdict: str
    failures: list = field(default_factory=list)
    samples: int = 0
    annulus: tuple = ()
    margin_floor: float = 0.0
    zero_tol: float = 0.0

    @property
    def passed(self):
        return self.verdict == "pass"

    def to_dict(self):
        return {
            "t_grid": self.t_grid,
            "zero_gap": self.zero_gap,
            "decrease_margin": self.decrease_margin,
            "verdict": self.verdict,
            "failures": self.failures,
            "samples": self.samples,
            "annulus": list(self.annulus),
            "margin_floor": self.margin_floor,
            "zero_tol": self.zero_tol,
            "note": "sampling evidence, not a proof",
        }


def _scalar_gradient(fn, t, x):
    h = 1e-6 * (1.0 + max(abs(v) for v in x))
    g = []
    for i in range(len(x)):
        xp, xm = list(x), list(x)
        xp[i] += h
        xm[i] -= h
        g.append((fn(t, xp) - fn(t, xm)) / (2 * h))
    return g


def _probe_point(H, ts, refs, x0, centers):
    out = []
    for t, ref, c in zip(ts, refs, centers):
        x = (x0 + c).tolist()
        try:
            v = _scalar_gradient(H.fn, t, x) if H.scalar else list(H.fn(t, x))
            norm = math.sqrt(sum(u * u for u in v))
            cos = None
            if ref is not None:
                _, g = ref.value_and_grad(x)
                gn = math.sqrt(sum(u * u for u in g))
                if gn < 1e-12:
                    out.append((norm, None, f"gradient singularity of V_ref (|grad V| = {gn:.3g})"))
                    continue
                cos = 0.0 if norm == 0 else -sum(a * b for a, b in zip(g, v)) / (gn * norm)
            out.append((norm, cos, None))
        except (FlowError, ArithmeticError, ValueError) as exc:
            out.append((None, None, f"{type(exc).__name__}: {exc}"))
    return out


def check_admissibility(H, annulus, t_grid, n_samples, V_ref=None, seed=0, *, threads=1,
                        zero_tol=1e-12, margin_floor=1e-6, max_failures=50):
    """Sample every frozen ``H_t`` on an annulus around its equilibrium.

    ``zero_gap[t]`` is the smallest ``|H_t(x)|`` seen (for potential families,
    the smallest gradient norm). With ``V_ref`` (a LyapunovFn, or a callable
    ``t -> LyapunovFn``) the decrease cosine of ``-grad V_ref`` against ``H_t``
    is also tracked. The same annulus samples are reused at every ``t``.
    """
    if t_grid < 2:
        raise ValueError("t_grid must be >= 2")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if V_ref is not None and H.scalar:
        raise ValueError("decrease margins need a vector family")
    ts = [i / (t_grid - 1) for i in range(t_grid)]
    if V_ref is None:
        refs = [None] * len(ts)
    elif isinstance(V_ref, LyapunovFn):
        refs = [V_ref] * len(ts)
    else:
        refs = [V_ref(t) for t in ts]
    centers = [H.center(t) for t in ts]
    pts = sampling.annulus_samples(n_samples, H.dimension, *annulus, seed)
    rows = sampling.pmap(lambda x0: _probe_point(H, ts, refs, x0, centers), pts, threads)

    gaps = [math.inf] * len(ts)
    margins = [math.inf] * len(ts) if V_ref is not None else None
    failures = []

    def fail(t, x, reason):
        if len(failures) < max_failures:
            failures.append({"t": t, "x": x, "reason": reason})

    bad = False
    for x0, row in zip(pts, rows):
        for k, (norm, cos, err) in enumerate(row):
            x = (x0 + centers[k]).tolist()
            if err is not None:
                bad = True
                fail(ts[k], x, err)
                continue
            gaps[k] = min(gaps[k], norm)
            if norm <= zero_tol:
                fail(ts[k], x, f"H_t vanishes (|H_t| = {norm:.3g})")
            if margins is not None:
                margins[k] = min(margins[k], cos)
                if cos <= margin_floor:
                    fail(ts[k], x, f"decrease cosine {cos:.3g}")
    gaps = [None if g == math.inf else g for g in gaps]
    if margins is not None:
        margins = [None if m == math.inf else m for m in margins]
    ok = not bad and all(g is not None and g > zero_tol for g in gaps)
    if margins is not None:
        ok = ok and all(m is not None and m > margin_floor for m in margins)
    return AdmissibilityReport(ts, gaps, margins, "pass" if ok else "fail", failures,
                               n_samples, tuple(annulus), margin_floor, zero_tol)
