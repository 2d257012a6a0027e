"""Winding numbers, Brouwer degrees on small spheres, and the circle-family obstruction."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from gasflow.expr import ScalarExpr, VectorExpr, parse_scalar
from gasflow.flow import as_rhs

RESIDUAL_MAX = 0.1
ZERO_NORM = 1e-12
SPHERE_ZERO = 1e-9


class DegreeError(ValueError):
    pass


class VanishingFieldError(DegreeError):
    """The field (or loop) has a zero where it must not."""


class UnderResolvedError(DegreeError):
    """Sampling too coarse to pin down the integer; refine and retry."""


@dataclass(frozen=True)
class DegreeResult:
    value: int
    raw: float
    residual: float
    method: str
    mesh: int

    def __int__(self):
        return self.value

    def to_dict(self):
        return {"value": self.value, "raw": self.raw, "residual": self.residual,
                "method": self.method, "mesh": self.mesh}


def _rounded(raw, method, mesh):
    value = int(round(raw))
    residual = abs(raw - value)
    if residual > RESIDUAL_MAX:
        raise UnderResolvedError(
            f"{method} degree {raw:.4f} is not near an integer (residual {residual:.3f}); "
            "refine the mesh"
        )
    return DegreeResult(value, float(raw), float(residual), method, mesh)


def _turning(loop):
    """Angle increments of a closed planar loop (closing it if needed)."""
    pts = np.asarray(loop, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("loop must be a list of 2-vectors")
    if len(pts) < 3:
        raise UnderResolvedError("loop needs at least three points")
    norms = np.linalg.norm(pts, axis=1)
    k = int(np.argmin(norms))
    if norms[k] < ZERO_NORM:
        raise VanishingFieldError(f"loop passes through 0 at entry {k}")
    if np.max(np.abs(pts[0] - pts[-1])) > 1e-9:
        pts = np.vstack([pts, pts[:1]])
    a, b = pts[:-1], pts[1:]
    cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    dot = np.sum(a * b, axis=1)
    inc = np.arctan2(cross, dot)
    gap = np.max(np.abs(inc))
    if gap >= math.pi - 1e-9:
        raise UnderResolvedError(f"consecutive angular gap {gap:.3f} >= pi; refine the loop")
    return inc, len(pts) - 1


def winding_number(loop):
    """Net turns of a closed loop of nonzero planar vectors around the origin."""
    inc, m = _turning(loop)
    return _rounded(math.fsum(inc.tolist()) / (2 * math.pi), "winding", m)


# ------------------------------------------------------------------ sphere meshes


def icosphere(refinements):
    """Unit icosahedron subdivided ``refinements`` times; faces oriented outward."""
    p = (1 + math.sqrt(5)) / 2
    verts = [(-1, p, 0), (1, p, 0), (-1, -p, 0), (1, -p, 0), (0, -1, p), (0, 1, p),
             (0, -1, -p), (0, 1, -p), (p, 0, -1), (p, 0, 1), (-p, 0, -1), (-p, 0, 1)]
    verts = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    for _ in range(int(refinements)):
        cache = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return np.array(verts), np.array(faces, dtype=int)


def solid_angle(a, b, c):
    """Signed solid angle of the spherical triangle with unit vertices a, b, c."""
    num = float(np.dot(a, np.cross(b, c)))
    den = 1.0 + float(np.dot(a, b) + np.dot(b, c) + np.dot(c, a))
    return 2.0 * math.atan2(num, den)


def _field_fn(F, params):
    if isinstance(F, VectorExpr):
        return F.function(params), F.dimension
    return as_rhs(F, params), getattr(F, "dimension", None)


def brouwer_degree(F, center, radius, resolution=None, params=None):
    """Degree of ``F / |F|`` restricted to the sphere ``|x - center| = radius`` (n <= 3).

    ``resolution`` is the number of circle points for n = 2 and the number of
    icosahedral refinements for n = 3.
    """
    f, n = _field_fn(F, params)
    center = np.atleast_1d(np.asarray(center, dtype=float))
    n = n or len(center)
    if len(center) != n:
        raise ValueError("center dimension does not match the field")
    if not radius > 0:
        raise ValueError("radius must be positive")
    if n == 1:
        lo = f([center[0] - radius])[0]
        hi = f([center[0] + radius])[0]
        if min(abs(lo), abs(hi)) <= SPHERE_ZERO:
            raise VanishingFieldError("field vanishes on the 0-sphere")
        raw = (math.copysign(1.0, hi) - math.copysign(1.0, lo)) / 2
        return _rounded(raw, "sign", 2)
    if n == 2:
        m = 256 if resolution is None else int(resolution)
        ang = 2 * math.pi * np.arange(m) / m
        pts = center + radius * np.column_stack([np.cos(ang), np.sin(ang)])
        vals = np.array([f(p.tolist()) for p in pts], dtype=float)
        _check_sphere(vals, pts)
        return _rounded(winding_number(vals).raw, "winding", m)
    if n == 3:
        k = 3 if resolution is None else int(resolution)
        verts, faces = icosphere(k)
        pts = center + radius * verts
        vals = np.array([f(p.tolist()) for p in pts], dtype=float)
        _check_sphere(vals, pts)
        u = vals / np.linalg.norm(vals, axis=1)[:, None]
        total = math.fsum(solid_angle(u[a], u[b], u[c]) for a, b, c in faces)
        return _rounded(total / (4 * math.pi), "solid_angle", len(faces))
    raise DegreeError(f"degree computation supports n <= 3 only (got n = {n})")


def _check_sphere(vals, pts):
    norms = np.linalg.norm(vals, axis=1)
    k = int(np.argmin(norms))
    if norms[k] <= SPHERE_ZERO:
        raise VanishingFieldError(f"field vanishes on the sphere near {pts[k].tolist()}")


def equilibrium_index(F, x_star, radius, resolution=None, params=None):
    """Hopf index of an isolated zero: the degree on a small sphere around it."""
    return brouwer_degree(F, x_star, radius, resolution, params)


# ------------------------------------------------------------------ family obstruction


def _probe_fn(probe, param):
    if probe is None:
        return lambda th: [math.cos(th), math.sin(th)]
    if callable(probe):
        return probe
    comps = [c if isinstance(c, ScalarExpr) else parse_scalar(c, 0, (param,)) for c in probe]
    fns = [c.function for c in comps]
    return lambda th: [fn({param: th})([]) for fn in fns]


def family_obstruction_s1(H, probe=None, resolution=256, *, param="theta", params=None):
    """Winding of ``theta -> H(theta)(probe(theta))`` over the circle of parameters.

    A family of GAS planar fields can be deformed to the constant family
    ``-z``, whose winding along the unit-circle probe is 1. So ``w != 1`` shows
    some member is not GAS; ``w = 1`` shows nothing.
    """
    if H.dimension != 2:
        raise DegreeError("the circle-family obstruction needs planar fields (n = 2)")
    if param not in H.params:
        raise DegreeError(f"family has no parameter {param!r}")
    gamma = _probe_fn(probe, param)
    others = dict(params or {})
    thetas = 2 * math.pi * np.arange(int(resolution)) / int(resolution)
    loop = []
    for th in thetas:
        z = gamma(float(th))
        v = H.function({**others, param: float(th)})(list(z))
        if math.hypot(*v) < ZERO_NORM:
            raise VanishingFieldError(f"probe hits a zero of H({th:.4f}) at {list(z)}")
        loop.append(v)
    w = winding_number(loop)
    verdict = "OBSTRUCTED" if w.value != 1 else "NOT-OBSTRUCTED"
    return {
        "winding": w.value,
        "reference": 1,
        "verdict": verdict,
        "degree": w.to_dict(),
        "note": ("winding != 1: some member of the family is not globally asymptotically stable"
                 if w.value != 1 else "winding = 1 is consistent with stability but proves nothing"),
    }
