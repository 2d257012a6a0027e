"""Seeded sample generation and order-preserving parallel evaluation.

Samples are always drawn up front from a counter-based (Philox) stream, so a
result depends only on the seed, never on how evaluation is split across
workers.
"""

from __future__ import annotations

import math
import multiprocessing
import os

import numpy as np


def rng(seed):
    return np.random.Generator(np.random.Philox(int(seed)))


def annulus_samples(n_samples, dimension, r_in, r_out, seed, center=None):
    """Points uniform (in volume) on ``{r_in <= |x - center| <= r_out}``."""
    if not 0 < r_in < r_out:
        raise ValueError("annulus needs 0 < r_in < r_out")
    if n_samples < 1:
        raise ValueError("need at least one sample")
    gen = rng(seed)
    dirs = unit_directions(gen, n_samples, dimension)
    u = gen.random(n_samples)
    radii = (r_in**dimension + u * (r_out**dimension - r_in**dimension)) ** (1.0 / dimension)
    pts = dirs * radii[:, None]
    if center is not None:
        pts = pts + np.asarray(center, dtype=float)
    return pts


def unit_directions(gen, count, dimension):
    v = gen.standard_normal((count, dimension))
    norms = np.linalg.norm(v, axis=1)
    norms[norms == 0] = 1.0
    return v / norms[:, None]


def sphere_points(count, dimension, radius=1.0, center=None, seed=0):
    """Deterministic, roughly even points on a sphere (both points when n = 1)."""
    if dimension == 1:
        pts = np.array([[1.0], [-1.0]])
    elif dimension == 2:
        ang = 2 * math.pi * (np.arange(count) + 0.5) / count
        pts = np.column_stack([np.cos(ang), np.sin(ang)])
    elif dimension == 3:
        i = np.arange(count) + 0.5
        z = 1 - 2 * i / count
        phi = math.pi * (3 - math.sqrt(5)) * i
        r = np.sqrt(1 - z * z)
        pts = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    else:
        pts = unit_directions(rng(seed), count, dimension)
    pts = pts * radius
    if center is not None:
        pts = pts + np.asarray(center, dtype=float)
    return pts


def box_samples(n_samples, lower, upper, seed):
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    gen = rng(seed)
    return lower + (upper - lower) * gen.random((n_samples, len(lower)))


_TASK = None


def _run_index(i):
    fn, items = _TASK
    return fn(items[i])


def pmap(fn, items, threads=1):
    """``[fn(item) for item in items]``, optionally spread over forked workers.

    Order is preserved, so any reduction over the result is independent of
    ``threads``.
    """
    global _TASK
    items = list(items)
    threads = max(1, int(threads or 1))
    if threads == 1 or len(items) < 2 or os.name != "posix":
        return [fn(item) for item in items]
    _TASK = (fn, items)
    try:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(min(threads, len(items))) as pool:
            return pool.map(_run_index, range(len(items)), chunksize=max(1, len(items) // (4 * threads)))
    finally:
        _TASK = None
