import math

import numpy as np
import pytest

from corpus import gas_fields, potentials
from gasflow.conjugacy import (
    ChartError,
    ConjugacyMap,
    LevelSetChart,
    cocycle_defects,
    hartman_grobman,
    hartman_grobman_map,
    morse_map,
    morse_transform,
    squared_distance,
    tau_rho,
    verify_conjugacy,
    verify_squared_norm,
)
from gasflow.expr import parse_scalar, parse_vector
from gasflow.flow import flow_map

NEG2 = parse_vector(["-x1", "-x2"], 2)
CUBE = parse_vector(["-x1^3"], 1)


def chart(n):
    return LevelSetChart(squared_distance(np.zeros(n)))


def test_tau_rho_examples():
    c = chart(2)
    tau, rho = tau_rho(NEG2, c, [2.0, 0.0])
    assert abs(tau - math.log(2)) <= 1e-8 and np.allclose(rho, [1, 0], atol=1e-8)
    tau, rho = tau_rho(NEG2, c, [0.5, 0.0])
    assert abs(tau - math.log(0.5)) <= 1e-8 and np.allclose(rho, [1, 0], atol=1e-8)
    tau, rho = tau_rho(CUBE, chart(1), [2.0])
    assert abs(tau - 0.375) <= 1e-8 and abs(rho[0] - 1) <= 1e-8


def test_tau_rho_on_level_and_at_equilibrium():
    c = chart(2)
    tau, rho = tau_rho(NEG2, c, [0.6, 0.8])
    assert tau == 0.0 and np.allclose(rho, [0.6, 0.8])
    with pytest.raises(ValueError):
        tau_rho(NEG2, c, [0.0, 0.0])


def test_hartman_grobman_identity_for_linear():
    h = hartman_grobman_map(NEG2)
    for x in np.random.default_rng(0).uniform(-4, 4, size=(20, 2)):
        assert np.allclose(h(x), x, rtol=1e-7)
    assert np.array_equal(h([0, 0]), [0, 0])


def test_hartman_grobman_cubic():
    assert abs(hartman_grobman(CUBE, chart(1), [2.0])[0] - math.exp(0.375)) <= 1e-5
    assert hartman_grobman(CUBE, chart(1), [0.0])[0] == 0.0


def test_hartman_grobman_nonzero_off_equilibrium():
    h = hartman_grobman_map(parse_vector(["-x1^3", "-x2"], 2))
    for x in np.random.default_rng(1).uniform(-3, 3, size=(30, 2)):
        assert np.linalg.norm(h(x)) > 0


@pytest.mark.parametrize("name,F", gas_fields())
def test_conjugacy_residual(name, F):
    h = hartman_grobman_map(F)
    stats = verify_conjugacy(F, h, 60, [0.5, 1, 2], 0)
    assert not stats["failures"]
    assert stats["max"] <= 1e-4
    assert h.defect is stats


def test_conjugacy_linear_tight():
    stats = verify_conjugacy(NEG2, hartman_grobman_map(NEG2), 100, [0.5, 1, 2], 0)
    assert stats["max"] <= 1e-6


def test_conjugacy_detects_offset():
    h = hartman_grobman_map(NEG2)
    bad = ConjugacyMap("corrupt", lambda x: h(x) + 0.1, h.chart)
    assert verify_conjugacy(NEG2, bad, 100, [0.5, 1, 2], 0)["max"] >= 0.05


def test_cocycle_identities():
    for F, n in ((CUBE, 1), (parse_vector(["-x1 - 5*x2", "5*x1 - x2"], 2), 2)):
        d = cocycle_defects(F, chart(n), 30, [0.3, 1.0, 2.5], 0)
        assert d["tau"] <= 1e-5 and d["rho"] <= 1e-5


def test_continuity_across_level():
    F = parse_vector(["-x1^3", "-x2"], 2)
    h = hartman_grobman_map(F)
    for d in np.random.default_rng(2).standard_normal((20, 2)):
        d /= np.linalg.norm(d)
        assert np.linalg.norm(h((1 + 1e-4) * d) - h((1 - 1e-4) * d)) <= 1e-3


def test_equivariance_at_shifted_equilibrium():
    F = parse_vector(["-(x1 - 1)", "-(x2 + 2)"], 2)
    h = hartman_grobman_map(F, x_eq=[1, -2])
    x = np.array([2.5, -1.0])
    assert np.allclose(h(x), x - [1, -2], rtol=1e-7)
    y = flow_map(F, x, 0.7)
    assert np.allclose(h(y), math.exp(-0.7) * h(x), rtol=1e-6)


# -------------------------------------------------------------- charts


def test_star_shaped_check_passes_on_convex():
    c = LevelSetChart(parse_scalar("x1^2 + 4*x2^4", 2), equilibrium=[0, 0])
    assert c.star_shaped["passed"] and c.star_shaped["rays"] == 500


def test_star_shaped_check_fails_on_multiple_crossings():
    # a ripple outside the unit circle re-enters the sublevel set
    V = parse_scalar("(x1^2 + x2^2) * (1 + 0.9*sin(6*(x1^2 + x2^2)))", 2)
    c = LevelSetChart(V, equilibrium=[0, 0])
    assert not c.star_shaped["passed"]
    with pytest.raises(ChartError):
        hartman_grobman_map(NEG2, c)


def test_unchecked_chart_is_rejected():
    c = LevelSetChart(squared_distance([0, 0]), check=False)
    with pytest.raises(ChartError):
        c.require()


def test_chart_projection():
    c = LevelSetChart(squared_distance([1, 1]))
    assert np.allclose(c.project([4, 5]), [0.6, 0.8])


# -------------------------------------------------------------- Morse transform


def test_morse_quadratic_identity():
    V = parse_scalar("x1^2 + x2^2", 2)
    h = morse_map(V)
    for x in np.random.default_rng(3).uniform(-3, 3, size=(20, 2)):
        assert np.allclose(h(x), x, rtol=1e-8)
    assert verify_squared_norm(V, h, 200, 0)["max"] <= 1e-10


def test_morse_quartic_value():
    V = parse_scalar("x1^2 + x1^4", 1)
    c = LevelSetChart(V, equilibrium=[0])
    assert abs(morse_transform(V, c, [1.0])[0] - math.sqrt(2)) <= 1e-6
    assert morse_transform(V, c, [0.0])[0] == 0.0
    assert morse_transform(V, c, [-1.0])[0] < 0


@pytest.mark.parametrize("name,V", potentials())
def test_morse_squared_norm(name, V):
    h = morse_map(V)
    assert h.chart.star_shaped["passed"]
    stats = verify_squared_norm(V, h, 200, 0, annulus=(0.1, 3))
    assert not stats["failures"] and stats["max"] <= 1e-6


def test_morse_detects_scaling():
    V = parse_scalar("x1^2 + x1^4", 1)
    h = morse_map(V)
    bad = ConjugacyMap("corrupt", lambda x: 1.01 * h(x), h.chart)
    r = verify_squared_norm(V, bad, 200, 0)["max"]
    assert 0.01 <= r <= 0.0201
