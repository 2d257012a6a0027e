"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line."""

import io
import math
import time

import numpy as np
import pytest

from corpus import SMOOTH, gas_fields, potentials
from gasflow import cli
from gasflow.conjugacy import hartman_grobman_map, morse_map, verify_conjugacy, verify_squared_norm
from gasflow.degree import brouwer_degree, family_obstruction_s1, winding_number
from gasflow.expr import eval_jet, parse_scalar, parse_vector
from gasflow.homotopy import (
    BlowupRetraction,
    check_admissibility,
    endpoint_fidelity,
    matrix_contractions,
    sontag_family,
)
from gasflow.lyapunov import massera_lyapunov, verify_certificate
from gasflow.stability import check_family_attraction, local_stability_check, replay_family_witness
from test_cli import cfg


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail, elapsed, budget=None):
        within = budget is None or elapsed < budget
        status = "PASS" if ok and within else "FAIL"
        limit = "" if budget is None else f" / budget {budget:g} s"
        with capsys.disabled():
            print(f"\n[{status}] criterion {number}: {title}: {detail} ({elapsed:.1f} s{limit})")
        assert ok, detail
        assert within, f"took {elapsed:.1f} s, budget {budget} s"
    return emit


def test_criterion_1_conjugacy(report):
    start = time.perf_counter()
    worst, failures = {}, 0
    for name, F in gas_fields():
        stats = verify_conjugacy(F, hartman_grobman_map(F), 500, [0.5, 1, 2], 0,
                                 annulus=(0.1, 5.0))
        worst[name] = stats["max"]
        failures += len(stats["failures"])
    top = max(worst.values())
    ok = failures == 0 and top <= 1e-4
    report(1, "conjugacy suite", ok,
           f"max relative residual {top:.2e} (tol 1e-4) over {len(worst)} fields, "
           f"{failures} failed samples", time.perf_counter() - start, 60)


def test_criterion_2_morse(report):
    start = time.perf_counter()
    worst, star = 0.0, True
    for name, V in potentials():
        h = morse_map(V)
        star = star and h.chart.star_shaped["passed"]
        stats = verify_squared_norm(V, h, 500, 0)
        if stats["failures"]:
            star = False
        worst = max(worst, stats["max"])
    report(2, "Morse identity suite", star and worst <= 1e-6,
           f"max |V - |h|^2| residual {worst:.2e} (tol 1e-6), star-shaped charts: {star}",
           time.perf_counter() - start, 30)


def test_criterion_3_degree(report):
    start = time.perf_counter()
    notes = []
    ok = True
    for n in (1, 2, 3):
        ident = parse_vector([f"x{i + 1}" for i in range(n)], n)
        neg = parse_vector([f"-x{i + 1}" for i in range(n)], n)
        d_id = brouwer_degree(ident, np.zeros(n), 1.0).value
        d_neg = brouwer_degree(neg, np.zeros(n), 1.0).value
        ok = ok and d_id == 1 and d_neg == (-1) ** n
        notes.append(f"n={n}: deg id {d_id}, deg -x {d_neg}")
    m = 256
    loop = [(math.cos(2 * 2 * math.pi * k / m), math.sin(2 * 2 * math.pi * k / m)) for k in range(m)]
    w = winding_number(loop)
    ok = ok and w.value == 2 and w.residual < 1e-9
    rot = ["cos(theta)*x1 - sin(theta)*x2", "sin(theta)*x1 + cos(theta)*x2"]
    families = [
        (rot, "OBSTRUCTED", 2),
        (["-x1 + 0*theta", "-x2"], "NOT-OBSTRUCTED", 1),
        (["-(" + rot[0] + ")", "-(" + rot[1] + ")"], "OBSTRUCTED", 2),
    ]
    for srcs, verdict, wind in families:
        r = family_obstruction_s1(parse_vector(srcs, 2, params=("theta",)))
        ok = ok and r["verdict"] == verdict and r["winding"] == wind
        notes.append(f"{r['verdict']} w={r['winding']}")
    report(3, "degree and winding", ok, f"{'; '.join(notes)}; theta^2 winding {w.value}",
           time.perf_counter() - start, 5)


def test_criterion_4_sontag(report):
    start = time.perf_counter()
    ok = True
    notes = []
    for label, F in (("-x", parse_vector(["-x1", "-x2"], 2)), ("-x^3", parse_vector(["-x1^3"], 1))):
        H = sontag_family(F)
        rep = check_admissibility(H, (0.1, 5.0), 21, 1000, seed=0)
        gap = min(rep.zero_gap) if all(g is not None for g in rep.zero_gap) else 0.0
        e0, e1 = endpoint_fidelity(H, 200, 0, (0.1, 5.0))
        ok = ok and rep.passed and gap > 0 and max(e0, e1) <= 1e-6
        notes.append(f"{label}: min zero_gap {gap:.3g}, endpoint errors {e0:.1e}/{e1:.1e}")
    report(4, "nullhomotopy admissibility", ok, "; ".join(notes), time.perf_counter() - start, 60)


def test_criterion_5_massera(report):
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    worst, cert_ok, margins = 0.0, True, []
    for name, F in gas_fields():
        n = F.dimension
        V = massera_lyapunov(F, np.zeros(n))
        for x in rng.uniform(-3, 3, size=(100, n)):
            lhs, rhs = V.orbital_identity(x)
            worst = max(worst, abs(lhs - rhs) / (1 + float(x @ x)))
        cert = verify_certificate(V, F, (0.1, 3.0), 150, 0)
        cert_ok = cert_ok and cert.passed
        margins.append(cert.decrease_margin)
    rejects = []
    for srcs in (["x1", "x2"], ["x2", "-x1"]):
        F = parse_vector(srcs, 2)
        cert = verify_certificate(massera_lyapunov(F, [0, 0]), F, (0.1, 3.0), 50, 0)
        rejects.append(cert.verdict == "fail")
    ok = worst <= 1e-5 and cert_ok and all(rejects)
    report(5, "Massera and certificates", ok,
           f"orbital identity residual {worst:.2e} (tol 1e-5); GAS certificates pass: {cert_ok} "
           f"(min margin {min(margins):.3g}); +x and center rejected: {all(rejects)}",
           time.perf_counter() - start, 60)


HESSIANS = {
    "sq_2d": [[2, 0], [0, 2]],
    "quartic_1d": [[2]],
    "aniso_2d": [[2, 0], [0, 0]],
    "bowl_2d": [[2, 0], [0, 0]],
}


def _random_hurwitz(rng, n):
    A = 2 * rng.standard_normal((n, n))
    return A - (np.max(np.linalg.eigvals(A).real) + rng.uniform(0.01, 1)) * np.eye(n)


def _random_pds(rng, n):
    B = rng.standard_normal((n, n))
    return B @ B.T + rng.uniform(0.01, 1) * np.eye(n)


def test_criterion_6_blowup_retractions(report):
    start = time.perf_counter()
    hess_err, limit_err = 0.0, 0.0
    rng = np.random.default_rng(0)
    for name, V in potentials():
        R = BlowupRetraction(V)
        hess_err = max(hess_err, float(np.max(np.abs(R.D - np.asarray(HESSIANS[name])))))
        for _ in range(1000):
            x = rng.standard_normal(V.dimension)
            x *= rng.random() ** (1 / V.dimension) / np.linalg.norm(x)
            hess_err = max(hess_err, abs(R.value(1.0, x.tolist()) - 0.5 * x @ R.D @ x))
            limit_err = max(limit_err, abs(R.value(0.999, x.tolist()) - R.value(1.0, x.tolist())))
    classes_ok = True
    for _ in range(100):
        n = int(rng.integers(1, 6))
        A, P = _random_hurwitz(rng, n), _random_pds(rng, n)
        for t in (0.25, 0.5, 0.75, 1.0):
            classes_ok &= bool(np.max(np.linalg.eigvals(matrix_contractions(A, t, "hurwitz")).real) < 0)
            classes_ok &= bool(np.min(np.linalg.eigvalsh(matrix_contractions(P, t, "pds"))) > 0)
    ok = hess_err <= 1e-10 and limit_err <= 1e-2 and classes_ok
    report(6, "blow-up retractions", ok,
           f"Hessian mismatch {hess_err:.1e} (tol 1e-10); |H_0.999 - H_1| {limit_err:.2e} (tol 1e-2); "
           f"class membership kept: {classes_ok}", time.perf_counter() - start, 30)


def test_criterion_7_family(report):
    start = time.perf_counter()
    H = parse_vector(["t^4*x1 - x1^3"], 1, params=("t",))
    rep = check_family_attraction(H, ["t^2"], 0.05, 40, 2e4, 1e-3, seed=0, t_range=(0.1, 0.5))
    replayed = [w for w in rep.witnesses
                if w["dist_to_Z"] is not None and w["dist_to_Z"] > 1e-3
                and replay_family_witness(H, w, ["t^2"], 2e4, 1e-3)]
    local = {}
    for t in (0.25, 0.5, 1.0):
        F = parse_vector([f"{t**4!r}*x1 - x1^3"], 1)
        local[t] = local_stability_check(F, [t * t], min(1e-2, t * t / 2))["verdict"]
    ok = rep.verdict == "not-attracting" and bool(replayed) and all(v == "pass" for v in local.values())
    best = max((w["dist_to_Z"] for w in replayed), default=float("nan"))
    report(7, "family attraction", ok,
           f"verdict {rep.verdict}, {len(replayed)} replayed witnesses (max dist to Z {best:.3g}); "
           f"local checks {local}", time.perf_counter() - start, 30)


def _richardson(f, x, i, h=1e-3):
    def central(h):
        xp, xm = list(x), list(x)
        xp[i] += h
        xm[i] -= h
        return (f(xp) - f(xm)) / (2 * h)
    return (4 * central(h / 2) - central(h)) / 3


def test_criterion_8_ad(report):
    start = time.perf_counter()
    wg = wh = 0.0
    for src, n in SMOOTH:
        e = parse_scalar(src, n)
        f, gf = e.function(), e.gradient_function()
        rng = np.random.default_rng(8)
        for x in rng.uniform(-1.5, 1.5, size=(100, n)):
            jet = eval_jet(e, x, order=2)
            g, Hs = np.asarray(jet.grad), np.asarray(jet.hess)
            xl = x.tolist()
            fd = np.array([_richardson(f, xl, i) for i in range(n)])
            hfd = np.array([[_richardson(lambda y, k=k: gf(y)[1][k], xl, i) for i in range(n)]
                            for k in range(n)])
            wg = max(wg, float(np.linalg.norm(g - fd) / np.linalg.norm(g)))
            wh = max(wh, float(np.linalg.norm(Hs - hfd) / np.linalg.norm(Hs)))
    report(8, "AD correctness", wg <= 1e-6 and wh <= 1e-5,
           f"max relative gradient error {wg:.1e} (tol 1e-6), Hessian {wh:.1e} (tol 1e-5) "
           f"over {len(SMOOTH)} expressions x 100 points", time.perf_counter() - start, 5)


def _run(argv):
    out = io.StringIO()
    code = cli.run(argv, out, io.StringIO())
    return code, out.getvalue().encode()


def test_criterion_9_determinism(report):
    runs = [
        ["check-gas", "--system", cfg("spiral.json"), "--samples", "40"],
        ["check-gas", "--system", cfg("lin2d.json"), "--samples", "20", "--certificate"],
        ["lyapunov", "--system", cfg("cubic1d.json"), "--samples", "40", "--horizon", "10"],
        ["homotopy", "--kind", "sontag", "--from", cfg("cubic1d.json"), "--verify", "--samples", "60"],
        ["homotopy", "--kind", "continuation", "--from", cfg("neg1d.json"),
         "--to", cfg("cubic_plus_linear.json"), "--verify"],
        ["linearize", "--system", cfg("spiral.json"), "--check", "--samples", "30"],
        ["morse", "--system", cfg("bowl.json"), "--check", "--samples", "60"],
        ["degree", "--system", cfg("spiral.json")],
        ["obstruct", "--family", cfg("rot.json")],
        ["family-check", "--family", cfg("pitchfork_family.json"), "--samples", "16"],
    ]
    start = time.perf_counter()
    same = []
    for argv in runs:
        argv = argv + ["--seed", "7"]
        a = _run(argv + ["--threads", "1"])
        b = _run(argv + ["--threads", "1"])
        c = _run(argv + ["--threads", "8"])
        same.append(a[0] in (0, 2) and a == b == c)
    ok = all(same)
    report(9, "determinism", ok,
           f"{sum(same)}/{len(same)} seeded reports byte-identical across repeat runs and "
           f"--threads 1 vs 8", time.perf_counter() - start)
