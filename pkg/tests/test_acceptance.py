"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

Tolerances pinned here:

* coefficient identities and monotonicity: 1e-9
* transport cost against enumeration: 1e-9 relative
* equality ladder: |margin| <= 4 h, and each halving of h shrinks the worst
  margin by 1.8x unless the finer margin is already below 1e-9
* inequality verdicts: the checkers' default ``1e-9 + 1e-3 |rhs|``
* Minkowski area: 2 h times the perimeter of the averaged square
* falsification: worst margin below -10 tol
* semicontinuity gaps: non-increasing up to 1e-12 roundoff, and <= 1e-3 at n = 16
"""

import contextlib
import math
import time

import numpy as np
import pytest

from curvdim.checkers import (
    check_bm, check_cd, check_mcp, check_sbm, implication_violations,
)
from curvdim.cli import EXIT_FAIL, main, run_config
from curvdim.coefficients import sigma, tau
from curvdim.construction import check_step_construction, semicontinuity_gaps
from curvdim.figure1 import reproduce_figure1
from curvdim.measures import DiscreteMeasure, from_density, step_measure, uniform_on
from curvdim.scenarios import builtin_configs, load_config, run_scenario
from curvdim.spaces import CellSet, Euclidean, Weight, WeightedInterval, build_grid
from curvdim.transport import is_cyclically_monotone, solve_w2

from criteria_log import CRITERIA
from oracles import (
    permutation_ot_cost, sin_bm_margin, sin_cd_margin, sin_mcp_margin, sin_mcp_pieces,
)

LADDER_C = 4.0
LADDER_RATIO = 1.8
EXACT = 1e-9


@contextlib.contextmanager
def criterion(n, title, limit=None):
    """Record the outcome of criterion ``n``; fail it if it exceeds ``limit`` seconds."""
    detail = {}
    start = time.perf_counter()
    try:
        yield detail
        elapsed = time.perf_counter() - start
        if limit is not None:
            assert elapsed < limit, f"took {elapsed:.1f}s, limit {limit}s"
    except BaseException as exc:
        CRITERIA[n] = (title, False, f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
        raise
    else:
        text = ", ".join(f"{k}={v}" for k, v in detail.items())
        CRITERIA[n] = (title, True, f"{text} ({elapsed:.1f}s)")


def box(g, lo, hi):
    q = g.spacing / 4
    return CellSet.from_box(g, np.asarray(lo, dtype=float) + q, np.asarray(hi, dtype=float) - q)


# -- 1 ------------------------------------------------------------------------


def test_criterion_1_coefficients():
    with criterion(1, "coefficient identities and monotonicity in theta", limit=1.0) as d:
        rng = np.random.default_rng(1)
        worst_mono = worst_end = 0.0
        samples = 0
        for _ in range(100):
            K = rng.uniform(-5, 5)
            N = rng.uniform(1.05, 12)
            t = rng.uniform(0, 1, 100)
            # theta range where tau stays finite for K > 0
            cap = math.pi * math.sqrt((N - 1) / K) if K > 0 else 10.0
            th = np.sort(rng.uniform(0, 0.999 * cap, (100, 2)), axis=1)
            lo, hi = tau(K, N, t, th[:, 0]), tau(K, N, t, th[:, 1])
            step = (hi - lo) if K >= 0 else (lo - hi)
            worst_mono = min(worst_mono, float(step.min()))
            s_cap = math.pi * math.sqrt(N / K) if K > 0 else 10.0
            theta = rng.uniform(0, 0.999 * s_cap, 100)
            worst_end = max(
                worst_end,
                float(np.abs(sigma(K, N, 0.0, theta)).max()),
                float(np.abs(sigma(K, N, 1.0, theta) - 1.0).max()),
                float(np.abs(tau(K, N, t, 0.0) - t).max()),
            )
            samples += 100
        assert worst_mono >= -1e-9
        assert worst_end <= 1e-9
        d.update(samples=samples, worst_monotonicity=f"{worst_mono:.1e}", worst_endpoint=f"{worst_end:.1e}")


# -- 2 ------------------------------------------------------------------------


def test_criterion_2_transport_oracle():
    with criterion(2, "exact transport against exhaustive enumeration", limit=10.0) as d:
        rng = np.random.default_rng(2)
        grid = build_grid(Euclidean(2), [(-4, 4), (-4, 4)], 1.0)
        worst = 0.0
        for _ in range(200):
            m, n = rng.integers(1, 7, size=2)
            Q = int(rng.integers(max(m, n), 9))
            a_units = 1 + rng.multinomial(Q - m, np.ones(m) / m)
            b_units = 1 + rng.multinomial(Q - n, np.ones(n) / n)
            P, R = rng.normal(size=(m, 2)), rng.normal(size=(n, 2))
            mu0 = DiscreteMeasure(grid, a_units / Q, points=P)
            mu1 = DiscreteMeasure(grid, b_units / Q, points=R)
            plan = solve_w2(mu0, mu1)
            C = ((P[:, None] - R[None]) ** 2).sum(-1)
            ref = permutation_ot_cost(C, a_units, b_units)
            worst = max(worst, abs(plan.cost - ref) / max(ref, 1e-300))
            assert is_cyclically_monotone(plan, 2) and is_cyclically_monotone(plan, 3)
        assert worst <= 1e-9
        d.update(instances=200, worst_rel_error=f"{worst:.1e}")


# -- 3 ------------------------------------------------------------------------


def _ladder(dim, h):
    sp = Euclidean(dim)
    g = build_grid(sp, [(-0.5, 3.5)] + [(-0.5, 2.5)] * (dim - 1), h)
    shift = [2.0, 0.5][:dim]
    A = box(g, [0] * dim, [1] * dim)
    B = box(g, shift, [1 + s for s in shift])
    x = np.full(dim, -0.25)
    reps = [
        check_cd(sp, uniform_on(A), uniform_on(B), 0.0, dim),
        check_bm(sp, A, B, 0.0, dim),
        check_sbm(sp, A, B, 0.0, dim),
        check_mcp(sp, x, A, 0.0, dim, eps=0.25),
    ]
    return {r.condition: (r.verdict, float(np.abs(r.margins()).max())) for r in reps}


def test_criterion_3_equality_ladder():
    with criterion(3, "Euclidean equality ladder", limit=120.0) as d:
        hs = (0.1, 0.05, 0.025)
        for dim in (1, 2):
            rows = [_ladder(dim, h) for h in hs]
            for cond in ("CD", "BM", "SBM", "MCP"):
                m = [r[cond][1] for r in rows]
                assert all(r[cond][0] for r in rows), (dim, cond)
                assert all(mi <= LADDER_C * h for mi, h in zip(m, hs)), (dim, cond, m)
                for coarse, fine in zip(m, m[1:]):
                    assert fine <= EXACT or coarse / fine >= LADDER_RATIO, (dim, cond, m)
                d[f"R{dim}-{cond}"] = "/".join(f"{v:.1e}" for v in m)


# -- 4 ------------------------------------------------------------------------


def test_criterion_4_minkowski_squares():
    with criterion(4, "Brunn-Minkowski on squares of sides 1 and 2") as d:
        for h in (0.1, 0.05):
            g = build_grid(Euclidean(2), [(-0.5, 5.5), (-0.5, 2.5)], h)
            A, B = box(g, [0, 0], [1, 1]), box(g, [3, 0], [5, 2])
            rep = check_bm(Euclidean(2), A, B, 0.0, 2.0, t_grid=[0.5], Nprime_grid=[2.0])
            area = rep.diagnostics["set_measure"]["0.5"]
            assert abs(area - 2.25) <= 2 * h * 6.0
            assert rep.verdict
            d[f"h={h}"] = f"m(M)={area:.4f},margin={rep.worst_margin:.2e}"


# -- 5 ------------------------------------------------------------------------


def test_criterion_5_falsification(tmp_path):
    with criterion(5, "positive K rejected on flat scenarios", limit=60.0) as d:
        assert main(["run", "falsify_positive_k", "--out", str(tmp_path)]) == EXIT_FAIL
        _, (res,) = run_config("falsify_positive_k")
        for rep in res.reports:
            if rep.condition in ("CD", "BM", "MCP"):
                worst = min(rep.points, key=lambda p: p.margin)
                assert worst.margin < -10 * worst.tol, rep.condition
                d[rep.condition] = f"{worst.margin / worst.tol:.0f}tol"
        d["exit"] = EXIT_FAIL


# -- 6 ------------------------------------------------------------------------

P = math.pi / 100
SIN_PAIRS = [
    ((6, 19), (48, 70)), ((3, 13), (83, 95)), ((16, 48), (51, 92)), ((32, 38), (60, 67)),
    ((2, 10), (11, 25)), ((64, 80), (10, 29)), ((10, 45), (54, 89)), ((38, 48), (48, 60)),
    ((22, 29), (92, 99)), ((5, 92), (32, 41)),
]


def _sin_errors(sp, grid, I0, I1, eps):
    A = CellSet.from_box(grid, [I0[0]], [I0[1]])
    B = CellSet.from_box(grid, [I1[0]], [I1[1]])
    cd = check_cd(sp, uniform_on(A), uniform_on(B), 1.0, 2.0)
    bm = check_bm(sp, A, B, 1.0, 2.0)
    x = 0.5 * (I0[0] + I0[1])
    mcp = check_mcp(sp, sp.from_chart(np.array([x])), B, 1.0, 2.0, eps=eps)
    pieces = sin_mcp_pieces(x, I1, eps)
    ref = {}
    for i, k in enumerate(sorted(pieces)):
        for t in (0.25, 0.5, 0.75):
            ref[(f"piece{i}", t)] = sum(sin_mcp_margin(x, p, 1.0, 2.0, t) for p in pieces[k])
    verdicts = {"CD": cd.verdict, "BM": bm.verdict, "MCP": mcp.verdict}
    errs = {
        "CD": max(abs(p.margin - sin_cd_margin(I0, I1, 1.0, p.Nprime, p.t)) for p in cd.points),
        "BM": max(abs(p.margin - sin_bm_margin(I0, I1, 1.0, p.Nprime, p.t)) for p in bm.points),
        "MCP": max(abs(p.margin - ref[(p.label, p.t)]) for p in mcp.points),
    }
    return verdicts, errs


def test_criterion_6_sin_interval():
    with criterion(6, "interval with sin weight satisfies K=1, N=2") as d:
        sp = WeightedInterval(0.0, math.pi, Weight("sin_power", 1.0))
        coarse, fine = build_grid(sp, None, math.pi / 2000), build_grid(sp, None, math.pi / 4000)
        ratios = {"CD": [], "BM": [], "MCP": []}
        for a, b in SIN_PAIRS:
            I0, I1 = (a[0] * P, a[1] * P), (b[0] * P, b[1] * P)
            v2, e2 = _sin_errors(sp, coarse, I0, I1, 5 * P)
            v4, e4 = _sin_errors(sp, fine, I0, I1, 5 * P)
            assert all(v2.values()), (a, b, v2)
            for cond in ratios:
                # the discrete margin approaches the continuum one
                assert e4[cond] < e2[cond] or e4[cond] <= EXACT, (a, b, cond, e2[cond], e4[cond])
                ratios[cond].append(e2[cond] / max(e4[cond], 1e-16))
        d["pairs"] = len(SIN_PAIRS)
        for cond, r in ratios.items():
            d[f"{cond}_min_error_ratio"] = f"{min(r):.2f}"


# -- 7 ------------------------------------------------------------------------


def test_criterion_7_figure1(tmp_path):
    with criterion(7, "midpoint set versus support, and the split that closes the gap", limit=120.0) as d:
        res = reproduce_figure1(0.025, tmp_path)
        assert res.gap > 10 * res.tol
        assert res.split_ok
        assert all(p["diff"] <= p["tol"] for p in res.pairs)
        assert {p["t"] for p in res.pairs} == {0.25, 0.5, 0.75}
        d.update(m_M=f"{res.m_midpoint:.4f}", m_D=f"{res.m_support:.4f}", gap=f"{res.gap:.3f}", tol=f"{res.tol:.1e}")


# -- 8 ------------------------------------------------------------------------


def test_criterion_8_step_construction():
    with criterion(8, "partition construction and its two estimates", limit=180.0) as d:
        g = build_grid(Euclidean(2), [(-0.5, 3.5), (-0.5, 2.5)], 0.05)
        A1, A2 = box(g, [0, 0], [1, 0.5]), box(g, [0, 0.5], [1, 1])
        B1, B2 = box(g, [2, 1], [3, 1.5]), box(g, [2, 1.5], [3, 2])
        mu0 = step_measure([(A1, 0.3), (A2, 0.7)])
        mu1 = step_measure([(B1, 0.3), (B2, 0.7)])
        rep = check_step_construction(Euclidean(2), mu0, mu1, [A1, A2], [B1, B2], 0.0, 2.0, 0.2)
        diag = rep.diagnostics
        for key in ("partition", "positive_measure", "small_diameter", "source_in_one_piece", "image_in_one_piece"):
            assert diag[key], key
        assert diag["mass_equality_error"] == 0.0
        labels = {p.label for p in rep.points}
        assert labels == {"partition", "entropy", "w2"}
        assert {p.t for p in rep.points if p.label == "w2"} == {0.25, 0.5, 0.75}
        assert rep.verdict
        d.update(parts=diag["parts"], max_diameter=f"{diag['max_diameter']:.3f}",
                 worst_margin=f"{min(p.margin for p in rep.points if p.label != 'partition'):.2e}")


# -- 9 ------------------------------------------------------------------------


def test_criterion_9_implications():
    with criterion(9, "no SBM-without-BM or CD-without-SBM across bundled configs") as d:
        scenarios = 0
        for name in builtin_configs():
            for sc in load_config(name):
                res = run_scenario(sc)
                assert implication_violations(res.reports) == [], (name, sc.name)
                scenarios += 1
        d["scenarios"] = scenarios


# -- 10 -----------------------------------------------------------------------


def _smooth_pair():
    g = build_grid(Euclidean(1), [(0, 4)], 0.005)
    mu0 = from_density(CellSet.from_box(g, [0], [1]), lambda c: 1 + c[:, 0])
    mu1 = from_density(CellSet.from_box(g, [2], [3.5]), lambda c: np.exp(-(c[:, 0] - 2.5) ** 2))
    return mu0, mu1


def _gap_table(K):
    mu0, mu1 = _smooth_pair()
    return {(t, Np): semicontinuity_gaps(mu0, mu1, K, Np, t) for t in (0.25, 0.5, 0.75) for Np in (2.0, 5.0)}


def _trend_holds(gaps):
    return all(b <= a + 1e-12 for a, b in zip(gaps, gaps[1:])) and gaps[-1] <= 1e-3


def test_criterion_10_semicontinuity_trend():
    with criterion(10, "semicontinuity gaps of step approximants (K = -1)") as d:
        table = _gap_table(-1.0)
        for key, gaps in table.items():
            assert _trend_holds(gaps), (key, gaps)
        d["worst_gap_n16"] = f"{max(g[-1] for g in table.values()):.1e}"


@pytest.mark.xfail(strict=True, reason="for K = +1 this pair's gaps rise from n=2 to n=4 and stay above 1e-3 at n=16")
def test_semicontinuity_trend_positive_K_not_monotone():
    table = _gap_table(1.0)
    assert all(_trend_holds(g) for g in table.values())
