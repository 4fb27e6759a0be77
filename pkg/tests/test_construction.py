import math

import numpy as np
import pytest

from curvdim.checkers import t_functional
from curvdim.construction import (
    check_step_construction, entropy_bound, partition_images, partition_properties,
    refine_partition, semicontinuity_gaps, step_approximation, step_midpoint_approximation,
    support_diameter, w2_bound,
)
from curvdim.errors import DomainError, PlanError, ResolutionError
from curvdim.measures import (
    from_density, level_count, renyi_entropy, step_measure, total_variation, uniform_on,
)
from curvdim.spaces import CellSet, Euclidean, build_grid
from curvdim.transport import solve_w2

E2 = Euclidean(2)


def box(g, lo, hi):
    q = g.spacing / 4
    return CellSet.from_box(g, np.asarray(lo) + q, np.asarray(hi) - q)


@pytest.fixture(scope="module")
def setup():
    g = build_grid(E2, [(-0.5, 3.5), (-0.5, 2.5)], 0.1)
    A1, A2 = box(g, [0, 0], [1, 0.5]), box(g, [0, 0.5], [1, 1])
    B1, B2 = box(g, [2, 1], [3, 1.5]), box(g, [2, 1.5], [3, 2])
    mu0 = step_measure([(A1, 0.3), (A2, 0.7)])
    mu1 = step_measure([(B1, 0.3), (B2, 0.7)])
    return g, mu0, mu1, [A1, A2], [B1, B2], solve_w2(mu0, mu1)


class TestRefinePartition:
    def test_properties_hold(self, setup):
        g, mu0, mu1, P0, P1, plan = setup
        parts = refine_partition(plan, P0, P1, 0.4)
        props = partition_properties(plan, parts, P0, P1, 0.4)
        for key in ("partition", "positive_measure", "small_diameter", "source_in_one_piece", "image_in_one_piece"):
            assert props[key], key
        assert props["mass_equality_error"] < 1e-12
        assert props["max_diameter"] < 0.4

    def test_smaller_eps_gives_more_parts(self, setup):
        g, mu0, mu1, P0, P1, plan = setup
        assert len(refine_partition(plan, P0, P1, 0.3)) > len(refine_partition(plan, P0, P1, 0.6))

    def test_images_are_translates(self, setup):
        g, mu0, mu1, P0, P1, plan = setup
        parts = refine_partition(plan, P0, P1, 0.5)
        for P, Q in zip(parts, partition_images(plan, parts)):
            assert np.allclose(np.sort(Q.points(), axis=0), np.sort(P.points() + [2, 1], axis=0))

    def test_deterministic(self, setup):
        g, mu0, mu1, P0, P1, plan = setup
        a = refine_partition(plan, P0, P1, 0.35)
        b = refine_partition(plan, P0, P1, 0.35)
        assert a == b

    def test_eps_below_cell_diagonal(self, setup):
        g, mu0, mu1, P0, P1, plan = setup
        with pytest.raises(ResolutionError):
            refine_partition(plan, P0, P1, 0.1)
        with pytest.raises(DomainError):
            refine_partition(plan, P0, P1, -1.0)

    def test_split_mass_rejected(self):
        g = build_grid(E2, [(0, 2), (0, 1)], 0.5)
        mu0 = uniform_on(CellSet(g, [0]))
        mu1 = uniform_on(CellSet(g, [6, 7]))
        plan = solve_w2(mu0, mu1)
        with pytest.raises(PlanError):
            refine_partition(plan, [CellSet(g, [0])], [CellSet(g, [6, 7])], 5.0)


class TestStepMidpoint:
    def test_translate_is_exact(self, setup):
        g, mu0, mu1, P0, P1, plan = setup
        parts = refine_partition(plan, P0, P1, 0.4)
        for s in (0.5, 0.7):
            info = step_midpoint_approximation(E2, plan, parts, s, return_info=True)
            assert info.measure.masses.sum() == pytest.approx(1.0, abs=1e-12)
            assert info.overlap_cells == 0
            # translating the step measure by s*(2, 1) lands on grid cells at s = 0.5 and 0.7
            A1s, A2s = box(g, [2 * s, s], [1 + 2 * s, 0.5 + s]), box(g, [2 * s, 0.5 + s], [1 + 2 * s, 1 + s])
            assert total_variation(info.measure, step_measure([(A1s, 0.3), (A2s, 0.7)])) < 1e-12

    def test_entropy_below_shifted_bound(self, setup):
        g, mu0, mu1, P0, P1, plan = setup
        parts = refine_partition(plan, P0, P1, 0.3)
        mu = step_midpoint_approximation(E2, plan, parts, 0.5)
        for K in (0.0, -1.0):
            assert renyi_entropy(mu, 2.0) <= entropy_bound(plan, K, 2.0, 0.5, 0.3) + 1e-12

    def test_wrong_space(self, setup):
        g, mu0, mu1, P0, P1, plan = setup
        with pytest.raises(DomainError):
            step_midpoint_approximation(Euclidean(3), plan, [], 0.5)


class TestBounds:
    def test_w2_bound_formula(self):
        assert w2_bound(0.1, 0.5, 3.0, 2.0) == pytest.approx(0.09 + 0.9 + 0.5)

    def test_entropy_bound_is_shifted_functional(self, setup):
        plan = setup[-1]
        assert entropy_bound(plan, 1.0, 2.0, 0.5, 0.2) == t_functional(plan, 1.0, 2.0, 0.5, shift=0.2)

    def test_support_diameter(self, setup):
        g, mu0, mu1 = setup[:3]
        # the hull of [0,1]x[0,1] and [2,3]x[1,2] has diameter |(3,2)-(0,0)|
        assert support_diameter(mu0, mu1) == pytest.approx(math.hypot(3, 2))


class TestStepApproximation:
    def smooth(self):
        g = build_grid(E2, [(0, 1), (0, 1)], 0.05)
        return from_density(box(g, [0, 0], [1, 1]), lambda c: 1 + c[:, 0] + c[:, 1] ** 2)

    def test_level_count(self):
        mu = self.smooth()
        for n in (1, 2, 4, 8):
            assert level_count(step_approximation(mu, n)) <= n

    def test_already_stepped_unchanged(self, setup):
        mu0 = setup[1]
        assert step_approximation(mu0, 2) is mu0

    def test_error_monotone_along_dyadic_n(self):
        mu = self.smooth()
        errs = [total_variation(mu, step_approximation(mu, n)) for n in (1, 2, 4, 8, 16)]
        assert all(b <= a + 1e-15 for a, b in zip(errs, errs[1:]))
        assert errs[-1] < 0.05

    def test_linear_density_error_halves(self):
        g = build_grid(Euclidean(1), [(0, 1)], 0.0005)
        mu = from_density(CellSet.from_box(g, [0], [1]), lambda c: 1 + c[:, 0])
        errs = [total_variation(mu, step_approximation(mu, n)) for n in (2, 4, 8, 16)]
        for a, b in zip(errs, errs[1:]):
            assert a / b == pytest.approx(2.0, rel=0.01)

    def test_bad_n(self):
        with pytest.raises(DomainError):
            step_approximation(self.smooth(), 0)

    def test_gaps_shrink_for_negative_curvature(self):
        g = build_grid(E2, [(-0.5, 3.5), (-0.5, 1.5)], 0.1)
        mu0 = from_density(box(g, [0, 0], [1, 1]), lambda c: 1 + c[:, 0])
        mu1 = from_density(box(g, [2, 0], [3, 1]), lambda c: 2 - c[:, 1])
        gaps = semicontinuity_gaps(mu0, mu1, -1.0, 2.0, 0.5, ns=(2, 4, 8))
        assert all(b <= a for a, b in zip(gaps, gaps[1:]))
        assert gaps[-1] < 1e-2


class TestCheckStepConstruction:
    def test_passes_on_translated_step_measure(self, setup):
        g, mu0, mu1, P0, P1, _ = setup
        for K in (0.0, -1.0):
            rep = check_step_construction(E2, mu0, mu1, P0, P1, K, 2.0, 0.2)
            assert rep.verdict
            labels = {p.label for p in rep.points}
            assert labels == {"partition", "entropy", "w2"}
            assert rep.diagnostics["small_diameter"]
