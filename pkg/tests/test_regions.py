import numpy as np
import pytest
from hypothesis import given, strategies as st

from reluid.conditions import _RegionTable, boundary_membership
from reluid.domain import DomainSpec
from reluid.network import activation_pattern, eval_g_k, tail_pattern
from reluid.oracle import comparative, example2, example3
from reluid.polytope import Polytope, max_slack_point
from reluid.regions import (BoundaryHyperplane, RegionLimitError, brute_force_cells,
                            enumerate_cells, enumerate_regions, expanded_bbox,
                            first_layer_hyperplanes, layer_stack, pushforward_domain, region_of,
                            tail_stack)

from conftest import random_params

OMEGA = DomainSpec.cube(2, -10, 10)


def frac(x):
    return tuple(float(v) for v in np.ravel(x))


class TestPolytope:
    def test_box_center_and_bounds(self):
        P = Polytope.box([0, -1], [2, 1])
        x, t = P.center()
        assert t == pytest.approx(1.0)
        lo, hi = P.bounds()
        np.testing.assert_allclose(lo, [0, -1], atol=1e-12)
        np.testing.assert_allclose(hi, [2, 1], atol=1e-12)

    def test_empty(self):
        P = Polytope(np.array([[1.0], [-1.0]]), np.array([0.0, -1.0]))
        assert not P.is_feasible()
        assert not P.has_interior()

    def test_slice_and_sample(self, rng):
        P = Polytope.box([-1, -1, -1], [1, 1, 1]).slice([[1.0, 1.0, 0.0]], [0.5])
        xs = P.sample(200, rng)
        np.testing.assert_allclose(xs[:, 0] + xs[:, 1], 0.5, atol=1e-12)
        assert np.all(np.abs(xs) <= 1 + 1e-12)

    def test_vertices_of_triangle(self):
        P = Polytope(np.array([[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]]), np.array([0.0, 0.0, 1.0]))
        V = P.vertices()
        assert sorted(map(tuple, np.round(V, 12))) == [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0)]

    def test_max_slack_point_equality_residual(self):
        A = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        x, t = max_slack_point(A, np.ones(4), np.array([[1.0, -1.0]]), np.array([0.0]))
        assert abs(x[0] - x[1]) <= 1e-12 and t > 0.5


class TestComparativeRegions:
    def test_table(self):
        regions = enumerate_regions(comparative(), 2, OMEGA)
        table = {frac(r.V): frac(r.c)[0] for r in regions}
        assert table == {(0.0, 1.0): 1.0, (1.0, -1.0): -1.0, (-1.0, 2.0): 2.0, (0.0, 0.0): 0.0}

    def test_patterns(self):
        pats = {r.pattern for r in enumerate_regions(comparative(), 2)}
        assert pats == {((1, 1),), ((1, 0),), ((0, 1),), ((0, 0),)}

    def test_region_of_tie(self):
        # M^1 y + b^1 = (0, 4): the tied unit counts as active
        r = region_of(comparative(), 2, [4.0, 3.0])
        assert r.pattern == ((1, 1),)
        assert r.contains([4.0, 3.0])

    def test_region_of_interior(self):
        r = region_of(comparative(), 2, [0.0, -5.0])
        assert r.pattern == ((1, 0),)
        np.testing.assert_array_equal(r.V, [[1.0, -1.0]])

    def test_region_dump(self):
        doc = region_of(comparative(), 2, [0.0, -5.0]).to_document()
        assert set(doc) == {"pattern", "V", "c", "halfspaces"}
        assert {h["sense"] for h in doc["halfspaces"]} <= {"≥", "≤"}

    def test_pushforward_box(self):
        push = pushforward_domain(comparative(), OMEGA, 2)
        assert push.exact
        np.testing.assert_allclose(push.lo, [0, 0], atol=1e-9)
        np.testing.assert_allclose(push.hi, [10, 10], atol=1e-9)

    def test_preimage_boundary_pieces(self, rng):
        # the union of the boundaries of h_2^{-1}(D) is H3- u H3+ u H4- u H4+
        p = comparative()
        regions = enumerate_regions(p, 2, OMEGA)
        layer, table = layer_stack(p, 2), _RegionTable(regions)
        t = rng.uniform(0.1, 9, 30)
        pieces = {
            "H3+": (np.column_stack([t, t - 1]), np.array([1.0, -1.0]) / np.sqrt(2)),
            "H4+": (np.column_stack([t, (t - 2) / 2]), np.array([-1.0, 2.0]) / np.sqrt(5)),
            "H3-": (np.column_stack([np.ones_like(t), -t]), np.array([1.0, 0.0])),
            "H4-": (np.column_stack([2 * np.ones_like(t), -t]), np.array([1.0, 0.0])),
        }
        for name, (ys, normal) in pieces.items():
            # H+ pieces live in the closed quadrant, H- pieces below the x1 axis
            lower = name.endswith("-")
            keep = (ys[:, 1] < -1e-3) if lower else (ys[:, 1] > 1e-3) & (ys[:, 0] > 1e-3)
            ys = ys[np.all(np.abs(ys) < 10, axis=1) & keep]
            assert len(ys) >= 5
            lab = boundary_membership(layer, table, ys, normal, 1e-8, rng)
            assert np.all(lab == 1), name
        off = OMEGA.uniform(200, rng)
        d = np.minimum.reduce([np.abs(off[:, 0] - off[:, 1] - 1) * (off[:, 1] > 0),
                               np.abs(-off[:, 0] + 2 * off[:, 1] + 2) * (off[:, 1] > 0),
                               np.abs(off[:, 0] - 1), np.abs(off[:, 0] - 2)])
        off = off[(d > 1e-2) | ((off[:, 1] < 0) & (np.abs(off[:, 0] - 1) > 1e-2)
                                & (np.abs(off[:, 0] - 2) > 1e-2))]
        off = off[np.abs(off[:, 1]) > 1e-2]
        lab = boundary_membership(layer, table, off, np.array([1.0, 0.0]), 1e-8, rng)
        assert np.all(lab == 0)


class TestEnumeration:
    def test_affine_tail_single_region(self, rng):
        p = random_params(rng, (2, 3, 2, 1))
        regions = enumerate_regions(p, 1)
        assert len(regions) == 1
        np.testing.assert_array_equal(regions[0].V, p.weight(0))
        np.testing.assert_array_equal(regions[0].c, p.bias(0))

    def test_pattern_lookup_matches_g(self, rng):
        p = random_params(rng, (2, 2, 2, 1))
        regions = {r.pattern: r for r in enumerate_regions(p, 2)}
        ys = rng.uniform(-20, 20, (1000, 2))
        for y in ys:
            r = regions.get(tail_pattern(p, 2, y))
            if r is None:  # measure-zero tie on a degenerate pattern
                r = region_of(p, 2, y)
            np.testing.assert_allclose(r.V @ y + r.c, eval_g_k(p, 2, y), rtol=0, atol=1e-10)

    def test_k_out_of_range(self):
        with pytest.raises(IndexError):
            enumerate_regions(comparative(), 3)

    def test_unit_limit(self, rng):
        p = random_params(rng, (2, 5, 5, 5, 5, 5, 1))
        with pytest.raises(RegionLimitError):
            enumerate_regions(p, 5, max_units=16)

    @given(st.integers(0, 5000), st.sampled_from([(2, 3, 2, 1), (3, 3, 3, 1), (2, 2, 2, 2, 1)]))
    def test_affine_pieces_and_coverage(self, seed, widths):
        rng = np.random.default_rng(seed)
        p = random_params(rng, widths)
        k = p.depth - 1
        dom = DomainSpec.cube(p.arch.n_in, -3, 3)
        regions = enumerate_regions(p, k, dom)
        for r in regions:
            ys = r.polytope(clipped=True).sample(100, rng, burn=20, thin=2)
            np.testing.assert_allclose(ys @ r.V.T + r.c, eval_g_k(p, k, ys), rtol=0,
                                       atol=1e-9 * (1 + np.abs(ys).max()))
        push = pushforward_domain(p, dom, k)
        box = expanded_bbox(push.lo, push.hi, 0.0)
        lo, hi = box.bounds()
        ys = rng.uniform(lo, hi, (10000, len(lo)))
        covered = np.zeros(len(ys), dtype=bool)
        for r in regions:
            A, u = r.cell.A, r.cell.u
            covered |= np.all(ys @ A.T - u <= 1e-9 * (1 + np.abs(u)), axis=1)
        assert covered.all()

    @given(st.integers(0, 5000))
    def test_continuity_across_facets(self, seed):
        rng = np.random.default_rng(seed)
        p = random_params(rng, (2, 3, 3, 1))
        regions = enumerate_regions(p, 2)
        for i, r in enumerate(regions):
            for s in regions[i + 1:]:
                for a, c in zip(r.cell.normals, r.cell.offsets):
                    P = r.polytope().slice(a[None, :], [-c]).intersect(s.cell.A, s.cell.u)
                    x, t = max_slack_point(P.A, P.u, P.E, P.e)
                    if x is None or t <= 1e-7:
                        continue
                    ys = P.sample(20, rng, burn=10, thin=2, x0=x)
                    gap = ys @ (r.V - s.V).T + (r.c - s.c)
                    assert np.abs(gap).max() <= 1e-8 * (1 + np.abs(ys).max())


class TestBruteForceOracle:
    @pytest.mark.parametrize("seed", range(6))
    def test_small_stacks(self, seed):
        rng = np.random.default_rng(seed)
        p = random_params(rng, (2, 3, 3, 2, 1))
        stack = tail_stack(p, 3)
        clip = Polytope.box([-8, -8, -8], [8, 8, 8])
        fast = {c.pattern for c in enumerate_cells(stack, clip)}
        slow = {c.pattern for c in brute_force_cells(stack, clip)}
        assert fast == slow


class TestHyperplanes:
    def test_comparative_axes(self):
        hs = first_layer_hyperplanes(comparative())
        np.testing.assert_array_equal([h.a for h in hs], [[1, 0], [0, 1]])
        assert [h.c for h in hs] == [0.0, 0.0]

    def test_example2(self):
        (h,) = first_layer_hyperplanes(example2(1.0))
        assert h.a.tolist() == [1.0] and h.c == 1.0  # x = -1

    def test_unit_norm(self, rng):
        p = random_params(rng, (4, 5, 1))
        for h in first_layer_hyperplanes(p):
            assert abs(np.linalg.norm(h.a) - 1) <= 1e-12
            assert h.oriented

    def test_normalizes_and_compares(self):
        h = BoundaryHyperplane([3.0, 4.0], 5.0)
        np.testing.assert_allclose(h.a, [0.6, 0.8])
        assert h.c == pytest.approx(1.0)
        assert h.same_as(h.flipped())


class TestPushforward:
    def test_k_equals_K(self):
        push = pushforward_domain(comparative(), OMEGA, 3)
        np.testing.assert_array_equal(push.lo, OMEGA.lo)
        np.testing.assert_array_equal(push.hi, OMEGA.hi)

    def test_example3_interval(self):
        push = pushforward_domain(example3(1.0), DomainSpec.cube(1, -10, 10), 2)
        np.testing.assert_allclose([push.lo[0], push.hi[0]], [0.0, 11.0], atol=1e-9)

    def test_sample_fallback_warns(self, rng):
        p = random_params(rng, (7, 3, 2, 1))
        with pytest.warns(UserWarning):
            push = pushforward_domain(p, DomainSpec.cube(7, -1, 1), 2)
        assert not push.exact and push.samples.shape[1] == 3

    def test_image_within_bbox(self, rng):
        p = random_params(rng, (2, 3, 3, 1))
        push = pushforward_domain(p, OMEGA, 2)
        from reluid.network import eval_f_k
        ys = eval_f_k(p, 2, OMEGA.uniform(2000, rng))
        assert np.all(ys >= push.lo - 1e-9) and np.all(ys <= push.hi + 1e-9)


def test_activation_pattern_agrees_with_regions(rng):
    p = comparative()
    for x in OMEGA.uniform(50, rng):
        r = region_of(p, 2, np.maximum(x, 0))
        assert r.pattern == activation_pattern(p, x)[1:]
