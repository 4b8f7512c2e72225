import numpy as np
import pytest

from vqreg import (
    DiscreteCVQF,
    ShapeError,
    SizeLimitError,
    alpha_contour,
    decode_potential,
    invert_cvqf,
    invert_cvqf_many,
    make_grid,
    separable_cvqf,
)
from vqreg.cvqf import snap_alpha
from vqreg.metrics import mv_fraction


class TestMakeGrid:
    def test_1d_levels(self):
        grid = make_grid(4, 1)
        np.testing.assert_allclose(grid.levels[:, 0], [0.25, 0.5, 0.75, 1.0])

    def test_2d_ordering_last_axis_fastest(self):
        grid = make_grid(2, 2)
        expected = np.array([[0.5, 0.5], [0.5, 1.0], [1.0, 0.5], [1.0, 1.0]])
        np.testing.assert_allclose(grid.levels, expected)

    def test_degenerate_single_point(self):
        grid = make_grid(1, 3)
        np.testing.assert_allclose(grid.levels, [[1.0, 1.0, 1.0]])

    @pytest.mark.parametrize("T,d", [(3, 2), (5, 1), (2, 3)])
    def test_invariants(self, T, d):
        grid = make_grid(T, d)
        assert grid.levels.shape == (T**d, d)
        assert len(np.unique(grid.levels, axis=0)) == T**d
        m = grid.levels * T
        np.testing.assert_allclose(m, np.rint(m))
        assert grid.levels.min() >= 1.0 / T - 1e-12
        assert grid.levels.max() <= 1.0 + 1e-12

    def test_ordering_is_deterministic(self):
        a, b = make_grid(4, 2), make_grid(4, 2)
        np.testing.assert_array_equal(a.levels, b.levels)

    def test_size_guard(self):
        with pytest.raises(SizeLimitError):
            make_grid(1000, 4)

    def test_bad_args(self):
        with pytest.raises(ShapeError):
            make_grid(0, 1)
        with pytest.raises(ShapeError):
            make_grid(3, 0)


class TestDecodePotential:
    def test_identity_potential(self):
        grid = make_grid(4, 1)
        out = decode_potential(grid.levels[:, 0], grid)
        np.testing.assert_allclose(out.values[:, 0], np.ones(4))

    def test_constant_potential(self):
        grid = make_grid(4, 1)
        out = decode_potential(np.full(4, 3.7), grid)
        np.testing.assert_allclose(out.values, np.zeros((4, 1)))

    def test_2d_quadratic_gradient(self):
        # f(u) = u1^2 + 2*u2: finite differences against the analytic gradient
        grid = make_grid(3, 2)
        f = grid.levels[:, 0] ** 2 + 2.0 * grid.levels[:, 1]
        out = decode_potential(f, grid)
        err0 = np.abs(out.values[:, 0] - 2.0 * grid.levels[:, 0])
        assert err0.max() <= 1.0 / grid.T + 1e-12
        np.testing.assert_allclose(out.values[:, 1], 2.0, atol=1e-12)

    def test_linearity(self):
        grid = make_grid(3, 2)
        rng = np.random.default_rng(0)
        f, g = rng.normal(size=9), rng.normal(size=9)
        a, b = 1.7, -0.4
        combined = decode_potential(a * f + b * g, grid).values
        separate = a * decode_potential(f, grid).values + b * decode_potential(g, grid).values
        np.testing.assert_allclose(combined, separate, atol=1e-12)

    @pytest.mark.parametrize("seed", range(4))
    def test_separable_convex_potential_is_comonotone(self, seed):
        # separable convex f: per-axis differences stay monotone exactly;
        # non-separable cross-curvature can violate co-monotonicity on
        # boundary-corner pairs by O(1/T^2), which is what rearrangement fixes
        grid = make_grid(4, 2)
        rng = np.random.default_rng(seed)
        w = rng.uniform(0.5, 2.0, size=(2, 2))
        f = (
            w[0, 0] * grid.levels[:, 0] ** 2 + w[0, 1] * np.exp(grid.levels[:, 0])
            + w[1, 0] * grid.levels[:, 1] ** 2 + w[1, 1] * np.exp(grid.levels[:, 1])
        )
        out = decode_potential(f, grid)
        u, q = grid.levels, out.values
        pair = (u[:, None, :] - u[None, :, :]) * (q[:, None, :] - q[None, :, :])
        assert pair.sum(axis=2).min() >= -1e-9

    @pytest.mark.parametrize("seed", range(3))
    def test_convex_1d_potential_is_comonotone(self, seed):
        grid = make_grid(9, 1)
        rng = np.random.default_rng(seed)
        a, b, c = rng.uniform(0.1, 2.0, size=3)
        u = grid.levels[:, 0]
        out = decode_potential(a * u**2 + b * np.exp(u) - c * u, grid)
        assert np.diff(out.values[:, 0]).min() >= -1e-12

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            decode_potential(np.zeros(5), make_grid(2, 2))

    def test_single_level_grid(self):
        grid = make_grid(1, 2)
        out = decode_potential(np.array([2.0]), grid)
        np.testing.assert_allclose(out.values, [[0.0, 0.0]])


class TestAlphaContour:
    def test_1d_interval_endpoints(self):
        grid = make_grid(4, 1)
        cvqf = DiscreteCVQF(grid=grid, values=grid.levels.copy())
        spec, pts = alpha_contour(cvqf, 0.25)
        np.testing.assert_allclose(np.sort(grid.levels[spec.indices, 0]), [0.25, 0.75])
        assert len(spec.indices) == 2
        np.testing.assert_allclose(np.sort(pts[:, 0]), [0.25, 0.75])

    def test_2d_boundary_lattice(self):
        grid = make_grid(4, 2)
        cvqf = DiscreteCVQF(grid=grid, values=grid.levels.copy())
        spec, _ = alpha_contour(cvqf, 0.25)
        assert len(spec.indices) == 8
        # independent enumeration straight from the level-set definition
        expected = []
        for i, u in enumerate(grid.levels):
            for axis in range(2):
                off = u[1 - axis]
                if np.isclose(off, 0.25) or np.isclose(off, 0.75):
                    if 0.25 - 1e-12 <= u[axis] <= 0.75 + 1e-12:
                        expected.append(i)
                        break
        np.testing.assert_array_equal(spec.indices, sorted(set(expected)))

    def test_contour_coordinates_invariant(self):
        grid = make_grid(5, 2)
        cvqf = DiscreteCVQF(grid=grid, values=grid.levels.copy())
        spec, _ = alpha_contour(cvqf, 0.21)
        lo, hi = spec.alpha, 1.0 - spec.alpha
        for u in grid.levels[spec.indices]:
            on_edge = np.isclose(u, lo) | np.isclose(u, hi)
            assert on_edge.sum() >= 1
            assert ((u >= lo - 1e-12) & (u <= hi + 1e-12)).all()

    @pytest.mark.parametrize("T", [4, 7, 10])
    def test_2d_size_bound(self, T):
        grid = make_grid(T, 2)
        cvqf = DiscreteCVQF(grid=grid, values=grid.levels.copy())
        spec, _ = alpha_contour(cvqf, 1.0 / T)
        assert len(spec.indices) <= 4 * T - 4

    def test_alpha_domain(self):
        grid = make_grid(4, 1)
        cvqf = DiscreteCVQF(grid=grid, values=grid.levels.copy())
        for bad in (0.0, 0.5, -0.1, 0.9):
            with pytest.raises(ShapeError):
                alpha_contour(cvqf, bad)

    def test_snap_ties_toward_smaller(self):
        # alpha exactly between 1/4 and 2/4 snaps down
        assert snap_alpha(0.375, 4) == 0.25
        assert snap_alpha(0.3, 10) == 0.3
        assert snap_alpha(0.01, 4) == 0.25


class TestInvertCvqf:
    def _cvqf(self, values):
        T = values.shape[0]
        return DiscreteCVQF(grid=make_grid(T, 1), values=values)

    def test_exact_row(self):
        rng = np.random.default_rng(1)
        vals = rng.normal(size=(12, 1))
        cvqf = self._cvqf(vals)
        assert invert_cvqf(cvqf, vals[7]) == 7

    def test_tie_breaks_to_smallest_index(self):
        vals = np.zeros((12, 1))
        vals[:, 0] = np.arange(12)
        vals[3, 0] = 5.0
        vals[9, 0] = 5.0
        cvqf = self._cvqf(vals)
        assert invert_cvqf(cvqf, np.array([5.0])) == 3

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_exhaustive_scan(self, seed):
        rng = np.random.default_rng(seed)
        grid = make_grid(3, 2)
        vals = rng.normal(size=(9, 2))
        cvqf = DiscreteCVQF(grid=grid, values=vals)
        ys = rng.normal(size=(20, 2))
        for y in ys:
            brute = min(range(9), key=lambda i: (np.sum((vals[i] - y) ** 2), i))
            assert invert_cvqf(cvqf, y) == brute
        np.testing.assert_array_equal(
            invert_cvqf_many(cvqf, ys),
            [invert_cvqf(cvqf, y) for y in ys],
        )

    def test_roundtrip_on_unique_rows(self):
        rng = np.random.default_rng(2)
        grid = make_grid(3, 2)
        vals = rng.normal(size=(9, 2))
        cvqf = DiscreteCVQF(grid=grid, values=vals)
        for i in range(9):
            assert invert_cvqf(cvqf, vals[i]) == i


class TestSeparableCvqf:
    def _identity_1d(self, T):
        grid = make_grid(T, 1)
        return DiscreteCVQF(grid=grid, values=grid.levels.copy())

    def test_identity_components_give_grid(self):
        out = separable_cvqf([self._identity_1d(4), self._identity_1d(4)])
        np.testing.assert_allclose(out.values, out.grid.levels)

    def test_matches_per_coordinate_lookup(self):
        rng = np.random.default_rng(3)
        T = 3
        comps = []
        for _ in range(3):
            vals = np.sort(rng.normal(size=(T, 1)), axis=0)
            comps.append(DiscreteCVQF(grid=make_grid(T, 1), values=vals))
        out = separable_cvqf(comps)
        for row, u in zip(out.values, out.grid.levels):
            m = np.rint(u * T).astype(int) - 1
            expected = [comps[a].values[m[a], 0] for a in range(3)]
            np.testing.assert_allclose(row, expected)

    def test_sorted_samples_give_box_contours(self):
        rng = np.random.default_rng(4)
        T = 10
        comps = []
        for _ in range(2):
            sample = rng.normal(size=200)
            levels = make_grid(T, 1).levels[:, 0]
            q = np.quantile(sample, levels)[:, None]
            comps.append(DiscreteCVQF(grid=make_grid(T, 1), values=q))
        out = separable_cvqf(comps)
        _, pts = alpha_contour(out, 0.2)
        # box shape: each axis takes only contour-edge values on off-axis rows
        for axis in range(2):
            uniq = np.unique(pts[:, axis])
            assert len(uniq) <= T

    def test_mismatched_T(self):
        with pytest.raises(ShapeError):
            separable_cvqf([self._identity_1d(3), self._identity_1d(4)])

    def test_requires_1d_components(self):
        grid = make_grid(2, 2)
        comp = DiscreteCVQF(grid=grid, values=grid.levels.copy())
        with pytest.raises(ShapeError):
            separable_cvqf([comp, comp])
