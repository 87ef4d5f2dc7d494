import numpy as np
import pytest
from fractions import Fraction
from hypothesis import given, settings
from hypothesis import strategies as st

from polypart.errors import ConfigError
from polypart.grids import GridSpec
from polypart.kernels import EXACT_STENCILS, get_kernel, quasi_weights

ALL_KERNELS = ["m4p", "b1", "b3", "b5"]


def interior_weights(kernel, grid, samples):
    """quasi_weights cropped to nodes whose stencil sees only true samples."""
    return quasi_weights(kernel, grid, samples)


class TestEval1d:
    def test_m4p_frozen_values(self):
        k = get_kernel("m4p")
        assert k.eval1d(0.0) == 1.0
        assert k.eval1d(0.5) == pytest.approx(0.5625, abs=1e-15)
        assert k.eval1d(2.0) == 0.0
        assert k.eval1d(1.5) == pytest.approx(-0.0625, abs=1e-15)

    def test_b1_hat(self):
        k = get_kernel("b1")
        assert k.eval1d(0.3) == pytest.approx(0.7, abs=1e-15)
        assert k.eval1d(1.0) == 0.0

    def test_b3_frozen_values(self):
        k = get_kernel("b3")
        assert k.eval1d(0.0) == pytest.approx(2.0 / 3.0, abs=1e-15)
        assert k.eval1d(1.0) == pytest.approx(1.0 / 6.0, abs=1e-15)

    def test_b5_frozen_values(self):
        k = get_kernel("b5")
        assert k.eval1d(0.0) == pytest.approx(11.0 / 20.0, abs=1e-15)
        assert k.eval1d(1.0) == pytest.approx(13.0 / 60.0, abs=1e-15)
        assert k.eval1d(2.0) == pytest.approx(1.0 / 120.0, abs=1e-15)

    @pytest.mark.parametrize("name,p", [("b1", 1), ("b3", 3), ("b5", 5)])
    def test_bspline_matches_box_convolution(self, name, p):
        # recursion B_q = B_{q-1} * B_0 on a step-1e-4 grid: the hat comes
        # from the exact box overlap, higher degrees from trapezoidal
        # sliding-window integrals
        dx = 1e-4
        half = (p + 1) / 2 + 0.5
        x = np.arange(-half, half + dx / 2, dx)
        cur = np.maximum(0.0, np.minimum(x + 0.5, 0.5) - np.maximum(x - 0.5, -0.5)) / 1.0
        nwin = round(1.0 / dx) + 1
        win = np.ones(nwin)
        win[0] = win[-1] = 0.5
        for _ in range(p - 1):
            cur = np.convolve(cur, win, mode="same") * dx
        kernel = get_kernel(name)
        probe = np.linspace(-kernel.rho0, kernel.rho0, 41)
        approx = np.interp(probe, x, cur)
        assert np.max(np.abs(approx - kernel.eval1d(probe))) < 1e-8

    @settings(max_examples=200)
    @given(st.floats(-10, 10), st.sampled_from(ALL_KERNELS))
    def test_even_and_compact(self, x, name):
        k = get_kernel(name)
        assert k.eval1d(x) == k.eval1d(-x)
        if abs(x) >= k.rho0:
            assert k.eval1d(x) == 0.0


class TestTensorEval:
    def test_examples(self):
        assert get_kernel("m4p").eval((0.0, 0.0)) == 1.0
        assert get_kernel("b3").eval((0.0, 0.0)) == pytest.approx(4.0 / 9.0, abs=1e-15)

    @settings(max_examples=100)
    @given(
        st.floats(-5, 5),
        st.floats(-5, 5),
        st.sampled_from(ALL_KERNELS),
    )
    def test_support_bound(self, x, y, name):
        k = get_kernel(name)
        if max(abs(x), abs(y)) >= k.rho0:
            assert k.eval((x, y)) == 0.0

    def test_scaled_eval(self):
        m4p = get_kernel("m4p")
        assert m4p.scaled_eval(0.5, (0.0, 0.0)) == pytest.approx(4.0, abs=1e-12)
        assert m4p.scaled_eval(1.0, (2.0, 0.0)) == 0.0
        assert m4p.scaled_eval(0.25, (0.125, 0.0)) == pytest.approx(9.0, abs=1e-12)

    def test_partition_of_unity(self):
        rng = np.random.default_rng(7)
        pts = rng.uniform(0.0, 4.0, size=(10_000, 2))
        offsets = np.arange(-4, 9)
        for name in ALL_KERNELS:
            k = get_kernel(name)
            total = np.zeros(len(pts))
            for k1 in offsets:
                for k2 in offsets:
                    total += k.eval(pts - np.array([k1, k2], dtype=float))
            assert np.max(np.abs(total - 1.0)) < 1e-12, name


class TestQuasiWeights:
    def test_stencil_sums_exact(self):
        for name, coeffs in EXACT_STENCILS.items():
            exact = coeffs[0] + 2 * sum(coeffs[1:])
            assert exact == Fraction(1), name
            floats = get_kernel(name).stencil
            assert abs(floats[0] + 2.0 * sum(floats[1:]) - 1.0) <= 1e-15, name

    def test_constant_field(self):
        grid = GridSpec.unit_box(2**-4)
        k = get_kernel("b3")
        g = np.ones(grid.padded_shape(k.m))
        w = quasi_weights(k, grid, g)
        assert w.shape == grid.shape
        assert np.max(np.abs(w - grid.h**2)) < 1e-15

    def test_sampling_kernels_copy_samples(self):
        grid = GridSpec.unit_box(2**-3)
        for name in ("m4p", "b1"):
            k = get_kernel(name)
            rng = np.random.default_rng(3)
            g = rng.standard_normal(grid.padded_shape(k.m))
            w = quasi_weights(k, grid, g)
            assert np.array_equal(w, grid.h**2 * g)

    def test_shape_mismatch_rejected(self):
        grid = GridSpec.unit_box(2**-3)
        k = get_kernel("b3")
        with pytest.raises(ConfigError):
            quasi_weights(k, grid, np.ones(grid.shape))

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-3, 3), st.floats(-3, 3))
    def test_linear_in_samples(self, a, b):
        grid = GridSpec.unit_box(2**-3)
        k = get_kernel("b3")
        rng = np.random.default_rng(11)
        g1 = rng.standard_normal(grid.padded_shape(k.m))
        g2 = rng.standard_normal(grid.padded_shape(k.m))
        combined = quasi_weights(k, grid, a * g1 + b * g2)
        split = a * quasi_weights(k, grid, g1) + b * quasi_weights(k, grid, g2)
        assert np.max(np.abs(combined - split)) < 1e-12

    def test_unknown_kernel_rejected(self):
        with pytest.raises(ConfigError):
            get_kernel("b7")


def synthesize(kernel, grid, w, pts):
    """Brute-force sum_k w_k phi_h(x - h k) at the given points."""
    nodes = grid.node_points()
    vals = np.zeros(len(pts))
    for node, weight in zip(nodes, w.ravel()):
        vals += weight * kernel.scaled_eval(grid.h, pts - node)
    return vals


class TestPolynomialReproduction:
    @pytest.mark.parametrize("name", ["b1", "b3", "b5", "m4p"])
    def test_monomials_reproduced(self, name):
        kernel = get_kernel(name)
        p = kernel.order
        h = 2**-4
        grid = GridSpec.unit_box(h)
        rng = np.random.default_rng(19)
        inner = (kernel.m + kernel.rho0) * h
        pts = rng.uniform(inner, 1.0 - inner, size=(100, 2))
        node_pts = grid.node_points(kernel.m)
        for s1 in range(p + 1):
            for s2 in range(p + 1):
                g = (node_pts[:, 0] ** s1 * node_pts[:, 1] ** s2).reshape(
                    grid.padded_shape(kernel.m)
                )
                w = quasi_weights(kernel, grid, g)
                approx = synthesize(kernel, grid, w, pts)
                exact = pts[:, 0] ** s1 * pts[:, 1] ** s2
                assert np.max(np.abs(approx - exact)) < 1e-10, (name, s1, s2)

    def test_cubic_interpolated_at_nodes(self):
        kernel = get_kernel("b3")
        h = 2**-4
        grid = GridSpec.unit_box(h)
        node_pts = grid.node_points(kernel.m)
        g = (node_pts[:, 0] ** 3).reshape(grid.padded_shape(kernel.m))
        w = quasi_weights(kernel, grid, g)
        inner_nodes = grid.node_points()
        keep = (inner_nodes[:, 0] > 3 * h) & (inner_nodes[:, 0] < 1 - 3 * h)
        keep &= (inner_nodes[:, 1] > 3 * h) & (inner_nodes[:, 1] < 1 - 3 * h)
        approx = synthesize(kernel, grid, w, inner_nodes[keep])
        assert np.max(np.abs(approx - inner_nodes[keep, 0] ** 3)) < 1e-12
