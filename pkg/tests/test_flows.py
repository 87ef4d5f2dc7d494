import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polypart.errors import ConfigError
from polypart.flows import (
    convection_cell_field,
    exact_backward_flow_nlr,
    exact_forward_flow_nlr,
    get_case,
    initial_density,
    make_step_map,
    rk4_step,
    rotation_field,
    swirling_field,
    velocity,
)


def sw_stream(x):
    return -np.sin(np.pi * x[..., 0]) ** 2 * np.sin(np.pi * x[..., 1]) ** 2


def rb_stream(x):
    x1, x2 = x[..., 0], x[..., 1]
    return (x1 - 0.5) * (x1 - x1 * x1) * (x2 - x2 * x2)


class TestVelocity:
    def test_sw_vanishes_at_half_period(self):
        field = swirling_field(5.0)
        rng = np.random.default_rng(0)
        pts = rng.uniform(0, 1, size=(20, 2))
        assert np.max(np.abs(velocity(field, 2.5, pts))) < 1e-15

    def test_nlr_examples(self):
        field = rotation_field()
        u = velocity(field, 0.0, np.array([[0.9, 0.5], [0.7, 0.5]]))
        assert np.allclose(u[0], [0.0, 0.0], atol=1e-15)
        assert np.allclose(u[1], [0.0, 0.025], atol=1e-15)

    @pytest.mark.parametrize(
        "field,stream,scale",
        [
            (swirling_field(5.0), sw_stream, 1.0 / math.pi),
            (convection_cell_field(3.0), rb_stream, 1.0),
        ],
    )
    def test_curl_matches_stream_function(self, field, stream, scale):
        rng = np.random.default_rng(5)
        pts = rng.uniform(0.05, 0.95, size=(100, 2))
        t = 0.37
        d = 1e-6
        ex = np.array([d, 0.0])
        ey = np.array([0.0, d])
        du_dy = (stream(pts + ey) - stream(pts - ey)) / (2 * d)
        du_dx = (stream(pts + ex) - stream(pts - ex)) / (2 * d)
        mod = math.cos(math.pi * t / field.period) * scale
        u = velocity(field, t, pts)
        assert np.max(np.abs(u[:, 0] - mod * du_dy)) < 1e-6
        assert np.max(np.abs(u[:, 1] + mod * du_dx)) < 1e-6

    def test_boundary_values(self):
        # sw vanishes on the box boundary; rb is tangent there (zero
        # normal component, boundary invariant); nlr vanishes outside
        # the radius-0.4 disk
        sw = swirling_field(5.0)
        edge = np.array([[0.0, 0.3], [1.0, 0.7], [0.4, 0.0], [0.6, 1.0]])
        assert np.max(np.abs(velocity(sw, 0.3, edge))) < 1e-14
        rb = convection_cell_field(3.0)
        u = velocity(rb, 0.3, edge)
        normal = np.array([u[0, 0], u[1, 0], u[2, 1], u[3, 1]])
        assert np.max(np.abs(normal)) < 1e-14
        nlr = rotation_field()
        far = np.array([[0.95, 0.5], [0.1, 0.1]])
        assert np.max(np.abs(velocity(nlr, 0.0, far))) == 0.0

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0, 5), st.floats(0.02, 0.98), st.floats(0.02, 0.98))
    def test_divergence_free(self, t, x1, x2):
        d = 1e-5
        pt = np.array([x1, x2])
        for field in (swirling_field(5.0), convection_cell_field(3.0), rotation_field()):
            ex = np.array([d, 0.0])
            ey = np.array([0.0, d])
            div = (
                velocity(field, t, pt + ex)[0]
                - velocity(field, t, pt - ex)[0]
                + velocity(field, t, pt + ey)[1]
                - velocity(field, t, pt - ey)[1]
            ) / (2 * d)
            assert abs(div) < 1e-6


class TestBackwardFlow:
    def test_fixed_point_and_far_field(self):
        pts = np.array([[0.5, 0.5], [0.95, 0.3], [0.1, 0.9]])
        mapped = exact_backward_flow_nlr(17.3, pts)
        assert np.allclose(mapped, pts, atol=1e-15)

    def test_frozen_rotation(self):
        out = exact_backward_flow_nlr(50.0, np.array([0.7, 0.5]))
        theta = 6.25
        assert out[0] == pytest.approx(0.5 + 0.2 * math.cos(theta), abs=1e-14)
        assert out[1] == pytest.approx(0.5 - 0.2 * math.sin(theta), abs=1e-14)

    def test_forward_inverts_backward(self):
        rng = np.random.default_rng(2)
        pts = rng.uniform(0.2, 0.8, size=(50, 2))
        roundtrip = exact_forward_flow_nlr(3.0, exact_backward_flow_nlr(3.0, pts))
        assert np.max(np.abs(roundtrip - pts)) < 1e-13


class TestInitialData:
    def test_cone(self):
        case = get_case("sw-cone")
        center = np.array([0.5, 0.25])
        assert initial_density(case.data, center) == 1.0
        assert initial_density(case.data, center + np.array([0.15, 0.0])) == 0.0

    def test_hump_center(self):
        case = get_case("sw-hump")
        assert initial_density(case.data, np.array([0.5, 0.7])) == pytest.approx(1.0, abs=1e-6)

    def test_linear_ramp(self):
        case = get_case("nlr")
        assert initial_density(case.data, np.array([0.3, 0.9])) == pytest.approx(0.4, abs=1e-15)

    def test_table_values(self):
        expect = {
            "sw-cone": (5.0, 0.05),
            "sw-hump": (5.0, 0.05),
            "rb-hump": (3.0, 0.03),
            "nlr": (50.0, 0.5),
        }
        for name, (T, dt) in expect.items():
            case = get_case(name)
            assert (case.T, case.dt) == (T, dt)

    def test_unknown_case(self):
        with pytest.raises(ConfigError):
            get_case("sw-box")


class TestRK4:
    def test_zero_field(self):
        from polypart.flows import FlowField

        zero = FlowField("zero", lambda t, x: np.zeros_like(x))
        pts = np.array([[0.3, 0.4]])
        assert np.array_equal(rk4_step(zero, 0.0, 0.5, pts), pts)

    def test_constant_field_exact(self):
        from polypart.flows import FlowField

        const = FlowField("const", lambda t, x: np.broadcast_to([1.0, 0.0], x.shape))
        out = rk4_step(const, 0.0, 0.5, np.array([[0.0, 0.0]]))
        assert np.allclose(out, [[0.5, 0.0]], atol=1e-15)

    def test_nlr_stationary_center(self):
        field = rotation_field()
        out = rk4_step(field, 0.0, 0.5, np.array([[0.5, 0.5]]))
        assert np.allclose(out, [[0.5, 0.5]], atol=1e-15)

    def _compose(self, field, dt, T, pts):
        cur = pts.copy()
        n = round(T / dt)
        for i in range(n):
            cur = rk4_step(field, i * dt, dt, cur)
        return cur

    def test_fourth_order_on_nlr(self):
        field = rotation_field()
        rng = np.random.default_rng(4)
        pts = rng.uniform(0.25, 0.75, size=(20, 2))
        exact = exact_forward_flow_nlr(50.0, pts)
        err = [
            np.max(np.abs(self._compose(field, dt, 50.0, pts) - exact))
            for dt in (0.5, 0.25)
        ]
        assert err[0] / err[1] >= 12.0

    @pytest.mark.parametrize("name", ["sw-cone", "rb-hump"])
    def test_reversibility(self, name):
        case = get_case(name)
        rng = np.random.default_rng(8)
        pts = rng.uniform(0.2, 0.8, size=(20, 2))
        final = self._compose(case.field, case.dt, case.T, pts)
        finer = self._compose(case.field, case.dt / 2, case.T, pts)
        one_way = max(np.max(np.abs(final - finer)), 1e-12)
        assert np.max(np.abs(final - pts)) <= 10.0 * one_way

    def test_step_map_closure(self):
        case = get_case("nlr")
        smap = make_step_map(case.field, 0.0, case.dt)
        pts = np.array([[0.7, 0.5]])
        assert np.array_equal(smap(pts), rk4_step(case.field, 0.0, case.dt, pts))
