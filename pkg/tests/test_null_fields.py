"""Null fields over a product base: classification and fibre flows."""

import math

import numpy as np
import pytest

from excisionlab import flow1d, null_fields as nf, scalar_kit as sk
from excisionlab.errors import ExcisedPointError, InputError


@pytest.fixture(scope="module")
def point_field():
    """C = {0} in a 1D base, flat target height 0."""
    C = sk.ClosedSetSpec(dim=1, pieces=((sk.axis_point(0.0),),))
    spec = nf.EpigraphSpec(C=C, lam=nf.constant_map(0.0),
                           validation_box=((-1.0,), (1.0,)))
    return spec, nf.build_epigraph_field(spec)


class TestBuildEpigraphField:
    def test_parameter_fields(self, point_field):
        spec, field = point_field
        a, b, c = field.params(np.array([0.0]))
        assert b == 0.0 and a == -0.5 and c == 0.0
        a, b, c = field.params(np.array([0.7]))
        assert c > 0.0

    def test_exit_time_on_set(self, point_field):
        _, field = point_field
        a, b, c = field.params(np.array([0.0]))
        tof = flow1d.ramp_time_closed_form(a, b, c, 0.5)
        assert tof.value == pytest.approx(0.5, abs=1e-12)

    def test_exit_time_off_set(self, point_field):
        _, field = point_field
        a, b, c = field.params(np.array([0.7]))
        for x in (-0.5, 0.0, 0.5):
            assert flow1d.ramp_time_closed_form(a, b, c, x).value == math.inf

    def test_exit_time_below_threshold(self, point_field):
        _, field = point_field
        a, b, c = field.params(np.array([0.0]))
        tof = flow1d.ramp_time_closed_form(a, b, c, -0.2)
        assert 1.0 < tof.value < math.inf

    def test_range_validation(self):
        C = sk.ClosedSetSpec(dim=1, pieces=((sk.axis_point(0.0),),))
        bad = nf.EpigraphSpec(C=C, lam=nf.constant_map(1.5),
                              validation_box=((-1.0,), (1.0,)))
        with pytest.raises(InputError):
            nf.build_epigraph_field(bad)


class TestClassification:
    def test_cantor_brush_members(self, brush):
        C, spec, vfield, _ = brush
        # 1/3 is an interval endpoint at every depth: member
        p = np.array([0.0, 1.0 / 3.0])
        assert nf.classify_epigraph(vfield, p, 0.2) == nf.EXCISED
        # 0.5 was removed at depth 1
        assert nf.classify_epigraph(vfield, np.array([0.0, 0.5]), 0.2) == nf.SURVIVES
        # first coordinate off the axis point
        assert nf.classify_epigraph(vfield, np.array([0.2, 0.0]), 0.2) == nf.SURVIVES

    def test_completeness_grid(self, point_field):
        spec, field = point_field
        ps = np.linspace(-1.0, 1.0, 100)
        xs = np.linspace(-0.9, 0.9, 100)
        mismatches = 0
        for p in ps:
            member_p = spec.C.contains(np.array([p]))
            if not member_p and abs(p) < 1e-3:
                continue
            for x in xs:
                if member_p and abs(x) < 1e-3:
                    continue
                verdict = nf.classify_epigraph(field, np.array([p]), float(x))
                want = nf.EXCISED if (member_p and x >= 0.0) else nf.SURVIVES
                mismatches += int(verdict != want)
        assert mismatches == 0


class TestFibreFlows:
    def test_time1_freezes_base(self, point_field):
        _, field = point_field
        p0 = np.array([0.37])
        p1, x1 = nf.presympl_time1(field, p0, -0.2)
        assert np.array_equal(p0, p1)

    def test_time1_plateau_translation(self, point_field):
        # on the set, above the ramp, the fibre speed is exactly 1
        _, field = point_field
        _, x1 = nf.presympl_time1(field, np.array([0.0]), -0.5)
        assert x1 == pytest.approx(0.5, abs=1e-8)

    def test_excised_point_rejected(self, point_field):
        _, field = point_field
        with pytest.raises(ExcisedPointError):
            nf.presympl_time1(field, np.array([0.0]), 0.3)

    def test_fixed_fibre_where_cutoff_dead(self, point_field):
        _, field = point_field
        p = np.array([0.9])
        a, _, _ = field.params(p)
        x = 0.5 * (a - 1.0) - 0.1     # below the ramp: speed 0
        _, x1 = nf.presympl_time1(field, p, x)
        assert x1 == x

    def test_backward_total_and_bijective(self, point_field):
        _, field = point_field
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(500):
            p = np.array([rng.uniform(-1.0, 1.0)])
            x_target = rng.uniform(-0.9, 0.9)
            _, x_back = nf.presympl_flow(field, p, x_target, -1.0)
            _, x_fwd = nf.presympl_flow(field, p, x_back, 1.0)
            worst = max(worst, abs(x_fwd - x_target))
        assert worst <= 1e-8

    def test_forward_invariance(self, point_field):
        spec, field = point_field
        rng = np.random.default_rng(1)
        for _ in range(200):
            x = rng.uniform(0.0, 0.9)
            fiber = field.fiber(np.array([0.0]))
            tof = flow1d.forward_time(fiber, x)
            x1 = flow1d.flow_map(fiber, 0.7 * tof.value, x)
            assert x1 >= x          # the fibre only moves up
            assert x1 >= 0.0        # stays in the epigraph


class TestGradients:
    def test_velocity_grad_matches_fd(self, brush):
        _, _, vfield, _ = brush
        rng = np.random.default_rng(2)
        pts = rng.uniform(-0.4, 1.4, size=(200, 2))
        # keep the stencil clear of sub-resolution gap microstructure
        cantor = vfield.spec.C.pieces[0][1]
        pts = pts[cantor.boundary_distance(pts[:, 1]) > 5e-4]
        xs = rng.uniform(-0.8, 0.8, size=pts.shape[0])
        grad = vfield.velocity_grad_p(pts, xs)
        h = 1e-6
        for i in range(2):
            zp = pts.copy(); zp[:, i] += h
            zm = pts.copy(); zm[:, i] -= h
            fd = (vfield.velocity(zp, xs) - vfield.velocity(zm, xs)) / (2 * h)
            rel = np.abs(fd - grad[:, i]) / (1.0 + np.abs(grad[:, i]))
            assert np.max(rel) <= 1e-5
