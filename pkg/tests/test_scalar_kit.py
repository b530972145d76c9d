"""Smooth building blocks: frozen oracle values and derivative contracts.

Frozen constants were computed once with mpmath at 20+ digits (the slow
independent oracle) and are re-derived here when mpmath is available.
"""

import math

import numpy as np
import pytest

from excisionlab import scalar_kit as sk
from excisionlab.errors import InputError

mpmath = pytest.importorskip("mpmath")

# mpmath.quad of exp(-2/(1-t^2)) over (-1,1), 30 digits
BRIDGE_NORM_REF = 0.13308612084499427156
# bridge profile at (lo, hi, delay, x) = (0.2, 0.5, 0.1, 0.35)
BRIDGE_MID_REF = 0.59597122209077041455


def central_diff(f, x, h=1e-5):
    return (f(x + h) - f(x - h)) / (2.0 * h)


class TestSmoothsteps:
    def test_cubic_endpoints(self):
        assert sk.cubic_smoothstep(0.0) == 0.0
        assert sk.cubic_smoothstep(1.0) == 1.0
        assert sk.cubic_smoothstep(0.5) == 0.5

    def test_cubic_flat_derivative(self):
        assert sk.cubic_smoothstep_deriv(0.0) == 0.0
        assert sk.cubic_smoothstep_deriv(1.0) == 0.0

    def test_exp_step_range(self):
        ts = np.linspace(-0.5, 1.5, 201)
        vals = sk.smooth_step(ts)
        assert np.all((vals >= 0.0) & (vals <= 1.0))
        assert np.all(np.diff(vals) >= 0.0)
        assert sk.smooth_step(-1e-12) == 0.0
        assert sk.smooth_step(1.0) == 1.0


class TestRisingCutoff:
    def test_branch_values(self):
        # three-branch formula at a = 0
        assert sk.rising_cutoff(0.0, -0.6) == 0.0
        assert sk.rising_cutoff(0.0, 0.3) == 1.0
        # midpoint of the ramp: both exponential terms coincide
        assert sk.rising_cutoff(0.0, -0.25) == pytest.approx(0.5, abs=1e-15)

    def test_monotone(self):
        xs = np.linspace(-0.99, 0.99, 500)
        for a in (-0.7, 0.0, 0.55):
            vals = sk.rising_cutoff(a, xs)
            assert np.all(np.diff(vals) >= 0.0)

    def test_domain_validation(self):
        with pytest.raises(InputError):
            sk.rising_cutoff(1.5, 0.0)
        with pytest.raises(InputError):
            sk.rising_cutoff(0.0, 1.0)

    def test_flat_composition_with_cubic(self):
        # derivative of rho(chi) vanishes wherever chi = 0
        xs = np.linspace(-0.99, -0.51, 200)   # chi_0 = 0 here
        chi = sk.rising_cutoff(0.0, xs)
        dchi = sk.rising_cutoff_dx(0.0, xs)
        d_rho_chi = sk.cubic_smoothstep_deriv(chi) * dchi
        assert np.all(chi == 0.0)
        assert np.max(np.abs(d_rho_chi)) <= 1e-10


class TestRampVelocity:
    def test_plateau_value(self):
        assert sk.ramp_velocity(0.0, 0.0, 0.0, 0.5) == pytest.approx(1.0, abs=1e-15)

    def test_zero_below_ramp(self):
        # x below (a-1)/2 = -0.3
        assert sk.ramp_velocity(0.4, 0.0, 1.0, -0.8) == 0.0

    def test_rational_factor(self):
        assert sk.ramp_velocity(0.0, 0.5, 1.0, 0.0) == pytest.approx(0.25, abs=1e-15)

    def test_range(self):
        rng = np.random.default_rng(0)
        a = rng.uniform(-0.9, 0.9, 200)
        b = rng.uniform(-1.0, 1.0, 200)
        c = rng.uniform(0.0, 1.0, 200)
        x = rng.uniform(-0.99, 0.99, 200)
        u = sk.ramp_velocity(a, b, c, x)
        # the profile is bounded by the plateau speed 1 - b (so by 1 for
        # nonnegative plateau heights, the case every shipped target uses)
        assert np.all(u >= -1e-15)
        assert np.all(u <= (1.0 - b) + 1e-15)
        nonneg = b >= 0.0
        assert np.all(u[nonneg] <= 1.0 + 1e-15)

    def test_zero_locus(self):
        # vanishes exactly where the cutoff or the plateau factor does
        xs = np.linspace(-0.99, 0.99, 400)
        u = sk.ramp_velocity(0.3, 0.6, 0.2, xs)
        chi = sk.rising_cutoff(0.3, xs)
        assert np.array_equal(u == 0.0, chi == 0.0)
        assert np.all(sk.ramp_velocity(0.3, 1.0, 0.2, xs) == 0.0)

    def test_partials_match_fd(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            a = rng.uniform(-0.6, 0.6)
            b = rng.uniform(-0.8, 0.8)
            c = rng.uniform(0.05, 0.95)
            x = rng.uniform(-0.8, 0.8)
            da, db, dc, dx = sk.ramp_velocity_partials(a, b, c, x)
            ref = [
                central_diff(lambda t: sk.ramp_velocity(t, b, c, x, validate=False), a),
                central_diff(lambda t: sk.ramp_velocity(a, t, c, x, validate=False), b),
                central_diff(lambda t: sk.ramp_velocity(a, b, t, x, validate=False), c),
                central_diff(lambda t: sk.ramp_velocity(a, b, c, t, validate=False), x),
            ]
            for got, want in zip((da, db, dc, dx), ref):
                assert got == pytest.approx(want, rel=1e-6, abs=1e-9)


class TestBridgeVelocity:
    def test_normalization_constant(self):
        mpmath.mp.dps = 25
        ref = float(mpmath.quad(lambda t: mpmath.e ** (-2 / (1 - t ** 2)), [-1, 0, 1]))
        assert sk.bridge_norm() == pytest.approx(ref, abs=5e-15)
        assert sk.bridge_norm() == pytest.approx(BRIDGE_NORM_REF, abs=5e-15)

    def test_unit_outside_band(self):
        assert sk.bridge_velocity(0.2, 0.5, 0.1, 0.7) == 1.0
        assert sk.bridge_velocity(0.2, 0.5, 0.1, 0.1) == 1.0

    def test_frozen_interior_value(self):
        got = sk.bridge_velocity(0.2, 0.5, 0.1, 0.35)
        assert got == pytest.approx(BRIDGE_MID_REF, abs=2e-14)
        assert 0.0 < got < 1.0

    def test_crossing_time_identity(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            lo = rng.uniform(0.05, 0.6)
            hi = rng.uniform(lo + 0.05, 0.95)
            delay = rng.uniform(0.01, 0.5)
            t = sk.bridge_crossing_time(lo, hi, delay, lo, hi)
            assert t == pytest.approx(hi - lo + delay, abs=1e-12)

    def test_parameter_validation(self):
        with pytest.raises(InputError):
            sk.bridge_velocity(0.5, 0.2, 0.1, 0.3)
        with pytest.raises(InputError):
            sk.bridge_velocity(0.2, 0.5, -0.1, 0.3)


class TestCotangentLift:
    def test_identity_lift(self):
        ident = sk.ScalarField1D(
            f=lambda x: np.asarray(x, dtype=float),
            df=lambda x: np.ones_like(np.asarray(x, dtype=float)),
            domain=(-1.0, 1.0),
        )
        assert sk.cotangent_lift(ident, (0.3, 2.0)) == (0.3, 2.0)

    def test_interval_to_line(self):
        g = sk.interval_to_line_field()
        x1, y1 = sk.cotangent_lift(g, (0.0, 5.0))
        assert (x1, y1) == (0.0, 5.0)          # g'(0) = 1
        x1, y1 = sk.cotangent_lift(g, (0.5, 1.0))
        assert x1 == pytest.approx(2.0 / 3.0, abs=1e-15)
        assert y1 == pytest.approx(9.0 / 20.0, abs=1e-15)

    def test_area_preservation_fd(self):
        # numerical 2x2 Jacobian determinant of the lift equals 1
        g = sk.interval_to_line_field()
        rng = np.random.default_rng(3)
        h = 1e-6
        for _ in range(100):
            x = rng.uniform(-0.8, 0.8)
            y = rng.uniform(-2.0, 2.0)
            fxp = np.array(sk.cotangent_lift(g, (x + h, y)))
            fxm = np.array(sk.cotangent_lift(g, (x - h, y)))
            fyp = np.array(sk.cotangent_lift(g, (x, y + h)))
            fym = np.array(sk.cotangent_lift(g, (x, y - h)))
            jac = np.stack([(fxp - fxm) / (2 * h), (fyp - fym) / (2 * h)], axis=1)
            assert np.linalg.det(jac) == pytest.approx(1.0, abs=1e-8)


class TestScalarFieldDerivatives:
    """Every shipped 1D field matches central differences of itself."""

    FIELDS = [
        sk.ramp_velocity_field(0.2, 0.5, 0.0),
        sk.ramp_velocity_field(-0.4, 0.1, 0.3),
        sk.bridge_velocity_field(0.2, 0.5, 0.1),
        sk.bridge_velocity_field(0.55, 0.8, 0.02),
        sk.interval_to_line_field(),
        sk.affine_field(0.25, -0.1, (-1.0, 1.0)),
    ]

    @pytest.mark.parametrize("field", FIELDS, ids=lambda f: f.label)
    def test_derivative_matches_fd(self, field):
        # quasi-random interior samples, away from the interval ends where
        # the finite-difference step would leave the domain
        lo, hi = field.domain
        n = 1000
        golden = 0.6180339887498949
        ts = (0.05 + 0.9 * ((np.arange(1, n + 1) * golden) % 1.0))
        xs = lo + ts * (hi - lo)
        h = 1e-5
        fd = (field(xs + h) - field(xs - h)) / (2 * h)
        exact = field.deriv(xs)
        rel = np.abs(fd - exact) / (1.0 + np.abs(exact))
        assert np.max(rel) <= 1e-6

    def test_finite_on_domain(self):
        for field in self.FIELDS:
            lo, hi = field.domain
            xs = np.linspace(lo + 1e-6, hi - 1e-6, 300)
            assert np.all(np.isfinite(field(xs)))


class TestDefiningFunction:
    def test_point_membership(self):
        spec = sk.ClosedSetSpec(dim=1, pieces=((sk.axis_point(0.0),),))
        c = sk.defining_function(spec)
        assert c.value(np.array([0.0])) == 0.0
        assert c.value(np.array([0.5])) > 0.0

    def test_cantor_midpoint_removed(self):
        spec = sk.ClosedSetSpec(dim=1, pieces=((sk.cantor_axis(0.0, 1.0, 3),),))
        c = sk.defining_function(spec)
        # 1/2 sits in the middle-thirds gap removed at depth 1
        assert c.value(np.array([0.5])) > 0.0
        # brute-force interval membership agrees
        assert not spec.contains(np.array([0.5]))
        assert spec.contains(np.array([1.0 / 3.0]))
        assert c.value(np.array([1.0 / 3.0])) == 0.0

    def test_sign_agreement_on_grid(self, brush):
        C, _, vfield, _ = brush
        c = vfield.c_fn
        g1 = np.linspace(-0.3, 1.3, 100)
        g2 = np.linspace(-0.3, 1.3, 100)
        G = np.stack(np.meshgrid(g1, g2, indexing="ij"), axis=-1).reshape(-1, 2)
        # avoid sub-float-resolution shells where exp(-s/d) underflows
        dist_ok = C.boundary_distance(G) > 1e-4
        member = C.contains(G)
        vals = c.value(G)
        on = member & dist_ok
        off = ~member & dist_ok
        assert np.all(vals[on] == 0.0)
        assert np.all(vals[off] > 0.0)
        assert np.all((vals >= 0.0) & (vals <= 1.0))

    def test_gradient_matches_fd(self):
        spec = sk.ClosedSetSpec(
            dim=2,
            pieces=((sk.axis_interval(-0.5, 0.5), sk.axis_interval(-0.25, 0.75)),),
        )
        c = sk.defining_function(spec)
        rng = np.random.default_rng(4)
        pts = rng.uniform(-1.2, 1.2, size=(300, 2))
        # stay clear of sub-resolution shells right at the box faces
        pts = pts[spec.boundary_distance(pts) > 5e-4]
        _, grad = c.value_and_grad(pts)
        h = 1e-6
        for i in range(2):
            zp = pts.copy(); zp[:, i] += h
            zm = pts.copy(); zm[:, i] -= h
            fd = (c.value(zp) - c.value(zm)) / (2 * h)
            rel = np.abs(fd - grad[:, i]) / (1.0 + np.abs(grad[:, i]))
            assert np.max(rel) <= 1e-5

    def test_clamp_continuity(self):
        # values at the underflow clamp threshold jump by strictly less
        # than any representable amount
        below = sk.exp_decay(sk.EXP_CLAMP)
        above = sk.exp_decay(sk.EXP_CLAMP * 1.0000001)
        assert below == 0.0
        assert above <= 1e-300


class TestDecayWitness:
    def test_values(self):
        assert sk.decay_witness(np.zeros(4)) == 1.0
        z = np.zeros(4); z[0] = 1.0
        assert sk.decay_witness(z) == pytest.approx(0.5)
        z = np.zeros(4); z[1] = 3.0
        assert sk.decay_witness(z) == pytest.approx(0.1)

    def test_superlevel_sets_bounded(self):
        rng = np.random.default_rng(5)
        z = rng.uniform(-50, 50, size=(1000, 4))
        vals = sk.decay_witness(z)
        c = 0.01
        inside = vals >= c
        # every point of the superlevel set lies in the predicted ball
        assert np.all(np.linalg.norm(z[inside], axis=1) <= math.sqrt(1 / c - 1) + 1e-9)

    def test_gradient(self):
        rng = np.random.default_rng(6)
        pts = rng.uniform(-2, 2, size=(100, 4))
        g = sk.decay_witness_grad(pts)
        h = 1e-6
        for i in range(4):
            zp = pts.copy(); zp[:, i] += h
            zm = pts.copy(); zm[:, i] -= h
            fd = (sk.decay_witness(zp) - sk.decay_witness(zm)) / (2 * h)
            assert np.max(np.abs(fd - g[:, i])) <= 1e-8
