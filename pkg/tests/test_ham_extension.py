"""Hamiltonians on the product model: explicit ray fields and extensions."""

import numpy as np
import pytest

from excisionlab import ham_extension as hx, null_fields as nf, scalar_kit as sk
from excisionlab import symflow as sf
from excisionlab.errors import InputError


class TestPairing:
    def test_matrix_shape_and_blocks(self):
        om = hx.pairing_matrix(4)
        assert om[0, 1] == 1.0 and om[1, 0] == -1.0
        assert om[2, 3] == 1.0 and om[3, 2] == -1.0
        assert np.all(om + om.T == 0.0)

    def test_odd_dimension_rejected(self):
        with pytest.raises(InputError):
            hx.pairing_matrix(3)


class TestRayHamiltonian:
    def test_axis_velocity_is_cutoff(self):
        F = hx.build_ray_hamiltonian(2)
        for x in (0.0, 0.3, 0.8):
            z = np.array([0.0, 0.0, x, 0.0])
            vec = F.vector_field(z)
            assert vec[2] == pytest.approx(1.0, abs=1e-14)  # chi = 1 there
            assert np.abs(vec[[0, 1, 3]]).max() == 0.0

    def test_vanishes_on_zero_conorm(self):
        F = hx.build_ray_hamiltonian(2)
        rng = np.random.default_rng(0)
        pts = rng.uniform(-0.8, 0.8, size=(200, 4))
        pts[:, 3] = 0.0
        assert np.abs(np.atleast_1d(F.value(pts))).max() == 0.0

    def test_compact_superlevel_box(self):
        F = hx.build_ray_hamiltonian(2)
        rng = np.random.default_rng(1)
        pts = rng.uniform(-0.98, 0.98, size=(20000, 4))
        pts[:, 3] = rng.uniform(-4, 4, size=20000)
        c = 0.1
        x_hi = 1.0 - c * c / F.h_coef
        r2 = F.h_coef * (1.0 + F.eps)
        outside = ~((pts[:, 2] >= -F.eps) & (pts[:, 2] <= x_hi)
                    & (np.sum(pts[:, :2] ** 2, axis=1) + pts[:, 3] ** 2 <= r2))
        vals = np.abs(np.atleast_1d(F.value(pts[outside])))
        assert np.all(vals < c)

    def test_gradient_oracle(self):
        F = hx.build_ray_hamiltonian(2)
        golden = 0.6180339887498949
        n = 1000
        seqs = (np.arange(1, n + 1)[:, None] *
                np.array([golden, golden ** 2, 0.7548776662466927,
                          0.5698402909980532])) % 1.0
        pts = -0.85 + 1.7 * seqs
        g = F.grad(pts)
        h = 1e-5
        for i in range(4):
            zp = pts.copy(); zp[:, i] += h
            zm = pts.copy(); zm[:, i] -= h
            fd = (F.value(zp) - F.value(zm)) / (2 * h)
            rel = np.abs(fd - g[:, i]) / (1.0 + np.abs(g[:, i]))
            assert np.max(rel) <= 1e-5

    def test_flat_on_zero_set_off_hypersurface(self):
        F = hx.build_ray_hamiltonian(2)
        rng = np.random.default_rng(2)
        pts = rng.uniform(-0.9, 0.9, size=(2000, 4))
        pts = pts[np.abs(pts[:, 3]) > 0.05]
        vals = np.abs(np.atleast_1d(F.value(pts)))
        zeros = pts[vals == 0.0]
        assert zeros.shape[0] > 100
        assert np.abs(F.grad(zeros)).max() <= 1e-10

    def test_membership(self):
        F = hx.build_ray_hamiltonian(2)
        assert F.membership(np.array([0.0, 0.0, 0.5, 0.0]))
        assert not F.membership(np.array([0.0, 0.0, -0.1, 0.0]))
        assert not F.membership(np.array([0.1, 0.0, 0.5, 0.0]))
        assert not F.membership(np.array([0.0, 0.0, 0.5, 0.2]))


class TestRayPlane:
    def test_exit_iff_nonnegative(self):
        F = hx.build_ray_hamiltonian_n1()
        # axis exit times: chi = 1 above -eps/2, so T(x) = 1 - x there
        out = sf.integrate(F, np.array([0.0, 0.0]), 1.0 + sf.DELTA_PROBE)
        assert out.status == sf.ESCAPED
        assert out.t_esc_lower <= 1.0 <= out.t_esc_upper + 2e-4

        out = sf.integrate(F, np.array([-0.01, 0.0]), 1.0 + sf.DELTA_PROBE)
        assert out.status == sf.ESCAPED and out.t_esc_lower > 1.0

        out = sf.integrate(F, np.array([0.01, 0.0]), 1.0 + sf.DELTA_PROBE)
        assert out.status == sf.ESCAPED and out.t_esc_upper < 1.0

    def test_off_axis_complete(self):
        F = hx.build_ray_hamiltonian_n1()
        out_fw = sf.integrate(F, np.array([0.5, 0.7]), 10.0)
        out_bw = sf.integrate(F, np.array([0.5, 0.7]), -10.0)
        assert out_fw.status == sf.COMPLETED
        assert out_bw.status == sf.COMPLETED


class TestExtension:
    def test_hypersurface_restriction(self, brush):
        _, _, vfield, ham = brush
        rng = np.random.default_rng(3)
        pts = rng.uniform(-0.3, 1.3, size=(300, 4))
        pts[:, 2] = rng.uniform(-0.9, 0.9, size=300)
        pts[:, 3] = 0.0
        vec = np.atleast_2d(ham.vector_field(pts))
        v = np.atleast_1d(vfield.velocity(pts[:, :2], pts[:, 2]))
        chi = ham.cutoff(pts)
        assert np.abs(vec[:, [0, 1, 3]]).max() <= 1e-12
        assert np.abs(vec[:, 2] - chi * v).max() <= 1e-12

    def test_kinetic_zero_on_hypersurface(self, brush):
        _, _, _, ham = brush
        rng = np.random.default_rng(4)
        pts = rng.uniform(-0.5, 1.5, size=(500, 4))
        pts[:, 3] = 0.0
        assert np.abs(np.atleast_1d(ham.value(pts))).max() == 0.0

    def test_dominated_by_witness(self, brush):
        _, _, _, ham = brush
        rng = np.random.default_rng(5)
        pts = rng.uniform(-1.5, 2.0, size=(4000, 4))
        vals = np.abs(np.atleast_1d(ham.value(pts)))
        assert np.all(vals < sk.decay_witness(pts))

    def test_cutoff_is_one_on_target(self, brush):
        _, spec, _, ham = brush
        rng = np.random.default_rng(6)
        zs = hx.epigraph_target(spec).sample(500, rng)
        assert np.all(ham.cutoff(zs) == 1.0)

    def test_floor_certificate_rejects_slow_fields(self):
        # a target whose plateau speed is below the floor must be refused
        C = sk.ClosedSetSpec(dim=1, pieces=((sk.axis_point(0.0),),))
        spec = nf.EpigraphSpec(C=C, lam=nf.constant_map(1.0),
                               validation_box=((-1.0,), (1.0,)))
        vfield = nf.build_epigraph_field(spec)   # plateau speed 1 - b = 0
        with pytest.raises(InputError):
            hx.extend_null_field(vfield, hx.epigraph_target(spec, x_max=0.999))


class TestLocalize:
    def test_support_and_plateau(self):
        F = hx.build_ray_hamiltonian(2)
        hood = hx.TubeNeighbourhood(eps=F.eps * 0.1, h_coef=F.h_coef * 0.1)
        rng = np.random.default_rng(7)
        loc = hx.localize(F, hood, target_samples=F.sample_target(100, rng))
        outside = rng.uniform(-0.9, 0.9, size=(500, 4))
        mask = ~hood.contains(outside)
        assert np.abs(np.atleast_2d(loc.vector_field(outside[mask]))).max() == 0.0
        # on the axis the localized field agrees with the original
        axis = np.zeros((5, 4))
        axis[:, 2] = np.linspace(0.0, 0.8, 5)
        assert np.allclose(np.atleast_1d(loc.value(axis)),
                           np.atleast_1d(F.value(axis)))

    def test_margin_enforced(self):
        F = hx.build_ray_hamiltonian(2)
        hood = hx.TubeNeighbourhood(eps=0.01, h_coef=1e-6)
        rng = np.random.default_rng(8)
        with pytest.raises(InputError):
            hx.localize(F, hood, target_samples=F.sample_target(100, rng))
