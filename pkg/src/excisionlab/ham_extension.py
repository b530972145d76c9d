"""Hamiltonians on the product model ``M = B x I x R`` whose flows excise
closed subsets sitting inside the hypersurface ``N = B x I x {0}``.

Coordinates are ordered ``z = (p_1, ..., p_{2n-2}, x, y)`` with the
symplectic pairing on consecutive pairs; the last pair is ``(x, y)``.  Two
families are provided:

* the explicit ray Hamiltonian ``F = (1-x^2)/(|p|^2 + 1 - x^2) * chi * y``
  (with ``chi`` an explicit flat cutoff supported in a shrinking tube around
  the half-open segment ``{p=0, y=0, x in [0,1)}``), in any dimension
  ``2n >= 2``;
* the conormal extension ``F = chi * y * v(p, x)`` of a horizontal null
  field ``v d/dx``, which restricts to ``chi * v * d/dx`` on the
  hypersurface and whose off-hypersurface trajectories are complete because
  ``|F|`` is dominated by a witness vanishing at infinity.

All fields expose batched ``value``/``grad``/``vector_field`` evaluators
with closed-form gradients (finite differences are used only by the test
suite to certify them).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import InputError
from .null_fields import VectorFieldPX
from .scalar_kit import (
    cubic_smoothstep,
    cubic_smoothstep_deriv,
    decay_witness,
    decay_witness_grad,
    smooth_step,
    smooth_step_deriv,
)

__all__ = [
    "pairing_matrix",
    "HamiltonianField",
    "RayHamiltonian",
    "build_ray_hamiltonian",
    "build_ray_hamiltonian_n1",
    "ExcisionTarget",
    "ExtendedHamiltonian",
    "extend_null_field",
    "TubeNeighbourhood",
    "LocalizedHamiltonian",
    "localize",
]

V_FLOOR = 1e-3


def pairing_matrix(dim: int) -> np.ndarray:
    """Matrix of the standard symplectic form on consecutive coordinate
    pairs; the Hamiltonian field is ``X = Omega grad F``."""
    if dim % 2:
        raise InputError("phase space dimension must be even")
    omega = np.zeros((dim, dim))
    for k in range(0, dim, 2):
        omega[k, k + 1] = 1.0
        omega[k + 1, k] = -1.0
    return omega


class HamiltonianField:
    """Scalar function on phase space with exact gradient and the induced
    Hamiltonian vector field.

    ``escape_value`` is the chart-exit monitor used by the integrator: a
    trajectory is declared to leave the chart when it reaches 1 (for the
    product models this is the ``x`` coordinate, whose chart ends at 1).
    """

    dim: int

    def value(self, z):
        raise NotImplementedError

    def grad(self, z):
        raise NotImplementedError

    def vector_field(self, z):
        g = np.atleast_2d(self.grad(z))
        out = g @ self._omega_t
        return out[0] if np.ndim(z) == 1 else out

    @property
    def _omega_t(self):
        om = getattr(self, "_omega_cache", None)
        if om is None:
            om = pairing_matrix(self.dim).T
            self._omega_cache = om
        return om

    def escape_value(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        out = z[:, self.dim - 2]
        return out


def _as_batch(z, dim):
    pts = np.atleast_2d(np.asarray(z, dtype=float))
    if pts.shape[1] != dim:
        raise InputError(f"expected points of dimension {dim}")
    return pts


# ---------------------------------------------------------------------------
# the explicit ray Hamiltonian
# ---------------------------------------------------------------------------

def _tube_cutoff(pts, eps, h_coef, h_power, r_on, r_off):
    """Flat cutoff ``rho(s_x * s_r)`` supported in the shrinking tube
    ``{x > -eps, |p|^2 + y^2 < r_off * h(x)}`` with ``h = h_coef (1-x)^pow``;
    identically 1 where ``x >= -eps/2`` and ``|p|^2 + y^2 <= r_on * h(x)``.

    Returns ``(chi, dchi)`` with the full gradient.  The outer cubic step
    makes the gradient vanish on the zero set of ``chi``.
    """
    x = pts[:, -2]
    y = pts[:, -1]
    p = pts[:, :-2]
    q = np.sum(p * p, axis=1) + y * y

    one_m_x = 1.0 - x
    inside = one_m_x > 0.0
    h = np.where(inside, h_coef * np.maximum(one_m_x, 1e-300) ** h_power, 1e-300)
    dh = np.where(inside, -h_power * h / np.maximum(one_m_x, 1e-300), 0.0)

    r = np.where(inside, q / h, np.inf)
    sx_arg = 2.0 * (x + eps) / eps
    sx = smooth_step(sx_arg)
    dsx = smooth_step_deriv(sx_arg) * (2.0 / eps)
    sr_arg = (r_off - r) / (r_off - r_on)
    sr = smooth_step(sr_arg)
    dsr = -smooth_step_deriv(sr_arg) / (r_off - r_on)

    inner = sx * sr
    chi = cubic_smoothstep(inner)
    rho_p = cubic_smoothstep_deriv(inner)

    # gradient of r: (2p/h, -q h'/h^2, 2y/h) in (p, x, y) order
    dchi = np.zeros_like(pts)
    live = inside & (rho_p != 0.0) & ((dsx != 0.0) | (dsr != 0.0))
    if np.any(live):
        hl = h[live]
        coef_r = (rho_p * sx * dsr)[live]
        dchi[live, :-2] = coef_r[:, None] * 2.0 * p[live] / hl[:, None]
        dchi[live, -1] = coef_r * 2.0 * y[live] / hl
        dr_dx = -q[live] * dh[live] / (hl * hl)
        dchi[live, -2] = coef_r * dr_dx + (rho_p * dsx * sr)[live]
    return chi, dchi


class RayHamiltonian(HamiltonianField):
    """``F = (1-x^2)/(|p|^2+1-x^2) * chi(z) * y`` on ``R^{2n-2} x I x R``.

    The rational prefactor is 1 on the invariant axis ``{p=0, y=0}``, so
    points of the half-open segment ``x in [0, 1)`` reach the chart end in
    time ``1 - x`` exactly; off the axis the cutoff tube pinches and every
    trajectory is complete.
    """

    def __init__(self, n: int, eps: float = 0.5, h_coef: float = 0.25,
                 h_power: int = 1, r_on: float = 0.25, r_off: float = 0.5):
        if n < 1:
            raise InputError("n must be at least 1")
        if not (0.0 < eps < 1.0):
            raise InputError("eps must lie in (0, 1)")
        if h_coef <= 0.0:
            raise InputError("h_coef must be positive")
        self.n = n
        self.dim = 2 * n
        self.eps = eps
        self.h_coef = h_coef
        self.h_power = h_power
        self.r_on = r_on
        self.r_off = r_off

    def _pieces(self, pts):
        x = pts[:, -2]
        y = pts[:, -1]
        p = pts[:, :-2]
        q = np.sum(p * p, axis=1)
        if self.n == 1:
            # no base coordinates: the rational prefactor degenerates to 1
            denom = np.ones_like(x)
            amp = np.ones_like(x)
        else:
            denom = q + 1.0 - x * x
            # outside the chart the cutoff vanishes; keep the prefactor
            # finite there so 0 * amp stays 0
            safe = np.where(np.abs(denom) > 1e-12, denom, 1e-12)
            amp = (1.0 - x * x) / safe
            denom = safe
        chi, dchi = _tube_cutoff(
            pts, self.eps, self.h_coef, self.h_power, self.r_on, self.r_off
        )
        return x, y, p, q, denom, amp, chi, dchi

    def value(self, z):
        pts = _as_batch(z, self.dim)
        _, y, _, _, _, amp, chi, _ = self._pieces(pts)
        out = amp * chi * y
        return float(out[0]) if np.ndim(z) == 1 else out

    def grad(self, z):
        pts = _as_batch(z, self.dim)
        x, y, p, q, denom, amp, chi, dchi = self._pieces(pts)
        damp = np.zeros_like(pts)
        damp[:, :-2] = -(1.0 - x * x)[:, None] * 2.0 * p / (denom * denom)[:, None]
        damp[:, -2] = -2.0 * x * q / (denom * denom)
        out = (chi * y)[:, None] * damp + (amp * y)[:, None] * dchi
        out[:, -1] += amp * chi
        return out[0] if np.ndim(z) == 1 else out

    def membership(self, z) -> np.ndarray:
        """Exact membership in the model ray ``{p=0, y=0, 0 <= x < 1}``."""
        pts = _as_batch(z, self.dim)
        on_axis = np.all(pts[:, :-2] == 0.0, axis=1) & (pts[:, -1] == 0.0)
        out = on_axis & (pts[:, -2] >= 0.0) & (pts[:, -2] < 1.0)
        return bool(out[0]) if np.ndim(z) == 1 else out

    def sample_target(self, m: int, rng: np.random.Generator) -> np.ndarray:
        pts = np.zeros((m, self.dim))
        pts[:, -2] = rng.uniform(0.0, 0.95, size=m)
        return pts


def build_ray_hamiltonian(n: int, eps: float = 0.5, delta_h: float = 0.25) -> RayHamiltonian:
    """Explicit excising Hamiltonian for the model ray in dimension ``2n``,
    ``n >= 2``."""
    if n < 2:
        raise InputError("use build_ray_hamiltonian_n1 for the plane")
    return RayHamiltonian(n=n, eps=eps, h_coef=delta_h)


def build_ray_hamiltonian_n1(eps: float = 0.5, delta_h: float = 0.25,
                             h_power: int = 1) -> RayHamiltonian:
    """The 2-dimensional model: ``F = chi(x, y) * y`` (the rational
    prefactor degenerates to 1 when there are no ``p`` coordinates)."""
    return RayHamiltonian(n=1, eps=eps, h_coef=delta_h, h_power=h_power)


# ---------------------------------------------------------------------------
# extension of null fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExcisionTarget:
    """A closed subset of the hypersurface ``{y = 0}``: an exact membership
    test plus a sampler used for certification."""

    dim: int
    membership: Callable[[np.ndarray], np.ndarray]
    sample: Callable[[int, np.random.Generator], np.ndarray]
    label: str = ""


def epigraph_target(spec, x_max: float = 0.95) -> ExcisionTarget:
    """Target for the epigraph of ``spec.lam`` over ``spec.C`` inside
    ``B x I x {0}``."""
    dim = spec.C.dim + 2

    def membership(z):
        pts = _as_batch(z, dim)
        p, x, y = pts[:, :-2], pts[:, -2], pts[:, -1]
        return spec.membership(p, x) & (y == 0.0)

    def sample(m, rng):
        p = spec.C.sample(m, rng)
        lam = np.atleast_1d(spec.lam(p))
        x = rng.uniform(lam, np.maximum(lam, x_max))
        out = np.zeros((m, dim))
        out[:, :-2] = p
        out[:, -2] = x
        return out

    return ExcisionTarget(dim=dim, membership=membership, sample=sample,
                          label="epigraph")


class ExtendedHamiltonian(HamiltonianField):
    """Conormal-pairing extension ``F = chi * y * v(p, x)`` of a horizontal
    null field.

    ``chi`` is flat where it vanishes (outer cubic step) and is supported in
    ``{v > 0} intersect {|y v| < witness}``, which keeps ``|F|`` strictly
    below a function vanishing at infinity: every trajectory meeting
    ``{y != 0}`` is complete.  On the hypersurface the induced field is
    ``chi * v * d/dx``.
    """

    def __init__(self, field: VectorFieldPX, target: ExcisionTarget,
                 v_floor: float = V_FLOOR):
        self.field = field
        self.target = target
        self.dim = field.base_dim + 2
        self.v_floor = v_floor

    def _pieces(self, pts, need_grad: bool):
        p = pts[:, :-2]
        x = pts[:, -2]
        y = pts[:, -1]
        v = np.atleast_1d(self.field.velocity(p, x))
        ham = y * v
        wit = decay_witness(pts)
        ratio = np.abs(ham) / wit
        theta = smooth_step(v / self.v_floor)
        s_arg = 2.0 * (1.0 - ratio)
        s_h = smooth_step(s_arg)
        inner = theta * s_h
        chi = cubic_smoothstep(inner)
        if not need_grad:
            return p, x, y, v, ham, chi, None

        dv = np.zeros_like(pts)
        dv[:, :-2] = np.atleast_2d(self.field.velocity_grad_p(p, x))
        dv[:, -2] = np.atleast_1d(self.field.velocity_dx(p, x))

        dham = y[:, None] * dv
        dham[:, -1] += v

        dwit = decay_witness_grad(pts)
        sgn = np.sign(ham)
        dratio = (sgn[:, None] * dham * wit[:, None]
                  - np.abs(ham)[:, None] * dwit) / (wit * wit)[:, None]

        dtheta = (smooth_step_deriv(v / self.v_floor) / self.v_floor)[:, None] * dv
        ds_h = (-2.0 * smooth_step_deriv(s_arg))[:, None] * dratio
        dinner = dtheta * s_h[:, None] + theta[:, None] * ds_h
        dchi = cubic_smoothstep_deriv(inner)[:, None] * dinner

        grad = chi[:, None] * dham + ham[:, None] * dchi
        return p, x, y, v, ham, chi, grad

    def value(self, z):
        pts = _as_batch(z, self.dim)
        *_, ham, chi, _ = self._pieces(pts, need_grad=False)
        out = chi * ham
        return float(out[0]) if np.ndim(z) == 1 else out

    def grad(self, z):
        pts = _as_batch(z, self.dim)
        *_, grad = self._pieces(pts, need_grad=True)
        return grad[0] if np.ndim(z) == 1 else grad

    def cutoff(self, z):
        pts = _as_batch(z, self.dim)
        *_, chi, _ = self._pieces(pts, need_grad=False)
        return float(chi[0]) if np.ndim(z) == 1 else chi


def extend_null_field(field: VectorFieldPX, target: ExcisionTarget,
                      v_floor: float = V_FLOOR,
                      certificate_samples: int = 10_000,
                      rng: Optional[np.random.Generator] = None) -> ExtendedHamiltonian:
    """Extend a null field to a Hamiltonian on the ambient product model.

    Certifies by sampling that the field speed stays above ``v_floor`` on
    the target (the cutoff must be identically 1 there); scenarios that
    violate the floor are rejected loudly rather than silently degraded.
    """
    rng = rng or np.random.default_rng(20240901)
    zs = target.sample(certificate_samples, rng)
    v = np.atleast_1d(field.velocity(zs[:, :-2], zs[:, -2]))
    vmin = float(np.min(v))
    if vmin <= v_floor:
        raise InputError(
            f"null field not bounded below on Z: sampled min {vmin} <= {v_floor}"
        )
    return ExtendedHamiltonian(field, target, v_floor=v_floor)


# ---------------------------------------------------------------------------
# localization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TubeNeighbourhood:
    """Shrinking-tube neighbourhood of the model ray, with a smooth plateau
    bump: 1 inside the half-size tube, 0 outside the full tube."""

    eps: float
    h_coef: float
    h_power: int = 1

    def bump(self, pts: np.ndarray):
        return _tube_cutoff(pts, self.eps, self.h_coef, self.h_power,
                            r_on=0.25, r_off=0.5)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        x = pts[:, -2]
        q = np.sum(pts[:, :-2] ** 2, axis=1) + pts[:, -1] ** 2
        h = self.h_coef * np.maximum(1.0 - x, 0.0) ** self.h_power
        return (x > -self.eps) & (q < 0.5 * h)


class LocalizedHamiltonian(HamiltonianField):
    """``F' = bump * F``: vanishes outside the neighbourhood, coincides with
    ``F`` on the bump plateau."""

    def __init__(self, base: HamiltonianField, hood: TubeNeighbourhood):
        self.base = base
        self.hood = hood
        self.dim = base.dim

    def value(self, z):
        pts = _as_batch(z, self.dim)
        b, _ = self.hood.bump(pts)
        out = b * np.atleast_1d(self.base.value(pts))
        return float(out[0]) if np.ndim(z) == 1 else out

    def grad(self, z):
        pts = _as_batch(z, self.dim)
        b, db = self.hood.bump(pts)
        f = np.atleast_1d(self.base.value(pts))
        g = np.atleast_2d(self.base.grad(pts))
        out = b[:, None] * g + f[:, None] * db
        return out[0] if np.ndim(z) == 1 else out


def localize(F: HamiltonianField, hood: TubeNeighbourhood,
             target_samples: Optional[np.ndarray] = None) -> LocalizedHamiltonian:
    """Multiply ``F`` by the neighbourhood's plateau bump.

    When target samples are supplied, checks that the bump is identically 1
    on them (the neighbourhood must contain the excised set with margin).
    """
    if target_samples is not None:
        b, _ = hood.bump(np.atleast_2d(target_samples))
        if np.any(b < 1.0):
            raise InputError("neighbourhood does not contain the target with margin")
    return LocalizedHamiltonian(F, hood)
