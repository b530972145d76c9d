"""Horizontal vector fields ``v(p, x) d/dx`` on a product ``B x I`` whose
time-1 flow excises the epigraph of a smooth function over a closed set.

The velocity is the parametric ramp profile with base-dependent parameters
``a(p) = (lambda(p) - 1) / 2``, ``b(p) = lambda(p)`` and ``c(p)`` a smooth
defining function of the closed set ``C``: on fibres over ``C`` the forward
time to the right end is ``(1 - x) / (1 - lambda(p))`` above the ramp, so it
is at most 1 exactly on the epigraph; off ``C`` the positive ``c`` makes the
time infinite.  The field is horizontal, so its flow moves only the ``x``
coordinate and preserves any 2-form pulled back from ``B``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ExcisedPointError, InputError
from .flow1d import flow_map, forward_time, ramp_time_closed_form
from .scalar_kit import (
    ClosedSetSpec,
    DefiningFunction,
    ScalarField1D,
    defining_function,
    ramp_velocity,
    ramp_velocity_field,
    ramp_velocity_partials,
)

__all__ = [
    "SmoothMap",
    "constant_map",
    "affine_map",
    "EpigraphSpec",
    "VectorFieldPX",
    "EpigraphField",
    "build_epigraph_field",
    "EXCISED",
    "SURVIVES",
    "classify_epigraph",
    "presympl_time1",
    "presympl_flow",
]

EXCISED = "excised"
SURVIVES = "survives"


@dataclass(frozen=True)
class SmoothMap:
    """A smooth function on the base with an exact gradient.

    ``f`` maps ``(m, d)`` arrays to ``(m,)``; ``grad`` maps ``(m, d)`` to
    ``(m, d)``.  Single points ``(d,)`` are accepted too.
    """

    f: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    label: str = ""

    def __call__(self, p):
        pts = np.atleast_2d(np.asarray(p, dtype=float))
        out = self.f(pts)
        return float(out[0]) if np.ndim(p) == 1 else out

    def gradient(self, p):
        pts = np.atleast_2d(np.asarray(p, dtype=float))
        out = self.grad(pts)
        return out[0] if np.ndim(p) == 1 else out


def constant_map(value: float, label: str = "") -> SmoothMap:
    return SmoothMap(
        f=lambda pts: np.full(pts.shape[0], float(value)),
        grad=lambda pts: np.zeros_like(pts),
        label=label or f"const({value})",
    )


def affine_map(coeffs, const: float, label: str = "") -> SmoothMap:
    coeffs = np.asarray(coeffs, dtype=float)
    return SmoothMap(
        f=lambda pts: pts @ coeffs + const,
        grad=lambda pts: np.broadcast_to(coeffs, pts.shape).copy(),
        label=label or "affine",
    )


@dataclass(frozen=True)
class EpigraphSpec:
    """The excision target: epigraph of ``lam`` over the closed set ``C``.

    ``lam`` must be smooth on all of the base with values in (-1, 1]; it is
    the ambient extension of the function whose epigraph over ``C`` is
    removed.  ``validation_box`` bounds the region on which the range of
    ``lam`` is spot-checked at construction.
    """

    C: ClosedSetSpec
    lam: SmoothMap
    validation_box: tuple = ()
    sharpness: float = 0.006

    def membership(self, p, x) -> np.ndarray:
        """Exact epigraph membership ``p in C and x >= lam(p)`` (the oracle
        side of every classification check)."""
        pts = np.atleast_2d(np.asarray(p, dtype=float))
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        inside = self.C.contains(pts) & (xs >= self.lam(pts))
        if np.ndim(p) == 1:
            return bool(inside[0])
        return inside


class VectorFieldPX:
    """Fibrewise-horizontal field ``v(p, x) d/dx`` on ``base x interval``."""

    base_dim: int
    interval: tuple[float, float]

    def velocity(self, p, x):
        raise NotImplementedError

    def velocity_dx(self, p, x):
        raise NotImplementedError

    def velocity_grad_p(self, p, x):
        raise NotImplementedError

    def fiber(self, p) -> ScalarField1D:
        """The restriction ``v(p, .)`` as a 1D field with exact zero set."""
        raise NotImplementedError


class EpigraphField(VectorFieldPX):
    """The ramp-velocity field attached to an :class:`EpigraphSpec`."""

    def __init__(self, spec: EpigraphSpec):
        self.spec = spec
        self.base_dim = spec.C.dim
        self.interval = (-1.0, 1.0)
        self.c_fn: DefiningFunction = defining_function(spec.C, spec.sharpness)

    # parameter fields: a = (b - 1)/2 with b = lam, c the defining function
    def params(self, p):
        pts = np.atleast_2d(np.asarray(p, dtype=float))
        b = self.spec.lam(pts)
        a = 0.5 * (b - 1.0)
        c = self.c_fn.value(pts)
        if np.ndim(p) == 1:
            return float(a[0]), float(b[0]), float(c[0])
        return a, b, c

    def velocity(self, p, x):
        a, b, c = self.params(p)
        return ramp_velocity(a, b, c, x, validate=False)

    def velocity_dx(self, p, x):
        a, b, c = self.params(p)
        return ramp_velocity_partials(a, b, c, x)[3]

    def velocity_grad_p(self, p, x):
        pts = np.atleast_2d(np.asarray(p, dtype=float))
        xs = np.asarray(x, dtype=float)
        b = self.spec.lam(pts)
        a = 0.5 * (b - 1.0)
        c, c_grad = self.c_fn.value_and_grad(pts)
        b_grad = self.spec.lam.gradient(pts)
        du_da, du_db, du_dc, _ = ramp_velocity_partials(a, b, c, xs)
        grad = (
            (0.5 * du_da + du_db)[..., None] * b_grad
            + du_dc[..., None] * c_grad
        )
        return grad[0] if np.ndim(p) == 1 else grad

    def fiber(self, p) -> ScalarField1D:
        a, b, c = self.params(np.asarray(p, dtype=float))
        return ramp_velocity_field(a, b, c)


def build_epigraph_field(spec: EpigraphSpec) -> EpigraphField:
    """Build the null field of an epigraph target, validating the range of
    the ambient function on the validation box and on the set itself."""
    rng = np.random.default_rng(0)
    samples = [spec.C.sample(256, rng)]
    if spec.validation_box:
        lo, hi = np.asarray(spec.validation_box[0]), np.asarray(spec.validation_box[1])
        samples.append(rng.uniform(lo, hi, size=(512, spec.C.dim)))
    vals = spec.lam(np.concatenate(samples, axis=0))
    if np.any(vals <= -1.0) or np.any(vals > 1.0):
        raise InputError("ambient function must take values in (-1, 1]")
    return EpigraphField(spec)


def classify_epigraph(field: EpigraphField, p, x) -> str:
    """``excised`` when the closed-form forward time is at most 1.

    This is the analytic route; the integration-based escape verdicts and
    the raw membership test are kept independent of it.
    """
    a, b, c = field.params(np.asarray(p, dtype=float))
    tof = ramp_time_closed_form(a, b, c, float(x))
    return EXCISED if tof.value <= 1.0 else SURVIVES


def presympl_time1(field: VectorFieldPX, p, x) -> tuple[np.ndarray, float]:
    """Time-1 flow of the null field: freezes ``p``, advances ``x``.

    Raises :class:`~excisionlab.errors.ExcisedPointError` when the fibre
    leaves the interval within time 1.
    """
    p = np.asarray(p, dtype=float)
    v = field.fiber(p)
    tof = forward_time(v, float(x))
    if tof.value <= 1.0:
        raise ExcisedPointError(
            f"forward time {tof.value} <= 1 at (p={p.tolist()}, x={x})"
        )
    return p.copy(), flow_map(v, 1.0, float(x))


def presympl_flow(field: VectorFieldPX, p, x, t: float) -> tuple[np.ndarray, float]:
    """General time-``t`` fibre flow (backward flows are always defined for
    the shipped fields; forward flows need ``t`` below the forward time)."""
    p = np.asarray(p, dtype=float)
    v = field.fiber(p)
    return p.copy(), flow_map(v, float(t), float(x))
