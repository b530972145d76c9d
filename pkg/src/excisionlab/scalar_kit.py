"""Closed-form smooth building blocks, each paired with its exact derivative.

Everything downstream (1D flows, null fields on a product base, Hamiltonian
extensions) is assembled from the primitives in this module:

* ``cubic_smoothstep`` -- the polynomial step ``3s^2 - 2s^3`` used to flatten
  cutoffs at their zero set,
* ``smooth_step`` -- a C-infinity step built from ``exp(-1/t)`` ratios,
* ``rising_cutoff`` -- the two-sided exponential ramp that is 0 below
  ``(a-1)/2`` and 1 above ``a``,
* ``ramp_velocity`` -- the parametric velocity profile whose forward flow
  time has closed form (see :mod:`excisionlab.flow1d`),
* ``bridge_velocity`` -- the unit-plateau profile that crosses ``(lo, hi)``
  with a prescribed extra delay,
* ``defining_function`` -- a smooth nonnegative function whose zero locus is
  a prescribed closed set (finite unions of boxes, points and finite-depth
  Cantor products).

All evaluators accept scalars or numpy arrays and are pure; the field
objects are immutable after construction and safe to share between threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InputError

__all__ = [
    "EXP_CLAMP",
    "BRIDGE_NORM",
    "exp_decay",
    "exp_decay_deriv",
    "cubic_smoothstep",
    "cubic_smoothstep_deriv",
    "smooth_step",
    "smooth_step_deriv",
    "rising_cutoff",
    "rising_cutoff_dx",
    "rising_cutoff_da",
    "ramp_velocity",
    "ramp_velocity_partials",
    "bridge_velocity",
    "bridge_velocity_dx",
    "bump_mass",
    "bridge_norm",
    "ScalarField1D",
    "constant_field",
    "affine_field",
    "ramp_velocity_field",
    "bridge_velocity_field",
    "interval_to_line_field",
    "cotangent_lift",
    "AxisSet",
    "axis_point",
    "axis_interval",
    "cantor_axis",
    "ClosedSetSpec",
    "DefiningFunction",
    "defining_function",
    "decay_witness",
    "decay_witness_grad",
    "ball_bump",
    "ball_bump_from_sq",
    "smooth_box_plateau",
]

# Arguments of exp(-1/w) at or below this threshold are treated as 0.  The
# true value there is below exp(-1e12), far under 1e-300, so the clamp is
# invisible at double precision but avoids overflow in 1/w.
EXP_CLAMP = 1e-12

# Exponents below this underflow exp() to 0 anyway; used to silence 0*inf.
_LOG_TINY = -700.0


def _maybe_scalar(out, *inputs):
    if all(np.isscalar(v) or np.ndim(v) == 0 for v in inputs):
        return float(out)
    return out


def exp_decay(w):
    """``exp(-1/w)`` for ``w > 0``, extended by 0 for ``w <= 0``.

    The C-infinity prototype of every flat cutoff in the kit.
    """
    w = np.asarray(w, dtype=float)
    out = np.zeros_like(w)
    mask = w > EXP_CLAMP
    out[mask] = np.exp(-1.0 / w[mask])
    return _maybe_scalar(out, w)


def exp_decay_deriv(w):
    """Derivative ``exp(-1/w) / w^2`` of :func:`exp_decay`."""
    w = np.asarray(w, dtype=float)
    out = np.zeros_like(w)
    mask = w > EXP_CLAMP
    wm = w[mask]
    out[mask] = np.exp(-1.0 / wm) / (wm * wm)
    return _maybe_scalar(out, w)


def cubic_smoothstep(s):
    """Polynomial step ``3 s^2 - 2 s^3``.

    Total on the real line; callers clamp to [0, 1] when needed.  Satisfies
    ``f(0)=0, f(1)=1, f'(0)=f'(1)=0``, which is exactly what is required to
    make a composed cutoff flat on its zero set.
    """
    s = np.asarray(s, dtype=float)
    return _maybe_scalar(s * s * (3.0 - 2.0 * s), s)


def cubic_smoothstep_deriv(s):
    s = np.asarray(s, dtype=float)
    return _maybe_scalar(6.0 * s * (1.0 - s), s)


def _ratio(u, v):
    """``E(u) / (E(u) + E(v))`` with ``E = exp_decay``, flat at both ends.

    Assumes ``u + v > 0`` pointwise (never both branches dead).
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    u, v = np.broadcast_arrays(u, v)
    out = np.zeros(u.shape)
    out[v <= EXP_CLAMP] = 1.0
    mid = (u > EXP_CLAMP) & (v > EXP_CLAMP)
    if np.any(mid):
        n = np.exp(-1.0 / u[mid])
        d = np.exp(-1.0 / v[mid])
        out[mid] = n / (n + d)
    return out


def _ratio_partials(u, v):
    """Partials of :func:`_ratio` w.r.t. ``u`` and ``v``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    u, v = np.broadcast_arrays(u, v)
    du = np.zeros(u.shape)
    dv = np.zeros(u.shape)
    mid = (u > EXP_CLAMP) & (v > EXP_CLAMP)
    if np.any(mid):
        um, vm = u[mid], v[mid]
        n = np.exp(-1.0 / um)
        d = np.exp(-1.0 / vm)
        np_ = n / (um * um)
        dp = d / (vm * vm)
        denom = (n + d) ** 2
        du[mid] = np_ * d / denom
        dv[mid] = -n * dp / denom
    return du, dv


def smooth_step(t):
    """C-infinity step: 0 for ``t <= 0``, 1 for ``t >= 1``, flat at both ends."""
    t = np.asarray(t, dtype=float)
    return _maybe_scalar(_ratio(t, 1.0 - t), t)


def smooth_step_deriv(t):
    t = np.asarray(t, dtype=float)
    du, dv = _ratio_partials(t, 1.0 - t)
    return _maybe_scalar(du - dv, t)


# ---------------------------------------------------------------------------
# the rising cutoff and the parametric ramp velocity
# ---------------------------------------------------------------------------

def _check_open(name, value, lo, hi):
    value = np.asarray(value, dtype=float)
    if np.any(value <= lo) or np.any(value >= hi):
        raise InputError(f"{name} must lie in ({lo}, {hi})")


def _check_closed(name, value, lo, hi):
    value = np.asarray(value, dtype=float)
    if np.any(value < lo) or np.any(value > hi):
        raise InputError(f"{name} must lie in [{lo}, {hi}]")


def rising_cutoff(a, x, validate: bool = True):
    """Nondecreasing C-infinity ramp: 0 for ``x <= (a-1)/2``, 1 for ``x >= a``.

    On the middle band it is the normalized ratio of ``exp(-1/(x-(a-1)/2))``
    against ``exp(-1/(a-x))``; in particular the value at the midpoint of the
    band is exactly 1/2.
    """
    if validate:
        _check_open("a", a, -1.0, 1.0)
        _check_open("x", x, -1.0, 1.0)
    a = np.asarray(a, dtype=float)
    x = np.asarray(x, dtype=float)
    s = 0.5 * (a - 1.0)
    return _maybe_scalar(_ratio(x - s, a - x), a, x)


def rising_cutoff_dx(a, x):
    """x-derivative of :func:`rising_cutoff` (closed form, nonnegative)."""
    a = np.asarray(a, dtype=float)
    x = np.asarray(x, dtype=float)
    s = 0.5 * (a - 1.0)
    du, dv = _ratio_partials(x - s, a - x)
    return _maybe_scalar(du - dv, a, x)


def rising_cutoff_da(a, x):
    """a-derivative of :func:`rising_cutoff` (nonpositive: raising ``a``
    pushes the ramp to the right)."""
    a = np.asarray(a, dtype=float)
    x = np.asarray(x, dtype=float)
    s = 0.5 * (a - 1.0)
    du, dv = _ratio_partials(x - s, a - x)
    return _maybe_scalar(-0.5 * du + dv, a, x)


def ramp_velocity(a, b, c, x, validate: bool = True):
    """Parametric velocity ``rising_cutoff(a,x) * (1-b) * (1-x^2)/(1-x^2+c)``.

    Values lie in [0, 1]; zero exactly where the cutoff or the ``1-b``
    factor vanishes.  For ``c = 0`` the rational factor is identically 1, so
    above the ramp the speed is the constant ``1-b``; for ``c > 0`` the
    speed decays near the right endpoint fast enough that the endpoint is
    never reached in finite time.
    """
    if validate:
        _check_open("a", a, -1.0, 1.0)
        _check_closed("b", b, -1.0, 1.0)
        _check_closed("c", c, 0.0, 1.0)
        _check_open("x", x, -1.0, 1.0)
    a, b, c, x = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (a, b, c, x))
    )
    one_m_x2 = 1.0 - x * x
    rational = one_m_x2 / (one_m_x2 + c)
    chi = rising_cutoff(a, x, validate=False)
    return _maybe_scalar(chi * (1.0 - b) * rational, a, b, c, x)


def ramp_velocity_partials(a, b, c, x):
    """Partials ``(du/da, du/db, du/dc, du/dx)`` of :func:`ramp_velocity`."""
    a, b, c, x = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (a, b, c, x))
    )
    one_m_x2 = 1.0 - x * x
    denom = one_m_x2 + c
    rational = one_m_x2 / denom
    r_x = -2.0 * x * c / (denom * denom)
    r_c = -one_m_x2 / (denom * denom)
    chi = rising_cutoff(a, x, validate=False)
    chi_x = rising_cutoff_dx(a, x)
    chi_a = rising_cutoff_da(a, x)
    one_m_b = 1.0 - b
    du_da = chi_a * one_m_b * rational
    du_db = -chi * rational
    du_dc = chi * one_m_b * r_c
    du_dx = chi_x * one_m_b * rational + chi * one_m_b * r_x
    return du_da, du_db, du_dc, du_dx


# ---------------------------------------------------------------------------
# the bridge velocity and its normalization constant
# ---------------------------------------------------------------------------

_GL_NODES = 160
_gl_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gauss_legendre(n: int):
    if n not in _gl_cache:
        _gl_cache[n] = np.polynomial.legendre.leggauss(n)
    return _gl_cache[n]


def bump_mass(t):
    """Cumulative mass ``int_{-1}^{t} exp(-2/(1-s^2)) ds`` of the unit bump.

    Evaluated with a fixed high-order Gauss-Legendre rule; the integrand is
    smooth and flat at the endpoints, so the rule is accurate to roundoff.
    """
    t = np.asarray(t, dtype=float)
    tc = np.clip(t, -1.0, 1.0)
    nodes, weights = _gauss_legendre(_GL_NODES)
    half = 0.5 * (tc + 1.0)
    # map [-1, 1] reference nodes onto [-1, tc]
    pts = -1.0 + np.multiply.outer(half, nodes + 1.0)
    q = 1.0 - pts * pts
    vals = np.zeros_like(pts)
    mask = q > EXP_CLAMP
    vals[mask] = np.exp(-2.0 / q[mask])
    out = half * (vals * weights).sum(axis=-1)
    return _maybe_scalar(out, t)


_bridge_norm_value: Optional[float] = None


def bridge_norm() -> float:
    """Total mass of the unit bump (normalizes all bridge crossing times)."""
    global _bridge_norm_value
    if _bridge_norm_value is None:
        _bridge_norm_value = float(bump_mass(1.0))
    return _bridge_norm_value


BRIDGE_NORM = bridge_norm()


def _bridge_params(lo, hi, delay):
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    delay = np.asarray(delay, dtype=float)
    if np.any(~(0.0 < lo)) or np.any(~(lo < hi)) or np.any(~(hi < 1.0)):
        raise InputError("bridge requires 0 < lo < hi < 1")
    if np.any(~(delay > 0.0)):
        raise InputError("bridge delay must be positive")
    return lo, hi, delay


def bridge_velocity(lo, hi, delay, x, validate: bool = True):
    """Smooth speed on (0,1): 1 outside ``(lo, hi)``, slowed inside so that
    the crossing from ``lo`` to ``hi`` takes exactly ``hi - lo + delay``.

    Inside the band the profile is ``K / (K + delay * W(x))`` where ``W`` is
    a flat bump on ``(lo, hi)`` and ``K = (hi-lo)/2 * bridge_norm()``; the
    normalization makes the extra crossing time exactly ``delay``.
    """
    if validate:
        lo, hi, delay = _bridge_params(lo, hi, delay)
    lo, hi, delay, x = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (lo, hi, delay, x))
    )
    out = np.ones(x.shape)
    inside = (x > lo) & (x < hi)
    if np.any(inside):
        l, h, d, xi = lo[inside], hi[inside], delay[inside], x[inside]
        width = h - l
        expo = -width * width / (2.0 * (xi - l) * (h - xi))
        w = np.where(expo > _LOG_TINY, np.exp(np.maximum(expo, _LOG_TINY)), 0.0)
        k = 0.5 * width * BRIDGE_NORM
        out[inside] = k / (k + d * w)
    return _maybe_scalar(out, lo, hi, delay, x)


def bridge_velocity_dx(lo, hi, delay, x):
    """x-derivative of :func:`bridge_velocity` (0 outside the band)."""
    lo, hi, delay, x = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (lo, hi, delay, x))
    )
    out = np.zeros(x.shape)
    inside = (x > lo) & (x < hi)
    if np.any(inside):
        l, h, d, xi = lo[inside], hi[inside], delay[inside], x[inside]
        width = h - l
        prod = (xi - l) * (h - xi)
        expo = -width * width / (2.0 * prod)
        live = expo > _LOG_TINY
        w = np.where(live, np.exp(np.maximum(expo, _LOG_TINY)), 0.0)
        # d/dx of the exponent; w underflows to 0 faster than this grows
        w_x = np.where(
            live,
            w * (width * width / 2.0) * (l + h - 2.0 * xi) / (prod * prod),
            0.0,
        )
        k = 0.5 * width * BRIDGE_NORM
        out[inside] = -k * d * w_x / (k + d * w) ** 2
    return _maybe_scalar(out, lo, hi, delay, x)


def bridge_crossing_time(lo, hi, delay, x0, x1):
    """Exact travel time of the bridge flow from ``x0`` to ``x1``.

    Valid for ``lo <= x0 <= x1 <= hi``; uses the closed antiderivative
    ``(x1-x0) + delay * (M(eta1) - M(eta0)) / bridge_norm()`` where ``M`` is
    :func:`bump_mass` and ``eta`` the affine map of the band onto (-1, 1).
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    delay = np.asarray(delay, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    width = hi - lo
    eta0 = np.clip((2.0 * x0 - lo - hi) / width, -1.0, 1.0)
    eta1 = np.clip((2.0 * x1 - lo - hi) / width, -1.0, 1.0)
    extra = delay * (bump_mass(eta1) - bump_mass(eta0)) / BRIDGE_NORM
    return _maybe_scalar((x1 - x0) + extra, lo, hi, delay, x0, x1)


# ---------------------------------------------------------------------------
# 1D scalar fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalarField1D:
    """An evaluable smooth function of one variable with exact derivative.

    ``zero_regions`` lists closed intervals on which the field vanishes
    identically; flow-time computations use them to certify blocked
    trajectories without scanning.  ``None`` means "unknown, scan".
    """

    f: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray]
    domain: tuple[float, float]
    zero_regions: Optional[tuple[tuple[float, float], ...]] = ()
    label: str = ""

    def __call__(self, x):
        return self.f(x)

    def deriv(self, x):
        return self.df(x)

    def check_domain(self, x) -> None:
        lo, hi = self.domain
        if np.any(np.asarray(x) <= lo) or np.any(np.asarray(x) >= hi):
            raise InputError(
                f"argument outside open domain ({lo}, {hi}) of {self.label or 'field'}"
            )


def constant_field(value: float, domain=(0.0, 1.0)) -> ScalarField1D:
    zeros = (tuple([domain]) if value == 0.0 else ())
    return ScalarField1D(
        f=lambda x: np.full_like(np.asarray(x, dtype=float), value),
        df=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        domain=domain,
        zero_regions=zeros,
        label=f"const({value})",
    )


def affine_field(slope: float, intercept: float, domain) -> ScalarField1D:
    return ScalarField1D(
        f=lambda x: slope * np.asarray(x, dtype=float) + intercept,
        df=lambda x: np.full_like(np.asarray(x, dtype=float), slope),
        domain=domain,
        zero_regions=None,
        label=f"affine({slope},{intercept})",
    )


def ramp_velocity_field(a: float, b: float, c: float) -> ScalarField1D:
    """The velocity ``ramp_velocity(a, b, c, .)`` on (-1, 1) with its exact
    zero set recorded."""
    _check_open("a", a, -1.0, 1.0)
    _check_closed("b", b, -1.0, 1.0)
    _check_closed("c", c, 0.0, 1.0)
    if b == 1.0:
        zeros = ((-1.0, 1.0),)
    else:
        zeros = ((-1.0, 0.5 * (a - 1.0)),)
    return ScalarField1D(
        f=lambda x: ramp_velocity(a, b, c, x, validate=False),
        df=lambda x: ramp_velocity_partials(a, b, c, x)[3],
        domain=(-1.0, 1.0),
        zero_regions=zeros,
        label=f"ramp(a={a},b={b},c={c})",
    )


def bridge_velocity_field(lo: float, hi: float, delay: float) -> ScalarField1D:
    _bridge_params(lo, hi, delay)
    return ScalarField1D(
        f=lambda x: bridge_velocity(lo, hi, delay, x, validate=False),
        df=lambda x: bridge_velocity_dx(lo, hi, delay, x),
        domain=(0.0, 1.0),
        zero_regions=(),
        label=f"bridge({lo},{hi},{delay})",
    )


def interval_to_line_field() -> ScalarField1D:
    """The diffeomorphism ``t -> t/(1-t^2)`` from (-1,1) onto the line."""

    def g(t):
        t = np.asarray(t, dtype=float)
        return t / (1.0 - t * t)

    def dg(t):
        t = np.asarray(t, dtype=float)
        q = 1.0 - t * t
        return (1.0 + t * t) / (q * q)

    return ScalarField1D(
        f=g, df=dg, domain=(-1.0, 1.0), zero_regions=None, label="t/(1-t^2)"
    )


def cotangent_lift(g: ScalarField1D, point):
    """Area-preserving lift ``(x, y) -> (g(x), y / g'(x))`` of a 1D
    diffeomorphism; the Jacobian determinant is identically 1."""
    x, y = float(point[0]), float(point[1])
    g.check_domain(x)
    gp = float(g.deriv(x))
    if gp == 0.0:
        raise InputError("lifted map needs a nonvanishing derivative")
    return float(g(x)), y / gp


# ---------------------------------------------------------------------------
# closed sets and their smooth defining functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AxisSet:
    """Finite union of disjoint closed intervals on one coordinate axis."""

    intervals: tuple[tuple[float, float], ...]

    def __post_init__(self):
        ivs = tuple(sorted((float(a), float(b)) for a, b in self.intervals))
        for a, b in ivs:
            if b < a:
                raise InputError("interval endpoints out of order")
        for (_, b0), (a1, _) in zip(ivs, ivs[1:]):
            if a1 <= b0:
                raise InputError("axis intervals must be disjoint")
        object.__setattr__(self, "intervals", ivs)

    def contains(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape, dtype=bool)
        for a, b in self.intervals:
            out |= (t >= a) & (t <= b)
        return out

    def boundary_distance(self, t) -> np.ndarray:
        """Distance to the nearest interval endpoint (the membership
        decision boundary along this axis)."""
        t = np.asarray(t, dtype=float)
        edges = np.asarray([e for iv in self.intervals for e in iv])
        return np.abs(t[..., None] - edges).min(axis=-1)

    @property
    def span(self) -> tuple[float, float]:
        return self.intervals[0][0], self.intervals[-1][1]


def axis_point(v: float) -> AxisSet:
    return AxisSet(((v, v),))


def axis_interval(lo: float, hi: float) -> AxisSet:
    return AxisSet(((lo, hi),))


def cantor_axis(lo: float, hi: float, depth: int) -> AxisSet:
    """Depth-``depth`` middle-thirds approximation of the Cantor set scaled
    to ``[lo, hi]``: a union of ``2**depth`` closed intervals (a superset of
    the true Cantor set)."""
    if depth < 0:
        raise InputError("depth must be nonnegative")
    pieces = [(0.0, 1.0)]
    for _ in range(depth):
        nxt = []
        for a, b in pieces:
            third = (b - a) / 3.0
            nxt.append((a, a + third))
            nxt.append((b - third, b))
        pieces = nxt
    scale = hi - lo
    return AxisSet(tuple((lo + a * scale, lo + b * scale) for a, b in pieces))


@dataclass(frozen=True)
class ClosedSetSpec:
    """Closed subset of R^dim: a finite union of axis-aligned product pieces.

    Each piece is a tuple of one :class:`AxisSet` per coordinate; the piece
    is the product of its axis sets.  Boxes are single-interval pieces,
    points are degenerate boxes, Cantor brushes use a Cantor axis.
    """

    dim: int
    pieces: tuple[tuple[AxisSet, ...], ...]

    def __post_init__(self):
        if not self.pieces:
            raise InputError("closed set needs at least one piece")
        for piece in self.pieces:
            if len(piece) != self.dim:
                raise InputError("piece dimension mismatch")

    def contains(self, points) -> np.ndarray:
        """Exact membership test (interval comparisons, no smoothing)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros(pts.shape[0], dtype=bool)
        for piece in self.pieces:
            inside = np.ones(pts.shape[0], dtype=bool)
            for k, axis in enumerate(piece):
                inside &= axis.contains(pts[:, k])
            out |= inside
        if np.ndim(points) == 1:
            return bool(out[0])
        return out

    def boundary_distance(self, points) -> np.ndarray:
        """Distance to the nearest interval endpoint in any coordinate,
        minimized over pieces.  Used to carve classification margin bands."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        best = np.full(pts.shape[0], np.inf)
        for piece in self.pieces:
            for k, axis in enumerate(piece):
                for a, b in axis.intervals:
                    best = np.minimum(best, np.abs(pts[:, k] - a))
                    best = np.minimum(best, np.abs(pts[:, k] - b))
        return best if np.ndim(points) > 1 else float(best[0])

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Uniformly sample points of the set, piece by piece."""
        piece_idx = rng.integers(0, len(self.pieces), size=n)
        out = np.empty((n, self.dim))
        for i, pi in enumerate(piece_idx):
            for k, axis in enumerate(self.pieces[pi]):
                a, b = axis.intervals[rng.integers(0, len(axis.intervals))]
                out[i, k] = rng.uniform(a, b) if b > a else a
        return out


def _axis_profile(axis: AxisSet, t: np.ndarray, d0: float):
    """Smooth profile vanishing exactly on the axis set, with value and
    derivative; flat (all derivatives 0) at every interval endpoint."""
    t = np.asarray(t, dtype=float)
    val = np.zeros(t.shape)
    der = np.zeros(t.shape)
    ivs = axis.intervals
    lo0 = ivs[0][0]
    him = ivs[-1][1]

    left = t < lo0
    if np.any(left):
        w = lo0 - t[left]
        val[left] = np.where(w > EXP_CLAMP, np.exp(-d0 / np.maximum(w, EXP_CLAMP)), 0.0)
        der[left] = -val[left] * d0 / np.maximum(w, EXP_CLAMP) ** 2

    right = t > him
    if np.any(right):
        w = t[right] - him
        val[right] = np.where(w > EXP_CLAMP, np.exp(-d0 / np.maximum(w, EXP_CLAMP)), 0.0)
        der[right] = val[right] * d0 / np.maximum(w, EXP_CLAMP) ** 2

    for (_, b0), (a1, _) in zip(ivs, ivs[1:]):
        gap = a1 - b0
        if gap <= 0:
            continue
        m = (t > b0) & (t < a1)
        if not np.any(m):
            continue
        u = t[m] - b0
        v = a1 - t[m]
        # normalized so the peak value at the gap midpoint is exactly 1
        expo = d0 * (4.0 / gap - 1.0 / np.maximum(u, EXP_CLAMP) - 1.0 / np.maximum(v, EXP_CLAMP))
        live = (u > EXP_CLAMP) & (v > EXP_CLAMP) & (expo > _LOG_TINY)
        pv = np.where(live, np.exp(np.maximum(expo, _LOG_TINY)), 0.0)
        pd = np.where(
            live,
            pv * d0 * (1.0 / np.maximum(u, EXP_CLAMP) ** 2 - 1.0 / np.maximum(v, EXP_CLAMP) ** 2),
            0.0,
        )
        val[m] = pv
        der[m] = pd
    return val, der


@dataclass(frozen=True)
class DefiningFunction:
    """Smooth ``c: R^dim -> [0, 1)`` with ``c(p) = 0`` iff ``p`` is in the
    prescribed closed set; carries the exact gradient.

    ``sharpness`` sets the length scale of the exponential profiles: at
    distance ``d`` from the set the value is roughly ``exp(-sharpness/d)``,
    so smaller values make ``c`` rise faster off the set.
    """

    spec: ClosedSetSpec
    sharpness: float = 0.006

    def _piece_terms(self, pts: np.ndarray):
        vals = []
        grads = []
        for piece in self.spec.pieces:
            pv = np.zeros(pts.shape[0])
            pg = np.zeros(pts.shape)
            for k, axis in enumerate(piece):
                av, ad = _axis_profile(axis, pts[:, k], self.sharpness)
                pv += av
                pg[:, k] = ad
            vals.append(pv)
            grads.append(pg)
        return vals, grads

    def value(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        vals, _ = self._piece_terms(pts)
        prod = np.ones(pts.shape[0])
        for pv in vals:
            prod *= pv
        out = prod / (1.0 + prod)
        return float(out[0]) if np.ndim(points) == 1 else out

    def value_and_grad(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        vals, grads = self._piece_terms(pts)
        prod = np.ones(pts.shape[0])
        for pv in vals:
            prod *= pv
        gprod = np.zeros(pts.shape)
        for i, gi in enumerate(grads):
            others = np.ones(pts.shape[0])
            for j, pv in enumerate(vals):
                if j != i:
                    others *= pv
            gprod += gi * others[:, None]
        cap = prod / (1.0 + prod)
        dcap = 1.0 / (1.0 + prod) ** 2
        grad = gprod * dcap[:, None]
        if np.ndim(points) == 1:
            return float(cap[0]), grad[0]
        return cap, grad

    def grad(self, points):
        return self.value_and_grad(points)[1]


def defining_function(spec: ClosedSetSpec, sharpness: float = 0.006) -> DefiningFunction:
    """Build the smooth defining function of a :class:`ClosedSetSpec`."""
    if sharpness <= 0:
        raise InputError("sharpness must be positive")
    return DefiningFunction(spec=spec, sharpness=sharpness)


# ---------------------------------------------------------------------------
# witness and bump helpers
# ---------------------------------------------------------------------------

def decay_witness(z):
    """Positive function ``1/(1 + |z|^2)`` vanishing at infinity; its
    superlevel sets are balls, hence bounded."""
    z = np.asarray(z, dtype=float)
    sq = np.sum(z * z, axis=-1)
    return 1.0 / (1.0 + sq)


def decay_witness_grad(z):
    z = np.asarray(z, dtype=float)
    sq = np.sum(z * z, axis=-1, keepdims=True)
    return -2.0 * z / (1.0 + sq) ** 2


def ball_bump_from_sq(q):
    """Radial bump as a function of the squared relative radius
    ``q = (r/R)^2``: 1 at the center, flat 0 at ``q >= 1``."""
    q = np.asarray(q, dtype=float)
    out = np.zeros(q.shape)
    m = q < 1.0 - 1e-14
    qm = q[m]
    out[m] = np.exp(-qm / (1.0 - qm))
    return _maybe_scalar(out, q)


def ball_bump(dist, radius):
    dist = np.asarray(dist, dtype=float)
    return ball_bump_from_sq((dist / radius) ** 2)


def smooth_box_plateau(points, lo, hi, margin):
    """C-infinity plateau: exactly 1 on the box ``[lo, hi]``, 0 outside the
    ``margin``-enlarged box; a product of one-sided smooth steps per axis."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    out = np.ones(pts.shape[0])
    for k in range(pts.shape[1]):
        t = pts[:, k]
        out = out * smooth_step((t - (lo[k] - margin)) / margin)
        out = out * smooth_step(((hi[k] + margin) - t) / margin)
    if np.ndim(points) == 1:
        return float(out[0])
    return out
