"""Excision fields for epigraphs of lower semi-continuous functions.

The target function ``lam`` on a bounded base region is piecewise constant:
finitely many closed boxes carry values in (0, 1], the minimum wins on
overlaps, and the default off every box is 1.  The pipeline has three
stages:

1. a strictly increasing sequence of smooth minorants ``f_n`` converging to
   ``lam`` from below, built level by level from blended lattice bumps
   whose constants sit strictly between the previous level and the target
   (:func:`baire_sequence`);
2. smooth separators ``g_n`` with ``f_{n+1} < g_n < g_{n+1} < 1`` and
   ``sup g_n = 1``, each a bump blend of constants above an exact
   over-ball bound of the functions it must dominate
   (:func:`smooth_majorant` and its structural variant);
3. a tower of unit-capped velocities on ``B x (0, 1)``: the first from
   :func:`adjust_time_1` (exit time <= 1 exactly above ``f_1``), each next
   from :func:`adjust_time_2`, which keeps the previous field below
   ``g_{n-1}``, re-times the exit threshold from ``f_{n-1}`` to ``f_n``
   through a bridge band ``(g_{n-1}, g_n)``, and runs at unit speed above
   ``g_n``.

The limit field is evaluated lazily band by band; its exit time is at most
1 exactly on the epigraph ``{x >= lam(p)}``, and the final flat cutoff
below ``f_1(p)/2`` makes every backward trajectory take infinite time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import CoverageError, DepthExhausted, InputError
from .null_fields import VectorFieldPX
from .scalar_kit import (
    ScalarField1D,
    ball_bump_from_sq,
    bridge_crossing_time,
    bridge_velocity,
    bridge_velocity_dx,
    smooth_box_plateau,
    smooth_step,
    smooth_step_deriv,
)

__all__ = [
    "LscSpec",
    "BaireSequence",
    "baire_sequence",
    "smooth_majorant",
    "BandVelocity",
    "adjust_time_1",
    "adjust_time_2",
    "FiberData",
    "GluedField",
    "build_lsc_field",
]

# plateau margin of the high-side gating; kept below every classification
# margin so the gating collars never reach test points
GATE_HI_MARGIN = 1e-4

# bump-blend radius of all separators; their supremum is driven to 1 by the
# (1 - 1/n) floor, so the blend scale can stay fixed
MAJORANT_SCALE = 0.25


# ---------------------------------------------------------------------------
# the target: piecewise-constant lower semi-continuous functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LscSpec:
    """Bounded base box with closed value-boxes; ``lam = min`` over covering
    boxes, 1 off all of them.  Closed boxes carrying the smaller value make
    ``lam`` lower semi-continuous by construction."""

    base_lo: tuple
    base_hi: tuple
    pieces: tuple  # ((lo, hi, value), ...) with lo/hi coordinate tuples

    def __post_init__(self):
        for lo, hi, value in self.pieces:
            if not (0.0 < value <= 1.0):
                raise InputError("piece values must lie in (0, 1]")
            if np.any(np.asarray(hi) < np.asarray(lo)):
                raise InputError("piece corners out of order")

    @property
    def dim(self) -> int:
        return len(self.base_lo)

    def lam(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.ones(pts.shape[0])
        for lo, hi, value in self.pieces:
            lo = np.asarray(lo, dtype=float)
            hi = np.asarray(hi, dtype=float)
            inside = np.all((pts >= lo) & (pts <= hi), axis=1)
            out = np.where(inside, np.minimum(out, value), out)
        return float(out[0]) if np.ndim(points) == 1 else out

    def boundary_distance(self, points):
        """Distance to the nearest piece face (the discontinuity set of
        ``lam`` lives on piece boundaries); used to carve margin bands."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        best = np.full(pts.shape[0], np.inf)
        for lo, hi, _ in self.pieces:
            lo = np.asarray(lo, dtype=float)
            hi = np.asarray(hi, dtype=float)
            outside = np.maximum(np.maximum(lo - pts, pts - hi), 0.0)
            d_out = np.linalg.norm(outside, axis=1)
            inside_margin = np.min(np.minimum(pts - lo, hi - pts), axis=1)
            d = np.where(d_out > 0.0, d_out, np.maximum(inside_margin, 0.0))
            best = np.minimum(best, d)
        return float(best[0]) if np.ndim(points) == 1 else best

    def to_config(self) -> dict:
        return {
            "base_lo": list(self.base_lo),
            "base_hi": list(self.base_hi),
            "pieces": [
                {"lo": list(lo), "hi": list(hi), "value": value}
                for lo, hi, value in self.pieces
            ],
        }

    @staticmethod
    def from_config(cfg: dict) -> "LscSpec":
        return LscSpec(
            base_lo=tuple(cfg["base_lo"]),
            base_hi=tuple(cfg["base_hi"]),
            pieces=tuple(
                (tuple(p["lo"]), tuple(p["hi"]), float(p["value"]))
                for p in cfg["pieces"]
            ),
        )


# ---------------------------------------------------------------------------
# lattice centers and cell-hashed neighbor sums
# ---------------------------------------------------------------------------

def _lattice(lo, hi, pitch, pad):
    axes = [np.arange(l - pad, h + pad + 0.5 * pitch, pitch) for l, h in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


class _NeighborIndex:
    """Cell hash over a fixed center set.  ``pairs`` returns candidate
    (query, center) index pairs for all centers within ``reach`` of each
    query, looping over occupied query cells rather than points."""

    def __init__(self, centers: np.ndarray, radius: float):
        self.centers = centers
        self.radius = radius
        keys = np.floor(centers / radius).astype(np.int64)
        self.cells: dict[tuple, np.ndarray] = {}
        for i, key in enumerate(map(tuple, keys)):
            self.cells.setdefault(key, []).append(i)
        for key, lst in list(self.cells.items()):
            self.cells[key] = np.asarray(lst, dtype=np.int64)
        self.dim = centers.shape[1]

    def _offsets(self, span: int) -> np.ndarray:
        rng = np.arange(-span, span + 1)
        mesh = np.meshgrid(*([rng] * self.dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def pairs(self, pts: np.ndarray, reach: Optional[float] = None):
        reach = self.radius if reach is None else reach
        span = int(math.ceil(reach / self.radius))
        offsets = self._offsets(span)
        keys = np.floor(pts / self.radius).astype(np.int64)
        uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        qi_out, ci_out = [], []
        for u_idx in range(uniq.shape[0]):
            q_rows = np.nonzero(inverse == u_idx)[0]
            cand = []
            base = uniq[u_idx]
            for off in offsets:
                arr = self.cells.get(tuple(base + off))
                if arr is not None:
                    cand.append(arr)
            if not cand:
                continue
            cand = np.concatenate(cand)
            qi_out.append(np.repeat(q_rows, cand.size))
            ci_out.append(np.tile(cand, q_rows.size))
        if not qi_out:
            return (np.empty(0, dtype=np.int64),) * 2
        return np.concatenate(qi_out), np.concatenate(ci_out)

    def max_over_balls(self, pts: np.ndarray, reach: float,
                       values: np.ndarray) -> np.ndarray:
        """Per query point, the max of ``values`` over centers within
        ``reach``; minus infinity where no center is in reach."""
        qi, ci = self.pairs(pts, reach=reach)
        if qi.size:
            d2 = np.sum((pts[qi] - self.centers[ci]) ** 2, axis=1)
            keep = d2 <= reach * reach
            qi, ci = qi[keep], ci[keep]
        out = np.full(pts.shape[0], -np.inf)
        np.maximum.at(out, qi, values[ci])
        return out


# ---------------------------------------------------------------------------
# the smooth minorant sequence
# ---------------------------------------------------------------------------

@dataclass
class _BaireLevel:
    n: int
    radius: float
    index: _NeighborIndex
    c_vals: np.ndarray        # blending constants, one per center
    gate_scale: np.ndarray    # per-center softness of the low-side gate
    kill_rank: np.ndarray     # pieces with value <= c are excluded high-side


class BaireSequence:
    """Strictly increasing smooth minorants of the target function.

    Level values are blends ``sum w_i c_i / sum w_i`` over lattice bumps of
    radius ``1/n``.  A bump contributes at ``q`` only when its constant
    exceeds the previous level there (low gate, a relative smooth step) and
    ``q`` is clear of every piece whose value its constant dominates (high
    gate, complements of piece plateaus).  The gates force strict level
    monotonicity and strict minorization of the target, while the ball
    radius and the constants' ``(1 - 1/n)`` floor give the over-ball lower
    bound.
    """

    def __init__(self, spec: LscSpec):
        self.spec = spec
        self._levels: list[_BaireLevel] = []
        self._cache: dict[bytes, np.ndarray] = {}

    @property
    def depth(self) -> int:
        """Number of exposed levels (level 1 is half of the first built
        level, per the positivity fix of the base of the recursion)."""
        return len(self._levels) + 1

    def _plateaus(self, pts: np.ndarray) -> np.ndarray:
        ordered = sorted(self.spec.pieces, key=lambda piece: piece[2])
        cols = [
            smooth_box_plateau(pts, lo, hi, GATE_HI_MARGIN)
            for lo, hi, _ in ordered
        ]
        return np.stack(cols, axis=1) if cols else np.zeros((pts.shape[0], 0))

    def raw_values(self, points) -> np.ndarray:
        """(m, depth) matrix of all exposed levels at the query points."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        key = pts.tobytes()
        hit = self._cache.get(key)
        if hit is not None:
            return hit

        plat = self._plateaus(pts)
        # cumulative high-side kill factors by piece-value rank
        kill_cum = np.ones((pts.shape[0], plat.shape[1] + 1))
        for j in range(plat.shape[1]):
            kill_cum[:, j + 1] = kill_cum[:, j] * (1.0 - plat[:, j])

        prev = np.zeros(pts.shape[0])
        cols = []
        for lev in self._levels:
            qi, ci = lev.index.pairs(pts)
            if qi.size == 0:
                raise CoverageError(f"no centers near queries at level {lev.n}")
            d2 = np.sum((pts[qi] - lev.index.centers[ci]) ** 2, axis=1)
            w = ball_bump_from_sq(d2 / (lev.radius * lev.radius))
            c = lev.c_vals[ci]
            w = w * smooth_step((c - prev[qi]) / lev.gate_scale[ci])
            w = w * kill_cum[qi, lev.kill_rank[ci]]
            num = np.bincount(qi, weights=w * c, minlength=pts.shape[0])
            den = np.bincount(qi, weights=w, minlength=pts.shape[0])
            if np.any(den <= 0.0):
                bad = int(np.nonzero(den <= 0.0)[0][0])
                raise CoverageError(
                    f"partition not covering point {pts[bad].tolist()} at level {lev.n}"
                )
            prev = num / den
            cols.append(prev)

        out = np.stack([0.5 * cols[0]] + cols, axis=1)
        self._cache[key] = out
        return out

    def value(self, level: int, points):
        """Level-``level`` minorant (1-based)."""
        if not (1 <= level <= self.depth):
            raise InputError(f"level must lie in [1, {self.depth}]")
        vals = self.raw_values(points)[:, level - 1]
        return float(vals[0]) if np.ndim(points) == 1 else vals

    def level_upper_bound(self, level: int, pts: np.ndarray,
                          reach: float) -> np.ndarray:
        """Exact upper bound for ``sup`` of the level over balls of radius
        ``reach``: the max of its blend constants over centers within
        ``reach`` plus the bump radius (a blend never exceeds the constants
        that reach into the ball)."""
        if not (1 <= level <= self.depth):
            raise InputError("level out of range")
        if level == 1:
            lev = self._levels[0]
            factor = 0.5
        else:
            lev = self._levels[level - 2]
            factor = 1.0
        bound = lev.index.max_over_balls(pts, reach + lev.radius, lev.c_vals)
        if np.any(~np.isfinite(bound)):
            raise CoverageError("upper-bound query outside the center cloud")
        return factor * bound


def baire_sequence(spec: LscSpec, n_levels: int,
                   grid: Optional[np.ndarray] = None) -> BaireSequence:
    """Build ``n_levels`` exposed minorant levels of ``spec``.

    When ``grid`` is given, coverage is verified on it immediately, so a
    partition hole fails loudly at construction rather than mid-query.
    """
    if n_levels < 2:
        raise InputError("need at least two levels")
    lo = np.asarray(spec.base_lo, dtype=float)
    hi = np.asarray(spec.base_hi, dtype=float)
    piece_values = np.asarray(
        sorted(value for _, _, value in spec.pieces), dtype=float
    )

    seq = BaireSequence(spec)
    for n in range(2, n_levels + 1):
        radius = 1.0 / n
        pitch = 0.5 * radius
        ambient = _lattice(lo, hi, pitch, pad=radius)
        parts = [ambient]
        # project the ambient lattice onto every piece so each piece owns
        # in-piece centers at all scales (degenerate boxes become points)
        for plo, phi, _ in spec.pieces:
            proj = np.clip(ambient, np.asarray(plo, dtype=float),
                           np.asarray(phi, dtype=float))
            parts.append(np.unique(np.round(proj, 12), axis=0))
        centers = np.unique(np.round(np.concatenate(parts, axis=0), 12), axis=0)

        lam_c = np.atleast_1d(spec.lam(centers))
        if seq._levels:
            prev_c = seq.raw_values(centers)[:, -1]
        else:
            prev_c = np.zeros(centers.shape[0])
        floor = np.maximum(prev_c, (1.0 - 1.0 / n) * lam_c)
        c_vals = 0.5 * (floor + lam_c)
        gate_scale = np.maximum(0.5 * (c_vals - prev_c), 1e-15)
        kill_rank = np.searchsorted(piece_values, c_vals, side="right")

        seq._levels.append(_BaireLevel(
            n=n,
            radius=radius,
            index=_NeighborIndex(centers, radius),
            c_vals=c_vals,
            gate_scale=gate_scale,
            kill_rank=kill_rank.astype(np.int64),
        ))
        seq._cache.clear()

    if grid is not None:
        seq.raw_values(grid)
    return seq


# ---------------------------------------------------------------------------
# smooth majorants
# ---------------------------------------------------------------------------

class _BlendField:
    """Lattice-bump blend of per-center constants (no gating)."""

    def __init__(self, index: _NeighborIndex, c_vals: np.ndarray, radius: float):
        self.index = index
        self.c_vals = c_vals
        self.radius = radius

    def __call__(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        qi, ci = self.index.pairs(pts)
        d2 = np.sum((pts[qi] - self.index.centers[ci]) ** 2, axis=1)
        w = ball_bump_from_sq(d2 / (self.radius * self.radius))
        num = np.bincount(qi, weights=w * self.c_vals[ci], minlength=pts.shape[0])
        den = np.bincount(qi, weights=w, minlength=pts.shape[0])
        if np.any(den <= 0.0):
            raise CoverageError("majorant blend not covering a query point")
        out = num / den
        return float(out[0]) if np.ndim(points) == 1 else out

    def ball_upper_bound(self, pts: np.ndarray, reach: float) -> np.ndarray:
        bound = self.index.max_over_balls(pts, reach + self.radius, self.c_vals)
        if np.any(~np.isfinite(bound)):
            raise CoverageError("upper-bound query outside the center cloud")
        return bound


def _majorant_from_bounds(spec: LscSpec, bound_fns: Sequence[Callable],
                          scale: float = MAJORANT_SCALE) -> _BlendField:
    """Blend of constants ``(1 + m_i)/2`` where ``m_i`` is an exact upper
    bound, over the bump support ball, of everything to dominate."""
    lo = np.asarray(spec.base_lo, dtype=float)
    hi = np.asarray(spec.base_hi, dtype=float)
    # pad by one bump radius: enough to cover queries inside the base box
    centers = _lattice(lo, hi, 0.5 * scale, pad=scale)
    m = np.full(centers.shape[0], -np.inf)
    for fn in bound_fns:
        m = np.maximum(m, np.asarray(fn(centers, scale), dtype=float))
    if np.any(m >= 1.0):
        raise InputError("majorant input must stay strictly below 1")
    c_vals = 0.5 * (1.0 + m)
    return _BlendField(_NeighborIndex(centers, scale), c_vals, scale)


def smooth_majorant(f: Callable, spec: LscSpec, scale: float = MAJORANT_SCALE,
                    sample_pitch_divisor: int = 8) -> _BlendField:
    """A smooth ``g`` with ``1 > g > f`` (midpoint rule): blend of constants
    ``(1 + max_ball f)/2`` on a lattice of pitch ``scale/2`` with bump
    radius ``scale``.

    The over-ball max of the opaque callable is sampled at pitch
    ``scale/divisor``; the structural tower uses exact bounds instead (see
    :func:`build_lsc_field`).
    """
    sub = _lattice((0.0,) * spec.dim, (0.0,) * spec.dim,
                   scale / sample_pitch_divisor, pad=scale)
    sub = sub[np.linalg.norm(sub, axis=1) <= scale]

    def sampled_bound(centers, reach):
        maxima = np.empty(centers.shape[0])
        chunk = max(1, int(2e6 / max(sub.shape[0], 1)))
        for start in range(0, centers.shape[0], chunk):
            block = centers[start:start + chunk]
            samples = (block[:, None, :] + sub[None, :, :]).reshape(-1, spec.dim)
            vals = np.atleast_1d(f(samples)).reshape(block.shape[0], -1)
            maxima[start:start + chunk] = vals.max(axis=1)
        return maxima

    return _majorant_from_bounds(spec, [sampled_bound], scale)


# ---------------------------------------------------------------------------
# the velocity tower
# ---------------------------------------------------------------------------

def _as_base_fn(obj) -> Callable:
    if callable(obj):
        return obj
    value = float(obj)
    return lambda pts: np.full(np.atleast_2d(pts).shape[0], value)


class BandVelocity(VectorFieldPX):
    """Piecewise velocity on ``B x (0, 1)``: unit speed outside the stacked
    bridge bands ``(lo_k(p), hi_k(p))``, the bridge profile with delay
    ``delay_k(p)`` inside each."""

    def __init__(self, base_dim: int, band_fns: Sequence[tuple]):
        self.base_dim = base_dim
        self.interval = (0.0, 1.0)
        self.band_fns = list(band_fns)

    def bands_at(self, p) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(p, dtype=float))
        rows = []
        for lo_fn, hi_fn, delay_fn in self.band_fns:
            rows.append([
                float(np.atleast_1d(lo_fn(pts))[0]),
                float(np.atleast_1d(hi_fn(pts))[0]),
                float(np.atleast_1d(delay_fn(pts))[0]),
            ])
        bands = np.asarray(rows)
        if np.any(bands[:, 0] >= bands[:, 1]) or np.any(bands[:, 2] <= 0.0):
            raise InputError("band ordering violated")
        flat = bands[:, :2].ravel()
        if np.any(np.diff(flat) < 0.0) or flat[0] <= 0.0 or flat[-1] >= 1.0:
            raise InputError("bands must be disjoint inside (0, 1)")
        return bands

    @staticmethod
    def _piecewise(bands, x, fn, default):
        x = np.asarray(x, dtype=float)
        out = np.full_like(x, default)
        for blo, bhi, bde in bands:
            mask = (x > blo) & (x < bhi)
            if np.any(mask):
                out = np.where(mask, fn(blo, bhi, bde, x), out)
        return out

    def velocity(self, p, x):
        bands = self.bands_at(p)
        out = self._piecewise(
            bands, x,
            lambda a, b, d, xx: bridge_velocity(a, b, d, xx, validate=False),
            1.0,
        )
        return float(out) if np.ndim(x) == 0 else out

    def velocity_dx(self, p, x):
        bands = self.bands_at(p)
        out = self._piecewise(bands, x, bridge_velocity_dx, 0.0)
        return float(out) if np.ndim(x) == 0 else out

    def travel_time(self, p, x0: float, x1: float) -> float:
        """Exact crossing time from ``x0`` to ``x1`` (piecewise closed form)."""
        if x1 < x0:
            raise InputError("travel_time expects x0 <= x1")
        bands = self.bands_at(p)
        total = x1 - x0
        for blo, bhi, bde in bands:
            a = max(x0, blo)
            b = min(x1, bhi)
            if b > a:
                total += bridge_crossing_time(blo, bhi, bde, a, b) - (b - a)
        return total

    def exit_time(self, p, x: float) -> float:
        """Time to the right endpoint (finite: unit speed near the top)."""
        return self.travel_time(p, x, 1.0)

    def fiber(self, p) -> ScalarField1D:
        bands = self.bands_at(p)
        piecewise = self._piecewise
        return ScalarField1D(
            f=lambda x: piecewise(
                bands, x,
                lambda a, b, d, xx: bridge_velocity(a, b, d, xx, validate=False),
                1.0,
            ),
            df=lambda x: piecewise(bands, x, bridge_velocity_dx, 0.0),
            domain=(0.0, 1.0),
            zero_regions=(),
            label="band-velocity",
        )


def adjust_time_1(f, a, b, base_dim: int = 1) -> BandVelocity:
    """First tower level: one bridge band ``(a(p), b(p))`` with delay
    ``f(p)``.

    With ``0 < f < a < b < 1`` the exit time from ``f(p)`` is exactly
    ``(a - f) + (b - a + f) + (1 - b) = 1`` and strictly decreasing in
    ``x``, so it is at most 1 exactly above ``f(p)``; the speed is 1 off
    the band.
    """
    f_fn, a_fn = _as_base_fn(f), _as_base_fn(a)

    def checked_delay(pts):
        fv = np.atleast_1d(f_fn(pts))
        av = np.atleast_1d(a_fn(pts))
        if np.any(fv <= 0.0) or np.any(fv >= av):
            raise InputError("need 0 < threshold < band start")
        return fv

    return BandVelocity(base_dim, [(a_fn, _as_base_fn(b), checked_delay)])


def adjust_time_2(prev: BandVelocity, f, h, b, c,
                  delay_fn: Optional[Callable] = None) -> BandVelocity:
    """Next tower level: keep ``prev`` below ``b(p)``, add a bridge band
    ``(b(p), c(p))`` whose delay is the ``prev``-travel time from ``f(p)``
    to ``h(p)``, and run at unit speed above ``c(p)``.

    The added delay exactly compensates the threshold move ``f -> h``, so
    the exit time of the new field is at most 1 exactly above ``h(p)``.
    """
    f_fn, h_fn, b_fn, c_fn = map(_as_base_fn, (f, h, b, c))

    if delay_fn is None:
        def delay_fn(pts):
            pts2 = np.atleast_2d(np.asarray(pts, dtype=float))
            out = np.empty(pts2.shape[0])
            for i, p in enumerate(pts2):
                lo_v = float(np.atleast_1d(f_fn(p[None, :]))[0])
                hi_v = float(np.atleast_1d(h_fn(p[None, :]))[0])
                if not (0.0 < lo_v < hi_v):
                    raise InputError("threshold ordering violated")
                out[i] = prev.travel_time(p, lo_v, hi_v)
            return out

    return BandVelocity(prev.base_dim, prev.band_fns + [(b_fn, c_fn, delay_fn)])


# ---------------------------------------------------------------------------
# the glued limit field
# ---------------------------------------------------------------------------

@dataclass
class FiberData:
    """Per-base-point tower data: thresholds ``f_1..f_{N+1}``, separators
    ``g_0..g_N``, and bridge delays ``tau_1..tau_N`` (``tau_1 = f_1``)."""

    f: np.ndarray
    g: np.ndarray
    tau: np.ndarray

    @property
    def depth(self) -> int:
        return self.tau.size


class GluedField(VectorFieldPX):
    """Lazily evaluated limit of the velocity tower, with the final flat
    cutoff vanishing below ``f_1(p)/2``.

    Band ``k`` lives on ``(g_{k-1}(p), g_k(p))`` with delay ``tau_k(p)``;
    below ``g_0`` and between bands the speed is 1 (before the cutoff).
    Queries above the deepest separator raise
    :class:`~excisionlab.errors.DepthExhausted` instead of extrapolating.
    """

    def __init__(self, spec: LscSpec, baire: BaireSequence,
                 majorants: Sequence[_BlendField], depth: int):
        if depth < 2:
            raise InputError("depth must be at least 2")
        self.spec = spec
        self.baire = baire
        self.majorants = list(majorants)   # g_0 .. g_depth
        self.depth = depth
        self.base_dim = spec.dim
        self.interval = (0.0, 1.0)
        self._fiber_cache: dict[bytes, FiberData] = {}

    # -- per-point tower data -------------------------------------------

    def fiber_data(self, p) -> FiberData:
        pt = np.asarray(p, dtype=float).reshape(1, -1)
        key = pt.tobytes()
        hit = self._fiber_cache.get(key)
        if hit is not None:
            return hit
        fs = self.baire.raw_values(pt)[0]          # f_1 .. f_{depth+1}
        gs = np.array([float(np.atleast_1d(m(pt))[0]) for m in self.majorants])
        if not (np.all(np.diff(fs) > 0.0) and np.all(np.diff(gs) > 0.0)):
            raise InputError("tower ordering violated at this base point")
        if not np.all(fs < gs):
            raise InputError("separator must dominate the matching threshold")
        tau = np.empty(self.depth)
        tau[0] = fs[0]
        for k in range(2, self.depth + 1):
            tau[k - 1] = self._travel(gs, tau, k - 1, fs[k - 2], fs[k - 1])
        data = FiberData(f=fs, g=gs, tau=tau)
        self._fiber_cache[key] = data
        return data

    @staticmethod
    def _travel(gs, tau, level: int, x0: float, x1: float) -> float:
        """Crossing time from ``x0`` to ``x1`` under tower level ``level``
        (bands 1..level; unit speed elsewhere).  Closed form per band."""
        total = x1 - x0
        for k in range(1, level + 1):
            blo, bhi = gs[k - 1], gs[k]
            a = max(x0, blo)
            b = min(x1, bhi)
            if b > a:
                total += bridge_crossing_time(blo, bhi, tau[k - 1], a, b) - (b - a)
        return total

    def level_exit_time(self, p, x: float, level: int) -> float:
        """Exit time to the top under tower level ``level`` (no cutoff)."""
        data = self.fiber_data(p)
        if not (1 <= level <= data.depth):
            raise InputError("level out of range")
        return self._travel(data.g, data.tau, level, x, 1.0)

    def limit_exit_time(self, p, x: float) -> tuple[float, float]:
        """Bounds ``(lower, upper)`` on the exit time of the limit field.

        The time through the built bands is exact; each unbuilt band above
        adds its delay, and those delays sum to ``lam(p) - f_N(p)``
        whenever every threshold stays below ``g_0(p)`` (the tower is unit
        speed there, so each delay equals its threshold increment).  On
        fibres where the target reaches above ``g_0`` only the lower bound
        is sharp and the upper bound is infinite.
        """
        data = self.fiber_data(p)
        if x >= data.g[-1]:
            raise DepthExhausted(
                f"query x={x} above deepest separator g_N={data.g[-1]}"
            )
        base = self._travel(data.g, data.tau, data.depth, x, 1.0)
        lam_p = self.spec.lam(np.asarray(p, dtype=float))
        if lam_p < data.g[0]:
            tail = max(lam_p - data.f[self.depth - 1], 0.0)
            t_inf = base + tail
            return t_inf, t_inf
        return base, math.inf

    def classify(self, p, x: float) -> str:
        """``excised`` iff the limit exit time is at most 1, certified from
        the monotone level times and the exact tail sum."""
        lower, upper = self.limit_exit_time(p, x)
        if lower > 1.0:
            return "survives"
        if upper <= 1.0:
            return "excised"
        raise DepthExhausted(
            f"classification undecided at (p={p}, x={x}): bounds ({lower}, {upper})"
        )

    # -- field evaluation --------------------------------------------------

    def _cutoff(self, f1: float, x):
        return smooth_step((np.asarray(x, dtype=float) - 0.5 * f1) / (0.5 * f1))

    def _cutoff_dx(self, f1: float, x):
        arg = (np.asarray(x, dtype=float) - 0.5 * f1) / (0.5 * f1)
        return smooth_step_deriv(arg) / (0.5 * f1)

    def _raw_velocity(self, data: FiberData, x, deriv: bool = False):
        x = np.asarray(x, dtype=float)
        if np.any(x >= data.g[-1]):
            raise DepthExhausted("velocity query above deepest separator")
        out = np.zeros_like(x) if deriv else np.ones_like(x)
        band = np.searchsorted(data.g, x)   # 0 below g_0, k inside band k
        for k in range(1, data.depth + 1):
            m = band == k
            if np.any(m):
                if deriv:
                    vals = bridge_velocity_dx(
                        data.g[k - 1], data.g[k], data.tau[k - 1], x)
                else:
                    vals = bridge_velocity(
                        data.g[k - 1], data.g[k], data.tau[k - 1], x,
                        validate=False)
                out = np.where(m, vals, out)
        return out

    def velocity(self, p, x):
        data = self.fiber_data(p)
        out = self._raw_velocity(data, x) * self._cutoff(data.f[0], x)
        return float(out) if np.ndim(x) == 0 else out

    def velocity_dx(self, p, x):
        data = self.fiber_data(p)
        raw = self._raw_velocity(data, x)
        raw_dx = self._raw_velocity(data, x, deriv=True)
        out = raw_dx * self._cutoff(data.f[0], x) + raw * self._cutoff_dx(data.f[0], x)
        return float(out) if np.ndim(x) == 0 else out

    def velocity_grad_p(self, p, x):
        raise NotImplementedError(
            "the glued field is certified at the hypersurface level; no "
            "ambient extension is built for it"
        )

    def fiber(self, p) -> ScalarField1D:
        # the 1D field is only defined on the covered band below the
        # deepest separator; flows within the band never notice the cap
        data = self.fiber_data(p)
        return ScalarField1D(
            f=lambda x: self._raw_velocity(data, np.asarray(x, dtype=float))
            * self._cutoff(data.f[0], x),
            df=lambda x: self.velocity_dx(p, x),
            domain=(0.0, float(data.g[-1]) - 1e-9),
            zero_regions=((0.0, 0.5 * float(data.f[0])),),
            label="glued-lsc",
        )


def build_lsc_field(spec: LscSpec, depth: int = 12,
                    grid: Optional[np.ndarray] = None) -> GluedField:
    """Assemble the full tower for ``spec``.

    Thresholds come from :func:`baire_sequence` (one extra level feeds the
    separator recursion); each separator is a bump blend of midpoint
    constants above the exact over-ball bound of
    ``max(g_{n-1}, f_{n+1}, 1 - 1/n)``, which guarantees the tower ordering
    pointwise.  Bridge delays are filled lazily per queried base point.
    """
    baire = baire_sequence(spec, n_levels=depth + 1, grid=grid)

    majorants: list[_BlendField] = []
    majorants.append(_majorant_from_bounds(
        spec, [lambda pts, reach: baire.level_upper_bound(1, pts, reach)]
    ))
    for n in range(1, depth + 1):
        prev_g = majorants[-1]
        floor = 1.0 - 1.0 / n
        bound_fns = [
            prev_g.ball_upper_bound,
            lambda pts, reach, _lvl=n + 1: baire.level_upper_bound(_lvl, pts, reach),
            lambda pts, reach, _c=floor: np.full(pts.shape[0], _c),
        ]
        majorants.append(_majorant_from_bounds(spec, bound_fns))

    return GluedField(spec, baire, majorants, depth)
