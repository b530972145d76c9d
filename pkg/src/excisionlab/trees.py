"""Staged excision of piecewise-linear trees in the plane.

A finite tree is given by nodes and straight edges.  Removing one node (the
root) leaves an open-rooted tree; its branches are excised leaf first, each
through its own area-preserving strip chart:

* rotate/translate the branch onto the positive axis (a proper rotation is
  symplectic in the plane),
* rescale by the cotangent lift of the affine map sending the branch onto
  the model interval, leaf to 0, node end to 1,
* pull back the planar ray Hamiltonian whose cutoff tube pinches at the
  node: the strip half-width decays linearly toward the node, so sibling
  strips at a junction stay disjoint inside their angular sectors.

The composed time-1 maps excise the whole tree while fixing everything
outside the union of strips bitwise (every stage field vanishes there
identically).  Retraction mode splits the tree at a kept point and excises
each open-rooted component into it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Optional, Sequence

import numpy as np

from .errors import ExcisedPointError, InputError
from .ham_extension import HamiltonianField, RayHamiltonian
from .symflow import COMPLETED, ESCAPED, integrate_batch

__all__ = [
    "TreeSpec",
    "BranchChart",
    "WorldBranchField",
    "strip_chart",
    "StagedExcision",
    "excise_tree",
    "retract_tree",
]

OPEN_ROOTED = "open-rooted"
RETRACT = "retract"


@dataclass(frozen=True)
class TreeSpec:
    """Piecewise-linear tree in the plane.

    ``special`` is the root node (removed; ``open-rooted`` mode) or the
    kept point ``z0`` (``retract`` mode).  ``w0`` caps strip half-widths;
    ``eps`` is the model-chart tail fraction behind each leaf.
    """

    nodes: tuple
    edges: tuple
    mode: str = OPEN_ROOTED
    special: int = 0
    w0: float = 0.05
    eps: float = 0.4

    def __post_init__(self):
        n = len(self.nodes)
        if self.mode not in (OPEN_ROOTED, RETRACT):
            raise InputError(f"unknown tree mode {self.mode!r}")
        if not (0 <= self.special < n):
            raise InputError("special node index out of range")
        if len(self.edges) != n - 1:
            raise InputError("a tree on n nodes has n-1 edges")
        # connectivity check (breadth-first)
        adj = {i: [] for i in range(n)}
        for a, b in self.edges:
            if a == b or not (0 <= a < n and 0 <= b < n):
                raise InputError("bad edge")
            adj[a].append(b)
            adj[b].append(a)
        seen = {0}
        stack = [0]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        if len(seen) != n:
            raise InputError("edge graph is not connected")

    def adjacency(self) -> dict:
        adj = {i: [] for i in range(len(self.nodes))}
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        return adj

    def node_array(self, i: int) -> np.ndarray:
        return np.asarray(self.nodes[i], dtype=float)

    def to_config(self) -> dict:
        return {
            "nodes": [list(nd) for nd in self.nodes],
            "edges": [list(e) for e in self.edges],
            "mode": self.mode,
            "special": self.special,
            "w0": self.w0,
            "eps": self.eps,
        }

    @staticmethod
    def from_config(cfg: dict) -> "TreeSpec":
        return TreeSpec(
            nodes=tuple(tuple(nd) for nd in cfg["nodes"]),
            edges=tuple(tuple(e) for e in cfg["edges"]),
            mode=cfg.get("mode", OPEN_ROOTED),
            special=int(cfg.get("special", 0)),
            w0=float(cfg.get("w0", 0.05)),
            eps=float(cfg.get("eps", 0.4)),
        )


@dataclass(frozen=True)
class BranchChart:
    """Area-preserving chart of a tapered strip around one branch.

    World to model: ``(x1, y1) = (s/L, r*L)`` where ``(s, r)`` are the
    rotated frame coordinates with the leaf at the origin and the node at
    ``s = L``.  The map is a rotation composed with the cotangent lift of
    ``s -> s/L``, hence has Jacobian determinant 1 everywhere.
    """

    leaf: tuple
    node: tuple
    length: float
    rot: tuple              # row-major 2x2 world->frame rotation
    h_coef: float           # model tube: y1^2 < h_coef (1 - x1)^2
    eps: float

    @property
    def rot_matrix(self) -> np.ndarray:
        return np.asarray(self.rot, dtype=float).reshape(2, 2)

    def to_model(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        frame = (pts - np.asarray(self.leaf)) @ self.rot_matrix.T
        out = np.empty_like(frame)
        out[:, 0] = frame[:, 0] / self.length
        out[:, 1] = frame[:, 1] * self.length
        return out

    def from_model(self, mpts: np.ndarray) -> np.ndarray:
        mpts = np.atleast_2d(np.asarray(mpts, dtype=float))
        frame = np.empty_like(mpts)
        frame[:, 0] = mpts[:, 0] * self.length
        frame[:, 1] = mpts[:, 1] / self.length
        return frame @ self.rot_matrix + np.asarray(self.leaf)

    def half_width(self, x1) -> np.ndarray:
        """World-space strip half-width at model coordinate ``x1`` (the
        width of the full cutoff tube, not just its plateau)."""
        x1 = np.asarray(x1, dtype=float)
        return np.sqrt(self.h_coef) * np.maximum(1.0 - x1, 0.0) / self.length

    def max_half_width(self) -> float:
        return float(self.half_width(-self.eps))

    def in_tube(self, pts: np.ndarray) -> np.ndarray:
        m = self.to_model(pts)
        x1, y1 = m[:, 0], m[:, 1]
        h = self.h_coef * np.maximum(1.0 - x1, 0.0) ** 2
        return (x1 > -self.eps) & (y1 * y1 < h)


def strip_chart(leaf, node, sibling_dirs: Sequence, w0: float = 0.05,
                eps: float = 0.4) -> BranchChart:
    """Build the tapered strip chart of the branch ``leaf -> node``.

    ``sibling_dirs`` are unit vectors at the node toward its other
    neighbours; the taper slope is capped at a fraction of their smallest
    separation half-angle so sibling strips cannot meet.
    """
    leaf = np.asarray(leaf, dtype=float)
    node = np.asarray(node, dtype=float)
    length = float(np.linalg.norm(node - leaf))
    if length <= 0.0:
        raise InputError("degenerate branch")
    e = (node - leaf) / length
    rot = np.array([[e[0], e[1]], [-e[1], e[0]]])

    inbound = -e   # direction from the node back along this branch
    theta_min = math.pi
    for d in sibling_dirs:
        d = np.asarray(d, dtype=float)
        cosang = float(np.clip(np.dot(inbound, d), -1.0, 1.0))
        theta_min = min(theta_min, math.acos(cosang))
    if theta_min <= 0.0:
        raise InputError("coincident sibling directions at the node")
    slope_cap = 0.45 * math.tan(min(0.5 * theta_min, 1.4))

    root_w = 0.9 * min(w0 * length / (1.0 + eps), slope_cap * length * length)
    h_coef = root_w * root_w
    return BranchChart(
        leaf=tuple(leaf), node=tuple(node), length=length,
        rot=tuple(rot.ravel()), h_coef=h_coef, eps=eps,
    )


class WorldBranchField(HamiltonianField):
    """The planar ray Hamiltonian pulled back through a branch chart.

    ``F = F_model o psi`` with ``psi`` symplectic, so the Hamiltonian field
    is the pullback of the model field; the support is the tapered strip
    (the tube where the model cutoff lives), and the escape monitor is the
    model coordinate toward the node.
    """

    def __init__(self, chart: BranchChart):
        self.chart = chart
        self.dim = 2
        # the model tube y1^2 < h(x1) with h = h_coef (1-x1)^2 pinches
        # linearly at the node; quadratic-profile heights keep the strip
        # half-width linear in world space
        self.model = RayHamiltonian(
            n=1, eps=chart.eps, h_coef=chart.h_coef, h_power=2,
        )
        mat = self.chart.rot_matrix
        scale = np.array([[1.0 / chart.length, 0.0], [0.0, chart.length]])
        self._dpsi_t = (scale @ mat).T

    def value(self, z):
        pts = np.atleast_2d(np.asarray(z, dtype=float))
        out = self.model.value(self.chart.to_model(pts))
        out = np.atleast_1d(out)
        return float(out[0]) if np.ndim(z) == 1 else out

    def grad(self, z):
        pts = np.atleast_2d(np.asarray(z, dtype=float))
        g1 = np.atleast_2d(self.model.grad(self.chart.to_model(pts)))
        out = g1 @ self._dpsi_t.T
        return out[0] if np.ndim(z) == 1 else out

    def escape_value(self, z):
        pts = np.atleast_2d(np.asarray(z, dtype=float))
        m = self.chart.to_model(pts)
        x1, y1 = m[:, 0], m[:, 1]
        h = self.chart.h_coef * np.maximum(1.0 - x1, 0.0) ** 2
        in_tube = (x1 > -self.chart.eps) & (y1 * y1 < h)
        return np.where(in_tube, x1, -np.inf)

    def on_branch(self, pts: np.ndarray, margin: float = 0.0) -> np.ndarray:
        m = self.chart.to_model(np.atleast_2d(pts))
        return (m[:, 1] == 0.0) & (m[:, 0] >= 0.0) & (m[:, 0] < 1.0 - margin)


def _check_strip_disjoint(fields: Sequence[WorldBranchField]) -> None:
    """Conservative pairwise separation check between strips that do not
    share a node (shared-node pairs are separated by the angular taper)."""
    def seg_dist(a0, a1, b0, b1):
        # minimal distance between two segments in the plane
        def pt_seg(p, s0, s1):
            d = s1 - s0
            denom = float(d @ d)
            t = 0.0 if denom == 0.0 else float(np.clip((p - s0) @ d / denom, 0, 1))
            return float(np.linalg.norm(p - (s0 + t * d)))
        cands = [pt_seg(a0, b0, b1), pt_seg(a1, b0, b1),
                 pt_seg(b0, a0, a1), pt_seg(b1, a0, a1)]
        return min(cands)

    for i in range(len(fields)):
        for j in range(i + 1, len(fields)):
            ci, cj = fields[i].chart, fields[j].chart
            shared = any(
                np.allclose(a, b)
                for a in (ci.leaf, ci.node) for b in (cj.leaf, cj.node)
            )
            if shared:
                continue
            a0 = np.asarray(ci.leaf) - ci.eps * (np.asarray(ci.node) - np.asarray(ci.leaf))
            b0 = np.asarray(cj.leaf) - cj.eps * (np.asarray(cj.node) - np.asarray(cj.leaf))
            dist = seg_dist(a0, np.asarray(ci.node), b0, np.asarray(cj.node))
            if dist <= ci.max_half_width() + cj.max_half_width():
                raise InputError(
                    f"strips of branches {i} and {j} are not separated"
                )


@dataclass
class StagedExcision:
    """Ordered stage fields and their composed forward/backward maps."""

    fields: list
    spec: TreeSpec

    def in_support(self, pts: np.ndarray) -> np.ndarray:
        """Union of the stage tubes (the neighbourhood the excision owns)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = np.zeros(pts.shape[0], dtype=bool)
        for f in self.fields:
            out |= f.chart.in_tube(pts)
        return out

    def forward_batch(self, pts: np.ndarray, tol: float = 1e-10):
        """Composed forward time-1 maps.

        Returns ``(endpoints, stage_escaped)`` where ``stage_escaped[i]``
        is the index of the stage during which point ``i`` left the chart
        (-1 when it survived all stages; -2 on tolerance failure).
        """
        zs = np.atleast_2d(np.asarray(pts, dtype=float)).copy()
        stage_escaped = np.full(zs.shape[0], -1, dtype=int)
        alive = np.ones(zs.shape[0], dtype=bool)
        for k, f in enumerate(self.fields):
            idx = np.nonzero(alive)[0]
            if idx.size == 0:
                break
            outcomes = integrate_batch(f, zs[idx], 1.0, tol=tol)
            for row, out in zip(idx, outcomes):
                if out.status == COMPLETED:
                    zs[row] = out.endpoint
                elif out.status == ESCAPED:
                    stage_escaped[row] = k
                    alive[row] = False
                else:
                    stage_escaped[row] = -2
                    alive[row] = False
        return zs, stage_escaped

    def forward_point(self, z, tol: float = 1e-10) -> np.ndarray:
        ends, esc = self.forward_batch(np.asarray(z, dtype=float)[None, :], tol=tol)
        if esc[0] != -1:
            raise ExcisedPointError(f"point escaped during stage {esc[0]}")
        return ends[0]

    def inverse_batch(self, pts: np.ndarray, tol: float = 1e-10) -> np.ndarray:
        zs = np.atleast_2d(np.asarray(pts, dtype=float)).copy()
        for f in reversed(self.fields):
            rev = _ReversedBranch(f)
            outcomes = integrate_batch(rev, zs, 1.0, tol=tol)
            for i, out in enumerate(outcomes):
                if out.status != COMPLETED:
                    raise ExcisedPointError("backward stage failed")
                zs[i] = out.endpoint
        return zs


class _ReversedBranch(HamiltonianField):
    def __init__(self, base: WorldBranchField):
        self.base = base
        self.dim = 2

    def value(self, z):
        return self.base.value(z)

    def grad(self, z):
        return self.base.grad(z)

    def vector_field(self, z):
        return -self.base.vector_field(z)

    def escape_value(self, z):
        z2 = np.atleast_2d(np.asarray(z, dtype=float))
        return np.full(z2.shape[0], -np.inf)


def _build_stages(spec: TreeSpec, root: int,
                  nodes: Optional[dict] = None) -> list:
    """Leaf-first branch fields for the open-rooted tree with this root."""
    adj = {i: set(ns) for i, ns in spec.adjacency().items()}
    original_adj = spec.adjacency()
    fields = []
    active = {i for i, ns in adj.items() if ns}
    while any(adj[i] for i in adj):
        leaves = sorted(
            i for i in adj
            if len(adj[i]) == 1 and i != root
        )
        if not leaves:
            raise InputError("no excisable leaf found (is the root correct?)")
        leaf = leaves[0]
        (node,) = adj[leaf]
        # taper against every sibling direction present in the original tree
        sib_dirs = []
        qpt = spec.node_array(node)
        for other in original_adj[node]:
            if other == leaf:
                continue
            d = spec.node_array(other) - qpt
            sib_dirs.append(d / np.linalg.norm(d))
        chart = strip_chart(
            spec.node_array(leaf), qpt, sib_dirs, w0=spec.w0, eps=spec.eps,
        )
        fields.append(WorldBranchField(chart))
        adj[leaf].remove(node)
        adj[node].remove(leaf)
    return fields


def excise_tree(spec: TreeSpec) -> StagedExcision:
    """Excise an open-rooted tree: branches leaf first, each pushed into
    its node (the final branch into the removed root)."""
    if spec.mode != OPEN_ROOTED:
        raise InputError("excise_tree expects an open-rooted spec")
    fields = _build_stages(spec, root=spec.special)
    _check_strip_disjoint(fields)
    return StagedExcision(fields=fields, spec=spec)


def retract_tree(spec: TreeSpec) -> StagedExcision:
    """Retract a tree onto the kept point ``z0``: split at ``z0`` and
    excise every open-rooted component into it."""
    if spec.mode != RETRACT:
        raise InputError("retract_tree expects a retract spec")
    fields = _build_stages(spec, root=spec.special)
    _check_strip_disjoint(fields)
    return StagedExcision(fields=fields, spec=spec)
