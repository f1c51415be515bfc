"""Laguerre tessellations of polygonal domains with exact cell moments.

Cells are intersections of the domain with bisector half-planes; in clipped
mode each cell is additionally intersected with the ball of radius
``sqrt(w_i)`` around its particle, so boundaries mix line segments and
circular arcs.  Areas, barycenters, second moments, and interface lengths all
come from closed-form contour integrals; there is no polygonal approximation
of the arcs anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sps

from . import _kernels
from .errors import CoincidentParticles, InvalidDomain, NonpositiveWeight, StaleState

__all__ = [
    "Domain",
    "Segment",
    "Arc",
    "Cell",
    "Tessellation",
    "build_tessellation",
    "cell_moments",
    "pieces_moments",
    "area_jacobian",
    "load_domain",
]

COINCIDENCE_RTOL = 1e-14
INTERFACE_RTOL = 1e-12


def _polygon_moments(vertices: np.ndarray) -> Tuple[float, float, float]:
    x = vertices[:, 0]
    y = vertices[:, 1]
    xn = np.roll(x, -1)
    yn = np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * float(np.sum(cross))
    mx = float(np.sum(cross * (x + xn))) / 6.0
    my = float(np.sum(cross * (y + yn))) / 6.0
    return area, mx, my


def _convex_hull(points: np.ndarray) -> np.ndarray:
    """Monotone-chain convex hull, CCW without repeated endpoint."""
    pts = np.unique(points, axis=0)
    if len(pts) <= 2:
        return pts
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def half(seq):
        out: List[np.ndarray] = []
        for p in seq:
            while len(out) >= 2 and np.cross(out[-1] - out[-2], p - out[-2]) <= 0:
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    return np.array(lower[:-1] + upper[:-1])


def _segments_intersect(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(p3, p4, p1)
    d2 = orient(p3, p4, p2)
    d3 = orient(p1, p2, p3)
    d4 = orient(p1, p2, p4)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)):
        return True
    return False


@dataclass(frozen=True)
class Domain:
    """Compact polygonal domain (simple closed polygon, stored CCW)."""

    vertices: np.ndarray
    area: float
    barycenter: np.ndarray
    diameter: float
    convex_hull: np.ndarray

    @classmethod
    def from_vertices(cls, vertices) -> "Domain":
        verts = np.asarray(vertices, dtype=float)
        if verts.ndim != 2 or verts.shape[1] != 2 or len(verts) < 3:
            raise InvalidDomain("need at least 3 planar vertices")
        if not np.all(np.isfinite(verts)):
            raise InvalidDomain("non-finite vertex")
        # drop an explicit closing vertex and consecutive duplicates
        if np.allclose(verts[0], verts[-1]):
            verts = verts[:-1]
        keep = np.ones(len(verts), dtype=bool)
        for k in range(len(verts)):
            if np.allclose(verts[k], verts[(k + 1) % len(verts)]):
                keep[k] = False
        verts = verts[keep]
        if len(verts) < 3:
            raise InvalidDomain("degenerate polygon")
        area, mx, my = _polygon_moments(verts)
        if area < 0.0:
            verts = verts[::-1].copy()
            area, mx, my = _polygon_moments(verts)
        if area <= 0.0:
            raise InvalidDomain("polygon has zero area")
        n = len(verts)
        for a in range(n):
            a2 = (a + 1) % n
            for b in range(a + 1, n):
                b2 = (b + 1) % n
                if a == b or a2 == b or a == b2:
                    continue
                if _segments_intersect(verts[a], verts[a2], verts[b], verts[b2]):
                    raise InvalidDomain("polygon self-intersects")
        hull = _convex_hull(verts)
        diffs = hull[:, None, :] - hull[None, :, :]
        diameter = float(np.sqrt(np.max(np.sum(diffs * diffs, axis=-1))))
        return cls(
            vertices=np.ascontiguousarray(verts),
            area=area,
            barycenter=np.array([mx / area, my / area]),
            diameter=diameter,
            convex_hull=hull,
        )

    @classmethod
    def box(cls, x0: float, y0: float, x1: float, y1: float) -> "Domain":
        return cls.from_vertices([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])

    @classmethod
    def unit_square(cls) -> "Domain":
        return cls.box(0.0, 0.0, 1.0, 1.0)

    @classmethod
    def regular_polygon(cls, center, radius: float, n: int) -> "Domain":
        t = 2.0 * np.pi * np.arange(n) / n
        c = np.asarray(center, dtype=float)
        return cls.from_vertices(np.stack([c[0] + radius * np.cos(t), c[1] + radius * np.sin(t)], axis=1))

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Vectorized even-odd point-in-polygon test (boundary not guaranteed)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        x = pts[:, 0][:, None]
        y = pts[:, 1][:, None]
        vx = self.vertices[:, 0][None, :]
        vy = self.vertices[:, 1][None, :]
        vxn = np.roll(self.vertices[:, 0], -1)[None, :]
        vyn = np.roll(self.vertices[:, 1], -1)[None, :]
        crossing = (vy > y) != (vyn > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = vx + (y - vy) * (vxn - vx) / (vyn - vy)
        hits = crossing & (xint > x)
        return np.sum(hits, axis=1) % 2 == 1

    def in_convex_hull(self, points: np.ndarray, tol: float = 0.0) -> np.ndarray:
        """True where points lie in conv(domain) up to absolute tolerance."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        hull = self.convex_hull
        ok = np.ones(len(pts), dtype=bool)
        for k in range(len(hull)):
            a = hull[k]
            b = hull[(k + 1) % len(hull)]
            e = b - a
            ln = np.hypot(e[0], e[1])
            cross = e[0] * (pts[:, 1] - a[1]) - e[1] * (pts[:, 0] - a[0])
            ok &= cross >= -tol * max(ln, 1.0)
        return ok


def load_domain(path) -> Domain:
    """Load a polygon from a plain-text vertex list, one ``x y`` pair per line."""
    verts = np.loadtxt(path, dtype=float, ndmin=2)
    return Domain.from_vertices(verts)


@dataclass(frozen=True)
class Segment:
    """Directed boundary edge; label -1 on the domain, j >= 0 on bisector j."""

    a: np.ndarray
    b: np.ndarray
    label: int

    @property
    def length(self) -> float:
        return float(np.hypot(*(self.b - self.a)))

    @property
    def start(self) -> np.ndarray:
        return self.a

    @property
    def end(self) -> np.ndarray:
        return self.b


@dataclass(frozen=True)
class Arc:
    """CCW circular arc from theta0 to theta1 (> theta0) around center."""

    center: np.ndarray
    radius: float
    theta0: float
    theta1: float

    @property
    def length(self) -> float:
        return self.radius * (self.theta1 - self.theta0)

    def point(self, theta: float) -> np.ndarray:
        return self.center + self.radius * np.array([np.cos(theta), np.sin(theta)])

    @property
    def start(self) -> np.ndarray:
        return self.point(self.theta0)

    @property
    def end(self) -> np.ndarray:
        return self.point(self.theta1)


Piece = Union[Segment, Arc]


@dataclass(frozen=True)
class Cell:
    """One tessellation cell: boundary pieces plus exact moments.

    An empty cell has no pieces, zero area, and an undefined barycenter.
    ``second_moment`` is the integral of ``|x - position|^2`` where
    ``position`` is the owner particle's location.
    """

    owner: int
    position: np.ndarray
    pieces: Tuple[Piece, ...]
    area: float
    barycenter: Optional[np.ndarray]
    second_moment: float

    @property
    def is_empty(self) -> bool:
        return self.area == 0.0


def cell_moments(cell: Cell):
    """Recompute (area, barycenter, second moment) from the boundary pieces.

    Contour integrals in owner-relative coordinates; arcs contribute
    closed-form circular terms and may be centered anywhere.  Returns
    ``(0.0, None, 0.0)`` for an empty cell.
    """
    return pieces_moments(cell.pieces, cell.position)


def pieces_moments(pieces: Sequence[Piece], ref):
    """Moments of the region bounded by ``pieces`` about the point ``ref``.

    Returns ``(area, barycenter, second moment about ref)``; the pieces must
    form a closed CCW boundary (in any order).
    """
    if not pieces:
        return 0.0, None, 0.0
    ref = np.asarray(ref, dtype=float)
    area = 0.0
    mx = 0.0
    my = 0.0
    i2 = 0.0
    for piece in pieces:
        if isinstance(piece, Segment):
            ax, ay = piece.a - ref
            bx, by = piece.b - ref
            area += 0.5 * (ax * by - ay * bx)
            mx += (by - ay) * (ax * ax + ax * bx + bx * bx) / 6.0
            my -= (bx - ax) * (ay * ay + ay * by + by * by) / 6.0
            i2 += (
                (by - ay) * (ax**3 + ax**2 * bx + ax * bx**2 + bx**3)
                - (bx - ax) * (ay**3 + ay**2 * by + ay * by**2 + by**3)
            ) / 12.0
        else:
            cx, cy = piece.center - ref
            R = piece.radius
            t0, t1 = piece.theta0, piece.theta1
            s0, s1 = np.sin(t0), np.sin(t1)
            c0, c1 = np.cos(t0), np.cos(t1)
            dth = t1 - t0
            d_sin = s1 - s0
            d_cos = c1 - c0
            i_c = d_sin
            i_s = -d_cos
            i_cc = 0.5 * dth + 0.25 * (np.sin(2 * t1) - np.sin(2 * t0))
            i_ss = 0.5 * dth - 0.25 * (np.sin(2 * t1) - np.sin(2 * t0))
            i_ccc = (s1 - s1**3 / 3.0) - (s0 - s0**3 / 3.0)
            i_sss = (-c1 + c1**3 / 3.0) - (-c0 + c0**3 / 3.0)
            i_c4 = (
                0.375 * dth
                + 0.25 * (np.sin(2 * t1) - np.sin(2 * t0))
                + (np.sin(4 * t1) - np.sin(4 * t0)) / 32.0
            )
            i_s4 = (
                0.375 * dth
                - 0.25 * (np.sin(2 * t1) - np.sin(2 * t0))
                + (np.sin(4 * t1) - np.sin(4 * t0)) / 32.0
            )
            area += 0.5 * (cx * R * i_c + cy * R * i_s + R * R * dth)
            mx += 0.5 * R * (cx * cx * i_c + 2.0 * cx * R * i_cc + R * R * i_ccc)
            my += 0.5 * R * (cy * cy * i_s + 2.0 * cy * R * i_ss + R * R * i_sss)
            i2 += (
                R
                * (
                    cx**3 * i_c + 3.0 * cx**2 * R * i_cc + 3.0 * cx * R * R * i_ccc + R**3 * i_c4
                    + cy**3 * i_s + 3.0 * cy**2 * R * i_ss + 3.0 * cy * R * R * i_sss + R**3 * i_s4
                )
                / 3.0
            )
    if area <= 0.0:
        return 0.0, None, 0.0
    barycenter = ref + np.array([mx / area, my / area])
    return area, barycenter, i2


def _order_pieces(pieces: List[Piece]) -> Tuple[Piece, ...]:
    """Chain pieces into boundary order by endpoint matching (best effort)."""
    if len(pieces) <= 2:
        return tuple(pieces)
    scale = 0.0
    for p in pieces:
        scale = max(scale, float(np.max(np.abs(p.start))), float(np.max(np.abs(p.end))))
    tol = 1e-9 * max(scale, 1.0)
    remaining = list(range(len(pieces)))
    ordered: List[Piece] = []
    while remaining:
        k = remaining.pop(0)
        ordered.append(pieces[k])
        end = pieces[k].end
        progressing = True
        while progressing and remaining:
            progressing = False
            for idx, q in enumerate(remaining):
                if np.max(np.abs(pieces[q].start - end)) < tol:
                    ordered.append(pieces[q])
                    end = pieces[q].end
                    remaining.pop(idx)
                    progressing = True
                    break
    return tuple(ordered)


class Tessellation:
    """Laguerre tessellation with per-cell moments and interface data.

    Immutable once built.  ``cells`` is materialized lazily (the solver only
    touches the aggregate arrays).  ``interfaces`` maps canonical index pairs
    ``(i, j)`` with ``i < j`` to the shared boundary length.
    """

    def __init__(
        self,
        domain: Domain,
        mode: str,
        positions: np.ndarray,
        weights: np.ndarray,
        areas: np.ndarray,
        barycenters: np.ndarray,
        second_moments: np.ndarray,
        boundary_arc_lengths: np.ndarray,
        nbr_count: np.ndarray,
        nbr_idx: np.ndarray,
        nbr_len: np.ndarray,
    ):
        self.domain = domain
        self.mode = mode
        self.positions = positions
        self.weights = weights
        self.areas = areas
        self.barycenters = barycenters
        self.second_moments = second_moments
        self.boundary_arc_lengths = boundary_arc_lengths
        self._nbr_count = nbr_count
        self._nbr_idx = nbr_idx
        self._nbr_len = nbr_len
        self._interfaces: Optional[Dict[Tuple[int, int], float]] = None
        self._cells: Optional[List[Cell]] = None

    @property
    def n_particles(self) -> int:
        return len(self.positions)

    @property
    def total_area(self) -> float:
        return float(np.sum(self.areas))

    @property
    def interfaces(self) -> Dict[Tuple[int, int], float]:
        if self._interfaces is None:
            acc: Dict[Tuple[int, int], List[float]] = {}
            for i in range(self.n_particles):
                for q in range(self._nbr_count[i]):
                    j = int(self._nbr_idx[i, q])
                    key = (i, j) if i < j else (j, i)
                    acc.setdefault(key, []).append(float(self._nbr_len[i, q]))
            self._interfaces = {k: float(np.mean(v)) for k, v in acc.items()}
        return self._interfaces

    def interface_length(self, i: int, j: int) -> float:
        key = (i, j) if i < j else (j, i)
        return self.interfaces.get(key, 0.0)

    @property
    def cells(self) -> List[Cell]:
        if self._cells is None:
            self._cells = _materialize_cells(self)
        return self._cells

    def __repr__(self) -> str:
        return (
            f"Tessellation(mode={self.mode!r}, N={self.n_particles}, "
            f"covered={self.total_area:.6g}/{self.domain.area:.6g})"
        )


_STATUS_MESSAGES = {
    _kernels.STATUS_OVERFLOW: "cell complexity exceeded kernel buffers",
    _kernels.STATUS_DEGENERATE: "unresolvable ball-boundary tangency",
}


def _run_kernel(domain: Domain, positions, weights, mode: str, emit: bool):
    N = len(positions)
    areas = np.empty(N)
    bcx = np.empty(N)
    bcy = np.empty(N)
    m2 = np.empty(N)
    arclen = np.empty(N)
    status = np.empty(N, dtype=np.int8)
    maxnbr = 128
    nbr_count = np.zeros(N, dtype=np.int64)
    nbr_idx = np.empty((N, maxnbr), dtype=np.int64)
    nbr_len = np.empty((N, maxnbr))
    nd = len(domain.vertices)
    if emit:
        maxp = 2 * (nd + 96) + 4
        piece_count = np.zeros(N, dtype=np.int64)
        piece_type = np.empty((N, maxp), dtype=np.int8)
        piece_data = np.empty((N, maxp, 6))
    else:
        piece_count = np.zeros(1, dtype=np.int64)
        piece_type = np.empty((1, 1), dtype=np.int8)
        piece_data = np.empty((1, 1, 6))
    tol2 = (COINCIDENCE_RTOL * domain.diameter) ** 2
    _kernels.build_tessellation_kernel(
        np.ascontiguousarray(domain.vertices[:, 0]),
        np.ascontiguousarray(domain.vertices[:, 1]),
        np.ascontiguousarray(positions[:, 0]),
        np.ascontiguousarray(positions[:, 1]),
        np.ascontiguousarray(weights),
        mode == "clipped",
        emit,
        tol2,
        areas,
        bcx,
        bcy,
        m2,
        arclen,
        status,
        nbr_count,
        nbr_idx,
        nbr_len,
        piece_count,
        piece_type,
        piece_data,
    )
    if np.any(status == _kernels.STATUS_COINCIDENT):
        raise CoincidentParticles("two particles coincide within tolerance")
    bad = status != _kernels.STATUS_OK
    if np.any(bad):
        code = int(status[np.argmax(bad)])
        raise RuntimeError(f"tessellation kernel failed: {_STATUS_MESSAGES.get(code, code)}")
    out = dict(
        areas=areas,
        barycenters=np.stack([bcx, bcy], axis=1),
        second_moments=m2,
        boundary_arc_lengths=arclen,
        nbr_count=nbr_count,
        nbr_idx=nbr_idx,
        nbr_len=nbr_len,
    )
    if emit:
        out["piece_count"] = piece_count
        out["piece_type"] = piece_type
        out["piece_data"] = piece_data
    return out


def build_tessellation(domain: Domain, positions, weights, mode: str = "full") -> Tessellation:
    """Build the Laguerre tessellation of ``domain`` (optionally ball-clipped).

    Each cell is ``{x in domain : |x-x_i|^2 - w_i <= |x-x_j|^2 - w_j for all j}``,
    intersected with ``B(x_i, sqrt(max(w_i, 0)))`` in clipped mode (cells with
    ``w_i <= 0`` are empty there).

    Args:
        domain: polygonal domain.
        positions: (N, 2) pairwise-distinct particle positions.
        weights: length-N weight vector.
        mode: ``"full"`` (cells cover the domain) or ``"clipped"``.

    Raises:
        CoincidentParticles: two positions within ``1e-14 * diameter``.
    """
    if mode not in ("full", "clipped"):
        raise ValueError(f"mode must be 'full' or 'clipped', got {mode!r}")
    positions = np.ascontiguousarray(positions, dtype=float)
    if positions.ndim != 2 or positions.shape[1] != 2:
        raise ValueError("positions must have shape (N, 2)")
    weights = np.ascontiguousarray(np.broadcast_to(np.asarray(weights, dtype=float), (len(positions),)))
    if not (np.all(np.isfinite(positions)) and np.all(np.isfinite(weights))):
        raise ValueError("positions and weights must be finite")
    if len(positions) <= 64:
        d = positions[:, None, :] - positions[None, :, :]
        dist2 = np.sum(d * d, axis=-1)
        np.fill_diagonal(dist2, np.inf)
        if np.min(dist2) <= (COINCIDENCE_RTOL * domain.diameter) ** 2:
            raise CoincidentParticles("two particles coincide within tolerance")
    raw = _run_kernel(domain, positions, weights, mode, emit=False)
    return Tessellation(
        domain=domain,
        mode=mode,
        positions=positions,
        weights=weights,
        areas=raw["areas"],
        barycenters=raw["barycenters"],
        second_moments=raw["second_moments"],
        boundary_arc_lengths=raw["boundary_arc_lengths"],
        nbr_count=raw["nbr_count"],
        nbr_idx=raw["nbr_idx"],
        nbr_len=raw["nbr_len"],
    )


def _pieces_from_buffers(ptype, pdata, count) -> List[Piece]:
    pieces: List[Piece] = []
    for p in range(count):
        if ptype[p] == _kernels.SEG:
            pieces.append(
                Segment(
                    a=pdata[p, 0:2].copy(),
                    b=pdata[p, 2:4].copy(),
                    label=int(pdata[p, 4]),
                )
            )
        else:
            pieces.append(
                Arc(
                    center=pdata[p, 0:2].copy(),
                    radius=float(pdata[p, 2]),
                    theta0=float(pdata[p, 3]),
                    theta1=float(pdata[p, 4]),
                )
            )
    return pieces


def _materialize_cells(tess: Tessellation) -> List[Cell]:
    raw = _run_kernel(tess.domain, tess.positions, tess.weights, tess.mode, emit=True)
    cells = []
    for i in range(tess.n_particles):
        count = int(raw["piece_count"][i])
        if count == 0 or raw["areas"][i] <= 0.0:
            cells.append(
                Cell(
                    owner=i,
                    position=tess.positions[i].copy(),
                    pieces=(),
                    area=0.0,
                    barycenter=None,
                    second_moment=0.0,
                )
            )
            continue
        pieces = _order_pieces(_pieces_from_buffers(raw["piece_type"][i], raw["piece_data"][i], count))
        cells.append(
            Cell(
                owner=i,
                position=tess.positions[i].copy(),
                pieces=pieces,
                area=float(raw["areas"][i]),
                barycenter=raw["barycenters"][i].copy(),
                second_moment=float(raw["second_moments"][i]),
            )
        )
    return cells


def area_jacobian(tess: Tessellation, positions=None) -> sps.csr_matrix:
    """Derivative matrix ``d|L_i| / d w_j`` of cell areas in the weights.

    Off-diagonal ``(i, j)``: ``-interface(i,j) / (2 |x_i - x_j|)``; diagonal:
    minus the off-diagonal row sum, plus ``arc_length_i / (2 sqrt(w_i))`` in
    clipped mode.  Symmetric; interfaces below ``1e-12 * diameter`` are
    treated as zero.  Validated against finite differences in the test suite.
    """
    if positions is not None:
        if not np.array_equal(np.asarray(positions, dtype=float), tess.positions):
            raise StaleState("positions do not match the tessellation")
    N = tess.n_particles
    if tess.mode == "clipped" and np.any((tess.areas > 0.0) & (tess.weights <= 0.0)):
        raise NonpositiveWeight("nonempty clipped cell with w <= 0")
    cutoff = INTERFACE_RTOL * tess.domain.diameter
    counts = tess._nbr_count
    total = int(np.sum(counts))
    rows = np.empty(total, dtype=np.int64)
    cols = np.empty(total, dtype=np.int64)
    vals = np.empty(total)
    pos = 0
    for i in range(N):
        c = int(counts[i])
        if c == 0:
            continue
        rows[pos : pos + c] = i
        cols[pos : pos + c] = tess._nbr_idx[i, :c]
        vals[pos : pos + c] = tess._nbr_len[i, :c]
        pos += c
    keep = vals > cutoff
    rows, cols, vals = rows[keep], cols[keep], vals[keep]
    d = np.linalg.norm(tess.positions[rows] - tess.positions[cols], axis=1)
    one_sided = sps.coo_matrix((vals / (2.0 * d), (rows, cols)), shape=(N, N)).tocsr()
    sym = 0.5 * (one_sided + one_sided.T)
    diag = np.asarray(sym.sum(axis=1)).ravel()
    if tess.mode == "clipped":
        nonempty = tess.areas > 0.0
        ball = np.where(nonempty, np.sqrt(np.maximum(tess.weights, 0.0)), 1.0)
        diag = diag + np.where(nonempty, tess.boundary_arc_lengths / (2.0 * ball), 0.0)
    return (sps.diags(diag) - sym).tocsr()
