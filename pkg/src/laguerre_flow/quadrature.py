"""Quadrature over tessellation cells: fan triangulation, degree-4 rule.

Cells are split into signed triangles fanned from a reference point; each
triangle carries a 6-point symmetric rule exact for polynomials of degree 4.
Arcs are polygonized only here (configurable chord angle), so quadrature of
non-polynomial integrands is the single approximation in the pipeline.
"""

from __future__ import annotations

from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import Arc, Piece, Segment

__all__ = ["cell_nodes", "integrate_over_cell", "DEFAULT_MAX_ARC_ANGLE"]

DEFAULT_MAX_ARC_ANGLE = 0.02

# 6-point symmetric triangle rule, exact through degree 4 (barycentric pairs)
_A1 = 0.445948490915965
_A2 = 0.091576213509771
_W1 = 0.223381589678011
_W2 = 0.109951743655322
_TRI_BARY = np.array(
    [
        [1.0 - 2.0 * _A1, _A1, _A1],
        [_A1, 1.0 - 2.0 * _A1, _A1],
        [_A1, _A1, 1.0 - 2.0 * _A1],
        [1.0 - 2.0 * _A2, _A2, _A2],
        [_A2, 1.0 - 2.0 * _A2, _A2],
        [_A2, _A2, 1.0 - 2.0 * _A2],
    ]
)
_TRI_W = np.array([_W1, _W1, _W1, _W2, _W2, _W2])


def _boundary_chords(pieces: Iterable[Piece], max_arc_angle: float) -> np.ndarray:
    """Boundary as an array of directed chords (M, 2, 2), arcs subdivided."""
    chords: List[np.ndarray] = []
    for piece in pieces:
        if isinstance(piece, Segment):
            chords.append(np.stack([piece.a, piece.b]))
        else:
            span = piece.theta1 - piece.theta0
            k = max(2, int(np.ceil(span / max_arc_angle)))
            th = piece.theta0 + span * np.arange(k + 1) / k
            pts = piece.center[None, :] + piece.radius * np.stack(
                [np.cos(th), np.sin(th)], axis=1
            )
            for q in range(k):
                chords.append(pts[q : q + 2])
    return np.array(chords)


def cell_nodes(
    pieces: Sequence[Piece],
    ref: np.ndarray,
    max_arc_angle: float = DEFAULT_MAX_ARC_ANGLE,
) -> Tuple[np.ndarray, np.ndarray]:
    """Quadrature nodes and signed weights integrating over the cell.

    ``sum(weights * f(nodes))`` approximates the cell integral of ``f``;
    exact for polynomials of degree <= 4 on polygon-only cells.  ``ref`` is
    the fan origin (use the cell barycenter).
    """
    chords = _boundary_chords(pieces, max_arc_angle)
    if len(chords) == 0:
        return np.zeros((0, 2)), np.zeros(0)
    a = chords[:, 0, :]
    b = chords[:, 1, :]
    ref = np.asarray(ref, dtype=float)
    signed = 0.5 * ((a[:, 0] - ref[0]) * (b[:, 1] - ref[1]) - (a[:, 1] - ref[1]) * (b[:, 0] - ref[0]))
    # nodes: bary combination of (ref, a, b) per chord and rule point
    pts = (
        _TRI_BARY[None, :, 0, None] * ref[None, None, :]
        + _TRI_BARY[None, :, 1, None] * a[:, None, :]
        + _TRI_BARY[None, :, 2, None] * b[:, None, :]
    )
    wts = signed[:, None] * _TRI_W[None, :]
    return pts.reshape(-1, 2), wts.reshape(-1)


def integrate_over_cell(
    pieces: Sequence[Piece],
    ref: np.ndarray,
    f: Callable[[np.ndarray], np.ndarray],
    max_arc_angle: float = DEFAULT_MAX_ARC_ANGLE,
) -> float:
    pts, wts = cell_nodes(pieces, ref, max_arc_angle)
    if len(pts) == 0:
        return 0.0
    return float(np.sum(wts * np.asarray(f(pts))))
