"""Compiled geometry kernels: cell clipping, arc moments, candidate pruning.

Everything here works in owner-relative coordinates (the cell's particle sits
at the origin) to keep the half-plane offsets and contour integrals well
conditioned.  Cells are represented as flat piece buffers:

* piece type 0, segment: ``(ax, ay, bx, by, label, 0)``
* piece type 1, arc:     ``(cx, cy, R, theta0, theta1, -2)`` traversed CCW

Labels: ``-1`` domain boundary, ``j >= 0`` bisector against particle ``j``,
``-2`` arc on the owner's ball.  The emitted buffers are in absolute
coordinates; internal accumulation stays relative.
"""

import math

import numpy as np
from numba import get_num_threads, get_thread_id, njit, prange

SEG = 0
ARC = 1

LBL_DOMAIN = -1
LBL_BALL = -2

STATUS_OK = 0
STATUS_COINCIDENT = 1
STATUS_OVERFLOW = 2
STATUS_DEGENERATE = 3


@njit(cache=True)
def _halfplane_clip(VX, VY, VL, nv, cur, nx, ny, c, newlabel, maxv):
    """Keep the part of the polygon with ``nx*x + ny*y <= c``.

    Returns (new vertex count, new buffer index, ok flag).  Edge labels ride
    along; the closing edge created on the clip line gets ``newlabel``.
    """
    out = 1 - cur
    m = 0
    for k in range(nv):
        k2 = k + 1
        if k2 == nv:
            k2 = 0
        ax = VX[cur, k]
        ay = VY[cur, k]
        bx = VX[cur, k2]
        by = VY[cur, k2]
        lab = VL[cur, k]
        da = nx * ax + ny * ay - c
        db = nx * bx + ny * by - c
        if da <= 0.0:
            if m >= maxv:
                return 0, out, False
            VX[out, m] = ax
            VY[out, m] = ay
            VL[out, m] = lab
            m += 1
            if db > 0.0:
                t = da / (da - db)
                if m >= maxv:
                    return 0, out, False
                VX[out, m] = ax + t * (bx - ax)
                VY[out, m] = ay + t * (by - ay)
                VL[out, m] = newlabel
                m += 1
        elif db <= 0.0:
            t = da / (da - db)
            if m >= maxv:
                return 0, out, False
            VX[out, m] = ax + t * (bx - ax)
            VY[out, m] = ay + t * (by - ay)
            VL[out, m] = lab
            m += 1
    return m, out, True


@njit(cache=True)
def _max_vertex_radius(VX, VY, nv, cur):
    r2 = 0.0
    for k in range(nv):
        v = VX[cur, k] * VX[cur, k] + VY[cur, k] * VY[cur, k]
        if v > r2:
            r2 = v
    return math.sqrt(r2)


@njit(cache=True)
def _origin_in_polygon(VX, VY, nv, cur):
    inside = False
    j = nv - 1
    for k in range(nv):
        yk = VY[cur, k]
        yj = VY[cur, j]
        if (yk > 0.0) != (yj > 0.0):
            xint = VX[cur, k] - yk * (VX[cur, j] - VX[cur, k]) / (yj - yk)
            if xint > 0.0:
                inside = not inside
        j = k
    return inside


@njit(cache=True)
def _polygon_to_pieces(VX, VY, VL, nv, cur, PT, PD, maxp):
    if nv > maxp:
        return -1
    for k in range(nv):
        k2 = k + 1
        if k2 == nv:
            k2 = 0
        PT[k] = SEG
        PD[k, 0] = VX[cur, k]
        PD[k, 1] = VY[cur, k]
        PD[k, 2] = VX[cur, k2]
        PD[k, 3] = VY[cur, k2]
        PD[k, 4] = VL[cur, k]
        PD[k, 5] = 0.0
    return nv


@njit(cache=True)
def _disk_clip(VX, VY, VL, nv, cur, R, PT, PD, maxp, cross_ang, cross_kind, cross_used):
    """Intersect the polygon with the origin-centered disk of radius R.

    Emits boundary sub-segments (original labels kept) plus CCW arcs; each
    exit crossing connects to the CCW-next entry crossing on the circle.
    Returns (piece count, status); piece count 0 with STATUS_OK means empty.
    """
    R2 = R * R
    npcs = 0
    ncross = 0
    any_inside = False
    for k in range(nv):
        k2 = k + 1
        if k2 == nv:
            k2 = 0
        ax = VX[cur, k]
        ay = VY[cur, k]
        bx = VX[cur, k2]
        by = VY[cur, k2]
        lab = VL[cur, k]
        dx = bx - ax
        dy = by - ay
        a = dx * dx + dy * dy
        if a == 0.0:
            continue
        b = ax * dx + ay * dy
        cc = ax * ax + ay * ay - R2
        disc = b * b - a * cc
        if disc <= 0.0:
            if cc <= 0.0:
                # whole edge inside (tangent exterior handled by cc > 0)
                if npcs >= maxp:
                    return 0, STATUS_OVERFLOW
                PT[npcs] = SEG
                PD[npcs, 0] = ax
                PD[npcs, 1] = ay
                PD[npcs, 2] = bx
                PD[npcs, 3] = by
                PD[npcs, 4] = lab
                PD[npcs, 5] = 0.0
                npcs += 1
                any_inside = True
            continue
        sq = math.sqrt(disc)
        t0 = (-b - sq) / a
        t1 = (-b + sq) / a
        u0 = t0 if t0 > 0.0 else 0.0
        u1 = t1 if t1 < 1.0 else 1.0
        if u0 >= u1:
            continue
        px0 = ax + u0 * dx
        py0 = ay + u0 * dy
        px1 = ax + u1 * dx
        py1 = ay + u1 * dy
        if npcs >= maxp:
            return 0, STATUS_OVERFLOW
        PT[npcs] = SEG
        PD[npcs, 0] = px0
        PD[npcs, 1] = py0
        PD[npcs, 2] = px1
        PD[npcs, 3] = py1
        PD[npcs, 4] = lab
        PD[npcs, 5] = 0.0
        npcs += 1
        any_inside = True
        if u0 > 0.0:
            cross_ang[ncross] = math.atan2(py0, px0)
            cross_kind[ncross] = 0  # entry
            ncross += 1
        if u1 < 1.0:
            cross_ang[ncross] = math.atan2(py1, px1)
            cross_kind[ncross] = 1  # exit
            ncross += 1

    if ncross == 0:
        if any_inside:
            return npcs, STATUS_OK
        # boundary entirely outside the disk: full disk or empty
        if _origin_in_polygon(VX, VY, nv, cur):
            PT[0] = ARC
            PD[0, 0] = 0.0
            PD[0, 1] = 0.0
            PD[0, 2] = R
            PD[0, 3] = 0.0
            PD[0, 4] = 2.0 * math.pi
            PD[0, 5] = LBL_BALL
            return 1, STATUS_OK
        return 0, STATUS_OK

    nentry = 0
    nexit = 0
    for q in range(ncross):
        cross_used[q] = 0
        if cross_kind[q] == 0:
            nentry += 1
        else:
            nexit += 1
    if nentry != nexit:
        return 0, STATUS_DEGENERATE

    two_pi = 2.0 * math.pi
    for q in range(ncross):
        if cross_kind[q] != 1:
            continue
        phi = cross_ang[q]
        best = -1
        best_d = two_pi + 1.0
        for r in range(ncross):
            if cross_kind[r] != 0 or cross_used[r] == 1:
                continue
            d = cross_ang[r] - phi
            while d <= 0.0:
                d += two_pi
            if d < best_d:
                best_d = d
                best = r
        if best < 0 or best_d > two_pi:
            return 0, STATUS_DEGENERATE
        cross_used[best] = 1
        if npcs >= maxp:
            return 0, STATUS_OVERFLOW
        PT[npcs] = ARC
        PD[npcs, 0] = 0.0
        PD[npcs, 1] = 0.0
        PD[npcs, 2] = R
        PD[npcs, 3] = phi
        PD[npcs, 4] = phi + best_d
        PD[npcs, 5] = LBL_BALL
        npcs += 1
    return npcs, STATUS_OK


@njit(cache=True)
def _moments_of_pieces(PT, PD, npcs):
    """Contour-integral area, first moments, and second moment about origin.

    Arc pieces must be centered at the origin (owner-relative frame).
    Returns (area, Mx, My, I2, total arc length).
    """
    area = 0.0
    mx = 0.0
    my = 0.0
    i2 = 0.0
    arct = 0.0
    for p in range(npcs):
        if PT[p] == SEG:
            ax = PD[p, 0]
            ay = PD[p, 1]
            bx = PD[p, 2]
            by = PD[p, 3]
            area += 0.5 * (ax * by - ay * bx)
            mx += (by - ay) * (ax * ax + ax * bx + bx * bx) / 6.0
            my -= (bx - ax) * (ay * ay + ay * by + by * by) / 6.0
            i2 += (
                (by - ay) * (ax * ax * ax + ax * ax * bx + ax * bx * bx + bx * bx * bx)
                - (bx - ax) * (ay * ay * ay + ay * ay * by + ay * by * by + by * by * by)
            ) / 12.0
        else:
            R = PD[p, 2]
            t0 = PD[p, 3]
            t1 = PD[p, 4]
            s0 = math.sin(t0)
            s1 = math.sin(t1)
            c0 = math.cos(t0)
            c1 = math.cos(t1)
            area += 0.5 * R * R * (t1 - t0)
            mx += 0.5 * R * R * R * ((s1 - s1 * s1 * s1 / 3.0) - (s0 - s0 * s0 * s0 / 3.0))
            my += 0.5 * R * R * R * ((-c1 + c1 * c1 * c1 / 3.0) - (-c0 + c0 * c0 * c0 / 3.0))
            i2 += (
                R * R * R * R / 3.0
                * ((0.75 * t1 + math.sin(4.0 * t1) / 16.0) - (0.75 * t0 + math.sin(4.0 * t0) / 16.0))
            )
            arct += R * (t1 - t0)
    return area, mx, my, i2, arct


@njit(cache=True)
def _collect_ring(ring, gx0, gy0, Gx, Gy, counts, order, i, px, py, xi, yi, cand_idx, cand_d2):
    """Gather ring candidates sorted by squared distance to the owner."""
    n = 0
    lo_x = gx0 - ring
    hi_x = gx0 + ring
    lo_y = gy0 - ring
    hi_y = gy0 + ring
    for cy in range(lo_y, hi_y + 1):
        if cy < 0 or cy >= Gy:
            continue
        on_y_edge = cy == lo_y or cy == hi_y
        for cx in range(lo_x, hi_x + 1):
            if cx < 0 or cx >= Gx:
                continue
            if ring > 0 and not on_y_edge and cx != lo_x and cx != hi_x:
                continue
            c = cy * Gx + cx
            for t in range(counts[c], counts[c + 1]):
                j = order[t]
                if j == i:
                    continue
                dxj = px[j] - xi
                dyj = py[j] - yi
                d2 = dxj * dxj + dyj * dyj
                # insertion sort, ascending in d2
                q = n
                while q > 0 and cand_d2[q - 1] > d2:
                    cand_d2[q] = cand_d2[q - 1]
                    cand_idx[q] = cand_idx[q - 1]
                    q -= 1
                cand_d2[q] = d2
                cand_idx[q] = j
                n += 1
    return n


@njit(cache=True, parallel=True)
def build_tessellation_kernel(
    dom_x,
    dom_y,
    px,
    py,
    w,
    clipped,
    emit,
    coincident_tol2,
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
):
    """Build all cells: moments, interface lengths, optional piece emission.

    Aggregate outputs are always filled; ``piece_*`` buffers are only written
    when ``emit`` is true (pass size-1 dummies otherwise).
    """
    N = px.shape[0]
    nd = dom_x.shape[0]
    maxv = nd + 96
    maxp = 2 * maxv + 4
    maxnbr = nbr_idx.shape[1]

    # uniform grid over the particle bounding box
    xmin = px[0]
    xmax = px[0]
    ymin = py[0]
    ymax = py[0]
    for p in range(N):
        if px[p] < xmin:
            xmin = px[p]
        if px[p] > xmax:
            xmax = px[p]
        if py[p] < ymin:
            ymin = py[p]
        if py[p] > ymax:
            ymax = py[p]
    span = max(xmax - xmin, ymax - ymin)
    scale = max(abs(xmin), abs(xmax), abs(ymin), abs(ymax), 1.0)
    if span <= 1e-300:
        span = scale
    G = int(math.sqrt(N / 2.0)) + 1
    h = span / G * (1.0 + 1e-12)
    Gx = int((xmax - xmin) / h) + 1
    Gy = int((ymax - ymin) / h) + 1
    counts = np.zeros(Gx * Gy + 1, dtype=np.int64)
    cellid = np.empty(N, dtype=np.int64)
    for p in range(N):
        gx = int((px[p] - xmin) / h)
        gy = int((py[p] - ymin) / h)
        if gx >= Gx:
            gx = Gx - 1
        if gy >= Gy:
            gy = Gy - 1
        cellid[p] = gy * Gx + gx
        counts[cellid[p] + 1] += 1
    for c in range(1, Gx * Gy + 1):
        counts[c] += counts[c - 1]
    order = np.empty(N, dtype=np.int64)
    fill = counts[: Gx * Gy].copy()
    for p in range(N):
        order[fill[cellid[p]]] = p
        fill[cellid[p]] += 1

    w_min = w[0]
    for p in range(N):
        if w[p] < w_min:
            w_min = w[p]

    nthreads = get_num_threads()
    WVX = np.empty((nthreads, 2, maxv))
    WVY = np.empty((nthreads, 2, maxv))
    WVL = np.empty((nthreads, 2, maxv), dtype=np.int64)
    WPT = np.empty((nthreads, maxp), dtype=np.int8)
    WPD = np.empty((nthreads, maxp, 6))
    WCA = np.empty((nthreads, 2 * maxv))
    WCK = np.empty((nthreads, 2 * maxv), dtype=np.int8)
    WCU = np.empty((nthreads, 2 * maxv), dtype=np.int8)
    WCI = np.empty((nthreads, N), dtype=np.int64)
    WCD = np.empty((nthreads, N))

    maxring = Gx if Gx > Gy else Gy

    for i in prange(N):
        tid = get_thread_id()
        VX = WVX[tid]
        VY = WVY[tid]
        VL = WVL[tid]
        PT = WPT[tid]
        PD = WPD[tid]
        cand_idx = WCI[tid]
        cand_d2 = WCD[tid]

        status[i] = STATUS_OK
        areas[i] = 0.0
        bcx[i] = np.nan
        bcy[i] = np.nan
        m2[i] = 0.0
        arclen[i] = 0.0
        nbr_count[i] = 0
        if emit:
            piece_count[i] = 0

        xi = px[i]
        yi = py[i]
        wi = w[i]
        if clipped and wi <= 0.0:
            continue
        ball_r = math.sqrt(wi) if clipped else math.inf

        nv = nd
        cur = 0
        for k in range(nd):
            VX[0, k] = dom_x[k] - xi
            VY[0, k] = dom_y[k] - yi
            VL[0, k] = LBL_DOMAIN
        r_max = _max_vertex_radius(VX, VY, nv, cur)
        r_max_eff = min(r_max, ball_r)

        gx0 = int((xi - xmin) / h)
        gy0 = int((yi - ymin) / h)
        if gx0 >= Gx:
            gx0 = Gx - 1
        if gy0 >= Gy:
            gy0 = Gy - 1

        empty = False
        for ring in range(maxring + 1):
            ncand = _collect_ring(
                ring, gx0, gy0, Gx, Gy, counts, order, i, px, py, xi, yi, cand_idx, cand_d2
            )
            for q in range(ncand):
                j = cand_idx[q]
                d2 = cand_d2[q]
                if d2 <= coincident_tol2:
                    status[i] = STATUS_COINCIDENT
                    empty = True
                    break
                d = math.sqrt(d2)
                sbis = 0.5 * d + 0.5 * (wi - w[j]) / d
                if sbis >= r_max_eff:
                    continue
                nx = 2.0 * (px[j] - xi)
                ny = 2.0 * (py[j] - yi)
                cc = d2 + wi - w[j]
                nv, cur, ok = _halfplane_clip(VX, VY, VL, nv, cur, nx, ny, cc, j, maxv)
                if not ok:
                    status[i] = STATUS_OVERFLOW
                    empty = True
                    break
                if nv < 3:
                    empty = True
                    break
                r_max = _max_vertex_radius(VX, VY, nv, cur)
                r_max_eff = min(r_max, ball_r)
            if empty or status[i] != STATUS_OK:
                break
            dmin = ring * h
            if dmin > 0.0:
                spread = wi - w_min
                if spread < 0.0:
                    spread = 0.0
                if 0.5 * dmin - 0.5 * spread / dmin >= r_max_eff:
                    break
        if status[i] != STATUS_OK or empty:
            continue

        if clipped:
            npcs, st = _disk_clip(
                VX, VY, VL, nv, cur, ball_r, PT, PD, maxp, WCA[tid], WCK[tid], WCU[tid]
            )
            if st == STATUS_DEGENERATE:
                # tangency: nudge the ball radius deterministically and retry
                npcs, st = _disk_clip(
                    VX, VY, VL, nv, cur, ball_r * (1.0 + 1e-12), PT, PD, maxp,
                    WCA[tid], WCK[tid], WCU[tid],
                )
            if st == STATUS_DEGENERATE:
                npcs, st = _disk_clip(
                    VX, VY, VL, nv, cur, ball_r * (1.0 - 1e-12), PT, PD, maxp,
                    WCA[tid], WCK[tid], WCU[tid],
                )
            if st != STATUS_OK:
                status[i] = st
                continue
        else:
            npcs = _polygon_to_pieces(VX, VY, VL, nv, cur, PT, PD, maxp)
            if npcs < 0:
                status[i] = STATUS_OVERFLOW
                continue
        if npcs == 0:
            continue

        area, mx, my, i2, arct = _moments_of_pieces(PT, PD, npcs)
        if area <= 0.0:
            continue
        areas[i] = area
        bcx[i] = xi + mx / area
        bcy[i] = yi + my / area
        m2[i] = i2
        arclen[i] = arct

        nn = 0
        for p in range(npcs):
            if PT[p] != SEG:
                continue
            lab = int(PD[p, 4])
            if lab < 0:
                continue
            dxs = PD[p, 2] - PD[p, 0]
            dys = PD[p, 3] - PD[p, 1]
            ln = math.sqrt(dxs * dxs + dys * dys)
            if ln == 0.0:
                continue
            found = False
            for q in range(nn):
                if nbr_idx[i, q] == lab:
                    nbr_len[i, q] += ln
                    found = True
                    break
            if not found:
                if nn >= maxnbr:
                    status[i] = STATUS_OVERFLOW
                    break
                nbr_idx[i, nn] = lab
                nbr_len[i, nn] = ln
                nn += 1
        nbr_count[i] = nn

        if emit:
            piece_count[i] = npcs
            for p in range(npcs):
                piece_type[i, p] = PT[p]
                if PT[p] == SEG:
                    piece_data[i, p, 0] = PD[p, 0] + xi
                    piece_data[i, p, 1] = PD[p, 1] + yi
                    piece_data[i, p, 2] = PD[p, 2] + xi
                    piece_data[i, p, 3] = PD[p, 3] + yi
                    piece_data[i, p, 4] = PD[p, 4]
                    piece_data[i, p, 5] = 0.0
                else:
                    piece_data[i, p, 0] = xi
                    piece_data[i, p, 1] = yi
                    piece_data[i, p, 2] = PD[p, 2]
                    piece_data[i, p, 3] = PD[p, 3]
                    piece_data[i, p, 4] = PD[p, 4]
                    piece_data[i, p, 5] = LBL_BALL


@njit(cache=True)
def disk_clip_polygon(vx, vy, labels, radius):
    """Standalone polygon-with-origin-centered-disk intersection.

    Input polygon is CCW in coordinates relative to the disk center.  Returns
    (piece types, piece data, count, status); piece coordinates stay relative.
    """
    nv = vx.shape[0]
    maxv = nv + 8
    maxp = 2 * maxv + 4
    VX = np.empty((2, maxv))
    VY = np.empty((2, maxv))
    VL = np.empty((2, maxv), dtype=np.int64)
    for k in range(nv):
        VX[0, k] = vx[k]
        VY[0, k] = vy[k]
        VL[0, k] = labels[k]
    PT = np.empty(maxp, dtype=np.int8)
    PD = np.empty((maxp, 6))
    ca = np.empty(2 * maxv)
    ck = np.empty(2 * maxv, dtype=np.int8)
    cu = np.empty(2 * maxv, dtype=np.int8)
    npcs, st = _disk_clip(VX, VY, VL, nv, 0, radius, PT, PD, maxp, ca, ck, cu)
    if st == STATUS_DEGENERATE:
        npcs, st = _disk_clip(
            VX, VY, VL, nv, 0, radius * (1.0 + 1e-12), PT, PD, maxp, ca, ck, cu
        )
    if st == STATUS_DEGENERATE:
        npcs, st = _disk_clip(
            VX, VY, VL, nv, 0, radius * (1.0 - 1e-12), PT, PD, maxp, ca, ck, cu
        )
    return PT[:npcs].copy(), PD[:npcs].copy(), npcs, st
