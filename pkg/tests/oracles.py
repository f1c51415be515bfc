"""Independent oracles used across the test suite.

Everything here deliberately avoids the code paths it is used to check:
Monte-Carlo sampling for cell measures, finite differences for derivatives,
derivative-free coordinate ascent for the dual maximizer, and a rasterized
linear-program transport solver for the energy itself.
"""

import numpy as np
import scipy.optimize as sopt

from laguerre_flow.dual_solver import ParticleSystem, dual_value
from laguerre_flow.energy import cell_cost
from laguerre_flow.geometry import Domain, build_tessellation


def assign_points(points, positions, weights, mode):
    """Label sample points by Laguerre cell (-1 for unassigned in clipped mode)."""
    d2 = (
        np.sum((points[:, None, :] - positions[None, :, :]) ** 2, axis=2)
        - weights[None, :]
    )
    idx = np.argmin(d2, axis=1)
    if mode == "clipped":
        in_ball = np.sum((points - positions[idx]) ** 2, axis=1) <= np.maximum(
            weights[idx], 0.0
        )
        idx = np.where(in_ball, idx, -1)
    return idx


def mc_cell_stats(domain, positions, weights, mode, n_samples, rng):
    """Monte-Carlo per-cell area/barycenter/second-moment with standard errors.

    Returns dict of arrays: area, area_se, barycenter, barycenter_se,
    second_moment, second_moment_se.  Uniform sampling over the domain's
    bounding box with point-in-polygon rejection.
    """
    lo = domain.vertices.min(axis=0)
    hi = domain.vertices.max(axis=0)
    box_area = float(np.prod(hi - lo))
    pts = lo + (hi - lo) * rng.random((n_samples, 2))
    inside = domain.contains(pts)
    pts = pts[inside]
    frac_in = len(pts) / n_samples
    idx = assign_points(pts, positions, weights, mode)

    n = len(positions)
    out = {
        "area": np.zeros(n),
        "area_se": np.zeros(n),
        "barycenter": np.zeros((n, 2)),
        "barycenter_se": np.zeros((n, 2)),
        "second_moment": np.zeros(n),
        "second_moment_se": np.zeros(n),
    }
    for i in range(n):
        sel = idx == i
        p_i = np.mean(sel) * frac_in  # fraction of box samples in cell i
        out["area"][i] = p_i * box_area
        out["area_se"][i] = box_area * np.sqrt(p_i * (1.0 - p_i) / n_samples)
        if np.sum(sel) < 8:
            out["area_se"][i] = max(out["area_se"][i], box_area / n_samples)
            continue
        cell_pts = pts[sel]
        m = len(cell_pts)
        out["barycenter"][i] = cell_pts.mean(axis=0)
        out["barycenter_se"][i] = cell_pts.std(axis=0, ddof=1) / np.sqrt(m)
        r2 = np.sum((cell_pts - positions[i]) ** 2, axis=1)
        # integral estimate: mean over cell times exact-by-MC cell area
        out["second_moment"][i] = r2.mean() * out["area"][i]
        se_mean = r2.std(ddof=1) / np.sqrt(m)
        out["second_moment_se"][i] = np.sqrt(
            (se_mean * out["area"][i]) ** 2 + (r2.mean() * out["area_se"][i]) ** 2
        )
    return out


def fd_area_jacobian(domain, positions, weights, mode, h=1e-6):
    """Central finite differences of all cell areas in all weights."""
    n = len(positions)
    jac = np.zeros((n, n))
    for j in range(n):
        wp = weights.copy()
        wm = weights.copy()
        wp[j] += h
        wm[j] -= h
        ap = build_tessellation(domain, positions, wp, mode).areas
        am = build_tessellation(domain, positions, wm, mode).areas
        jac[:, j] = (ap - am) / (2.0 * h)
    return jac


def coordinate_ascent_dual(sys, w0, tol=1e-8, max_sweeps=400):
    """Derivative-free cyclic maximization of the dual in each weight.

    Uses scalar bounded golden-section/Brent maximization per coordinate;
    stops when a full sweep moves no coordinate by more than ``tol``.
    """
    w = np.array(w0, dtype=float)
    for _ in range(max_sweeps):
        moved = 0.0
        for i in range(len(w)):
            lo = max(1e-12, 0.25 * w[i])
            hi = 4.0 * w[i] + 1.0

            def neg(v):
                trial = w.copy()
                trial[i] = v
                return -dual_value(sys, trial)

            res = sopt.minimize_scalar(neg, bounds=(lo, hi), method="bounded",
                                       options={"xatol": tol * 1e-2})
            moved = max(moved, abs(res.x - w[i]))
            w[i] = res.x
        if moved <= tol:
            break
    return w


def lp_transport_energy(sys, grid_n=20):
    """Rasterized primal energy: joint LP over transport plan and cell areas.

    The domain is rasterized into ``grid_n**2`` pixels of uniform density;
    for fixed per-particle areas the optimal transport cost is a linear
    program, and the outer minimization over the area split is a bounded
    scalar search (N = 2 only).
    """
    assert sys.n == 2, "LP oracle implemented for two particles"
    dom = sys.domain
    lo = dom.vertices.min(axis=0)
    hi = dom.vertices.max(axis=0)
    xs = lo[0] + (hi[0] - lo[0]) * (np.arange(grid_n) + 0.5) / grid_n
    ys = lo[1] + (hi[1] - lo[1]) * (np.arange(grid_n) + 0.5) / grid_n
    cx, cy = np.meshgrid(xs, ys, indexing="ij")
    pix = np.stack([cx.ravel(), cy.ravel()], axis=1)
    pix_mass = dom.area / len(pix)
    cost = np.sum((pix[None, :, :] - sys.positions[:, None, :]) ** 2, axis=2)

    def w2_for_split(a0):
        # transport LP: move pixel masses to the two particles with marginals
        # (a0, |domain| - a0); variables gamma[i, k] >= 0
        areas = np.array([a0, dom.area - a0])
        n_pix = len(pix)
        c = cost.ravel()
        a_eq = []
        b_eq = []
        for k in range(n_pix):
            row = np.zeros(2 * n_pix)
            row[k] = 1.0
            row[n_pix + k] = 1.0
            a_eq.append(row)
            b_eq.append(pix_mass)
        for i in range(2):
            row = np.zeros(2 * n_pix)
            row[i * n_pix : (i + 1) * n_pix] = 1.0
            a_eq.append(row)
            b_eq.append(areas[i])
        res = sopt.linprog(
            c,
            A_eq=np.array(a_eq),
            b_eq=np.array(b_eq),
            bounds=(0.0, None),
            method="highs",
        )
        assert res.success
        return res.fun

    def objective(a0):
        w2 = w2_for_split(a0)
        return (
            w2 / (2.0 * sys.epsilon)
            + cell_cost(sys.model, float(sys.masses[0]), a0)
            + cell_cost(sys.model, float(sys.masses[1]), dom.area - a0)
        )

    res = sopt.minimize_scalar(
        objective, bounds=(1e-3 * dom.area, (1.0 - 1e-3) * dom.area), method="bounded",
        options={"xatol": 1e-6},
    )
    return float(res.fun)
