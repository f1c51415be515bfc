"""Exact solutions, initial data, error metrics, and convergence studies.

The porous-medium reference solution is the self-similar compactly supported
profile

    rho(t, x) = t^(-alpha) (C^2 - k t^(-2 beta) |x|^2)_+^(1/(gamma-1)),

with ``alpha = d/(d(gamma-1)+2)``, ``beta = alpha/d``, ``k = beta(gamma-1)/(2 gamma)``
and exact Lagrangian flow ``x -> (t/t0)^beta x``.  Initial particle data comes
from a radial rearrangement of a uniform reference ball: a Voronoi
tessellation of the ball (sunflower seeds refined by Lloyd iterations), the
mass-matching radial map, and per-cell quadrature for the projected particle
positions and the projection error ``delta_N``.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from . import dynamics
from .dual_solver import ParticleSystem, solve_weights
from .energy import EnergyModel, power_law, pressure
from .errors import LengthMismatch, NonpositiveDensity, QuadratureFailure
from .geometry import (
    Arc,
    Cell,
    Domain,
    Piece,
    Segment,
    Tessellation,
    build_tessellation,
    pieces_moments,
)
from . import _kernels
from .quadrature import cell_nodes

__all__ = [
    "BarenblattSpec",
    "InitialData",
    "EquilibriumProfile",
    "StudyRow",
    "barenblatt_density",
    "barenblatt_flow",
    "barenblatt_support_radius",
    "barenblatt_total_mass",
    "build_initial_data",
    "flow_error",
    "relative_internal_energy",
    "equilibrium_profile",
    "convergence_study",
    "run_barenblatt_case",
    "study_table_csv",
    "ball_lloyd_cells",
    "RadialMassMap",
]

BARENBLATT_BOX_HALF_WIDTH = 1.5


@dataclass(frozen=True)
class BarenblattSpec:
    """Parameters of the self-similar solution (planar case, d = 2)."""

    gamma: float
    C: float = 1.0 / 3.0
    t0: float = 1.0 / 16.0
    d: int = 2

    def __post_init__(self):
        if self.gamma <= 1.0:
            raise ValueError("gamma must exceed 1")
        if self.C <= 0.0 or self.t0 <= 0.0:
            raise ValueError("C and t0 must be positive")
        if self.d != 2:
            raise ValueError("only the planar case is implemented")

    @property
    def alpha(self) -> float:
        return self.d / (self.d * (self.gamma - 1.0) + 2.0)

    @property
    def beta(self) -> float:
        return self.alpha / self.d

    @property
    def k(self) -> float:
        return self.beta * (self.gamma - 1.0) / (2.0 * self.gamma)


def barenblatt_density(spec: BarenblattSpec, t: float, x) -> np.ndarray:
    """Profile value at time ``t > 0`` and points ``x`` (shape (..., 2))."""
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x * x, axis=-1)
    bracket = spec.C**2 - spec.k * r2 / t ** (2.0 * spec.beta)
    out = np.where(bracket > 0.0, bracket, 0.0) ** (1.0 / (spec.gamma - 1.0))
    return out / t**spec.alpha


def barenblatt_radial(spec: BarenblattSpec, t: float, r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    bracket = spec.C**2 - spec.k * r * r / t ** (2.0 * spec.beta)
    return np.where(bracket > 0.0, bracket, 0.0) ** (1.0 / (spec.gamma - 1.0)) / t**spec.alpha


def barenblatt_support_radius(spec: BarenblattSpec, t: float) -> float:
    return spec.C * t**spec.beta / math.sqrt(spec.k)


def barenblatt_flow(spec: BarenblattSpec, t: float, x) -> np.ndarray:
    """Exact flow from time ``t0`` to ``t``: radial scaling by ``(t/t0)^beta``."""
    if t <= 0.0 or spec.t0 <= 0.0:
        raise ValueError("flow needs positive times")
    return (t / spec.t0) ** spec.beta * np.asarray(x, dtype=float)


def barenblatt_total_mass(spec: BarenblattSpec) -> float:
    """Closed-form total mass ``2 pi C^(2 gamma/(gamma-1)) / beta`` (t-free)."""
    return 2.0 * math.pi * spec.C ** (2.0 * spec.gamma / (spec.gamma - 1.0)) / spec.beta


# ---------------------------------------------------------------------------
# reference-ball tessellation


def sunflower_seeds(n: int, radius: float) -> np.ndarray:
    """Deterministic quasi-uniform seeds in a disk (golden-angle spiral)."""
    k = np.arange(n) + 0.5
    r = radius * np.sqrt(k / n)
    th = k * math.pi * (3.0 - math.sqrt(5.0))
    return np.stack([r * np.cos(th), r * np.sin(th)], axis=1)


def _clip_cell_to_ball(cell: Cell, center: np.ndarray, radius: float) -> List[Piece]:
    """Intersect a polygonal cell with the ball; pieces in absolute coords."""
    if not cell.pieces:
        return []
    verts = np.array([p.a for p in cell.pieces])
    labels = np.array([p.label for p in cell.pieces], dtype=np.int64)
    pt, pd, n, status = _kernels.disk_clip_polygon(
        np.ascontiguousarray(verts[:, 0] - center[0]),
        np.ascontiguousarray(verts[:, 1] - center[1]),
        labels,
        radius,
    )
    if status != _kernels.STATUS_OK:
        raise QuadratureFailure("ball clipping hit an unresolvable tangency")
    pieces: List[Piece] = []
    for q in range(n):
        if pt[q] == _kernels.SEG:
            pieces.append(
                Segment(a=pd[q, 0:2] + center, b=pd[q, 2:4] + center, label=int(pd[q, 4]))
            )
        else:
            pieces.append(
                Arc(center=center.copy(), radius=float(pd[q, 2]), theta0=float(pd[q, 3]), theta1=float(pd[q, 4]))
            )
    return pieces


def ball_lloyd_cells(
    n: int, radius: float, center=(0.0, 0.0), lloyd_iters: int = 20
) -> Tuple[List[List[Piece]], np.ndarray, np.ndarray]:
    """Voronoi tessellation of a ball from sunflower seeds with Lloyd smoothing.

    Returns (cell piece lists, cell areas, seed positions after smoothing).
    The cells partition the ball exactly (polygon edges plus boundary arcs).
    """
    center = np.asarray(center, dtype=float)
    seeds = sunflower_seeds(n, radius) + center
    box = Domain.box(
        center[0] - 1.25 * radius,
        center[1] - 1.25 * radius,
        center[0] + 1.25 * radius,
        center[1] + 1.25 * radius,
    )
    weights = np.zeros(n)
    pieces_all: List[List[Piece]] = []
    areas = np.zeros(n)
    for sweep in range(lloyd_iters + 1):
        tess = build_tessellation(box, seeds, weights, "full")
        pieces_all = []
        areas = np.zeros(n)
        moved = seeds.copy()
        for i, cell in enumerate(tess.cells):
            clipped = _clip_cell_to_ball(cell, center, radius)
            pieces_all.append(clipped)
            area, bary, _ = pieces_moments(clipped, center)
            areas[i] = area
            if sweep < lloyd_iters and area > 0.0 and bary is not None:
                moved[i] = bary
        if sweep < lloyd_iters:
            seeds = moved
    return pieces_all, areas, seeds


# ---------------------------------------------------------------------------
# radial rearrangement


class RadialMassMap:
    """Radial map from the uniform reference ball onto a radial density.

    ``Phi(x) = R(|x|) x / |x|`` where ``R(r)`` solves the mass-matching
    equation ``pi r^2 = 2 pi int_0^{R(r)} rho(s) s ds``; the cumulative mass
    is tabulated on a graded grid (5-point Gauss per interval, monotone
    interpolation) and each evaluation solves the equation by bracketed
    root-finding to 1e-12 in radius.
    """

    _GL_NODES = np.array(
        [-0.9061798459386640, -0.5384693101056831, 0.0, 0.5384693101056831, 0.9061798459386640]
    )
    _GL_WEIGHTS = np.array(
        [0.2369268850561891, 0.4786286704993665, 0.5688888888888889, 0.4786286704993665, 0.2369268850561891]
    )

    def __init__(self, rho_radial: Callable, support_radius: float, n_grid: int = 4096):
        self.rho_radial = rho_radial
        self.support_radius = float(support_radius)
        # graded grid, denser near the support edge where rho degenerates
        u = np.linspace(0.0, 1.0, n_grid + 1)
        grid = self.support_radius * (1.0 - (1.0 - u) ** 1.5)
        mids = 0.5 * (grid[1:] + grid[:-1])
        half = 0.5 * (grid[1:] - grid[:-1])
        pts = mids[:, None] + half[:, None] * self._GL_NODES[None, :]
        vals = 2.0 * math.pi * np.asarray(rho_radial(pts.ravel())).reshape(pts.shape) * pts
        increments = half * (vals * self._GL_WEIGHTS[None, :]).sum(axis=1)
        cum = np.concatenate([[0.0], np.cumsum(increments)])
        self._grid = grid
        self._cum = PchipInterpolator(grid, cum, extrapolate=False)
        self.total_mass = float(cum[-1])
        self.ball_radius = math.sqrt(self.total_mass / math.pi)

    def radius_map(self, r: float) -> float:
        target = math.pi * r * r
        if target <= 0.0:
            return 0.0
        if target >= self.total_mass * (1.0 - 1e-14):
            if target > self.total_mass * (1.0 + 1e-6):
                raise QuadratureFailure("radius outside the reference ball")
            return self.support_radius
        return brentq(
            lambda R: float(self._cum(R)) - target,
            0.0,
            self.support_radius,
            xtol=1e-12,
        )

    def radius_map_many(self, r: np.ndarray) -> np.ndarray:
        """Vectorized bracketed bisection of the mass-matching equation."""
        r = np.asarray(r, dtype=float)
        target = math.pi * r * r
        if np.any(target > self.total_mass * (1.0 + 1e-6)):
            raise QuadratureFailure("radius outside the reference ball")
        at_edge = target >= self.total_mass * (1.0 - 1e-14)
        lo = np.zeros_like(target)
        hi = np.full_like(target, self.support_radius)
        for _ in range(64):
            mid = 0.5 * (lo + hi)
            high = self._cum(mid) >= target
            hi = np.where(high, mid, hi)
            lo = np.where(high, lo, mid)
            if float(np.max(hi - lo)) < 1e-12:
                break
        out = 0.5 * (lo + hi)
        out[at_edge] = self.support_radius
        out[target <= 0.0] = 0.0
        return out

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        rr = np.hypot(pts[..., 0], pts[..., 1])
        mapped = self.radius_map_many(rr.ravel()).reshape(rr.shape)
        with np.errstate(invalid="ignore", divide="ignore"):
            scale = np.where(rr > 0.0, mapped / np.where(rr > 0.0, rr, 1.0), 0.0)
        return pts * scale[..., None]

    def sup_gradient(self, n: int = 2048) -> float:
        """Numerical sup of the map's singular values on an interior grid."""
        r = self.ball_radius * (np.arange(n) + 0.5) / n
        R = self.radius_map_many(r)
        rho = np.asarray(self.rho_radial(R), dtype=float)
        tangent = np.max(R / r)
        with np.errstate(divide="ignore"):
            radial = np.where((rho > 0.0) & (R > 0.0), r / (rho * R), np.inf)
        radial = radial[np.isfinite(radial)]
        return float(max(tangent, np.max(radial) if len(radial) else 0.0))


@dataclass
class InitialData:
    """Projected particle initial data on the reference tessellation."""

    positions: np.ndarray
    masses: np.ndarray
    delta_n: float
    descriptor: dict


def build_initial_data(spec: BarenblattSpec, n: int, lloyd_iters: int = 20) -> InitialData:
    """Initial positions/masses for the profile at ``t0`` via radial projection.

    The reference ball carries unit density and matches the total mass of
    ``rho(t0)``; each particle sits at the mean of the radial map over its
    reference cell and carries that cell's exact area as mass.  ``delta_n``
    is the weighted L2 projection error of the map onto piecewise-constant
    fields.
    """
    rho0 = lambda s: barenblatt_radial(spec, spec.t0, s)
    R0 = barenblatt_support_radius(spec, spec.t0)
    mass, mass_err = quad(lambda s: 2.0 * math.pi * float(rho0(np.array([s]))[0]) * s, 0.0, R0, limit=200)
    r_ball = math.sqrt(mass / math.pi)
    pieces_all, areas, _ = ball_lloyd_cells(n, r_ball, (0.0, 0.0), lloyd_iters)
    rmap = RadialMassMap(rho0, R0)

    positions = np.zeros((n, 2))
    delta2 = 0.0
    h_max = 0.0
    for i, pieces in enumerate(pieces_all):
        if not pieces:
            raise QuadratureFailure(f"reference cell {i} is empty")
        area, bary, _ = pieces_moments(pieces, (0.0, 0.0))
        nodes, wts = cell_nodes(pieces, bary)
        quad_area = float(np.sum(wts))
        mapped = rmap(nodes)
        xi = (wts[:, None] * mapped).sum(axis=0) / quad_area
        positions[i] = xi
        dev = mapped - xi[None, :]
        delta2 += float(np.sum(wts * np.sum(dev * dev, axis=1)))
        ends = np.array([p.start for p in pieces] + [p.end for p in pieces])
        d = ends[:, None, :] - ends[None, :, :]
        h_max = max(h_max, math.sqrt(float(np.max(np.sum(d * d, axis=-1)))))
    return InitialData(
        positions=positions,
        masses=areas.copy(),
        delta_n=math.sqrt(max(delta2, 0.0)),
        descriptor={
            "seed_count": n,
            "lloyd_iters": lloyd_iters,
            "ball_radius": r_ball,
            "total_mass": mass,
            "h_max": h_max,
        },
    )


# ---------------------------------------------------------------------------
# error metrics


def flow_error(positions_t, exact_t, masses) -> float:
    """Mass-weighted l2 distance ``sqrt(sum_i m_i |x_i - phi_i|^2)``."""
    positions_t = np.asarray(positions_t, dtype=float)
    exact_t = np.asarray(exact_t, dtype=float)
    masses = np.asarray(masses, dtype=float)
    if positions_t.shape != exact_t.shape or len(masses) != len(positions_t):
        raise LengthMismatch("positions, exact flow, and masses must align")
    d = positions_t - exact_t
    return math.sqrt(float(np.sum(masses * np.sum(d * d, axis=1))))


def relative_internal_energy(
    model: EnergyModel, tess: Tessellation, masses, rho: Callable
) -> float:
    """``sum_i int_{L_i} U(m_i/|L_i| | rho(x)) dx`` by per-cell quadrature.

    ``rho`` must be nonnegative on the cells; where it vanishes the kernel
    uses the continuous extension ``U(r | 0) = U(r)`` (the profile's support
    boundary can cut through rim cells).
    """
    masses = np.asarray(masses, dtype=float)
    total = 0.0
    for cell in tess.cells:
        if cell.area <= 0.0:
            continue
        nodes, wts = cell_nodes(cell.pieces, cell.barycenter)
        rv = np.asarray(rho(nodes), dtype=float)
        if np.any(rv < 0.0):
            raise NonpositiveDensity("reference density negative on a cell")
        d = masses[cell.owner] / cell.area
        ud = float(model.u(d))
        pos = rv > 0.0
        vals = np.empty_like(rv)
        vals[~pos] = ud
        rp = rv[pos]
        vals[pos] = ud - model.u(rp) - model.u_prime(rp) * (d - rp)
        total += float(np.sum(wts * vals))
    return total


@dataclass(frozen=True)
class EquilibriumProfile:
    """Stationary profile of the quadratic-potential flow for ``U(r) = r^2``."""

    total_mass: float
    center: np.ndarray
    support_radius: float
    internal_energy: float

    def density(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        d2 = np.sum((x - self.center) ** 2, axis=-1)
        val = math.sqrt(self.total_mass / (2.0 * math.pi)) - 0.25 * d2
        return np.where(val > 0.0, val, 0.0)


def equilibrium_profile(total_mass: float, center=(0.0, 0.0)) -> EquilibriumProfile:
    """Limit profile ``max(sqrt(M/2pi) - |x-c|^2/4, 0)`` and its internal energy.

    The internal energy ``int rho_inf^2`` equals ``(4 pi / 3) (M / 2 pi)^{3/2}``
    by polar integration.
    """
    if total_mass <= 0.0:
        raise ValueError("total mass must be positive")
    a = total_mass / (2.0 * math.pi)
    return EquilibriumProfile(
        total_mass=total_mass,
        center=np.asarray(center, dtype=float),
        support_radius=2.0 * a**0.25,
        internal_energy=(4.0 * math.pi / 3.0) * a**1.5,
    )


# ---------------------------------------------------------------------------
# convergence study


@dataclass
class StudyRow:
    """One (gamma, N) cell of the convergence table."""

    gamma: float
    n_particles: int
    epsilon: float
    tau: float
    n_steps: int
    delta_phi: float
    delta_n: float
    rate: Optional[float] = None
    rel_entropy_max: Optional[float] = None
    wall_time: float = 0.0

    @property
    def inv_sqrt_n(self) -> float:
        return 1.0 / math.sqrt(self.n_particles)


def paper_epsilon(n: int) -> float:
    return 10.0 / n


def paper_tau(n: int) -> float:
    return 10.0 / (n * n)


def _round_steps(t0: float, t_end: float, tau: float) -> Tuple[int, float]:
    """Integer step count hitting t_end exactly, at (nearly) the given tau."""
    n_steps = max(1, round((t_end - t0) / tau))
    return n_steps, (t_end - t0) / n_steps


def initial_weight_guess(sys: ParticleSystem, densities: np.ndarray) -> np.ndarray:
    """Optimality-condition guess ``w = 2 eps P(rho)`` from target densities."""
    dens = np.maximum(np.asarray(densities, dtype=float), 1e-12)
    return 2.0 * sys.epsilon * np.asarray(pressure(sys.model, dens), dtype=float)


def run_barenblatt_case(
    gamma: float,
    n: int,
    *,
    t0: float = 1.0 / 16.0,
    t_end: float = 1.0,
    C: float = 1.0 / 3.0,
    epsilon: Optional[float] = None,
    tau: Optional[float] = None,
    lloyd_iters: int = 20,
    mode: str = "clipped",
    box_half_width: float = BARENBLATT_BOX_HALF_WIDTH,
    solver_tol: float = 1e-10,
    n_snapshots: int = 0,
    collect_rel_entropy: bool = False,
) -> Tuple[StudyRow, dynamics.TrajectoryRecord]:
    """Run one Barenblatt pipeline cell and report the flow error at t_end."""
    started = time.perf_counter()
    spec = BarenblattSpec(gamma=gamma, C=C, t0=t0)
    eps = paper_epsilon(n) if epsilon is None else epsilon
    tau_req = paper_tau(n) if tau is None else tau
    n_steps, tau_eff = _round_steps(t0, t_end, tau_req)

    data = build_initial_data(spec, n, lloyd_iters)
    domain = Domain.box(-box_half_width, -box_half_width, box_half_width, box_half_width)
    model = power_law(gamma)
    sys = ParticleSystem(
        domain=domain,
        positions=data.positions,
        masses=data.masses,
        epsilon=eps,
        model=model,
        mode=mode,
    )
    warm = initial_weight_guess(sys, barenblatt_density(spec, t0, data.positions))

    if n_snapshots > 0:
        snap_steps = np.unique(np.round(np.linspace(0, n_steps, n_snapshots)).astype(int))
    else:
        snap_steps = np.array([0, n_steps], dtype=int)
    record = dynamics.run_flow(
        sys,
        tau=tau_eff,
        n_steps=n_steps,
        snapshot_steps=snap_steps.tolist(),
        t_start=t0,
        warm_start=warm,
        solver_tol=solver_tol,
    )

    exact = barenblatt_flow(spec, t_end, data.positions)
    dphi = flow_error(record.final_positions, exact, data.masses)

    rel_max = None
    if collect_rel_entropy:
        rel_max = 0.0
        for snap in record.snapshots:
            tess = build_tessellation(domain, snap.positions, snap.weights, mode)
            val = relative_internal_energy(
                model, tess, snap.masses, lambda x, _t=snap.time: barenblatt_density(spec, _t, x)
            )
            rel_max = max(rel_max, val)

    row = StudyRow(
        gamma=gamma,
        n_particles=n,
        epsilon=eps,
        tau=tau_req,
        n_steps=n_steps,
        delta_phi=dphi,
        delta_n=data.delta_n,
        rel_entropy_max=rel_max,
        wall_time=time.perf_counter() - started,
    )
    return row, record


def _study_worker(kwargs: dict) -> StudyRow:
    threads = kwargs.pop("_numba_threads", None)
    if threads is not None:
        import numba

        numba.set_num_threads(max(1, threads))
    row, _ = run_barenblatt_case(**kwargs)
    return row


def attach_rates(rows: List[StudyRow]) -> List[StudyRow]:
    """Fill successive refinement rates within each gamma group (in place)."""
    by_gamma: dict = {}
    for row in rows:
        by_gamma.setdefault(row.gamma, []).append(row)
    for group in by_gamma.values():
        group.sort(key=lambda r: r.n_particles)
        for prev, cur in zip(group, group[1:]):
            ratio = math.log2(prev.delta_phi / cur.delta_phi)
            level = math.log2(math.sqrt(cur.n_particles / prev.n_particles))
            cur.rate = ratio / level
    return rows


def convergence_study(
    gammas: Sequence[float],
    ns: Sequence[int],
    *,
    workers: int = 1,
    collect_rel_entropy: bool = False,
    n_snapshots: int = 0,
    **case_kwargs,
) -> List[StudyRow]:
    """Run the Barenblatt pipeline over a (gamma, N) grid and tabulate rates.

    ``ns`` must be increasing; rates compare successive refinement levels at
    fixed gamma.  Cells are independent and can run in a process pool.
    """
    ns = list(ns)
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise ValueError("particle counts must be increasing")
    jobs = [
        dict(
            gamma=g,
            n=n,
            collect_rel_entropy=collect_rel_entropy,
            n_snapshots=n_snapshots,
            **case_kwargs,
        )
        for g in gammas
        for n in ns
    ]
    if workers > 1:
        for job in jobs:
            job["_numba_threads"] = 1
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_study_worker, jobs))
    else:
        rows = [_study_worker(job) for job in jobs]
    return attach_rates(rows)


def study_table_csv(rows: Sequence[StudyRow]) -> str:
    """Comma-separated rate table: gamma, 1/sqrt(N), error, rate."""
    lines = ["gamma,inv_sqrt_n,delta_phi,rate"]
    for row in rows:
        rate = "" if row.rate is None else f"{row.rate:.6e}"
        lines.append(f"{row.gamma},{row.inv_sqrt_n:.6e},{row.delta_phi:.6e},{rate}")
    return "\n".join(lines) + "\n"
