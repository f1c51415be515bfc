"""Concave dual of the cell-energy minimization and its damped Newton solver.

For weights ``w`` the dual functional is

    D(w) = sum_i  int_{L_i*(X,w)} (|x-x_i|^2 - w_i) / (2 eps) dx
                  - C_i*(-w_i / (2 eps)),

concave with a unique interior maximizer ``w* > 0`` characterized by
``P(m_i / |L_i*|) = w_i / (2 eps)``.  Newton linearizes the gradient using
the cell-area Jacobian; steps are damped so that no cell collapses and the
residual decreases.  Solving the dual also evaluates the primal energy (the
two agree at the optimum by strong duality).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .energy import EnergyModel, cstar_prime, cstar_second, cstar_value, pressure
from .errors import ConjugateDomain, NewtonFailure, StaleState
from .geometry import Domain, Tessellation, area_jacobian, build_tessellation

logger = logging.getLogger(__name__)

__all__ = ["ParticleSystem", "SolverState", "dual_value", "dual_gradient", "solve_weights", "primal_energy"]

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 100
_MAX_BACKTRACK = 40
_DENSE_CUTOFF = 260


@dataclass
class ParticleSystem:
    """Particles with masses inside a domain, plus the energy model.

    ``mode`` selects whether cells must cover the domain (``"full"``) or are
    additionally clipped to the balls ``B(x_i, sqrt(w_i))`` (``"clipped"``).
    """

    domain: Domain
    positions: np.ndarray
    masses: np.ndarray
    epsilon: float
    model: EnergyModel
    mode: str = "full"

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=float)
        self.masses = np.ascontiguousarray(
            np.broadcast_to(np.asarray(self.masses, dtype=float), (len(self.positions),))
        )
        if self.positions.ndim != 2 or self.positions.shape[1] != 2:
            raise ValueError("positions must have shape (N, 2)")
        if np.any(self.masses <= 0.0):
            raise ValueError("masses must be strictly positive")
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if self.mode not in ("full", "clipped"):
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def n(self) -> int:
        return len(self.positions)

    def with_positions(self, positions: np.ndarray) -> "ParticleSystem":
        return ParticleSystem(
            domain=self.domain,
            positions=positions,
            masses=self.masses,
            epsilon=self.epsilon,
            model=self.model,
            mode=self.mode,
        )


@dataclass
class SolverState:
    """Converged weights with the matching tessellation and diagnostics."""

    weights: np.ndarray
    tessellation: Tessellation
    residual: float
    iterations: int

    def matches(self, sys: ParticleSystem) -> bool:
        t = self.tessellation
        return (
            t.mode == sys.mode
            and t.positions.shape == sys.positions.shape
            and np.array_equal(t.positions, sys.positions)
        )


def _build(sys: ParticleSystem, w: np.ndarray) -> Tessellation:
    return build_tessellation(sys.domain, sys.positions, w, sys.mode)


def _geometric_term(tess: Tessellation, w: np.ndarray, epsilon: float) -> float:
    return float(np.sum(tess.second_moments - w * tess.areas)) / (2.0 * epsilon)


def dual_value(sys: ParticleSystem, w) -> float:
    """Evaluate ``D(w)``; returns ``-inf`` outside the conjugate domain."""
    w = np.asarray(w, dtype=float)
    if np.any(w < 0.0):
        return -np.inf
    tess = _build(sys, w)
    conj = cstar_value(sys.model, sys.masses, -w / (2.0 * sys.epsilon))
    return _geometric_term(tess, w, sys.epsilon) - float(np.sum(conj))


def _gradient_from_tess(sys: ParticleSystem, w: np.ndarray, tess: Tessellation) -> np.ndarray:
    conj = cstar_prime(sys.model, sys.masses, -w / (2.0 * sys.epsilon))
    return (conj - tess.areas) / (2.0 * sys.epsilon)


def dual_gradient(sys: ParticleSystem, w) -> np.ndarray:
    """Gradient ``dD/dw_i = [(C_i*)'(-w_i/2eps) - |L_i*|] / (2 eps)``."""
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0.0):
        raise ConjugateDomain("dual gradient needs w > 0 ((C*)'(0) = +inf)")
    return _gradient_from_tess(sys, w, _build(sys, w))


def _scaled_residual(sys: ParticleSystem, w: np.ndarray, tess: Tessellation) -> float:
    """Max-norm mismatch of the optimality conditions P(m/|L|) = w/2eps."""
    target = w / (2.0 * sys.epsilon)
    nonempty = tess.areas > 0.0
    if not np.all(nonempty):
        return np.inf
    p = pressure(sys.model, sys.masses / tess.areas)
    return float(np.max(np.abs(p - target)))


def _dual_hessian(sys: ParticleSystem, w: np.ndarray, tess: Tessellation) -> sps.csr_matrix:
    eps = sys.epsilon
    conj2 = cstar_second(sys.model, sys.masses, -w / (2.0 * eps))
    areas_jac = area_jacobian(tess)
    return (-sps.diags(conj2 / (4.0 * eps * eps)) - areas_jac / (2.0 * eps)).tocsr()


def _solve_newton_system(hess: sps.csr_matrix, grad: np.ndarray) -> np.ndarray:
    """Solve ``hess @ dw = -grad`` with ``-hess`` symmetric positive definite."""
    a = -hess
    n = a.shape[0]
    if n <= _DENSE_CUTOFF:
        return sla.solve(a.toarray(), grad, assume_a="pos")
    return spla.spsolve(a.tocsc(), grad)


def _min_positive(areas: np.ndarray) -> float:
    pos = areas[areas > 0.0]
    return float(np.min(pos)) if len(pos) else 0.0


def default_weight_guess(sys: ParticleSystem) -> np.ndarray:
    """Uniform-area initialization ``w_i = 2 eps P(m_i N / |domain|)``."""
    dens = sys.masses * sys.n / sys.domain.area
    return 2.0 * sys.epsilon * np.asarray(pressure(sys.model, dens), dtype=float)


def solve_weights(
    sys: ParticleSystem,
    warm_start=None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    verbose: bool = False,
) -> SolverState:
    """Find the unique dual maximizer by damped Newton.

    Args:
        sys: particle system.
        warm_start: optional strictly positive weight vector to start from.
        tol: tolerance on the scaled optimality residual
            ``max_i |P(m_i/|L_i|) - w_i/2eps| <= tol * (1 + |w|_inf / 2eps)``.
        max_iter: Newton iteration budget.
        verbose: emit one structured log record per iteration.

    Raises:
        NewtonFailure: iteration budget exhausted, the line search stalled,
            or a clipped cell remained empty at convergence.
    """
    if warm_start is not None:
        w = np.array(warm_start, dtype=float)
        if w.shape != (sys.n,) or np.any(w <= 0.0):
            raise ValueError("warm_start must be a strictly positive length-N vector")
    else:
        w = default_weight_guess(sys)

    tess = _build(sys, w)
    grad = _gradient_from_tess(sys, w, tess)
    best_resid = np.inf
    for it in range(max_iter + 1):
        scaled_tol = tol * (1.0 + np.max(np.abs(w)) / (2.0 * sys.epsilon))
        resid = _scaled_residual(sys, w, tess)
        best_resid = min(best_resid, resid)
        if verbose:
            logger.info(
                "newton iteration=%d residual=%.3e grad_norm=%.3e empty=%d",
                it,
                resid,
                float(np.max(np.abs(grad))),
                int(np.sum(tess.areas == 0.0)),
                extra={
                    "newton_iteration": it,
                    "residual": resid,
                    "grad_norm": float(np.max(np.abs(grad))),
                },
            )
        if resid <= scaled_tol:
            return SolverState(weights=w, tessellation=tess, residual=resid, iterations=it)
        if it == max_iter:
            break

        hess = _dual_hessian(sys, w, tess)
        step = _solve_newton_system(hess, grad)
        gnorm = float(np.max(np.abs(grad)))
        min_pos = _min_positive(tess.areas)
        was_positive = tess.areas > 0.0
        dual_cur = _geometric_term(tess, w, sys.epsilon) - float(
            np.sum(cstar_value(sys.model, sys.masses, -w / (2.0 * sys.epsilon)))
        )

        t = 1.0
        accepted = False
        for _ in range(_MAX_BACKTRACK):
            w_try = w + t * step
            if np.all(w_try > 0.0):
                tess_try = _build(sys, w_try)
                grad_try = _gradient_from_tess(sys, w_try, tess_try)
                areas_ok = not np.any(
                    was_positive & (tess_try.areas < 0.5 * min_pos)
                )
                dual_try = _geometric_term(tess_try, w_try, sys.epsilon) - float(
                    np.sum(cstar_value(sys.model, sys.masses, -w_try / (2.0 * sys.epsilon)))
                )
                dual_ok = dual_try >= dual_cur - 1e-12 * (1.0 + abs(dual_cur))
                if areas_ok and dual_ok and float(np.max(np.abs(grad_try))) < gnorm:
                    w, tess, grad = w_try, tess_try, grad_try
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            raise NewtonFailure(
                f"line search stalled at iteration {it} (residual {resid:.3e})",
                residual=resid,
                iterations=it,
            )

    raise NewtonFailure(
        f"no convergence in {max_iter} iterations (best residual {best_resid:.3e})",
        residual=best_resid,
        iterations=max_iter,
    )


def primal_energy(sys: ParticleSystem, state: SolverState | None = None):
    """Energy ``sum_i int_{L_i} |x-x_i|^2/(2 eps) + C_i(|L_i|)`` at the optimum.

    Returns ``(value, state)``; solves for the weights when no converged
    state is supplied.  Equals the dual value at the maximizer (strong
    duality) up to solver tolerance.
    """
    if state is None:
        state = solve_weights(sys)
    elif not state.matches(sys):
        raise StaleState("solver state does not match the system positions/mode")
    tess = state.tessellation
    value = float(
        np.sum(tess.second_moments) / (2.0 * sys.epsilon)
        + np.sum(cell_cost_vec(sys.model, sys.masses, tess.areas))
    )
    return value, state


def cell_cost_vec(model: EnergyModel, masses: np.ndarray, areas: np.ndarray) -> np.ndarray:
    """Vectorized ``C_i(a_i)`` over cells (``+inf`` on empty cells)."""
    out = np.empty_like(areas)
    pos = areas > 0.0
    out[~pos] = np.inf
    out[pos] = model.u(masses[pos] / areas[pos]) * areas[pos]
    return out
