"""Internal energy family, pressure, convex-conjugate derivatives, and potentials.

The cell cost is ``C_i(a) = U(m_i/a) a`` for a strictly convex internal
energy ``U`` with ``U(0) = 0`` and superlinear growth.  The associated
pressure is ``P(r) = r U'(r) - U(r)``, and the conjugate satisfies
``(C_i*)'(s) = m_i / P^{-1}(-s)`` for ``s < 0``.  The power family
``U(r) = r^gamma / (gamma - 1)`` (so ``P(r) = r^gamma``) is built in;
any other strictly convex ``U`` can be supplied, in which case ``P^{-1}``
falls back to bracketed root-finding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, NegativeDensity

__all__ = [
    "EnergyModel",
    "Potential",
    "power_law",
    "from_config_key",
    "pressure",
    "pressure_prime",
    "pressure_inverse",
    "cell_cost",
    "cstar_value",
    "cstar_prime",
    "cstar_second",
    "relative_entropy_kernel",
    "relative_pressure_kernel",
    "no_potential",
    "quadratic_potential",
]

_PINV_BRACKET_LO = 1e-16


@dataclass(frozen=True)
class EnergyModel:
    """Strictly convex internal energy with ``U(0) = 0``.

    Args:
        u: energy density ``U(r)`` on ``[0, inf)``, vectorized.
        u_prime: ``U'(r)``.
        u_second: ``U''(r)``, strictly positive for ``r > 0``.
        gamma: exponent when this is the power family ``r^gamma/(gamma-1)``;
            ``None`` for user-supplied energies (enables closed forms).
        growth_constants: optional ``(R, alpha, beta)`` with
            ``U(r) - inf U >= beta * r**alpha`` for ``r >= R``.  Recorded,
            not verified, for user-supplied energies.
    """

    u: Callable
    u_prime: Callable
    u_second: Callable
    gamma: Optional[float] = None
    growth_constants: Optional[Tuple[float, float, float]] = None


def power_law(gamma: float) -> EnergyModel:
    """Power-family energy ``U(r) = r^gamma / (gamma - 1)``, ``gamma > 1``."""
    if gamma <= 1.0:
        raise ValueError(f"power family needs gamma > 1, got {gamma}")
    g = float(gamma)
    c = 1.0 / (g - 1.0)
    return EnergyModel(
        u=lambda r: c * np.power(r, g),
        u_prime=lambda r: g * c * np.power(r, g - 1.0),
        u_second=lambda r: g * np.power(r, g - 2.0),
        gamma=g,
        growth_constants=(1.0, g, c),
    )


def from_config_key(family: str, gamma: Optional[float] = None) -> EnergyModel:
    """Build a model from the configuration keys ``family`` / ``gamma``."""
    if family == "power":
        if gamma is None:
            raise ValueError("power family requires gamma")
        return power_law(gamma)
    raise ValueError(f"unknown energy family {family!r}")


def pressure(model: EnergyModel, r):
    """Pressure ``P(r) = r U'(r) - U(r)`` for ``r > 0``, ``P(0) = 0``."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0.0):
        raise NegativeDensity("pressure needs r >= 0")
    pos = r > 0.0
    out = np.zeros_like(r)
    rp = np.where(pos, r, 1.0)
    out = np.where(pos, rp * model.u_prime(rp) - model.u(rp), 0.0)
    return out if out.ndim else float(out)


def pressure_prime(model: EnergyModel, r):
    """``P'(r) = r U''(r)`` for ``r > 0``."""
    r = np.asarray(r, dtype=float)
    out = r * model.u_second(r)
    return out if out.ndim else float(out)


def _pinv_scalar(model: EnergyModel, y: float) -> float:
    if y == 0.0:
        return 0.0
    lo, hi = _PINV_BRACKET_LO, max(10.0, y) ** 2
    while pressure(model, hi) < y:
        hi *= 4.0
    while pressure(model, lo) > y:
        lo *= 0.25
    return brentq(lambda r: pressure(model, r) - y, lo, hi, rtol=1e-12)


def _pinv_arr(model: EnergyModel, y: np.ndarray) -> np.ndarray:
    if np.any(y < 0.0):
        raise NegativeDensity("pressure_inverse needs y >= 0")
    if model.gamma is not None:
        return np.power(y, 1.0 / model.gamma)
    flat = np.array([_pinv_scalar(model, v) for v in np.atleast_1d(y).ravel()])
    return flat.reshape(np.shape(y))


def pressure_inverse(model: EnergyModel, y):
    """Inverse pressure ``P^{-1}(y)`` for ``y >= 0``.

    Closed form ``y**(1/gamma)`` for the power family, bracketed
    root-finding to 1e-12 relative otherwise.
    """
    out = _pinv_arr(model, np.asarray(y, dtype=float))
    return out if out.ndim else float(out)


def cell_cost(model: EnergyModel, mass: float, area):
    """Cell cost ``U(mass/area) * area`` for ``area > 0``, ``+inf`` otherwise."""
    area = np.asarray(area, dtype=float)
    pos = area > 0.0
    a = np.where(pos, area, 1.0)
    out = np.where(pos, model.u(mass / a) * a, np.inf)
    return out if out.ndim else float(out)


def cstar_value(model: EnergyModel, mass: float, s):
    """Convex conjugate ``C*(s) = sup_a [s a - C(a)]`` for ``s <= 0``.

    For ``s < 0`` the supremum is attained at ``a = mass / P^{-1}(-s)``;
    at ``s = 0`` it equals ``-mass * U'(0)``.
    """
    s = np.asarray(s, dtype=float)
    if np.any(s > 0.0):
        raise DomainError("cstar_value needs s <= 0")
    neg = s < 0.0
    sn = np.where(neg, s, -1.0)
    r = _pinv_arr(model, -sn)
    a = mass / r
    out = np.where(neg, sn * a - model.u(r) * a, -mass * model.u_prime(0.0))
    return out if out.ndim else float(out)


def cstar_prime(model: EnergyModel, mass: float, s):
    """``(C*)'(s) = mass / P^{-1}(-s)`` for ``s < 0`` (optimal cell area)."""
    s = np.asarray(s, dtype=float)
    if np.any(s >= 0.0):
        raise DomainError("cstar_prime needs s < 0; (C*)'(0) = +inf")
    out = mass / _pinv_arr(model, -s)
    return out if out.ndim else float(out)


def cstar_second(model: EnergyModel, mass: float, s):
    """``(C*)''(s) = mass (P^{-1})'(-s) / P^{-1}(-s)^2``, strictly positive."""
    s = np.asarray(s, dtype=float)
    if np.any(s >= 0.0):
        raise DomainError("cstar_second needs s < 0")
    r = _pinv_arr(model, -s)
    out = mass / (pressure_prime(model, r) * r * r)
    return out if out.ndim else float(out)


def relative_entropy_kernel(model: EnergyModel, r, s):
    """Bregman divergence ``U(r|s) = U(r) - U(s) - U'(s)(r - s)`` for ``s > 0``."""
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0.0):
        raise DomainError("relative_entropy_kernel needs s > 0")
    if np.any(r < 0.0):
        raise NegativeDensity("relative_entropy_kernel needs r >= 0")
    out = model.u(r) - model.u(s) - model.u_prime(s) * (r - s)
    return out if out.ndim else float(out)


def relative_pressure_kernel(model: EnergyModel, r, s):
    """``P(r|s) = P(r) - P(s) - P'(s)(r - s)`` for ``s > 0``."""
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0.0):
        raise DomainError("relative_pressure_kernel needs s > 0")
    out = pressure(model, r) - pressure(model, s) - pressure_prime(model, s) * (r - s)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class Potential:
    """External potential acting on particle positions.

    ``kind`` is ``"none"`` or ``"quadratic"``; the quadratic kind is
    ``V(x) = |x - center|^2 / 2`` with exact gradient ``x - center``.
    """

    kind: str
    center: Optional[np.ndarray] = None

    def value(self, x: np.ndarray):
        if self.kind == "none":
            return np.zeros(np.shape(x)[:-1])
        d = x - self.center
        return 0.5 * np.sum(d * d, axis=-1)

    def gradient(self, x: np.ndarray):
        if self.kind == "none":
            return np.zeros_like(x)
        return x - self.center


def no_potential() -> Potential:
    return Potential(kind="none")


def quadratic_potential(center) -> Potential:
    return Potential(kind="quadratic", center=np.asarray(center, dtype=float))
