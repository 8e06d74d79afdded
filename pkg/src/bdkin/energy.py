"""Availability functionals and dissipation diagnostics.

All functionals use ``0 ln 0 = 0``.  The shifted availability subtracts
``rho ln R`` from the availability and is evaluated directly from the
rescaled weights, which keeps both terms of moderate size for long ladders.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import xlogy

from .errors import InvalidParameterError
from .kinetics import EnergyLadder, KineticCoefficients, StandardModelParams, _modified_coefficients
from .state import as_values

__all__ = [
    "PRODUCTION_SENTINEL",
    "AvailabilityReport",
    "availability",
    "availability_shifted",
    "generic_availability",
    "availability_production",
    "dissipation_lower_bound",
    "availability_report",
    "jensen_lower_bound",
    "standard_lyapunov",
]

logger = logging.getLogger(__name__)

# Stand-in for -inf when a reaction has one side empty and the other not.
PRODUCTION_SENTINEL = -1.0e300


@dataclass(frozen=True)
class AvailabilityReport:
    A: float
    A_tilde: float
    production: float
    dissipation_lb: float
    boundary_flag: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _weighted_entropy(v: np.ndarray, log_p: np.ndarray) -> float:
    N = float(np.sum(v))
    return float(np.sum(xlogy(v, v)) - np.dot(v, log_p) - xlogy(N, N))


def availability(z, ladder: EnergyLadder) -> float:
    """``A(z) = sum z_l ln z_l - sum z_l ln q_l - N ln N``."""
    v = as_values(z)
    return _weighted_entropy(v, ladder.log_q(np.arange(1, v.size + 1)))


def availability_shifted(z, ladder: EnergyLadder) -> float:
    """``A(z) - rho(z) ln R``, evaluated as ``sum z_l ln(z_l / (q~_l N))``."""
    v = as_values(z)
    return _weighted_entropy(v, ladder.log_qtilde(np.arange(1, v.size + 1)))


def generic_availability(z, p=None, *, log_p=None) -> float:
    """``sum z_l ln(z_l / (p_l N))`` for a positive weight sequence ``p``.

    Either ``p`` or its logarithm ``log_p`` may be given; only the first
    ``m`` entries are used.
    """
    v = as_values(z)
    if log_p is None:
        p = np.asarray(p, dtype=float)[: v.size]
        if p.size < v.size or np.any(~(p > 0)):
            raise InvalidParameterError("weights must be positive for every l <= m")
        log_p = np.log(p)
    else:
        log_p = np.asarray(log_p, dtype=float)[: v.size]
        if log_p.size < v.size or not np.all(np.isfinite(log_p)):
            raise InvalidParameterError("log-weights must be finite for every l <= m")
    return _weighted_entropy(v, log_p)


def _production_terms(v: np.ndarray, ladder: EnergyLadder, kin: KineticCoefficients):
    g, r = _modified_coefficients(ladder, kin, v.size)
    N = float(np.sum(v))
    c = v[0] * v[:-1]
    w = N * r * v[1:]
    return g, c, w


def _production(v, ladder, kin):
    g, c, w = _production_terms(v, ladder, kin)
    both = (c > 0) & (w > 0)
    one = (c > 0) ^ (w > 0)
    terms = np.zeros_like(c)
    terms[both] = g[both] * (c[both] - w[both]) * (np.log(w[both]) - np.log(c[both]))
    if np.any(one):
        return PRODUCTION_SENTINEL, True
    return float(np.sum(terms)), False


def availability_production(z, ladder: EnergyLadder, kin: KineticCoefficients) -> float:
    """Rate of change of ``A`` along the modified dynamics; never positive.

    A reaction with exactly one empty side contributes ``-inf``; the sum is
    then reported as :data:`PRODUCTION_SENTINEL`.
    """
    return _production(as_values(z), ladder, kin)[0]


def production_summands(z, ladder: EnergyLadder, kin: KineticCoefficients) -> np.ndarray:
    """Per-reaction terms of the production, ``-inf`` on boundary reactions."""
    v = as_values(z)
    g, c, w = _production_terms(v, ladder, kin)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = g * (c - w) * (np.log(w) - np.log(c))
    terms[(c == 0) & (w == 0)] = 0.0
    return terms


def dissipation_summands(z, ladder: EnergyLadder, kin: KineticCoefficients) -> np.ndarray:
    v = as_values(z)
    g, c, w = _production_terms(v, ladder, kin)
    top = np.maximum(c, w)
    out = np.zeros_like(c)
    pos = top > 0
    out[pos] = g[pos] * (c[pos] - w[pos]) ** 2 / top[pos]
    return out


def dissipation_lower_bound(z, ladder: EnergyLadder, kin: KineticCoefficients) -> float:
    """``sum G_l (c_l - w_l)^2 / max(c_l, w_l)``, a lower bound on ``-dA/dt``."""
    return float(np.sum(dissipation_summands(z, ladder, kin)))


def availability_report(z, ladder: EnergyLadder, kin: KineticCoefficients) -> AvailabilityReport:
    v = as_values(z)
    prod, flag = _production(v, ladder, kin)
    return AvailabilityReport(
        A=availability(v, ladder),
        A_tilde=availability_shifted(v, ladder),
        production=prod,
        dissipation_lb=dissipation_lower_bound(v, ladder, kin),
        boundary_flag=flag,
    )


def jensen_lower_bound(z, ladder: EnergyLadder, mu: float) -> float:
    """``rho ln mu - N ln f~(mu)``, a lower bound for the shifted availability.

    ``mu = 1`` is accepted and is useful exactly when ``f~(1)`` is finite.

    Raises
    ------
    DivergenceError
        If the series for ``f~`` diverges at ``mu``.
    """
    from .equilibrium import f_tilde

    v = as_values(z)
    rho = float(np.dot(np.arange(1, v.size + 1), v))
    N = float(np.sum(v))
    if rho == 0.0:
        return 0.0
    if not 0.0 < mu <= 1.0:
        raise InvalidParameterError(f"mu must lie in (0, 1], got {mu!r}")
    f = f_tilde(ladder, mu).require_finite()
    return float(rho * np.log(mu) - N * np.log(f))


def standard_lyapunov(z, sm: StandardModelParams) -> float:
    """``L(z) = sum z_l (ln(z_l / Q_l) - 1)`` for the standard model."""
    v = as_values(z)
    log_Q = sm.log_Q(v.size)
    return float(np.sum(xlogy(v, v)) - np.dot(v, log_Q) - np.sum(v))
