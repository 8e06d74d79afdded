"""Equilibria of the modified model and the associated power series.

The rescaled weights ``q~_l = q_l R^l`` define

    f~(mu) = sum_l q~_l mu^l,     g~(mu) = sum_l l q~_l mu^l,

both with radius of convergence 1.  An equilibrium of mass ``rho`` exists
iff ``f~(1) > 1``, or ``f~(1) = 1`` with ``g~(1)`` finite.  It is then
``z_l = N q~_l mu^l`` where ``f~(mu) = 1`` and ``N = rho / g~(mu)``.

Series are summed with a certified bound on the neglected tail.  Ladders
whose rescaled weights are eventually constant get the tail in closed
form; the stretched-exponential ``example1`` weights are bounded by an
incomplete-gamma integral or a geometric majorant, whichever is smaller.
Roots of ``f~ = 1`` are found in ``t = -ln mu`` so that solutions with
``mu`` within rounding of 1 are still resolved.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import gammaincc

from .errors import (
    DivergenceError,
    InvalidParameterError,
    MisuseError,
    NoEquilibriumError,
    NumericError,
    RangeError,
    SupersaturationError,
)
from .kinetics import EnergyLadder, StandardModelParams
from .state import ClusterState

__all__ = [
    "SeriesValue",
    "EqClassification",
    "EquilibriumSolution",
    "OptimumResult",
    "MinimizingTerm",
    "StandardEquilibrium",
    "f_tilde",
    "g_tilde",
    "classify",
    "solve_equilibrium",
    "borderline_equilibrium",
    "optimum_value",
    "minimizing_sequence",
    "approximation_gap",
    "standard_equilibrium",
]

logger = logging.getLogger(__name__)

EPS = float(np.finfo(float).eps)
DEFAULT_HORIZON = 1 << 22
SERIES_TOL = 1e-15
ROOT_TOL = 1e-12


@dataclass(frozen=True)
class SeriesValue:
    """A series value known to lie in ``[value - error_bound, value + error_bound]``.

    ``partial_sum`` holds the explicitly summed terms and ``horizon`` the
    index of the last of them.  A diverged series has ``value = inf``.
    """

    value: float
    status: str
    error_bound: float
    partial_sum: float
    horizon: int

    @property
    def lower(self) -> float:
        if self.status == "diverged":
            return self.partial_sum
        return max(self.partial_sum, self.value - self.error_bound)

    @property
    def upper(self) -> float:
        if self.status == "diverged":
            return math.inf
        return self.value + self.error_bound

    def require_finite(self) -> float:
        if self.status == "converged":
            return self.value
        if self.status == "diverged":
            raise DivergenceError("series diverges")
        raise NumericError(
            f"series tail not certified within horizon {self.horizon} "
            f"(partial sum {self.partial_sum!r}, tail bound {2 * self.error_bound!r})"
        )

    def to_dict(self) -> dict:
        return {
            "value": _json_float(self.value),
            "status": self.status,
            "error_bound": _json_float(self.error_bound),
            "partial_sum": self.partial_sum,
            "horizon": self.horizon,
        }


def _json_float(x: float):
    return x if math.isfinite(x) else None


def _geometric_moment(K: int, log_x: float, power: int) -> float:
    """``sum_{l >= K} l**power x**l / x**K`` for ``0 < x < 1``."""
    one_minus_x = -math.expm1(log_x)
    if power == 0:
        return 1.0 / one_minus_x
    return (1.0 + (K - 1) * one_minus_x) / one_minus_x ** 2


def _stretched_tail(gamma: float, L: int, log_mu: float, power: int) -> float:
    """Bound on ``sum_{l > L} l**power exp(-gamma l**(2/3)) mu**l`` for ``L >= 1``."""
    bounds = []
    if log_mu < 0.0:
        head = -gamma * (L + 1) ** (2.0 / 3.0) + (L + 1) * log_mu
        bounds.append(math.exp(head) * _geometric_moment(L + 1, log_mu, power))
    # the summand is decreasing on [L, inf) once L**(2/3) >= 1.5 * power / gamma
    if L ** (2.0 / 3.0) >= 1.5 * power / gamma:
        a = 1.5 * (power + 1)
        x = gamma * L ** (2.0 / 3.0)
        bounds.append(1.5 * gamma ** (-a) * gamma_fn(a) * gammaincc(a, x))
    return min(bounds) if bounds else math.inf


def _series(ladder: EnergyLadder, log_mu: float, power: int, tol: float,
            horizon: int, start: int = 1) -> SeriesValue:
    """``sum_{l >= start} l**power q~_l mu**l`` with ``mu = exp(log_mu)``."""
    if log_mu == -math.inf:
        return SeriesValue(0.0, "converged", 0.0, 0.0, start - 1)
    ct = ladder.constant_tail()
    if ct is not None:
        K, log_c = ct
        K = max(K, start)
        l = np.arange(start, K)
        partial = float(np.sum(l ** power * np.exp(ladder.log_qtilde(l) + l * log_mu))) if l.size else 0.0
        if log_mu >= 0.0:
            return SeriesValue(math.inf, "diverged", math.inf, partial, K - 1)
        tail = math.exp(log_c + K * log_mu) * _geometric_moment(K, log_mu, power)
        value = partial + tail
        return SeriesValue(value, "converged", 16 * EPS * value, partial, K - 1)
    if ladder.kind != "example1":
        raise InvalidParameterError(f"no tail bound available for ladder kind {ladder.kind!r}")

    chunk_sums = []
    n = start
    chunk = 1024
    tail = math.inf
    while n <= horizon:
        end = min(n + chunk, horizon + 1)
        l = np.arange(n, end)
        chunk_sums.append(float(np.sum(l ** power * np.exp(ladder.log_qtilde(l) + l * log_mu))))
        n = end
        tail = _stretched_tail(ladder.gamma, max(n - 1, 1), log_mu, power)
        if tail <= tol * math.fsum(chunk_sums):
            break
        chunk *= 2
    partial = math.fsum(chunk_sums)
    tail = float(tail)
    value = partial + 0.5 * tail
    err = 0.5 * tail + 16 * EPS * value
    status = "converged" if tail <= tol * partial else "inconclusive"
    return SeriesValue(value, status, err, partial, n - 1)


def _log_mu(mu: float) -> float:
    if not 0.0 <= mu <= 1.0:
        raise RangeError(f"mu={mu!r} outside [0, 1]")
    return math.log(mu) if mu > 0 else -math.inf


def f_tilde(ladder: EnergyLadder, mu: float, tol: float = SERIES_TOL,
            horizon: int = DEFAULT_HORIZON) -> SeriesValue:
    """``sum q~_l mu^l`` on ``[0, 1]``."""
    return _series(ladder, _log_mu(mu), 0, tol, horizon)


def g_tilde(ladder: EnergyLadder, mu: float, tol: float = SERIES_TOL,
            horizon: int = DEFAULT_HORIZON) -> SeriesValue:
    """``sum l q~_l mu^l`` on ``[0, 1]``."""
    return _series(ladder, _log_mu(mu), 1, tol, horizon)


@dataclass(frozen=True)
class EqClassification:
    verdict: str
    branch: str
    f_at_1: SeriesValue
    g_at_1: SeriesValue

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "branch": self.branch,
                "f_at_1": self.f_at_1.to_dict(), "g_at_1": self.g_at_1.to_dict()}


def classify(ladder: EnergyLadder, tol: float = 1e-10,
             horizon: int = DEFAULT_HORIZON) -> EqClassification:
    """Decide whether ``ladder`` admits equilibria of positive mass.

    The verdict is certified from enclosures of ``f~(1)``; when ``1`` lies
    within ``tol`` of the enclosure no branch is claimed.
    """
    F = _series(ladder, 0.0, 0, SERIES_TOL, horizon)
    G = _series(ladder, 0.0, 1, SERIES_TOL, horizon)
    if F.status == "diverged" or F.lower > 1.0 + tol:
        return EqClassification("EQ", "f_at_1_gt_1", F, G)
    if F.upper < 1.0 - tol:
        return EqClassification("NEQ", "f_lt_1", F, G)
    return EqClassification("inconclusive", "undecided", F, G)


def _solve_decreasing(F: Callable[[float], float], t_min: float, ftol: float = ROOT_TOL,
                      max_iter: int = 500) -> tuple[float, float]:
    """Root of a decreasing ``F`` on ``(t_min, inf)`` with ``F(t_min+) > 0``.

    Geometric bisection narrows the bracket to a factor of two, then
    Illinois-modified secant steps refine it.  Returns ``(t, |F(t)|)``.
    """
    a = t_min
    Fa = F(a) if a > 0 else math.inf
    if a <= 0 or not Fa > 0:
        a = 1e-3 if a <= 0 else a
        Fa = F(a)
        while not Fa > 0:
            a *= 1e-3
            if a < 1e-300:
                raise NumericError("could not bracket the root from below")
            Fa = F(a)
    if Fa == 0:
        return a, 0.0
    b = max(2.0 * a, 1.0)
    Fb = F(b)
    while Fb > 0:
        b *= 2.0
        if b > 1e6:
            raise NumericError("could not bracket the root from above")
        Fb = F(b)
    if Fb == 0:
        return b, 0.0

    side = 0
    for _ in range(max_iter):
        if b > 2.0 * a or not math.isfinite(Fa):
            c = math.sqrt(a * b)
        else:
            c = b - Fb * (b - a) / (Fb - Fa)
            if not a < c < b:
                c = 0.5 * (a + b)
        Fc = F(c)
        if abs(Fc) <= ftol:
            return c, abs(Fc)
        if Fc > 0:
            a, Fa = c, Fc
            if side == 1 and math.isfinite(Fb):
                Fb *= 0.5
            side = 1
        else:
            b, Fb = c, Fc
            if side == -1 and math.isfinite(Fa):
                Fa *= 0.5
            side = -1
        if b - a <= 4 * EPS * b:
            break
    t = a if abs(F(a)) < abs(F(b)) else b
    return t, abs(F(t))


def _check_residual(residual: float, ftol: float):
    if residual > ftol:
        if residual > 1e3 * ftol:
            raise NumericError(f"root residual {residual!r} exceeds {ftol!r}")
        logger.warning("root residual %.3g above tolerance %.3g (rounding limited)", residual, ftol)


@dataclass(frozen=True)
class EquilibriumSolution:
    """Equilibrium ``z_l = N q~_l mu^l`` of mass ``rho_bar``.

    Entries are generated on demand; tail sums of count and mass past any
    truncation come from the series routines, so ``rho_bar`` is exact.
    """

    ladder: EnergyLadder
    rho_bar: float
    log_mu_bar: float
    N_bar: float
    a_tilde_value: float
    f_residual: float
    classification: EqClassification | None = field(default=None, compare=False)

    @property
    def mu_bar(self) -> float:
        return math.exp(self.log_mu_bar)

    @property
    def lambda_bar(self) -> float:
        """Free-atom fraction ``z_1 / N = q~_1 mu``."""
        return float(np.exp(self.ladder.log_qtilde(1) + self.log_mu_bar))

    def z(self, l) -> np.ndarray:
        l = np.asarray(l)
        return self.N_bar * np.exp(self.ladder.log_qtilde(l) + l * self.log_mu_bar)

    def state(self, m: int) -> ClusterState:
        return ClusterState(self.z(np.arange(1, m + 1)))

    def profile(self) -> Iterator[float]:
        l = 1
        while True:
            yield float(self.z(l))
            l += 1

    def tail_count(self, m: int) -> float:
        """``sum_{l > m} z_l``."""
        return self.N_bar * _series(self.ladder, self.log_mu_bar, 0, SERIES_TOL,
                                    DEFAULT_HORIZON, start=m + 1).require_finite()

    def tail_mass(self, m: int) -> float:
        """``sum_{l > m} l z_l``."""
        return self.N_bar * _series(self.ladder, self.log_mu_bar, 1, SERIES_TOL,
                                    DEFAULT_HORIZON, start=m + 1).require_finite()

    def to_dict(self) -> dict:
        out = {
            "verdict": "EQ",
            "mu_bar": self.mu_bar,
            "log_mu_bar": self.log_mu_bar,
            "N_bar": self.N_bar,
            "rho_bar": self.rho_bar,
            "A_tilde": self.a_tilde_value,
            "lambda_bar": self.lambda_bar,
            "f_residual": self.f_residual,
        }
        if self.classification is not None:
            out["classification"] = self.classification.to_dict()
        return out


def solve_equilibrium(ladder: EnergyLadder, rho_bar: float, tol: float = ROOT_TOL,
                      horizon: int = DEFAULT_HORIZON) -> EquilibriumSolution:
    """Equilibrium of mass ``rho_bar``.

    Raises
    ------
    NoEquilibriumError
        If the ladder is certified to have no equilibrium.
    NumericError
        If the classification is inconclusive or the root cannot be bracketed.
    """
    if not rho_bar > 0:
        raise InvalidParameterError(f"rho_bar must be positive, got {rho_bar!r}")
    cls = classify(ladder, horizon=horizon)
    if cls.verdict == "NEQ":
        raise NoEquilibriumError("ladder has no equilibrium (f~(1) < 1)")
    if cls.verdict != "EQ":
        raise NumericError("cannot certify that f~(1) > 1; see borderline_equilibrium")

    def F(t):
        return _series(ladder, -t, 0, SERIES_TOL, horizon).value - 1.0

    t, residual = _solve_decreasing(F, max(0.0, ladder.log_R), tol)
    _check_residual(residual, tol)
    G = _series(ladder, -t, 1, SERIES_TOL, horizon).require_finite()
    return EquilibriumSolution(ladder, float(rho_bar), -t, rho_bar / G, -rho_bar * t,
                               residual, cls)


def borderline_equilibrium(ladder: EnergyLadder, rho_bar: float,
                           horizon: int = DEFAULT_HORIZON) -> EquilibriumSolution:
    """The ``mu = 1`` member of the equilibrium family, for ``f~(1) = 1``.

    The caller is responsible for ``f~(1) = 1``; only finiteness of
    ``g~(1)`` is checked.  Its shifted availability is 0.
    """
    G = _series(ladder, 0.0, 1, SERIES_TOL, horizon).require_finite()
    F = _series(ladder, 0.0, 0, SERIES_TOL, horizon)
    return EquilibriumSolution(ladder, float(rho_bar), 0.0, rho_bar / G, 0.0,
                               abs(F.value - 1.0), classify(ladder, horizon=horizon))


@dataclass(frozen=True)
class OptimumResult:
    """Infimum of the shifted availability at fixed mass.

    ``attained`` is ``None`` when the classification is inconclusive; the
    infimum is 0 in both borderline alternatives.
    """

    attained: bool | None
    value: float
    solution: EquilibriumSolution | None
    classification: EqClassification

    def to_dict(self) -> dict:
        return {"attained": self.attained, "value": self.value,
                "classification": self.classification.to_dict()}


def optimum_value(ladder: EnergyLadder, rho_bar: float) -> OptimumResult:
    cls = classify(ladder)
    if cls.verdict == "EQ":
        sol = solve_equilibrium(ladder, rho_bar)
        return OptimumResult(True, sol.a_tilde_value, sol, cls)
    if cls.verdict == "NEQ":
        return OptimumResult(False, 0.0, None, cls)
    return OptimumResult(None, 0.0, None, cls)


def _tail_sup_log(ladder: EnergyLadder, m: int, window: int = 100_000) -> float:
    """``ln sup_{l > m} q~_l``."""
    if ladder.kind == "example1":
        # q~_l = exp(-gamma l^(2/3)) is decreasing for l >= 2
        return float(ladder.log_qtilde(m + 1))
    ct = ladder.constant_tail()
    if ct is not None:
        K, log_c = ct
        l = np.arange(m + 1, max(K, m + 1))
        return max([log_c] + list(ladder.log_qtilde(l))) if l.size else log_c
    return float(np.max(ladder.log_qtilde(np.arange(m + 1, m + 1 + window))))


@dataclass(frozen=True)
class MinimizingTerm:
    """Member ``m`` of the minimizing sequence for a ladder without equilibria.

    The weights are ``max(q~_l, pi_m)`` with ``pi_m = sup_{l>m} q~_l``, which
    makes them constant past ``m``; the state is the equilibrium of mass
    ``rho_bar`` for these weights and ``value = rho_bar ln mu``.
    """

    m: int
    rho_bar: float
    log_pi: float
    log_weights: np.ndarray = field(repr=False)
    log_mu: float
    N: float
    value: float
    residual: float

    @property
    def mu(self) -> float:
        return math.exp(self.log_mu)

    @property
    def pi(self) -> float:
        return math.exp(self.log_pi)

    def log_weight(self, l) -> np.ndarray:
        l = np.asarray(l)
        head = self.log_weights[np.minimum(l, self.m) - 1]
        return np.where(l <= self.m, head, self.log_pi)

    def z(self, l) -> np.ndarray:
        l = np.asarray(l)
        return self.N * np.exp(self.log_weight(l) + l * self.log_mu)

    def state(self, M: int) -> ClusterState:
        return ClusterState(self.z(np.arange(1, M + 1)))

    def profile(self) -> Iterator[float]:
        l = 1
        while True:
            yield float(self.z(l))
            l += 1

    def to_dict(self) -> dict:
        return {"m": self.m, "mu": self.mu, "log_mu": self.log_mu, "N": self.N,
                "value": self.value, "pi": self.pi}


def _weighted_sums(log_w: np.ndarray, log_pi: float, t: float) -> tuple[float, float]:
    m = log_w.size
    l = np.arange(1, m + 1)
    head = np.exp(log_w - l * t)
    base = math.exp(log_pi - (m + 1) * t)
    f = float(np.sum(head)) + base * _geometric_moment(m + 1, -t, 0)
    g = float(np.dot(l, head)) + base * _geometric_moment(m + 1, -t, 1)
    return f, g


def minimizing_sequence(ladder: EnergyLadder, rho_bar: float, m: int,
                        tol: float = ROOT_TOL) -> MinimizingTerm:
    """Raises :class:`MisuseError` unless the ladder is certified NEQ."""
    if m < 1:
        raise InvalidParameterError("m must be >= 1")
    if not rho_bar > 0:
        raise InvalidParameterError(f"rho_bar must be positive, got {rho_bar!r}")
    cls = classify(ladder)
    if cls.verdict != "NEQ":
        raise MisuseError(f"minimizing sequence needs a ladder without equilibria, got {cls.verdict}")
    log_pi = _tail_sup_log(ladder, m)
    log_w = np.maximum(ladder.log_qtilde(np.arange(1, m + 1)), log_pi)
    log_w.setflags(write=False)

    def F(t):
        return _weighted_sums(log_w, log_pi, t)[0] - 1.0

    t, residual = _solve_decreasing(F, max(0.0, ladder.log_R), tol)
    _check_residual(residual, tol)
    g = _weighted_sums(log_w, log_pi, t)[1]
    return MinimizingTerm(m, float(rho_bar), log_pi, log_w, -t, rho_bar / g, -rho_bar * t, residual)


def approximation_gap(ladder: EnergyLadder, m: int, window: int = 100_000) -> float:
    """``sup_{l >= l_m} |ln q~_l| / l`` where ``l_m`` is the first index with ``q~_l < pi_m``.

    Bounds ``A~(z) - A(z, q^(m))`` by ``rho(z)`` times this value.
    """
    log_pi = _tail_sup_log(ladder, m)
    l = np.arange(1, m + 3)
    below = np.nonzero(ladder.log_qtilde(l) < log_pi)[0]
    l_m = int(below[0]) + 1 if below.size else m + 2
    if ladder.kind == "example1" and l_m >= 2:
        # gamma * l**(-1/3) decreases in l
        return float(abs(ladder.log_qtilde(l_m)) / l_m)
    ls = np.arange(l_m, l_m + window)
    return float(np.max(np.abs(ladder.log_qtilde(ls)) / ls))


@dataclass(frozen=True)
class StandardEquilibrium:
    """Standard-model equilibrium ``z_l = Q_l mu^l`` and its density."""

    params: StandardModelParams
    mu: float
    density: float
    density_error: float
    certified: bool

    def z(self, l) -> np.ndarray:
        l = np.asarray(l)
        log_Q = self.params.log_Q(int(np.max(l)))[l - 1]
        with np.errstate(divide="ignore"):
            return np.exp(log_Q + l * np.log(self.mu))

    def state(self, m: int) -> ClusterState:
        return ClusterState(self.z(np.arange(1, m + 1)))

    def profile(self) -> Iterator[float]:
        l, log_Q = 1, 0.0
        with np.errstate(divide="ignore"):
            log_mu = float(np.log(self.mu))
        while True:
            yield math.exp(log_Q + l * log_mu) if self.mu > 0 else 0.0
            log_Q += float(np.log(self.params.c(l)) - np.log(self.params.d(l + 1)))
            l += 1


def standard_equilibrium(sm: StandardModelParams, mu: float, tol: float = SERIES_TOL,
                         horizon: int = DEFAULT_HORIZON) -> StandardEquilibrium:
    """Equilibrium with activity ``mu`` and its density ``sum l Q_l mu^l``.

    The tail is bounded rigorously for ``mu < z_s`` once the ratio bound
    ``((L+1)/L)**(1-alpha) mu / z_s`` drops below 1; at ``mu = z_s`` the bound
    uses the largest computed term ratio over the last quarter of the sum
    and ``certified`` is False.

    Raises
    ------
    SupersaturationError
        If ``mu > z_s``.
    """
    if mu < 0:
        raise InvalidParameterError(f"mu must be nonnegative, got {mu!r}")
    if mu > sm.z_s:
        raise SupersaturationError(f"mu={mu!r} exceeds the saturation activity z_s={sm.z_s!r}")
    if mu == 0:
        return StandardEquilibrium(sm, 0.0, 0.0, 0.0, True)
    log_mu = math.log(mu)
    sums = []
    offset = 0.0
    n = 1
    chunk = 1024
    bound = math.inf
    certified = False
    while n <= horizon:
        end = min(n + chunk, horizon + 1)
        l = np.arange(n, end)
        steps = np.log(sm.c(l)) - np.log(sm.d(l + 1))
        log_Q = offset + np.concatenate(([0.0], np.cumsum(steps[:-1])))
        offset = float(log_Q[-1] + steps[-1])
        log_terms = np.log(l) + log_Q + l * log_mu
        sums.append(float(np.sum(np.exp(log_terms))))
        n = end
        L = n - 1
        last = math.exp(log_terms[-1])
        r = ((L + 1) / L) ** (1 - sm.alpha) * mu / sm.z_s
        certified = r < 1
        if not certified:
            k = max(2, log_terms.size // 4)
            r = float(np.exp(np.max(np.diff(log_terms[-k:]))))
        bound = last * r / (1 - r) if r < 1 else math.inf
        if bound <= tol * math.fsum(sums):
            break
        chunk *= 2
    density = math.fsum(sums) + 0.5 * bound
    return StandardEquilibrium(sm, float(mu), density, 0.5 * bound, certified)
