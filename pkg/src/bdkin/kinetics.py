"""Model parameterisation and right-hand sides of the cluster equations.

Two closures are supported.  The modified model couples condensation and
evaporation through the energy ladder,

    J_l = G_l * (z_1 z_l - N (q_l / q_{l+1}) z_{l+1}),

where ``N = sum z`` is the number of droplets and ``G_l`` the kinetic
prefactor.  The standard model uses fixed rates,

    J_l = c_l z_1 z_l - d_{l+1} z_{l+1}.

Both are truncated at ``m`` with no outflow past the last cluster, which
makes the discrete mass ``sum l z_l`` an exact invariant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import InvalidParameterError, RangeError
from .state import ZetaState, as_values

__all__ = [
    "EnergyLadder",
    "KineticCoefficients",
    "StandardModelParams",
    "ModifiedModel",
    "StandardModel",
    "AssumptionReport",
    "flux_modified",
    "flux_zero",
    "flux_standard",
    "fluxes",
    "rhs_truncated",
    "rhs_zeta",
    "validate_assumptions",
    "model_from_config",
]

LADDER_KINDS = ("example1", "example2", "geometric", "table")


def _sizes(l) -> np.ndarray:
    arr = np.asarray(l)
    if np.any(arr < 1):
        raise RangeError("cluster sizes start at 1")
    return arr


@dataclass(frozen=True)
class EnergyLadder:
    """Single-droplet availabilities ``a_l`` with ``a_1 = 0`` and limit ratio ``R``.

    Use the classmethod constructors rather than the raw fields.  For a
    ``table`` ladder the listed values are continued past their end with
    ``a_{l+1} - a_l = ln R``, so the rescaled weights become constant there.
    """

    kind: str
    delta: float = 0.0
    gamma: float = 0.0
    beta: float = 0.0
    a_values: tuple = ()
    log_R: float = 0.0

    def __post_init__(self):
        if self.kind not in LADDER_KINDS:
            raise InvalidParameterError(f"unknown ladder kind {self.kind!r}")
        if not math.isfinite(self.log_R):
            raise InvalidParameterError("ratio limit R must satisfy 0 < R < inf")
        if self.kind == "example1":
            if not (self.delta > 0 and self.gamma > 0):
                raise InvalidParameterError("example1 needs delta > 0 and gamma > 0")
        elif self.kind == "example2":
            if not self.beta > 0:
                raise InvalidParameterError("example2 needs beta > 0")
        elif self.kind == "geometric":
            if not math.isfinite(self.beta):
                raise InvalidParameterError("geometric needs a finite beta")
        else:
            if len(self.a_values) < 1 or self.a_values[0] != 0.0:
                raise InvalidParameterError("table ladder must start with a_1 = 0")
            if not all(math.isfinite(a) for a in self.a_values):
                raise InvalidParameterError("table entries must be finite")

    @classmethod
    def example1(cls, delta: float, gamma: float) -> "EnergyLadder":
        """Vapour-liquid ladder ``a_l = -delta*l + gamma*l**(2/3)`` for ``l > 1``."""
        return cls("example1", delta=float(delta), gamma=float(gamma), log_R=-float(delta))

    @classmethod
    def example2(cls, beta: float) -> "EnergyLadder":
        """Binary-mixture ladder ``a_l = beta*l`` for ``l >= 2``."""
        return cls("example2", beta=float(beta), log_R=float(beta))

    @classmethod
    def geometric(cls, beta: float) -> "EnergyLadder":
        """``a_l = beta*(l-1)``; rescaled weights are constant ``exp(beta)``."""
        return cls("geometric", beta=float(beta), log_R=float(beta))

    @classmethod
    def inverted_geometric(cls, delta: float) -> "EnergyLadder":
        """``a_l = -delta*(l-1)``, i.e. a geometric ladder with ``beta = -delta``."""
        return cls.geometric(-float(delta))

    @classmethod
    def table(cls, a_values, R: float) -> "EnergyLadder":
        if not (R > 0 and math.isfinite(R)):
            raise InvalidParameterError(f"declared R must satisfy 0 < R < inf, got {R!r}")
        return cls("table", a_values=tuple(float(a) for a in a_values), log_R=math.log(R))

    @classmethod
    def from_config(cls, cfg: dict) -> "EnergyLadder":
        kind = cfg.get("kind")
        try:
            if kind == "example1":
                return cls.example1(cfg["delta"], cfg["gamma"])
            if kind == "example2":
                return cls.example2(cfg["beta"])
            if kind == "geometric":
                return cls.geometric(cfg["beta"])
            if kind == "inverted_geometric":
                return cls.inverted_geometric(cfg["delta"])
            if kind == "table":
                return cls.table(cfg["a"], cfg["R"])
        except KeyError as exc:
            raise InvalidParameterError(f"ladder kind {kind!r} is missing {exc}") from None
        raise InvalidParameterError(f"unknown ladder kind {kind!r}")

    def to_config(self) -> dict:
        if self.kind == "example1":
            return {"kind": "example1", "delta": self.delta, "gamma": self.gamma}
        if self.kind in ("example2", "geometric"):
            return {"kind": self.kind, "beta": self.beta}
        return {"kind": "table", "a": list(self.a_values), "R": self.R}

    @property
    def R(self) -> float:
        return math.exp(self.log_R)

    def a(self, l) -> np.ndarray:
        l = _sizes(l)
        lf = l.astype(float)
        if self.kind == "example1":
            out = -self.delta * lf + self.gamma * lf ** (2.0 / 3.0)
        elif self.kind == "example2":
            out = self.beta * lf
        elif self.kind == "geometric":
            out = self.beta * (lf - 1.0)
        else:
            tab = np.asarray(self.a_values)
            L = tab.size
            idx = np.minimum(l, L) - 1
            out = tab[idx] + np.maximum(lf - L, 0.0) * self.log_R
        return np.where(l == 1, 0.0, out)

    def log_q(self, l) -> np.ndarray:
        return -self.a(l)

    def log_qtilde(self, l) -> np.ndarray:
        """``ln(q_l R^l)``, using closed forms where cancellation would hurt."""
        l = _sizes(l)
        lf = l.astype(float)
        if self.kind == "example1":
            return np.where(l == 1, -self.delta, -self.gamma * lf ** (2.0 / 3.0))
        if self.kind == "example2":
            return np.where(l == 1, self.beta, 0.0)
        if self.kind == "geometric":
            return np.full(lf.shape, self.beta)
        tab = np.asarray(self.a_values)
        L = tab.size
        capped = np.minimum(l, L)
        return -tab[capped - 1] + capped * self.log_R

    def log_ratio(self, l) -> np.ndarray:
        """``ln(q_l / q_{l+1}) = a_{l+1} - a_l``."""
        l = _sizes(l)
        lf = l.astype(float)
        if self.kind == "example1":
            first = -2.0 * self.delta + self.gamma * 2.0 ** (2.0 / 3.0)
            rest = -self.delta + self.gamma * ((lf + 1.0) ** (2.0 / 3.0) - lf ** (2.0 / 3.0))
            return np.where(l == 1, first, rest)
        if self.kind == "example2":
            return np.where(l == 1, 2.0 * self.beta, self.beta)
        if self.kind == "geometric":
            return np.full(lf.shape, self.beta)
        tab = np.asarray(self.a_values)
        L = tab.size
        inner = np.clip(l, 1, max(L - 1, 1))
        diffs = tab[np.minimum(inner, L - 1)] - tab[inner - 1]
        return np.where(l < L, diffs, self.log_R)

    def ratio(self, l) -> np.ndarray:
        return np.exp(self.log_ratio(l))

    def q(self, l) -> np.ndarray:
        return np.exp(self.log_q(l))

    def qtilde(self, l) -> np.ndarray:
        return np.exp(self.log_qtilde(l))

    def constant_tail(self):
        """``(K, ln c)`` when ``q~_l = c`` for every ``l >= K``, else ``None``."""
        if self.kind == "geometric":
            return 1, self.beta
        if self.kind == "example2":
            return 2, 0.0
        if self.kind == "table":
            L = len(self.a_values)
            return L, -self.a_values[-1] + L * self.log_R
        return None


@dataclass(frozen=True)
class KineticCoefficients:
    """Condensation prefactor ``G_l``: ``constant`` (1) or ``power`` (``l**alpha``)."""

    kind: str = "constant"
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "power"):
            raise InvalidParameterError(f"unknown kinetics kind {self.kind!r}")
        if not 0.0 <= self.alpha < 1.0:
            raise InvalidParameterError(f"alpha must lie in [0, 1), got {self.alpha!r}")
        if self.kind == "constant" and self.alpha != 0.0:
            raise InvalidParameterError("constant kinetics take no exponent")

    @classmethod
    def constant(cls) -> "KineticCoefficients":
        return cls("constant", 0.0)

    @classmethod
    def power(cls, alpha: float) -> "KineticCoefficients":
        return cls("power", float(alpha))

    @classmethod
    def from_config(cls, cfg: dict | None) -> "KineticCoefficients":
        if not cfg:
            return cls.constant()
        kind = cfg.get("kind", "constant")
        if kind == "constant":
            return cls.constant()
        return cls.power(cfg.get("alpha", 0.0))

    def to_config(self) -> dict:
        if self.kind == "constant":
            return {"kind": "constant"}
        return {"kind": "power", "alpha": self.alpha}

    def gamma_bar(self, l) -> np.ndarray:
        lf = _sizes(l).astype(float)
        if self.kind == "constant":
            return np.ones_like(lf)
        return lf ** self.alpha


@dataclass(frozen=True)
class StandardModelParams:
    """Rates ``c_l = l**alpha`` and ``d_l = c_l (z_s + q_strength / l**gamma_exp)``."""

    alpha: float = 1.0 / 3.0
    gamma_exp: float = 1.0 / 3.0
    z_s: float = 1.0
    q_strength: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise InvalidParameterError(f"alpha must lie in [0, 1), got {self.alpha!r}")
        if not self.gamma_exp < 1.0:
            raise InvalidParameterError(f"gamma_exp must be < 1, got {self.gamma_exp!r}")
        if not (self.z_s > 0 and self.q_strength > 0):
            raise InvalidParameterError("z_s and q_strength must be positive")

    @classmethod
    def from_config(cls, cfg: dict | None) -> "StandardModelParams":
        return cls(**(cfg or {}))

    def to_config(self) -> dict:
        return {"alpha": self.alpha, "gamma_exp": self.gamma_exp,
                "z_s": self.z_s, "q_strength": self.q_strength}

    def c(self, l) -> np.ndarray:
        return _sizes(l).astype(float) ** self.alpha

    def d(self, l) -> np.ndarray:
        lf = _sizes(l).astype(float)
        return lf ** self.alpha * (self.z_s + self.q_strength / lf ** self.gamma_exp)

    def log_Q(self, m: int) -> np.ndarray:
        """``ln Q_1..ln Q_m`` with ``Q_1 = 1`` and ``Q_{l+1} = Q_l c_l / d_{l+1}``."""
        n = np.arange(1, m)
        steps = np.log(self.c(n)) - np.log(self.d(n + 1))
        return np.concatenate(([0.0], np.cumsum(steps)))


@lru_cache(maxsize=64)
def _modified_coefficients(ladder: EnergyLadder, kin: KineticCoefficients, m: int):
    l = np.arange(1, m)
    g = kin.gamma_bar(l)
    r = ladder.ratio(l)
    g.setflags(write=False)
    r.setflags(write=False)
    return g, r


@lru_cache(maxsize=64)
def _standard_coefficients(sm: StandardModelParams, m: int):
    l = np.arange(1, m)
    c = sm.c(l)
    d_next = sm.d(l + 1)
    c.setflags(write=False)
    d_next.setflags(write=False)
    return c, d_next


@dataclass(frozen=True)
class ModifiedModel:
    ladder: EnergyLadder
    kin: KineticCoefficients = field(default_factory=KineticCoefficients.constant)

    name = "modified"

    def fluxes(self, z) -> np.ndarray:
        """``J_1..J_{m-1}``."""
        v = as_values(z)
        g, r = _modified_coefficients(self.ladder, self.kin, v.size)
        N = float(np.sum(v))
        return g * (v[0] * v[:-1] - N * r * v[1:])

    def rhs(self, z) -> np.ndarray:
        return _rhs_from_fluxes(self.fluxes(z))

    def to_config(self) -> dict:
        return {"model": "modified", "ladder": self.ladder.to_config(),
                "kinetics": self.kin.to_config()}


@dataclass(frozen=True)
class StandardModel:
    params: StandardModelParams = field(default_factory=StandardModelParams)

    name = "standard"

    def fluxes(self, z) -> np.ndarray:
        v = as_values(z)
        c, d_next = _standard_coefficients(self.params, v.size)
        return c * v[0] * v[:-1] - d_next * v[1:]

    def rhs(self, z) -> np.ndarray:
        return _rhs_from_fluxes(self.fluxes(z))

    def to_config(self) -> dict:
        return {"model": "standard", "standard": self.params.to_config()}


def _rhs_from_fluxes(J: np.ndarray) -> np.ndarray:
    # dz_l/dt = J_{l-1} - J_l with J_0 = -sum(J) and J_m = 0
    m = J.size + 1
    ext = np.zeros(m + 1)
    ext[0] = -np.sum(J)
    ext[1:m] = J
    return ext[:-1] - ext[1:]


def _check_index(l: int, m: int):
    if not 1 <= l <= m - 1:
        raise RangeError(f"flux index {l} outside 1..{m - 1}")


def flux_modified(z, ladder: EnergyLadder, kin: KineticCoefficients, l: int) -> float:
    v = as_values(z)
    _check_index(l, v.size)
    N = float(np.sum(v))
    r = float(ladder.ratio(l))
    return float(kin.gamma_bar(l)) * (v[0] * v[l - 1] - N * r * v[l])


def flux_zero(z, ladder: EnergyLadder, kin: KineticCoefficients) -> float:
    """``J_0 = -sum_{l<m} J_l``, the net consumption of free atoms."""
    return -float(np.sum(ModifiedModel(ladder, kin).fluxes(z)))


def flux_standard(z, sm: StandardModelParams, l: int) -> float:
    v = as_values(z)
    _check_index(l, v.size)
    return float(sm.c(l)) * v[0] * v[l - 1] - float(sm.d(l + 1)) * v[l]


def fluxes(z, model) -> np.ndarray:
    return model.fluxes(z)


def rhs_truncated(z, model) -> np.ndarray:
    """Time derivative of the truncated system; ``sum l * dz_l`` telescopes to 0."""
    return model.rhs(z)


def zeta_fluxes(zeta: np.ndarray, ladder: EnergyLadder, kin: KineticCoefficients) -> np.ndarray:
    """``J_1..J_{m-1}`` written in tail sums (no validation)."""
    m = zeta.size
    g, r = _modified_coefficients(ladder, kin, m)
    ext = np.concatenate((zeta, [0.0]))
    z1 = ext[0] - ext[1]
    return g * (z1 * (ext[:m - 1] - ext[1:m]) - ext[0] * r * (ext[1:m] - ext[2:m + 1]))


def zeta_rhs_raw(zeta: np.ndarray, ladder: EnergyLadder, kin: KineticCoefficients) -> np.ndarray:
    J = zeta_fluxes(zeta, ladder, kin)
    return np.concatenate(([-np.sum(J)], J))


def rhs_zeta(zeta, ladder: EnergyLadder, kin: KineticCoefficients) -> np.ndarray:
    """``d zeta_l / dt = J_{l-1}``, with ``J_0 = -sum J``."""
    if not isinstance(zeta, ZetaState):
        zeta = ZetaState(zeta)
    return zeta_rhs_raw(zeta.values, ladder, kin)


@dataclass(frozen=True)
class AssumptionReport:
    horizon: int
    declared_R: float
    ratio_estimate: float
    ratio_deviation: float
    ratio_deviation_half: float
    ratio_within_tol: bool
    ratio_converging: bool
    gamma_over_l_max: float
    gamma_over_l_at_horizon: float
    gamma_over_l_decreasing: bool
    a1_pass: bool
    a2_pass: bool

    @property
    def passed(self) -> bool:
        return self.a1_pass and self.a2_pass

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["passed"] = self.passed
        return out


def validate_assumptions(ladder: EnergyLadder, kin: KineticCoefficients, horizon: int,
                         ratio_rtol: float = 1e-2) -> AssumptionReport:
    """Check the ratio limit and the sublinear growth of ``G_l`` up to ``horizon``.

    The ratio condition passes when ``q_l/q_{l+1}`` at the horizon is within
    ``ratio_rtol`` of ``R`` or when its deviation is still shrinking between
    half the horizon and the horizon.  Slowly converging ladders such as
    ``example1`` only pass through the second route at moderate horizons.
    """
    if horizon < 10:
        raise InvalidParameterError("horizon must be >= 10")
    R = ladder.R
    if not (R > 0 and math.isfinite(R)):
        raise InvalidParameterError(f"declared R must be positive, got {R!r}")
    est = float(ladder.ratio(horizon))
    dev = abs(est - R) / R
    dev_half = abs(float(ladder.ratio(horizon // 2)) - R) / R
    within = dev <= ratio_rtol
    converging = dev == 0.0 or dev < dev_half
    l = np.arange(1, horizon + 1)
    g_over_l = kin.gamma_bar(l) / l
    decreasing = bool(np.all(np.diff(g_over_l) <= 0)) and g_over_l[-1] < g_over_l[0]
    return AssumptionReport(
        horizon=horizon,
        declared_R=R,
        ratio_estimate=est,
        ratio_deviation=dev,
        ratio_deviation_half=dev_half,
        ratio_within_tol=within,
        ratio_converging=converging,
        gamma_over_l_max=float(g_over_l.max()),
        gamma_over_l_at_horizon=float(g_over_l[-1]),
        gamma_over_l_decreasing=decreasing,
        a1_pass=within or converging,
        a2_pass=decreasing,
    )


def model_from_config(cfg: dict):
    """Build a model from the ``model``/``ladder``/``kinetics``/``standard`` keys."""
    kind = cfg.get("model", "modified")
    if kind == "modified":
        if "ladder" not in cfg:
            raise InvalidParameterError("modified model needs a 'ladder' block")
        return ModifiedModel(EnergyLadder.from_config(cfg["ladder"]),
                             KineticCoefficients.from_config(cfg.get("kinetics")))
    if kind == "standard":
        return StandardModel(StandardModelParams.from_config(cfg.get("standard")))
    raise InvalidParameterError(f"unknown model {kind!r}")
