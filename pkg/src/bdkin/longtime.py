"""Long-time behaviour: regime classification, mass certificates, majorants.

The majorant cone for ``(l0, eta)`` holds the sequences ``sigma`` that are
nonnegative, nonincreasing and satisfy

    sigma_l - sigma_{l+1} >= eta_l (sigma_{l-1} - sigma_l)    for l >= l0,

with ``sigma`` constant below ``l0``.  Writing ``w_{l0-1} = 1``,
``w_l = eta_l w_{l-1}`` and ``W_l = sum_{k >= l} w_k``, the constraint says
that ``sigma`` is a concave nondecreasing function of ``W``.  The minimal
majorant of ``xi`` is therefore the least concave nondecreasing majorant
of the points ``(W_l, xi_l)`` together with the origin, read back at each
``W_l``.  That is the default ``hull`` method; the monotone fixed-point
iteration is kept as an independent route.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .equilibrium import classify, solve_equilibrium
from .errors import InvalidParameterError, InvariantError, NumericError, UndefinedLambdaError
from .integrate import IntegratorConfig, Trajectory, simulate
from .kinetics import EnergyLadder, KineticCoefficients, ModifiedModel, _modified_coefficients
from .state import ClusterState, as_values, tail_sums

__all__ = [
    "MajorantSpace",
    "Majorant",
    "MassCertificate",
    "RegimeBudget",
    "RegimeReport",
    "hat_operator",
    "dirac_majorant",
    "summable_majorant",
    "h_sigma",
    "h_sigma_series",
    "zeta_rate_bound",
    "mass_certificate",
    "regime_classify",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MajorantSpace:
    """Cone parameters: start index ``l0`` and ratios ``eta_l``.

    ``eta`` is a scalar or a sequence indexed from ``l = 1``; entries below
    ``l0`` are ignored.  ``eta0`` bounds ``eta_l`` for ``l >= l0`` and sets
    the geometric tail past a finite window.
    """

    l0: int
    eta: float | tuple
    eta0: float

    def __post_init__(self):
        if int(self.l0) != self.l0 or self.l0 < 1:
            raise InvalidParameterError(f"l0 must be a positive integer, got {self.l0!r}")
        if not 0.0 < self.eta0 < 1.0:
            raise InvalidParameterError(f"eta0 must lie in (0, 1), got {self.eta0!r}")
        if np.isscalar(self.eta):
            eta = float(self.eta)
            if not 0.0 < eta <= self.eta0:
                raise InvalidParameterError("need 0 < eta <= eta0")
            object.__setattr__(self, "eta", eta)
        else:
            eta = tuple(float(x) for x in self.eta)
            used = np.array(eta[self.l0 - 1:])
            if np.any(~(used > 0)) or np.any(used > self.eta0):
                raise InvalidParameterError("need 0 < eta_l <= eta0 for l >= l0")
            object.__setattr__(self, "eta", eta)

    @classmethod
    def constant(cls, eta: float, l0: int = 1) -> "MajorantSpace":
        return cls(l0, float(eta), float(eta))

    @classmethod
    def from_sequence(cls, eta, l0: int = 1) -> "MajorantSpace":
        eta = tuple(float(x) for x in eta)
        return cls(l0, eta, max(eta[l0 - 1:]))

    @property
    def is_constant(self) -> bool:
        return isinstance(self.eta, float)

    def eta_at(self, L: int) -> np.ndarray:
        """``eta_1..eta_L``; past a finite sequence the value ``eta0`` is used."""
        if self.is_constant:
            return np.full(L, self.eta)
        out = np.full(L, self.eta0)
        n = min(L, len(self.eta))
        out[:n] = self.eta[:n]
        return out

    def contains(self, sigma, tol: float = 1e-12) -> bool:
        """Membership test on a finite window (no condition at the last entry)."""
        s = np.asarray(sigma, dtype=float)
        L = s.size
        if np.any(s < -tol) or np.any(np.diff(s) > tol):
            return False
        eta = self.eta_at(L)
        for l in range(max(self.l0, 2), L):
            if s[l - 1] - s[l] < eta[l - 1] * (s[l - 2] - s[l - 1]) - tol:
                return False
        return True


@dataclass(frozen=True)
class Majorant:
    """A majorant on the window ``1..L`` with its norms.

    ``l1_norm`` includes the geometric tail past the window when
    ``tail_mode == "geometric"``.
    """

    values: np.ndarray
    tail_mode: str
    eta0: float
    sup_norm: float
    l1_norm: float

    def __len__(self) -> int:
        return int(self.values.size)

    def extended(self, L: int) -> np.ndarray:
        """Values on ``1..L``, continued past the window by the tail rule."""
        v = self.values
        if L <= v.size:
            return v[:L].copy()
        k = np.arange(1, L - v.size + 1)
        if self.tail_mode == "geometric":
            tail = v[-1] * self.eta0 ** k
        else:
            tail = np.zeros(k.size)
        return np.concatenate((v, tail))

    def to_dict(self) -> dict:
        return {"values": [float(x) for x in self.values], "tail_mode": self.tail_mode,
                "eta0": self.eta0, "sup_norm": self.sup_norm, "l1_norm": self.l1_norm}


def _make_majorant(sigma: np.ndarray, tail_mode: str, eta0: float) -> Majorant:
    l1 = math.fsum(sigma)
    if tail_mode == "geometric":
        l1 += sigma[-1] * eta0 / (1.0 - eta0)
    sigma.setflags(write=False)
    return Majorant(sigma, tail_mode, eta0, float(np.max(sigma, initial=0.0)), l1)


def _positions(space: MajorantSpace, L: int, tail_mode: str) -> np.ndarray:
    """``W_l`` for ``l = l0..L``."""
    eta = space.eta_at(L)
    w = np.cumprod(eta[space.l0 - 1:])
    if tail_mode == "geometric":
        tail = w[-1] * space.eta0 / (1.0 - space.eta0)
    else:
        tail = -w[-1]
    return np.cumsum(w[::-1])[::-1] + tail


def _upper_hull(x: np.ndarray, y: np.ndarray):
    """Upper concave hull of points sorted by increasing ``x``."""
    hx: list[float] = []
    hy: list[float] = []
    for xi, yi in zip(x, y):
        if hx and xi == hx[-1]:
            if yi <= hy[-1]:
                continue
            hx.pop()
            hy.pop()
        while len(hx) >= 2:
            # drop the middle point if it lies on or below the chord
            cross = (hx[-1] - hx[-2]) * (yi - hy[-2]) - (hy[-1] - hy[-2]) * (xi - hx[-2])
            if cross >= 0:
                hx.pop()
                hy.pop()
            else:
                break
        hx.append(xi)
        hy.append(yi)
    return np.array(hx), np.array(hy)


def _hat_hull(space: MajorantSpace, xi: np.ndarray, tail_mode: str) -> np.ndarray:
    L = xi.size
    l0 = space.l0
    W = _positions(space, L, tail_mode)
    pts_x = np.concatenate(([0.0], W[::-1]))
    pts_y = np.concatenate(([0.0], xi[l0 - 1:][::-1]))
    hx, hy = _upper_hull(pts_x, pts_y)
    k = int(np.argmax(hy))
    hx, hy = hx[: k + 1], hy[: k + 1]
    vals = np.interp(W, hx, hy, right=hy[-1])
    # interpolation can lose the exact vertex values
    on_vertex = np.searchsorted(hx, W)
    hit = (on_vertex < hx.size) & (hx[np.minimum(on_vertex, hx.size - 1)] == W)
    vals[hit] = hy[on_vertex[hit]]
    sigma = np.empty(L)
    sigma[l0 - 1:] = vals
    sigma[: l0 - 1] = vals[0]
    return sigma


def _hat_iterate(space: MajorantSpace, xi: np.ndarray, tail_mode: str,
                 tol: float, max_sweeps: int) -> np.ndarray:
    L = xi.size
    l0 = space.l0
    eta = space.eta_at(L)
    floor = np.where(np.arange(1, L + 1) >= l0, xi, -np.inf)
    sigma = np.maximum(floor, 0.0)
    for sweep in range(max_sweeps):
        change = 0.0
        for i in range(L - 1, l0 - 2, -1):
            l = i + 1
            e = eta[i]
            if l == L:
                if tail_mode == "geometric":
                    cand = e * sigma[i - 1] / (1.0 + e - space.eta0) if l > l0 else 0.0
                else:
                    cand = 0.0
                new = max(floor[i], cand, sigma[i])
            else:
                prev = sigma[i - 1] if l > l0 else sigma[i]
                new = max(floor[i], sigma[i + 1], (sigma[i + 1] + e * prev) / (1.0 + e), sigma[i])
            change = max(change, new - sigma[i])
            sigma[i] = new
        sigma[: l0 - 1] = sigma[l0 - 1]
        if change < tol:
            return sigma
    raise NumericError(f"hat iteration did not converge in {max_sweeps} sweeps "
                       f"(last update {change:.3g})")


def hat_operator(space: MajorantSpace, xi, tail_mode: str = "geometric",
                 method: str = "hull", tol: float = 1e-14,
                 max_sweeps: int = 1_000_000) -> Majorant:
    """Minimal majorant of ``xi`` in the cone of ``space``, on the window ``1..L``.

    ``tail_mode="geometric"`` continues the result by ``sigma_L eta0^k``
    past the window and imposes the cone condition at ``l = L`` as well;
    ``"zero"`` treats entries past ``L`` as 0 and leaves ``sigma_L`` free.
    Entries of ``xi`` below ``l0`` are ignored.

    ``method="iterate"`` runs the Gauss-Seidel update from below and
    raises :class:`NumericError` if it has not settled within
    ``max_sweeps``.
    """
    xi = np.asarray(xi, dtype=float).reshape(-1)
    L = xi.size
    if tail_mode not in ("geometric", "zero"):
        raise InvalidParameterError(f"unknown tail_mode {tail_mode!r}")
    if L < space.l0 + 2:
        raise InvalidParameterError(f"window length {L} shorter than l0 + 2")
    if not np.all(np.isfinite(xi)):
        raise InvalidParameterError("xi must be bounded")
    if method == "hull":
        sigma = _hat_hull(space, xi, tail_mode)
    elif method == "iterate":
        sigma = _hat_iterate(space, xi, tail_mode, tol, max_sweeps)
    else:
        raise InvalidParameterError(f"unknown method {method!r}")
    return _make_majorant(sigma, tail_mode, space.eta0)


def _dirac_values(eta0: float, k: int, L: int) -> np.ndarray:
    l = np.arange(1, L + 1)
    return np.where(l <= k, 1.0, eta0 ** np.maximum(l - k, 0))


def dirac_majorant(space: MajorantSpace, m: int, window: int | None = None) -> Majorant:
    """Closed-form majorant of the unit mass at ``m``: 1 up to ``m``, then ``eta0^(l-m)``.

    For constant ``eta`` this is the minimal majorant.  Its norms are
    exact: sup 1 and l1 ``m + eta0 / (1 - eta0)``.
    """
    if m < space.l0:
        raise InvalidParameterError(f"m={m} below l0={space.l0}")
    L = window if window is not None else m + 64
    if L < m:
        raise InvalidParameterError("window must reach m")
    sigma = _dirac_values(space.eta0, m, L)
    out = _make_majorant(sigma, "geometric", space.eta0)
    return Majorant(out.values, "geometric", space.eta0, 1.0, m + space.eta0 / (1.0 - space.eta0))


def summable_majorant(space: MajorantSpace, xi) -> Majorant:
    """Layered majorant ``sum_k (xi_k - xi_{k+1}) D_k`` of a nonincreasing ``xi``.

    ``D_k`` is the closed-form Dirac majorant at ``k``; ``xi`` is taken as
    zero past its window.  The l1 norm equals
    ``xi_1 eta0 / (1 - eta0) + sum_k xi_k``.

    Raises
    ------
    InvariantError
        If ``xi`` is negative or increases anywhere.
    """
    xi = np.asarray(xi, dtype=float).reshape(-1)
    if np.any(xi < 0) or np.any(np.diff(xi) > 0):
        raise InvariantError("xi must be nonnegative and nonincreasing")
    L = xi.size
    e = space.eta0
    steps = xi - np.append(xi[1:], 0.0)
    # sigma_l = sum_{k >= l} steps_k + sum_{k < l} steps_k e^(l-k)
    inner = tail_sums(steps)
    outer = np.zeros(L)
    acc = 0.0
    for i in range(1, L):
        acc = e * (acc + steps[i - 1])
        outer[i] = acc
    sigma = inner + outer
    bound = xi[0] * e / (1.0 - e) + math.fsum(xi) if L else 0.0
    out = _make_majorant(sigma, "geometric", e)
    return Majorant(out.values, "geometric", e, out.sup_norm, bound)


def h_sigma(zeta, sigma, l0: int, rho0: float) -> float:
    """``max(rho0 / sigma_l0, max_{l > l0} zeta_l / sigma_l)`` over the truncation."""
    z = as_values(zeta)
    s = np.asarray(sigma.values if isinstance(sigma, Majorant) else sigma, dtype=float)
    m = z.size
    if s.size < m:
        raise InvalidParameterError(f"sigma covers {s.size} entries, state has {m}")
    s = s[:m]
    if np.any(~(s[l0 - 1:] > 0)):
        raise InvalidParameterError("sigma must be positive from l0 on")
    head = rho0 / s[l0 - 1]
    if l0 >= m:
        return float(head)
    return float(max(head, np.max(z[l0:] / s[l0:])))


def h_sigma_series(traj: Trajectory, sigma, l0: int, indices=None) -> np.ndarray:
    """``H_sigma`` at the recorded snapshots (all, or ``indices``)."""
    idx = range(len(traj)) if indices is None else indices
    if isinstance(sigma, Majorant):
        sigma = sigma.extended(traj.truncation)
    return np.array([h_sigma(tail_sums(traj.states[k]), sigma, l0, traj.rho0) for k in idx])


def zeta_rate_bound(z, ladder: EnergyLadder, kin: KineticCoefficients, mu0: float) -> np.ndarray:
    """Upper bound for ``d zeta_l / dt`` at ``l = 2..m``.

    ``N G_{l-1} r_{l-1} (mu0 (zeta_{l-1} - zeta_l) - (zeta_l - zeta_{l+1}))``
    with ``r_l = q_l / q_{l+1}``; it bounds the rate wherever
    ``z_1 / N <= mu0 r_{l-1}``.
    """
    v = as_values(z)
    g, r = _modified_coefficients(ladder, kin, v.size)
    N = float(np.sum(v))
    return N * g * r * (mu0 * v[:-1] - v[1:])


@dataclass(frozen=True)
class MassCertificate:
    certified: bool
    reason: str
    window: tuple
    R_prime: float
    sup_lambda: float
    samples: int

    @property
    def conclusion(self) -> str:
        if self.certified:
            return ("certified on window: lambda <= R' at every recorded time; if this "
                    "persists for all later times the limit keeps the full mass")
        return "not certified: " + self.reason

    def to_dict(self) -> dict:
        return {"certified": self.certified, "reason": self.reason,
                "window": list(self.window), "R_prime": self.R_prime,
                "sup_lambda": self.sup_lambda, "samples": self.samples,
                "conclusion": self.conclusion}


def mass_certificate(traj: Trajectory, ladder: EnergyLadder, window: tuple,
                     R_prime: float) -> MassCertificate:
    """Check ``lambda = z_1 / N <= R'`` on every recorded time in ``window``.

    Raises
    ------
    InvalidParameterError
        If ``R'`` is outside ``[0, R)`` or the window holds no snapshots.
    UndefinedLambdaError
        If ``N = 0`` at a snapshot in the window.
    """
    R = ladder.R
    if not 0.0 <= R_prime < R:
        raise InvalidParameterError(f"R' must lie in [0, R) = [0, {R!r}), got {R_prime!r}")
    t0, t1 = float(window[0]), float(window[1])
    if t0 > t1:
        raise InvalidParameterError("window start after its end")
    idx = traj.window(t0, t1)
    if idx.size == 0:
        raise InvalidParameterError(f"no snapshots in window [{t0!r}, {t1!r}]")
    if np.any(traj.N[idx] == 0):
        raise UndefinedLambdaError("lambda is undefined where N = 0")
    lam = traj.lam[idx]
    sup = float(np.max(lam))
    if sup <= R_prime:
        return MassCertificate(True, "", (t0, t1), float(R_prime), sup, int(idx.size))
    k = int(idx[np.argmax(lam > R_prime)])
    reason = f"lambda={traj.lam[k]!r} exceeds R'={R_prime!r} at t={traj.times[k]!r}"
    return MassCertificate(False, reason, (t0, t1), float(R_prime), sup, int(idx.size))


@dataclass(frozen=True)
class RegimeBudget:
    """Simulation budget for :func:`regime_classify`.

    The certificate and trend checks use snapshots with
    ``t >= tail_fraction * t_end``.
    """

    t_end: float = 1000.0
    truncation: int = 200
    record_every: float | None = None
    tail_fraction: float = 0.1
    flux_tol: float = 1e-6

    def __post_init__(self):
        if not self.t_end > 0:
            raise InvalidParameterError("t_end must be positive")
        if self.truncation < 2:
            raise InvalidParameterError(f"truncation must be >= 2, got {self.truncation}")
        if not 0.0 <= self.tail_fraction < 1.0:
            raise InvalidParameterError("tail_fraction must lie in [0, 1)")

    @classmethod
    def from_config(cls, cfg: dict | None) -> "RegimeBudget":
        return cls(**(cfg or {}))


@dataclass
class RegimeReport:
    case_label: str
    predicted_limit: dict
    classification: object
    R: float
    A_tilde_terminal: float | None = None
    A_tilde_slope: float | None = None
    threshold: float | None = None
    certificate: MassCertificate | None = None
    terminal_max_flux: float | None = None
    truncation_affected: bool | None = None
    notes: list = field(default_factory=list)

    @property
    def decided(self) -> bool:
        return self.case_label not in ("EQ1", "undecided")

    def to_dict(self) -> dict:
        return {
            "case_label": self.case_label,
            "predicted_limit": self.predicted_limit,
            "evidence": {
                "classification": self.classification.to_dict(),
                "R": self.R,
                "f_at_1_branch": self.classification.branch,
                "A_tilde_terminal": self.A_tilde_terminal,
                "A_tilde_slope": self.A_tilde_slope,
                "threshold": self.threshold,
                "lambda_window": None if self.certificate is None else self.certificate.to_dict(),
                "terminal_max_flux": self.terminal_max_flux,
                "truncation_affected": self.truncation_affected,
            },
            "notes": list(self.notes),
        }


def _equilibrium_limit(ladder: EnergyLadder, rho0: float) -> dict:
    sol = solve_equilibrium(ladder, rho0)
    return {"kind": "equilibrium", "mu_bar": sol.mu_bar, "rho": rho0, "N_bar": sol.N_bar}


def regime_classify(ladder: EnergyLadder, kin: KineticCoefficients, rho0: float,
                    sim_budget: RegimeBudget | None = None,
                    config: IntegratorConfig | None = None) -> RegimeReport:
    """Predict the long-time limit from monodisperse data of mass ``rho0``.

    The static EQ/NEQ verdict fixes the regime except when ``f~(1) > 1``
    and ``R <= 1``.  If ``f~(1)`` cannot be separated from 1 the case is
    EQ1 (limit open) when ``g~(1)`` is finite and undecided otherwise.  There the terminal shifted availability decides:
    below ``-tol`` the limit is the equilibrium, within ``tol`` of 0 with a
    flat trend it is the zero state, otherwise the case stays undecided.
    ``tol = 1e-3 rho0 max(|ln R|, 1 if R == 1)``.
    """
    if not rho0 > 0:
        raise InvalidParameterError("rho0 must be positive")
    budget = sim_budget or RegimeBudget()
    cls = classify(ladder)
    R = ladder.R
    if cls.verdict == "inconclusive" or cls.branch == "f_eq_1_g_finite":
        if cls.g_at_1.status == "converged":
            return RegimeReport("EQ1", {"kind": "open"}, cls, R,
                                notes=["f~(1) = 1 within tolerance and g~(1) is finite",
                                       "uniqueness of the long-time limit is open"])
        return RegimeReport("undecided", {"kind": "open"}, cls, R,
                            notes=["f~(1) could not be separated from 1"])

    cfg = config or IntegratorConfig(t_end=budget.t_end, record_every=budget.record_every,
                                     flux_tol=budget.flux_tol)
    traj = simulate(ClusterState.monodisperse(rho0, budget.truncation),
                    ModifiedModel(ladder, kin), cfg)
    t_end = float(traj.times[-1])
    t_tail = budget.tail_fraction * t_end
    idx = traj.window(t_tail, t_end)
    A_end = float(traj.A_tilde[-1])
    slope = float((traj.A_tilde[-1] - traj.A_tilde[idx[0]]) / (t_end - traj.times[idx[0]])) \
        if traj.times[idx[0]] < t_end else 0.0
    report = RegimeReport("undecided", {"kind": "open"}, cls, R, A_end, slope,
                          terminal_max_flux=float(traj.max_flux[-1]),
                          truncation_affected=traj.truncation_affected)

    def certify(R_prime):
        report.certificate = mass_certificate(traj, ladder, (t_tail, t_end), R_prime)

    if cls.verdict == "NEQ":
        report.case_label = "NEQ"
        report.predicted_limit = {"kind": "zero_state", "convergence": "weak-star"}
        return report
    if R > 1.0:
        report.case_label = "EQ2"
        report.predicted_limit = _equilibrium_limit(ladder, rho0) | {"convergence": "strong"}
        certify(0.5 * (1.0 + R))
        return report

    tol = 1e-3 * rho0 * (abs(math.log(R)) if R != 1.0 else 1.0)
    report.threshold = tol
    if A_end < -tol:
        report.case_label = "EQ3b"
        sol = solve_equilibrium(ladder, rho0)
        report.predicted_limit = {"kind": "equilibrium", "mu_bar": sol.mu_bar, "rho": rho0,
                                  "N_bar": sol.N_bar}
        certify(0.5 * (sol.lambda_bar + R))
    elif abs(A_end) <= tol and abs(slope) * (t_end - t_tail) <= tol:
        report.case_label = "EQ3a"
        report.predicted_limit = {"kind": "zero_state", "convergence": "weak-star"}
    else:
        report.notes.append("terminal shifted availability has not settled")
    return report
