"""Time integration of the truncated cluster equations.

The adaptive scheme is the Dormand-Prince 5(4) pair with first-same-as-last
stages.  Like any Runge-Kutta method it conserves linear invariants, so
the mass ``sum l z_l`` drifts only by rounding.  Steps that leave the
nonnegative cone are retried with half the step; once the step would drop
below ``dt_min``, entries within ``abs_tol`` below zero are clamped, up to
``clamp_budget`` times per run.

Monitors run on every accepted step (mass drift, availability increase,
positivity) and on every recorded snapshot (boundary occupancy, flux size).
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy

from .energy import dissipation_lower_bound
from .errors import InvalidParameterError, PositivityError, StiffnessError
from .kinetics import ModifiedModel, StandardModel, zeta_rhs_raw
from .state import ClusterState, as_values, tail_differences, tail_sums

__all__ = [
    "IntegratorConfig",
    "MonitorEvent",
    "Trajectory",
    "InvariantReport",
    "simulate",
    "step_invariant_report",
]

logger = logging.getLogger(__name__)

MONITORS = ("mass_drift", "availability_monotone", "flux_decay", "positivity")

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


@dataclass(frozen=True)
class IntegratorConfig:
    """Integration settings.

    ``method`` is ``"rk45"`` (adaptive) or ``"rk4"`` (fixed step ``dt``).
    For ``rk45`` a positive ``dt`` is used as the first trial step.
    The availability monitor allows an increase of
    ``availability_atol * (1 + rho0) + availability_rtol * |A|`` per step.
    """

    method: str = "rk45"
    t_end: float = 100.0
    record_every: float | None = None
    dt: float | None = None
    rel_tol: float = 1e-8
    abs_tol: float = 1e-12
    dt_min: float = 1e-14
    dt_max: float = math.inf
    monitors: tuple = MONITORS
    clamp_budget: int = 100
    mass_drift_tol: float = 1e-8
    availability_atol: float = 1e-12
    availability_rtol: float = 1e-12
    flux_tol: float = 1e-6
    boundary_tol: float = 0.01
    max_steps: int = 10_000_000

    def __post_init__(self):
        if self.method not in ("rk45", "rk4"):
            raise InvalidParameterError(f"unknown method {self.method!r}")
        if not self.t_end > 0:
            raise InvalidParameterError("t_end must be positive")
        if self.record_every is not None and not self.record_every > 0:
            raise InvalidParameterError("record_every must be positive")
        if self.method == "rk4" and not (self.dt and self.dt > 0):
            raise InvalidParameterError("rk4 needs a positive dt")
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise InvalidParameterError("tolerances must be positive")
        if not (0 < self.dt_min <= self.dt_max):
            raise InvalidParameterError("need 0 < dt_min <= dt_max")
        unknown = set(self.monitors) - set(MONITORS)
        if unknown:
            raise InvalidParameterError(f"unknown monitors {sorted(unknown)}")

    @property
    def record_interval(self) -> float:
        return self.record_every if self.record_every is not None else self.t_end / 100.0

    @classmethod
    def from_config(cls, cfg: dict | None) -> "IntegratorConfig":
        cfg = dict(cfg or {})
        if "monitors" in cfg:
            cfg["monitors"] = tuple(cfg["monitors"])
        if cfg.get("dt_max") is None:
            cfg.pop("dt_max", None)
        return cls(**cfg)


@dataclass(frozen=True)
class MonitorEvent:
    t: float
    kind: str
    value: float
    severity: str = "violation"

    def to_dict(self) -> dict:
        return {"t": self.t, "kind": self.kind, "value": self.value, "severity": self.severity}


@dataclass
class Trajectory:
    """Snapshots of a run with their observables.

    ``fluxes[k]`` holds ``J_0..J_{m-1}`` at ``times[k]``.  ``lam`` is NaN
    where ``N = 0``.  For the standard model ``A`` holds its Lyapunov
    function and ``A_tilde`` is NaN.
    """

    model: object
    config: IntegratorConfig
    rho0: float
    times: np.ndarray
    states: np.ndarray
    rho: np.ndarray
    N: np.ndarray
    A: np.ndarray
    A_tilde: np.ndarray
    lam: np.ndarray
    fluxes: np.ndarray
    z_boundary: np.ndarray
    dissipation_integral: np.ndarray
    monitor_log: list = field(default_factory=list)
    accepted_steps: int = 0
    rejected_steps: int = 0
    clamp_events: int = 0
    max_step_mass_drift: float = 0.0
    availability_violations: int = 0
    completed: bool = True

    def __len__(self) -> int:
        return int(self.times.size)

    @property
    def truncation(self) -> int:
        return int(self.states.shape[1])

    @property
    def max_flux(self) -> np.ndarray:
        return np.max(np.abs(self.fluxes), axis=1)

    @property
    def truncation_affected(self) -> bool:
        return bool(np.max(self.z_boundary) > self.config.boundary_tol)

    @property
    def violations(self) -> list:
        return [e for e in self.monitor_log if e.severity == "violation"]

    def state(self, k: int) -> ClusterState:
        return ClusterState(self.states[k])

    @property
    def final_state(self) -> ClusterState:
        return self.state(-1)

    def window(self, t0: float, t1: float) -> np.ndarray:
        """Indices of snapshots with ``t0 <= t <= t1``."""
        return np.nonzero((self.times >= t0) & (self.times <= t1))[0]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t", "rho", "N", "A", "A_tilde", "lambda", "maxJ", "z_boundary"])
        maxJ = self.max_flux
        for k in range(len(self)):
            row = [self.times[k], self.rho[k], self.N[k], self.A[k], self.A_tilde[k],
                   self.lam[k], maxJ[k], self.z_boundary[k]]
            writer.writerow([_fmt(x) for x in row])
        return buf.getvalue()

    def snapshots_jsonl(self) -> str:
        lines = [json.dumps({"t": float(t), "z": [float(x) for x in z]})
                 for t, z in zip(self.times, self.states)]
        return "\n".join(lines) + "\n"


def _fmt(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "undefined"
    return repr(x)


@dataclass(frozen=True)
class InvariantReport:
    max_mass_drift: float
    availability_violations: int
    terminal_max_flux: float
    availability_drop: float
    dissipation_integral: float
    dissipation_check: bool | None
    positivity_ok: bool
    truncation_affected: bool
    max_boundary_occupancy: float
    clamp_events: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class _Observer:
    """Observables of the z-state for one model."""

    def __init__(self, model, rho0: float):
        self.model = model
        self.rho0 = rho0
        self.modified = isinstance(model, ModifiedModel)

    def setup(self, m: int):
        l = np.arange(1, m + 1)
        self.l = l.astype(float)
        if self.modified:
            self.log_q = self.model.ladder.log_q(l)
            self.log_qt = self.model.ladder.log_qtilde(l)
        else:
            self.log_q = self.model.params.log_Q(m)

    def availability(self, z: np.ndarray) -> float:
        N = float(np.sum(z))
        ent = float(np.sum(xlogy(z, z)))
        if self.modified:
            return ent - float(np.dot(z, self.log_q)) - float(xlogy(N, N))
        return ent - float(np.dot(z, self.log_q)) - N

    def shifted(self, z: np.ndarray) -> float:
        if not self.modified:
            return math.nan
        N = float(np.sum(z))
        return float(np.sum(xlogy(z, z))) - float(np.dot(z, self.log_qt)) - float(xlogy(N, N))

    def dissipation(self, z: np.ndarray) -> float:
        if not self.modified:
            return 0.0
        return dissipation_lower_bound(z, self.model.ladder, self.model.kin)


def _rk45_step(f, t, y, h, k1):
    ks = [k1]
    for i in range(1, 7):
        yi = y + h * sum(a * k for a, k in zip(_A[i], ks) if a != 0.0)
        ks.append(f(yi))
    y_new = y + h * sum(b * k for b, k in zip(_B5, ks) if b != 0.0)
    err = h * sum(e * k for e, k in zip(_E, ks) if e != 0.0)
    return y_new, err, ks[-1]


def _rk4_step(f, y, h):
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def simulate(initial, model, config: IntegratorConfig | None = None,
             coordinates: str = "z") -> Trajectory:
    """Integrate the truncated system from ``initial`` up to ``config.t_end``.

    ``coordinates="zeta"`` integrates the tail-sum form instead (modified
    model only); snapshots are always stored as ``z``.

    Raises
    ------
    StiffnessError
        If the adaptive step falls below ``dt_min``.
    PositivityError
        If clamping is needed more than ``clamp_budget`` times, or an entry
        falls below ``-abs_tol`` at the minimum step.
    """
    cfg = config or IntegratorConfig()
    z0 = initial if isinstance(initial, ClusterState) else ClusterState(initial)
    z0 = z0.values.copy()
    m = z0.size
    rho0 = float(np.dot(np.arange(1, m + 1), z0))
    if not rho0 > 0:
        raise InvalidParameterError("initial mass must be positive")
    if not isinstance(model, (ModifiedModel, StandardModel)):
        raise InvalidParameterError("model must be a ModifiedModel or StandardModel")

    if coordinates == "z":
        f = model.rhs
        y = z0

        def to_z(v):
            return v

        def from_z(v):
            return v
    elif coordinates == "zeta":
        if not isinstance(model, ModifiedModel):
            raise InvalidParameterError("tail-sum coordinates need the modified model")
        ladder, kin = model.ladder, model.kin

        def f(v):
            return zeta_rhs_raw(v, ladder, kin)

        to_z, from_z = tail_differences, tail_sums
        y = tail_sums(z0)
    else:
        raise InvalidParameterError(f"unknown coordinates {coordinates!r}")

    obs = _Observer(model, rho0)
    obs.setup(m)
    weights = np.arange(1, m + 1, dtype=float)
    use = set(cfg.monitors)
    dt_rec = cfg.record_interval
    n_rec = int(math.floor(cfg.t_end / dt_rec + 1e-9))
    record_times = [k * dt_rec for k in range(1, n_rec + 1)]
    if not record_times or record_times[-1] < cfg.t_end * (1 - 1e-12):
        record_times.append(cfg.t_end)
    record_times[-1] = cfg.t_end

    traj_rows = []
    log: list[MonitorEvent] = []
    stats = {"accepted": 0, "rejected": 0, "clamps": 0, "drift": 0.0, "avail": 0}
    diss_acc = [0.0]

    def record(t, z):
        J = model.fluxes(z)
        N = float(np.sum(z))
        traj_rows.append((t, z.copy(), float(np.dot(weights, z)), N, obs.availability(z),
                          obs.shifted(z), z[0] / N if N > 0 else math.nan,
                          np.concatenate(([-float(np.sum(J))], J)), z[-1] / rho0, diss_acc[0]))

    def build(completed=True) -> Trajectory:
        cols = list(zip(*traj_rows))
        traj = Trajectory(
            model=model, config=cfg, rho0=rho0,
            times=np.array(cols[0]), states=np.array(cols[1]), rho=np.array(cols[2]),
            N=np.array(cols[3]), A=np.array(cols[4]), A_tilde=np.array(cols[5]),
            lam=np.array(cols[6]), fluxes=np.array(cols[7]), z_boundary=np.array(cols[8]),
            dissipation_integral=np.array(cols[9]), monitor_log=log,
            accepted_steps=stats["accepted"], rejected_steps=stats["rejected"],
            clamp_events=stats["clamps"], max_step_mass_drift=stats["drift"],
            availability_violations=stats["avail"], completed=completed,
        )
        return traj

    t = 0.0
    record(t, z0)
    A_prev = obs.availability(z0)
    D_prev = obs.dissipation(z0)

    def accept(t_new, z_new):
        nonlocal A_prev, D_prev
        stats["accepted"] += 1
        if "mass_drift" in use:
            drift = abs(float(np.dot(weights, z_new)) - rho0) / rho0
            stats["drift"] = max(stats["drift"], drift)
            if drift > cfg.mass_drift_tol:
                log.append(MonitorEvent(t_new, "mass_drift", drift))
        A_new = obs.availability(z_new)
        if "availability_monotone" in use:
            allowance = cfg.availability_atol * (1 + rho0) + cfg.availability_rtol * abs(A_prev)
            if A_new > A_prev + allowance:
                stats["avail"] += 1
                log.append(MonitorEvent(t_new, "availability_increase", A_new - A_prev))
        D_new = obs.dissipation(z_new)
        diss_acc[0] += 0.5 * (t_new - t_prev[0]) * (D_prev + D_new)
        A_prev, D_prev = A_new, D_new

    t_prev = [0.0]

    def positivity_fix(y_new, h):
        """Return the repaired state, or None if the step must be retried."""
        z_new = to_z(y_new)
        zmin = float(np.min(z_new))
        if zmin >= 0:
            return y_new
        if h * 0.5 >= cfg.dt_min:
            return None
        if zmin < -cfg.abs_tol:
            raise PositivityError(f"entry {zmin!r} below -abs_tol at minimum step", build(False))
        stats["clamps"] += 1
        if "positivity" in use:
            log.append(MonitorEvent(t + h, "clamp", zmin, "info"))
        if stats["clamps"] > cfg.clamp_budget:
            raise PositivityError("clamping budget exhausted", build(False))
        return from_z(np.maximum(z_new, 0.0))

    rec_idx = 0
    if cfg.method == "rk45":
        k1 = f(y)
        if cfg.dt:
            h = cfg.dt
        else:
            sc = cfg.abs_tol + cfg.rel_tol * np.abs(y)
            d0 = float(np.sqrt(np.mean((y / sc) ** 2)))
            d1 = float(np.sqrt(np.mean((k1 / sc) ** 2)))
            h = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
        h = min(h, cfg.dt_max, record_times[0])
        while rec_idx < len(record_times):
            if stats["accepted"] + stats["rejected"] > cfg.max_steps:
                raise StiffnessError("step budget exhausted", build(False))
            target = record_times[rec_idx]
            h_try = min(h, target - t)
            clipped = h_try < h
            y_new, err, k_last = _rk45_step(f, t, y, h_try, k1)
            scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
            err_norm = float(np.max(np.abs(err) / scale))
            if not math.isfinite(err_norm) or err_norm > 1.0:
                stats["rejected"] += 1
                factor = 0.2 if not math.isfinite(err_norm) else max(0.2, 0.9 * err_norm ** -0.2)
                h = h_try * factor
                if h < cfg.dt_min:
                    raise StiffnessError(f"step size {h!r} below dt_min at t={t!r}", build(False))
                continue
            fixed = positivity_fix(y_new, h_try)
            if fixed is None:
                stats["rejected"] += 1
                h = 0.5 * h_try
                continue
            if fixed is not y_new:
                k_last = f(fixed)
            t_prev[0] = t
            t_new = target if clipped or h_try == target - t else t + h_try
            y = fixed
            k1 = k_last
            accept(t_new, to_z(y))
            t = t_new
            factor = 5.0 if err_norm == 0 else min(5.0, max(0.2, 0.9 * err_norm ** -0.2))
            h_next = min(h_try * factor, cfg.dt_max)
            h = max(h, h_next) if clipped else h_next
            if t >= target:
                record(t, to_z(y))
                rec_idx += 1
    else:
        while rec_idx < len(record_times):
            target = record_times[rec_idx]
            h_try = min(cfg.dt, target - t)
            while True:
                y_new = _rk4_step(f, y, h_try)
                fixed = positivity_fix(y_new, h_try)
                if fixed is not None:
                    break
                stats["rejected"] += 1
                h_try *= 0.5
            t_prev[0] = t
            t_new = target if h_try == target - t else t + h_try
            y = fixed
            accept(t_new, to_z(y))
            t = t_new
            if t >= target:
                record(t, to_z(y))
                rec_idx += 1

    traj = build()
    if traj.truncation_affected:
        log.append(MonitorEvent(float(traj.times[-1]), "truncation_affected",
                                float(np.max(traj.z_boundary))))
    if "flux_decay" in use:
        terminal = float(traj.max_flux[-1])
        if terminal > cfg.flux_tol:
            log.append(MonitorEvent(float(traj.times[-1]), "flux_not_decayed", terminal, "info"))
    return traj


def step_invariant_report(traj: Trajectory, quad_rtol: float = 1e-3,
                          quad_atol: float = 1e-10) -> InvariantReport:
    """Summarise conservation, monotonicity and dissipation along ``traj``.

    The dissipation check compares the drop of the availability with the
    time integral of :func:`~bdkin.energy.dissipation_lower_bound`,
    accumulated by the trapezoidal rule on accepted steps.
    """
    drift = float(np.max(np.abs(traj.rho - traj.rho0)) / traj.rho0)
    drift = max(drift, traj.max_step_mass_drift)
    drop = float(traj.A[0] - traj.A[-1])
    diss = float(traj.dissipation_integral[-1])
    modified = isinstance(traj.model, ModifiedModel)
    check = drop >= diss * (1 - quad_rtol) - quad_atol if modified else None
    return InvariantReport(
        max_mass_drift=drift,
        availability_violations=int(traj.availability_violations),
        terminal_max_flux=float(traj.max_flux[-1]),
        availability_drop=drop,
        dissipation_integral=diss,
        dissipation_check=check,
        positivity_ok=bool(np.all(traj.states >= 0)),
        truncation_affected=traj.truncation_affected,
        max_boundary_occupancy=float(np.max(traj.z_boundary)),
        clamp_events=int(traj.clamp_events),
    )
