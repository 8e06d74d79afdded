"""Cluster states, their basic observables and the tail-sum coordinates.

A state is the finite vector ``z_1, ..., z_m`` of cluster number densities,
with an implicit zero tail beyond the truncation ``m``.  The tail sums
``zeta_l = sum_{n >= l} z_n`` give an equivalent description in which the
mass is simply ``sum(zeta)`` and the number of droplets is ``zeta_1``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvariantError, RangeError

__all__ = [
    "ClusterState",
    "ZetaState",
    "as_values",
    "mass",
    "droplet_count",
    "to_zeta",
    "from_zeta",
    "state_to_json",
    "state_from_json",
    "state_to_csv",
    "state_from_csv",
]


def _frozen_array(values) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ClusterState:
    """Nonnegative truncated cluster distribution ``z_1..z_m`` with ``m >= 2``."""

    values: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.values)
        if arr.size < 2:
            raise InvariantError(f"truncation must be >= 2, got {arr.size}")
        if not np.all(np.isfinite(arr)):
            raise InvariantError("cluster densities must be finite")
        if np.any(arr < 0):
            raise InvariantError(f"negative cluster density {arr.min()!r}")
        object.__setattr__(self, "values", arr)

    @property
    def truncation(self) -> int:
        return int(self.values.size)

    @classmethod
    def monodisperse(cls, rho0: float, m: int) -> "ClusterState":
        """All mass in free atoms: ``(rho0, 0, ..., 0)``."""
        z = np.zeros(m)
        z[0] = rho0
        return cls(z)

    def __len__(self) -> int:
        return self.truncation

    def __eq__(self, other) -> bool:
        if not isinstance(other, ClusterState):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    def __hash__(self) -> int:
        return hash(self.values.tobytes())


@dataclass(frozen=True, eq=False)
class ZetaState:
    """Nonincreasing nonnegative tail sums ``zeta_1..zeta_m``; ``zeta_{m+1} = 0``."""

    values: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.values)
        if arr.size < 2:
            raise InvariantError(f"truncation must be >= 2, got {arr.size}")
        if not np.all(np.isfinite(arr)):
            raise InvariantError("tail sums must be finite")
        if arr[-1] < 0 or np.any(np.diff(arr) > 0):
            raise InvariantError("tail sums must be nonincreasing and nonnegative")
        object.__setattr__(self, "values", arr)

    @property
    def truncation(self) -> int:
        return int(self.values.size)

    def __len__(self) -> int:
        return self.truncation


def as_values(z) -> np.ndarray:
    """Return the raw float array behind a state or array-like."""
    if isinstance(z, (ClusterState, ZetaState)):
        return z.values
    return np.asarray(z, dtype=float).reshape(-1)


def mass(z, compensated: bool = False) -> float:
    """Total number of atoms ``sum_l l * z_l``."""
    v = as_values(z)
    terms = np.arange(1, v.size + 1) * v
    if compensated:
        return math.fsum(terms)
    return float(np.sum(terms))


def droplet_count(z, from_size: int = 1, compensated: bool = False) -> float:
    """Number of droplets of size at least ``from_size``."""
    v = as_values(z)
    if not 1 <= from_size <= v.size:
        raise RangeError(f"from_size={from_size} outside 1..{v.size}")
    tail = v[from_size - 1:]
    if compensated:
        return math.fsum(tail)
    return float(np.sum(tail))


def tail_sums(v: np.ndarray) -> np.ndarray:
    """Unchecked ``zeta`` transform of a raw array."""
    return np.cumsum(v[::-1])[::-1]


def tail_differences(zeta: np.ndarray) -> np.ndarray:
    """Unchecked inverse of :func:`tail_sums`."""
    z = np.empty_like(zeta)
    z[:-1] = zeta[:-1] - zeta[1:]
    z[-1] = zeta[-1]
    return z


def to_zeta(z) -> ZetaState:
    v = as_values(z)
    if isinstance(z, ClusterState):
        return ZetaState(tail_sums(v))
    return ZetaState(tail_sums(ClusterState(v).values))


def from_zeta(zeta) -> ClusterState:
    """Recover ``z_l = zeta_l - zeta_{l+1}``.

    Raises
    ------
    InvariantError
        If the input increases anywhere.
    """
    if not isinstance(zeta, ZetaState):
        zeta = ZetaState(zeta)
    return ClusterState(tail_differences(zeta.values))


def state_to_json(z) -> str:
    return json.dumps([float(x) for x in as_values(z)])


def state_from_json(text: str) -> ClusterState:
    data = json.loads(text)
    if not isinstance(data, list):
        raise InvariantError("state JSON must be an array [z_1, ..., z_m]")
    return ClusterState(data)


def state_to_csv(z) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["l", "z_l"])
    for l, x in enumerate(as_values(z), start=1):
        writer.writerow([l, repr(float(x))])
    return buf.getvalue()


def state_from_csv(text: str) -> ClusterState:
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if rows and rows[0][0].strip() == "l":
        rows = rows[1:]
    sizes = [int(r[0]) for r in rows]
    if sizes != list(range(1, len(sizes) + 1)):
        raise InvariantError("CSV rows must list l = 1..m in order")
    return ClusterState([float(r[1]) for r in rows])
