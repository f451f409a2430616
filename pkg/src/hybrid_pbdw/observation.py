"""Gaussian sensors, their Riesz representers and synthetic measurements."""
from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .field_core import InnerProduct, Mesh, triangle_rule

log = logging.getLogger(__name__)

DEFAULT_WIDTH = 0.02
# window is below exp(-40) ~ 4e-18 beyond this many widths
_CUTOFF_WIDTHS = 9.0
_QUAD_ORDER = 8


@dataclass(frozen=True)
class Sensor:
    center: tuple[float, float]
    width: float = DEFAULT_WIDTH

    def __post_init__(self):
        x1, x2 = self.center
        if not (0.0 <= x1 <= 1.0 and 0.0 <= x2 <= 1.0):
            raise ValueError(f"sensor center {self.center} outside [0, 1]^2")
        if not (0.0 < self.width <= 0.25):
            raise ValueError(f"sensor width must lie in (0, 0.25], got {self.width}")
        object.__setattr__(self, "center", (float(x1), float(x2)))
        object.__setattr__(self, "width", float(self.width))

    def window(self, x1, x2):
        """Gaussian window ``(2 pi r^2)^{-1/2} exp(-|x - c|^2 / 2 r^2)``."""
        r2 = self.width ** 2
        d2 = (x1 - self.center[0]) ** 2 + (x2 - self.center[1]) ** 2
        return np.exp(-0.5 * d2 / r2) / np.sqrt(2.0 * np.pi * r2)


def functional_vector(sensor: Sensor, mesh: Mesh, order: int = _QUAD_ORDER) -> np.ndarray:
    """Nodal weights ``f_i = l(phi_i)``, so that ``l(v) = f @ v`` for P1 fields.

    Only elements intersecting the box of half-size ``9 r`` around the
    center are integrated; the window is truncated at the domain boundary.
    """
    pts, w = triangle_rule(order)
    shape = np.column_stack([1.0 - pts[:, 0] - pts[:, 1], pts[:, 0], pts[:, 1]])
    p = mesh.nodes[mesh.elements]
    reach = _CUTOFF_WIDTHS * sensor.width
    cx, cy = sensor.center
    lo = p.min(axis=1)
    hi = p.max(axis=1)
    near = ((hi[:, 0] >= cx - reach) & (lo[:, 0] <= cx + reach)
            & (hi[:, 1] >= cy - reach) & (lo[:, 1] <= cy + reach))
    elems = mesh.elements[near]
    pe = p[near]
    x = np.einsum("qa,ead->eqd", shape, pe)
    vals = sensor.window(x[..., 0], x[..., 1])
    jac = 2.0 * mesh.areas[near]
    local = np.einsum("eq,q,qa->ea", vals, w, shape) * jac[:, None]
    f = np.zeros(mesh.n_nodes)
    np.add.at(f, elems.ravel(), local.ravel())
    return f


def apply_functional(sensor: Sensor, mesh: Mesh, values: np.ndarray) -> complex:
    """Windowed average ``l(v)`` of a P1 field."""
    return functional_vector(sensor, mesh) @ values


def riesz_representer(sensor: Sensor, ip: InnerProduct) -> np.ndarray:
    """Field ``q`` with ``(v, q) = l(v)`` for every P1 field ``v``.

    The functional weights are real, hence so is ``q``.
    """
    f = functional_vector(sensor, ip.mesh)
    q = ip.solve(f)
    if not np.all(np.isfinite(q)):
        raise RuntimeError("Gram solve failed while computing a Riesz representer")
    return q


@dataclass(eq=False)
class SensorSet:
    """Sensors with stacked functionals ``F`` (nodes x M), representers ``Q`` and ``A = F^T Q``."""

    sensors: list[Sensor]
    F: np.ndarray
    Q: np.ndarray
    A: np.ndarray
    ip: InnerProduct
    _chol: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def M(self) -> int:
        return len(self.sensors)

    @property
    def centers(self) -> np.ndarray:
        return np.array([s.center for s in self.sensors], dtype=float).reshape(-1, 2)

    def observe_exact(self, values: np.ndarray) -> np.ndarray:
        return self.F.T @ values

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.ip.id.encode())
        h.update(np.ascontiguousarray(self.centers).tobytes())
        h.update(np.array([s.width for s in self.sensors]).tobytes())
        return h.hexdigest()[:16]

    def extend(self, sensor: Sensor) -> "SensorSet":
        """Append one sensor, growing ``A`` by one row and column."""
        f = functional_vector(sensor, self.ip.mesh)
        q = self.ip.solve(f)
        a_new = self.F.T @ q
        a_nn = f @ q
        A = np.empty((self.M + 1, self.M + 1))
        A[:-1, :-1] = self.A
        A[:-1, -1] = a_new
        A[-1, :-1] = a_new
        A[-1, -1] = a_nn
        return SensorSet(self.sensors + [sensor], np.column_stack([self.F, f]),
                         np.column_stack([self.Q, q]), A, self.ip)


def build_sensor_set(sensors: Sequence[Sensor], ip: InnerProduct) -> SensorSet:
    """Assemble representers and ``A_{m,m'} = l_m(q_{m'})`` for the given sensors."""
    sensors = list(sensors)
    if not sensors:
        raise ValueError("a sensor set needs at least one sensor")
    keys = [(s.center, s.width) for s in sensors]
    if len(set(keys)) != len(keys):
        log.warning("sensor set contains duplicate sensors; A will be singular")
    F = np.column_stack([functional_vector(s, ip.mesh) for s in sensors])
    Q = ip.solve(F)
    if Q.ndim == 1:
        Q = Q[:, None]
    A = F.T @ Q
    A = 0.5 * (A + A.T)
    try:
        sla.cholesky(A, lower=True)
    except sla.LinAlgError as exc:
        raise np.linalg.LinAlgError("observation Gram matrix A is not positive definite") from exc
    return SensorSet(sensors, F, Q, A, ip)


def empty_sensor_set(ip: InnerProduct) -> SensorSet:
    n = ip.mesh.n_nodes
    return SensorSet([], np.zeros((n, 0)), np.zeros((n, 0)), np.zeros((0, 0)), ip)


@dataclass(frozen=True)
class Measurement:
    y: np.ndarray
    noise_level: float = 0.0
    seed: Optional[int] = None


def observe(sset: SensorSet, values: np.ndarray, noise_level: float = 0.0,
            seed: Optional[int] = None) -> Measurement:
    """Noise-free readings times ``(1 + delta r_m)``, ``r_m`` standard normal."""
    if noise_level < 0:
        raise ValueError("noise level must be nonnegative")
    y = sset.observe_exact(np.asarray(values, dtype=complex))
    if noise_level > 0:
        r = np.random.default_rng(seed).standard_normal(y.shape[0])
        y = y * (1.0 + noise_level * r)
    return Measurement(y, float(noise_level), seed)


def random_placement(M: int, min_dist: Optional[float] = None, seed: Optional[int] = None,
                     width: float = DEFAULT_WIDTH, max_attempts: int = 100_000) -> list[Sensor]:
    """Uniform sensor centers with pairwise distance at least ``min_dist``.

    ``min_dist`` defaults to ``1 / sqrt(3 M)``.
    """
    if M < 1:
        raise ValueError("need at least one sensor")
    if min_dist is None:
        min_dist = 1.0 / np.sqrt(3.0 * M)
    rng = np.random.default_rng(seed)
    pts: list[np.ndarray] = []
    attempts = 0
    while len(pts) < M:
        if attempts >= max_attempts:
            raise RuntimeError(
                f"could only place {len(pts)} of {M} sensors with min distance {min_dist:.4g}"
            )
        attempts += 1
        cand = rng.uniform(0.0, 1.0, size=2)
        if all(np.hypot(*(cand - p)) >= min_dist for p in pts):
            pts.append(cand)
    return [Sensor((p[0], p[1]), width) for p in pts]


# ---------------------------------------------------------------------------
# CSV interfaces
# ---------------------------------------------------------------------------


def write_sensors(path, sensors: Iterable[Sensor]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "x1", "x2", "r"])
        for k, s in enumerate(sensors):
            w.writerow([k, repr(s.center[0]), repr(s.center[1]), repr(s.width)])


def read_sensors(path) -> list[Sensor]:
    with open(path, newline="") as fh:
        rows = [r for r in csv.DictReader(ln for ln in fh if not ln.startswith("#"))]
    rows.sort(key=lambda r: int(r["index"]))
    return [Sensor((float(r["x1"]), float(r["x2"])), float(r["r"])) for r in rows]


def write_measurement(path, y: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "re", "im"])
        for k, v in enumerate(np.asarray(y, dtype=complex)):
            w.writerow([k, repr(float(v.real)), repr(float(v.imag))])


def read_measurement(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))
    rows.sort(key=lambda r: int(r["index"]))
    return np.array([complex(float(r["re"]), float(r["im"])) for r in rows])
