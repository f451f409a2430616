"""Greedy stability-maximizing sensor placement and its comparison with random placement."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .assimilation import UnobservableBackground, inf_sup, metrics, pbdw
from .field_core import InnerProduct, Mesh, evaluate_field
from .observation import (
    DEFAULT_WIDTH,
    Sensor,
    SensorSet,
    build_sensor_set,
    empty_sensor_set,
    random_placement,
)
from .reduced_basis import BackgroundBasis, bind_sensors

# full Cholesky refresh period for the incrementally grown A
CHOL_REFRESH = 10


def candidate_grid(mesh: Mesh) -> np.ndarray:
    """Mesh nodes minus the one-cell boundary layer."""
    return mesh.nodes[mesh.interior_nodes]


@dataclass
class PlacementState:
    chosen: list[Sensor] = field(default_factory=list)
    sensor_set: Optional[SensorSet] = None
    betas: list[tuple[int, int, float]] = field(default_factory=list)  # (M, N, beta)
    candidate_grid: Optional[np.ndarray] = None

    def beta_curve(self) -> np.ndarray:
        return np.array([b for _, _, b in self.betas])


def _argmax_lex(values: np.ndarray, grid: np.ndarray, forbidden: np.ndarray) -> int:
    vals = np.where(forbidden, -np.inf, values)
    top = vals.max()
    if not np.isfinite(top):
        raise RuntimeError("no admissible candidate point left")
    ties = np.flatnonzero(vals == top)
    if ties.size == 1:
        return int(ties[0])
    order = np.lexsort((grid[ties, 1], grid[ties, 0]))
    return int(ties[order[0]])


def _append_cholesky(L: np.ndarray, a_col: np.ndarray, a_diag: float) -> np.ndarray:
    m = L.shape[0]
    out = np.zeros((m + 1, m + 1))
    out[:m, :m] = L
    if m:
        row = sla.solve_triangular(L, a_col, lower=True)
        out[m, :m] = row
        d2 = a_diag - row @ row
    else:
        d2 = a_diag
    if d2 <= 0:
        raise np.linalg.LinAlgError("incremental Cholesky update lost positive definiteness")
    out[m, m] = np.sqrt(d2)
    return out


def sgreedy(basis: BackgroundBasis, N_max: int, M_max: int, ip: InnerProduct,
            width: float = DEFAULT_WIDTH, grid: Optional[np.ndarray] = None) -> PlacementState:
    """Stability-maximizing greedy placement.

    At step ``M`` with ``N = min(N_max, M)`` the least-stable background
    mode ``w`` against the current update space is found, its projection
    ``v`` onto that space is subtracted, and a sensor is put where
    ``|w - v|`` is largest on the candidate grid. Ties go to the
    lexicographically smallest ``(x1, x2)``; grid points are used at most once.
    """
    if N_max < 1 or M_max < 1:
        raise ValueError("N_max and M_max must be at least 1")
    if N_max > basis.N:
        raise ValueError(f"basis holds {basis.N} modes, fewer than N_max={N_max}")
    mesh = ip.mesh
    grid = candidate_grid(mesh) if grid is None else np.asarray(grid, dtype=float).reshape(-1, 2)
    if grid.shape[0] == 0:
        raise ValueError("candidate grid is empty")
    used = np.zeros(grid.shape[0], dtype=bool)
    sset = empty_sensor_set(ip)
    L = np.zeros((0, 0))
    state = PlacementState(candidate_grid=grid)

    for M in range(1, M_max + 1):
        N = min(N_max, M)
        Z = basis.modes[:, :N]
        if M == 1:
            w = Z[:, 0]
            v_sup = np.zeros_like(w)
        else:
            B = sset.F.T @ Z
            rep = inf_sup(B, sset.A, chol=L)
            w = Z @ rep.least_stable_mode
            c = sla.cho_solve((L, True), sset.F.T @ w)
            v_sup = sset.Q @ c
        resid = np.abs(evaluate_field(mesh, w - v_sup, grid))
        k = _argmax_lex(resid, grid, used)
        used[k] = True
        sensor = Sensor((grid[k, 0], grid[k, 1]), width)
        sset = sset.extend(sensor)
        if M % CHOL_REFRESH == 0:
            L = sla.cholesky(sset.A, lower=True)
        else:
            L = _append_cholesky(L, sset.A[:-1, -1], sset.A[-1, -1])
        B = sset.F.T @ Z
        state.betas.append((M, N, inf_sup(B, sset.A, chol=L).beta))
        state.chosen.append(sensor)
    state.sensor_set = sset
    return state


def _rel_error(basis: BackgroundBasis, sset: SensorSet, u_true: np.ndarray, l2: InnerProduct) -> tuple[float, float]:
    bound = bind_sensors(basis, sset)
    beta = inf_sup(bound.B, sset.A).beta
    try:
        sol = pbdw(bound, sset, sset.observe_exact(u_true), 0.0)
    except UnobservableBackground:
        return beta, float("inf")
    return beta, metrics(sol, u_true, bound, l2)["rel_error"]


def compare_strategies(basis: BackgroundBasis, N: int, M_list: Sequence[int], seeds: Sequence[int],
                       u_true: np.ndarray, ip: InnerProduct, l2: InnerProduct,
                       width: float = DEFAULT_WIDTH, grid: Optional[np.ndarray] = None) -> list[dict]:
    """Rows ``{M, N, strategy, seed, beta, rel_error}``.

    SGreedy is deterministic and reported once per ``M`` with ``seed = -1``;
    its sensor sets are nested prefixes of a single greedy run.
    """
    M_list = sorted({int(m) for m in M_list})
    if not M_list:
        raise ValueError("empty M list")
    sub = basis.truncate(N)
    rows = []
    greedy = sgreedy(sub, N, max(M_list), ip, width=width, grid=grid)
    for M in M_list:
        sset = build_sensor_set(greedy.chosen[:M], ip)
        beta, err = _rel_error(sub, sset, u_true, l2)
        rows.append({"M": M, "N": N, "strategy": "sgreedy", "seed": -1, "beta": beta, "rel_error": err})
    for seed in seeds:
        for M in M_list:
            sensors = random_placement(M, seed=int(seed), width=width)
            sset = build_sensor_set(sensors, ip)
            beta, err = _rel_error(sub, sset, u_true, l2)
            rows.append({"M": M, "N": N, "strategy": "random", "seed": int(seed), "beta": beta, "rel_error": err})
    return rows


def write_betas(path, state: PlacementState) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["M", "N", "beta"])
        for M, N, beta in state.betas:
            w.writerow([M, N, repr(float(beta))])
