"""PBDW state estimation: saddle-point and two-step solves, stability, GCV, metrics.

With observation Gram ``A`` (M x M, Hermitian PD), coupling ``B`` (M x N) and
data ``y``, the regularized PBDW coefficients solve::

    [ xi M I + A   B ] [eta]   [y]
    [ B^H          0 ] [ z ] = [0]

``xi = 0`` is the classical method (PBDW), ``xi > 0`` the regularized one
(APBDW).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla

from . import instrument
from .field_core import InnerProduct, norm
from .observation import SensorSet
from .reduced_basis import BackgroundBasis, projection_error

RANK_TOL = 1e-12


class UnobservableBackground(np.linalg.LinAlgError):
    """``B`` lacks full column rank: some background directions are not seen by the sensors."""

    def __init__(self, deficient: int, N: int):
        self.deficient = deficient
        super().__init__(f"unobservable background: {deficient} of {N} columns of B are rank deficient")


def _check_inputs(A, B, xi):
    A = np.asarray(A)
    B = np.asarray(B)
    M = A.shape[0]
    if A.shape != (M, M):
        raise ValueError("A must be square")
    if B.ndim != 2 or B.shape[0] != M:
        raise ValueError(f"B must have {M} rows, got shape {B.shape}")
    if xi < 0:
        raise ValueError("regularization weight must be nonnegative")
    N = B.shape[1]
    if N > M:
        raise UnobservableBackground(N - M, N)
    if N:
        s = np.linalg.svd(B, compute_uv=False)
        rank = int(np.sum(s > RANK_TOL * s[0])) if s[0] > 0 else 0
        if rank < N:
            raise UnobservableBackground(N - rank, N)
    return A, B, M, N


def _weight_matrix(A, xi):
    M = A.shape[0]
    return xi * M * np.eye(M) + A


def solve_saddle(A, B, y, xi: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Monolithic (M+N) block solve; returns ``(z, eta)``.

    One step of iterative refinement is applied to the LU solution.
    """
    A, B, M, N = _check_inputs(A, B, xi)
    y = np.asarray(y)
    dtype = np.result_type(A, B, y, complex)
    K = np.zeros((M + N, M + N), dtype=dtype)
    K[:M, :M] = _weight_matrix(A, xi)
    K[:M, M:] = B
    K[M:, :M] = B.conj().T
    rhs = np.zeros((M + N,) + y.shape[1:], dtype=dtype)
    rhs[:M] = y
    instrument.record("saddle", M + N)
    try:
        lu = sla.lu_factor(K, check_finite=True)
    except (sla.LinAlgError, ValueError) as exc:
        raise np.linalg.LinAlgError("singular PBDW saddle system") from exc
    if np.any(np.abs(np.diag(lu[0])) == 0):
        raise np.linalg.LinAlgError("singular PBDW saddle system")
    x = sla.lu_solve(lu, rhs)
    x = x + sla.lu_solve(lu, rhs - K @ x)
    return x[M:], x[:M]


def background_stage(A, B, y, xi: float = 0.0) -> np.ndarray:
    """Background coefficients ``z = argmin ||y - B z||_W`` with ``W = (xi M I + A)^{-1}``."""
    z, _, _ = _two_step(A, B, y, xi)
    return z


def _two_step(A, B, y, xi):
    A, B, M, N = _check_inputs(A, B, xi)
    y = np.asarray(y)
    P = _weight_matrix(A, xi)
    instrument.record("weight", M)
    try:
        cf = sla.cho_factor(P, lower=True)
    except sla.LinAlgError as exc:
        raise np.linalg.LinAlgError("xi M I + A is not positive definite") from exc
    Wy = sla.cho_solve(cf, y)
    if N == 0:
        return np.zeros((0,) + y.shape[1:], dtype=np.result_type(y, complex)), Wy, cf
    WB = sla.cho_solve(cf, B)
    normal = B.conj().T @ WB
    normal = 0.5 * (normal + normal.conj().T)
    instrument.record("normal", N)
    z = sla.cho_solve(sla.cho_factor(normal, lower=True), B.conj().T @ Wy)
    return z, Wy, cf


def solve_two_step(A, B, y, xi: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Weighted least squares for ``z`` then ``eta = W (y - B z)``; returns ``(z, eta)``."""
    z, _, cf = _two_step(A, B, y, xi)
    B = np.asarray(B)
    eta = sla.cho_solve(cf, np.asarray(y) - B @ z)
    return z, eta


@dataclass
class PbdwSolution:
    z: np.ndarray
    eta: np.ndarray
    xi: float
    reconstructed: np.ndarray
    background: np.ndarray
    update: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def orthogonality_residual(B, eta) -> float:
    return float(np.linalg.norm(np.asarray(B).conj().T @ eta) / max(np.linalg.norm(eta), np.finfo(float).tiny))


def assemble_solution(basis: BackgroundBasis, sset: SensorSet, z, eta, xi: float, y=None) -> PbdwSolution:
    """Fields ``sum z_n zeta_n`` and ``sum eta_m q_m`` plus diagnostics."""
    background = basis.modes @ z if basis.N else np.zeros(sset.Q.shape[0], dtype=complex)
    update = sset.Q @ eta
    diag = {"orthogonality_residual": orthogonality_residual(basis.B, eta)}
    if y is not None:
        pred = sset.A @ eta + basis.B @ z + xi * sset.M * eta
        diag["observation_residual"] = float(np.linalg.norm(pred - y) / max(np.linalg.norm(y), np.finfo(float).tiny))
    return PbdwSolution(np.asarray(z), np.asarray(eta), float(xi), background + update, background, update, diag)


def pbdw(basis: BackgroundBasis, sset: SensorSet, y, xi: float = 0.0, method: str = "saddle") -> PbdwSolution:
    """Full PBDW reconstruction from data ``y`` (``basis`` must be bound to ``sset``)."""
    if basis.B is None or basis.B.shape[0] != sset.M:
        raise ValueError("basis is not bound to this sensor set")
    solver = {"saddle": solve_saddle, "two_step": solve_two_step}[method]
    z, eta = solver(sset.A, basis.B, y, xi)
    return assemble_solution(basis, sset, z, eta, xi, y)


# ---------------------------------------------------------------------------
# Stability
# ---------------------------------------------------------------------------


@dataclass
class StabilityReport:
    beta: float
    N: int
    M: int
    least_stable_mode: np.ndarray
    unstable: bool = False


def inf_sup(B, A, chol: Optional[np.ndarray] = None) -> StabilityReport:
    """Inf-sup constant from ``beta^2 = lambda_min(B^H A^{-1} B)`` (orthonormal background).

    ``chol`` may supply the lower Cholesky factor of ``A``. For ``N > M`` the
    constant is zero and the report is flagged unstable; the returned mode
    then spans a background direction invisible to the sensors.
    """
    A = np.asarray(A)
    B = np.asarray(B)
    M, N = B.shape
    if N == 0:
        return StabilityReport(1.0, 0, M, np.zeros(0, dtype=complex))
    if M == 0:
        w = np.zeros(N, dtype=complex)
        w[0] = 1.0
        return StabilityReport(0.0, N, M, w, unstable=True)
    L = sla.cholesky(A, lower=True) if chol is None else chol
    X = sla.solve_triangular(L, B, lower=True)
    T = X.conj().T @ X
    T = 0.5 * (T + T.conj().T)
    lam, V = np.linalg.eigh(T)
    if N > M:
        return StabilityReport(0.0, N, M, V[:, 0].astype(complex), unstable=True)
    beta = float(np.sqrt(max(lam[0], 0.0)))
    return StabilityReport(beta, N, M, V[:, 0].astype(complex))


# ---------------------------------------------------------------------------
# A priori bound
# ---------------------------------------------------------------------------


def update_best_fit(basis: BackgroundBasis, sset: SensorSet, u_true: np.ndarray) -> float:
    """``inf_{q in U_M cap Z_N^perp} || P_{Z^perp} u - q ||``."""
    ip = basis.ip
    w = u_true - basis.project(u_true) if basis.N else np.array(u_true, dtype=complex)
    B = basis.B
    if basis.N:
        V = sla.null_space(B.conj().T)
    else:
        V = np.eye(sset.M)
    if V.shape[1] == 0:
        return norm(ip, w)
    QV = sset.Q @ V
    lhs = V.conj().T @ sset.A @ V
    rhs = QV.conj().T @ (ip.gram @ w)
    d = np.linalg.solve(lhs, rhs)
    return norm(ip, w - QV @ d)


def error_bound_check(solution: PbdwSolution, u_true: np.ndarray, beta: float,
                      basis: BackgroundBasis, sset: SensorSet, noise_level: float = 0.0) -> dict:
    """Evaluate ``||u - u_NM|| <= (1 + 1/beta) * update best-fit`` (noise-free, xi = 0 only)."""
    if solution.xi > 0 or noise_level > 0:
        raise ValueError("the a priori bound only holds for noise-free data and xi = 0")
    lhs = norm(basis.ip, u_true - solution.reconstructed)
    best = update_best_fit(basis, sset, u_true)
    rhs = np.inf if beta <= 0 else (1.0 + 1.0 / beta) * best
    # round-off allowance for the perfect-fit case
    slack = 1e-9 * max(norm(basis.ip, u_true), 1.0)
    return {"lhs": lhs, "rhs": rhs, "best_fit": best, "satisfied": bool(lhs <= rhs + slack)}


# ---------------------------------------------------------------------------
# Generalized cross-validation
# ---------------------------------------------------------------------------


def gcv_score(A, B, y, xi: float) -> float:
    """``||(I - H) y||^2 / tr(I - H)^2`` where ``H y = A eta + B z``."""
    M = np.asarray(A).shape[0]
    z, eta = solve_two_step(A, B, np.eye(M, dtype=complex), xi)
    H = np.asarray(A) @ eta + np.asarray(B) @ z
    R = np.eye(M) - H
    num = np.linalg.norm(R @ y) ** 2
    den = np.real(np.trace(R)) ** 2
    return float(num / den) if den > 0 else np.nan


def gcv_select(A, B, y, xi_grid: Sequence[float], rtol: float = 1e-10) -> float:
    """Grid value of ``xi`` minimizing the GCV score; ties go to the larger ``xi``."""
    grid = np.asarray(list(xi_grid), dtype=float)
    if grid.size == 0:
        raise ValueError("empty regularization grid")
    if np.any(grid <= 0):
        raise ValueError("GCV grid must be positive")
    if grid.size == 1:
        return float(grid[0])
    scores = np.array([gcv_score(A, B, y, xi) for xi in grid])
    if np.all(np.isnan(scores)):
        raise FloatingPointError("GCV score undefined on the whole grid")
    best = np.nanmin(scores)
    ties = np.flatnonzero(scores <= best * (1 + rtol))
    return float(grid[ties].max())


def default_xi_grid() -> np.ndarray:
    return np.logspace(-10, 1, 45)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def metrics(solution: PbdwSolution, u_true: np.ndarray, basis: BackgroundBasis, l2: InnerProduct) -> dict:
    """Squared L2 recovery/background errors, update norm and projection error.

    ``rel_error`` is the (unsquared) relative L2 recovery error.
    """
    err = u_true - solution.reconstructed
    truth_norm = norm(l2, u_true)
    return {
        "e_exact": norm(l2, err) ** 2,
        "e_estim": norm(l2, u_true - solution.background) ** 2,
        "eta_norm": norm(l2, solution.update),
        "e_svd": projection_error(basis, u_true),
        "rel_error": norm(l2, err) / truth_norm if truth_norm > 0 else 0.0,
    }
