"""Best-knowledge snapshots, POD background spaces and projection errors."""
from __future__ import annotations

import hashlib
import logging
import warnings
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .field_core import HelmholtzConfig, InnerProduct, Mesh, ResonanceError, solve_helmholtz
from .observation import SensorSet

log = logging.getLogger(__name__)

BASIS_FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class SnapshotSet:
    parameters: np.ndarray
    snapshots: np.ndarray  # nodes x K
    config: HelmholtzConfig

    def __len__(self) -> int:
        return self.snapshots.shape[1]


def generate_snapshots(mesh: Mesh, grid: Sequence[float], cfg: HelmholtzConfig) -> SnapshotSet:
    """One Helmholtz solve per wavenumber in ``grid`` with the model ``cfg``."""
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size == 0:
        raise ValueError("parameter grid is empty")
    cols = []
    for mu in grid:
        try:
            cols.append(solve_helmholtz(mesh, cfg.with_mu(float(mu))))
        except ResonanceError as exc:
            raise ResonanceError(float(mu), exc.condition) from exc
    return SnapshotSet(grid, np.column_stack(cols), cfg)


@dataclass(frozen=True, eq=False)
class BackgroundBasis:
    """Orthonormal modes (nodes x N) with POD singular values and optional ``B``."""

    modes: np.ndarray
    singular_values: np.ndarray
    ip: InnerProduct
    B: Optional[np.ndarray] = None

    @property
    def N(self) -> int:
        return self.modes.shape[1]

    def truncate(self, N: int) -> "BackgroundBasis":
        if N > self.N:
            raise ValueError(f"cannot truncate a {self.N}-mode basis to {N} modes")
        B = None if self.B is None else self.B[:, :N]
        return replace(self, modes=self.modes[:, :N], B=B)

    def coefficients(self, values: np.ndarray) -> np.ndarray:
        """``c_n = (v, zeta_n)``."""
        return self.modes.conj().T @ (self.ip.gram @ values)

    def project(self, values: np.ndarray) -> np.ndarray:
        return self.modes @ self.coefficients(values)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.ip.id.encode())
        h.update(np.ascontiguousarray(self.modes).tobytes())
        return h.hexdigest()[:16]


def pod(snapshots: SnapshotSet | np.ndarray, ip: InnerProduct, N: int,
        rank_tol: float = 1e-7) -> BackgroundBasis:
    """Method-of-snapshots POD in the ``ip`` norm.

    The K x K snapshot Gram ``S^H G S`` is diagonalized; mode ``k`` is
    ``S v_k / sigma_k`` with ``sigma_k^2`` the k-th eigenvalue. Each mode's
    phase is fixed so that its largest-magnitude nodal value is real and
    positive. ``singular_values`` holds the full spectrum. Singular values
    below ``rank_tol * sigma_1`` are at the round-off floor of the snapshot
    Gram eigenvalues (about ``sqrt(eps)``) and count as rank deficient.
    """
    S = snapshots.snapshots if isinstance(snapshots, SnapshotSet) else np.asarray(snapshots)
    S = S.astype(complex)
    K = S.shape[1]
    if N < 0 or N > K:
        raise ValueError(f"N={N} must lie in [0, {K}]")
    C = S.conj().T @ (ip.gram @ S)
    C = 0.5 * (C + C.conj().T)
    lam, V = np.linalg.eigh(C)
    order = np.argsort(lam)[::-1]
    lam = np.clip(lam[order], 0.0, None)
    V = V[:, order]
    sigma = np.sqrt(lam)
    rank = int(np.sum(sigma > rank_tol * max(sigma[0], np.finfo(float).tiny))) if K else 0
    if N > rank:
        warnings.warn(f"requested N={N} exceeds numerical rank {rank}; truncating", RuntimeWarning)
        N = rank
    modes = S @ V[:, :N] / sigma[:N]
    # re-orthonormalize against round-off (Gram-Schmidt twice in the ip norm)
    for _ in range(2):
        for n in range(N):
            for k in range(n):
                modes[:, n] -= (modes[:, k].conj() @ (ip.gram @ modes[:, n])) * modes[:, k]
            modes[:, n] /= np.sqrt(np.real(modes[:, n].conj() @ (ip.gram @ modes[:, n])))
    for n in range(N):
        k = int(np.argmax(np.abs(modes[:, n])))
        modes[:, n] *= np.conj(modes[k, n]) / abs(modes[k, n])
        modes[k, n] = abs(modes[k, n])
    return BackgroundBasis(modes, sigma, ip)


def bind_sensors(basis: BackgroundBasis, sset: SensorSet) -> BackgroundBasis:
    """Fill ``B_{m,n} = l_m(zeta_n)``."""
    if sset.ip.mesh is not basis.ip.mesh and sset.ip.mesh.n_nodes != basis.ip.mesh.n_nodes:
        raise ValueError("sensor set and basis live on different meshes")
    if sset.ip.kind != basis.ip.kind:
        raise ValueError("sensor set and basis use different inner products")
    B = sset.F.T @ basis.modes
    return replace(basis, B=B.reshape(sset.M, basis.N))


def projection_error(basis: BackgroundBasis, values: np.ndarray, N: Optional[int] = None) -> float:
    """Best-fit distance ``||v - P_Z v||`` in the basis inner-product norm."""
    modes = basis.modes if N is None else basis.modes[:, :N]
    r = values - modes @ (modes.conj().T @ (basis.ip.gram @ values))
    return float(np.sqrt(max(np.real(r.conj() @ (basis.ip.gram @ r)), 0.0)))


def manifold_error(basis: BackgroundBasis, N: int) -> float:
    """Relative RMS projection error of the training snapshots onto the first N modes.

    Equals ``sqrt(sum_{k>N} sigma_k^2 / sum_k sigma_k^2)``.
    """
    lam = basis.singular_values ** 2
    total = lam.sum()
    return float(np.sqrt(lam[N:].sum() / total)) if total > 0 else 0.0


def save_basis(path, basis: BackgroundBasis) -> None:
    np.savez(
        path,
        version=np.int64(BASIS_FORMAT_VERSION),
        kind=np.array(basis.ip.kind),
        mesh=np.array([basis.ip.mesh.nx, basis.ip.mesh.ny]),
        N=np.int64(basis.N),
        singular_values=basis.singular_values,
        modes=basis.modes,
    )


def load_basis(path, ip: InnerProduct) -> BackgroundBasis:
    with np.load(path) as data:
        if int(data["version"]) != BASIS_FORMAT_VERSION:
            raise ValueError(f"unsupported basis file version {int(data['version'])}")
        if str(data["kind"]) != ip.kind:
            raise ValueError("basis file was built with a different inner product")
        if tuple(data["mesh"]) != (ip.mesh.nx, ip.mesh.ny):
            raise ValueError("basis file was built on a different mesh")
        return BackgroundBasis(data["modes"].copy(), data["singular_values"].copy(), ip)
