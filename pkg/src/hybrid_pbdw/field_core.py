"""Structured P1 finite elements on the unit square and the dissipative Helmholtz solve.

Fields are complex nodal vectors. The Hilbert space inner product used
throughout the package is ``(u, v) = v^H G u`` (linear in the first
argument), with ``G`` either the H1 Gram (stiffness + mass) or the L2
mass matrix.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "Mesh",
    "BiasForcing",
    "HelmholtzConfig",
    "InnerProduct",
    "ResonanceError",
    "build_mesh",
    "assemble_inner_product",
    "assemble_helmholtz",
    "solve_helmholtz",
    "evaluate_field",
    "triangle_rule",
    "inner",
    "norm",
    "dump_field",
    "load_field",
]


class ResonanceError(RuntimeError):
    """Raised when the Helmholtz operator is (numerically) singular."""

    def __init__(self, mu: float, condition: float):
        self.mu = mu
        self.condition = condition
        super().__init__(
            f"resonance: Helmholtz system at mu={mu:.6g} is near-singular "
            f"(condition estimate {condition:.3e})"
        )


# ---------------------------------------------------------------------------
# Mesh
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Mesh:
    """Structured triangulation of [0, 1]^2.

    Node ``k = j * nx + i`` sits at ``(i / (nx - 1), j / (ny - 1))``. Each
    cell is split along its (0,0)-(1,1) diagonal.
    """

    nx: int
    ny: int
    nodes: np.ndarray
    elements: np.ndarray
    boundary_nodes: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def hx(self) -> float:
        return 1.0 / (self.nx - 1)

    @property
    def hy(self) -> float:
        return 1.0 / (self.ny - 1)

    @property
    def mesh_id(self) -> str:
        return f"struct-{self.nx}x{self.ny}"

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.nodes[self.elements]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def interior_nodes(self) -> np.ndarray:
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.boundary_nodes] = False
        return np.flatnonzero(mask)


def build_mesh(nx: int = 65, ny: int = 65) -> Mesh:
    """Build the structured P1 mesh with ``nx * ny`` nodes (row-major order)."""
    if int(nx) != nx or int(ny) != ny or nx < 2 or ny < 2:
        raise ValueError(f"mesh needs at least 2 nodes per axis, got nx={nx}, ny={ny}")
    nx, ny = int(nx), int(ny)
    xs = np.linspace(0.0, 1.0, nx)
    ys = np.linspace(0.0, 1.0, ny)
    X, Y = np.meshgrid(xs, ys)  # shape (ny, nx), row-major in x
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1))
    n00 = (j * nx + i).ravel()
    n10 = n00 + 1
    n01 = n00 + nx
    n11 = n01 + 1
    lower = np.column_stack([n00, n10, n11])
    upper = np.column_stack([n00, n11, n01])
    elements = np.empty((2 * n00.size, 3), dtype=np.int64)
    elements[0::2] = lower
    elements[1::2] = upper

    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny))
    on_edge = (ii == 0) | (ii == nx - 1) | (jj == 0) | (jj == ny - 1)
    boundary = np.flatnonzero(on_edge.ravel())
    for arr in (nodes, elements, boundary):
        arr.setflags(write=False)
    return Mesh(nx, ny, nodes, elements, boundary)


# ---------------------------------------------------------------------------
# Quadrature and element matrices
# ---------------------------------------------------------------------------


def triangle_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss-Legendre rule on the reference triangle.

    Returns barycentric-free reference points ``(s, t)`` with ``s, t >= 0``,
    ``s + t <= 1`` and weights summing to 1/2. Exact for polynomials of
    total degree ``2 * order - 2``.
    """
    g, w = np.polynomial.legendre.leggauss(order)
    g = 0.5 * (g + 1.0)
    w = 0.5 * w
    a, b = np.meshgrid(g, g, indexing="ij")
    wa, wb = np.meshgrid(w, w, indexing="ij")
    s = a.ravel()
    t = (b * (1.0 - a)).ravel()
    weights = (wa * wb * (1.0 - a)).ravel()
    return np.column_stack([s, t]), weights


def _element_gradients(mesh: Mesh) -> np.ndarray:
    """Gradients of the three P1 shape functions per element, shape (E, 3, 2)."""
    p = mesh.nodes[mesh.elements]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    # inverse transpose of the Jacobian [d1 d2]
    inv = np.empty((mesh.elements.shape[0], 2, 2))
    inv[:, 0, 0] = d2[:, 1] / det
    inv[:, 0, 1] = -d2[:, 0] / det
    inv[:, 1, 0] = -d1[:, 1] / det
    inv[:, 1, 1] = d1[:, 0] / det
    ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    # grad phi_a = J^{-T} ref_a ; inv rows are the rows of J^{-1}
    return np.einsum("ak,ekj->eaj", ref, inv)


def _scatter(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    rows = np.repeat(mesh.elements, 3, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, 3)).ravel()
    n = mesh.n_nodes
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def stiffness_matrix(mesh: Mesh) -> sp.csr_matrix:
    grads = _element_gradients(mesh)
    local = np.einsum("eaj,ebj->eab", grads, grads) * mesh.areas[:, None, None]
    return _scatter(mesh, local)


def mass_matrix(mesh: Mesh) -> sp.csr_matrix:
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    local = mesh.areas[:, None, None] * ref[None]
    return _scatter(mesh, local)


def load_vector(mesh: Mesh, func: Callable[[np.ndarray, np.ndarray], np.ndarray],
                order: int = 4) -> np.ndarray:
    """``f_i = int func * phi_i`` with a collapsed Gauss rule per element."""
    pts, w = triangle_rule(order)
    shape = np.column_stack([1.0 - pts[:, 0] - pts[:, 1], pts[:, 0], pts[:, 1]])
    p = mesh.nodes[mesh.elements]
    x = (p[:, None, :, :] * shape[None, :, :, None]).sum(axis=2)  # (E, Q, 2)
    vals = np.asarray(func(x[..., 0], x[..., 1]))
    vals = np.broadcast_to(vals, x.shape[:2])
    jac = 2.0 * mesh.areas
    local = np.einsum("eq,q,qa->ea", vals, w, shape) * jac[:, None]
    out = np.zeros(mesh.n_nodes, dtype=np.result_type(local.dtype, float))
    np.add.at(out, mesh.elements.ravel(), local.ravel())
    return out


# ---------------------------------------------------------------------------
# Inner products
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class InnerProduct:
    """Sparse Gram matrix of the Hilbert space inner product on a mesh."""

    gram: sp.csc_matrix
    kind: str
    mesh: Mesh

    @cached_property
    def _lu(self):
        return spla.splu(self.gram.tocsc())

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Apply ``G^{-1}``; ``rhs`` may hold several columns."""
        rhs = np.asarray(rhs)
        if np.iscomplexobj(rhs):
            return self._lu.solve(rhs.real) + 1j * self._lu.solve(rhs.imag)
        return self._lu.solve(rhs.astype(float))

    def __call__(self, u: np.ndarray, v: np.ndarray) -> complex:
        return inner(self, u, v)

    @property
    def id(self) -> str:
        return f"{self.kind}@{self.mesh.mesh_id}"


def assemble_inner_product(mesh: Mesh, kind: str = "H1") -> InnerProduct:
    """Assemble the H1 (stiffness + mass) or L2 (mass) Gram matrix."""
    kind = kind.upper()
    if kind == "H1":
        gram = stiffness_matrix(mesh) + mass_matrix(mesh)
    elif kind == "L2":
        gram = mass_matrix(mesh)
    else:
        raise ValueError(f"unknown inner product kind {kind!r}")
    gram = gram.tocsc()
    # exact symmetrization removes round-off from the scatter-add order
    gram = ((gram + gram.T) * 0.5).tocsc()
    gram.sort_indices()
    return InnerProduct(gram, kind, mesh)


def inner(ip: InnerProduct, u: np.ndarray, v: np.ndarray):
    """``(u, v) = v^H G u``. Column-stacked inputs give the Gram block."""
    Gu = ip.gram @ u
    return np.conj(v).T @ Gu


def norm(ip: InnerProduct, u: np.ndarray) -> float:
    return float(np.sqrt(max(np.real(inner(ip, u, u)), 0.0)))


# ---------------------------------------------------------------------------
# Helmholtz problem
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BiasForcing:
    """Source bias ``g = -amplitude * sin(exp(-decay x1) sin(freq * mu * x2))``."""

    amplitude: float = 0.5
    decay: float = 3.0
    freq: float = 5.0

    def __call__(self, mu: float, x1, x2):
        return -self.amplitude * np.sin(np.exp(-self.decay * x1) * np.sin(self.freq * mu * x2))


PERFECT_BIAS = BiasForcing()


@dataclass(frozen=True)
class HelmholtzConfig:
    """Dissipative Helmholtz problem ``-(1 + eps mu i) Lap u - mu^2 u = mu q``.

    ``source="perfect"`` uses ``q = sin(mu x1) sin(mu x2) + g`` with ``g``
    given by ``forcing`` (the nominal bias when ``forcing`` is None);
    ``source="biased"`` drops ``g``.
    """

    mu: float
    epsilon: float = 0.01
    bc: str = "dirichlet"
    source: str = "perfect"
    forcing: Optional[BiasForcing] = None

    def __post_init__(self):
        if not (self.mu > 0):
            raise ValueError(f"mu must be positive, got {self.mu}")
        if not (self.epsilon >= 0):
            raise ValueError(f"epsilon must be nonnegative, got {self.epsilon}")
        if self.bc not in ("dirichlet", "neumann"):
            raise ValueError(f"bc must be 'dirichlet' or 'neumann', got {self.bc!r}")
        if self.source not in ("perfect", "biased"):
            raise ValueError(f"source must be 'perfect' or 'biased', got {self.source!r}")

    def source_term(self, x1, x2):
        mu = self.mu
        q = np.sin(mu * x1) * np.sin(mu * x2)
        if self.source == "perfect":
            q = q + (self.forcing or PERFECT_BIAS)(mu, x1, x2)
        return q

    def with_mu(self, mu: float) -> "HelmholtzConfig":
        return HelmholtzConfig(mu, self.epsilon, self.bc, self.source, self.forcing)


def assemble_helmholtz(mesh: Mesh, cfg: HelmholtzConfig,
                       rhs: Optional[Callable] = None) -> tuple[sp.csc_matrix, np.ndarray]:
    """Galerkin matrix and load vector before boundary conditions.

    ``rhs`` overrides the full right-hand side ``mu * q`` when given.
    """
    K = (1.0 + 1j * cfg.epsilon * cfg.mu) * stiffness_matrix(mesh) - cfg.mu ** 2 * mass_matrix(mesh)
    if rhs is None:
        f = cfg.mu * load_vector(mesh, cfg.source_term)
    else:
        f = load_vector(mesh, rhs)
    return K.tocsc(), f.astype(complex)


class HelmholtzSolver:
    """Factor the Helmholtz operator once and solve for many right-hand sides.

    Dirichlet rows are eliminated (u = 0 on the boundary); Neumann is the
    natural condition. Raises :class:`ResonanceError` if the 1-norm
    condition estimate of the reduced system exceeds ``cond_limit``.
    """

    def __init__(self, mesh: Mesh, cfg: HelmholtzConfig, cond_limit: float = 1e12):
        self.mesh = mesh
        self.cfg = cfg
        K, _ = assemble_helmholtz(mesh, cfg, rhs=lambda x1, x2: np.zeros_like(x1))
        self.free = mesh.interior_nodes if cfg.bc == "dirichlet" else np.arange(mesh.n_nodes)
        Kf = K[self.free][:, self.free].tocsc()
        try:
            self._lu = spla.splu(Kf)
        except RuntimeError as exc:  # exactly singular factor
            raise ResonanceError(cfg.mu, np.inf) from exc
        self.condition = _condition_estimate(Kf, self._lu)
        if not np.isfinite(self.condition) or self.condition > cond_limit:
            raise ResonanceError(cfg.mu, self.condition)

    def solve_load(self, f: np.ndarray) -> np.ndarray:
        """Nodal solution for an assembled load vector ``f``."""
        uf = self._lu.solve(np.asarray(f, dtype=complex)[self.free])
        if not np.all(np.isfinite(uf)):
            raise ResonanceError(self.cfg.mu, self.condition)
        u = np.zeros(self.mesh.n_nodes, dtype=complex)
        u[self.free] = uf
        return u

    def solve(self, cfg: Optional[HelmholtzConfig] = None, rhs: Optional[Callable] = None) -> np.ndarray:
        """Solve with the source of ``cfg`` (default: the factored one) or an explicit ``rhs``."""
        cfg = self.cfg if cfg is None else cfg
        if (cfg.mu, cfg.epsilon, cfg.bc) != (self.cfg.mu, self.cfg.epsilon, self.cfg.bc):
            raise ValueError("configuration differs from the factored operator")
        f = cfg.mu * load_vector(self.mesh, cfg.source_term) if rhs is None else load_vector(self.mesh, rhs)
        return self.solve_load(f)


def solve_helmholtz(mesh: Mesh, cfg: HelmholtzConfig, rhs: Optional[Callable] = None,
                    cond_limit: float = 1e12) -> np.ndarray:
    """Solve the Helmholtz problem and return the complex nodal solution.

    See :class:`HelmholtzSolver` for boundary handling and resonance detection.
    """
    return HelmholtzSolver(mesh, cfg, cond_limit).solve(cfg, rhs)


def _condition_estimate(K: sp.csc_matrix, lu) -> float:
    n = K.shape[0]
    inv_op = spla.LinearOperator((n, n), matvec=lu.solve, rmatvec=lambda x: lu.solve(x, trans="H"),
                                 dtype=complex)
    try:
        inv_norm = spla.onenormest(inv_op)
    except Exception:  # pragma: no cover - estimator breakdown means singular
        return np.inf
    return float(spla.norm(K, 1) * inv_norm)


# ---------------------------------------------------------------------------
# Point evaluation and IO
# ---------------------------------------------------------------------------


def evaluate_field(mesh: Mesh, values: np.ndarray, points: Sequence) -> np.ndarray:
    """P1 interpolation of nodal ``values`` at ``points`` (shape (P, 2))."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    tol = 1e-12
    if np.any(pts < -tol) or np.any(pts > 1.0 + tol):
        raise ValueError("evaluation point outside [0, 1]^2")
    x = _snap(np.clip(pts[:, 0], 0.0, 1.0) * (mesh.nx - 1))
    y = _snap(np.clip(pts[:, 1], 0.0, 1.0) * (mesh.ny - 1))
    i = np.minimum(np.floor(x).astype(int), mesh.nx - 2)
    j = np.minimum(np.floor(y).astype(int), mesh.ny - 2)
    s = x - i
    t = y - j
    n00 = j * mesh.nx + i
    u00 = values[n00]
    u10 = values[n00 + 1]
    u01 = values[n00 + mesh.nx]
    u11 = values[n00 + mesh.nx + 1]
    lower = s >= t
    out = np.where(
        lower,
        u00 + s * (u10 - u00) + t * (u11 - u10),
        u00 + t * (u01 - u00) + s * (u11 - u01),
    )
    return out


def _snap(x: np.ndarray) -> np.ndarray:
    # grid-line coordinates land exactly on their node
    r = np.rint(x)
    return np.where(np.abs(x - r) < 1e-9, r, x)


def dump_field(path, mesh: Mesh, values: np.ndarray) -> None:
    """Write ``nx ny n_nodes`` then one ``x1 x2 re im`` row per node (17 digits)."""
    values = np.asarray(values, dtype=complex)
    with open(path, "w") as fh:
        fh.write(f"# nx ny nodes\n{mesh.nx} {mesh.ny} {mesh.n_nodes}\n")
        for (x1, x2), v in zip(mesh.nodes, values):
            fh.write(f"{x1:.17g} {x2:.17g} {v.real:.17g} {v.imag:.17g}\n")


def load_field(path) -> tuple[Mesh, np.ndarray]:
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    nx, ny, n = (int(tok) for tok in lines[0].split())
    mesh = build_mesh(nx, ny)
    data = np.loadtxt(lines[1:], ndmin=2)
    if data.shape[0] != n or n != mesh.n_nodes:
        raise ValueError("field dump node count does not match its header")
    return mesh, data[:, 2] + 1j * data[:, 3]
