"""Mesh, quadrature, inner products, Helmholtz solver and field IO."""
from __future__ import annotations

from math import factorial

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from hybrid_pbdw.field_core import (
    HelmholtzConfig,
    PERFECT_BIAS,
    HelmholtzSolver,
    ResonanceError,
    assemble_helmholtz,
    assemble_inner_product,
    build_mesh,
    dump_field,
    evaluate_field,
    inner,
    load_field,
    load_vector,
    mass_matrix,
    norm,
    solve_helmholtz,
    stiffness_matrix,
    triangle_rule,
)


def manufactured_error(n: int, mu: float = 6.0, eps: float = 0.01) -> float:
    """L2 nodal error for ``u = sin(pi x1) sin(pi x2)`` with homogeneous Dirichlet data."""
    mesh = build_mesh(n, n)
    cfg = HelmholtzConfig(mu, eps, bc="dirichlet")
    coef = (1.0 + 1j * eps * mu) * 2.0 * np.pi ** 2 - mu ** 2

    def exact(x1, x2):
        return np.sin(np.pi * x1) * np.sin(np.pi * x2)

    u = solve_helmholtz(mesh, cfg, rhs=lambda x1, x2: coef * exact(x1, x2))
    l2 = assemble_inner_product(mesh, "L2")
    return norm(l2, u - exact(mesh.nodes[:, 0], mesh.nodes[:, 1]))


class TestMesh:
    @pytest.mark.parametrize("n, nodes, tris, bnd", [(2, 4, 2, 4), (3, 9, 8, 8), (17, 289, 512, 64)])
    def test_counts(self, n, nodes, tris, bnd):
        m = build_mesh(n, n)
        assert m.n_nodes == nodes
        assert m.elements.shape == (tris, 3)
        assert m.boundary_nodes.size == bnd

    def test_areas_positive_and_sum_to_one(self):
        m = build_mesh(65, 65)
        assert np.all(m.areas > 0)
        np.testing.assert_allclose(m.areas.sum(), 1.0, rtol=1e-13)

    def test_row_major_numbering(self):
        m = build_mesh(5, 4)
        k = 2 * 5 + 3
        np.testing.assert_allclose(m.nodes[k], [3 / 4, 2 / 3])

    def test_each_interior_edge_shared_twice(self):
        m = build_mesh(9, 9)
        edges = np.sort(np.concatenate([m.elements[:, [0, 1]], m.elements[:, [1, 2]], m.elements[:, [0, 2]]]), axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        assert set(counts) == {1, 2}
        # boundary edges: 4 sides of 8 segments
        assert np.sum(counts == 1) == 32

    def test_rejects_degenerate(self):
        with pytest.raises(ValueError):
            build_mesh(1, 5)


class TestQuadrature:
    @pytest.mark.parametrize("a, b", [(0, 0), (1, 0), (2, 1), (3, 3), (0, 6)])
    def test_monomials_exact(self, a, b):
        pts, w = triangle_rule(4)
        exact = factorial(a) * factorial(b) / factorial(a + b + 2)
        np.testing.assert_allclose(np.sum(w * pts[:, 0] ** a * pts[:, 1] ** b), exact, rtol=1e-13)

    def test_load_vector_of_one_is_mass_row_sum(self, mesh17):
        f = load_vector(mesh17, lambda x1, x2: np.ones_like(x1))
        np.testing.assert_allclose(f, mass_matrix(mesh17) @ np.ones(mesh17.n_nodes), atol=1e-15)


class TestInnerProduct:
    def test_constant_l2_norm(self, l2_17):
        np.testing.assert_allclose(norm(l2_17, 2.0 * np.ones(l2_17.mesh.n_nodes)), 2.0, rtol=1e-13)

    def test_linear_h1_norm(self):
        # ||x1||_H1^2 = 1 + 1/3, exact for P1 interpolants of linear fields
        m = build_mesh(65, 65)
        h1 = assemble_inner_product(m, "H1")
        np.testing.assert_allclose(norm(h1, m.nodes[:, 0]) ** 2, 4.0 / 3.0, atol=2e-3)

    def test_stiffness_kernel_is_constants(self, mesh17):
        np.testing.assert_allclose(stiffness_matrix(mesh17) @ np.ones(mesh17.n_nodes), 0.0, atol=1e-12)

    def test_conjugate_symmetry(self, h1_17):
        rng = np.random.default_rng(0)
        n = h1_17.mesh.n_nodes
        u = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        np.testing.assert_allclose(inner(h1_17, u, v), np.conj(inner(h1_17, v, u)), rtol=1e-12)
        np.testing.assert_allclose(inner(h1_17, 2j * u, v), 2j * inner(h1_17, u, v), rtol=1e-12)

    def test_gram_positive_definite(self, h1_17, l2_17):
        for ip in (h1_17, l2_17):
            G = ip.gram.toarray()
            np.testing.assert_array_equal(G, G.T)
            sla.cholesky(G)

    def test_unknown_kind(self, mesh17):
        with pytest.raises(ValueError):
            assemble_inner_product(mesh17, "H2")

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(-10, 10), min_size=289, max_size=289))
    def test_norm_nonnegative_and_homogeneous(self, h1_17, vals):
        u = np.array(vals)
        assert norm(h1_17, u) >= 0.0
        np.testing.assert_allclose(norm(h1_17, -3.0 * u), 3.0 * norm(h1_17, u), rtol=1e-12, atol=1e-12)


class TestHelmholtz:
    def test_manufactured_convergence(self):
        errs = [manufactured_error(n) for n in (17, 33, 65)]
        rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert np.all(rates >= 1.8), rates

    def test_zero_source_gives_zero(self, mesh17):
        u = solve_helmholtz(mesh17, HelmholtzConfig(5.0), rhs=lambda x1, x2: np.zeros_like(x1))
        np.testing.assert_array_equal(u, 0.0)

    def test_dirichlet_boundary_is_zero(self, mesh17):
        u = solve_helmholtz(mesh17, HelmholtzConfig(5.0))
        np.testing.assert_array_equal(u[mesh17.boundary_nodes], 0.0)
        assert np.abs(u).max() > 0

    @pytest.mark.parametrize("bc", ["dirichlet", "neumann"])
    def test_galerkin_residual(self, mesh17, bc):
        cfg = HelmholtzConfig(7.3, bc=bc, source="biased")
        u = solve_helmholtz(mesh17, cfg)
        K, f = assemble_helmholtz(mesh17, cfg)
        free = mesh17.interior_nodes if bc == "dirichlet" else np.arange(mesh17.n_nodes)
        r = (K @ u - f)[free]
        assert np.linalg.norm(r) <= 1e-10 * np.linalg.norm(f)

    def test_neumann_sweep_is_finite(self, mesh17):
        # the grid crosses the Neumann eigenvalues pi, pi sqrt 2, 2 pi and pi sqrt 5
        for mu in np.linspace(2.0, 10.0, 20):
            u = solve_helmholtz(mesh17, HelmholtzConfig(mu, bc="neumann", source="biased"))
            assert np.all(np.isfinite(u))

    def test_resonance_detected(self):
        m = build_mesh(9, 9)
        lam = sla.eigh(stiffness_matrix(m).toarray(), mass_matrix(m).toarray(), eigvals_only=True)
        mu = float(np.sqrt(lam[1]))
        with pytest.raises(ResonanceError) as info:
            solve_helmholtz(m, HelmholtzConfig(mu, epsilon=0.0, bc="neumann"))
        assert info.value.mu == mu

    def test_factored_solver_matches(self, mesh17):
        cfg = HelmholtzConfig(4.4, bc="neumann")
        solver = HelmholtzSolver(mesh17, cfg)
        np.testing.assert_array_equal(solver.solve(), solve_helmholtz(mesh17, cfg))
        biased = HelmholtzConfig(4.4, bc="neumann", source="biased")
        np.testing.assert_allclose(solver.solve(biased), solve_helmholtz(mesh17, biased), rtol=1e-12)
        with pytest.raises(ValueError):
            solver.solve(HelmholtzConfig(4.5, bc="neumann"))

    def test_perfect_minus_biased_is_bias_response(self, mesh17):
        cfg = HelmholtzConfig(6.0)
        perfect = solve_helmholtz(mesh17, cfg)
        biased = solve_helmholtz(mesh17, HelmholtzConfig(6.0, source="biased"))
        g = solve_helmholtz(mesh17, cfg, rhs=lambda x1, x2: 6.0 * PERFECT_BIAS(6.0, x1, x2))
        np.testing.assert_allclose(perfect - biased, g, atol=1e-12 * np.abs(perfect).max())
        assert np.abs(g).max() > 0

    @pytest.mark.parametrize("kw", [dict(mu=0.0), dict(mu=1.0, epsilon=-1.0), dict(mu=1.0, bc="robin"),
                                    dict(mu=1.0, source="noisy")])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            HelmholtzConfig(**kw)


class TestEvaluateAndIO:
    def test_nodes_exact(self, mesh17):
        v = np.arange(mesh17.n_nodes) * (1 + 0.5j)
        np.testing.assert_array_equal(evaluate_field(mesh17, v, mesh17.nodes), v)

    def test_linear_reproduced(self, mesh17):
        v = 2.0 * mesh17.nodes[:, 0] - 3.0 * mesh17.nodes[:, 1] + 1.0
        pts = np.random.default_rng(1).uniform(0, 1, (200, 2))
        np.testing.assert_allclose(evaluate_field(mesh17, v, pts), 2 * pts[:, 0] - 3 * pts[:, 1] + 1, atol=1e-13)

    def test_edge_midpoint_is_mean(self):
        m = build_mesh(3, 3)
        v = np.zeros(9)
        v[4] = 1.0
        np.testing.assert_allclose(evaluate_field(m, v, [[0.25, 0.5]]), [0.5])

    def test_outside_raises(self, mesh17):
        with pytest.raises(ValueError):
            evaluate_field(mesh17, np.zeros(mesh17.n_nodes), [[1.1, 0.5]])

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2 ** 31))
    def test_dump_round_trip(self, tmp_path_factory, seed):
        m = build_mesh(5, 4)
        rng = np.random.default_rng(seed)
        v = rng.standard_normal(m.n_nodes) + 1j * rng.standard_normal(m.n_nodes)
        path = tmp_path_factory.mktemp("dump") / "f.txt"
        dump_field(path, m, v)
        m2, v2 = load_field(path)
        assert (m2.nx, m2.ny) == (5, 4)
        np.testing.assert_array_equal(v2, v)
