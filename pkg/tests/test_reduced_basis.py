"""Snapshots, POD background spaces, sensor coupling and projection errors."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybrid_pbdw.field_core import assemble_inner_product, build_mesh, inner, norm
from hybrid_pbdw.observation import Sensor, build_sensor_set
from hybrid_pbdw.reduced_basis import (
    BackgroundBasis,
    bind_sensors,
    load_basis,
    manifold_error,
    pod,
    projection_error,
    save_basis,
)


class TestPod:
    def test_rank_one(self, h1_17):
        rng = np.random.default_rng(0)
        v = rng.standard_normal(h1_17.mesh.n_nodes) + 1j * rng.standard_normal(h1_17.mesh.n_nodes)
        S = np.column_stack([v, 2j * v, -0.5 * v])
        with pytest.warns(RuntimeWarning):
            b = pod(S, h1_17, 2)
        assert b.N == 1
        np.testing.assert_allclose(b.singular_values[0], norm(h1_17, v) * np.sqrt(1 + 4 + 0.25), rtol=1e-12)
        np.testing.assert_allclose(b.singular_values[1:], 0.0, atol=1e-6 * b.singular_values[0])
        np.testing.assert_allclose(projection_error(b, v), 0.0, atol=1e-10 * norm(h1_17, v))

    def test_parseval(self, snaps17, basis17, h1_17):
        energy = sum(norm(h1_17, s) ** 2 for s in snaps17.snapshots.T)
        np.testing.assert_allclose(np.sum(basis17.singular_values ** 2), energy, rtol=1e-10)

    def test_orthonormal(self, basis17, h1_17):
        G = inner(h1_17, basis17.modes, basis17.modes)
        np.testing.assert_allclose(G, np.eye(basis17.N), atol=1e-12)

    def test_nested(self, snaps17, h1_17, basis17):
        small = pod(snaps17, h1_17, 4)
        np.testing.assert_allclose(small.modes, basis17.modes[:, :4], atol=1e-10)
        np.testing.assert_allclose(basis17.truncate(4).modes, small.modes, atol=1e-10)

    def test_singular_values_sorted(self, basis17):
        assert np.all(np.diff(basis17.singular_values) <= 0)

    def test_phase_convention(self, basis17):
        for n in range(basis17.N):
            k = np.argmax(np.abs(basis17.modes[:, n]))
            assert basis17.modes[k, n].imag == 0.0 and basis17.modes[k, n].real > 0

    def test_invalid_N(self, snaps17, h1_17):
        with pytest.raises(ValueError):
            pod(snaps17, h1_17, len(snaps17) + 1)

    def test_manifold_error_two_routes(self, snaps17, basis17, h1_17):
        snapshots = snaps17.snapshots
        total = sum(norm(h1_17, s) ** 2 for s in snapshots.T)
        for N in (1, 2, 5):
            direct = np.sqrt(sum(projection_error(basis17, s, N) ** 2 for s in snapshots.T) / total)
            np.testing.assert_allclose(manifold_error(basis17, N), direct, rtol=1e-6)

    def test_manifold_error_decreasing(self, basis17):
        errs = [manifold_error(basis17, N) for N in range(0, 11)]
        assert errs[0] == pytest.approx(1.0)
        assert np.all(np.diff(errs) <= 0)


class TestBinding:
    def test_B_is_functional_of_modes(self, bound17, sensors17, h1_17):
        # B_mn = l_m(zeta_n) = (zeta_n, q_m)
        dual = inner(h1_17, bound17.modes, sensors17.Q)
        np.testing.assert_allclose(bound17.B, dual, rtol=1e-10, atol=1e-14)
        np.testing.assert_allclose(bound17.B, sensors17.F.T @ bound17.modes, rtol=1e-14)

    def test_representer_mode(self, h1_17):
        sset = build_sensor_set([Sensor((0.5, 0.5), 0.08)], h1_17)
        q = sset.Q[:, 0]
        b = bind_sensors(BackgroundBasis((q / norm(h1_17, q))[:, None].astype(complex), np.ones(1), h1_17), sset)
        np.testing.assert_allclose(b.B[0, 0], norm(h1_17, q), rtol=1e-12)

    def test_empty_background(self, bound17, sensors17):
        b0 = bind_sensors(bound17.truncate(0), sensors17)
        assert b0.N == 0 and b0.B.shape == (sensors17.M, 0)

    def test_truncate_keeps_B(self, bound17):
        np.testing.assert_array_equal(bound17.truncate(3).B, bound17.B[:, :3])
        with pytest.raises(ValueError):
            bound17.truncate(bound17.N + 1)

    def test_inner_product_mismatch(self, basis17, mesh17):
        sset = build_sensor_set([Sensor((0.5, 0.5), 0.08)], assemble_inner_product(mesh17, "L2"))
        with pytest.raises(ValueError):
            bind_sensors(basis17, sset)


class TestProjection:
    def test_mode_has_zero_error(self, basis17):
        for n in range(3):
            assert projection_error(basis17, basis17.modes[:, n]) < 1e-12

    def test_complement_keeps_norm(self, basis17, h1_17):
        rng = np.random.default_rng(3)
        v = rng.standard_normal(h1_17.mesh.n_nodes)
        w = v - basis17.project(v)
        np.testing.assert_allclose(projection_error(basis17, w), norm(h1_17, w), rtol=1e-10)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2 ** 31), st.integers(0, 10))
    def test_error_bounded_by_norm(self, basis17, h1_17, seed, N):
        rng = np.random.default_rng(seed)
        v = rng.standard_normal(h1_17.mesh.n_nodes) + 1j * rng.standard_normal(h1_17.mesh.n_nodes)
        e = projection_error(basis17, v, N)
        assert 0.0 <= e <= norm(h1_17, v) * (1 + 1e-12)
        if N < 10:
            assert projection_error(basis17, v, N + 1) <= e * (1 + 1e-12)


class TestPersistence:
    def test_round_trip_bit_exact(self, basis17, h1_17, tmp_path):
        save_basis(tmp_path / "b.npz", basis17)
        b = load_basis(tmp_path / "b.npz", h1_17)
        np.testing.assert_array_equal(b.modes, basis17.modes)
        np.testing.assert_array_equal(b.singular_values, basis17.singular_values)
        assert b.fingerprint() == basis17.fingerprint()

    def test_refuses_other_mesh(self, basis17, tmp_path):
        save_basis(tmp_path / "b.npz", basis17)
        with pytest.raises(ValueError):
            load_basis(tmp_path / "b.npz", assemble_inner_product(build_mesh(9, 9), "H1"))

    def test_refuses_other_inner_product(self, basis17, l2_17, tmp_path):
        save_basis(tmp_path / "b.npz", basis17)
        with pytest.raises(ValueError):
            load_basis(tmp_path / "b.npz", l2_17)
