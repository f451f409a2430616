"""Gaussian sensors, Riesz representers, the Gram matrix A and synthetic data."""
from __future__ import annotations

import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybrid_pbdw.field_core import assemble_inner_product, build_mesh, inner
from hybrid_pbdw.observation import (
    Sensor,
    SensorSet,
    build_sensor_set,
    functional_vector,
    observe,
    random_placement,
    read_measurement,
    read_sensors,
    riesz_representer,
    write_measurement,
    write_sensors,
)


@pytest.fixture(scope="module")
def mesh65():
    return build_mesh(65, 65)


def fake_sensor_set(ip, M, seed=0):
    """Sensor set with random real functionals, for statistics of the noise model."""
    F = np.random.default_rng(seed).uniform(0.5, 1.5, (ip.mesh.n_nodes, M))
    return SensorSet([Sensor((0.5, 0.5))] * M, F, np.zeros_like(F), np.eye(M), ip)


class TestFunctional:
    def test_window_mass_interior(self, mesh65):
        # window normalized by (2 pi r^2)^(-1/2): total mass sqrt(2 pi) r when untruncated
        f = functional_vector(Sensor((0.5, 0.5), 0.02), mesh65)
        np.testing.assert_allclose(f.sum(), np.sqrt(2 * np.pi) * 0.02, rtol=1e-6)

    def test_window_truncated_at_boundary(self, mesh65):
        f = functional_vector(Sensor((0.0, 0.5), 0.02), mesh65)
        np.testing.assert_allclose(f.sum(), 0.5 * np.sqrt(2 * np.pi) * 0.02, rtol=1e-6)

    def test_linear_field_reads_center(self, mesh65):
        s = Sensor((0.3, 0.6), 0.02)
        f = functional_vector(s, mesh65)
        mass = f.sum()
        np.testing.assert_allclose(f @ mesh65.nodes[:, 0] / mass, 0.3, rtol=1e-12)
        np.testing.assert_allclose(f @ mesh65.nodes[:, 1] / mass, 0.6, rtol=1e-12)

    @pytest.mark.parametrize("center, width", [((1.2, 0.5), 0.02), ((0.5, 0.5), 0.0), ((0.5, 0.5), 0.3)])
    def test_sensor_validation(self, center, width):
        with pytest.raises(ValueError):
            Sensor(center, width)


class TestRepresenters:
    def test_riesz_identity(self, h1_17):
        s = Sensor((0.4, 0.55), 0.08)
        q = riesz_representer(s, h1_17)
        f = functional_vector(s, h1_17.mesh)
        rng = np.random.default_rng(2)
        for _ in range(5):
            v = rng.standard_normal(q.size) + 1j * rng.standard_normal(q.size)
            np.testing.assert_allclose(inner(h1_17, v, q), f @ v, rtol=1e-10)

    def test_gram_two_formulas(self, sensors17, h1_17):
        # A = l_m(q_m') = (q_m', q_m)
        A2 = np.real(inner(h1_17, sensors17.Q, sensors17.Q))
        np.testing.assert_allclose(sensors17.A, A2.T, rtol=1e-10, atol=1e-14)

    def test_gram_spd(self, sensors17):
        np.testing.assert_array_equal(sensors17.A, sensors17.A.T)
        assert np.linalg.eigvalsh(sensors17.A).min() > 0

    def test_l2_overlap_decays(self, mesh65):
        l2 = assemble_inner_product(mesh65, "L2")
        A = build_sensor_set([Sensor((0.2, 0.2)), Sensor((0.8, 0.8))], l2).A
        assert abs(A[0, 1]) / np.sqrt(A[0, 0] * A[1, 1]) <= 0.01

    def test_h1_overlap_decreases_with_distance(self, mesh65):
        h1 = assemble_inner_product(mesh65, "H1")
        xs = [0.3, 0.4, 0.5, 0.7, 0.9]
        A = build_sensor_set([Sensor((x, 0.5)) for x in xs], h1).A
        assert np.all(np.diff(A[0]) < 0)

    def test_extend_matches_build(self, h1_17):
        sensors = random_placement(5, seed=1, width=0.08)
        full = build_sensor_set(sensors, h1_17)
        grown = build_sensor_set(sensors[:3], h1_17).extend(sensors[3]).extend(sensors[4])
        np.testing.assert_allclose(grown.A, full.A, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(grown.Q, full.Q, rtol=1e-12, atol=1e-15)

    def test_duplicate_sensor_warns_and_fails(self, h1_17, caplog):
        s = Sensor((0.5, 0.5), 0.08)
        with caplog.at_level(logging.WARNING), pytest.raises(np.linalg.LinAlgError):
            build_sensor_set([s, s], h1_17)
        assert "duplicate" in caplog.text

    def test_empty_rejected(self, h1_17):
        with pytest.raises(ValueError):
            build_sensor_set([], h1_17)

    def test_fingerprint_tracks_centers(self, h1_17):
        a = build_sensor_set([Sensor((0.5, 0.5), 0.08)], h1_17)
        b = build_sensor_set([Sensor((0.5, 0.5), 0.08)], h1_17)
        c = build_sensor_set([Sensor((0.5, 0.6), 0.08)], h1_17)
        assert a.fingerprint() == b.fingerprint() != c.fingerprint()


class TestNoise:
    def test_noise_free_is_functional(self, sensors17, h1_17):
        u = np.arange(h1_17.mesh.n_nodes) * (1 - 1j)
        np.testing.assert_array_equal(observe(sensors17, u).y, sensors17.F.T @ u)

    def test_multiplicative_moments(self, l2_17):
        sset = fake_sensor_set(l2_17, 4000)
        u = np.ones(l2_17.mesh.n_nodes) * (2 + 1j)
        y0 = observe(sset, u).y
        r = (observe(sset, u, 0.2, seed=5).y / y0 - 1.0) / 0.2
        np.testing.assert_allclose(np.imag(r), 0.0, atol=1e-12)
        assert abs(np.real(r).mean()) < 4 / np.sqrt(4000)
        assert abs(np.real(r).std() - 1.0) < 0.05

    def test_zero_reading_stays_zero(self, sensors17):
        y = observe(sensors17, np.zeros(sensors17.Q.shape[0]), 0.3, seed=1).y
        np.testing.assert_array_equal(y, 0.0)

    def test_seeded(self, sensors17):
        u = np.ones(sensors17.Q.shape[0])
        a = observe(sensors17, u, 0.1, seed=7).y
        np.testing.assert_array_equal(a, observe(sensors17, u, 0.1, seed=7).y)
        assert not np.array_equal(a, observe(sensors17, u, 0.1, seed=8).y)

    def test_negative_noise_rejected(self, sensors17):
        with pytest.raises(ValueError):
            observe(sensors17, np.ones(sensors17.Q.shape[0]), -0.1)


class TestRandomPlacement:
    @pytest.mark.parametrize("M", [1, 10, 50])
    def test_min_distance(self, M):
        pts = np.array([s.center for s in random_placement(M, seed=0)])
        assert len(pts) == M
        if M > 1:
            d = np.hypot(*(pts[:, None, :] - pts[None, :, :]).transpose(2, 0, 1))
            d[np.diag_indices(M)] = np.inf
            assert d.min() >= 1 / np.sqrt(3 * M)

    def test_seeded(self):
        assert random_placement(10, seed=4) == random_placement(10, seed=4)

    def test_infeasible(self):
        with pytest.raises(RuntimeError):
            random_placement(10, min_dist=0.9, seed=0, max_attempts=1000)

    def test_needs_a_sensor(self):
        with pytest.raises(ValueError):
            random_placement(0)


class TestCsv:
    @settings(max_examples=20, deadline=None)
    @given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1), st.floats(1e-3, 0.25)), min_size=1, max_size=8))
    def test_sensors_round_trip(self, tmp_path_factory, rows):
        sensors = [Sensor((x1, x2), r) for x1, x2, r in rows]
        path = tmp_path_factory.mktemp("s") / "sensors.csv"
        write_sensors(path, sensors)
        assert read_sensors(path) == sensors

    @settings(max_examples=20, deadline=None)
    @given(st.lists(st.complex_numbers(max_magnitude=1e6, allow_nan=False), min_size=1, max_size=8))
    def test_measurement_round_trip(self, tmp_path_factory, vals):
        path = tmp_path_factory.mktemp("y") / "y.csv"
        write_measurement(path, np.array(vals))
        np.testing.assert_array_equal(read_measurement(path), np.array(vals, dtype=complex))
