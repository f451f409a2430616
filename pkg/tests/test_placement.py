"""Stability-maximizing greedy sensor placement."""
from __future__ import annotations

import csv

import numpy as np
import pytest

from hybrid_pbdw.assimilation import inf_sup
from hybrid_pbdw.field_core import evaluate_field
from hybrid_pbdw.observation import build_sensor_set, random_placement
from hybrid_pbdw.placement import candidate_grid, compare_strategies, sgreedy, write_betas
from hybrid_pbdw.reduced_basis import bind_sensors

WIDTH = 0.08


@pytest.fixture(scope="module")
def greedy17(basis17, h1_17):
    return sgreedy(basis17.truncate(3), 3, 15, h1_17, width=WIDTH)


class TestSGreedy:
    def test_first_sensor_at_mode_peak(self, basis17, h1_17):
        state = sgreedy(basis17, 1, 1, h1_17, width=WIDTH)
        grid = candidate_grid(h1_17.mesh)
        peak = grid[np.argmax(np.abs(evaluate_field(h1_17.mesh, basis17.modes[:, 0], grid)))]
        np.testing.assert_array_equal(state.chosen[0].center, peak)

    def test_beta_nondecreasing_at_fixed_N(self, greedy17):
        curve = np.array([b for M, N, b in greedy17.betas if N == 3])
        assert np.all(np.diff(curve) >= -1e-12)

    def test_betas_match_recomputation(self, greedy17, basis17, h1_17):
        for M, N, beta in greedy17.betas[::4]:
            sset = build_sensor_set(greedy17.chosen[:M], h1_17)
            ref = inf_sup(bind_sensors(basis17.truncate(N), sset).B, sset.A).beta
            np.testing.assert_allclose(beta, ref, rtol=1e-8)

    def test_incremental_gram_matches(self, greedy17, h1_17):
        full = build_sensor_set(greedy17.chosen, h1_17)
        np.testing.assert_allclose(greedy17.sensor_set.A, full.A, rtol=1e-12, atol=1e-15)

    def test_no_duplicates(self, greedy17):
        centers = [s.center for s in greedy17.chosen]
        assert len(set(centers)) == len(centers)

    def test_grid_order_independent(self, basis17, h1_17):
        grid = candidate_grid(h1_17.mesh)
        perm = np.random.default_rng(0).permutation(len(grid))
        a = sgreedy(basis17, 2, 8, h1_17, width=WIDTH, grid=grid)
        b = sgreedy(basis17, 2, 8, h1_17, width=WIDTH, grid=grid[perm])
        assert [s.center for s in a.chosen] == [s.center for s in b.chosen]

    def test_beats_random_on_average(self, basis17, h1_17):
        b2 = basis17.truncate(2)
        greedy = sgreedy(b2, 2, 10, h1_17, width=WIDTH).betas[-1][2]
        rand = []
        for seed in range(20):
            sset = build_sensor_set(random_placement(10, seed=seed, width=WIDTH), h1_17)
            rand.append(inf_sup(bind_sensors(b2, sset).B, sset.A).beta)
        assert greedy >= np.mean(rand)

    def test_argument_validation(self, basis17, h1_17):
        with pytest.raises(ValueError):
            sgreedy(basis17, 0, 5, h1_17)
        with pytest.raises(ValueError):
            sgreedy(basis17.truncate(2), 3, 5, h1_17)


class TestComparison:
    def test_rows(self, basis17, h1_17, l2_17, snaps17):
        rows = compare_strategies(basis17, 2, [4, 2], [0, 1], snaps17.snapshots[:, 5], h1_17, l2_17, width=WIDTH)
        assert len(rows) == 2 + 2 * 2
        assert [r["M"] for r in rows[:2]] == [2, 4]
        assert {r["seed"] for r in rows if r["strategy"] == "sgreedy"} == {-1}
        assert all(np.isfinite(r["rel_error"]) and r["beta"] > 0 for r in rows)

    def test_write_betas(self, greedy17, tmp_path):
        write_betas(tmp_path / "betas.csv", greedy17)
        with open(tmp_path / "betas.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert [int(r["M"]) for r in rows] == list(range(1, 16))
        assert float(rows[-1]["beta"]) == greedy17.betas[-1][2]
