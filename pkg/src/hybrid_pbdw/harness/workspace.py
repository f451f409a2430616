"""Lazily built, cached artifacts shared by the experiment drivers."""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

import numpy as np

from ..field_core import HelmholtzConfig, assemble_inner_product, build_mesh, solve_helmholtz
from ..neural_operator import (
    OperatorModel,
    TrainingSet,
    generate_training_set,
    init_model,
    load_model,
    save_model,
    train_strong,
    train_weak,
)
from ..observation import SensorSet, build_sensor_set, random_placement
from ..placement import sgreedy
from ..reduced_basis import BackgroundBasis, bind_sensors, generate_snapshots, load_basis, pod, save_basis
from .config import ExperimentConfig, Scenario

log = logging.getLogger(__name__)


def scenario_tag(s: Scenario) -> str:
    return f"{s[0]}-{s[1]}"


class Workspace:
    """Mesh, inner products, truth, bases, sensor sets and trained models for one config.

    With ``cache_dir`` set, bases and models are also stored on disk and
    reused by later runs of the same configuration.
    """

    def __init__(self, cfg: ExperimentConfig, cache_dir: Optional[Path] = None):
        self.cfg = cfg
        self.cache_dir = None if cache_dir is None else Path(cache_dir)
        self.mesh = build_mesh(cfg.mesh, cfg.mesh)
        self.h1 = assemble_inner_product(self.mesh, "H1")
        self.l2 = assemble_inner_product(self.mesh, "L2")
        self._truth: Optional[np.ndarray] = None
        self._bases: dict = {}
        self._sensors: dict = {}
        self._models: dict = {}
        self._data: dict = {}

    # -- problem ----------------------------------------------------------
    def helmholtz(self, s: Scenario, mu: Optional[float] = None) -> HelmholtzConfig:
        return HelmholtzConfig(self.cfg.mu_eval if mu is None else mu, self.cfg.epsilon, bc=s[0], source=s[1])

    def mu_grid(self) -> np.ndarray:
        return np.linspace(self.cfg.mu_min, self.cfg.mu_max, self.cfg.n_mu)

    @property
    def truth(self) -> np.ndarray:
        if self._truth is None:
            self._truth = solve_helmholtz(self.mesh, self.helmholtz(self.cfg.truth))
        return self._truth

    def _cache(self, name: str) -> Optional[Path]:
        if self.cache_dir is None:
            return None
        d = self.cache_dir / self.cfg.hash(exclude=("out", "seed"))
        d.mkdir(parents=True, exist_ok=True)
        return d / name

    # -- background -------------------------------------------------------
    def basis(self, s: Scenario) -> BackgroundBasis:
        """POD basis with ``n_max`` modes of the scenario's solution manifold."""
        key = tuple(s)
        if key not in self._bases:
            path = self._cache(f"basis_{scenario_tag(s)}.npz")
            if path is not None and path.exists():
                self._bases[key] = load_basis(path, self.h1)
            else:
                snaps = generate_snapshots(self.mesh, self.mu_grid(), self.helmholtz(s))
                self._bases[key] = pod(snaps, self.h1, self.cfg.n_max)
                if path is not None:
                    save_basis(path, self._bases[key])
        return self._bases[key]

    # -- sensors ----------------------------------------------------------
    def sensors(self, s: Scenario, N: int, M: Optional[int] = None, strategy: Optional[str] = None,
                seed: Optional[int] = None) -> SensorSet:
        M = self.cfg.m_for(N) if M is None else M
        strategy = self.cfg.strategy if strategy is None else strategy
        seed = self.cfg.seed if seed is None else seed
        key = (tuple(s), N, M, strategy, seed if strategy == "random" else None)
        if key not in self._sensors:
            if strategy == "sgreedy":
                self._sensors[key] = sgreedy(self.basis(s).truncate(N), N, M, self.h1, width=self.cfg.width).sensor_set
            else:
                self._sensors[key] = build_sensor_set(random_placement(M, seed=seed, width=self.cfg.width), self.h1)
        return self._sensors[key]

    def bound(self, s: Scenario, sset: SensorSet, N: int) -> BackgroundBasis:
        return bind_sensors(self.basis(s).truncate(N), sset)

    # -- networks ---------------------------------------------------------
    def training_set(self, s: Scenario, N: int, mode: str = "strong") -> TrainingSet:
        sset = self.model_sensors(s, N, mode)
        key = (tuple(s), N, mode)
        if key not in self._data:
            K = self.cfg.pairs_strong if mode == "strong" else self.cfg.pairs_weak
            self._data[key] = generate_training_set(self.mesh, sset, self.bound(s, sset, N),
                                                    self.helmholtz(self.cfg.truth), K, seed=self.cfg.seed)
        return self._data[key]

    def model_sensors(self, s: Scenario, N: int, mode: str = "strong") -> SensorSet:
        """SGreedy sensors for the strong model, random ones for the weak model."""
        return self.sensors(s, N, strategy="sgreedy" if mode == "strong" else "random")

    def model(self, s: Scenario, N: int, mode: str = "strong") -> OperatorModel:
        key = (tuple(s), N, mode)
        if key in self._models:
            return self._models[key]
        sset = self.model_sensors(s, N, mode)
        bound = self.bound(s, sset, N)
        path = self._cache(f"model_{mode}_{scenario_tag(s)}_N{N}_s{self.cfg.seed}.npz")
        if path is not None and path.exists():
            model = load_model(path, sset.fingerprint(), bound.fingerprint())
        else:
            model = train_model(self.cfg, self.training_set(s, N, mode), sset, bound, mode)
            if path is not None:
                save_model(path, model)
        self._models[key] = model
        return model


def train_model(cfg: ExperimentConfig, data: TrainingSet, sset: SensorSet, bound: BackgroundBasis,
                mode: str) -> OperatorModel:
    M = sset.M
    model = init_model(mode, sset, bound, data, branch_hidden=[M] * cfg.branch_layers,
                       trunk_hidden=[M] * cfg.trunk_layers, omega=cfg.omega, seed=cfg.seed)
    kw = dict(lr=cfg.lr, decay=cfg.decay, decay_every=cfg.decay_every, train_fraction=cfg.train_fraction)
    if mode == "strong":
        log.info("training strong model: %d pairs, %d epochs", data.K, cfg.epochs_strong)
        return train_strong(data, model, epochs=cfg.epochs_strong, seed=cfg.seed, **kw)
    log.info("training weak model: %d pairs, %d epochs", data.K, cfg.epochs_weak)
    return train_weak(data, model, omega=cfg.omega, epochs=cfg.epochs_weak, seed=cfg.seed, **kw)
