"""DeepONet surrogates for the PBDW update coefficients.

Two variants share a branch network mapping the forcing sampled at the
sensor centers to ``M`` complex latent coefficients ``c``. The prediction is
``eta = T c`` where ``T`` is

* weak mode: a trunk network evaluated at the sensor centers (row ``m`` is
  the trunk output at ``x_m``); orthogonality to the background is only
  encouraged through the penalty ``sum_j |(B^H eta)_j|^2``;
* strong mode: a fixed matrix ``Phi`` whose columns are the representer
  coordinate directions with their background component removed, so that
  ``B^H eta = 0`` holds for any branch output.

Networks work on realified vectors ``[Re; Im]``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from ..assimilation import assemble_solution, background_stage, solve_saddle
from ..field_core import BiasForcing, HelmholtzConfig, HelmholtzSolver, Mesh
from ..observation import SensorSet
from ..reduced_basis import BackgroundBasis
from .mlp import Adam, MlpParams, init_mlp, mlp_backward, mlp_forward

CHECKPOINT_VERSION = 1
ORTH_TOL = 1e-10


def realify(z: np.ndarray) -> np.ndarray:
    """``[Re z; Im z]`` along the last axis."""
    z = np.asarray(z)
    return np.concatenate([z.real, z.imag], axis=-1)


def derealify(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.shape[-1] % 2:
        raise ValueError("realified vectors have even length")
    h = r.shape[-1] // 2
    return r[..., :h] + 1j * r[..., h:]


def realify_operator(T: np.ndarray) -> np.ndarray:
    """Real ``2M x 2M`` matrix acting on ``[Re c; Im c]`` like ``T`` acts on ``c``."""
    return np.block([[T.real, -T.imag], [T.imag, T.real]])


# ---------------------------------------------------------------------------
# Strong-mode trunk
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TrunkBasis:
    """Columns of ``Phi`` are representer coefficients of fields orthogonal to the background."""

    Phi: np.ndarray

    @property
    def M(self) -> int:
        return self.Phi.shape[0]

    @property
    def realified(self) -> np.ndarray:
        return realify_operator(self.Phi)


def _background_directions(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """``A``-orthonormal coefficients of the projections of ``zeta_n`` onto the update space."""
    D = np.linalg.solve(A, B).astype(complex)
    for n in range(D.shape[1]):
        for _ in range(2):
            for k in range(n):
                D[:, n] -= (D[:, k].conj() @ (A @ D[:, n])) * D[:, k]
        nrm = np.sqrt(max(np.real(D[:, n].conj() @ (A @ D[:, n])), 0.0))
        if nrm <= 1e-14:
            raise np.linalg.LinAlgError("background mode invisible to the sensors")
        D[:, n] /= nrm
    return D


def project_out(c: np.ndarray, A: np.ndarray, D: np.ndarray) -> np.ndarray:
    """Remove the background components of the field ``Q c`` (modified Gram-Schmidt)."""
    c = np.array(c, dtype=complex)
    for n in range(D.shape[1]):
        c -= np.tensordot(D[:, n].conj() @ A, c, axes=(0, 0)) * (D[:, n] if c.ndim == 1 else D[:, n][:, None])
    return c


def build_trunk_basis(sset: SensorSet, basis: BackgroundBasis) -> TrunkBasis:
    """Project each representer direction ``e_m`` out of the background.

    The field ``sum_k phi_{k,m} q_k`` ends up orthogonal to every ``zeta_n``,
    i.e. ``B^H phi_m = 0``. The projection is taken within the update space
    so that the columns remain representer expansions.
    """
    M = sset.M
    if M < 1:
        raise ValueError("need at least one sensor")
    if basis.B is None or basis.B.shape[0] != M:
        raise ValueError("basis is not bound to this sensor set")
    Phi = np.eye(M, dtype=complex)
    if basis.N == 0:
        return TrunkBasis(Phi)
    A = sset.A
    D = _background_directions(A, basis.B)
    # two passes keep B^H Phi at round-off level
    Phi = project_out(project_out(Phi, A, D), A, D)
    col = np.sqrt(np.maximum(np.real(np.einsum("km,kl,lm->m", Phi.conj(), A, Phi)), 0.0))
    if np.any(col <= 1e-12 * np.sqrt(np.diag(A))):
        raise np.linalg.LinAlgError("sensor direction fully inside Z_N")
    return TrunkBasis(Phi)


def trunk_orthogonality(trunk: TrunkBasis, B: np.ndarray) -> float:
    """``max_{m,n} |<phi_m, zeta_n>|`` computed as ``|B^H Phi|``."""
    if B.shape[1] == 0:
        return 0.0
    return float(np.abs(B.conj().T @ trunk.Phi).max())


# ---------------------------------------------------------------------------
# Training data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ForcingFamily:
    """Uniform ranges for the source-bias amplitude, decay and frequency."""

    amplitude: tuple[float, float] = (0.25, 0.75)
    decay: tuple[float, float] = (2.0, 4.0)
    freq: tuple[float, float] = (4.0, 6.0)

    def draw(self, n: int, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        lo = np.array([self.amplitude[0], self.decay[0], self.freq[0]])
        hi = np.array([self.amplitude[1], self.decay[1], self.freq[1]])
        return lo + (hi - lo) * rng.uniform(size=(n, 3))


@dataclass(eq=False)
class TrainingSet:
    """Forcing samples at the sensor centers (K x M, real) and PBDW updates (K x M, complex)."""

    inputs: np.ndarray
    targets: np.ndarray
    observations: np.ndarray
    forcing_params: np.ndarray
    family: ForcingFamily
    seed: int
    mu: float
    sensor_set_id: str = ""
    basis_id: str = ""

    def __post_init__(self):
        K, M = self.inputs.shape
        if self.targets.shape != (K, M) or self.observations.shape != (K, M):
            raise ValueError("inputs, targets and observations must all be K x M")

    @property
    def K(self) -> int:
        return self.inputs.shape[0]

    def split(self, train_fraction: float = 0.8, seed: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
        """Shuffled index split; a single pair goes to training."""
        perm = np.random.default_rng(self.seed if seed is None else seed).permutation(self.K)
        n_train = min(self.K, max(1, int(round(train_fraction * self.K))))
        return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def sample_forcing(cfg: HelmholtzConfig, centers: np.ndarray) -> np.ndarray:
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    return np.asarray(cfg.source_term(centers[:, 0], centers[:, 1]), dtype=float)


def generate_training_set(mesh: Mesh, sset: SensorSet, basis: BackgroundBasis, truth: HelmholtzConfig,
                          n_pairs: int, seed: int = 0, family: ForcingFamily = ForcingFamily(),
                          xi: float = 0.0) -> TrainingSet:
    """Solve ``n_pairs`` truth problems with random source biases and their PBDW updates.

    Observations are noise free; the operator is factored once.
    """
    if n_pairs < 1:
        raise ValueError("need at least one training pair")
    if truth.source != "perfect":
        raise ValueError("the forcing family perturbs the source bias; use source='perfect'")
    if basis.B is None or basis.B.shape[0] != sset.M:
        raise ValueError("basis is not bound to this sensor set")
    params = family.draw(n_pairs, seed)
    solver = HelmholtzSolver(mesh, truth)
    V = np.empty((n_pairs, sset.M))
    Y = np.empty((n_pairs, sset.M), dtype=complex)
    for i, (a, c, k) in enumerate(params):
        cfg = replace(truth, forcing=BiasForcing(a, c, k))
        Y[i] = sset.observe_exact(solver.solve(cfg))
        V[i] = sample_forcing(cfg, sset.centers)
    _, eta = solve_saddle(sset.A, basis.B, Y.T, xi)
    return TrainingSet(V, np.ascontiguousarray(eta.T), Y, params, family, int(seed), float(truth.mu),
                       sset.fingerprint(), basis.fingerprint())


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class OperatorModel:
    mode: str
    branch: MlpParams
    trunk: MlpParams | TrunkBasis
    centers: np.ndarray
    B: np.ndarray
    sensor_set_id: str
    basis_id: str
    omega: tuple[float, float] = (1.0, 0.0)
    in_mean: np.ndarray = None  # type: ignore[assignment]
    in_scale: np.ndarray = None  # type: ignore[assignment]
    out_scale: float = 1.0
    history: list[tuple[int, float, float, float]] = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in ("weak", "strong"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if (self.mode == "strong") != isinstance(self.trunk, TrunkBasis):
            raise ValueError("trunk payload does not match the mode")
        M = self.M
        if self.branch.widths[0] != M or self.branch.widths[-1] != 2 * M:
            raise ValueError("branch must map M inputs to 2M outputs")
        if self.mode == "weak" and (self.trunk.widths[0] != 2 or self.trunk.widths[-1] != 2 * M):
            raise ValueError("weak trunk must map (x1, x2) to 2M outputs")
        if self.in_mean is None:
            self.in_mean = np.zeros(M)
        if self.in_scale is None:
            self.in_scale = np.ones(M)

    @property
    def M(self) -> int:
        return self.centers.shape[0]

    def trainable(self) -> list[np.ndarray]:
        arrays = list(self.branch.arrays)
        if self.mode == "weak":
            arrays += self.trunk.arrays
        return arrays

    def trunk_matrix(self, points: Optional[np.ndarray] = None, keep: bool = False):
        """``T`` with ``T[m, k] = t_k(x_m)``; the fixed ``Phi`` in strong mode."""
        if self.mode == "strong":
            return (self.trunk.Phi, None) if keep else self.trunk.Phi
        pts = self.centers if points is None else np.asarray(points, dtype=float).reshape(-1, 2)
        out, acts = mlp_forward(self.trunk, pts, keep=True)
        T = derealify(out)
        return (T, acts) if keep else T


def _normalized_B(B: np.ndarray) -> np.ndarray:
    if B.shape[1] == 0:
        return B
    s = np.linalg.norm(B, 2)
    return B / s if s > 0 else B


def orthogonality_penalty(B: np.ndarray, eta: np.ndarray) -> float:
    """Mean over samples of ``sum_j |(B^H eta)_j|^2`` with ``B`` scaled to unit spectral norm."""
    eta = np.atleast_2d(eta)
    r = eta @ _normalized_B(B).conj()
    return float(np.mean(np.sum(np.abs(r) ** 2, axis=1)))


def orthogonality_ratio(B: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """``||B^H eta|| / ||eta||`` per sample."""
    eta = np.atleast_2d(eta)
    num = np.linalg.norm(eta @ B.conj(), axis=1)
    den = np.maximum(np.linalg.norm(eta, axis=1), np.finfo(float).tiny)
    return num / den


def _branch_inputs(model: OperatorModel, V: np.ndarray) -> np.ndarray:
    V = np.atleast_2d(np.asarray(V, dtype=float))
    if V.shape[1] != model.M:
        raise ValueError(f"expected forcing samples at {model.M} sensors, got {V.shape[1]}")
    return (V - model.in_mean) / model.in_scale


def _forward(model: OperatorModel, V: np.ndarray, keep: bool = False):
    """Normalized prediction ``eta / out_scale`` for each row of ``V``."""
    X = _branch_inputs(model, V)
    out, b_acts = mlp_forward(model.branch, X, keep=True)
    C = derealify(out)
    T, t_acts = model.trunk_matrix(keep=True)
    E = C @ T.T
    if keep:
        return E, (C, T, b_acts, t_acts)
    return E


def loss_and_grad(model: OperatorModel, V: np.ndarray, targets: np.ndarray,
                  omega: Optional[tuple[float, float]] = None) -> tuple[float, list[np.ndarray]]:
    """Training objective and its gradient with respect to :meth:`OperatorModel.trainable`.

    ``omega[0]`` weighs the mean squared error over the ``2M`` realified
    components of the normalized prediction; ``omega[1]`` the orthogonality
    penalty (weak mode only).
    """
    w1, w2 = model.omega if omega is None else omega
    if model.mode == "strong":
        w2 = 0.0
    E, (C, T, b_acts, t_acts) = _forward(model, V, keep=True)
    R = E - np.atleast_2d(targets) / model.out_scale
    K, M = E.shape
    mse = np.sum(np.abs(R) ** 2) / (K * 2 * M)
    value = w1 * mse
    # gradients use the convention g = dL/dRe + i dL/dIm
    gE = w1 * 2.0 * R / (K * 2 * M)
    if w2 != 0.0 and model.B.shape[1]:
        Bn = _normalized_B(model.B)
        P = E @ Bn.conj()
        value += w2 * np.sum(np.abs(P) ** 2) / K
        gE = gE + w2 * 2.0 * (P @ Bn.T) / K
    gC = gE @ T.conj()
    grads = mlp_backward(model.branch, b_acts, realify(gC))
    if model.mode == "weak":
        gT = gE.T @ C.conj()
        grads += mlp_backward(model.trunk, t_acts, realify(gT))
    return float(value), grads


def mse(model: OperatorModel, V: np.ndarray, targets: np.ndarray) -> float:
    """Mean squared error over realified components, in normalized units."""
    if len(V) == 0:
        return float("nan")
    R = _forward(model, V) - np.atleast_2d(targets) / model.out_scale
    return float(np.sum(np.abs(R) ** 2) / R.size / 2)


def init_model(mode: str, sset: SensorSet, basis: BackgroundBasis, data: Optional[TrainingSet] = None,
               branch_hidden: Sequence[int] | None = None, trunk_hidden: Sequence[int] | None = None,
               omega: tuple[float, float] = (1.0, 0.0), seed: int = 0) -> OperatorModel:
    """Untrained model with Glorot weights; input/output scaling fitted on ``data``.

    Defaults: ten hidden branch layers and four hidden trunk layers, all of width ``M``.
    """
    M = sset.M
    if basis.B is None or basis.B.shape[0] != M:
        raise ValueError("basis is not bound to this sensor set")
    branch_hidden = [M] * 10 if branch_hidden is None else list(branch_hidden)
    trunk_hidden = [M] * 4 if trunk_hidden is None else list(trunk_hidden)
    branch = init_mlp([M, *branch_hidden, 2 * M], seed=seed)
    if mode == "strong":
        trunk: MlpParams | TrunkBasis = build_trunk_basis(sset, basis)
    elif mode == "weak":
        trunk = init_mlp([2, *trunk_hidden, 2 * M], seed=seed + 1)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    model = OperatorModel(mode, branch, trunk, sset.centers, np.array(basis.B), sset.fingerprint(),
                          basis.fingerprint(), tuple(float(w) for w in omega))
    if data is not None:
        _check_ids(model, data.sensor_set_id, data.basis_id)
        model.in_mean = data.inputs.mean(axis=0)
        spread = data.inputs.std(axis=0)
        model.in_scale = np.where(spread > 1e-12 * max(np.abs(data.inputs).max(), 1.0), spread, 1.0)
        rms = np.sqrt(np.mean(np.abs(data.targets) ** 2))
        model.out_scale = float(rms) if rms > 0 else 1.0
    return model


def _check_ids(model: OperatorModel, sensor_set_id: str, basis_id: str) -> None:
    if sensor_set_id and sensor_set_id != model.sensor_set_id:
        raise ValueError("sensor set does not match the one the model was built for")
    if basis_id and basis_id != model.basis_id:
        raise ValueError("background basis does not match the one the model was built for")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    lr: float = 1e-3
    decay: float = 0.99
    decay_every: int = 1
    train_fraction: float = 0.8
    seed: int = 0


def _train(model: OperatorModel, data: TrainingSet, cfg: TrainConfig) -> OperatorModel:
    _check_ids(model, data.sensor_set_id, data.basis_id)
    tr, te = data.split(cfg.train_fraction, cfg.seed)
    Vtr, Ttr = data.inputs[tr], data.targets[tr]
    Vte, Tte = data.inputs[te], data.targets[te]
    opt = Adam(lr=cfg.lr, decay=cfg.decay, decay_every=cfg.decay_every)
    arrays = model.trainable()
    state = opt.init(arrays)
    model.history = []
    for epoch in range(cfg.epochs):
        value, grads = loss_and_grad(model, Vtr, Ttr)
        if not np.isfinite(value):
            raise FloatingPointError(f"training loss is not finite at epoch {epoch}")
        test = mse(model, Vte, Tte) if len(te) else float("nan")
        orth = float(np.mean(orthogonality_ratio(model.B, _forward(model, Vte)))) if len(te) else float("nan")
        model.history.append((epoch, value, test, orth))
        opt.step(arrays, grads, state, opt.lr_at(epoch))
    return model


def train_weak(data: TrainingSet, model: OperatorModel, omega: tuple[float, float] = (1.0, 1.0),
               epochs: int = 20000, seed: int = 0, **kw) -> OperatorModel:
    """Penalized training of branch and coordinate trunk; ``model`` is updated in place."""
    if model.mode != "weak":
        raise ValueError("train_weak needs a weak-mode model")
    if data.K < 1:
        raise ValueError("empty training set")
    model.omega = (float(omega[0]), float(omega[1]))
    return _train(model, data, TrainConfig(epochs, seed=seed, **kw))


def train_strong(data: TrainingSet, model: OperatorModel, epochs: int = 5000, seed: int = 0, **kw) -> OperatorModel:
    """MSE training of the branch against the fixed projected trunk."""
    if model.mode != "strong":
        raise ValueError("train_strong needs a strong-mode model")
    if data.K < 1:
        raise ValueError("empty training set")
    model.omega = (1.0, 0.0)
    return _train(model, data, TrainConfig(epochs, seed=seed, **kw))


def predict_update(model: OperatorModel, v: np.ndarray) -> np.ndarray:
    """Update coefficients ``eta`` for forcing samples ``v`` (one row per input)."""
    v = np.asarray(v, dtype=float)
    E = _forward(model, v) * model.out_scale
    return E[0] if v.ndim == 1 else E


def hybrid_reconstruct(model: OperatorModel, sset: SensorSet, basis: BackgroundBasis, y: np.ndarray,
                       v: np.ndarray, xi: float = 0.0):
    """Background from weighted least squares on ``y``, update from the network."""
    if basis.B is None or basis.B.shape[0] != sset.M:
        raise ValueError("basis is not bound to this sensor set")
    _check_ids(model, sset.fingerprint(), basis.fingerprint())
    z = background_stage(sset.A, basis.B, y, xi)
    eta = predict_update(model, v)
    sol = assemble_solution(basis, sset, z, eta, xi)
    sol.diagnostics["predicted"] = True
    return sol


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_model(path, model: OperatorModel) -> None:
    blobs = {f"branch_{i}": a for i, a in enumerate(model.branch.arrays)}
    if model.mode == "weak":
        blobs.update({f"trunk_{i}": a for i, a in enumerate(model.trunk.arrays)})
        trunk_widths = np.array(model.trunk.widths)
    else:
        blobs["Phi"] = model.trunk.Phi
        trunk_widths = np.zeros(0, dtype=int)
    np.savez(path, version=CHECKPOINT_VERSION, mode=model.mode, branch_widths=np.array(model.branch.widths),
             trunk_widths=trunk_widths, centers=model.centers, B=model.B,
             sensor_set_id=model.sensor_set_id, basis_id=model.basis_id, omega=np.array(model.omega),
             in_mean=model.in_mean, in_scale=model.in_scale, out_scale=model.out_scale,
             seeds=np.array([model.branch.seed, getattr(model.trunk, "seed", -1)]), **blobs)


def _unpack(z, prefix: str, widths: Sequence[int], seed: int) -> MlpParams:
    n = len(widths) - 1
    arrays = [z[f"{prefix}_{i}"] for i in range(2 * n)]
    return MlpParams(list(widths), arrays[0::2], arrays[1::2], seed)


def load_model(path, sensor_set_id: Optional[str] = None, basis_id: Optional[str] = None) -> OperatorModel:
    """Read a checkpoint, refusing it when the given ids differ from the stored ones."""
    with np.load(path, allow_pickle=False) as z:
        version = int(z["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        mode = str(z["mode"])
        seeds = z["seeds"]
        branch = _unpack(z, "branch", [int(w) for w in z["branch_widths"]], int(seeds[0]))
        if mode == "weak":
            trunk: MlpParams | TrunkBasis = _unpack(z, "trunk", [int(w) for w in z["trunk_widths"]], int(seeds[1]))
        else:
            trunk = TrunkBasis(z["Phi"])
        model = OperatorModel(mode, branch, trunk, z["centers"], z["B"], str(z["sensor_set_id"]),
                              str(z["basis_id"]), tuple(float(w) for w in z["omega"]),
                              z["in_mean"], z["in_scale"], float(z["out_scale"]))
    _check_ids(model, sensor_set_id or "", basis_id or "")
    if mode == "strong" and trunk_orthogonality(trunk, model.B) > ORTH_TOL:
        raise ValueError("stored trunk is not orthogonal to the background")
    if not all(np.all(np.isfinite(a)) for a in model.trainable()):
        raise ValueError("checkpoint holds non-finite parameters")
    return model


def write_loss_curve(path, model: OperatorModel) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "test_loss", "orth_residual"])
        for epoch, train, test, orth in model.history:
            w.writerow([epoch, repr(float(train)), repr(float(test)), repr(float(orth))])


def save_training_set(path, data: TrainingSet) -> None:
    fam = data.family
    np.savez(path, version=CHECKPOINT_VERSION, inputs=data.inputs, targets=data.targets,
             observations=data.observations, forcing_params=data.forcing_params,
             family=np.array([*fam.amplitude, *fam.decay, *fam.freq]), seed=data.seed, mu=data.mu,
             sensor_set_id=data.sensor_set_id, basis_id=data.basis_id)


def load_training_set(path) -> TrainingSet:
    with np.load(path, allow_pickle=False) as z:
        if int(z["version"]) != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported training set version {int(z['version'])}")
        f = z["family"]
        family = ForcingFamily((f[0], f[1]), (f[2], f[3]), (f[4], f[5]))
        return TrainingSet(z["inputs"], z["targets"], z["observations"], z["forcing_params"], family,
                           int(z["seed"]), float(z["mu"]), str(z["sensor_set_id"]), str(z["basis_id"]))
