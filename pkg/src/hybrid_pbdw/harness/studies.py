"""Experiment drivers: mode sweep, bias study, noise sweep, sensor study, cost report.

Each driver returns a :class:`RunRecord` and, when ``out`` is given, writes
its CSV tables (deterministic per config and seed), field dumps and a
gnuplot script. Wall-clock timings never enter the CSVs; they go to
``<study>_record.json``.
"""
from __future__ import annotations

import json
import time
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .. import instrument
from ..assimilation import gcv_select, inf_sup, metrics, pbdw
from ..field_core import dump_field, norm
from ..neural_operator import hybrid_reconstruct, predict_update, sample_forcing
from ..observation import observe
from ..placement import compare_strategies
from .config import ConfigError, ExperimentConfig, Scenario
from .output import gnuplot_script, write_csv
from .workspace import Workspace, scenario_tag

NOISE_METHODS = ("PBDW", "APBDW", "PBDW-DeepONet", "APBDW-DeepONet")


@dataclass
class RunRecord:
    study: str
    config_hash: str
    rows: list[dict] = field(default_factory=list)
    key: tuple[str, ...] = ()
    artifacts: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    files: list[Path] = field(default_factory=list)

    def add(self, row: dict) -> None:
        self.rows.append(row)

    def check_unique(self) -> None:
        seen = set()
        for r in self.rows:
            k = tuple(r[c] for c in self.key)
            if k in seen:
                raise RuntimeError(f"duplicate {self.study} cell {k}")
            seen.add(k)

    def sort(self) -> None:
        self.rows.sort(key=lambda r: tuple(r[c] for c in self.key))

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0

    def write_record(self, out: Path) -> Path:
        path = Path(out) / f"{self.study}_record.json"
        path.write_text(json.dumps({"study": self.study, "config": self.config_hash,
                                    "artifacts": self.artifacts, "timings_s": self.timings,
                                    "files": [p.name for p in self.files]}, indent=2, sort_keys=True) + "\n")
        return path


def _finish(rec: RunRecord, out: Optional[Path], header: Sequence[str]) -> None:
    rec.check_unique()
    rec.sort()
    if out is not None:
        rec.files.insert(0, write_csv(Path(out) / f"{rec.study}.csv", header, rec.rows, rec.config_hash))
        rec.write_record(out)


def _out(out) -> Optional[Path]:
    if out is None:
        return None
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


# ---------------------------------------------------------------------------
# Mode sweep
# ---------------------------------------------------------------------------

MODES_HEADER = ("case", "N", "M", "beta", "e_exact", "e_estim", "eta_norm", "e_svd", "rel_error",
                "orthogonality_residual")


def run_mode_sweep(cfg: ExperimentConfig, ws: Optional[Workspace] = None, out=None) -> RunRecord:
    """Perfect-model sweep over ``N`` with noise-free data and no regularization.

    Besides the truth rows, an ``in_span`` row reconstructs the projection of
    the truth onto ``Z_N`` (which PBDW must recover to round-off).
    """
    ws = ws or Workspace(cfg)
    out = _out(out)
    rec = RunRecord("modes", cfg.hash(), key=("case", "N"))
    s = cfg.truth
    truth = ws.truth
    with rec.stage("basis"):
        basis = ws.basis(s)
    rec.artifacts["basis"] = basis.fingerprint()
    for N in sorted(set(cfg.modes_n)):
        with rec.stage("sensors"):
            sset = ws.sensors(s, N)
        b = ws.bound(s, sset, N)
        beta = inf_sup(b.B, sset.A).beta
        with rec.stage("assimilation"):
            for case, u in (("truth", truth), ("in_span", b.project(truth))):
                sol = pbdw(b, sset, sset.observe_exact(u), 0.0)
                met = metrics(sol, u, b, ws.l2)
                rec.add({"case": case, "N": N, "M": sset.M, "beta": beta,
                         "orthogonality_residual": sol.diagnostics["orthogonality_residual"], **met})
                if out is not None and case == "truth" and N in cfg.modes_dump:
                    for name, values in (("reconstructed", sol.reconstructed), ("background", sol.background),
                                         ("update", sol.update), ("error", u - sol.reconstructed)):
                        p = out / f"modes_N{N}_{name}.txt"
                        dump_field(p, ws.mesh, values)
                        rec.files.append(p)
    if out is not None:
        p = out / "modes_truth.txt"
        dump_field(p, ws.mesh, truth)
        rec.files.append(p)
        rec.files.append(gnuplot_script(out / "modes.gp", "modes.csv", "errors versus N", "N", "error", [
            ("2:(strcol(1) eq 'truth' ? $5 : 1/0)", "e_exact"), ("2:(strcol(1) eq 'truth' ? $6 : 1/0)", "e_estim"),
            ("2:(strcol(1) eq 'truth' ? $8**2 : 1/0)", "e_svd^2"), ("2:(strcol(1) eq 'truth' ? $7 : 1/0)", "eta_norm")]))
    _finish(rec, out, MODES_HEADER)
    return rec


# ---------------------------------------------------------------------------
# Bias study
# ---------------------------------------------------------------------------

BIAS_HEADER = ("scenario", "method", "N", "M", "e_exact", "e_estim", "eta_norm", "rel_error")


def _check_bias_scenario(cfg: ExperimentConfig, s: Scenario) -> None:
    if tuple(s) == tuple(cfg.truth):
        raise ConfigError(f"bias scenario {scenario_tag(s)} equals the truth model")


def run_bias_study(cfg: ExperimentConfig, ws: Optional[Workspace] = None, out=None) -> RunRecord:
    """Misspecified backgrounds at ``N = bias_n``: classical PBDW against the hybrid twin.

    Panels per scenario: predicted update, PBDW update, PBDW background,
    hybrid state, PBDW state, ground truth, plus the two error fields.
    """
    ws = ws or Workspace(cfg)
    out = _out(out)
    rec = RunRecord("bias", cfg.hash(), key=("scenario", "method"))
    truth = ws.truth
    N = cfg.bias_n
    l2norm = norm(ws.l2, truth)
    for s in cfg.bias_scenarios:
        _check_bias_scenario(cfg, s)
        tag = scenario_tag(s)
        with rec.stage("basis"):
            ws.basis(s)
        with rec.stage("training"):
            model = ws.model(s, N, "strong")
        sset = ws.model_sensors(s, N, "strong")
        b = ws.bound(s, sset, N)
        rec.artifacts[f"basis_{tag}"] = b.fingerprint()
        rec.artifacts[f"sensors_{tag}"] = sset.fingerprint()
        y = sset.observe_exact(truth)
        v = sample_forcing(ws.helmholtz(cfg.truth), sset.centers)
        with rec.stage("assimilation"):
            classical = pbdw(b, sset, y, 0.0)
            hybrid = hybrid_reconstruct(model, sset, b, y, v, 0.0)
        for method, sol in (("pbdw", classical), ("hybrid", hybrid)):
            rec.add({"scenario": tag, "method": method, "N": N, "M": sset.M,
                     **{k: metrics(sol, truth, b, ws.l2)[k] for k in ("e_exact", "e_estim", "eta_norm", "rel_error")}})
        bg_err = norm(ws.l2, truth - classical.background)
        rec.add({"scenario": tag, "method": "background", "N": N, "M": sset.M, "e_exact": bg_err ** 2,
                 "e_estim": bg_err ** 2, "eta_norm": 0.0, "rel_error": bg_err / l2norm})
        if out is not None:
            panels = {
                "a_predicted_update": hybrid.update,
                "b_pbdw_update": classical.update,
                "c_pbdw_background": classical.background,
                "d_hybrid_state": hybrid.reconstructed,
                "e_pbdw_state": classical.reconstructed,
                "f_truth": truth,
                "error_pbdw": (truth - classical.reconstructed) / l2norm,
                "error_hybrid": (truth - hybrid.reconstructed) / l2norm,
            }
            for name, values in panels.items():
                p = out / f"bias_{tag}_{name}.txt"
                dump_field(p, ws.mesh, values)
                rec.files.append(p)
    if out is not None:
        rec.files.append(_field_plot(out / "bias.gp", [p.name for p in rec.files if p.suffix == ".txt"]))
    _finish(rec, out, BIAS_HEADER)
    return rec


def _field_plot(path: Path, dumps: Sequence[str]) -> Path:
    lines = ["set view map", "set pm3d at b", "unset surface", "set terminal pngcairo size 700,600"]
    for name in dumps:
        lines.append(f"set output '{Path(name).stem}.png'")
        lines.append(f"set title '{Path(name).stem}'")
        lines.append(f"splot '{name}' using 1:2:(sqrt($3**2+$4**2)) with points palette pt 5 ps 0.5 notitle")
    path.write_text("\n".join(lines) + "\n")
    return path


# ---------------------------------------------------------------------------
# Noise sweep
# ---------------------------------------------------------------------------

NOISE_HEADER = ("delta", "seed", "method", "xi", "rel_error")
NOISE_SUMMARY_HEADER = ("delta",) + NOISE_METHODS


def run_noise_sweep(cfg: ExperimentConfig, ws: Optional[Workspace] = None, out=None) -> RunRecord:
    """Relative error against the multiplicative noise level for the four methods.

    The regularized variants use the GCV choice of ``xi`` on each draw;
    ``summary`` in the record's artifacts holds the per-method means.
    """
    ws = ws or Workspace(cfg)
    out = _out(out)
    rec = RunRecord("noise", cfg.hash(), key=("delta", "seed", "method"))
    s = cfg.background
    N = cfg.noise_n
    truth = ws.truth
    with rec.stage("training"):
        model = ws.model(s, N, "strong")
    sset = ws.model_sensors(s, N, "strong")
    b = ws.bound(s, sset, N)
    rec.artifacts.update(basis=b.fingerprint(), sensors=sset.fingerprint())
    v = sample_forcing(ws.helmholtz(cfg.truth), sset.centers)
    grid = cfg.xi_grid()
    with rec.stage("assimilation"):
        for delta in sorted(set(cfg.noise_levels)):
            for seed in sorted(set(cfg.noise_seeds)):
                y = observe(sset, truth, delta, seed).y
                xi = gcv_select(sset.A, b.B, y, grid)
                sols = {
                    "PBDW": (0.0, pbdw(b, sset, y, 0.0)),
                    "APBDW": (xi, pbdw(b, sset, y, xi)),
                    "PBDW-DeepONet": (0.0, hybrid_reconstruct(model, sset, b, y, v, 0.0)),
                    "APBDW-DeepONet": (xi, hybrid_reconstruct(model, sset, b, y, v, xi)),
                }
                for method, (x, sol) in sols.items():
                    rec.add({"delta": float(delta), "seed": int(seed), "method": method, "xi": float(x),
                             "rel_error": metrics(sol, truth, b, ws.l2)["rel_error"]})
    rec.artifacts["summary"] = noise_summary(rec.rows)
    if out is not None:
        rec.files.append(write_csv(out / "noise_summary.csv", NOISE_SUMMARY_HEADER, rec.artifacts["summary"],
                                   rec.config_hash))
        rec.files.append(gnuplot_script(out / "noise.gp", "noise_summary.csv", "relative error versus noise",
                                        "noise level", "relative L2 error",
                                        [(f"1:{i + 2}", m) for i, m in enumerate(NOISE_METHODS)], logy=False))
    _finish(rec, out, NOISE_HEADER)
    return rec


def noise_summary(rows: Sequence[dict]) -> list[dict]:
    acc: dict = defaultdict(list)
    for r in rows:
        acc[(r["delta"], r["method"])].append(r["rel_error"])
    deltas = sorted({d for d, _ in acc})
    return [{"delta": d, **{m: float(np.mean(acc[(d, m)])) for m in NOISE_METHODS}} for d in deltas]


# ---------------------------------------------------------------------------
# Sensor study
# ---------------------------------------------------------------------------

SENSORS_HEADER = ("strategy", "M", "seed", "N", "beta", "rel_error")
SENSORS_SUMMARY_HEADER = ("M", "sgreedy", "random", "beta_sgreedy", "beta_random")


def run_sensor_study(cfg: ExperimentConfig, ws: Optional[Workspace] = None, out=None) -> RunRecord:
    """SGreedy against random placement over the sensor counts, ``M = N`` included."""
    ws = ws or Workspace(cfg)
    out = _out(out)
    rec = RunRecord("sensors", cfg.hash(), key=("strategy", "M", "seed"))
    s = cfg.background
    N = cfg.sensors_n
    M_list = sorted(set(cfg.sensors_m) | {N})
    if M_list[0] < N:
        raise ConfigError(f"sensor counts below N={N} leave the background unobservable")
    with rec.stage("basis"):
        basis = ws.basis(s)
    rec.artifacts["basis"] = basis.fingerprint()
    with rec.stage("placement"):
        rows = compare_strategies(basis, N, M_list, sorted(set(cfg.sensors_seeds)), ws.truth, ws.h1, ws.l2,
                                  width=cfg.width)
    for r in rows:
        rec.add(dict(r))
    rec.artifacts["summary"] = sensor_summary(rec.rows)
    if out is not None:
        rec.files.append(write_csv(out / "sensors_summary.csv", SENSORS_SUMMARY_HEADER,
                                   rec.artifacts["summary"], rec.config_hash))
        rec.files.append(gnuplot_script(out / "sensors.gp", "sensors_summary.csv", "placement strategies",
                                        "M", "relative L2 error", [("1:2", "SGreedy"), ("1:3", "random")]))
    _finish(rec, out, SENSORS_HEADER)
    return rec


def sensor_summary(rows: Sequence[dict]) -> list[dict]:
    err: dict = defaultdict(list)
    beta: dict = defaultdict(list)
    for r in rows:
        err[(r["M"], r["strategy"])].append(r["rel_error"])
        beta[(r["M"], r["strategy"])].append(r["beta"])
    Ms = sorted({M for M, _ in err})
    return [{"M": M, "sgreedy": float(np.mean(err[(M, "sgreedy")])), "random": float(np.mean(err[(M, "random")])),
             "beta_sgreedy": float(np.mean(beta[(M, "sgreedy")])), "beta_random": float(np.mean(beta[(M, "random")]))}
            for M in Ms]


# ---------------------------------------------------------------------------
# Cost report
# ---------------------------------------------------------------------------

COST_HEADER = ("path", "label", "size", "count")


def run_cost_report(cfg: ExperimentConfig, ws: Optional[Workspace] = None, out=None,
                    M: Optional[int] = None) -> RunRecord:
    """Dense factorizations on the classical and hybrid online paths, plus median timings.

    The counts go to ``cost.csv``; timings (informational) to ``cost_timings.csv``,
    which is not part of the determinism contract.
    """
    N = cfg.cost_n
    M = cfg.m_for(N) if M is None else int(M)
    if M < 1:
        raise ConfigError("the cost report needs at least one sensor")
    if M < N:
        raise ConfigError(f"M={M} sensors cannot observe N={N} modes")
    if M != cfg.m_for(N):
        cfg = cfg.replace(m=str(M))
        ws = None
    ws = ws or Workspace(cfg)
    out = _out(out)
    rec = RunRecord("cost", cfg.hash(), key=("path", "label", "size"))
    s = cfg.background
    model = ws.model(s, N, "strong")
    sset = ws.model_sensors(s, N, "strong")
    b = ws.bound(s, sset, N)
    y = sset.observe_exact(ws.truth)
    v = sample_forcing(ws.helmholtz(cfg.truth), sset.centers)

    def classical():
        return pbdw(b, sset, y, 0.0)

    def hybrid():
        return hybrid_reconstruct(model, sset, b, y, v, 0.0)

    counts = {}
    for path, fn in (("classical", classical), ("hybrid", hybrid)):
        with instrument.factorization_log() as entries:
            fn()
        tally: dict = defaultdict(int)
        for label, size in entries:
            tally[(label, size)] += 1
        counts[path] = entries
        for (label, size), n in tally.items():
            rec.add({"path": path, "label": label, "size": size, "count": n})
    big = M + N
    rec.artifacts["classical_full_systems"] = sum(1 for _, sz in counts["classical"] if sz == big)
    rec.artifacts["hybrid_full_systems"] = sum(1 for _, sz in counts["hybrid"] if sz == big)
    rec.artifacts["hybrid_max_size"] = max((sz for _, sz in counts["hybrid"]), default=0)
    timings = []
    for path, fn in (("classical", classical), ("hybrid", hybrid), ("update_only", lambda: predict_update(model, v))):
        ts = []
        for _ in range(cfg.cost_repetitions):
            t0 = time.perf_counter()
            fn()
            ts.append(time.perf_counter() - t0)
        timings.append({"path": path, "median_ms": 1e3 * float(np.median(ts)), "repetitions": len(ts)})
        rec.timings[f"{path}_median_s"] = float(np.median(ts))
    rec.artifacts["timings"] = timings
    if out is not None:
        rec.files.append(write_csv(out / "cost_timings.csv", ("path", "median_ms", "repetitions"), timings,
                                   rec.config_hash))
    _finish(rec, out, COST_HEADER)
    return rec
