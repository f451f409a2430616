"""Command-line interface: ``hybrid-pbdw [--config F] [--seed S] [--out D] <command> ...``.

Exit status: 0 on success, 2 on configuration or usage errors, 3 on
numerical failures (resonance, singular systems, non-finite training).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..assimilation import gcv_select, inf_sup, metrics, pbdw
from ..field_core import ResonanceError, dump_field
from ..neural_operator import load_training_set, save_model, save_training_set, write_loss_curve
from ..observation import build_sensor_set, observe, random_placement, read_sensors, write_sensors
from ..placement import sgreedy, write_betas
from ..reduced_basis import bind_sensors, generate_snapshots, manifold_error, save_basis
from .config import ConfigError, ExperimentConfig, format_config, load_config
from .output import read_csv, write_csv
from .studies import run_bias_study, run_cost_report, run_mode_sweep, run_noise_sweep, run_sensor_study
from .workspace import Workspace, scenario_tag, train_model

log = logging.getLogger("hybrid_pbdw")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

ASSIMILATE_HEADER = ("N", "M", "xi", "delta", "seed", "e_exact", "e_estim", "eta_norm", "e_svd", "beta",
                     "orth_residual", "rel_error")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _scenario_arg(text: str):
    parts = tuple(p.strip().lower() for p in text.split("/"))
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("expected <bc>/<source>")
    return parts


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hybrid-pbdw", description="PBDW state estimation with DeepONet updates.")
    p.add_argument("--config", type=Path, help="INI configuration file (defaults apply otherwise)")
    p.add_argument("--seed", type=int, help="override [run] seed")
    p.add_argument("--out", type=Path, help="override [run] out directory")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("mesh", help="write the mesh nodes")
    sub.add_parser("config", help="print the effective configuration")

    for name, hlp in (("snapshots", "solve the best-knowledge model over the parameter grid"),
                      ("pod", "build the POD background basis")):
        s = sub.add_parser(name, help=hlp)
        s.add_argument("--scenario", type=_scenario_arg, help="<bc>/<source>, default: [problem] background")

    sens = sub.add_parser("sensors", help="sensor placement")
    ssub = sens.add_subparsers(dest="how", required=True, parser_class=_Parser)
    place = ssub.add_parser("place", help="SGreedy placement")
    place.add_argument("--scenario", type=_scenario_arg)
    place.add_argument("-N", type=int, required=True)
    place.add_argument("-M", type=int)
    rnd = ssub.add_parser("random", help="random placement")
    rnd.add_argument("-M", type=int, required=True)

    a = sub.add_parser("assimilate", help="reconstruct the truth from its observations")
    a.add_argument("--scenario", type=_scenario_arg)
    a.add_argument("-N", type=int, required=True)
    a.add_argument("--sensors", type=Path, help="sensor CSV (default: placement from the config)")
    a.add_argument("--noise", type=float, default=0.0)
    a.add_argument("--method", choices=("saddle", "two_step"), default="saddle")

    for name, hlp in (("dataset", "generate a training set"), ("train", "train a DeepONet")):
        s = sub.add_parser(name, help=hlp)
        s.add_argument("--scenario", type=_scenario_arg)
        s.add_argument("-N", type=int, required=True)
        s.add_argument("--mode", choices=("weak", "strong"))
        if name == "train":
            s.add_argument("--dataset", type=Path, help="training set from `dataset`")

    st = sub.add_parser("study", help="run an experiment")
    st.add_argument("which", choices=("modes", "bias", "noise", "sensors", "cost"))

    sub.add_parser("report", help="summarize the study tables found in the output directory")
    return p


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.out is not None:
        kw["out"] = str(args.out)
    return cfg.replace(**kw) if kw else cfg


def _scenario(cfg, args):
    s = getattr(args, "scenario", None) or cfg.background
    if s[0] not in ("dirichlet", "neumann") or s[1] not in ("perfect", "biased"):
        raise ConfigError(f"invalid scenario {'/'.join(s)}")
    return s


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return _dispatch(cfg, args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ResonanceError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def _dispatch(cfg: ExperimentConfig, args) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    chash = cfg.hash()
    cmd = args.command
    if cmd == "config":
        print(format_config(cfg), end="")
        return EXIT_OK
    ws = Workspace(cfg, cache_dir=out / "cache")
    if cmd == "mesh":
        bnd = np.zeros(ws.mesh.n_nodes, dtype=bool)
        bnd[ws.mesh.boundary_nodes] = True
        rows = [{"index": k, "x1": float(x[0]), "x2": float(x[1]), "boundary": bool(b)}
                for k, (x, b) in enumerate(zip(ws.mesh.nodes, bnd))]
        write_csv(out / "mesh.csv", ("index", "x1", "x2", "boundary"), rows, chash)
        print(f"{ws.mesh.nx}x{ws.mesh.ny} nodes, {len(ws.mesh.elements)} triangles")
    elif cmd == "snapshots":
        s = _scenario(cfg, args)
        snaps = generate_snapshots(ws.mesh, ws.mu_grid(), ws.helmholtz(s))
        np.savez(out / f"snapshots_{scenario_tag(s)}.npz", parameters=snaps.parameters, snapshots=snaps.snapshots)
        print(f"{len(snaps)} snapshots written")
    elif cmd == "pod":
        s = _scenario(cfg, args)
        basis = ws.basis(s)
        save_basis(out / f"basis_{scenario_tag(s)}.npz", basis)
        rows = [{"n": n + 1, "sigma": float(sv), "manifold_error": manifold_error(basis, n + 1)}
                for n, sv in enumerate(basis.singular_values)]
        write_csv(out / f"pod_{scenario_tag(s)}.csv", ("n", "sigma", "manifold_error"), rows, chash)
        print(f"N={basis.N}; manifold error at N=2: {manifold_error(basis, 2):.3e}")
    elif cmd == "sensors":
        if args.how == "place":
            s = _scenario(cfg, args)
            M = cfg.m_for(args.N) if args.M is None else args.M
            state = sgreedy(ws.basis(s).truncate(args.N), args.N, M, ws.h1, width=cfg.width)
            write_sensors(out / "sensors.csv", state.chosen)
            write_betas(out / "betas.csv", state)
            print(f"placed {M} sensors, beta = {state.betas[-1][2]:.4f}")
        else:
            write_sensors(out / "sensors.csv", random_placement(args.M, seed=cfg.seed, width=cfg.width))
            print(f"placed {args.M} random sensors")
    elif cmd == "assimilate":
        _assimilate(cfg, ws, args, out)
    elif cmd == "dataset":
        s = _scenario(cfg, args)
        mode = args.mode or _mode(cfg)
        data = ws.training_set(s, args.N, mode)
        path = out / f"dataset_{mode}_{scenario_tag(s)}_N{args.N}.npz"
        save_training_set(path, data)
        print(f"{data.K} pairs written to {path}")
    elif cmd == "train":
        s = _scenario(cfg, args)
        mode = args.mode or _mode(cfg)
        sset = ws.model_sensors(s, args.N, mode)
        bound = ws.bound(s, sset, args.N)
        data = load_training_set(args.dataset) if args.dataset else ws.training_set(s, args.N, mode)
        model = train_model(cfg, data, sset, bound, mode)
        stem = f"{mode}_{scenario_tag(s)}_N{args.N}"
        save_model(out / f"model_{stem}.npz", model)
        write_loss_curve(out / f"loss_{stem}.csv", model)
        _, train_loss, test_loss, orth = model.history[-1]
        print(f"final train loss {train_loss:.3e}, test loss {test_loss:.3e}, orthogonality {orth:.2e}")
    elif cmd == "study":
        driver = {"modes": run_mode_sweep, "bias": run_bias_study, "noise": run_noise_sweep,
                  "sensors": run_sensor_study, "cost": run_cost_report}[args.which]
        rec = driver(cfg, ws, out)
        print(f"{args.which}: {len(rec.rows)} rows -> {out / (rec.study + '.csv')}")
    elif cmd == "report":
        print(report(out), end="")
    return EXIT_OK


def _mode(cfg: ExperimentConfig) -> str:
    return "weak" if cfg.model == "weak" else "strong"


def _assimilate(cfg, ws, args, out) -> None:
    s = _scenario(cfg, args)
    N = args.N
    if args.sensors:
        sset = build_sensor_set(read_sensors(args.sensors), ws.h1)
    else:
        sset = ws.sensors(s, N)
    b = bind_sensors(ws.basis(s).truncate(N), sset)
    y = observe(sset, ws.truth, args.noise, cfg.seed).y
    xi = {"zero": 0.0, "fixed": cfg.xi}.get(cfg.xi_mode)
    if xi is None:
        xi = gcv_select(sset.A, b.B, y, cfg.xi_grid())
    sol = pbdw(b, sset, y, xi, method=args.method)
    met = metrics(sol, ws.truth, b, ws.l2)
    row = {"N": N, "M": sset.M, "xi": xi, "delta": args.noise, "seed": cfg.seed, **met,
           "beta": inf_sup(b.B, sset.A).beta, "orth_residual": sol.diagnostics["orthogonality_residual"]}
    write_csv(out / "assimilate.csv", ASSIMILATE_HEADER, [row], cfg.hash())
    dump_field(out / "reconstructed.txt", ws.mesh, sol.reconstructed)
    dump_field(out / "truth.txt", ws.mesh, ws.truth)
    print(f"relative L2 error {met['rel_error']:.4e} (xi = {xi:.3g})")


def report(out: Path) -> str:
    """Plain-text digest of the study tables in ``out``."""
    lines = []
    for name in ("modes", "bias", "noise_summary", "sensors_summary", "cost"):
        path = Path(out) / f"{name}.csv"
        if not path.exists():
            continue
        chash, rows = read_csv(path)
        lines.append(f"== {name} (config {chash}, {len(rows)} rows)")
        if not rows:
            continue
        cols = list(rows[0])
        lines.append("  ".join(f"{c:>14s}" for c in cols))
        for r in rows:
            lines.append("  ".join(f"{v:>14.6g}" if isinstance(v, float) else f"{str(v):>14s}" for v in r.values()))
        lines.append("")
    if not lines:
        lines.append(f"no study tables in {out}")
    text = "\n".join(lines) + "\n"
    (Path(out) / "report.txt").write_text(text)
    return text


if __name__ == "__main__":
    sys.exit(main())
