"""Experiment configuration: INI parsing, validation and hashing."""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class ConfigError(ValueError):
    pass


Scenario = tuple[str, str]  # (bc, source)

_BCS = ("dirichlet", "neumann")
_SOURCES = ("perfect", "biased")


@dataclass(frozen=True)
class ExperimentConfig:
    # problem
    mesh: int = 65
    mu_min: float = 2.0
    mu_max: float = 10.0
    n_mu: int = 51
    mu_eval: float = 6.0
    epsilon: float = 0.01
    truth: Scenario = ("dirichlet", "perfect")
    background: Scenario = ("neumann", "biased")
    n_max: int = 20
    # sensors
    width: float = 0.02
    strategy: str = "sgreedy"
    m: str = "50"
    # assimilation
    xi_mode: str = "gcv"
    xi: float = 0.0
    xi_min: float = 1e-10
    xi_max: float = 10.0
    xi_count: int = 45
    # network
    model: str = "strong"
    pairs_strong: int = 50
    pairs_weak: int = 501
    epochs_strong: int = 5000
    epochs_weak: int = 20000
    lr: float = 1e-3
    decay: float = 0.99
    decay_every: int = 1
    branch_layers: int = 10
    trunk_layers: int = 4
    omega: tuple[float, float] = (1.0, 1.0)
    train_fraction: float = 0.8
    # studies
    modes_n: tuple[int, ...] = tuple(range(1, 16))
    modes_dump: tuple[int, ...] = (2, 6, 15)
    bias_n: int = 2
    bias_scenarios: tuple[Scenario, ...] = (("neumann", "perfect"), ("neumann", "biased"))
    noise_n: int = 6
    noise_levels: tuple[float, ...] = (0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3)
    noise_seeds: tuple[int, ...] = tuple(range(10))
    sensors_n: int = 6
    sensors_m: tuple[int, ...] = (6, 8, 10, 12, 15, 20, 25, 30, 40, 50)
    sensors_seeds: tuple[int, ...] = tuple(range(10))
    cost_n: int = 2
    cost_repetitions: int = 100
    # run
    seed: int = 0
    out: str = "results"

    def __post_init__(self):
        validate(self)

    def m_for(self, N: int) -> int:
        """Sensor count for ``N`` modes: a fixed number or the ``kN`` rule."""
        rule = re.fullmatch(r"(\d+)N", self.m)
        return int(rule.group(1)) * N if rule else int(self.m)

    def xi_grid(self) -> np.ndarray:
        return np.logspace(np.log10(self.xi_min), np.log10(self.xi_max), self.xi_count)

    def hash(self, exclude: Sequence[str] = ("out",)) -> str:
        """Stable digest of every field but ``exclude``."""
        d = {k: v for k, v in dataclasses.asdict(self).items() if k not in exclude}
        blob = json.dumps(d, sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)


def _check_scenario(name: str, s) -> None:
    if len(s) != 2 or s[0] not in _BCS or s[1] not in _SOURCES:
        raise ConfigError(f"{name}: expected '<{'|'.join(_BCS)}>/<{'|'.join(_SOURCES)}>', got {s!r}")


def validate(c: ExperimentConfig) -> None:
    if c.mesh < 3:
        raise ConfigError("mesh must have at least 3 points per side")
    if not (0 < c.mu_min <= c.mu_max):
        raise ConfigError("need 0 < mu_min <= mu_max")
    if c.n_mu < 1:
        raise ConfigError("n_mu must be positive")
    if not (c.mu_eval > 0):
        raise ConfigError("mu_eval must be positive")
    if c.epsilon < 0:
        raise ConfigError("epsilon must be nonnegative")
    _check_scenario("truth", c.truth)
    _check_scenario("background", c.background)
    for s in c.bias_scenarios:
        _check_scenario("bias scenarios", s)
    if c.strategy not in ("sgreedy", "random"):
        raise ConfigError(f"unknown sensor strategy {c.strategy!r}")
    if not re.fullmatch(r"\d+N?", c.m) or int(c.m.rstrip("N")) < 1:
        raise ConfigError(f"m must be a positive integer or '<k>N', got {c.m!r}")
    if c.xi_mode not in ("zero", "fixed", "gcv"):
        raise ConfigError(f"unknown xi mode {c.xi_mode!r}")
    if c.xi < 0 or not (0 < c.xi_min <= c.xi_max) or c.xi_count < 1:
        raise ConfigError("invalid regularization settings")
    if c.model not in ("none", "weak", "strong"):
        raise ConfigError(f"unknown model mode {c.model!r}")
    if min(c.pairs_strong, c.pairs_weak, c.epochs_strong, c.epochs_weak, c.decay_every) < 1:
        raise ConfigError("pair counts, epochs and decay_every must be positive")
    if not (0 < c.train_fraction <= 1) or not (0 < c.decay <= 1) or c.lr <= 0:
        raise ConfigError("invalid optimizer settings")
    for name in ("modes_n", "bias_scenarios", "noise_levels", "noise_seeds", "sensors_m", "sensors_seeds"):
        if len(getattr(c, name)) == 0:
            raise ConfigError(f"{name} must not be empty")
    ns = list(c.modes_n) + [c.bias_n, c.noise_n, c.sensors_n, c.cost_n]
    if min(ns) < 1 or max(ns) > c.n_max:
        raise ConfigError(f"mode counts must lie in [1, n_max={c.n_max}]")
    if any(d < 0 or d > 0.3 for d in c.noise_levels):
        raise ConfigError("noise levels must lie in [0, 0.3]")
    if min(c.sensors_m) < 1:
        raise ConfigError("sensor counts must be positive")
    if c.cost_repetitions < 1:
        raise ConfigError("cost repetitions must be positive")


# ---------------------------------------------------------------------------
# INI reading
# ---------------------------------------------------------------------------

def _ints(s: str) -> tuple[int, ...]:
    """``"1-15"``, ``"2 6 15"`` or a mix of both."""
    out: list[int] = []
    for tok in s.replace(",", " ").split():
        rng = re.fullmatch(r"(\d+)-(\d+)", tok)
        if rng:
            out.extend(range(int(rng.group(1)), int(rng.group(2)) + 1))
        else:
            out.append(int(tok))
    return tuple(out)


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(t) for t in s.replace(",", " ").split())


def _scenario(s: str) -> Scenario:
    parts = tuple(p.strip().lower() for p in s.split("/"))
    if len(parts) != 2:
        raise ConfigError(f"scenario must read '<bc>/<source>', got {s!r}")
    return parts  # type: ignore[return-value]


def _scenarios(s: str) -> tuple[Scenario, ...]:
    return tuple(_scenario(t) for t in s.replace(",", " ").split())


# section -> key -> (field, parser)
_KEYS = {
    "problem": {
        "mesh": ("mesh", int), "mu_min": ("mu_min", float), "mu_max": ("mu_max", float),
        "n_mu": ("n_mu", int), "mu_eval": ("mu_eval", float), "epsilon": ("epsilon", float),
        "truth": ("truth", _scenario), "background": ("background", _scenario), "n_max": ("n_max", int),
    },
    "sensors": {"width": ("width", float), "strategy": ("strategy", str.strip), "m": ("m", str.strip)},
    "assimilation": {
        "xi_mode": ("xi_mode", str.strip), "xi": ("xi", float), "xi_min": ("xi_min", float),
        "xi_max": ("xi_max", float), "xi_count": ("xi_count", int),
    },
    "network": {
        "mode": ("model", str.strip), "pairs_strong": ("pairs_strong", int), "pairs_weak": ("pairs_weak", int),
        "epochs_strong": ("epochs_strong", int), "epochs_weak": ("epochs_weak", int), "lr": ("lr", float),
        "decay": ("decay", float), "decay_every": ("decay_every", int), "branch_layers": ("branch_layers", int),
        "trunk_layers": ("trunk_layers", int), "omega": ("omega", _floats),
        "train_fraction": ("train_fraction", float),
    },
    "study.modes": {"n": ("modes_n", _ints), "dump": ("modes_dump", _ints)},
    "study.bias": {"n": ("bias_n", int), "scenarios": ("bias_scenarios", _scenarios)},
    "study.noise": {"n": ("noise_n", int), "levels": ("noise_levels", _floats), "seeds": ("noise_seeds", _ints)},
    "study.sensors": {"n": ("sensors_n", int), "m": ("sensors_m", _ints), "seeds": ("sensors_seeds", _ints)},
    "study.cost": {"n": ("cost_n", int), "repetitions": ("cost_repetitions", int)},
    "run": {"seed": ("seed", int), "out": ("out", str.strip)},
}


def parse_config(text: str, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    kw = {}
    for section in cp.sections():
        if section not in _KEYS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in _KEYS[section]:
                raise ConfigError(f"unknown key '{key}' in [{section}]")
            name, conv = _KEYS[section][key]
            try:
                kw[name] = conv(raw)
            except (ValueError, AttributeError) as exc:
                raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from exc
    if "omega" in kw and len(kw["omega"]) != 2:
        raise ConfigError("omega takes two weights")
    return dataclasses.replace(base or ExperimentConfig(), **kw)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config(text)


def format_config(c: ExperimentConfig) -> str:
    """INI text that parses back to ``c``."""
    def scen(s):
        return f"{s[0]}/{s[1]}"

    def seq(v):
        return " ".join(repr(x) if isinstance(x, float) else str(x) for x in v)

    inv = {}
    for section, keys in _KEYS.items():
        for key, (name, _) in keys.items():
            inv[name] = (section, key)
    cp = configparser.ConfigParser()
    for f in dataclasses.fields(c):
        section, key = inv[f.name]
        v = getattr(c, f.name)
        if f.name in ("truth", "background"):
            s = scen(v)
        elif f.name == "bias_scenarios":
            s = " ".join(scen(x) for x in v)
        elif isinstance(v, tuple):
            s = seq(v)
        elif isinstance(v, float):
            s = repr(v)
        else:
            s = str(v)
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, key, s)
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
