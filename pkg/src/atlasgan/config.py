"""Run configuration: one flat dataclass, stored as a sectioned INI file.

Every key belongs to exactly one section; unknown keys, keys in the wrong
section and unparsable values are all reported together.
"""
from __future__ import annotations

import configparser
import dataclasses
import io
import math
from dataclasses import dataclass, fields
from decimal import Decimal, getcontext

SECTIONS = {
    "data": ("data_path", "surface", "n"),
    "model": ("mode", "m", "d", "p", "gen_L1", "gen_L2", "gen2_L1", "gen2_L2", "inv_L1", "inv_L2",
              "disc_L1", "disc_L2", "C_alpha", "K_bound", "tau", "eps_gamma"),
    "train": ("seed", "beta", "N", "batch_real", "batch_fake", "lr_gen", "lr_disc", "adam_beta1",
              "adam_beta2", "disc_steps_per_gen", "phase1_steps", "lr_decay", "lr_decay_steps", "lr_floor",
              "skip_rejection",
              "checkpoint_every"),
    "phase2": ("phase2_steps", "lr_scale2", "penalty_max", "penalty_warmup", "inv_fit_latents",
               "inv_fit_steps", "inv_fit_lr", "probes", "use_regularizer", "covering_cap"),
    "eval": ("eval_count", "block_size", "trials"),
}


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid config:\n  " + "\n  ".join(self.problems))


@dataclass
class TrainConfig:
    # data
    data_path: str = ""
    surface: str = ""  # sphere | torus | "" (only used for evaluation)
    n: int = 2000
    # model
    mode: str = "direct"
    m: int = 2
    d: int = 2
    p: int = 3
    gen_L1: int = 3
    gen_L2: int = 500
    gen2_L1: int = 2
    gen2_L2: int = 32
    inv_L1: int = 3
    inv_L2: int = 64
    disc_L1: int = 3
    disc_L2: int = 2000
    C_alpha: float = 10.0
    K_bound: float = 0.0  # 0 -> max data norm
    tau: float = 0.0  # 0 -> 1/(8K)
    eps_gamma: float = 0.0  # 0 -> tau^2/8
    # train
    seed: int = 0
    beta: float = 1.5
    N: int = 0  # 0 -> derived from (n, beta, d)
    batch_real: int = 128
    batch_fake: int = 128
    lr_gen: float = 1e-3
    lr_disc: float = 1e-3
    adam_beta1: float = 0.5
    adam_beta2: float = 0.9
    disc_steps_per_gen: int = 5
    phase1_steps: int = 3000
    lr_decay: str = "linear"  # linear | none
    lr_decay_steps: int = 0  # 0 -> decay over the whole phase
    lr_floor: float = 0.0  # linear decay stops at this fraction of the initial lr
    skip_rejection: bool = False
    checkpoint_every: int = 500
    # phase 2
    phase2_steps: int = 2000
    lr_scale2: float = 0.1
    penalty_max: float = 100.0
    penalty_warmup: float = 0.2
    inv_fit_latents: int = 2048
    inv_fit_steps: int = 200
    inv_fit_lr: float = 1e-2
    probes: int = 64
    use_regularizer: bool = True
    covering_cap: int = 512
    # eval
    eval_count: int = 10000
    block_size: int = 4096
    trials: int = 3

    def validate(self):
        problems = []
        ints_pos = ("n", "m", "d", "p", "gen_L1", "gen_L2", "gen2_L1", "gen2_L2", "inv_L1", "inv_L2",
                    "disc_L1", "disc_L2", "batch_real", "batch_fake", "disc_steps_per_gen",
                    "inv_fit_latents", "probes", "covering_cap", "eval_count", "block_size", "trials",
                    "checkpoint_every")
        for k in ints_pos:
            if getattr(self, k) < 1:
                problems.append(f"{k} must be >= 1 (got {getattr(self, k)})")
        for k in ("phase1_steps", "phase2_steps", "inv_fit_steps", "N", "lr_decay_steps"):
            if getattr(self, k) < 0:
                problems.append(f"{k} must be >= 0 (got {getattr(self, k)})")
        for k in ("lr_gen", "lr_disc", "inv_fit_lr", "lr_scale2"):
            if not (getattr(self, k) > 0 and math.isfinite(getattr(self, k))):
                problems.append(f"{k} must be finite and > 0 (got {getattr(self, k)})")
        if not 0 <= self.lr_floor <= 1:
            problems.append(f"lr_floor must lie in [0, 1] (got {self.lr_floor})")
        if self.mode not in ("direct", "factorized"):
            problems.append(f"mode must be direct or factorized (got {self.mode!r})")
        if self.lr_decay not in ("linear", "none"):
            problems.append(f"lr_decay must be linear or none (got {self.lr_decay!r})")
        if self.surface not in ("", "sphere", "torus"):
            problems.append(f"surface must be sphere, torus or empty (got {self.surface!r})")
        if self.n < 2:
            problems.append("n must be >= 2")
        if not self.p > self.d:
            problems.append(f"need p > d (got p={self.p}, d={self.d})")
        if self.C_alpha < 1:
            problems.append("C_alpha must be >= 1")
        if self.penalty_max < 0:
            problems.append("penalty_max must be >= 0")
        if not 0 <= self.penalty_warmup <= 1:
            problems.append("penalty_warmup must lie in [0, 1]")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            problems.append("Adam moment decays must lie in (0, 1)")
        if self.block_size > 4096:
            problems.append("block_size is capped at 4096 (exact assignment solver)")
        if problems:
            raise ConfigError(problems)
        return self

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        for sec, keys in SECTIONS.items():
            cp[sec] = {k: _fmt(getattr(self, k)) for k in keys}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def as_dict(self):
        return dataclasses.asdict(self)


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _parse_value(key, raw):
    typ = _TYPES[key]
    raw = raw.strip()
    if typ == "bool":
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if typ == "int":
        return int(raw)
    if typ == "float":
        return float(raw)
    return raw


def config_from_ini(text: str, base: TrainConfig | None = None) -> TrainConfig:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp.read_string(text)
    values = dataclasses.asdict(base or TrainConfig())
    problems = []
    home = {k: sec for sec, keys in SECTIONS.items() for k in keys}
    for sec in cp.sections():
        if sec not in SECTIONS:
            problems.append(f"unknown section [{sec}]")
            continue
        for key, raw in cp[sec].items():
            if key not in home:
                problems.append(f"unknown key {key!r} in [{sec}]")
            elif home[key] != sec:
                problems.append(f"key {key!r} belongs in [{home[key]}], found in [{sec}]")
            else:
                try:
                    values[key] = _parse_value(key, raw)
                except ValueError as exc:
                    problems.append(f"{sec}.{key}: {exc}")
    if problems:
        raise ConfigError(problems)
    return TrainConfig(**values).validate()


def load_config(path) -> TrainConfig:
    with open(path, encoding="utf-8") as fh:
        return config_from_ini(fh.read())


# -- presets ---------------------------------------------------------------

PRESETS = {
    "sphere": dict(surface="sphere", n=2000, m=2, d=2, p=3, gen_L1=3, gen_L2=500, disc_L1=3, disc_L2=2000,
                   lr_gen=5e-3, lr_disc=1e-2, phase1_steps=2000, phase2_steps=200, use_regularizer=False),
    "torus": dict(surface="torus", n=3000, m=2, d=2, p=3, gen_L1=3, gen_L2=1500, disc_L1=3, disc_L2=3000,
                  lr_gen=5e-3, lr_disc=1e-2, phase1_steps=3000, lr_decay_steps=1000, lr_floor=0.1,
                  phase2_steps=200, use_regularizer=False),
}


def preset(name: str, **overrides) -> TrainConfig:
    if name not in PRESETS:
        raise ConfigError([f"unknown preset {name!r}; choose from {sorted(PRESETS)}"])
    return TrainConfig(**{**PRESETS[name], **overrides}).validate()


# -- scales ----------------------------------------------------------------


def derive_scales(n: int, beta: float, d: int):
    """(delta_n, delta_N, N) with delta_x = x^(-1/(2 beta + d)).

    N = n when beta + 1 >= d/2, else ceil(n^((2 beta + d)/(4 beta + 2))). The
    power is taken in 50-digit decimal arithmetic so the ceiling is exact for
    any realistic n.
    """
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if not beta >= 1:
        raise ValueError(f"beta must be >= 1, got {beta}")
    if d < 2:
        raise ValueError(f"d must be >= 2, got {d}")
    if beta + 1 >= d / 2:
        N = int(n)
    else:
        getcontext().prec = 50
        expo = (Decimal(2) * Decimal(repr(beta)) + d) / (Decimal(4) * Decimal(repr(beta)) + 2)
        val = (expo * Decimal(n).ln()).exp()
        N = int(val.to_integral_value(rounding="ROUND_CEILING"))
    delta_n = n ** (-1.0 / (2 * beta + d))
    delta_N = N ** (-1.0 / (2 * beta + d))
    return delta_n, delta_N, N


def resolve_N(cfg: TrainConfig) -> int:
    if cfg.N:
        return cfg.N
    return derive_scales(cfg.n, max(cfg.beta, 1.0), max(cfg.d, 2))[2]


def default_K(points) -> float:
    import numpy as np

    return float(np.max(np.linalg.norm(points, axis=1)))


def latent_box(n: int) -> float:
    return math.sqrt(math.log(n)) + 1.0
