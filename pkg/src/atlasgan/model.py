"""Estimator state, latent samplers and the sampling pipeline."""
from __future__ import annotations

import io
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .funcspace import BumpFamily
from .funcspace.io import FormatError, _Reader, family_to_bytes, read_family
from .geometry import GeoConsts, gamma_cutoff, global_glue, psi_inverse, psi_inverse_vjp

MODES = ("direct", "factorized")
CKPT_MAGIC = b"AGCKPT\x00\x01"
CKPT_VERSION = 1


class StateError(RuntimeError):
    """Operation needs model state that is absent (e.g. inverses)."""


@dataclass
class ChartedModel:
    mode: str
    gen1: list  # chart maps R^d -> R^p
    geo: GeoConsts
    log_weights: np.ndarray
    n_train: int
    gen2: list | None = None  # density maps R^d -> R^d (factorized only)
    inv: list | None = None  # approximate inverses R^p -> R^d
    C_alpha: float = 10.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.mode == "factorized" and self.gen2 is None:
            raise ValueError("factorized mode needs gen2 maps")
        if self.d < 1 or self.p <= self.d:
            raise ValueError(f"need 1 <= d < p, got d={self.d}, p={self.p}")
        self.log_weights = np.asarray(self.log_weights, dtype=float)

    @property
    def m(self) -> int:
        return len(self.gen1)

    @property
    def d(self) -> int:
        return self.gen1[0].k

    @property
    def p(self) -> int:
        return self.gen1[0].out_dim

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def has_inverses(self) -> bool:
        return self.inv is not None

    def clamp_weights(self):
        lim = math.log(self.C_alpha)
        np.clip(self.log_weights, -lim, lim, out=self.log_weights)

    def families(self):
        """(name, family) pairs in canonical order."""
        out = [(f"gen1[{i}]", g) for i, g in enumerate(self.gen1)]
        if self.gen2 is not None:
            out += [(f"gen2[{i}]", g) for i, g in enumerate(self.gen2)]
        if self.inv is not None:
            out += [(f"inv[{i}]", g) for i, g in enumerate(self.inv)]
        return out

    def param_blocks(self):
        """(name, array) for every trainable array; arrays are live views."""
        out = []
        for name, fam in self.families():
            out += [(f"{name}.{n}", a) for n, a in zip(("A", "b", "alpha"), fam.arrays())]
        out.append(("log_weights", self.log_weights))
        return out

    def project(self):
        for _, fam in self.families():
            fam.project()
        self.clamp_weights()
        return self

    def copy(self) -> "ChartedModel":
        return ChartedModel(
            self.mode,
            [g.copy() for g in self.gen1],
            self.geo,
            self.log_weights.copy(),
            self.n_train,
            None if self.gen2 is None else [g.copy() for g in self.gen2],
            None if self.inv is None else [g.copy() for g in self.inv],
            self.C_alpha,
        )

    def glue_maps(self):
        if self.inv is None:
            raise StateError("gluing needs approximate inverses; this model has none (phase-1 checkpoint?)")
        return self.gen1, self.inv

    def chart_center(self, i: int) -> np.ndarray:
        return self.gen1[i](np.zeros((1, self.d)))[0]


def init_model(cfg_model, data_box, rng, n_train: int, geo: GeoConsts) -> ChartedModel:
    """Feasible random model from a ModelSpec-like object.

    ``cfg_model`` needs: mode, m, d, p, gen_L1, gen_L2, and for factorized mode
    gen2_L1, gen2_L2. Chart-map centres are spread over the latent ball of
    radius sqrt(log n) + 1.
    """
    rad = math.sqrt(math.log(n_train)) + 1.0
    if cfg_model.mode == "factorized":
        # gen1 acts on B(0, 2 tau); gen2 on the latent ball
        box1 = (-2 * geo.tau, 2 * geo.tau)
    else:
        box1 = (-rad, rad)
    gen1 = [BumpFamily.init_random(cfg_model.d, cfg_model.p, cfg_model.gen_L1, cfg_model.gen_L2, rng, box=box1)
            for _ in range(cfg_model.m)]
    gen2 = None
    if cfg_model.mode == "factorized":
        gen2 = [BumpFamily.init_random(cfg_model.d, cfg_model.d, cfg_model.gen2_L1, cfg_model.gen2_L2, rng,
                                       box=(-rad, rad)) for _ in range(cfg_model.m)]
    return ChartedModel(cfg_model.mode, gen1, geo, np.zeros(cfg_model.m), n_train, gen2,
                        C_alpha=getattr(cfg_model, "C_alpha", 10.0))


# -- latent and chart sampling --------------------------------------------


def latent_radius(n_train: int) -> float:
    return math.sqrt(math.log(n_train))


def sample_truncated_gaussian(d: int, n_train: int, rng, geo: GeoConsts, size: int = 1,
                              skip_rejection: bool = False) -> np.ndarray:
    """Draws from the density proportional to gamma_d(x) Gamma((|x| - sqrt(log n))_+).

    Standard Gaussian proposals accepted with probability Gamma(...). With
    ``skip_rejection`` the raw Gaussian draws are returned.
    """
    if n_train < 2:
        raise ValueError("n_train must be >= 2")
    r0 = latent_radius(n_train)
    out = np.empty((0, d))
    while len(out) < size:
        need = size - len(out)
        y = rng.standard_normal((need, d))
        if skip_rejection:
            out = np.concatenate([out, y])
            break
        excess = np.maximum(np.linalg.norm(y, axis=1) - r0, 0.0)
        keep = rng.random(need) < gamma_cutoff(excess, geo)
        out = np.concatenate([out, y[keep]])
    return out[:size]


def sample_chart_index(alpha, rng, size=None):
    alpha = np.asarray(alpha, dtype=float)
    if np.any(~(alpha > 0)):
        raise ValueError(f"chart weights must be positive, got {alpha}")
    return rng.choice(len(alpha), size=size, p=alpha / alpha.sum())


# -- push-forward through one chart ---------------------------------------


def push_forward(model: ChartedModel, i: int, y):
    """Chart-i image of latents y (B, d) plus a cache for :func:`push_backward`."""
    if model.mode == "direct":
        x, c1 = model.gen1[i].forward(y)
        return x, ("direct", c1)
    h, c2 = model.gen2[i].forward(y)
    u = psi_inverse(h, model.geo.tau)
    x, c1 = model.gen1[i].forward(u)
    return x, ("factorized", c1, c2, h)


def push_backward(model: ChartedModel, i: int, cache, v):
    """Parameter gradients of sum_b <v_b, push(y_b)>; returns {block name: array}."""
    grads = {}
    g1 = model.gen1[i].grad_params(cache[1], v)
    grads.update(zip((f"gen1[{i}].A", f"gen1[{i}].b", f"gen1[{i}].alpha"), g1.arrays()))
    if cache[0] == "factorized":
        _, c1, c2, h = cache
        vu = model.gen1[i].vjp_input(c1, v)
        vh = psi_inverse_vjp(h, vu, model.geo.tau)
        g2 = model.gen2[i].grad_params(c2, vh)
        grads.update(zip((f"gen2[{i}].A", f"gen2[{i}].b", f"gen2[{i}].alpha"), g2.arrays()))
    return grads


def push_latent(model: ChartedModel, i: int, y):
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    x, _ = push_forward(model, i, np.atleast_2d(y))
    return x[0] if single else x


def push_many(model: ChartedModel, y, omega):
    """Images of latents y under charts omega, in input order."""
    out = np.empty((len(y), model.p))
    for i in range(model.m):
        sel = omega == i
        if np.any(sel):
            out[sel] = push_forward(model, i, y[sel])[0]
    return out


# -- clouds ----------------------------------------------------------------


@dataclass
class SampleCloud:
    points: np.ndarray
    origin: str = "generated"  # real | generated
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if len(self.points) == 0:
            raise ValueError("a cloud needs at least one point")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("cloud contains non-finite coordinates")

    def __len__(self):
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def sample_model(model: ChartedModel, count: int, glue: bool, rng, skip_rejection: bool = False,
                 seed: int | None = None) -> SampleCloud:
    """y ~ truncated Gaussian, i ~ Mult(normalised weights), x = [F o] g_i(y)."""
    if glue and not model.has_inverses:
        raise StateError("glue=True needs approximate inverses; model has none")
    y = sample_truncated_gaussian(model.d, model.n_train, rng, model.geo, count, skip_rejection)
    omega = sample_chart_index(model.weights, rng, size=count)
    pts = push_many(model, y, omega)
    if glue:
        pts = global_glue(pts, model)
    counts = np.bincount(omega, minlength=model.m).tolist()
    return SampleCloud(pts, "generated", seed, {"glue": bool(glue), "chart_counts": counts,
                                               "skip_rejection": bool(skip_rejection)})


# -- checkpoints -----------------------------------------------------------
#
# magic 8s | version u16 | tau, K_bound, eps_gamma f64 | mode u8 (0 direct, 1 factorized)
# d, p, m, n_train u32 | C_alpha f64 | has_gen2 u8 | has_inv u8
# then gen1[0..m), gen2[0..m) if present, inv[0..m) if present: u64 length + family record
# then log_weights: m x f64


def model_to_bytes(model: ChartedModel) -> bytes:
    buf = io.BytesIO()
    g = model.geo
    buf.write(struct.pack("<8sH3dB4IdBB", CKPT_MAGIC, CKPT_VERSION, g.tau, g.K_bound, g.eps_gamma,
                          MODES.index(model.mode), model.d, model.p, model.m, model.n_train,
                          model.C_alpha, model.gen2 is not None, model.inv is not None))
    for _, fam in model.families():
        rec = family_to_bytes(fam)
        buf.write(struct.pack("<Q", len(rec)))
        buf.write(rec)
    buf.write(np.ascontiguousarray(model.log_weights, dtype="<f8").tobytes())
    return buf.getvalue()


def model_from_bytes(data: bytes) -> ChartedModel:
    r = _Reader(data, "checkpoint")
    head = r.unpack("<8sH3dB4IdBB")
    magic, version, tau, K, eps, mode, d, p, m, n_train, C_alpha, has2, hasinv = head
    if magic != CKPT_MAGIC:
        raise FormatError(f"not a checkpoint (magic {magic!r})")
    if version != CKPT_VERSION:
        raise FormatError(f"checkpoint version {version}, this build reads {CKPT_VERSION}")
    if mode >= len(MODES):
        raise FormatError(f"unknown mode code {mode}")

    def fams(n, k_in, k_out, what):
        out = []
        for idx in range(n):
            (length,) = r.unpack("<Q")
            f = read_family(_Reader(r.take(length), f"{what}[{idx}] record"))
            if f.k != k_in or f.out_dim != k_out:
                raise FormatError(f"{what}[{idx}] has dims {f.k}->{f.out_dim}, header says {k_in}->{k_out}")
            out.append(f)
        return out

    gen1 = fams(m, d, p, "gen1")
    gen2 = fams(m, d, d, "gen2") if has2 else None
    inv = fams(m, p, d, "inv") if hasinv else None
    logw = r.floats((m,))
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes in checkpoint")
    return ChartedModel(MODES[mode], gen1, GeoConsts(tau, K, eps), logw.copy(), n_train, gen2, inv, C_alpha)


def save_model(model: ChartedModel, path):
    """Atomic write: temp file in the same directory, then rename."""
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(model_to_bytes(model))
    os.replace(tmp, path)


def load_model(path) -> ChartedModel:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
