"""Two-phase projected Adam training of the charted generator.

Phase 1 trains generators, chart weights and the discriminator on the
adversarial loss without gluing. Phase 2 adds approximate inverses (warm
started by least squares), turns gluing on and ramps the penalty on the
consistency loss and regularizer surrogate.

All randomness comes from :func:`atlasgan.rng.stream` keyed by the config
seed, and BLAS runs single threaded here, so a (seed, config) pair fixes the
loss log bit for bit.
"""
from __future__ import annotations

import csv
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .config import TrainConfig, default_K, derive_scales, latent_box, resolve_N
from .funcspace import BumpFamily
from .geometry import GeoConsts, build_covering, psi_inverse
from .losses import Batch, adversarial_and_grads, consistency_loss, objective_and_grads, regularizer, sample_probes
from .model import ChartedModel, init_model, sample_truncated_gaussian, save_model
from .rng import stream

LOG_COLUMNS = ("step", "adversarial", "consistency", "reg_exact", "reg_surrogate", "penalty_coeff", "total",
               "wall_ms")


class DivergenceError(RuntimeError):
    """Non-finite loss or parameters. ``model`` holds the last good state."""

    def __init__(self, step, model, disc, log):
        super().__init__(f"training diverged at step {step}; returning last good state")
        self.step = step
        self.model = model
        self.disc = disc
        self.log = log


class Adam:
    """Adam on a list of arrays, updated in place."""

    def __init__(self, arrays, lr, b1=0.5, b2=0.9, eps=1e-8):
        self.arrays = list(arrays)
        self.lr = lr
        self.b1, self.b2, self.eps = b1, b2, eps
        self.m = [np.zeros_like(a) for a in self.arrays]
        self.v = [np.zeros_like(a) for a in self.arrays]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for a, g, m, v in zip(self.arrays, grads, self.m, self.v):
            if g is None:
                continue
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            a -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainResult:
    model: ChartedModel
    disc: BumpFamily
    log: list = field(default_factory=list)  # dicts keyed by LOG_COLUMNS
    info: dict = field(default_factory=dict)

    def losses(self):
        """Loss columns only (no wall time), for reproducibility comparisons."""
        return [tuple(r[k] for k in LOG_COLUMNS if k != "wall_ms") for r in self.log]


def write_log_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([r["step"]] + [repr(r[k]) for k in LOG_COLUMNS[1:]])


# -- set-up helpers --------------------------------------------------------


def make_geometry(cfg: TrainConfig, data) -> GeoConsts:
    K = cfg.K_bound if cfg.K_bound > 0 else default_K(data)
    return GeoConsts.from_K(K, cfg.tau or None, cfg.eps_gamma or None)


def init_discriminator(cfg: TrainConfig, data, rng) -> BumpFamily:
    return BumpFamily.init_random(cfg.p, 1, cfg.disc_L1, cfg.disc_L2, rng, box=(data.min(0), data.max(0)))


def capped_covering(radius, eps, dim, cap):
    """eps-grid covering of the ball, coarsened by powers of 2^(1/dim) until it
    has at most ``cap`` points."""
    while True:
        n_side = int(math.floor(radius / eps + 0.5))
        if (2 * n_side + 1) ** dim <= 64 * cap:
            pts = build_covering(radius, eps, dim).points
            if len(pts) <= cap:
                return pts, eps
        eps *= 2.0 ** (1.0 / dim)


def coverings(model: ChartedModel, cap):
    """(Z1, Z2): coverings of B(0, tau) and, in factorized mode, of B(0, 2 sqrt(log n))."""
    g = model.geo
    Z1, _ = capped_covering(g.tau, g.eps_gamma, model.d, cap)
    Z2 = None
    if model.mode == "factorized":
        Z2, _ = capped_covering(2.0 * math.sqrt(math.log(model.n_train)), g.eps_gamma, model.d, cap)
    return Z1, Z2


def penalty_at(step, total, lam_max, warmup):
    """0 for the first ``warmup`` fraction of the budget, then linear up to lam_max at the last step."""
    if total <= 1:
        return 0.0 if step == 0 else float(lam_max)
    start = warmup * (total - 1)
    if step <= start:
        return 0.0
    return float(lam_max) * (step - start) / ((total - 1) - start)


def _lr_factor(cfg, step, total, phase="phase1"):
    """Linear decay to 0 over the phase. Phase 1 may instead decay over
    ``lr_decay_steps`` and then hold at ``lr_floor``; phase 2 always decays to 0."""
    if cfg.lr_decay == "none" or total <= 0:
        return 1.0
    if phase != "phase1":
        return 1.0 - step / total
    return max(cfg.lr_floor, 1.0 - step / (cfg.lr_decay_steps or total))


def _finite(model, disc):
    return all(np.all(np.isfinite(a)) for _, a in model.param_blocks()) and all(
        np.all(np.isfinite(a)) for a in disc.arrays())


def _draw_fake(cfg, model, rng_lat, rng_w, size):
    y = sample_truncated_gaussian(model.d, model.n_train, rng_lat, model.geo, size, cfg.skip_rejection)
    omega = rng_w.integers(0, model.m, size)
    return y, omega


def _gen_arrays(model, include_inv=True):
    names, arrays = [], []
    for name, arr in model.param_blocks():
        if not include_inv and name.startswith("inv["):
            continue
        names.append(name)
        arrays.append(arr)
    return names, arrays


def _run(cfg, model, disc, data, steps, seed, phase, lr_scale=1.0, glue=False, penalty=None, probes=0,
         Z=(None, None), freeze_inverses=False, run_dir=None, progress=None):
    names, arrays = _gen_arrays(model, include_inv=not freeze_inverses)
    opt_g = Adam(arrays, cfg.lr_gen * lr_scale, cfg.adam_beta1, cfg.adam_beta2)
    opt_d = Adam(disc.arrays(), cfg.lr_disc * lr_scale, cfg.adam_beta1, cfg.adam_beta2)
    r_lat, r_w = stream(seed, phase, "latents"), stream(seed, phase, "charts")
    r_real, r_probe = stream(seed, phase, "real"), stream(seed, phase, "probes")
    log = []
    good = (model.copy(), disc.copy())
    t0 = time.perf_counter()
    for step in range(steps):
        lr = _lr_factor(cfg, step, steps, phase)
        opt_g.lr = cfg.lr_gen * lr_scale * lr
        opt_d.lr = cfg.lr_disc * lr_scale * lr
        for _ in range(cfg.disc_steps_per_gen):
            y, om = _draw_fake(cfg, model, r_lat, r_w, cfg.batch_fake)
            real = data[r_real.integers(0, len(data), cfg.batch_real)]
            _, _, dg = adversarial_and_grads(model, disc, y, om, real, glue, need_gen=False, need_disc=True)
            opt_d.step([-dg["disc.A"], -dg["disc.b"], -dg["disc.alpha"]])  # ascent
            disc.project()
        y, om = _draw_fake(cfg, model, r_lat, r_w, cfg.batch_fake)
        real = data[r_real.integers(0, len(data), cfg.batch_real)]
        lam = penalty(step, steps) if penalty else 0.0
        U = sample_probes(model.d, model.geo.tau, probes, r_probe) if probes and model.has_inverses else None
        batch = Batch(y, om, real, U, Z[0], Z[1])
        br, gg, _ = objective_and_grads(model, disc, batch, lam, glue, use_regularizer=Z[0] is not None,
                                        need_disc=False)
        if not math.isfinite(br.total):
            raise DivergenceError(step, *good, log)
        opt_g.step([gg.get(n) for n in names])
        model.project()
        if not _finite(model, disc):
            raise DivergenceError(step, *good, log)
        row = dict(step=step, adversarial=br.adversarial, consistency=br.consistency,
                   reg_exact=int(br.regularizer_exact), reg_surrogate=br.regularizer_surrogate,
                   penalty_coeff=br.penalty_coeff, total=br.total,
                   wall_ms=round(1000.0 * (time.perf_counter() - t0), 3))
        log.append(row)
        if (step + 1) % cfg.checkpoint_every == 0 or step + 1 == steps:
            good = (model.copy(), disc.copy())
            if run_dir is not None:
                save_model(model, os.path.join(run_dir, f"{phase}_step{step + 1:06d}.ckpt"))
        if progress is not None:
            progress(phase, step, steps, row)
    return log


# -- public entry points -----------------------------------------------------


def train_phase1(cfg: TrainConfig, data, model=None, disc=None, run_dir=None, progress=None) -> TrainResult:
    """Alternating minimax without gluing; returns a model without inverses.

    ``data`` is an (n, p) array or a SampleCloud. With ``phase1_steps = 0`` the
    freshly initialised model is returned unchanged.
    """
    data = np.asarray(getattr(data, "points", data), dtype=float)
    if data.ndim != 2 or data.shape[1] != cfg.p:
        raise ValueError(f"data must have shape (n, {cfg.p}), got {data.shape}")
    seed = cfg.seed
    with threadpool_limits(limits=1):
        geo = make_geometry(cfg, data)
        if model is None:
            model = init_model(cfg, data, stream(seed, "init", "model"), len(data), geo)
        if disc is None:
            disc = init_discriminator(cfg, data, stream(seed, "init", "disc"))
        model.project()
        disc.project()
        log = _run(cfg, model, disc, data, cfg.phase1_steps, seed, "phase1", run_dir=run_dir, progress=progress)
    dn, dN, N = derive_scales(cfg.n, max(cfg.beta, 1.0), max(cfg.d, 2))
    info = dict(phase="phase1", steps=cfg.phase1_steps, delta_n=dn, delta_N=dN, N=resolve_N(cfg),
                tau=geo.tau, K_bound=geo.K_bound, eps_gamma=geo.eps_gamma)
    return TrainResult(model, disc, log, info)


def _chart_pairs(model, i, y):
    """(x, u) with x = g1_i(u): u = y in direct mode, Psi^{-1}(g2_i(y)) otherwise."""
    u = y if model.mode == "direct" else psi_inverse(model.gen2[i](y), model.geo.tau)
    return model.gen1[i](u), u


def fit_inverses(cfg: TrainConfig, model: ChartedModel, data, rng):
    """Least-squares warm start of inv_i on (g_i(y_j), y_j) pairs from fresh latents."""
    inv = []
    for i in range(model.m):
        y = sample_truncated_gaussian(model.d, model.n_train, rng, model.geo, cfg.inv_fit_latents)
        x, u = _chart_pairs(model, i, y)
        lo, hi = np.minimum(x.min(0), data.min(0)), np.maximum(x.max(0), data.max(0))
        f = BumpFamily.init_random(model.p, model.d, cfg.inv_L1, cfg.inv_L2, rng, box=(lo, hi))
        f.project()
        opt = Adam(f.arrays(), cfg.inv_fit_lr, cfg.adam_beta1, cfg.adam_beta2)
        for _ in range(cfg.inv_fit_steps):
            out, cache = f.forward(x)
            g = f.grad_params(cache, 2.0 * (out - u) / len(x))
            opt.step(g.arrays())
            f.project()
        inv.append(f)
    return inv


def inverse_residual(model: ChartedModel, rng, count=2048):
    """Mean |phi_i(g_i(u)) - u| over fresh latents, per chart."""
    out = []
    for i in range(model.m):
        y = sample_truncated_gaussian(model.d, model.n_train, rng, model.geo, count)
        x, u = _chart_pairs(model, i, y)
        out.append(float(np.mean(np.linalg.norm(model.inv[i](x) - u, axis=1))))
    return out


def train_phase2(cfg: TrainConfig, phase1: TrainResult, data, inverses=None, freeze_inverses=False,
                 run_dir=None, progress=None) -> TrainResult:
    """Gluing-enabled training with the penalised objective.

    ``inverses`` (one family per chart) replace the least-squares warm start;
    with ``freeze_inverses`` they are not updated.
    """
    data = np.asarray(getattr(data, "points", data), dtype=float)
    seed = cfg.seed
    model = phase1.model.copy()
    disc = phase1.disc.copy()
    with threadpool_limits(limits=1):
        if inverses is not None:
            model.inv = [f.copy() for f in inverses]
        elif model.inv is None:
            model.inv = fit_inverses(cfg, model, data, stream(seed, "phase2", "inverse-fit"))
        model.project()
        Z = coverings(model, cfg.covering_cap) if cfg.use_regularizer else (None, None)

        def penalty(step, total):
            return penalty_at(step, total, cfg.penalty_max, cfg.penalty_warmup)

        log = _run(cfg, model, disc, data, cfg.phase2_steps, seed, "phase2", cfg.lr_scale2, glue=True,
                   penalty=penalty, probes=cfg.probes, Z=Z, freeze_inverses=freeze_inverses,
                   run_dir=run_dir, progress=progress)
        final = final_constraints(cfg, model)
    info = dict(phase1.info, phase="phase2", phase2_steps=cfg.phase2_steps, frozen_inverses=bool(freeze_inverses),
                injected_inverses=inverses is not None, **final)
    return TrainResult(model, disc, log, info)


def final_constraints(cfg: TrainConfig, model: ChartedModel, check_cap=4096):
    """Constraint values at the end of phase 2 on a large probe set and a
    finer covering. Exceeding eps_Gamma is reported, not raised."""
    rng = stream(cfg.seed, "phase2", "final-check")
    U = sample_probes(model.d, model.geo.tau, 4096, rng)
    cons = consistency_loss(model, U)
    exact = 0
    if cfg.use_regularizer:
        Z1, Z2 = coverings(model, check_cap)
        exact, _ = regularizer(model, Z1, Z2)
    value = cons + exact
    return dict(final_consistency=cons, final_reg_exact=int(exact),
                constraint_ok=bool(value <= model.geo.eps_gamma))


def train(cfg: TrainConfig, data, run_dir=None, progress=None):
    """Phase 1 then (if phase2_steps > 0) phase 2. Returns (phase1, final) results."""
    p1 = train_phase1(cfg, data, run_dir=run_dir, progress=progress)
    if cfg.phase2_steps == 0:
        return p1, p1
    return p1, train_phase2(cfg, p1, data, run_dir=run_dir, progress=progress)


__all__ = ["Adam", "DivergenceError", "LOG_COLUMNS", "TrainResult", "coverings", "capped_covering",
           "derive_scales", "final_constraints", "fit_inverses", "init_discriminator", "inverse_residual",
           "latent_box", "make_geometry", "penalty_at", "train", "train_phase1", "train_phase2",
           "write_log_csv"]
