"""Training objectives and their closed-form parameter gradients.

Every ``*_and_grads`` routine returns the loss value and a dict mapping the
model's parameter block names (see :meth:`ChartedModel.param_blocks`) to
gradient arrays. Blocks a loss does not touch are absent from the dict.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .geometry import gamma_cutoff, gamma_cutoff_deriv
from .model import ChartedModel, StateError, push_backward, push_forward

GRAD_NAMES = ("A", "b", "alpha")


class InputShapeError(ValueError):
    pass


@dataclass
class LossBreakdown:
    adversarial: float
    consistency: float
    regularizer_exact: int
    regularizer_surrogate: float
    penalty_coeff: float
    total: float

    def as_dict(self):
        return asdict(self)


@dataclass
class Batch:
    """Inputs of one objective evaluation."""

    latents: np.ndarray  # (N, d)
    omegas: np.ndarray  # (N,) chart indices
    real: np.ndarray  # (n, p)
    probes: np.ndarray | None = None  # (N', d) uniform on B(0, 2 tau)
    Z1: np.ndarray | None = None
    Z2: np.ndarray | None = None


def _acc(grads, prefix, bump_grad, scale=1.0):
    for n, g in zip(GRAD_NAMES, bump_grad.arrays()):
        key = f"{prefix}.{n}"
        if key in grads:
            grads[key] = grads[key] + scale * g
        else:
            grads[key] = scale * g


def _merge(into, other, scale=1.0):
    for k, g in other.items():
        into[k] = into[k] + scale * g if k in into else scale * g
    return into


def _check_inputs(model, latents, omegas, real):
    if latents.ndim != 2 or latents.shape[1] != model.d:
        raise InputShapeError(f"latents must be (N, {model.d}), got {latents.shape}")
    if omegas.shape != (latents.shape[0],):
        raise InputShapeError("need one chart index per latent")
    if real.ndim != 2 or real.shape[1] != model.p:
        raise InputShapeError(f"real batch must be (n, {model.p}), got {real.shape}")
    if len(latents) < 1 or len(real) < 1:
        raise InputShapeError("both batches need at least one point")


# -- gluing with a tape ----------------------------------------------------


def glue_forward(model: ChartedModel, X):
    """F_m o ... o F_1 (X) plus the tape needed by :func:`glue_backward`."""
    if model.inv is None:
        raise StateError("gluing needs approximate inverses")
    geo = model.geo
    tape = []
    for i in range(model.m):
        g1, inv = model.gen1[i], model.inv[i]
        c, c0 = g1.forward(np.zeros((1, model.d)))
        diff = X - c[0]
        t = np.linalg.norm(diff, axis=1)
        gam = gamma_cutoff(t, geo)
        act = np.nonzero(gam > 0)[0]
        if len(act) == 0:
            tape.append(None)
            continue
        Xa = X[act]
        u, cu = inv.forward(Xa)
        G, cg = g1.forward(u)
        ga = gam[act, None]
        X = X.copy()
        X[act] = ga * G + (1.0 - ga) * Xa
        tape.append((act, c0, diff[act], t[act], gam[act], gamma_cutoff_deriv(t[act], geo), cu, cg, G, Xa))
    return X, tape


def glue_backward(model: ChartedModel, tape, v, grads):
    """Pull v back through the glue; accumulates gen1/inv gradients into ``grads``."""
    for i in reversed(range(model.m)):
        entry = tape[i]
        if entry is None:
            continue
        act, c0, diff, t, gam, dgam, cu, cg, G, Xa = entry
        g1, inv = model.gen1[i], model.inv[i]
        va = v[act]
        s = np.sum(va * (G - Xa), axis=1) * dgam
        safe_t = np.where(t > 0, t, 1.0)
        nhat = np.where(t[:, None] > 0, diff / safe_t[:, None], 0.0)
        gv = gam[:, None] * va
        _acc(grads, f"gen1[{i}]", g1.grad_params(cg, gv))
        w = g1.vjp_input(cg, gv)
        _acc(grads, f"inv[{i}]", inv.grad_params(cu, w))
        dc = -np.sum(s[:, None] * nhat, axis=0)
        _acc(grads, f"gen1[{i}]", g1.grad_params(c0, dc[None, :]))
        v = v.copy()
        v[act] = (1.0 - gam)[:, None] * va + s[:, None] * nhat + inv.vjp_input(cu, w)
    return v


# -- adversarial loss ------------------------------------------------------


def generate(model, latents, omegas, glue):
    """Fake points in latent order, with per-chart caches and the glue tape."""
    X = np.empty((len(latents), model.p))
    caches = {}
    for i in range(model.m):
        sel = np.nonzero(omegas == i)[0]
        if len(sel):
            X[sel], cache = push_forward(model, i, latents[sel])
            caches[i] = (sel, cache)
    tape = None
    if glue:
        X, tape = glue_forward(model, X)
    return X, caches, tape


def adversarial_and_grads(model, disc, latents, omegas, real, glue=False, need_gen=True, need_disc=True):
    """(1/N) sum alpha_w D(F o g_w(y)) - (1/n) sum D(x); F skipped unless ``glue``."""
    latents = np.atleast_2d(np.asarray(latents, dtype=float))
    omegas = np.asarray(omegas, dtype=np.int64)
    real = np.atleast_2d(np.asarray(real, dtype=float))
    _check_inputs(model, latents, omegas, real)
    N, n = len(latents), len(real)
    fake, caches, tape = generate(model, latents, omegas, glue)
    a = model.weights[omegas]
    Df, cf = disc.forward(fake)
    Dr, cr = disc.forward(real)
    value = float(np.sum(a * Df[:, 0]) / N - np.sum(Dr[:, 0]) / n)

    disc_grads = None
    if need_disc:
        gf = disc.grad_params(cf, (a / N)[:, None])
        gr = disc.grad_params(cr, np.full((n, 1), 1.0 / n))
        disc_grads = {f"disc.{k}": x - y for k, x, y in zip(GRAD_NAMES, gf.arrays(), gr.arrays())}

    gen_grads = None
    if need_gen:
        gen_grads = {}
        contrib = a * Df[:, 0] / N
        gen_grads["log_weights"] = np.bincount(omegas, weights=contrib, minlength=model.m).astype(float)
        v = disc.vjp_input(cf, (a / N)[:, None])
        if glue:
            v = glue_backward(model, tape, v, gen_grads)
        for i, (sel, cache) in caches.items():
            _merge(gen_grads, push_backward(model, i, cache, v[sel]))
    return value, gen_grads, disc_grads


def adversarial_loss(model, disc, latents, omegas, real, glue=False) -> float:
    return adversarial_and_grads(model, disc, latents, omegas, real, glue, False, False)[0]


# -- consistency loss ------------------------------------------------------


def consistency_and_grads(model: ChartedModel, probes, need_grad=True):
    """(1/N) sum_j sum_{i,l} |g_l(U_j) - g_i(phi_i(g_l(U_j)))| Gamma((|g_l(U_j) - g_i(0)| - tau^2) v 0)."""
    if model.inv is None:
        raise StateError("consistency loss needs approximate inverses")
    U = np.atleast_2d(np.asarray(probes, dtype=float))
    N = len(U)
    geo = model.geo
    tau2 = geo.tau ** 2
    grads = {}
    outs = [model.gen1[l].forward(U) for l in range(model.m)]
    centers = [model.gen1[i].forward(np.zeros((1, model.d))) for i in range(model.m)]
    total = 0.0
    for l in range(model.m):
        x, cache_l = outs[l]
        gx = np.zeros_like(x)
        for i in range(model.m):
            g1, inv = model.gen1[i], model.inv[i]
            c, c0 = centers[i]
            u, cu = inv.forward(x)
            G, cg = g1.forward(u)
            r = x - G
            rn = np.linalg.norm(r, axis=1)
            diff = x - c[0]
            dist = np.linalg.norm(diff, axis=1)
            shifted = dist - tau2
            arg = np.maximum(shifted, 0.0)
            w = gamma_cutoff(arg, geo)
            total += float(np.sum(rn * w))
            if not need_grad:
                continue
            rhat = np.where(rn[:, None] > 0, r / np.where(rn > 0, rn, 1.0)[:, None], 0.0)
            dw = np.where(shifted > 0, gamma_cutoff_deriv(arg, geo), 0.0)
            nhat = np.where(dist[:, None] > 0, diff / np.where(dist > 0, dist, 1.0)[:, None], 0.0)
            up_G = -(w[:, None] * rhat) / N
            _acc(grads, f"gen1[{i}]", g1.grad_params(cg, up_G))
            w2 = g1.vjp_input(cg, up_G)
            _acc(grads, f"inv[{i}]", inv.grad_params(cu, w2))
            radial = (rn * dw)[:, None] * nhat / N
            gx += (w[:, None] * rhat) / N + inv.vjp_input(cu, w2) + radial
            _acc(grads, f"gen1[{i}]", g1.grad_params(c0, -np.sum(radial, axis=0)[None, :]))
        if need_grad:
            _acc(grads, f"gen1[{l}]", model.gen1[l].grad_params(cache_l, gx))
    return total / N, grads


def consistency_loss(model, probes) -> float:
    return consistency_and_grads(model, probes, need_grad=False)[0]


def sample_probes(d, tau, count, rng):
    """Uniform draws from B^d(0, 2 tau)."""
    g = rng.standard_normal((count, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = 2.0 * tau * rng.random(count) ** (1.0 / d)
    return g * r[:, None]


# -- regularizer -----------------------------------------------------------


def _pair_band(Z, G, lo, hi, need_grad, chunk=256):
    """Ordered pairs z1 != z2 whose ratio |G1 - G2| / |z1 - z2| leaves [lo, hi]."""
    K = len(Z)
    count = 0
    surrogate = 0.0
    dG = np.zeros_like(G) if need_grad else None
    for start in range(0, K, chunk):
        a = slice(start, min(start + chunk, K))
        dz = np.linalg.norm(Z[a, None, :] - Z[None, :, :], axis=-1)
        dg = G[a, None, :] - G[None, :, :]
        ng = np.linalg.norm(dg, axis=-1)
        valid = dz > 0
        ratio = np.where(valid, ng / np.where(valid, dz, 1.0), 0.0)
        below = valid & (ratio < lo)
        above = valid & (ratio > hi)
        count += int(below.sum() + above.sum())
        surrogate += float(np.sum(np.where(below, lo - ratio, 0.0)) + np.sum(np.where(above, ratio - hi, 0.0)))
        if need_grad:
            coef = above.astype(float) - below.astype(float)
            scale = np.where((coef != 0) & (ng > 0), coef / (np.where(ng > 0, ng, 1.0) * np.where(valid, dz, 1.0)), 0.0)
            # each unordered pair appears twice with the same ratio
            dG[a] += 2.0 * np.einsum("ab,abk->ak", scale, dg)
    return count, surrogate, dG


def regularizer_bands(model: ChartedModel):
    geo = model.geo
    spread = (geo.K_bound + 0.5) * geo.tau
    root = np.sqrt(geo.eps_gamma)
    return (1.0 - spread, 1.0 + spread), (root, 1.0 / root)


def regularizer_and_grads(model: ChartedModel, Z1, Z2=None, need_grad=True):
    """Violation count and hinge surrogate of the chart bi-Lipschitz bands.

    The g1 band is checked on Z1; the g2 band on Z2 in factorized mode only.
    """
    (lo1, hi1), (lo2, hi2) = regularizer_bands(model)
    exact, surrogate, grads = 0, 0.0, {}
    terms = [("gen1", model.gen1, Z1, lo1, hi1)]
    if model.gen2 is not None and Z2 is not None:
        terms.append(("gen2", model.gen2, Z2, lo2, hi2))
    for name, fams, Z, lo, hi in terms:
        if Z is None or len(Z) < 2:
            continue
        Z = np.asarray(Z, dtype=float)
        for i, fam in enumerate(fams):
            G, cache = fam.forward(Z)
            cnt, sur, dG = _pair_band(Z, G, lo, hi, need_grad)
            exact += cnt
            surrogate += sur
            if need_grad and sur > 0:
                _acc(grads, f"{name}[{i}]", fam.grad_params(cache, dG))
    return exact, surrogate, grads


def regularizer(model, Z1, Z2=None):
    exact, surrogate, _ = regularizer_and_grads(model, Z1, Z2, need_grad=False)
    return exact, surrogate


# -- total objective -------------------------------------------------------


def objective_and_grads(model, disc, batch: Batch, penalty_coeff: float, glue=False,
                        use_consistency=None, use_regularizer=True, need_gen=True, need_disc=True):
    """Penalised objective: adversarial + penalty * (consistency + regularizer surrogate).

    Generators minimise ``total``; the discriminator maximises the adversarial
    part only, so ``disc_grads`` are gradients of the adversarial loss.
    """
    if penalty_coeff < 0:
        raise ValueError("penalty_coeff must be >= 0")
    if use_consistency is None:
        use_consistency = model.has_inverses and batch.probes is not None
    adv, gen_grads, disc_grads = adversarial_and_grads(
        model, disc, batch.latents, batch.omegas, batch.real, glue, need_gen, need_disc)
    cons = 0.0
    if use_consistency:
        cons, g = consistency_and_grads(model, batch.probes, need_gen)
        if need_gen and penalty_coeff:
            _merge(gen_grads, g, penalty_coeff)
    exact, sur = 0, 0.0
    if use_regularizer and batch.Z1 is not None:
        exact, sur, g = regularizer_and_grads(model, batch.Z1, batch.Z2, need_gen)
        if need_gen and penalty_coeff:
            _merge(gen_grads, g, penalty_coeff)
    total = adv + penalty_coeff * (cons + sur)
    return LossBreakdown(adv, cons, exact, sur, float(penalty_coeff), total), gen_grads, disc_grads


def total_objective(model, disc, batch: Batch, penalty_coeff: float, glue=False, **kw) -> LossBreakdown:
    return objective_and_grads(model, disc, batch, penalty_coeff, glue, need_gen=False, need_disc=False, **kw)[0]
