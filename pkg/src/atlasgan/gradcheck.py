"""Central finite-difference check of every analytic parameter gradient."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .losses import objective_and_grads

FD_STEP = 1e-5
ABS_FLOOR = 1e-12


def rel_error(analytic, numeric, floor=ABS_FLOOR):
    """Max-norm relative error of a whole block: |a - f|_inf / max(|a|_inf, |f|_inf).

    Entries far below the block's scale are dominated by finite-difference
    round-off, so a per-entry ratio would measure the oracle, not the gradient.
    """
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    if analytic.size == 0:
        return 0.0
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def central_difference(fn, arr, step=FD_STEP):
    """d fn() / d arr by perturbing ``arr`` in place (restored afterwards)."""
    out = np.zeros_like(arr)
    flat = arr.reshape(-1)
    g = out.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + step
        fp = fn()
        flat[j] = orig - step
        fm = fn()
        flat[j] = orig
        g[j] = (fp - fm) / (2.0 * step)
    return out


@dataclass
class GradReport:
    tolerance: float
    max_rel_err: dict = field(default_factory=dict)  # block name -> max relative error
    n_params: int = 0

    @property
    def worst(self) -> float:
        return max(self.max_rel_err.values(), default=0.0)

    @property
    def flagged(self) -> list:
        return [k for k, v in self.max_rel_err.items() if v > self.tolerance]

    @property
    def ok(self) -> bool:
        return not self.flagged

    def lines(self):
        for k, v in self.max_rel_err.items():
            yield f"{k:24s} {v:.3e} {'FLAG' if v > self.tolerance else 'ok'}"


def check_gradients(model, disc, batch, tolerance=1e-5, penalty_coeff=1.0, glue=False,
                    use_regularizer=True, step=FD_STEP, analytic=None) -> GradReport:
    """Compare analytic gradients of the penalised objective (generator side) and
    of the adversarial loss (discriminator side) with central differences.

    ``analytic`` may replace the gradient routine; it must return
    ``(gen_grads, disc_grads)`` dicts. Used to test that the harness flags
    wrong gradients.
    """
    kw = dict(glue=glue, use_regularizer=use_regularizer)

    def objective():
        return objective_and_grads(model, disc, batch, penalty_coeff, need_gen=False, need_disc=False, **kw)[0]

    if analytic is None:
        _, gen_grads, disc_grads = objective_and_grads(model, disc, batch, penalty_coeff, **kw)
    else:
        gen_grads, disc_grads = analytic(model, disc, batch)

    report = GradReport(tolerance)
    for name, arr in model.param_blocks():
        ana = gen_grads.get(name, np.zeros_like(arr))
        num = central_difference(lambda: objective().total, arr, step)
        report.max_rel_err[name] = rel_error(ana, num)
        report.n_params += arr.size
    for n, arr in zip(("A", "b", "alpha"), disc.arrays()):
        name = f"disc.{n}"
        ana = disc_grads.get(name, np.zeros_like(arr))
        num = central_difference(lambda: objective().adversarial, arr, step)
        report.max_rel_err[name] = rel_error(ana, num)
        report.n_params += arr.size
    return report


def random_instance(rng, glue=None, max_L2=8):
    """Small random problem (m = 2, L2 <= max_L2, d <= 3, p <= 4) for the harness.

    Geometry constants are chosen so the gluing cutoff is neither identically
    0 nor 1 on the generated points, which exercises every gradient path.
    Returns (model, disc, batch, glue).
    """
    from .funcspace import BumpFamily
    from .geometry import GeoConsts
    from .losses import Batch, sample_probes
    from .model import ChartedModel

    d = int(rng.integers(2, 4))
    p = int(rng.integers(d + 1, 5))
    m = 2
    mode = "factorized" if rng.random() < 0.5 else "direct"
    if glue is None:
        glue = bool(rng.random() < 0.5)
    geo = GeoConsts(0.5, 1.0, 0.3)

    def fam(k, out):
        L2 = int(rng.integers(2, max_L2 + 1))
        return BumpFamily.init_random(k, out, 2, L2, rng, box=(-1, 1), alpha_scale=3.0)

    gen1 = [fam(d, p) for _ in range(m)]
    gen2 = [fam(d, d) for _ in range(m)] if mode == "factorized" else None
    inv = [fam(p, d) for _ in range(m)]
    model = ChartedModel(mode, gen1, geo, rng.normal(size=m) * 0.3, 100, gen2, inv)
    disc = fam(p, 1)
    N = 16
    batch = Batch(rng.normal(size=(N, d)), rng.integers(0, m, N), rng.normal(size=(12, p)),
                  sample_probes(d, geo.tau, 6, rng), rng.uniform(-0.3, 0.3, (5, d)),
                  rng.uniform(-1, 1, (5, d)))
    return model, disc, batch, glue
