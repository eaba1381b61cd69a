"""Evaluation: Wasserstein-1 between clouds, distance to reference surfaces,
and a discriminator-IPM readout."""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

EXACT_CAP = 4096


class MetricInputError(ValueError):
    pass


def _cloud(X):
    X = np.asarray(getattr(X, "points", X), dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X


def _check_pair(X, Y):
    if X.shape[1] != Y.shape[1]:
        raise MetricInputError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")


# -- Wasserstein-1 -------------------------------------------------------------


def w1_exact(X, Y) -> float:
    """Mean matched distance of the optimal perfect matching between equal-size clouds."""
    X, Y = _cloud(X), _cloud(Y)
    _check_pair(X, Y)
    if len(X) != len(Y):
        raise MetricInputError(f"w1_exact needs equal sizes, got {len(X)} and {len(Y)}; use w1_entropic")
    if len(X) > EXACT_CAP:
        raise MetricInputError(f"w1_exact is capped at {EXACT_CAP} points (got {len(X)}); use w1_entropic")
    if len(X) == 0:
        raise MetricInputError("empty clouds")
    C = cdist(X, Y)
    rows, cols = linear_sum_assignment(C)
    return float(C[rows, cols].mean())


@dataclass
class EntropicResult:
    value: float  # transport cost <P, C> of the entropic plan
    reg: float
    iters: int
    converged: bool
    marginal_err: float

    def __float__(self):
        return self.value


def w1_entropic(X, Y, reg: float, iters: int = 1000, tol: float = 1e-9) -> EntropicResult:
    """Log-domain Sinkhorn with uniform marginals.

    Returns the linear cost of the regularised plan. ``converged`` is False if
    the marginal error is still above ``tol`` after ``iters`` sweeps; the
    value is reported anyway.
    """
    if not reg > 0:
        raise MetricInputError("reg must be > 0")
    X, Y = _cloud(X), _cloud(Y)
    _check_pair(X, Y)
    C = cdist(X, Y)
    n, m = C.shape
    loga = np.full(n, -math.log(n))
    logb = np.full(m, -math.log(m))
    f = np.zeros(n)
    g = np.zeros(m)
    M = -C / reg
    err = np.inf
    it = 0
    for it in range(1, iters + 1):
        f = reg * (loga - logsumexp(M + g[None, :] / reg, axis=1))
        g = reg * (logb - logsumexp(M + f[:, None] / reg, axis=0))
        if it % 10 == 0 or it == iters:
            logP = M + (f[:, None] + g[None, :]) / reg
            err = float(np.abs(np.exp(logsumexp(logP, axis=1)) - 1.0 / n).sum())
            if err < tol:
                break
    P = np.exp(M + (f[:, None] + g[None, :]) / reg)
    return EntropicResult(float(np.sum(P * C)), float(reg), it, bool(err < tol), err)


# -- surfaces ------------------------------------------------------------------


@dataclass(frozen=True)
class Surface:
    kind: str  # sphere | torus
    radius: float = 1.0  # sphere radius, or torus minor radius
    major: float = 2.5

    def __post_init__(self):
        if self.kind not in ("sphere", "torus"):
            raise MetricInputError(f"unknown surface {self.kind!r}")
        if not self.radius > 0 or (self.kind == "torus" and not self.major > self.radius):
            raise MetricInputError("surface radii must satisfy 0 < r (< R for the torus)")

    def distance(self, X):
        X = _cloud(X)
        if self.kind == "sphere":
            return np.abs(np.linalg.norm(X, axis=1) - self.radius)
        rho = np.hypot(X[:, 0], X[:, 1]) - self.major
        return np.abs(np.hypot(rho, X[:, 2]) - self.radius)

    def angles(self, X):
        """(theta, phi) of the nearest surface point (torus) or (polar, azimuth) (sphere)."""
        X = _cloud(X)
        if self.kind == "torus":
            rho = np.hypot(X[:, 0], X[:, 1]) - self.major
            return np.arctan2(X[:, 2], rho), np.arctan2(X[:, 1], X[:, 0])
        return np.arccos(np.clip(X[:, 2] / np.linalg.norm(X, axis=1), -1, 1)), np.arctan2(X[:, 1], X[:, 0])


SPHERE = Surface("sphere", 1.0)
TORUS = Surface("torus", 1.0, 2.5)


def surface_by_name(name):
    return {"sphere": SPHERE, "torus": TORUS}[name]


def hausdorff_to_surface(cloud, surface: Surface):
    """One-sided distance cloud -> surface: (max, per-point distances)."""
    d = surface.distance(cloud)
    return float(d.max()), d


def surface_quantile(cloud, surface: Surface, q=0.99) -> float:
    return float(np.quantile(surface.distance(cloud), q))


def octant_counts(angles):
    """Histogram of angles in [-pi, pi) over 8 equal bins."""
    return np.histogram(np.asarray(angles), bins=8, range=(-math.pi, math.pi))[0]


# -- discriminator IPM -----------------------------------------------------------


def ipm_disc(real, fake, budget: int, rng, L1=3, L2=256, lr=1e-2, batch=None) -> float:
    """Adversarial loss mean D(fake) - mean D(real) after ``budget`` Adam
    ascent steps of a fresh bump discriminator; a lower bound on the family IPM."""
    from .funcspace import BumpFamily
    from .training import Adam

    real, fake = _cloud(real), _cloud(fake)
    _check_pair(real, fake)
    both = np.concatenate([real, fake])
    disc = BumpFamily.init_random(real.shape[1], 1, L1, L2, rng, box=(both.min(0), both.max(0)))
    disc.project()
    opt = Adam(disc.arrays(), lr)

    def value_and_grad(R, F):
        Dr, cr = disc.forward(R)
        Df, cf = disc.forward(F)
        gf = disc.grad_params(cf, np.full((len(F), 1), 1.0 / len(F)))
        gr = disc.grad_params(cr, np.full((len(R), 1), 1.0 / len(R)))
        return float(Df.mean() - Dr.mean()), [a - b for a, b in zip(gf.arrays(), gr.arrays())]

    for _ in range(budget):
        if batch:
            R = real[rng.integers(0, len(real), batch)]
            F = fake[rng.integers(0, len(fake), batch)]
        else:
            R, F = real, fake
        _, g = value_and_grad(R, F)
        opt.step([-x for x in g])
        disc.project()
    return float(disc(fake).mean() - disc(real).mean())


# -- block protocol ---------------------------------------------------------------


@dataclass
class MetricReport:
    w1: float
    w1_method: str
    w1_support_size: int
    trials: list = field(default_factory=list)
    hausdorff: float | None = None
    hausdorff_q99: float | None = None
    ipm_disc: float | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.trials:
            self.w1 = float(np.mean(self.trials))

    @property
    def std(self) -> float:
        return float(np.std(self.trials)) if len(self.trials) > 1 else 0.0

    def summary(self) -> str:
        s = f"w1 = {self.w1:.4f} +- {self.std:.4f} ({self.w1_method}, support {self.w1_support_size}, " \
            f"{max(len(self.trials), 1)} trial(s))"
        if self.hausdorff is not None:
            s += f"; hausdorff = {self.hausdorff:.4f}, q99 = {self.hausdorff_q99:.4f}"
        return s

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


def block_w1(X, Y, block_size, rng, threads=1):
    """Shuffle both clouds, split into paired disjoint blocks, average w1_exact.

    Equal-size clouds share one permutation (harmless for independent samples,
    and identical clouds then score exactly 0). Block values are reduced in block order, so the result does not depend on
    ``threads``.
    """
    X, Y = _cloud(X), _cloud(Y)
    _check_pair(X, Y)
    if block_size > EXACT_CAP:
        raise MetricInputError(f"block_size is capped at {EXACT_CAP}")
    size = min(block_size, len(X), len(Y))
    nblocks = max(1, min(len(X), len(Y)) // size)
    px = rng.permutation(len(X))
    py = px if len(X) == len(Y) else rng.permutation(len(Y))
    pairs = [(X[px[k * size:(k + 1) * size]], Y[py[k * size:(k + 1) * size]]) for k in range(nblocks)]
    if threads > 1 and nblocks > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            vals = list(ex.map(lambda p: w1_exact(*p), pairs))
    else:
        vals = [w1_exact(*p) for p in pairs]
    return float(np.mean(vals)), vals, size


def evaluate_cloud(cloud, reference, rng, block_size=4096, surface: Surface | None = None, threads=1) -> MetricReport:
    """Block-averaged W1 of one generated cloud against a reference cloud."""
    w1, blocks, size = block_w1(cloud, reference, block_size, rng, threads)
    rep = MetricReport(w1, "exact-block", size, extra={"blocks": blocks})
    if surface is not None:
        rep.hausdorff, d = hausdorff_to_surface(cloud, surface)
        rep.hausdorff_q99 = float(np.quantile(d, 0.99))
    return rep


def combine_trials(reports) -> MetricReport:
    """Mean over independent training trials."""
    reports = list(reports)
    out = MetricReport(0.0, reports[0].w1_method, reports[0].w1_support_size, [r.w1 for r in reports])
    if all(r.hausdorff is not None for r in reports):
        out.hausdorff = max(r.hausdorff for r in reports)
        out.hausdorff_q99 = max(r.hausdorff_q99 for r in reports)
    return out
