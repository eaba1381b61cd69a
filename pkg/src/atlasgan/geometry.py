"""Fixed geometric machinery: compactification, smooth cutoff, gluing, coverings."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class DomainError(ValueError):
    pass


class ResourceError(RuntimeError):
    pass


@dataclass(frozen=True)
class GeoConsts:
    tau: float
    K_bound: float
    eps_gamma: float

    @property
    def plateau_end(self) -> float:
        return self.tau * (1.0 + (self.K_bound + 2.0) * self.tau)

    @classmethod
    def from_K(cls, K_bound: float, tau: float | None = None, eps_gamma: float | None = None):
        """tau defaults to 1/(8K), eps_gamma to tau^2/8."""
        if tau is None:
            tau = 1.0 / (8.0 * K_bound)
        if eps_gamma is None:
            eps_gamma = tau * tau / 8.0
        g = cls(float(tau), float(K_bound), float(eps_gamma))
        g.validate()
        return g

    def validate(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not 0 < self.eps_gamma < self.tau ** 2 / 4:
            raise ValueError(
                f"eps_gamma must lie in (0, tau^2/4) = (0, {self.tau ** 2 / 4:.3g}), got {self.eps_gamma}"
            )


# -- compactification ------------------------------------------------------


def psi(u, tau):
    """u / (tau^2 - |u|^2) on the open ball B(0, tau); works on (d,) or (B, d)."""
    u = np.asarray(u, dtype=float)
    sq = np.sum(u * u, axis=-1, keepdims=True)
    if np.any(sq >= tau * tau):
        raise DomainError(f"psi is defined on |u| < tau = {tau}")
    return u / (tau * tau - sq)


def _psi_inv_scale(rho, tau):
    # |psi^{-1}(y)| / |y| as a function of rho = |y|, in a form without cancellation
    q = np.sqrt(1.0 + 4.0 * rho * rho * tau * tau)
    return 2.0 * tau * tau / (1.0 + q), q


def psi_inverse(y, tau):
    """Inverse of :func:`psi`, total on R^d, psi_inverse(0) = 0."""
    y = np.asarray(y, dtype=float)
    rho = np.linalg.norm(y, axis=-1, keepdims=True)
    h, _ = _psi_inv_scale(rho, tau)
    return h * y


def psi_inverse_vjp(y, v, tau):
    """v^T d psi_inverse / dy for batches y, v of shape (B, d)."""
    rho = np.linalg.norm(y, axis=-1, keepdims=True)
    h, q = _psi_inv_scale(rho, tau)
    # (dh/drho) / rho, finite at rho = 0
    dh_over_rho = -8.0 * tau ** 4 / (q * (1.0 + q) ** 2)
    return h * v + dh_over_rho * np.sum(y * v, axis=-1, keepdims=True) * y


# -- smooth cutoff ---------------------------------------------------------


def _f(s):
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def smooth_step_down(s):
    """C-infinity bridge: 1 for s <= 0, 0 for s >= 1, S(1/2) = 1/2."""
    s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
    a = _f(1.0 - s)
    c = _f(s)
    return a / (a + c)


def smooth_step_down_deriv(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inner = (s > 0) & (s < 1)
    si = s[inner]
    a = np.exp(-1.0 / (1.0 - si))
    c = np.exp(-1.0 / si)
    out[inner] = -a * c * (1.0 / (1.0 - si) ** 2 + 1.0 / si ** 2) / (a + c) ** 2
    return out


def gamma_cutoff(t, g: GeoConsts):
    """1 on [0, plateau_end], 0 past plateau_end + eps_gamma, smooth in between."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("gamma_cutoff takes t >= 0")
    return smooth_step_down((t - g.plateau_end) / g.eps_gamma)


def gamma_cutoff_deriv(t, g: GeoConsts):
    t = np.asarray(t, dtype=float)
    return smooth_step_down_deriv((t - g.plateau_end) / g.eps_gamma) / g.eps_gamma


# -- gluing ----------------------------------------------------------------


def local_glue(x, chart, inverse, g: GeoConsts, center=None):
    """Blend x with chart(inverse(x)) by Gamma(|x - chart(0)|).

    ``chart`` maps (B, d) -> (B, p), ``inverse`` maps (B, p) -> (B, d); both
    are batch callables. Points where the cutoff vanishes are returned as is.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if center is None:
        d = _domain_dim(inverse, X)
        center = chart(np.zeros((1, d)))[0]
    w = gamma_cutoff(np.linalg.norm(X - center, axis=1), g)
    out = X.copy()
    act = w > 0
    if np.any(act):
        proj = chart(inverse(X[act]))
        wa = w[act, None]
        out[act] = wa * proj + (1.0 - wa) * X[act]
    return out[0] if single else out


def _domain_dim(inverse, X):
    return np.atleast_2d(inverse(X[:1])).shape[1]


def global_glue(x, model):
    """F_m o ... o F_1 in ascending chart order."""
    out = np.atleast_2d(np.asarray(x, dtype=float))
    charts, inverses = model.glue_maps()
    for chart, inv in zip(charts, inverses):
        out = local_glue(out, chart, inv, model.geo)
    return out[0] if np.ndim(x) == 1 else out


# -- coverings -------------------------------------------------------------

MAX_COVERING_POINTS = 10_000_000


@dataclass
class Covering:
    points: np.ndarray
    radius: float
    eps: float
    certificate: float  # every ball point lies within this distance of some point


def build_covering(radius: float, eps: float, dim: int) -> Covering:
    """Grid of spacing eps keeping every cell that meets the closed ball.

    Each point of the ball lies in the cell of its nearest grid node, so the
    covering radius is eps*sqrt(dim)/2.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    n_side = int(math.floor(radius / eps + 0.5))
    est = (2 * n_side + 1) ** dim
    if est > MAX_COVERING_POINTS:
        raise ResourceError(
            f"covering of B^{dim}(0,{radius}) at eps={eps} needs ~{est} grid points; raise eps"
        )
    ticks = np.arange(-n_side, n_side + 1) * eps
    grid = np.stack(np.meshgrid(*([ticks] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    # closest point of each cell to the origin
    nearest = np.clip(0.0, grid - eps / 2, grid + eps / 2)
    keep = np.linalg.norm(nearest, axis=1) <= radius * (1 + 1e-12)
    return Covering(grid[keep], float(radius), float(eps), eps * math.sqrt(dim) / 2)
