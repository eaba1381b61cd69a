"""Gaussian ridge-bump family R^k_{L1,L2}.

Each output coordinate is an independent sum

    f_c(x) = sum_{j=1..L1} sum_{i=1..L2} alpha[c,j,i] * exp(-<A[c,j,i], x - b[c,j,i]>^2)

with the caps ||A[c,j,i]|| <= 2^j and |alpha[c,j,i]| <= 2^-j. All evaluation
routines are batched: ``x`` has shape (B, k) and outputs have shape
(B, out_dim).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Input dimension does not match the family."""


@dataclass
class BumpGrad:
    A: np.ndarray
    b: np.ndarray
    alpha: np.ndarray

    def arrays(self):
        return [self.A, self.b, self.alpha]


@dataclass
class BumpFamily:
    A: np.ndarray  # (out_dim, L1, L2, k)
    b: np.ndarray  # (out_dim, L1, L2, k)
    alpha: np.ndarray  # (out_dim, L1, L2)

    kind = "bump"

    @property
    def out_dim(self) -> int:
        return self.A.shape[0]

    @property
    def L1(self) -> int:
        return self.A.shape[1]

    @property
    def L2(self) -> int:
        return self.A.shape[2]

    @property
    def k(self) -> int:
        return self.A.shape[3]

    @property
    def n_params(self) -> int:
        return self.A.size + self.b.size + self.alpha.size

    def arrays(self):
        """Parameter arrays in canonical order (A, b, alpha); views, not copies."""
        return [self.A, self.b, self.alpha]

    def copy(self) -> "BumpFamily":
        return BumpFamily(self.A.copy(), self.b.copy(), self.alpha.copy())

    # -- construction -------------------------------------------------

    @classmethod
    def zeros(cls, k: int, out_dim: int, L1: int, L2: int) -> "BumpFamily":
        return cls(
            np.zeros((out_dim, L1, L2, k)),
            np.zeros((out_dim, L1, L2, k)),
            np.zeros((out_dim, L1, L2)),
        )

    @classmethod
    def init_random(cls, k, out_dim, L1, L2, rng, box=(-1.0, 1.0), alpha_scale=0.1):
        """Feasible random init.

        ``alpha`` ~ alpha_scale * U(-2^-j, 2^-j), ``A`` a Gaussian direction with
        norm 2^(j-1), ``b`` ~ U(box) per coordinate. ``box`` is either a pair of
        scalars or a pair of length-k arrays.
        """
        scale = 2.0 ** np.arange(1, L1 + 1)
        lo = np.broadcast_to(np.asarray(box[0], dtype=float), (k,))
        hi = np.broadcast_to(np.asarray(box[1], dtype=float), (k,))
        A = rng.standard_normal((out_dim, L1, L2, k))
        norms = np.linalg.norm(A, axis=-1, keepdims=True)
        norms[norms == 0] = 1.0
        A = A / norms * (scale / 2.0)[None, :, None, None]
        b = lo + (hi - lo) * rng.random((out_dim, L1, L2, k))
        alpha = alpha_scale * rng.uniform(-1.0, 1.0, (out_dim, L1, L2)) / scale[None, :, None]
        return cls(A, b, alpha)

    # -- evaluation ---------------------------------------------------

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.k:
            raise ShapeError(f"expected inputs of dimension {self.k}, got shape {np.shape(x)}")
        return x, single

    def _proj(self, x):
        # <A, x - b> for every bump, flattened to (B, out_dim * L1 * L2)
        flatA = self.A.reshape(-1, self.k)
        ab = np.einsum("nk,nk->n", flatA, self.b.reshape(-1, self.k))
        z = x @ flatA.T
        z -= ab
        return z

    def _combine(self, e):
        B = e.shape[0]
        return (e * self.alpha.reshape(-1)).reshape(B, self.out_dim, -1).sum(axis=-1)

    def __call__(self, x):
        x, single = self._check(x)
        z = self._proj(x)
        out = self._combine(np.exp(-z * z))
        return out[0] if single else out

    def forward(self, x):
        """Evaluate and keep the intermediates needed by the gradient routines."""
        x, _ = self._check(x)
        z = self._proj(x)
        e = np.exp(-z * z)
        return self._combine(e), (x, z, e)

    def _weighted_slope(self, cache, upstream):
        # upstream_c * alpha * d/dz exp(-z^2), flattened like z
        _, z, e = cache
        B = z.shape[0]
        u = np.repeat(np.asarray(upstream, dtype=float), self.L1 * self.L2, axis=1)
        return u * (-2.0 * self.alpha.reshape(-1)) * z * e

    def jacobian(self, x):
        """d f / d x, shape (B, out_dim, k) (or (out_dim, k) for a single point)."""
        x, single = self._check(x)
        z = self._proj(x)
        w = (-2.0 * self.alpha.reshape(-1)) * z * np.exp(-z * z)
        B = x.shape[0]
        jac = np.einsum("bon,onk->bok", w.reshape(B, self.out_dim, -1),
                        self.A.reshape(self.out_dim, -1, self.k))
        return jac[0] if single else jac

    def vjp_input(self, cache, upstream):
        """sum_c upstream[:, c] * d f_c / d x, shape (B, k)."""
        s = self._weighted_slope(cache, upstream)
        return s @ self.A.reshape(-1, self.k)

    def grad_params(self, cache, upstream) -> BumpGrad:
        """Gradient of sum_b <upstream[b], f(x_b)> with respect to every parameter."""
        x, z, e = cache
        upstream = np.asarray(upstream, dtype=float)
        u = np.repeat(upstream, self.L1 * self.L2, axis=1)
        d_alpha = np.einsum("bn,bn->n", u, e).reshape(self.alpha.shape)
        s = u * (-2.0 * self.alpha.reshape(-1)) * z * e
        s_sum = s.sum(axis=0).reshape(self.alpha.shape)
        d_A = (s.T @ x).reshape(self.A.shape) - s_sum[..., None] * self.b
        d_b = -s_sum[..., None] * self.A
        return BumpGrad(d_A, d_b, d_alpha)

    # -- constraints --------------------------------------------------

    def project(self) -> "BumpFamily":
        """In-place projection onto the caps; returns self."""
        scale = 2.0 ** np.arange(1, self.L1 + 1)
        norms = np.linalg.norm(self.A, axis=-1)
        cap = scale[None, :, None]
        # rescaled rows can land a few ulps above the cap; leaving those alone
        # keeps the projection exactly idempotent
        over = norms > cap * (1.0 + 1e-14)
        if over.any():
            factor = np.where(over, cap / np.where(over, norms, 1.0), 1.0)
            self.A *= factor[..., None]
        lim = (1.0 / scale)[None, :, None]
        np.clip(self.alpha, -lim, lim, out=self.alpha)
        return self

    def is_feasible(self, tol=1e-12) -> bool:
        scale = 2.0 ** np.arange(1, self.L1 + 1)
        norms = np.linalg.norm(self.A, axis=-1)
        return bool(
            np.all(norms <= scale[None, :, None] * (1 + tol))
            and np.all(np.abs(self.alpha) <= (1.0 / scale)[None, :, None] * (1 + tol))
        )


def eval_bump(f: BumpFamily, x):
    return f(x)


def grad_bump_input(f: BumpFamily, x):
    return f.jacobian(x)


def grad_bump_params(f: BumpFamily, x, upstream) -> BumpGrad:
    x = np.asarray(x, dtype=float)
    upstream = np.asarray(upstream, dtype=float)
    if x.ndim == 1:
        x, upstream = x[None, :], upstream[None, :]
    _, cache = f.forward(x)
    return f.grad_params(cache, upstream)


def project_constraints(f: BumpFamily) -> BumpFamily:
    """Projected copy of ``f``; the original is left untouched."""
    return f.copy().project()
