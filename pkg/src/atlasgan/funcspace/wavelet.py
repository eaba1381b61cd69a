"""Truncated tensor-wavelet family built on a cascade-algorithm scaling table.

This family is the theory-mode class: low-frequency wavelet expansions with a
per-coefficient decay cap. It is evaluated by table lookup and is not used for
gradient training.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .bump import ShapeError

SQRT2 = math.sqrt(2.0)
TABLE_LEVELS = 10


class FilterError(ValueError):
    pass


def daubechies_filter(order: int) -> np.ndarray:
    """Orthonormal Daubechies scaling filter with ``order`` vanishing moments (2*order taps).

    Spectral factorisation: keep the roots of the Daubechies polynomial inside
    the unit circle, then normalise so the taps sum to sqrt(2).
    """
    if order < 1:
        raise FilterError("order must be >= 1")
    if order == 1:
        return np.array([1.0, 1.0]) / SQRT2
    N = order
    # P(y) = sum_k C(N-1+k, k) y^k, y = (1 - cos w)/2 = -(z - 2 + 1/z)/4
    P = [math.comb(N - 1 + k, k) for k in range(N)]
    # polynomial in z of degree 2(N-1): z^(N-1) * P(y(z))
    poly = np.zeros(2 * N - 1)
    base = np.array([-0.25, 0.5, -0.25])  # coefficients of y * z in powers of z
    term = np.array([1.0])
    for k, c in enumerate(P):
        padded = np.zeros(2 * N - 1)
        shift = (N - 1) - k
        padded[shift : shift + len(term)] += c * term
        poly += padded
        term = np.convolve(term, base)
    roots = np.roots(poly[::-1])
    inside = roots[np.abs(roots) < 1]
    h = np.array([1.0])
    for r in inside:
        h = np.convolve(h, [1.0, -r])
    for _ in range(N):
        h = np.convolve(h, [1.0, 1.0])
    h = np.real(h)
    return h * SQRT2 / h.sum()


def cascade(filt, levels: int):
    """Dyadic samples of the scaling function by iterated refinement of the box.

    Returns ``(x, phi)`` with x = n * 2^-levels covering [0, len(filt) - 1).
    Each iteration applies phi <- sqrt(2) * sum_k h_k phi(2 . - k) to the
    piecewise-constant iterate, starting from the indicator of [0, 1).
    """
    h = np.asarray(filt, dtype=float)
    if h.ndim != 1 or len(h) < 2:
        raise FilterError("filter must be a 1-d sequence with at least two taps")
    if abs(h.sum() - SQRT2) > 1e-8:
        raise FilterError(f"filter taps must sum to sqrt(2); got {h.sum():.12g}")
    if levels < 1:
        raise FilterError("levels must be >= 1")
    v = np.array([1.0])
    for r in range(levels):
        # iterate r lives on spacing 2^-r; tap k shifts the next iterate by k * 2^r cells
        step = 2 ** r
        out = np.zeros(len(v) + (len(h) - 1) * step)
        for k, hk in enumerate(h):
            out[k * step : k * step + len(v)] += SQRT2 * hk * v
        v = out
    x = np.arange(len(v)) / 2.0 ** levels
    return x, v


def wavelet_from_table(filt, x, phi):
    """Mother wavelet psi(x) = sqrt(2) sum_k g_k phi(2x - k) on the same grid."""
    h = np.asarray(filt, dtype=float)
    L = len(h)
    g = np.array([(-1) ** k * h[L - 1 - k] for k in range(L)])
    res = round(1.0 / (x[1] - x[0]))
    n = np.arange(len(phi))
    psi = np.zeros_like(phi)
    for k, gk in enumerate(g):
        idx = 2 * n - k * res
        ok = (idx >= 0) & (idx < len(phi))
        psi[ok] += SQRT2 * gk * phi[idx[ok]]
    return psi


@dataclass
class ScalingTable:
    filt: np.ndarray
    levels: int
    x: np.ndarray
    phi: np.ndarray
    psi: np.ndarray

    @classmethod
    def build(cls, filt, levels: int = TABLE_LEVELS) -> "ScalingTable":
        x, phi = cascade(filt, levels)
        return cls(np.asarray(filt, float), levels, x, phi, wavelet_from_table(filt, x, phi))

    @property
    def support(self) -> float:
        return float(len(self.filt) - 1)

    def _interp(self, vals, t):
        # linear interpolation on the dyadic grid, zero outside [0, support)
        t = np.asarray(t, dtype=float)
        scale = 2.0 ** self.levels
        pos = t * scale
        i0 = np.floor(pos).astype(np.int64)
        frac = pos - i0
        n = len(vals)
        inside = (t >= 0) & (t < self.support)
        i0c = np.clip(i0, 0, n - 1)
        i1c = np.clip(i0 + 1, 0, n - 1)
        v1 = np.where(i0 + 1 < n, vals[i1c], 0.0)
        out = (1 - frac) * vals[i0c] + frac * v1
        return np.where(inside, out, 0.0)

    def scaling(self, t):
        return self._interp(self.phi, t)

    def wavelet(self, t):
        return self._interp(self.psi, t)


@dataclass
class WaveletFamily:
    """Sum over j <= floor(log2(1/delta)), l in 1..2^k, |w_i| <= ceil(R 2^j)."""

    k: int
    eta: float
    delta: float
    R: float
    table: ScalingTable
    coeffs: list = field(default_factory=list)  # per j: array (2^k, (2W_j+1)^k)
    C_eta: float = 1.0
    K: float = 1.0

    kind = "wavelet"

    @property
    def J(self) -> int:
        return int(math.floor(math.log2(1.0 / self.delta) + 1e-12))

    def W(self, j: int) -> int:
        return int(math.ceil(self.R * 2 ** j))

    def shifts(self, j: int) -> np.ndarray:
        W = self.W(j)
        rng = np.arange(-W, W + 1)
        return np.array(list(itertools.product(rng, repeat=self.k)), dtype=np.int64).reshape(-1, self.k)

    @classmethod
    def zeros(cls, k, eta, delta, R, table, C_eta=1.0, K=1.0) -> "WaveletFamily":
        f = cls(k, eta, delta, R, table, [], C_eta, K)
        f.coeffs = [np.zeros((2 ** k, (2 * f.W(j) + 1) ** k)) for j in range(f.J + 1)]
        return f

    def coeff_bound(self, j: int) -> np.ndarray:
        """Cap per (l, w) at level j: C_eta K (1 + |w|/2^j) 2^(-j(eta + k/2))."""
        w = self.shifts(j)
        radial = 1.0 + np.linalg.norm(w, axis=1) / 2.0 ** j
        cap = self.C_eta * self.K * radial * 2.0 ** (-j * (self.eta + self.k / 2.0))
        return np.broadcast_to(cap, (2 ** self.k, len(w)))

    def project(self) -> "WaveletFamily":
        for j, c in enumerate(self.coeffs):
            cap = self.coeff_bound(j)
            np.clip(c, -cap, cap, out=c)
            if j > 0:
                c[2 ** self.k - 1] = 0.0  # l = 2^k is the pure scaling term, level 0 only
        return self

    def digits(self, l: int) -> list[int]:
        """Base-2 digits of l (1-indexed l, l = 2^k -> all zeros)."""
        l = l % (2 ** self.k)
        return [(l >> i) & 1 for i in range(self.k)]

    def basis(self, j: int, l: int, w, x):
        """psi_{jlw}(x) for x of shape (B, k)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        val = np.full(x.shape[0], 2.0 ** (j * self.k / 2.0))
        for i, dig in enumerate(self.digits(l)):
            t = 2.0 ** j * x[:, i] - w[i]
            val *= self.table.wavelet(t) if dig else self.table.scaling(t)
        return val

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        if X.shape[1] != self.k:
            raise ShapeError(f"expected inputs of dimension {self.k}, got shape {x.shape}")
        out = np.zeros(X.shape[0])
        S = self.table.support
        reach = math.ceil(self.R) + S
        for b, pt in enumerate(X):
            if np.linalg.norm(pt) > reach * math.sqrt(self.k):
                continue
            out[b] = self._eval_point(pt, S)
        return out[0] if single else out

    def _eval_point(self, pt, S):
        total = 0.0
        for j, c in enumerate(self.coeffs):
            W = self.W(j)
            scaled = 2.0 ** j * pt
            # shifts whose support [w, w + S) contains the scaled coordinate
            lo = np.maximum(np.floor(scaled - S).astype(int) + 1, -W)
            hi = np.minimum(np.floor(scaled).astype(int), W)
            if np.any(lo > hi):
                continue
            ranges = [range(a, b + 1) for a, b in zip(lo, hi)]
            side = 2 * W + 1
            for w in itertools.product(*ranges):
                col = 0
                for wi in w:
                    col = col * side + (wi + W)
                coefs = c[:, col]
                if not np.any(coefs):
                    continue
                for l_idx in np.nonzero(coefs)[0]:
                    total += coefs[l_idx] * self.basis(j, l_idx + 1, w, pt[None, :])[0]
        return total

    def active_terms(self, pt):
        """(j, l, w) triples whose support contains pt; used by bound checks."""
        S = self.table.support
        out = []
        for j in range(self.J + 1):
            W = self.W(j)
            scaled = 2.0 ** j * np.asarray(pt, dtype=float)
            lo = np.maximum(np.floor(scaled - S).astype(int) + 1, -W)
            hi = np.minimum(np.floor(scaled).astype(int), W)
            if np.any(lo > hi):
                continue
            for w in itertools.product(*[range(a, b + 1) for a, b in zip(lo, hi)]):
                for l in range(1, 2 ** self.k + 1):
                    if j > 0 and l == 2 ** self.k:
                        continue
                    out.append((j, l, w))
        return out


def eval_wavelet(f: WaveletFamily, x):
    return f(x)
