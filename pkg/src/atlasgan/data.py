"""Synthetic surface datasets and point-cloud files.

Two on-disk formats:

* CSV with a header ``x0,x1,...`` and values written with 17 significant digits;
* f64le: magic ``AGCLOUD1``, u64 rows, u64 cols, then row-major little-endian doubles.
"""
from __future__ import annotations

import csv
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .geometry import smooth_step_down
from .model import SampleCloud

CLOUD_MAGIC = b"AGCLOUD1"
SPHERE_RAMP = 0.1  # delta rises from 0 to 1 on x in [0, 0.1]
TORUS_R, TORUS_r = 2.5, 1.0


class CloudFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SurfaceSpec:
    kind: str  # sphere_nonuniform | torus_uniform
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind == "torus_uniform":
            R = self.params.get("major", TORUS_R)
            r = self.params.get("minor", TORUS_r)
            if not R > r > 0:
                raise ValueError(f"torus needs major > minor > 0, got {R}, {r}")
        elif self.kind != "sphere_nonuniform":
            raise ValueError(f"unknown surface kind {self.kind!r}")

    @classmethod
    def by_name(cls, name):
        kinds = {"sphere": "sphere_nonuniform", "torus": "torus_uniform",
                 "sphere_nonuniform": "sphere_nonuniform", "torus_uniform": "torus_uniform"}
        if name not in kinds:
            raise ValueError(f"unknown surface {name!r}; choose sphere or torus")
        return cls(kinds[name])

    def sample(self, count, rng):
        if self.kind == "sphere_nonuniform":
            return sample_sphere_nonuniform(count, rng)
        return sample_torus_uniform(count, rng, self.params.get("major", TORUS_R), self.params.get("minor", TORUS_r))


def sphere_delta(x):
    """delta(x): 0 on [-1, 0], 1 on [0.1, 1], C-infinity bridge in between."""
    return 1.0 - smooth_step_down(np.asarray(x, dtype=float) / SPHERE_RAMP)


def sample_sphere_nonuniform(count, rng) -> SampleCloud:
    """Unit-sphere points with density proportional to 1 + delta(x_0)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    parts, got, proposed = [], 0, 0
    while got < count:
        k = max(2 * (count - got), 16)
        g = rng.standard_normal((k, 3))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        keep = rng.random(k) < 0.5 * (1.0 + sphere_delta(g[:, 0]))
        proposed += k
        parts.append(g[keep])
        got += int(keep.sum())
    pts = np.concatenate(parts)[:count]
    return SampleCloud(pts, "real", meta={"surface": "sphere_nonuniform", "proposals": proposed})


def sample_torus_uniform(count, rng, R=TORUS_R, r=TORUS_r) -> SampleCloud:
    """Area-uniform points on the torus with major radius R and minor radius r.

    phi is uniform; theta is uniform and accepted with probability
    (R + r cos theta) / (R + r), the area element up to a constant.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    parts, got, proposed, accepted = [], 0, 0, 0
    while got < count:
        k = max(2 * (count - got), 16)
        th = rng.uniform(0.0, 2 * math.pi, k)
        ph = rng.uniform(0.0, 2 * math.pi, k)
        keep = rng.random(k) < (R + r * np.cos(th)) / (R + r)
        proposed += k
        accepted += int(keep.sum())
        th, ph = th[keep], ph[keep]
        ring = R + r * np.cos(th)
        parts.append(np.stack([ring * np.cos(ph), ring * np.sin(ph), r * np.sin(th)], axis=1))
        got += len(th)
    pts = np.concatenate(parts)[:count]
    return SampleCloud(pts, "real", meta={"surface": "torus_uniform", "proposals": proposed,
                                          "accepted": accepted, "acceptance_rate": accepted / proposed})


# -- files -----------------------------------------------------------------------


def _format_of(path, fmt):
    if fmt:
        return fmt
    return "csv" if os.fspath(path).endswith(".csv") else "f64le"


def write_cloud(cloud, path, fmt=None):
    pts = np.asarray(getattr(cloud, "points", cloud), dtype=float)
    fmt = _format_of(path, fmt)
    path = os.fspath(path)
    tmp = path + ".tmp"
    if fmt == "csv":
        with open(tmp, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{j}" for j in range(pts.shape[1])])
            for row in pts:
                w.writerow(["%.17g" % v for v in row])
    elif fmt == "f64le":
        with open(tmp, "wb") as fh:
            fh.write(CLOUD_MAGIC + struct.pack("<QQ", *pts.shape))
            fh.write(np.ascontiguousarray(pts, dtype="<f8").tobytes())
    else:
        raise ValueError(f"unknown cloud format {fmt!r}")
    os.replace(tmp, path)


def read_cloud(path, fmt=None, origin="real") -> SampleCloud:
    fmt = _format_of(path, fmt)
    if fmt == "csv":
        pts = _read_csv(path)
    elif fmt == "f64le":
        pts = _read_f64(path)
    else:
        raise ValueError(f"unknown cloud format {fmt!r}")
    return SampleCloud(pts, origin, meta={"path": os.fspath(path)})


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CloudFormatError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if not body:
        raise CloudFormatError(f"{path}: no data rows")
    width = len(header)
    out = np.empty((len(body), width))
    for i, row in enumerate(body):
        if len(row) != width:
            raise CloudFormatError(f"{path}: row {i} has {len(row)} fields, expected {width}")
        try:
            vals = [float(v) for v in row]
        except ValueError:
            raise CloudFormatError(f"{path}: row {i} has a non-numeric field") from None
        if not all(math.isfinite(v) for v in vals):
            raise CloudFormatError(f"{path}: row {i} contains NaN or Inf")
        out[i] = vals
    return out


def _read_f64(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) == 0:
        raise CloudFormatError(f"{path}: empty file")
    if len(data) < 24 or data[:8] != CLOUD_MAGIC:
        raise CloudFormatError(f"{path}: not an f64le cloud (bad magic or short header)")
    rows, cols = struct.unpack("<QQ", data[8:24])
    if rows == 0 or cols == 0:
        raise CloudFormatError(f"{path}: cloud has no points")
    need = 24 + 8 * rows * cols
    if len(data) != need:
        raise CloudFormatError(f"{path}: expected {need} bytes for {rows}x{cols}, found {len(data)}")
    pts = np.frombuffer(data, dtype="<f8", offset=24).reshape(rows, cols).astype(float)
    bad = np.flatnonzero(~np.all(np.isfinite(pts), axis=1))
    if len(bad):
        raise CloudFormatError(f"{path}: row {int(bad[0])} contains NaN or Inf")
    return pts
