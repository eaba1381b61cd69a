"""Binary and JSON records for function families.

Binary layout (all little-endian)::

    magic   4s   b"AGFR"
    version u16  FORMAT_VERSION
    kind    u8   1 = bump, 2 = wavelet

    bump:    k, out_dim, L1, L2 as u32, then float64 arrays A, b, alpha
             (C order, shapes (out_dim, L1, L2, k), same, (out_dim, L1, L2))
    wavelet: k u32, eta, delta, R, C_eta, K f64, table levels u32,
             n_taps u32 + taps f64, then for j = 0..J the (2^k, (2W_j+1)^k)
             coefficient block in C order
"""
from __future__ import annotations

import io
import json
import struct

import numpy as np

from .bump import BumpFamily
from .wavelet import ScalingTable, WaveletFamily

MAGIC = b"AGFR"
FORMAT_VERSION = 1
KIND_CODES = {"bump": 1, "wavelet": 2}


class FormatError(ValueError):
    pass


def _f64(arr) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def family_to_bytes(f) -> bytes:
    buf = io.BytesIO()
    buf.write(struct.pack("<4sHB", MAGIC, FORMAT_VERSION, KIND_CODES[f.kind]))
    if f.kind == "bump":
        buf.write(struct.pack("<4I", f.k, f.out_dim, f.L1, f.L2))
        for a in f.arrays():
            buf.write(_f64(a))
    else:
        buf.write(struct.pack("<I5d", f.k, f.eta, f.delta, f.R, f.C_eta, f.K))
        taps = f.table.filt
        buf.write(struct.pack("<2I", f.table.levels, len(taps)))
        buf.write(_f64(taps))
        for c in f.coeffs:
            buf.write(_f64(c))
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes, what: str = "family record"):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(
                f"truncated {self.what}: need {n} bytes at offset {self.pos}, have {len(self.data) - self.pos}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(float).reshape(shape)


def read_family(r: _Reader):
    magic, version, kind = r.unpack("<4sHB")
    if magic != MAGIC:
        raise FormatError(f"bad family magic {magic!r} at offset {r.pos - 7}")
    if version != FORMAT_VERSION:
        raise FormatError(f"family record version {version}, this build reads {FORMAT_VERSION}")
    if kind == 1:
        k, out_dim, L1, L2 = r.unpack("<4I")
        A = r.floats((out_dim, L1, L2, k))
        b = r.floats((out_dim, L1, L2, k))
        alpha = r.floats((out_dim, L1, L2))
        return BumpFamily(A, b, alpha)
    if kind == 2:
        k, eta, delta, R, C_eta, K = r.unpack("<I5d")
        levels, n_taps = r.unpack("<2I")
        taps = r.floats((n_taps,))
        f = WaveletFamily.zeros(k, eta, delta, R, ScalingTable.build(taps, levels), C_eta, K)
        f.coeffs = [r.floats(c.shape) for c in f.coeffs]
        return f
    raise FormatError(f"unknown family kind code {kind}")


def family_from_bytes(data: bytes):
    r = _Reader(data)
    f = read_family(r)
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after family record")
    return f


def family_to_json(f) -> str:
    """Debug mirror of the binary record (floats via repr, so lossless)."""
    if f.kind == "bump":
        doc = {"kind": "bump", "k": f.k, "out_dim": f.out_dim, "L1": f.L1, "L2": f.L2,
               "A": f.A.tolist(), "b": f.b.tolist(), "alpha": f.alpha.tolist()}
    else:
        doc = {"kind": "wavelet", "k": f.k, "eta": f.eta, "delta": f.delta, "R": f.R,
               "C_eta": f.C_eta, "K": f.K, "levels": f.table.levels,
               "filter": f.table.filt.tolist(), "coeffs": [c.tolist() for c in f.coeffs]}
    return json.dumps(doc)


def family_from_json(text: str):
    doc = json.loads(text)
    if doc["kind"] == "bump":
        return BumpFamily(np.array(doc["A"], float).reshape(doc["out_dim"], doc["L1"], doc["L2"], doc["k"]),
                          np.array(doc["b"], float).reshape(doc["out_dim"], doc["L1"], doc["L2"], doc["k"]),
                          np.array(doc["alpha"], float).reshape(doc["out_dim"], doc["L1"], doc["L2"]))
    if doc["kind"] == "wavelet":
        table = ScalingTable.build(np.array(doc["filter"]), doc["levels"])
        f = WaveletFamily.zeros(doc["k"], doc["eta"], doc["delta"], doc["R"], table, doc["C_eta"], doc["K"])
        f.coeffs = [np.array(c, float).reshape(z.shape) for c, z in zip(doc["coeffs"], f.coeffs)]
        return f
    raise FormatError(f"unknown family kind {doc['kind']!r}")
