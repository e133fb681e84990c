"""Versioned binary model checkpoints.

Layout: magic "SMLC", format version, geometry and hyperparameters, then
every array as a (rows, cols, little-endian float64 row-major) record:
manifold weights, decoder kernels and biases, optimizer moments, and the
trained-epoch counter. Floats round-trip bit for bit; writes go to a
temporary file first and are renamed into place.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .decoder import AdamState, ConvDecoder
from .errors import CorruptFile, IoError, VersionMismatch
from .patches import PatchGeometry
from .pipeline import STRATEGIES, FusionModel
from .spd import SpdNet, StiefelParam

MAGIC = b"SMLC"
VERSION = 1


def _matrix_bytes(m: np.ndarray) -> bytes:
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    rows, cols = m.shape
    return struct.pack("<II", rows, cols) + np.ascontiguousarray(m, dtype="<f8").tobytes()


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.raw):
            raise CorruptFile(f"{self.path}: truncated at byte {self.off}")
        chunk = self.raw[self.off : self.off + n]
        self.off += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def matrix(self) -> np.ndarray:
        rows, cols = struct.unpack("<II", self.take(8))
        data = np.frombuffer(self.take(8 * rows * cols), dtype="<f8")
        return data.reshape(rows, cols).astype(np.float64)

    def done(self) -> None:
        if self.off != len(self.raw):
            raise CorruptFile(f"{self.path}: {len(self.raw) - self.off} trailing bytes")


def save_checkpoint(model: FusionModel, path) -> None:
    geom = model.geometry
    chunks = [
        MAGIC,
        struct.pack("<I", VERSION),
        struct.pack(
            "<5I", geom.patch_size, geom.stride, geom.pad, geom.image_h, geom.image_w
        ),
        struct.pack("<dd", model.spdnet.reeig_eps, model.cov_eps),
        struct.pack("<I", STRATEGIES.index(model.strategy)),
        struct.pack("<I", model.spdnet.depth),
    ]
    for param in model.spdnet.bimaps:
        chunks.append(_matrix_bytes(param.w))

    dec = model.decoder
    chunks.append(struct.pack("<I", dec.n_stages))
    for kern, bias in zip(dec.kernels, dec.biases):
        c_out, c_in, kh, kw = kern.shape
        chunks.append(struct.pack("<4I", c_out, c_in, kh, kw))
        chunks.append(_matrix_bytes(kern.reshape(c_out, c_in * kh * kw)))
        chunks.append(_matrix_bytes(bias.reshape(1, -1)))

    chunks.append(struct.pack("<Q", model.adam.t))
    for buf in model.adam.m + model.adam.v:
        chunks.append(_matrix_bytes(buf.reshape(1, -1)))
    chunks.append(struct.pack("<I", model.trained_epochs))

    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
        with os.fdopen(fd, "wb") as fh:
            fh.write(b"".join(chunks))
        os.replace(tmp, path)
    except OSError as exc:
        raise IoError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path) -> FusionModel:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read checkpoint {path}: {exc}") from exc

    r = _Reader(raw, path)
    if r.take(4) != MAGIC:
        raise VersionMismatch(f"{path}: not a checkpoint file (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise VersionMismatch(f"{path}: format version {version}, expected {VERSION}")

    patch_size, stride, pad, image_h, image_w = (r.u32() for _ in range(5))
    geom = PatchGeometry(
        patch_size=patch_size, stride=stride, pad=pad, image_h=image_h, image_w=image_w
    )
    reeig_eps = r.f64()
    cov_eps = r.f64()
    strategy_code = r.u32()
    if strategy_code >= len(STRATEGIES):
        raise CorruptFile(f"{path}: unknown strategy code {strategy_code}")
    depth = r.u32()
    bimaps = [StiefelParam(w=r.matrix()) for _ in range(depth)]

    n_stages = r.u32()
    kernels, biases = [], []
    for _ in range(n_stages):
        c_out, c_in, kh, kw = (r.u32() for _ in range(4))
        kernels.append(r.matrix().reshape(c_out, c_in, kh, kw))
        biases.append(r.matrix().reshape(-1))
    decoder = ConvDecoder(kernels=kernels, biases=biases)

    t = r.u64()
    params = decoder.params()
    m = [r.matrix().reshape(p.shape) for p in params]
    v = [r.matrix().reshape(p.shape) for p in params]
    trained_epochs = r.u32()
    r.done()

    return FusionModel(
        spdnet=SpdNet(bimaps=bimaps, reeig_eps=reeig_eps),
        decoder=decoder,
        geometry=geom,
        cov_eps=cov_eps,
        strategy=STRATEGIES[strategy_code],
        adam=AdamState(m=m, v=v, t=t),
        trained_epochs=trained_epochs,
    )


def save_matrix(m: np.ndarray, path) -> None:
    """Raw matrix dump in the checkpoint record format."""
    try:
        Path(path).write_bytes(_matrix_bytes(m))
    except OSError as exc:
        raise IoError(f"cannot write matrix {path}: {exc}") from exc


def load_matrix(path) -> np.ndarray:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read matrix {path}: {exc}") from exc
    r = _Reader(raw, path)
    m = r.matrix()
    r.done()
    return m
