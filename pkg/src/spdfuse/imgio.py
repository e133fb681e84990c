"""Image IO, resizing, noise injection, and dataset pairing.

Images are float64 arrays in [0, 1]. PGM (binary P5) is the canonical
lossless interchange format; PNG is accepted for dataset convenience, with
RGB collapsed to luma. Dataset pairs are matched by filename stem across
the two modality directories, in lexicographic order.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    BadLevel,
    DataError,
    DecodeError,
    IoError,
    UnsupportedFormat,
    UsageError,
    ZeroDim,
)

LUMA = (0.299, 0.587, 0.114)
IMAGE_EXTENSIONS = (".pgm", ".png")


def _parse_pgm(raw: bytes, path) -> np.ndarray:
    pos = 0

    def token() -> bytes:
        nonlocal pos
        while pos < len(raw):
            ch = raw[pos : pos + 1]
            if ch == b"#":
                while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DecodeError(f"{path}: truncated header")
        return raw[start:pos]

    magic = token()
    if magic != b"P5":
        raise UnsupportedFormat(f"{path}: not a binary PGM (magic {magic!r})")
    try:
        width, height, maxval = int(token()), int(token()), int(token())
    except ValueError as exc:
        raise DecodeError(f"{path}: non-numeric header field") from exc
    if width <= 0 or height <= 0 or maxval <= 0:
        raise DecodeError(f"{path}: bad dimensions {width}x{height}, maxval {maxval}")
    if maxval > 255:
        raise UnsupportedFormat(f"{path}: 16-bit PGM not supported (maxval {maxval})")
    pos += 1  # single whitespace byte after maxval
    data = raw[pos : pos + width * height]
    if len(data) != width * height:
        raise DecodeError(f"{path}: pixel data truncated")
    arr = np.frombuffer(data, dtype=np.uint8).reshape(height, width)
    return arr.astype(np.float64) / maxval


def load_image(path) -> np.ndarray:
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".pgm":
        try:
            raw = path.read_bytes()
        except OSError as exc:
            raise IoError(f"cannot read {path}: {exc}") from exc
        return _parse_pgm(raw, path)
    if ext == ".png":
        try:
            with Image.open(path) as im:
                im.load()
                mode = im.mode
                if mode == "P":
                    im = im.convert("RGB")
                    mode = "RGB"
                if mode == "L":
                    return np.asarray(im, dtype=np.float64) / 255.0
                if mode in ("RGB", "RGBA"):
                    rgb = np.asarray(im, dtype=np.float64)[..., :3] / 255.0
                    return rgb @ np.array(LUMA)
                raise UnsupportedFormat(f"{path}: PNG mode {mode!r} not supported")
        except UnidentifiedImageError as exc:
            raise DecodeError(f"{path}: not a decodable PNG") from exc
        except OSError as exc:
            raise IoError(f"cannot read {path}: {exc}") from exc
    raise UnsupportedFormat(f"{path}: unknown image extension {ext!r}")


def to_bytes_u8(img: np.ndarray) -> np.ndarray:
    return np.round(255.0 * np.clip(img, 0.0, 1.0)).astype(np.uint8)


def save_image(img: np.ndarray, path) -> None:
    path = Path(path)
    q = to_bytes_u8(np.asarray(img, dtype=np.float64))
    ext = path.suffix.lower()
    try:
        if ext == ".pgm":
            h, w = q.shape
            path.write_bytes(b"P5\n%d %d\n255\n" % (w, h) + q.tobytes())
        elif ext == ".png":
            Image.fromarray(q, mode="L").save(path)
        else:
            raise UnsupportedFormat(f"{path}: unknown image extension {ext!r}")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _axis_positions(n_in: int, n_out: int) -> np.ndarray:
    if n_out == 1:
        return np.zeros(1)
    return np.arange(n_out) * ((n_in - 1) / (n_out - 1))


def resize_bilinear(img: np.ndarray, h: int, w: int) -> np.ndarray:
    """Corner-aligned bilinear resampling; exact identity at equal sizes."""
    if h <= 0 or w <= 0:
        raise ZeroDim(f"target size {h}x{w} not positive")
    img = np.asarray(img, dtype=np.float64)
    in_h, in_w = img.shape

    ys = _axis_positions(in_h, h)
    y0 = np.minimum(ys.astype(np.int64), in_h - 1)
    y1 = np.minimum(y0 + 1, in_h - 1)
    ty = (ys - y0)[:, None]
    rows = img[y0] + ty * (img[y1] - img[y0])

    xs = _axis_positions(in_w, w)
    x0 = np.minimum(xs.astype(np.int64), in_w - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    tx = (xs - x0)[None, :]
    return rows[:, x0] + tx * (rows[:, x1] - rows[:, x0])


def add_noise(img: np.ndarray, kind: str, level: float, seed: int) -> np.ndarray:
    """Seeded corruption for the robustness harness."""
    img = np.asarray(img, dtype=np.float64)
    rng = np.random.default_rng(seed)
    if kind == "gaussian":
        if level <= 0:
            raise BadLevel(f"gaussian noise level must be positive, got {level}")
        return np.clip(img + rng.normal(0.0, level, img.shape), 0.0, 1.0)
    if kind == "salt_pepper":
        if not 0.0 <= level <= 1.0:
            raise BadLevel(f"salt_pepper level must lie in [0,1], got {level}")
        hit = rng.random(img.shape) < level
        salt = rng.random(img.shape) < 0.5
        return np.where(hit, salt.astype(np.float64), img)
    raise UsageError(f"unknown noise kind {kind!r}")


def list_pairs(ir_dir, vi_dir) -> list[tuple[str, Path, Path]]:
    """Filename-stem-matched (ir, vi) pairs in lexicographic stem order."""
    def stems(d: Path) -> dict[str, Path]:
        if not d.is_dir():
            raise DataError(f"not a directory: {d}")
        out: dict[str, Path] = {}
        for p in sorted(d.iterdir()):
            if p.suffix.lower() in IMAGE_EXTENSIONS:
                if p.stem in out:
                    raise DataError(f"duplicate stem {p.stem!r} in {d}")
                out[p.stem] = p
        return out

    ir_map = stems(Path(ir_dir))
    vi_map = stems(Path(vi_dir))
    for stem in sorted(set(ir_map) ^ set(vi_map)):
        side = ir_dir if stem in ir_map else vi_dir
        raise DataError(f"unmatched image stem {stem!r} (only in {side})")
    if not ir_map:
        raise DataError(f"no image pairs found in {ir_dir} and {vi_dir}")
    return [(stem, ir_map[stem], vi_map[stem]) for stem in sorted(ir_map)]


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
