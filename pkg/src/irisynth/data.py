"""Dataset plumbing: procedural toy irises, image IO, manifests, checkpoints.

The toy-iris generator is a license-free stand-in for real capture pools:
a dark pupil disk inside a textured annulus on a bright sclera, with the
annulus texture seeded per identity and expressed in rubber-sheet
coordinates so that pupil dilation leaves the normalized texture unchanged.
Degradations (blur, noise, eyelid occlusion) are applied in that order.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .quality import GrayImage, Segmentation

__all__ = [
    "ToyIrisSpec",
    "toy_iris",
    "ManifestEntry",
    "load_manifest",
    "save_manifest",
    "read_image",
    "write_image",
    "PgmError",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
]


@dataclass(frozen=True)
class ToyIrisSpec:
    """Parameters of one procedural iris sample."""

    identity_seed: int
    pupil_radius_frac: float = 0.18
    iris_radius_frac: float = 0.42
    center_offset: tuple[float, float] = (0.0, 0.0)
    dilation: float = 1.0
    blur_sigma: float = 0.0
    noise_amplitude: float = 0.0
    occlusion_fraction: float = 0.0

    def __post_init__(self):
        if self.blur_sigma < 0 or self.noise_amplitude < 0:
            raise ValueError("blur sigma and noise amplitude must be >= 0")
        if not 0.0 <= self.occlusion_fraction < 1.0:
            raise ValueError("occlusion fraction must be in [0, 1)")


_PUPIL_LEVEL = 0.08
_IRIS_LEVEL = 0.45
_SCLERA_LEVEL = 0.88
_LID_LEVEL = 0.78


def _texture_params(identity_seed: int):
    rng = np.random.default_rng(identity_seed)
    n_ang, n_rad = 5, 3
    ang_freq = rng.integers(2, 18, size=n_ang)
    ang_phase = rng.uniform(0, 2 * np.pi, size=n_ang)
    ang_amp = rng.uniform(0.03, 0.09, size=n_ang)
    rad_freq = rng.integers(1, 5, size=n_rad)
    rad_phase = rng.uniform(0, 2 * np.pi, size=n_rad)
    rad_amp = rng.uniform(0.03, 0.08, size=n_rad)
    # cross terms give the texture genuine 2-D structure
    mix_freq = rng.integers(3, 12, size=2)
    mix_rad = rng.integers(1, 4, size=2)
    mix_phase = rng.uniform(0, 2 * np.pi, size=2)
    mix_amp = rng.uniform(0.03, 0.07, size=2)
    return (ang_freq, ang_phase, ang_amp, rad_freq, rad_phase, rad_amp,
            mix_freq, mix_rad, mix_phase, mix_amp)


def _smoothstep(edge: np.ndarray, width: float = 1.0) -> np.ndarray:
    """0 -> 1 transition over `width` pixels centered on edge = 0."""
    t = np.clip(edge / width + 0.5, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def toy_iris(spec: ToyIrisSpec, size: int = 64) -> tuple[GrayImage, Segmentation]:
    """Render one toy iris and return it with its ground-truth segmentation."""
    s = float(size)
    icx = icy = (s - 1) / 2.0
    pcx = icx + spec.center_offset[0]
    pcy = icy + spec.center_offset[1]
    r_i = spec.iris_radius_frac * s
    r_p = spec.pupil_radius_frac * spec.dilation * s
    # validates radii/containment up front
    seg = Segmentation((pcx, pcy), r_p, (icx, icy), r_i)

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    r_pupil = np.hypot(xx - pcx, yy - pcy)
    r_iris = np.hypot(xx - icx, yy - icy)
    theta = np.arctan2(yy - icy, xx - icx)

    # rubber-sheet coordinate: project each pixel onto the segment between
    # the pupil and iris boundary points at its angle
    bx = pcx + r_p * np.cos(theta)
    by = pcy + r_p * np.sin(theta)
    ex = icx + r_i * np.cos(theta)
    ey = icy + r_i * np.sin(theta)
    seg_len2 = (ex - bx) ** 2 + (ey - by) ** 2
    t = ((xx - bx) * (ex - bx) + (yy - by) * (ey - by)) / np.maximum(seg_len2, 1e-12)

    (af, ap, aa, rf, rp_, ra, mf, mr, mp, ma) = _texture_params(spec.identity_seed)
    tex = np.zeros_like(xx)
    for f, ph, a in zip(af, ap, aa):
        tex += a * np.cos(f * theta + ph)
    for f, ph, a in zip(rf, rp_, ra):
        tex += a * np.cos(2 * np.pi * f * t + ph)
    for f, fr, ph, a in zip(mf, mr, mp, ma):
        tex += a * np.cos(f * theta + 2 * np.pi * fr * t + ph)
    iris = np.clip(_IRIS_LEVEL + tex, 0.15, 0.78)

    img = np.full((size, size), _SCLERA_LEVEL)
    in_iris = _smoothstep(r_i - r_iris)
    img = img * (1 - in_iris) + iris * in_iris
    in_pupil = _smoothstep(r_p - r_pupil)
    img = img * (1 - in_pupil) + _PUPIL_LEVEL * in_pupil

    if spec.occlusion_fraction > 0:
        # upper eyelid: horizontal band covering the given fraction of the
        # iris circle's vertical extent
        y_edge = (icy - r_i) + spec.occlusion_fraction * 2 * r_i
        lid = _smoothstep(y_edge - yy, width=2.0)
        img = img * (1 - lid) + _LID_LEVEL * lid

    if spec.blur_sigma > 0:
        img = gaussian_filter(img, spec.blur_sigma, mode="nearest")
    if spec.noise_amplitude > 0:
        digest = hashlib.sha256(repr(spec).encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        img = img + rng.normal(0.0, spec.noise_amplitude, img.shape)
    return GrayImage(np.clip(img, 0.0, 1.0)), seg


# -- manifests -------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    identity: str
    cls: str  # real | synthetic | attack
    split: str = ""


_MANIFEST_CLASSES = {"real", "synthetic", "attack"}


def load_manifest(path, check_paths: bool = True) -> list[ManifestEntry]:
    path = Path(path)
    entries = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(row for row in fh if not row.startswith("#"))
        required = {"path", "identity", "class", "split"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(
                f"manifest {path} must have header path,identity,class,split"
            )
        for i, row in enumerate(reader, start=2):
            if row["class"] not in _MANIFEST_CLASSES:
                raise ValueError(
                    f"{path}:{i}: unknown class {row['class']!r} "
                    f"(expected one of {sorted(_MANIFEST_CLASSES)})"
                )
            p = Path(row["path"])
            if not p.is_absolute():
                p = path.parent / p
            if check_paths and not p.exists():
                raise FileNotFoundError(f"{path}:{i}: missing image {p}")
            entries.append(ManifestEntry(p, row["identity"], row["class"], row["split"]))
    return entries


def save_manifest(path, entries: list[ManifestEntry]) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "identity", "class", "split"])
        for e in entries:
            p = e.path
            try:
                p = p.relative_to(path.parent)
            except ValueError:
                pass
            writer.writerow([str(p), e.identity, e.cls, e.split])


# -- image IO --------------------------------------------------------------


class PgmError(ValueError):
    """Malformed PGM file; the message carries the byte offset."""


def _pgm_tokens(buf: bytes, n: int):
    """Yield the first n whitespace/comment-delimited header tokens with
    the offset of the byte just past each token."""
    i = 0
    out = []
    while len(out) < n:
        while i < len(buf) and buf[i : i + 1].isspace():
            i += 1
        if i < len(buf) and buf[i : i + 1] == b"#":
            while i < len(buf) and buf[i : i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < len(buf) and not buf[i : i + 1].isspace() and buf[i : i + 1] != b"#":
            i += 1
        if i == start:
            raise PgmError(f"unexpected end of PGM header at byte {i}")
        out.append((buf[start:i], i))
    return out


def read_pgm(path) -> GrayImage:
    buf = Path(path).read_bytes()
    toks = _pgm_tokens(buf, 4)
    magic = toks[0][0]
    if magic != b"P5":
        raise PgmError(f"bad PGM magic {magic!r} at byte 0")
    try:
        w, h, maxval = (int(t[0]) for t in toks[1:])
    except ValueError:
        raise PgmError(f"non-numeric PGM header field near byte {toks[1][1]}") from None
    if maxval != 255:
        raise PgmError(f"unsupported PGM maxval {maxval} (only 255)")
    data_start = toks[3][1] + 1  # single whitespace byte after maxval
    expected = w * h
    payload = buf[data_start : data_start + expected]
    if len(payload) != expected:
        raise PgmError(
            f"truncated PGM payload at byte {data_start}: "
            f"expected {expected} bytes, got {len(payload)}"
        )
    px = np.frombuffer(payload, dtype=np.uint8).reshape(h, w)
    return GrayImage(px.astype(np.float64) / 255.0)


def write_pgm(path, img: GrayImage) -> None:
    px = np.round(img.pixels * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.width} {img.height}\n255\n".encode())
        fh.write(px.tobytes())


def read_image(path) -> GrayImage:
    """Read an 8-bit grayscale image; PGM handled natively, PNG via Pillow."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return read_pgm(path)
    with Image.open(path) as im:
        px = np.asarray(im.convert("L"), dtype=np.float64)
    return GrayImage(px / 255.0)


def write_image(path, img: GrayImage) -> None:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        write_pgm(path, img)
        return
    px = np.round(img.pixels * 255.0).astype(np.uint8)
    Image.fromarray(px, mode="L").save(path)


# -- checkpoints -----------------------------------------------------------

_CKPT_MAGIC = b"IDCG"
_CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: dict[str, np.ndarray], config: dict) -> None:
    """Write named tensors as little-endian f32 with a JSON config echo."""
    cfg_bytes = json.dumps(config, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<II", _CKPT_VERSION, len(cfg_bytes)))
        fh.write(cfg_bytes)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            a = np.ascontiguousarray(arr, dtype="<f4")
            nb = name.encode()
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", a.ndim))
            fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
            fh.write(a.tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    buf = Path(path).read_bytes()
    view = io.BytesIO(buf)

    def take(n, what):
        b = view.read(n)
        if len(b) != n:
            raise CheckpointError(
                f"truncated checkpoint while reading {what}: wanted {n} bytes"
            )
        return b

    if take(4, "magic") != _CKPT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic in {path}")
    version, cfg_len = struct.unpack("<II", take(8, "header"))
    if version != _CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    config = json.loads(take(cfg_len, "config"))
    (count,) = struct.unpack("<I", take(4, "tensor count"))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "tensor name length"))
        name = take(name_len, "tensor name").decode()
        (rank,) = struct.unpack("<B", take(1, "tensor rank"))
        shape = struct.unpack(f"<{rank}I", take(4 * rank, "tensor extents"))
        n = int(np.prod(shape)) if rank else 1
        payload = take(4 * n, f"payload of {name!r}")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    return tensors, config
