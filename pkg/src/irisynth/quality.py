"""Iris segmentation and image/biometric quality metrics.

Segmentation is a coarse-to-fine integro-differential circle search. On top
of it sit six quality scores: pupil boundary circularity, pupil contrast,
pupil-to-iris ratio, pupil concentricity, a high-pass focus score, and a
composite overall score that gates and evaluates the synthesis pipeline.
Histogram construction and chi-squared comparison for score-distribution
reports live here too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter, gaussian_filter1d

__all__ = [
    "GrayImage",
    "Segmentation",
    "QualityReport",
    "SegmentationError",
    "segment",
    "pupil_boundary",
    "circularity",
    "pupil_contrast",
    "pupil_iris_ratio",
    "concentricity_offset",
    "sharpness",
    "overall_quality",
    "quality_report",
    "histogram",
    "chi2_distance",
]


class SegmentationError(RuntimeError):
    """No circular boundary with sufficient edge response was found."""


@dataclass(frozen=True)
class GrayImage:
    """Single-channel image, intensities in [0, 1], row-major."""

    pixels: np.ndarray  # (H, W) float64

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.shape[0] < 16 or px.shape[1] < 16:
            raise ValueError(f"GrayImage needs a 2-D array >= 16x16, got {px.shape}")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("GrayImage intensities must be finite and in [0, 1]")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]


@dataclass(frozen=True)
class Segmentation:
    """Pupil and iris circle parameters, pixel units."""

    pupil_center: tuple[float, float]  # (x, y)
    pupil_radius: float
    iris_center: tuple[float, float]
    iris_radius: float

    def __post_init__(self):
        if not (0.0 < self.pupil_radius < self.iris_radius):
            raise ValueError(
                f"need 0 < pupil_radius ({self.pupil_radius}) < iris_radius ({self.iris_radius})"
            )
        dx = self.pupil_center[0] - self.iris_center[0]
        dy = self.pupil_center[1] - self.iris_center[1]
        if math.hypot(dx, dy) + self.pupil_radius > self.iris_radius + 1e-9:
            raise ValueError("pupil circle must lie inside the iris circle")


@dataclass(frozen=True)
class QualityReport:
    circularity: float
    pupil_contrast: float
    pupil_iris_ratio: float
    concentricity_offset: float
    sharpness: float
    overall: float
    segmented: bool = True


def _bilinear(px: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample image at float coordinates (x right, y down), clamped at edges."""
    h, w = px.shape
    x = np.clip(x, 0.0, w - 1.0)
    y = np.clip(y, 0.0, h - 1.0)
    x0 = x.astype(np.intp)  # x >= 0, so truncation == floor
    y0 = y.astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    flat = px.ravel()
    r0 = y0 * w
    r1 = y1 * w
    top = flat.take(r0 + x0) * (1 - fx) + flat.take(r0 + x1) * fx
    bot = flat.take(r1 + x0) * (1 - fx) + flat.take(r1 + x1) * fx
    return top * (1 - fy) + bot * fy


def _lateral_arcs(n_angles):
    """Left/right arc samples (+-45 deg around 0 and 180), avoiding eyelids."""
    half = n_angles // 2
    right = np.linspace(-np.pi / 4, np.pi / 4, half)
    left = np.linspace(3 * np.pi / 4, 5 * np.pi / 4, half)
    return np.concatenate([right, left])


def _circle_means(px, cx, cy, radii, n_angles, theta=None):
    """Mean intensity on circles: centers (M,), radii (R,) -> (M, R)."""
    if theta is None:
        theta = np.linspace(0.0, 2 * np.pi, n_angles, endpoint=False)
    ct, st = np.cos(theta), np.sin(theta)
    x = cx[:, None, None] + radii[None, :, None] * ct[None, None, :]
    y = cy[:, None, None] + radii[None, :, None] * st[None, None, :]
    return _bilinear(px, x, y).mean(axis=2)


def _best_circle(px, centers, radii, n_angles, smooth=1.0, theta=None):
    """Maximize the blurred radial derivative of circular mean intensity.

    Returns (cx, cy, r, response). Circles reaching outside the image are
    penalized by the coordinate clamp in sampling, which flattens their
    profile; candidates are pre-filtered to stay in bounds.
    """
    if len(radii) < 3:
        raise SegmentationError("radial search range is too narrow")
    cx = centers[:, 0].astype(np.float64)
    cy = centers[:, 1].astype(np.float64)
    prof = _circle_means(px, cx, cy, radii, n_angles, theta=theta)  # (M, R)
    deriv = np.gradient(prof, radii, axis=1)
    deriv = gaussian_filter1d(deriv, smooth, axis=1, mode="nearest")
    m, r = np.unravel_index(np.argmax(deriv), deriv.shape)
    return cx[m], cy[m], radii[r], deriv[m, r]


def _center_grid(x0, x1, y0, y1, step):
    xs = np.arange(x0, x1 + 1e-9, step)
    ys = np.arange(y0, y1 + 1e-9, step)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def segment(
    img: GrayImage,
    pupil_r_frac=(0.06, 0.25),
    iris_r_factor=(1.5, 4.0),
    min_response: float = 0.03,
) -> Segmentation:
    """Locate pupil and iris circles by integro-differential search.

    Pupil first over ``pupil_r_frac * min(W, H)``, then the iris constrained
    around the pupil center at ``iris_r_factor * pupil_radius``, both capped
    to stay inside the image. Raises SegmentationError when the strongest
    boundary response falls below ``min_response``.
    """
    px = img.pixels
    h, w = px.shape
    s = min(h, w)
    r_lo = max(2.0, pupil_r_frac[0] * s)
    r_hi = max(r_lo + 1.0, pupil_r_frac[1] * s)

    # seed the pupil center from the darkest blob: blur, take the argmin,
    # then the intensity-weighted centroid of the dark region around it
    blurred = gaussian_filter(px, max(1.0, s / 32.0), mode="nearest")
    margin = int(r_lo) + 1
    interior = blurred[margin : h - margin, margin : w - margin]
    iy0, ix0 = np.unravel_index(np.argmin(interior), interior.shape)
    cy0, cx0 = float(iy0 + margin), float(ix0 + margin)
    lo, hi = blurred.min(), blurred.max()
    dark = blurred <= lo + 0.15 * (hi - lo)
    yy, xx = np.nonzero(dark)
    near = (xx - cx0) ** 2 + (yy - cy0) ** 2 <= (2.5 * r_hi) ** 2
    if near.any():
        cx0 = float(xx[near].mean())
        cy0 = float(yy[near].mean())

    # integro-differential pupil search around the seed
    centers = _center_grid(cx0 - 3.0, cx0 + 3.0, cy0 - 3.0, cy0 + 3.0, 1.0)
    radii = np.arange(r_lo, r_hi + 0.25, 0.5)
    cx, cy, pr, resp = _best_circle(px, centers, radii, n_angles=32)
    if resp < min_response:
        raise SegmentationError(
            f"no pupil boundary response above {min_response} (best {resp:.4f})"
        )

    # subpixel center refinement
    centers = _center_grid(cx - 1.0, cx + 1.0, cy - 1.0, cy + 1.0, 0.5)
    radii = np.arange(max(2.0, pr - 1.5), pr + 1.75, 0.25)
    cx, cy, pr, _ = _best_circle(px, centers, radii, n_angles=64)

    # iris pass: center near the pupil center, radius a multiple of pupil_r
    ir_lo = iris_r_factor[0] * pr
    border = min(cx, cy, w - 1 - cx, h - 1 - cy)
    ir_hi = min(iris_r_factor[1] * pr, border - 1.0)
    if ir_hi <= ir_lo:
        ir_hi = min(iris_r_factor[1] * pr, border)
    if ir_hi <= ir_lo:
        raise SegmentationError("no room for an iris circle around the found pupil")
    # lateral arcs only: upper/lower boundary sectors are eyelid territory
    arcs = _lateral_arcs(64)
    centers = _center_grid(cx - 2.0, cx + 2.0, cy - 2.0, cy + 2.0, 1.0)
    radii = np.arange(ir_lo, ir_hi + 0.5, 1.0)
    ix, iy, ir, iresp = _best_circle(px, centers, radii, n_angles=64, theta=arcs)
    radii = np.arange(max(ir_lo, ir - 2.0), min(ir_hi, ir + 2.0) + 0.25, 0.5)
    centers = _center_grid(ix - 1.0, ix + 1.0, iy - 1.0, iy + 1.0, 0.5)
    ix, iy, ir, iresp = _best_circle(px, centers, radii, n_angles=64, theta=arcs)
    if iresp < min_response:
        raise SegmentationError(
            f"no iris boundary response above {min_response} (best {iresp:.4f})"
        )

    # clip the pupil inside the iris circle if refinement nudged it out
    d = math.hypot(cx - ix, cy - iy)
    if d + pr >= ir:
        if d + 1.0 >= ir:
            raise SegmentationError(
                "pupil and iris circles are implausibly far apart"
            )
        pr = ir - d - 1e-3
    return Segmentation((cx, cy), pr, (ix, iy), ir)


# -- metric 1: pupil boundary circularity ----------------------------------


def pupil_boundary(img: GrayImage, seg: Segmentation, n_points: int = 64) -> np.ndarray:
    """Trace the pupil boundary polygon by per-angle radial edge search.

    For each of ``n_points`` angles, the boundary radius is the maximizer of
    the radial intensity derivative near the fitted pupil radius. Returns an
    (n_points, 2) array of (x, y) vertices.
    """
    px = img.pixels
    cx, cy = seg.pupil_center
    r0 = seg.pupil_radius
    radii = np.arange(max(1.0, 0.6 * r0), 1.4 * r0 + 0.25, 0.25)
    theta = np.linspace(0.0, 2 * np.pi, n_points, endpoint=False)
    x = cx + radii[None, :] * np.cos(theta)[:, None]
    y = cy + radii[None, :] * np.sin(theta)[:, None]
    prof = _bilinear(px, x, y)  # (n_points, R)
    deriv = gaussian_filter1d(np.gradient(prof, radii, axis=1), 1.0, axis=1)
    # anchor the search at the fitted radius so iris texture a few px out
    # cannot outscore the true edge; sigma 15% of r0 keeps real raggedness
    prior = np.exp(-0.5 * ((radii - r0) / (0.15 * r0)) ** 2)
    best = np.argmax(deriv * prior[None, :], axis=1)
    rb = radii[best]
    return np.stack([cx + rb * np.cos(theta), cy + rb * np.sin(theta)], axis=1)


def circularity(boundary: np.ndarray) -> float:
    """2 * sqrt(pi * area) / perimeter of a closed polygon, clamped to [0, 1]."""
    pts = np.asarray(boundary, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 3:
        raise ValueError(f"boundary must be a closed polygon, got shape {pts.shape}")
    nxt = np.roll(pts, -1, axis=0)
    area = 0.5 * abs(np.sum(pts[:, 0] * nxt[:, 1] - nxt[:, 0] * pts[:, 1]))
    perim = np.sum(np.hypot(*(nxt - pts).T))
    if area <= 0.0 or perim <= 0.0:
        raise ValueError("degenerate boundary: zero area or perimeter")
    return float(min(1.0, 2.0 * math.sqrt(math.pi * area) / perim))


# -- metric 2: pupil contrast ----------------------------------------------


def pupil_contrast(img: GrayImage, seg: Segmentation, window: int = 5) -> float:
    """Mean inner/outer intensity step at the left and right boundary ends.

    At 0 and 180 degrees, averages a ``window``-pixel radial strip just
    outside the pupil boundary minus the strip just inside, clamped [0, 1].
    """
    px = img.pixels
    cx, cy = seg.pupil_center
    r = seg.pupil_radius
    offs = np.arange(1, window + 1, dtype=np.float64)
    diffs = []
    for direction in (1.0, -1.0):  # right end (0 deg), left end (180 deg)
        xs_out = cx + direction * (r + offs)
        xs_in = cx + direction * (r - offs)
        all_x = np.concatenate([xs_out, xs_in])
        if all_x.min() < 0 or all_x.max() > img.width - 1 or not (0 <= cy <= img.height - 1):
            raise ValueError(
                f"contrast windows fall outside the image at x={all_x.min():.1f}..{all_x.max():.1f}"
            )
        ys = np.full_like(xs_out, cy)
        outer = _bilinear(px, xs_out, ys).mean()
        inner = _bilinear(px, xs_in, ys).mean()
        diffs.append(outer - inner)
    return float(np.clip(np.mean(diffs), 0.0, 1.0))


# -- metrics 3 and 4: geometry ---------------------------------------------


def pupil_iris_ratio(seg: Segmentation) -> float:
    return float(seg.pupil_radius / seg.iris_radius)


def concentricity_offset(seg: Segmentation) -> float:
    """Distance between pupil and iris centers, normalized by iris radius."""
    d = math.hypot(
        seg.pupil_center[0] - seg.iris_center[0],
        seg.pupil_center[1] - seg.iris_center[1],
    )
    return float(min(1.0, d / seg.iris_radius))


# -- metric 5: sharpness (high-pass focus score) ---------------------------

# 8x8 zero-sum high-pass kernel: inner 4x4 block = +3, border ring = -1.
_FOCUS_INNER = 3.0
_FOCUS_OUTER = -1.0

# Half-power constant: mean squared kernel response s maps to
# 100 * s^2 / (s^2 + c^2). c is fixed so the reference checkerboard
# (64x64, 4-px blocks at 0.25/0.75) scores 95, i.e. c = s_ref / sqrt(19)
# with s_ref = 34.74792243767313.
FOCUS_HALF_POWER = 7.97172012651614


def _focus_kernel() -> np.ndarray:
    k = np.full((8, 8), _FOCUS_OUTER)
    k[2:6, 2:6] = _FOCUS_INNER
    return k


def sharpness(img: GrayImage, half_power: float = FOCUS_HALF_POWER) -> float:
    """Focus score in [0, 100] from total squared high-pass response."""
    px = img.pixels
    if px.shape[0] < 8 or px.shape[1] < 8:
        raise ValueError(f"sharpness needs an image >= 8x8, got {px.shape}")
    # separable decomposition: response = 4 * sum(inner 4x4) - sum(8x8).
    # the kernel is zero-sum, so removing the image mean changes nothing
    # mathematically but keeps constant images at exactly zero response
    c = np.cumsum(np.cumsum(px - px.mean(), axis=0), axis=1)
    c = np.pad(c, ((1, 0), (1, 0)))

    def boxsum(size, off):
        h, w = px.shape
        n = np.arange(0, h - 8 + 1)
        m = np.arange(0, w - 8 + 1)
        i0 = n + off
        j0 = m + off
        return (
            c[np.ix_(i0 + size, j0 + size)]
            - c[np.ix_(i0, j0 + size)]
            - c[np.ix_(i0 + size, j0)]
            + c[np.ix_(i0, j0)]
        )

    resp = 4.0 * boxsum(4, 2) - boxsum(8, 0)
    s = float(np.mean(resp**2))
    return 100.0 * s * s / (s * s + half_power * half_power)


# -- metric 6: overall composite -------------------------------------------


def _ratio_tent(r: float, peak: float = 0.45, lo: float = 0.2, hi: float = 0.8) -> float:
    if r <= lo or r >= hi:
        return 0.0
    if r <= peak:
        return (r - lo) / (peak - lo)
    return (hi - r) / (hi - peak)


def overall_quality(
    circ: float,
    contrast: float,
    ratio: float,
    concentricity: float,
    sharp: float,
) -> float:
    """Geometric mean of the five component scores mapped to [0, 1].

    The pupil-to-iris ratio contributes through a tent peaking at 0.45 and
    vanishing at 0.2 and 0.8; any zero component annihilates the product.
    """
    terms = np.array(
        [
            circ,
            contrast,
            1.0 - concentricity,
            sharp / 100.0,
            _ratio_tent(ratio),
        ]
    )
    terms = np.clip(terms, 0.0, 1.0)
    if np.any(terms == 0.0):
        return 0.0
    return float(np.exp(np.mean(np.log(terms))))


def quality_report(img: GrayImage, seg: Segmentation | None = None) -> QualityReport:
    """Run segmentation (unless given) and all six metrics on one image.

    A failed segmentation yields the documented all-zero report with
    overall = 0 rather than raising.
    """
    if seg is None:
        try:
            seg = segment(img)
        except SegmentationError:
            return QualityReport(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, segmented=False)
    circ = circularity(pupil_boundary(img, seg))
    try:
        contrast = pupil_contrast(img, seg)
    except ValueError:
        contrast = 0.0
    ratio = pupil_iris_ratio(seg)
    conc = concentricity_offset(seg)
    sharp = sharpness(img)
    return QualityReport(
        circ,
        contrast,
        ratio,
        conc,
        sharp,
        overall_quality(circ, contrast, ratio, conc, sharp),
    )


# -- histograms and chi-squared distance -----------------------------------


def histogram(scores, bins: int, value_range: tuple[float, float]) -> np.ndarray:
    """Normalized (sum 1) histogram of scores over a fixed range."""
    h, _ = np.histogram(np.asarray(scores, dtype=np.float64), bins=bins, range=value_range)
    h = h.astype(np.float64)
    total = h.sum()
    return h / total if total > 0 else h


def chi2_distance(h1: np.ndarray, h2: np.ndarray) -> float:
    """Symmetric chi-squared: 0.5 * sum((a-b)^2 / (a+b)), empty bins skipped."""
    a = np.asarray(h1, dtype=np.float64)
    b = np.asarray(h2, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"histogram bin mismatch: {a.shape} vs {b.shape}")
    denom = a + b
    mask = denom > 0
    return float(0.5 * np.sum((a[mask] - b[mask]) ** 2 / denom[mask]))
