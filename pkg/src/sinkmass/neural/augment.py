"""Image augmentations: dihedral flips/rotations, continuous rotation, and
light photometric jitter.

Warping transforms (shear, affine, cropping) are deliberately absent: mass
scales with the physical size of the specimen, so augmentations must never
change apparent scale. Dihedral elements preserve the pixel multiset (and
hence the silhouette area) exactly; continuous rotation resamples bilinearly
and fills the exposed corners with the median border value so the fill
approximates background.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import NonSquareRaster
from ..ingest import Raster


def dihedral(pixels: np.ndarray, element: int) -> np.ndarray:
    """Element 0..7 of the square's symmetry group: rotations by 0/90/180/270
    degrees, optionally composed with a horizontal flip."""
    if pixels.shape[0] != pixels.shape[1]:
        raise NonSquareRaster(f"dihedral action needs a square raster, got {pixels.shape}")
    if not 0 <= element < 8:
        raise ValueError(f"dihedral element must be 0..7, got {element}")
    out = np.rot90(pixels, k=element % 4)
    if element >= 4:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


def rotate_bilinear(pixels: np.ndarray, angle_deg: float, fill: float | None = None) -> np.ndarray:
    """Rotate about the image center with bilinear resampling.

    Samples that fall outside the source are set to ``fill`` (default: the
    median of the border pixels). A zero angle reproduces the input exactly.
    """
    if pixels.shape[0] != pixels.shape[1]:
        raise NonSquareRaster(f"rotation needs a square raster, got {pixels.shape}")
    src = pixels.astype(float)
    if fill is None:
        border = np.concatenate([src[0, :], src[-1, :], src[1:-1, 0], src[1:-1, -1]])
        fill = float(np.median(border))
    s = src.shape[0]
    c = (s - 1) / 2.0
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    yy, xx = np.mgrid[0:s, 0:s].astype(float)
    dy, dx = yy - c, xx - c
    # inverse mapping: output pixel pulls from the source location
    sx = cos_t * dx + sin_t * dy + c
    sy = -sin_t * dx + cos_t * dy + c
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = sx - x0
    fy = sy - y0
    result = np.full((s, s), fill, dtype=float)
    eps = 1e-9  # keep grid-aligned angles (0, 90, ...) from leaking into fill
    valid = (sx >= -eps) & (sx <= s - 1 + eps) & (sy >= -eps) & (sy <= s - 1 + eps)

    def sample(yi, xi):
        yi = np.clip(yi, 0, s - 1).astype(int)
        xi = np.clip(xi, 0, s - 1).astype(int)
        return src[yi, xi]

    v00 = sample(y0, x0)
    v01 = sample(y0, x0 + 1)
    v10 = sample(y0 + 1, x0)
    v11 = sample(y0 + 1, x0 + 1)
    interp = (
        v00 * (1 - fy) * (1 - fx)
        + v01 * (1 - fy) * fx
        + v10 * fy * (1 - fx)
        + v11 * fy * fx
    )
    result[valid] = interp[valid]
    return result


def photometric_jitter(pixels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Brightness/contrast jitter only; output stays within [0, 255]."""
    contrast = rng.uniform(0.8, 1.2)
    brightness = rng.uniform(-25.5, 25.5)
    out = (pixels.astype(float) - 127.5) * contrast + 127.5 + brightness
    return np.clip(out, 0.0, 255.0)


def augment_array(pixels: np.ndarray, policy: str, rng: np.random.Generator) -> np.ndarray:
    """Apply one random draw of ``policy`` to a square 2D array.

    Policies: ``none``, ``flips90`` (uniform dihedral element),
    ``continuous_rotation`` (uniform angle, bilinear), ``photometric_lite``.
    """
    if pixels.ndim != 2 or pixels.shape[0] != pixels.shape[1]:
        raise NonSquareRaster(f"augmentation needs a square raster, got {pixels.shape}")
    if policy == "none":
        return pixels
    if policy == "flips90":
        return dihedral(pixels, int(rng.integers(0, 8)))
    if policy == "continuous_rotation":
        return rotate_bilinear(pixels, float(rng.uniform(0.0, 360.0)))
    if policy == "photometric_lite":
        return photometric_jitter(pixels, rng)
    raise ValueError(f"unknown augmentation policy {policy!r}")


def augment(raster: Raster, policy: str, rng: np.random.Generator) -> Raster:
    """Policy application on an 8-bit Raster; dihedral stays exact uint8."""
    out = augment_array(raster.pixels, policy, rng)
    if out.dtype != np.uint8:
        out = np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return Raster(raster.height, raster.width, out)
