"""Core 2-D grid utilities: patch extraction/assembly and quality metrics.

Images, envelopes, IMFs and masks are all plain 2-D float64 arrays in
row-major (row, col) addressing. External images live on the 0..255
scale; internal fields are unrestricted reals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .errors import ArgumentError, DimensionError

__all__ = [
    "as_grid",
    "PatchSet",
    "extract_patches",
    "assemble_patches",
    "psnr",
    "ssim",
    "nre",
]


def as_grid(values) -> np.ndarray:
    """Validate and return a 2-D float64 grid.

    Rejects empty grids and non-finite values; accepts anything
    np.asarray can turn into a 2-D array.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise DimensionError(f"expected a nonempty 2-D grid, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ArgumentError("grid contains NaN or Inf values")
    return arr


@dataclass
class PatchSet:
    """Vectorized image patches, one column per patch.

    ``patches`` has patch_size**2 rows. ``means`` holds the removed
    per-patch means (None when means were kept in place). ``origins``
    are the top-left (row, col) of each patch in raster order.
    """

    patch_size: int
    stride: int
    patches: np.ndarray
    means: np.ndarray | None
    origins: np.ndarray
    image_shape: tuple[int, int]

    def __len__(self) -> int:
        return self.patches.shape[1]


def extract_patches(image, patch_size: int, stride: int = 1,
                    remove_mean: bool = True) -> PatchSet:
    """Slide a patch_size window over the image in raster order.

    With remove_mean, each stored column is the patch minus its mean and
    the mean is recorded separately.
    """
    img = as_grid(image)
    rows, cols = img.shape
    if patch_size < 1 or patch_size > min(rows, cols):
        raise DimensionError(
            f"patch_size {patch_size} does not fit a {rows}x{cols} image")
    if stride < 1:
        raise ArgumentError(f"stride must be >= 1, got {stride}")

    windows = np.lib.stride_tricks.sliding_window_view(img, (patch_size, patch_size))
    windows = windows[::stride, ::stride]
    nr, nc = windows.shape[:2]
    n = patch_size * patch_size
    patches = windows.reshape(nr * nc, n).T.astype(np.float64, copy=True)

    r0 = np.repeat(np.arange(nr) * stride, nc)
    c0 = np.tile(np.arange(nc) * stride, nr)
    origins = np.stack([r0, c0], axis=1)

    means = None
    if remove_mean:
        means = patches.mean(axis=0)
        patches -= means
    return PatchSet(patch_size, stride, patches, means, origins, (rows, cols))


def assemble_patches(pset: PatchSet, rows: int, cols: int,
                     base=None) -> np.ndarray:
    """Average overlapping patches back into an image.

    Removed means are added back first. Pixels covered by no patch take
    the value of ``base`` there (or 0 without a base); with stride 1 every
    pixel is covered.
    """
    if len(pset) == 0:
        raise ArgumentError("cannot assemble an empty patch set")
    p = pset.patch_size
    vals = pset.patches
    if pset.means is not None:
        vals = vals + pset.means
    if pset.origins[:, 0].max() + p > rows or pset.origins[:, 1].max() + p > cols:
        raise DimensionError("patch origins fall outside the target image")

    sums = np.zeros((rows, cols))
    counts = np.zeros((rows, cols))
    # Raster-order origins form a regular grid, so accumulation can run as
    # one vectorized add per in-patch offset; order is deterministic.
    nr = len(np.unique(pset.origins[:, 0]))
    nc = len(np.unique(pset.origins[:, 1]))
    if nr * nc == len(pset):
        grid_vals = vals.reshape(p, p, nr, nc)
        s = pset.stride
        for dr in range(p):
            for dc in range(p):
                sums[dr:dr + nr * s:s, dc:dc + nc * s:s] += grid_vals[dr, dc]
                counts[dr:dr + nr * s:s, dc:dc + nc * s:s] += 1.0
    else:
        for idx in range(len(pset)):
            r0, c0 = pset.origins[idx]
            sums[r0:r0 + p, c0:c0 + p] += vals[:, idx].reshape(p, p)
            counts[r0:r0 + p, c0:c0 + p] += 1.0

    covered = counts > 0
    out = np.zeros((rows, cols)) if base is None else as_grid(base).copy()
    out[covered] = sums[covered] / counts[covered]
    return out


def psnr(reference, test, peak: float = 255.0) -> float:
    """Peak signal-to-noise ratio in dB; +inf when the images coincide."""
    ref = as_grid(reference)
    tst = as_grid(test)
    if ref.shape != tst.shape:
        raise DimensionError(f"shape mismatch {ref.shape} vs {tst.shape}")
    mse = np.mean((ref - tst) ** 2)
    if mse == 0.0:
        return math.inf
    return float(10.0 * np.log10(peak * peak / mse))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(reference, test) -> float:
    """Mean local structural similarity on the 0..255 scale.

    Gaussian-weighted 11x11 windows (sigma 1.5), constants
    C1 = (0.01*255)^2 and C2 = (0.03*255)^2, averaged uniformly over
    windows that fit fully inside the image.
    """
    ref = as_grid(reference)
    tst = as_grid(test)
    if ref.shape != tst.shape:
        raise DimensionError(f"shape mismatch {ref.shape} vs {tst.shape}")
    if min(ref.shape) < 11:
        raise DimensionError("ssim needs images of at least 11x11")

    w = _gaussian_window()
    c1 = (0.01 * 255.0) ** 2
    c2 = (0.03 * 255.0) ** 2

    mu_x = convolve2d(ref, w, mode="valid")
    mu_y = convolve2d(tst, w, mode="valid")
    xx = convolve2d(ref * ref, w, mode="valid")
    yy = convolve2d(tst * tst, w, mode="valid")
    xy = convolve2d(ref * tst, w, mode="valid")

    var_x = xx - mu_x * mu_x
    var_y = yy - mu_y * mu_y
    cov = xy - mu_x * mu_y

    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def nre(Y, D, X) -> float:
    """Normalized reconstruction error ||Y - D X||_F^2 / ||Y||_F^2."""
    Y = np.asarray(Y, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if D.shape[1] != X.shape[0] or D.shape[0] != Y.shape[0] or X.shape[1] != Y.shape[1]:
        raise DimensionError(
            f"nonconformable nre shapes Y{Y.shape} D{D.shape} X{X.shape}")
    ynorm = np.linalg.norm(Y) ** 2
    if ynorm == 0.0:
        raise ArgumentError("nre undefined for zero Y")
    return float(np.linalg.norm(Y - D @ X) ** 2 / ynorm)
