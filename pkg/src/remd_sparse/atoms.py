"""Oscillatory atom dictionaries built from image decompositions.

Each decomposition layer is tiled into square patches ("atoms"), every
atom is tagged with a frequency estimate (median spacing of its zero
points) and an amplitude estimate (mean absolute extremum height), and
the pool is reduced to a compact dictionary by grouping atoms into
frequency bands and keeping the strongest representatives of each band.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, DimensionError
from .grid import as_grid, extract_patches

_ENERGY_FLOOR = 1e-8  # relative to the mean tile energy of one layer


@dataclass
class Atom:
    """One vectorized square tile of a decomposition layer."""

    vector: np.ndarray
    scale_index: int
    c_M: float | None       # median zero-spacing, None when unmeasurable
    A_bar: float            # mean |extremum|, 0 when the tile has none
    source: tuple = ("", (0, 0))

    @property
    def side(self) -> int:
        return int(round(math.sqrt(self.vector.size)))

    def patch(self) -> np.ndarray:
        s = self.side
        return self.vector.reshape(s, s)


@dataclass
class RawDictionary:
    """Stacked atom columns, grouped scale by scale."""

    matrix: np.ndarray            # n x M, one column per atom
    atoms: list = field(default_factory=list)

    def __len__(self) -> int:
        return self.matrix.shape[1]


@dataclass
class RefinedDictionary:
    """Compact dictionary kept after frequency clustering.

    Columns are unit-norm and pairwise distinct, ordered by frequency
    band (ascending) and amplitude within a band (descending).
    """

    matrix: np.ndarray            # n x K
    labels: np.ndarray            # frequency-band index per kept column
    c_min: float
    c_max: float
    frequencies: np.ndarray       # c_M per kept column
    amplitudes: np.ndarray        # A_bar per kept column
    scales: np.ndarray            # layer index per kept column
    warning: str | None = None

    @property
    def K(self) -> int:
        return self.matrix.shape[1]


# ------------------------------------------------------------ metadata

def _scan_zeros(line: np.ndarray) -> np.ndarray:
    """Zero points of a 1-D signal: exact-zero runs collapse to their
    centre, sign changes land at the linear interpolation point."""
    n = line.size
    zeros: list[float] = []
    i = 0
    while i < n:
        if line[i] == 0.0:
            j = i
            while j + 1 < n and line[j + 1] == 0.0:
                j += 1
            zeros.append(0.5 * (i + j))
            i = j + 1
            continue
        if i + 1 < n and line[i + 1] != 0.0 and (line[i] > 0) != (line[i + 1] > 0):
            a, b = abs(line[i]), abs(line[i + 1])
            zeros.append(i + a / (a + b))
        i += 1
    return np.asarray(zeros)


def atom_frequency(patch) -> float | None:
    """Median spacing between consecutive zero points of the patch.

    Zero points are collected along every row and every column; spacings
    are pooled across scanlines. Returns None when no scanline yields
    two zero points.
    """
    p = as_grid(patch)
    gaps: list[np.ndarray] = []
    for line in p:
        z = _scan_zeros(line)
        if z.size >= 2:
            gaps.append(np.diff(z))
    for line in p.T:
        z = _scan_zeros(line)
        if z.size >= 2:
            gaps.append(np.diff(z))
    if not gaps:
        return None
    return float(np.median(np.concatenate(gaps)))


def atom_amplitude(patch) -> float:
    """Mean absolute height of the strict 3x3 interior extrema; 0.0 when
    the patch has none."""
    p = as_grid(patch)
    if p.shape[0] < 3 or p.shape[1] < 3:
        return 0.0
    c = p[1:-1, 1:-1]
    hi = np.ones_like(c, dtype=bool)
    lo = np.ones_like(c, dtype=bool)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            nb = p[1 + dr:p.shape[0] - 1 + dr, 1 + dc:p.shape[1] - 1 + dc]
            hi &= c > nb
            lo &= c < nb
    vals = np.abs(c[hi | lo])
    if vals.size == 0:
        return 0.0
    return float(vals.mean())


# ------------------------------------------------------------ building

def partition_imfs(decomposition, patch_size: int, stride: int | None = None,
                   image_id: str = "") -> RawDictionary:
    """Tile every decomposition layer into atoms.

    stride defaults to patch_size (non-overlapping tiling). Tiles whose
    energy falls below 1e-8 of the layer's mean tile energy are dropped.
    Columns are stacked layer by layer, finest first.
    """
    if stride is None:
        stride = patch_size
    cols: list[np.ndarray] = []
    atoms: list[Atom] = []
    n = patch_size * patch_size
    for level, imf in enumerate(decomposition.imfs, start=1):
        if patch_size > min(imf.shape):
            raise DimensionError(
                f"patch_size {patch_size} exceeds layer shape {imf.shape}")
        pset = extract_patches(imf, patch_size, stride=stride, remove_mean=False)
        energies = np.sum(pset.patches ** 2, axis=0)
        floor = _ENERGY_FLOOR * energies.mean() if len(pset) else 0.0
        keep = (energies >= floor) & (energies > 0)
        for idx in np.flatnonzero(keep):
            vec = pset.patches[:, idx].copy()
            patch = vec.reshape(patch_size, patch_size)
            atoms.append(Atom(
                vector=vec,
                scale_index=level,
                c_M=atom_frequency(patch),
                A_bar=atom_amplitude(patch),
                source=(image_id, tuple(int(v) for v in pset.origins[idx])),
            ))
            cols.append(vec)
    matrix = (np.stack(cols, axis=1) if cols
              else np.empty((n, 0), dtype=np.float64))
    return RawDictionary(matrix=matrix, atoms=atoms)


def pool_raw(raws) -> RawDictionary:
    """Concatenate raw dictionaries from several images."""
    raws = [r for r in raws if len(r)]
    if not raws:
        raise ArgumentError("nothing to pool: all raw dictionaries are empty")
    rows = {r.matrix.shape[0] for r in raws}
    if len(rows) != 1:
        raise DimensionError(f"mixed atom lengths {sorted(rows)} cannot pool")
    matrix = np.concatenate([r.matrix for r in raws], axis=1)
    atoms = [a for r in raws for a in r.atoms]
    return RawDictionary(matrix=matrix, atoms=atoms)


# ----------------------------------------------------------- clustering

def cluster_atoms(raw: RawDictionary) -> np.ndarray:
    """Frequency-band label per atom, -1 for atoms without a frequency.

    Bands have width c_min (the smallest pooled frequency): an atom with
    frequency c lands in band floor(c / c_min), counted from 1. Bands
    whose upper edge would pass c_max collapse into the last full band.
    """
    freqs = np.array([a.c_M if a.c_M is not None else np.nan
                      for a in raw.atoms], dtype=np.float64)
    measurable = ~np.isnan(freqs)
    if not measurable.any():
        raise ArgumentError("no atom has a measurable frequency")
    c_min = float(freqs[measurable].min())
    c_max = float(freqs[measurable].max())
    last = max(1, int(math.floor(c_max / c_min)) - 1)
    labels = np.full(len(raw.atoms), -1, dtype=np.int64)
    k = np.floor(freqs[measurable] / c_min).astype(np.int64)
    labels[measurable] = np.minimum(np.maximum(k, 1), last)
    return labels


def _frequency_range(raw: RawDictionary) -> tuple[float, float]:
    freqs = [a.c_M for a in raw.atoms if a.c_M is not None]
    return float(min(freqs)), float(max(freqs))


def refine(raw: RawDictionary, target_K: int | None = None) -> RefinedDictionary:
    """Reduce the atom pool to band representatives.

    Without target_K each occupied band keeps its single largest
    amplitude atom. With target_K, each band keeps its top
    ceil(target_K / bands) atoms and the pool is trimmed back to exactly
    target_K by global amplitude rank. Kept columns are unit-normalized,
    deduplicated, and ordered by (band, amplitude desc).
    """
    if target_K is not None and target_K < 1:
        raise ArgumentError(f"target_K must be positive, got {target_K}")
    labels = cluster_atoms(raw)
    c_min, c_max = _frequency_range(raw)

    # amplitude-less atoms cannot be representatives
    eligible = [i for i in range(len(raw.atoms))
                if labels[i] >= 1 and raw.atoms[i].A_bar > 0]
    if not eligible:
        raise ArgumentError("no atom is eligible for band representation")

    by_band: dict[int, list[int]] = {}
    for i in eligible:
        by_band.setdefault(int(labels[i]), []).append(i)
    for idxs in by_band.values():
        idxs.sort(key=lambda i: (-raw.atoms[i].A_bar, i))

    if target_K is None:
        chosen = [idxs[0] for _, idxs in sorted(by_band.items())]
    else:
        per_band = math.ceil(target_K / len(by_band))
        pool = [i for _, idxs in sorted(by_band.items())
                for i in idxs[:per_band]]
        pool.sort(key=lambda i: (-raw.atoms[i].A_bar, i))
        chosen = pool[:target_K]

    chosen.sort(key=lambda i: (int(labels[i]), -raw.atoms[i].A_bar, i))

    kept: list[int] = []
    seen: set[bytes] = set()
    columns: list[np.ndarray] = []
    for i in chosen:
        v = raw.atoms[i].vector
        u = v / np.linalg.norm(v)
        key = u.tobytes()
        if key in seen:
            continue
        seen.add(key)
        kept.append(i)
        columns.append(u)

    warning = None
    if target_K is not None and len(kept) < target_K:
        warning = (f"only {len(kept)} distinct atoms available for "
                   f"target_K={target_K}")

    return RefinedDictionary(
        matrix=np.stack(columns, axis=1),
        labels=labels[kept],
        c_min=c_min,
        c_max=c_max,
        frequencies=np.array([raw.atoms[i].c_M for i in kept]),
        amplitudes=np.array([raw.atoms[i].A_bar for i in kept]),
        scales=np.array([raw.atoms[i].scale_index for i in kept]),
        warning=warning,
    )
