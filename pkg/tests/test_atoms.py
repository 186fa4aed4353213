"""Atom metadata, clustering, and refinement tests.

Oracles here are deliberately naive re-implementations: scanline zero
enumeration by explicit walking, extrema by triple loops, ranking by
sorted() over tuples. They were written and frozen before being run
against the package.
"""

import math

import numpy as np
import pytest

from remd_sparse.atoms import (Atom, RawDictionary, atom_amplitude,
                               atom_frequency, cluster_atoms, partition_imfs,
                               pool_raw, refine)
from remd_sparse.emd import Decomposition
from remd_sparse.errors import ArgumentError


# ------------------------------------------------------------- oracles

def oracle_zeros(line):
    """Naive zero list: exact-zero runs once at their centre, crossings
    where the product of neighbouring nonzero samples is negative."""
    out = []
    idx = [i for i, v in enumerate(line) if v == 0.0]
    run = []
    for i in idx:
        if run and i != run[-1] + 1:
            out.append(sum(run) / len(run))
            run = []
        run.append(i)
    if run:
        out.append(sum(run) / len(run))
    for i in range(len(line) - 1):
        a, b = line[i], line[i + 1]
        if a != 0.0 and b != 0.0 and a * b < 0:
            out.append(i + abs(a) / (abs(a) + abs(b)))
    return sorted(out)


def oracle_frequency(patch):
    gaps = []
    for line in list(patch) + list(patch.T):
        z = oracle_zeros(list(line))
        gaps.extend(z[i + 1] - z[i] for i in range(len(z) - 1))
    if not gaps:
        return None
    return float(np.median(gaps))


def oracle_amplitude(patch):
    vals = []
    R, C = patch.shape
    for r in range(1, R - 1):
        for c in range(1, C - 1):
            nb = [patch[r + dr, c + dc]
                  for dr in (-1, 0, 1) for dc in (-1, 0, 1)
                  if not (dr == 0 and dc == 0)]
            if all(patch[r, c] > v for v in nb) or all(patch[r, c] < v for v in nb):
                vals.append(abs(patch[r, c]))
    return float(np.mean(vals)) if vals else 0.0


def smooth_amfm(seed, size=12):
    rng = np.random.default_rng(seed)
    j, k = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    f1, f2 = rng.uniform(0.1, 0.4, size=2)
    amp = 1.0 + 0.5 * np.sin(2 * np.pi * j / size)
    return amp * np.cos(2 * np.pi * (f1 * j + f2 * k) + rng.uniform(0, 2 * np.pi))


def make_atom(c_M, A_bar, vector=None, scale=1):
    if vector is None:
        vector = np.arange(4, dtype=float) + A_bar
    return Atom(vector=np.asarray(vector, float), scale_index=scale,
                c_M=c_M, A_bar=A_bar)


def make_raw(atoms):
    matrix = np.stack([a.vector for a in atoms], axis=1)
    return RawDictionary(matrix=matrix, atoms=list(atoms))


# ----------------------------------------------------------- frequency

def test_frequency_single_interval_row():
    patch = np.array([[1.0, 1.0, -1.0, -1.0, 1.0, 1.0]])
    assert atom_frequency(patch) == pytest.approx(2.0, abs=1e-12)


def test_frequency_cosine_rows_constant_columns():
    k = np.arange(8)
    patch = np.tile(np.cos(2 * np.pi * k / 8), (8, 1))
    assert atom_frequency(patch) == pytest.approx(4.0, abs=1e-9)


def test_frequency_exact_zero_run_counts_once():
    patch = np.array([[2.0, 0.0, 0.0, -3.0, -1.0, 4.0]])
    # zeros: run centre 1.5 and crossing 4 + 1/5
    assert atom_frequency(patch) == pytest.approx(4.2 - 1.5, abs=1e-12)


def test_frequency_matches_oracle_on_amfm_patches():
    for seed in range(12):
        patch = smooth_amfm(seed)
        got = atom_frequency(patch)
        want = oracle_frequency(patch)
        assert got == pytest.approx(want, abs=1e-12)


def test_frequency_none_without_two_zeros():
    assert atom_frequency(np.full((4, 4), 2.0)) is None
    one_zero = np.ones((3, 3))
    one_zero[1, 1] = 0.0
    assert atom_frequency(one_zero) is None


def test_frequency_negation_invariant():
    for seed in range(4):
        patch = smooth_amfm(seed)
        assert atom_frequency(patch) == atom_frequency(-patch)


# ----------------------------------------------------------- amplitude

def test_amplitude_separable_cosine():
    a = 7.5
    k = np.arange(8)
    c = np.cos(2 * np.pi * k / 8)
    patch = a * np.outer(c, c)
    assert atom_amplitude(patch) == pytest.approx(a, abs=1e-12)


def test_amplitude_single_bump():
    j, k = np.meshgrid(np.arange(9) - 4, np.arange(9) - 4, indexing="ij")
    patch = 5.0 * np.exp(-(j ** 2 + k ** 2) / 6.0)
    assert atom_amplitude(patch) == pytest.approx(5.0, abs=1e-12)


def test_amplitude_matches_oracle_random():
    rng = np.random.default_rng(7)
    for _ in range(10):
        patch = rng.normal(size=(10, 10))
        assert atom_amplitude(patch) == pytest.approx(
            oracle_amplitude(patch), abs=1e-12)


def test_amplitude_no_extrema_is_zero():
    ramp = np.outer(np.arange(6.0), np.ones(6))
    assert atom_amplitude(ramp) == 0.0


def test_amplitude_scales_linearly_and_ignores_sign():
    patch = smooth_amfm(3)
    base = atom_amplitude(patch)
    assert atom_amplitude(4.0 * patch) == pytest.approx(4.0 * base, rel=1e-12)
    assert atom_amplitude(-patch) == pytest.approx(base, rel=1e-12)


# ---------------------------------------------------------- partition

def _dec(imfs, residue=None):
    imfs = [np.asarray(m, float) for m in imfs]
    if residue is None:
        residue = np.zeros_like(imfs[0])
    return Decomposition(imfs=imfs, residue=residue,
                         sift_iterations=[1] * len(imfs), mode_mix_flags=[])


def test_partition_tiling_count():
    imf = smooth_amfm(0, size=16)
    raw = partition_imfs(_dec([imf]), patch_size=8)
    assert len(raw) == 4
    assert all(a.scale_index == 1 for a in raw.atoms)
    assert raw.matrix.shape == (64, 4)


def test_partition_layer_order():
    imfs = [smooth_amfm(s, size=16) for s in range(3)]
    raw = partition_imfs(_dec(imfs), patch_size=8)
    assert [a.scale_index for a in raw.atoms] == [1] * 4 + [2] * 4 + [3] * 4


def test_partition_columns_match_tiles():
    imf = smooth_amfm(1, size=16)
    raw = partition_imfs(_dec([imf]), patch_size=8)
    want = imf[8:16, 0:8].ravel()
    np.testing.assert_array_equal(raw.matrix[:, 2], want)
    assert raw.atoms[2].source[1] == (8, 0)


def test_partition_drops_dead_tiles():
    imf = smooth_amfm(2, size=16)
    imf[0:8, 0:8] = 0.0
    raw = partition_imfs(_dec([imf]), patch_size=8)
    assert len(raw) == 3


def test_partition_empty_decomposition():
    dec = Decomposition(imfs=[], residue=np.zeros((8, 8)),
                        sift_iterations=[], mode_mix_flags=[])
    raw = partition_imfs(dec, patch_size=8)
    assert len(raw) == 0


def test_pool_concatenates():
    r1 = partition_imfs(_dec([smooth_amfm(0, 16)]), 8, image_id="a")
    r2 = partition_imfs(_dec([smooth_amfm(1, 16)]), 8, image_id="b")
    pooled = pool_raw([r1, r2])
    assert len(pooled) == len(r1) + len(r2)
    assert pooled.atoms[0].source[0] == "a"
    assert pooled.atoms[4].source[0] == "b"


# ---------------------------------------------------------- clustering

def test_cluster_band_arithmetic():
    raw = make_raw([make_atom(2.0, 1.0), make_atom(5.0, 1.0),
                    make_atom(9.0, 1.0)])
    labels = cluster_atoms(raw)
    # c_min 2, c_max 9: bands end at max(1, floor(9/2) - 1) = 3
    assert labels[0] == 1   # lower boundary c == c_min
    assert labels[1] == 2   # 2*2 <= 5 <= 3*2
    assert labels[2] == 3   # floor(9/2) = 4, clipped into the last band


def test_cluster_two_tone_pool():
    raw = make_raw([make_atom(c, 1.0) for c in (4.0, 4.2, 3.9, 40.0, 41.0)])
    labels = cluster_atoms(raw)
    assert len(set(labels[:3])) == 1
    assert len(set(labels[3:])) == 1
    assert labels[0] != labels[3]
    assert set(labels).issubset(set(range(1, 11)))


def test_cluster_excludes_frequency_less():
    raw = make_raw([make_atom(3.0, 1.0), make_atom(None, 1.0)])
    labels = cluster_atoms(raw)
    assert labels[1] == -1 and labels[0] == 1


def test_cluster_all_frequency_less_raises():
    raw = make_raw([make_atom(None, 1.0), make_atom(None, 2.0)])
    with pytest.raises(ArgumentError):
        cluster_atoms(raw)


def test_cluster_is_partition_and_monotone():
    rng = np.random.default_rng(11)
    raw = make_raw([make_atom(float(c), 1.0)
                    for c in rng.uniform(1.5, 30.0, size=120)])
    labels = cluster_atoms(raw)
    assert (labels >= 1).all()
    freqs = np.array([a.c_M for a in raw.atoms])
    for k in sorted(set(labels)):
        for k2 in sorted(set(labels)):
            if k2 >= k + 2:
                assert freqs[labels == k].max() < freqs[labels == k2].min()


# ---------------------------------------------------------- refinement

def orthonormal_vectors(count, dim, seed=0):
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.normal(size=(dim, count)))
    return [q[:, i] * (i + 2.0) for i in range(count)]


def test_refine_top_one_per_band():
    vecs = orthonormal_vectors(6, 8)
    raw = make_raw([
        make_atom(2.0, 3.0, vecs[0]), make_atom(2.1, 9.0, vecs[1]),
        make_atom(5.0, 4.0, vecs[2]), make_atom(5.1, 2.0, vecs[3]),
        make_atom(8.0, 7.0, vecs[4]), make_atom(8.1, 1.0, vecs[5]),
    ])
    ref = refine(raw)
    assert ref.K == 3
    # per-band winners by amplitude, bands in ascending order
    np.testing.assert_allclose(ref.amplitudes, [9.0, 4.0, 7.0])
    for col in ref.matrix.T:
        assert np.linalg.norm(col) == pytest.approx(1.0, abs=1e-12)


def test_refine_single_band_target():
    vecs = orthonormal_vectors(10, 12, seed=1)
    raw = make_raw([make_atom(3.0 + 0.01 * i, float(i + 1), vecs[i])
                    for i in range(10)])
    ref = refine(raw, target_K=4)
    assert ref.K == 4
    np.testing.assert_allclose(sorted(ref.amplitudes, reverse=True),
                               [10.0, 9.0, 8.0, 7.0])


def test_refine_trims_by_global_rank():
    vecs = orthonormal_vectors(6, 8, seed=2)
    raw = make_raw([
        make_atom(2.0, 10.0, vecs[0]), make_atom(2.1, 9.0, vecs[1]),
        make_atom(2.2, 8.0, vecs[2]),
        make_atom(9.0, 2.0, vecs[3]), make_atom(9.1, 1.0, vecs[4]),
        make_atom(9.2, 0.5, vecs[5]),
    ])
    ref = refine(raw, target_K=3)
    # ceil(3/2) = 2 per band, then global trim keeps 10, 9 and band-2's 2
    assert ref.K == 3
    assert sorted(ref.amplitudes, reverse=True) == [10.0, 9.0, 2.0]


def test_refine_deduplicates_scaled_copies():
    v = np.array([3.0, 4.0, 0.0, 0.0])
    raw = make_raw([make_atom(2.0, 5.0, v), make_atom(2.0, 4.0, 2.0 * v),
                    make_atom(2.0, 3.0, np.array([0.0, 0.0, 1.0, 1.0]))])
    ref = refine(raw, target_K=3)
    assert ref.K == 2
    assert ref.warning is not None


def test_refine_warning_when_short():
    raw = make_raw([make_atom(2.0, 1.0, np.arange(4.0) + 1)])
    ref = refine(raw, target_K=5)
    assert ref.K == 1 and ref.warning is not None


def test_refine_ordering_band_then_amplitude():
    vecs = orthonormal_vectors(6, 8, seed=3)
    raw = make_raw([
        make_atom(6.0, 5.0, vecs[0]), make_atom(6.1, 6.0, vecs[1]),
        make_atom(2.0, 1.0, vecs[2]), make_atom(2.1, 2.0, vecs[3]),
        make_atom(11.9, 9.0, vecs[4]), make_atom(11.8, 8.0, vecs[5]),
    ])
    ref = refine(raw, target_K=6)
    assert list(ref.labels) == sorted(ref.labels)
    for band in set(ref.labels):
        amps = ref.amplitudes[ref.labels == band]
        assert list(amps) == sorted(amps, reverse=True)


def test_refine_excludes_zero_amplitude():
    raw = make_raw([make_atom(2.0, 0.0, np.arange(4.0) + 1),
                    make_atom(2.0, 1.0, np.arange(4.0) + 9)])
    ref = refine(raw)
    assert ref.K == 1
    np.testing.assert_allclose(ref.amplitudes, [1.0])


def test_refined_subset_never_beats_full_pool():
    # least-squares fit over a column subset cannot have smaller error
    rng = np.random.default_rng(5)
    imf = smooth_amfm(4, size=32)
    raw = partition_imfs(_dec([imf]), patch_size=4)
    ref = refine(raw, target_K=6)
    Y = rng.normal(size=(16, 30))

    def ls_err(D):
        X, *_ = np.linalg.lstsq(D, Y, rcond=None)
        return np.linalg.norm(Y - D @ X) ** 2 / np.linalg.norm(Y) ** 2

    assert ls_err(ref.matrix) >= ls_err(raw.matrix) - 1e-12
