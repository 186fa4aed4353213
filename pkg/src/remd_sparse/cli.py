"""Command-line front end.

Five subcommands cover the full workflow: decompose an image into IMFs,
build an atom dictionary from decompositions, learn the tolerance
matrix, denoise, and evaluate image pairs. Configuration comes from a
flat ``key = value`` file with dotted section prefixes plus ``--set``
overrides; every run with the same seed writes byte-identical CSVs.
Figures are rendered next to each CSV unless ``--no-figures`` is given.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
import time
from dataclasses import fields as dataclass_fields
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io as iomod
from .atoms import partition_imfs, pool_raw, refine
from .denoise import (DenoiseConfig, _sample_training_patches,
                      add_gaussian_noise, denoise)
from .emd import EmdConfig, decompose
from .errors import ArgumentError, FormatError, NumericalError
from .grid import psnr, ssim
from .learn import LearnConfig, learn

CSV_HEADER = "# remd-sparse csv v1"

_SECTIONS = {"emd": EmdConfig, "learn": LearnConfig, "denoise": DenoiseConfig}
_EXTRA_KEYS = {
    "seed": int,
    "denoise.clean_ref": str,
    "denoise.input_is_clean": bool,
}


# -------------------------------------------------------- configuration

def _known_keys() -> dict:
    known = dict(_EXTRA_KEYS)
    for section, cls in _SECTIONS.items():
        for f in dataclass_fields(cls):
            # field types are recovered from the default values, which
            # every config field has
            known[f"{section}.{f.name}"] = type(f.default)
    return known


def _parse_value(key: str, raw: str, typ):
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ArgumentError(f"bad value for {key}: {raw!r}") from exc


def _read_config_file(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read config {path}: {exc}") from exc
    entries = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ArgumentError(
                f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        entries[key.strip()] = value.strip()
    return entries


def _build_configs(entries: dict):
    """Turn flat entries into the three config objects plus CLI extras."""
    known = _known_keys()
    for key in entries:
        if key not in known:
            raise ArgumentError(f"unknown configuration key: {key}")
    parsed = {k: _parse_value(k, v, known[k]) for k, v in entries.items()}

    seed = parsed.get("seed", 0)
    kwargs = {section: {} for section in _SECTIONS}
    for key, value in parsed.items():
        if key in _EXTRA_KEYS or "." not in key:
            continue
        section, _, name = key.partition(".")
        kwargs[section][name] = value
    if "seed" not in kwargs["denoise"]:
        kwargs["denoise"]["seed"] = seed

    emd_cfg = EmdConfig(**kwargs["emd"])
    learn_cfg = LearnConfig(**kwargs["learn"])
    den_cfg = DenoiseConfig(**kwargs["denoise"])
    extras = {
        "seed": seed,
        "clean_ref": parsed.get("denoise.clean_ref"),
        "input_is_clean": parsed.get("denoise.input_is_clean", False),
    }
    return emd_cfg, learn_cfg, den_cfg, extras


def _configs_from_args(args):
    entries = {}
    if args.config:
        entries.update(_read_config_file(args.config))
    for item in args.set or []:
        if "=" not in item:
            raise ArgumentError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        entries[key.strip()] = value.strip()
    return _build_configs(entries)


# ------------------------------------------------------------ CSV / fig

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)


def _write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(CSV_HEADER + "\n")
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _plt():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _save_fig(fig, path) -> None:
    fig.savefig(path, dpi=110)
    import matplotlib.pyplot as plt
    plt.close(fig)


# ------------------------------------------------------------- commands

def _cmd_decompose(args) -> int:
    emd_cfg, _, _, _ = _configs_from_args(args)
    img = iomod.read_pgm(args.input)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    dec = decompose(img, emd_cfg)
    scales = []
    for i, imf in enumerate(dec.imfs, 1):
        scales.append((f"imf_{i:02d}", iomod.write_imf(outdir / f"imf_{i:02d}.pgm", imf)))
    iomod.write_pgm(outdir / "residue.pgm", dec.residue)
    with open(outdir / "imf_scales.txt", "w") as fh:
        for name, maxabs in scales:
            fh.write(f"{name} maxabs={_fmt(maxabs)}\n")

    denom = float(np.linalg.norm(img))
    err = (float(np.linalg.norm(dec.reconstruct() - img)) / denom
           if denom > 0 else 0.0)
    rows = []
    for i, imf in enumerate(dec.imfs, 1):
        rows.append((i, dec.sift_iterations[i - 1], float(np.sum(imf * imf)),
                     int(dec.mode_mix_flags[i - 1]), err))
    rows.append(("residue", 0, float(np.sum(dec.residue ** 2)), 0, err))
    _write_csv(outdir / "decompose.csv",
               ("index", "sift_iterations", "energy", "mode_mixed",
                "reconstruction_error"), rows)

    if not args.no_figures:
        plt = _plt()
        panels = [("input", img)] + [(f"IMF {i}", h) for i, h in
                                     enumerate(dec.imfs, 1)]
        panels.append(("residue", dec.residue))
        cols = min(3, len(panels))
        rows_n = -(-len(panels) // cols)
        fig, axes = plt.subplots(rows_n, cols,
                                 figsize=(3.2 * cols, 3.2 * rows_n))
        flat = np.atleast_1d(axes).ravel()
        for ax, (title, field) in zip(flat, panels):
            ax.imshow(field, cmap="gray")
            ax.set_title(title, fontsize=9)
        for ax in flat:
            ax.axis("off")
        fig.tight_layout()
        _save_fig(fig, outdir / "decomposition.png")
    return 0


def _cmd_build_dict(args) -> int:
    emd_cfg, _, den_cfg, _ = _configs_from_args(args)
    if len(args.paths) < 2:
        raise ArgumentError("build-dict needs IMAGE... and an output path")
    *image_paths, out_path = args.paths
    images = [iomod.read_pgm(p) for p in image_paths]

    raws = []
    for path, img in zip(image_paths, images):
        dec = decompose(img, emd_cfg)
        raws.append(partition_imfs(dec, den_cfg.patch_size,
                                   image_id=Path(path).name))
    refined = refine(pool_raw(raws), target_K=den_cfg.dict_K)
    if refined.warning:
        print(f"warning: {refined.warning}", file=sys.stderr)
    iomod.save_dictionary(out_path, refined.matrix)

    outdir = Path(out_path).parent
    rows = [(i, refined.scales[i], refined.frequencies[i],
             refined.amplitudes[i], refined.labels[i])
            for i in range(refined.K)]
    _write_csv(outdir / "atoms.csv",
               ("index", "scale_index", "c_M", "A_bar", "band"), rows)

    if not args.no_figures:
        plt = _plt()
        fig, ax = plt.subplots(figsize=(5.2, 4.0))
        sc = ax.scatter(refined.frequencies, refined.amplitudes,
                        c=refined.labels, cmap="viridis", s=14)
        ax.set_xlabel("average local frequency c_M")
        ax.set_ylabel("average amplitude A_bar")
        fig.colorbar(sc, ax=ax, label="frequency band")
        fig.tight_layout()
        _save_fig(fig, outdir / "atoms.png")
    return 0


def _cmd_learn(args) -> int:
    _, learn_cfg, den_cfg, _ = _configs_from_args(args)
    if len(args.paths) < 2:
        raise ArgumentError("learn needs IMAGE... and an output path")
    *image_paths, out_path = args.paths
    D0, _ = iomod.load_dictionary(args.dict)
    if D0.shape[0] != den_cfg.n:
        raise ArgumentError(
            f"dictionary patch length {D0.shape[0]} does not match "
            f"denoise.patch_size^2 = {den_cfg.n}")
    images = [iomod.read_pgm(p) for p in image_paths]
    Y = _sample_training_patches(images, den_cfg)

    B, _, trace = learn(Y, D0, learn_cfg)
    iomod.save_dictionary(out_path, D0, B)

    outdir = Path(out_path).parent
    rows = []
    for i, obj in enumerate(trace.objectives):
        rejected = trace.rejected_gate[i] + trace.rejected_guard[i]
        rows.append((i, obj, trace.coherence[i], rejected,
                     trace.rejected_gate[i], trace.rejected_guard[i],
                     trace.sparsity[i]))
    _write_csv(outdir / "trace.csv",
               ("iteration", "objective", "coherence", "rejected",
                "rejected_gate", "rejected_guard", "sparsity"), rows)

    gram = np.abs(B.T @ B)
    gram_rows = [(i, j, gram[i, j])
                 for i in range(gram.shape[0])
                 for j in range(i + 1, gram.shape[1])]
    _write_csv(outdir / "gram.csv", ("row", "col", "value"), gram_rows)

    if not args.no_figures:
        plt = _plt()
        fig, axes = plt.subplots(1, 3, figsize=(12.0, 3.4))
        its = range(len(trace.objectives))
        axes[0].plot(its, trace.objectives)
        axes[0].set_xlabel("iteration")
        axes[0].set_ylabel("objective")
        axes[1].plot(its, trace.coherence)
        axes[1].set_xlabel("iteration")
        axes[1].set_ylabel("mutual coherence")
        axes[2].hist([v for _, _, v in gram_rows], bins=40)
        axes[2].set_xlabel("|B'B| off-diagonal")
        axes[2].set_ylabel("count")
        fig.tight_layout()
        _save_fig(fig, outdir / "convergence.png")
    return 0


def _cmd_denoise(args) -> int:
    emd_cfg, learn_cfg, den_cfg, extras = _configs_from_args(args)
    img = iomod.read_pgm(args.input)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    clean = None
    if extras["input_is_clean"]:
        clean = img
        noisy = add_gaussian_noise(clean, den_cfg.noise_sigma,
                                   seed=extras["seed"])
        iomod.write_pgm(outdir / "noisy.pgm", noisy)
    else:
        noisy = img
        if extras["clean_ref"]:
            clean = iomod.read_pgm(extras["clean_ref"])

    src = args.dict
    training = None
    dictionaries = None
    if src == "train:self":
        pass
    elif src.startswith("train:"):
        paths = [p for p in src[len("train:"):].split(",") if p]
        if not paths:
            raise ArgumentError("train: needs at least one image path")
        training = [iomod.read_pgm(p) for p in paths]
        den_cfg = replace(den_cfg, train_source=",".join(paths))
    else:
        dictionaries = iomod.load_dictionary(src)

    t0 = time.perf_counter()
    out, report = denoise(noisy, den_cfg, emd_cfg=emd_cfg,
                          learn_cfg=learn_cfg, clean_ref=clean,
                          training_images=training,
                          dictionaries=dictionaries)
    total = time.perf_counter() - t0

    iomod.write_pgm(outdir / "denoised.pgm", out)
    rows = [
        ("psnr_in", report.psnr_in),
        ("psnr_out", report.psnr_out),
        ("ssim_in", report.ssim_in),
        ("ssim_out", report.ssim_out),
        ("nre", report.nre_code),
        ("dict_K", report.dict_K),
        ("provenance", report.provenance),
        ("warning", report.warning),
    ]
    rows += [(f"config.{k}", v) for k, v in report.config.items()]
    _write_csv(outdir / "report.csv", ("key", "value"), rows)
    # wall-clock numbers vary run to run, so they live outside the CSV
    with open(outdir / "timings.txt", "w") as fh:
        for stage, secs in report.timings.items():
            fh.write(f"{stage}={secs:.3f}s\n")
        fh.write(f"total={total:.3f}s\n")

    if not args.no_figures:
        plt = _plt()
        panels = [("noisy input", noisy, report.psnr_in),
                  ("denoised", out, report.psnr_out)]
        if clean is not None:
            panels.append(("clean reference", clean, None))
        fig, axes = plt.subplots(1, len(panels),
                                 figsize=(4.0 * len(panels), 4.2))
        for ax, (title, field, value) in zip(np.atleast_1d(axes), panels):
            ax.imshow(field, cmap="gray", vmin=0, vmax=255)
            if value is not None:
                title = f"{title}\npsnr={_fmt_metric(value)}"
            ax.set_title(title, fontsize=9)
            ax.axis("off")
        fig.tight_layout()
        _save_fig(fig, outdir / "denoise.png")
    return 0


def _fmt_metric(value) -> str:
    if value is None:
        return ""
    if math.isinf(value):
        return "inf"
    return f"{value:.6f}"


def _cmd_eval(args) -> int:
    ref = iomod.read_pgm(args.reference)
    test = iomod.read_pgm(args.test)
    p = psnr(ref, test)
    s = ssim(ref, test)
    print(f"psnr={_fmt_metric(p)} ssim={s:.6f}")
    return 0


# ----------------------------------------------------------- entrypoint

def _add_common(sub) -> None:
    sub.add_argument("--config", help="flat key = value configuration file")
    sub.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override a single configuration key")
    sub.add_argument("--no-figures", action="store_true",
                     help="skip rendering figures next to the CSV outputs")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="remd-sparse",
        description="Robust EMD decomposition, IMF-atom dictionaries, "
                    "tolerance learning and patch-based denoising.")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("decompose", help="decompose an image into IMFs")
    p.add_argument("input", help="input PGM image")
    p.add_argument("outdir", help="output directory")
    _add_common(p)
    p.set_defaults(func=_cmd_decompose)

    p = subs.add_parser("build-dict", help="harvest an IMF atom dictionary")
    p.add_argument("paths", nargs="+", metavar="IMAGE... DICT",
                   help="training images followed by the output dictionary")
    _add_common(p)
    p.set_defaults(func=_cmd_build_dict)

    p = subs.add_parser("learn", help="learn the tolerance matrix")
    p.add_argument("dict", help="input dictionary file")
    p.add_argument("paths", nargs="+", metavar="IMAGE... DICT",
                   help="training images followed by the output dictionary")
    _add_common(p)
    p.set_defaults(func=_cmd_learn)

    p = subs.add_parser("denoise", help="denoise an image")
    p.add_argument("input", help="noisy image, or clean image with "
                                 "denoise.input_is_clean = true")
    p.add_argument("dict", help="dictionary file, train:self, or "
                                "train:IMG[,IMG...]")
    p.add_argument("outdir", help="output directory")
    _add_common(p)
    p.set_defaults(func=_cmd_denoise)

    p = subs.add_parser("eval", help="print psnr/ssim of an image pair")
    p.add_argument("reference")
    p.add_argument("test")
    _add_common(p)
    p.set_defaults(func=_cmd_eval)
    return parser


def _limit_threads() -> None:
    value = os.environ.get("REMD_THREADS")
    if not value:
        return
    try:
        count = max(1, int(value))
    except ValueError:
        raise ArgumentError(f"REMD_THREADS must be an integer, got {value!r}")
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(limits=count)
    except ImportError:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(count)


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        _limit_threads()
        return args.func(args)
    except ArgumentError as exc:          # includes dimension problems
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
