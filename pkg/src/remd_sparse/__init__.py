"""Multiscale sparse representation toolkit.

Decomposes grayscale images into intrinsic mode functions with a robust
EMD, builds frequency-clustered IMF atom dictionaries, learns a
coherence-regularized tolerance dictionary, and denoises images with the
composite dictionary.
"""

from .atoms import (RawDictionary, RefinedDictionary, partition_imfs,
                    pool_raw, refine)
from .denoise import (DenoiseConfig, DenoiseReport, add_gaussian_noise,
                      denoise, train_dictionary)
from .emd import Decomposition, EmdConfig, decompose, detect_extrema
from .errors import ArgumentError, DimensionError, FormatError, NumericalError
from .grid import nre, psnr, ssim
from .learn import LearnConfig, LearnTrace, learn

__version__ = "0.1.0"

__all__ = ["ArgumentError", "DimensionError", "FormatError", "NumericalError",
           "Decomposition", "EmdConfig", "decompose", "detect_extrema",
           "RawDictionary", "RefinedDictionary", "partition_imfs",
           "pool_raw", "refine",
           "LearnConfig", "LearnTrace", "learn",
           "DenoiseConfig", "DenoiseReport", "add_gaussian_noise",
           "denoise", "train_dictionary",
           "nre", "psnr", "ssim",
           "__version__"]
