"""Quantized networks trained with the asymptotic-quantized estimator.

Numpy training of 1-, 2- and 3-bit weight/activation networks, plus a
bit-packed XNOR/shift inference engine.
"""

from .errors import (ConfigError, DataError, DimensionError, EncodingError, FormatError,
                     MinwError, NumericError, StateError)
from .estimator import EstimatorConfig, NoiseSource, aqe_backward_gate, aqe_forward, ste_backward_gate
from .model import build_model, forward_pass, backward_pass
from .quantizers import Codebook, ThresholdSet, build_codebook, quantize

__version__ = "0.1.0"
