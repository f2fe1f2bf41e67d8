"""Microphone-array speech enhancement: simulation, classical and neural beamformers."""
from .beamformers import (beamform_with_masks, cross_psd, gev_weights, ibm_mask,
                          mask_enhance, mvdr_weights)
from .dsp import (ComplexSpectrogram, MultichannelWave, StftConfig, istft, pack_features,
                  pack_filters, stft, unpack_features, unpack_filters)
from .errors import BeamforgeError, ConfigError, DataError, NumericalError
from .metrics import si_snr, stoi

__version__ = "0.1.0"

__all__ = [
    "BeamforgeError", "ComplexSpectrogram", "ConfigError", "DataError", "MultichannelWave",
    "NumericalError", "StftConfig", "beamform_with_masks", "cross_psd", "gev_weights",
    "ibm_mask", "istft", "mask_enhance", "mvdr_weights", "pack_features", "pack_filters",
    "si_snr", "stft", "stoi", "unpack_features", "unpack_filters",
]
