"""Noise figure <-> ASE density conversion.

    NF = rho_ase / (G h nu) + 1 / G

``rho_ase`` is the dual-polarization ASE power spectral density in W/Hz at the
amplifier output, ``G`` the linear gain and ``nu`` the carrier frequency.
"""
from __future__ import annotations

import numpy as np
from scipy.constants import h as PLANCK  # 6.62607015e-34 J s, exact in SI

__all__ = ["PLANCK", "NegativeAseError", "nf_from_ase", "ase_from_nf"]


class NegativeAseError(ValueError):
    """Noise figure below the 1/G floor implies negative ASE."""


def nf_from_ase(rho_ase, gain_linear, frequency_thz):
    """Linear noise figure from ASE density (W/Hz), linear gain and frequency (THz)."""
    rho_ase = np.asarray(rho_ase, dtype=float)
    gain_linear = np.asarray(gain_linear, dtype=float)
    if np.any(gain_linear <= 0):
        raise ValueError("gain must be positive")
    if np.any(rho_ase < 0):
        raise ValueError("ASE density must be non-negative")
    photon = PLANCK * np.asarray(frequency_thz, dtype=float) * 1e12
    return rho_ase / (gain_linear * photon) + 1.0 / gain_linear


def ase_from_nf(nf_linear, gain_linear, frequency_thz):
    """ASE density (W/Hz) that reproduces ``nf_linear`` at the given gain."""
    nf_linear = np.asarray(nf_linear, dtype=float)
    gain_linear = np.asarray(gain_linear, dtype=float)
    if np.any(gain_linear <= 0):
        raise ValueError("gain must be positive")
    excess = nf_linear - 1.0 / gain_linear
    # relative slack for values that sit on the floor up to rounding
    if np.any(excess < -1e-12 * np.maximum(nf_linear, 1.0 / gain_linear)):
        raise NegativeAseError("noise figure below 1/G")
    photon = PLANCK * np.asarray(frequency_thz, dtype=float) * 1e12
    return np.maximum(excess, 0.0) * gain_linear * photon
