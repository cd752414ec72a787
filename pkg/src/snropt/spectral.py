"""Channel grid, per-channel power spectra and unit conversions.

Spectra live on a fixed comb of carriers.  A :class:`PowerSpectrum` carries an
explicit domain tag (``"dBm"`` or ``"mW"``); conversion functions refuse to
convert a spectrum that is already in the requested domain so that a stray
double conversion surfaces immediately.

The differentiable parts of the package work on bare arrays in watts; the
``*_w`` helpers at the bottom are the array-level counterparts used there.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import jax.numpy as jnp
import numpy as np

from . import _fileio

Domain = Literal["dBm", "mW"]


class SpectrumDomainError(ValueError):
    """A conversion was asked for a value outside its domain."""


@dataclass(frozen=True)
class ChannelGrid:
    """Uniform comb of carrier frequencies.

    ``frequencies`` are in THz, ``spacing`` in GHz and ``symbol_rate`` in GBd.
    The symbol rate is also the noise-integration bandwidth of every channel.
    """

    frequencies: tuple[float, ...]
    spacing: float = 100.0
    symbol_rate: float = 32.0

    def __post_init__(self):
        f = np.asarray(self.frequencies, dtype=float)
        if f.ndim != 1 or f.size == 0:
            raise ValueError("grid needs at least one frequency")
        if f.size > 1:
            steps = np.diff(f) * 1e3
            if np.any(steps <= 0):
                raise ValueError("grid frequencies must be strictly increasing")
            if not np.allclose(steps, self.spacing, rtol=0, atol=1e-6):
                raise ValueError("grid frequencies must be uniformly spaced at `spacing` GHz")
        if not 0 < self.symbol_rate <= self.spacing:
            raise ValueError("symbol_rate must satisfy 0 < symbol_rate <= spacing")

    @classmethod
    def uniform(cls, count: int = 40, start: float = 192.1, spacing: float = 100.0,
                symbol_rate: float = 32.0) -> "ChannelGrid":
        freqs = tuple(round(start + i * spacing * 1e-3, 9) for i in range(count))
        return cls(freqs, spacing, symbol_rate)

    @property
    def count(self) -> int:
        return len(self.frequencies)

    @property
    def freq_thz(self) -> np.ndarray:
        return np.asarray(self.frequencies, dtype=float)

    @property
    def freq_hz(self) -> np.ndarray:
        return self.freq_thz * 1e12

    @property
    def bandwidth_hz(self) -> float:
        return self.symbol_rate * 1e9


def default_grid() -> ChannelGrid:
    """40 channels, 192.1-196.0 THz on the 100 GHz grid, 32 GBd."""
    return ChannelGrid.uniform()


@dataclass(frozen=True, eq=False)
class PowerSpectrum:
    grid: ChannelGrid
    values: np.ndarray
    domain: Domain = "dBm"

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if vals.shape != (self.grid.count,):
            raise ValueError(f"expected {self.grid.count} channel values, got shape {vals.shape}")
        if self.domain not in ("dBm", "mW"):
            raise ValueError(f"unknown domain {self.domain!r}")
        if self.domain == "mW" and np.any(vals <= 0):
            raise SpectrumDomainError("linear-domain powers must be strictly positive")

    @classmethod
    def flat(cls, grid: ChannelGrid, total_dbm: float) -> "PowerSpectrum":
        per_channel = total_dbm - 10 * np.log10(grid.count)
        return cls(grid, np.full(grid.count, per_channel), "dBm")

    def mw(self) -> np.ndarray:
        return self.values if self.domain == "mW" else 10 ** (self.values / 10)

    def dbm(self) -> np.ndarray:
        return self.values if self.domain == "dBm" else 10 * np.log10(self.values)

    def total_mw(self) -> float:
        return float(np.sum(self.mw()))

    def total_dbm(self) -> float:
        return float(10 * np.log10(self.total_mw()))

    def excursion_db(self) -> float:
        d = self.dbm()
        return float(d.max() - d.min())


@dataclass(frozen=True, eq=False)
class NoiseSpectrum:
    """Accumulated per-channel noise.

    ``ase`` and ``nli`` are powers in W inside the symbol-rate bandwidth;
    ``impl`` is the implementation-penalty noise-to-signal ratio.
    """

    grid: ChannelGrid
    ase: np.ndarray
    nli: np.ndarray
    impl: np.ndarray = field(default=None)

    def __post_init__(self):
        n = self.grid.count
        for name in ("ase", "nli", "impl"):
            raw = getattr(self, name)
            arr = np.zeros(n) if raw is None else np.asarray(raw, dtype=float).copy()
            if arr.shape != (n,):
                raise ValueError(f"{name}: expected {n} values, got shape {arr.shape}")
            if np.any(arr < 0):
                raise ValueError(f"{name}: noise entries must be non-negative")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def zeros(cls, grid: ChannelGrid) -> "NoiseSpectrum":
        return cls(grid, np.zeros(grid.count), np.zeros(grid.count), np.zeros(grid.count))


def to_db(spectrum: PowerSpectrum) -> PowerSpectrum:
    if spectrum.domain != "mW":
        raise SpectrumDomainError(f"to_db expects a mW spectrum, got {spectrum.domain}")
    return PowerSpectrum(spectrum.grid, 10 * np.log10(spectrum.values), "dBm")


def to_linear(spectrum: PowerSpectrum) -> PowerSpectrum:
    if spectrum.domain != "dBm":
        raise SpectrumDomainError(f"to_linear expects a dBm spectrum, got {spectrum.domain}")
    return PowerSpectrum(spectrum.grid, 10 ** (spectrum.values / 10), "mW")


def normalize_peak(spectrum: PowerSpectrum) -> tuple[PowerSpectrum, float]:
    """Shift a dB spectrum so its largest entry is 0; return the shift as well."""
    if spectrum.domain != "dBm":
        raise SpectrumDomainError("normalize_peak needs a dB-domain spectrum")
    offset = float(np.max(spectrum.values))
    return PowerSpectrum(spectrum.grid, spectrum.values - offset, "dBm"), offset


def normalize_total(spectrum: PowerSpectrum, target_total: float) -> PowerSpectrum:
    """Rescale to ``target_total`` dBm keeping channel ratios; domain is preserved."""
    lin = spectrum.mw()
    scaled = lin * (10 ** (target_total / 10) / np.sum(lin))
    if spectrum.domain == "mW":
        return PowerSpectrum(spectrum.grid, scaled, "mW")
    return PowerSpectrum(spectrum.grid, 10 * np.log10(scaled), "dBm")


# -- array-level helpers (jax-traceable, watts) ------------------------------

def dbm_to_w(p_dbm):
    return 1e-3 * 10 ** (p_dbm / 10)


def w_to_dbm(p_w):
    return 10 * jnp.log10(p_w / 1e-3)


def db_to_lin(x_db):
    return 10 ** (x_db / 10)


def lin_to_db(x):
    return 10 * jnp.log10(x)


def normalize_total_w(p_w, total_w):
    return p_w * (total_w / jnp.sum(p_w))


# -- files -------------------------------------------------------------------

def write_spectrum(path, spectrum: PowerSpectrum, comments=()) -> None:
    rows = zip(spectrum.grid.freq_thz.tolist(), spectrum.dbm().tolist())
    comments = (f"symbol_rate_GBd={spectrum.grid.symbol_rate}", *comments)
    _fileio.write_table(path, "spectrum", ["frequency_THz", "power_dBm"], rows, comments)


def read_spectrum(path, grid: ChannelGrid | None = None) -> PowerSpectrum:
    """Read a spectrum file.  With ``grid`` given, frequencies must match it."""
    _, rows = _fileio.read_table(path, "spectrum")
    freqs = np.array([float(r[0]) for r in rows])
    powers = np.array([float(r[1]) for r in rows])
    if grid is None:
        spacing = float(np.round((freqs[1] - freqs[0]) * 1e3, 6)) if freqs.size > 1 else 100.0
        grid = ChannelGrid(tuple(freqs.tolist()), spacing, min(32.0, spacing))
    elif freqs.size != grid.count or not np.allclose(freqs, grid.freq_thz, atol=1e-6):
        raise ValueError(f"{path}: frequencies do not match the channel grid")
    return PowerSpectrum(grid, powers, "dBm")


def write_grid(path, grid: ChannelGrid) -> None:
    _fileio.write_table(path, "grid", ["count", "start_THz", "spacing_GHz", "symbol_rate_GBd"],
                        [[grid.count, grid.frequencies[0], grid.spacing, grid.symbol_rate]])


def read_grid(path) -> ChannelGrid:
    _, rows = _fileio.read_table(path, "grid")
    count, start, spacing, rate = rows[0]
    return ChannelGrid.uniform(int(count), float(start), float(spacing), float(rate))


def grid_from_path_or_default(path: str | Path | None) -> ChannelGrid:
    return default_grid() if path is None else read_grid(path)
