"""Synthetic EDFA used as ground truth for surrogate training.

The amplifier is a homogeneous two-level (Giles) model with a single spatially
averaged inversion ``x``.  Per-channel gain in dB is linear in ``x``::

    G_dB(n, x) = length * (x * (alpha_n + g_n) - alpha_n - background_loss)

and the amplifier runs in constant-output mode: ``x`` is found by bisection so
that the summed output power hits the requested total.  The spontaneous
emission factor ``n_sp = x g / (x (alpha + g) - alpha)`` gives the
dual-polarization ASE density ``2 n_sp h nu (G - 1)`` and from it the noise
figure.

Absorption and emission spectra (dB/m) are sums of Gaussians whose
parameters live in ``data/oracle_default.json``.  They are design fixtures
chosen to behave like a C-band EDF without gain flattening; they are not
fitted to any real device.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _fileio
from .edfa_noise import PLANCK, nf_from_ase
from .spectral import ChannelGrid, PowerSpectrum, default_grid

log = logging.getLogger(__name__)

TOTAL_INPUTS_DBM = tuple(range(-9, 10, 2))
TOTAL_OUTPUTS_DBM = (15, 16, 17, 18)
TRANSPARENCY_FLAG = 1e-3  # dB/m; net gain coefficient below this marks a near-transparent channel
_BISECTION_STEPS = 80
ORACLE_FORMAT = "snropt-oracle"


class InfeasibleOperatingPointError(ValueError):
    """No inversion in (0, 1) reaches the requested output power."""


@dataclass(frozen=True, eq=False)
class OracleParams:
    grid: ChannelGrid
    absorption: np.ndarray  # dB/m
    emission: np.ndarray  # dB/m
    length: float  # m
    background_loss: float = 0.0  # dB/m
    max_total_output: float = 18.0  # dBm
    unit_id: str = "A1"

    def __post_init__(self):
        for name in ("absorption", "emission"):
            arr = np.asarray(getattr(self, name), dtype=float).copy()
            if arr.shape != (self.grid.count,):
                raise ValueError(f"{name} needs one value per grid channel")
            if np.any(arr <= 0):
                raise ValueError(f"{name} must be positive at every channel")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.length <= 0:
            raise ValueError("fiber length must be positive")
        # at full inversion the net gain coefficient is g - background_loss
        if np.any(self.emission - self.background_loss <= 0):
            raise ValueError("emission too weak for positive gain at some channel")


def _gaussian_sum(freq_thz, components):
    out = np.zeros_like(freq_thz)
    for c in components:
        out += c["amp"] * np.exp(-0.5 * ((freq_thz - c["center_THz"]) / c["sigma_THz"]) ** 2)
    return out


def params_from_dict(cfg: dict, grid: ChannelGrid | None = None) -> OracleParams:
    if cfg.get("format", ORACLE_FORMAT) != ORACLE_FORMAT:
        raise _fileio.FileFormatError("not an oracle parameter file")
    if cfg.get("version", 1) != 1:
        raise _fileio.FileFormatError(f"unsupported oracle params version {cfg.get('version')}")
    if grid is None:
        grid = default_grid()
    f = grid.freq_thz
    if "absorption_dB_per_m" in cfg:
        absorption = np.asarray(cfg["absorption_dB_per_m"], dtype=float)
        emission = np.asarray(cfg["emission_dB_per_m"], dtype=float)
        if "frequencies_THz" in cfg:
            grid = ChannelGrid(tuple(cfg["frequencies_THz"]), cfg.get("spacing_GHz", 100.0),
                               cfg.get("symbol_rate_GBd", 32.0))
    else:
        absorption = _gaussian_sum(f, cfg["absorption"])
        emission = _gaussian_sum(f, cfg["emission"])
    return OracleParams(grid, absorption, emission, float(cfg["length_m"]),
                        float(cfg.get("background_loss_dB_per_m", 0.0)),
                        float(cfg.get("max_total_output_dBm", 18.0)), str(cfg.get("unit_id", "A1")))


def load_params(path=None, grid: ChannelGrid | None = None) -> OracleParams:
    """Load oracle parameters; ``None`` loads the packaged default unit."""
    if path is None:
        text = resources.files("snropt").joinpath("data/oracle_default.json").read_text()
    else:
        text = Path(path).read_text()
    return params_from_dict(json.loads(text), grid)


def params_to_dict(params: OracleParams) -> dict:
    g = params.grid
    return {
        "format": ORACLE_FORMAT,
        "version": 1,
        "unit_id": params.unit_id,
        "length_m": params.length,
        "background_loss_dB_per_m": params.background_loss,
        "max_total_output_dBm": params.max_total_output,
        "frequencies_THz": list(g.frequencies),
        "spacing_GHz": g.spacing,
        "symbol_rate_GBd": g.symbol_rate,
        "absorption_dB_per_m": params.absorption.tolist(),
        "emission_dB_per_m": params.emission.tolist(),
    }


def save_params(path, params: OracleParams) -> None:
    Path(path).write_text(json.dumps(params_to_dict(params), indent=2))


# -- amplifier response ---------------------------------------------------------

def gain_db_at(params: OracleParams, x: float) -> np.ndarray:
    a, g = params.absorption, params.emission
    return params.length * (x * (a + g) - a - params.background_loss)


def solve_inversion(params: OracleParams, input_mw: np.ndarray, target_mw: float) -> float:
    """Bisect for the inversion giving ``sum(P_in * G) == target``."""

    def excess(x):
        return np.sum(input_mw * 10 ** (gain_db_at(params, x) / 10)) - target_mw

    lo, hi = 0.0, 1.0
    if excess(hi) < 0 or excess(lo) > 0:
        total_in = 10 * np.log10(np.sum(input_mw))
        raise InfeasibleOperatingPointError(
            f"unit {params.unit_id}: no inversion reaches {10 * np.log10(target_mw):.2f} dBm "
            f"from {total_in:.2f} dBm input")
    for _ in range(_BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        if excess(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def ase_density(params: OracleParams, x: float) -> np.ndarray:
    """Dual-polarization ASE density (W/Hz) at inversion ``x``.

    Evaluated as ``2 h nu x g (G - 1) / d`` with ``d`` the net gain coefficient
    (background loss included), which equals ``2 n_sp h nu (G - 1)`` and stays
    finite as a channel passes through transparency (``d -> 0``).
    """
    a, g = params.absorption, params.emission
    d = x * (a + g) - a - params.background_loss
    small = np.abs(d) < 1e-12
    q = params.length * d * np.log(10) / 10
    gm1_over_d = np.where(small, params.length * np.log(10) / 10,
                          np.expm1(q) / np.where(small, 1.0, d))
    photon = PLANCK * params.grid.freq_hz
    return 2 * photon * x * g * gm1_over_d


def oracle_response(params: OracleParams, input_psd: PowerSpectrum, target_total_output: float):
    """Gain and noise figure (both dB, per channel) at a constant-output operating point."""
    if target_total_output > params.max_total_output + 1e-9:
        raise InfeasibleOperatingPointError(
            f"target {target_total_output} dBm exceeds unit maximum {params.max_total_output} dBm")
    if input_psd.grid.count != params.grid.count:
        raise ValueError("input spectrum is not on the oracle grid")
    p_in = input_psd.mw()
    x = solve_inversion(params, p_in, 10 ** (target_total_output / 10))
    gain_db = gain_db_at(params, x)
    d = x * (params.absorption + params.emission) - params.absorption - params.background_loss
    if np.any(np.abs(d) < TRANSPARENCY_FLAG):
        log.debug("unit %s: near-transparent channels at x=%.4f: %s", params.unit_id, x,
                  np.flatnonzero(np.abs(d) < TRANSPARENCY_FLAG).tolist())
    rho = ase_density(params, x)
    nf = nf_from_ase(rho, 10 ** (gain_db / 10), params.grid.freq_thz)
    return gain_db, 10 * np.log10(nf)


# -- input profiles ------------------------------------------------------------------

def _profile_shape(rng: np.random.Generator, u: np.ndarray, excursion_max: float,
                   tilt_max: float) -> np.ndarray:
    ripple = np.zeros_like(u)
    for _ in range(rng.integers(1, 5)):
        order = rng.integers(1, 5)
        ripple += rng.uniform(-1, 1) * np.cos(np.pi * order * u + rng.uniform(0, 2 * np.pi))
    span = np.ptp(ripple)
    ripple = ripple / span if span > 0 else ripple
    tilt = rng.uniform(-tilt_max, tilt_max) if tilt_max > 0 else 0.0
    excursion = rng.uniform(0, excursion_max) if excursion_max > 0 else 0.0
    raw = ripple * max(excursion_max, 1.0) + tilt * (u - 0.5)
    span = np.ptp(raw)
    if span == 0 or excursion == 0:
        return np.zeros_like(u)
    shape = raw * (excursion / span)
    return shape - shape.max()


def generate_profiles(seed: int, count: int, excursion_max: float = 20.0, tilt_max: float = 10.0,
                      grid: ChannelGrid | None = None) -> list[PowerSpectrum]:
    """Random smooth input shapes in dB, peak at 0 dBm.

    Each profile is a sum of one to four low-order cosines across the band
    plus a linear tilt, rescaled to a peak-to-peak excursion drawn uniformly
    from ``[0, excursion_max]``.  Profile ``i`` draws from its own child seed,
    so any subset regenerates identically.
    """
    if count <= 0:
        raise ValueError("count must be positive")
    grid = grid or default_grid()
    u = np.linspace(0.0, 1.0, grid.count)
    children = np.random.SeedSequence(seed).spawn(count)
    return [PowerSpectrum(grid, _profile_shape(np.random.default_rng(c), u, excursion_max, tilt_max))
            for c in children]


# -- characterization datasets --------------------------------------------------

@dataclass(frozen=True, eq=False)
class CharacterizationSample:
    input_psd: PowerSpectrum
    total_input: float
    total_output: float
    gain: np.ndarray
    nf: np.ndarray
    unit_id: str
    profile_id: int = 0

    @property
    def average_gain(self) -> float:
        return self.total_output - self.total_input


@dataclass
class Dataset:
    samples: list[CharacterizationSample]
    skipped: int = 0

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def grid(self) -> ChannelGrid:
        return self.samples[0].input_psd.grid

    def arrays(self) -> dict[str, np.ndarray]:
        """Stacked arrays: ``pin`` (dBm), ``gain``, ``nf``, ``tin``, ``tout``, ``profile``."""
        s = self.samples
        return {
            "pin": np.stack([x.input_psd.dbm() for x in s]),
            "gain": np.stack([x.gain for x in s]),
            "nf": np.stack([x.nf for x in s]),
            "tin": np.array([x.total_input for x in s]),
            "tout": np.array([x.total_output for x in s]),
            "profile": np.array([x.profile_id for x in s]),
        }

    def subset(self, mask) -> "Dataset":
        return Dataset([x for x, keep in zip(self.samples, mask) if keep])


def generate_dataset(params: OracleParams, seed: int, n_profiles: int, *,
                     excursion_max: float = 20.0, tilt_max: float = 10.0,
                     total_inputs: Sequence[float] = TOTAL_INPUTS_DBM,
                     total_outputs: Sequence[float] = TOTAL_OUTPUTS_DBM,
                     profiles: Sequence[PowerSpectrum] | None = None) -> Dataset:
    """Sweep profiles x total input x total output through the oracle."""
    if profiles is None:
        profiles = generate_profiles(seed, n_profiles, excursion_max, tilt_max, params.grid)
    samples, skipped = [], 0
    for pid, shape in enumerate(profiles):
        lin = shape.mw()
        for tin in total_inputs:
            psd = PowerSpectrum(shape.grid, 10 * np.log10(lin / lin.sum()) + tin)
            for tout in total_outputs:
                try:
                    gain, nf = oracle_response(params, psd, tout)
                except InfeasibleOperatingPointError:
                    skipped += 1
                    continue
                samples.append(CharacterizationSample(psd, float(tin), float(tout), gain, nf,
                                                      params.unit_id, pid))
    if skipped:
        log.info("unit %s: skipped %d infeasible operating points", params.unit_id, skipped)
    return Dataset(samples, skipped)


def perturb_unit(params: OracleParams, seed: int, magnitude: float) -> OracleParams:
    """A sibling unit: absorption and emission scaled by smooth factors within +-magnitude."""
    if not 0 <= magnitude <= 0.2:
        raise ValueError("magnitude must lie in [0, 0.2]")
    rng = np.random.default_rng(seed)
    u = np.linspace(0.0, 1.0, params.grid.count)

    def smooth_factor():
        s = np.zeros_like(u)
        for order in (1, 2, 3):
            s += rng.normal() / order * np.cos(np.pi * order * u + rng.uniform(0, 2 * np.pi))
        s *= rng.uniform(0.5, 1.0) / np.max(np.abs(s))
        return 1.0 + magnitude * s

    absorption = params.absorption * smooth_factor()
    emission = params.emission * smooth_factor()
    return replace(params, absorption=absorption, emission=emission,
                   unit_id=f"{params.unit_id}-p{seed}")


# -- dataset files --------------------------------------------------------------------

def write_dataset(path, dataset: Dataset) -> None:
    n = dataset.grid.count
    cols = (["unit_id", "profile_id", "total_input_dBm", "total_output_dBm"]
            + [f"pin_{i:02d}" for i in range(n)] + [f"gain_{i:02d}" for i in range(n)]
            + [f"nf_{i:02d}" for i in range(n)])
    comments = [
        "one row per characterization sample",
        "pin_k: input power of channel k in dBm; gain_k: gain in dB; nf_k: noise figure in dB",
        "frequencies_THz=" + ";".join(f"{f:.4f}" for f in dataset.grid.frequencies),
        f"symbol_rate_GBd={dataset.grid.symbol_rate}",
        f"skipped_infeasible={dataset.skipped}",
    ]
    rows = ([s.unit_id, s.profile_id, s.total_input, s.total_output, *s.input_psd.dbm().tolist(),
             *s.gain.tolist(), *s.nf.tolist()] for s in dataset.samples)
    _fileio.write_table(path, "dataset", cols, rows, comments)


def read_dataset(path, grid: ChannelGrid | None = None) -> Dataset:
    grid = grid or default_grid()
    cols, rows = _fileio.read_table(path, "dataset")
    n = grid.count
    if len(cols) != 4 + 3 * n:
        raise _fileio.FileFormatError(f"{path}: expected {4 + 3 * n} columns for a {n}-channel grid")
    samples = []
    for r in rows:
        vals = np.array([float(v) for v in r[4:]])
        samples.append(CharacterizationSample(PowerSpectrum(grid, vals[:n]), float(r[2]), float(r[3]),
                                              vals[n:2 * n], vals[2 * n:], r[0], int(r[1])))
    return Dataset(samples)
