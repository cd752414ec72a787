"""End-to-end link model: EDFA surrogates, optional ideal GFF and fiber spans.

Each span is processed in order:

1. the PSD entering the amplifier is peak-normalized and handed, together
   with its total power and the amplifier's target output, to the gain and
   NF models;
2. the amplified PSD is renormalized to the target output power;
3. amplifier ASE is added (at the first span the transceiver penalty is also
   seeded as a noise-to-signal ratio);
4. an ideal gain-flattening stage may follow;
5. the fiber adds NLI (referred to its input) and propagates signal and noise.

Received SNR per channel is ``P / (ASE + NLI + P * NSR_b2b)``.

The whole chain is a pure jax function of the launch powers and a pytree of
parameters, compiled once per link *structure* (span count, per-span flags and
RK4 step counts) so links that differ only in lengths or powers share code.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Literal

import jax
import jax.numpy as jnp
import numpy as np

from . import _fileio
from .edfa_noise import PLANCK
from .fiber import FiberParams, loss_transfer_w, nli_w, srs_transfer_w, steps_for
from .spectral import ChannelGrid, NoiseSpectrum, PowerSpectrum, default_grid
from .surrogate import EnvelopeWarning, gain_from_output, load_surrogate

EDFA_MAX_OUTPUT_DBM = 18.0
GFF_NF_DB = 3.0
LINK_FORMAT = "snropt-link"

Gff = Literal["none", "ideal"]


@dataclass(frozen=True)
class SpanConfig:
    fiber: FiberParams
    edfa_model_id: str = "A1"
    edfa_target_output: float = 18.0
    include_srs: bool = True
    include_nli: bool = True
    gff: Gff = "none"

    def __post_init__(self):
        if self.edfa_target_output > EDFA_MAX_OUTPUT_DBM + 1e-12:
            raise ValueError(f"EDFA target output {self.edfa_target_output} dBm exceeds the "
                             f"{EDFA_MAX_OUTPUT_DBM} dBm device maximum")
        if self.gff not in ("none", "ideal"):
            raise ValueError(f"unknown gff mode {self.gff!r}")


@dataclass(frozen=True, eq=False)
class LinkConfig:
    spans: tuple[SpanConfig, ...]
    first_edfa_total_input: float = -2.0
    b2b_snr: np.ndarray = None
    grid: ChannelGrid = field(default_factory=default_grid)
    model_dir: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "spans", tuple(self.spans))
        if not self.spans:
            raise ValueError("a link needs at least one span")
        b2b = default_b2b(self.grid) if self.b2b_snr is None else np.asarray(self.b2b_snr, float)
        if b2b.shape != (self.grid.count,) or not np.all(np.isfinite(b2b)):
            raise ValueError("b2b_snr must hold one finite value per channel")
        b2b = b2b.copy()
        b2b.setflags(write=False)
        object.__setattr__(self, "b2b_snr", b2b)

    def with_flags(self, include_srs: bool | None = None, include_nli: bool | None = None,
                   gff: Gff | None = None) -> "LinkConfig":
        """Copy with the given model options overridden on every span."""
        changes = {k: v for k, v in (("include_srs", include_srs), ("include_nli", include_nli),
                                     ("gff", gff)) if v is not None}
        return replace(self, spans=tuple(replace(s, **changes) for s in self.spans))

    @property
    def length_km(self) -> float:
        return float(sum(s.fiber.length for s in self.spans))


@dataclass(frozen=True, eq=False)
class SnrReport:
    received_psd: PowerSpectrum  # mW
    noise: NoiseSpectrum
    snr: np.ndarray  # dB
    span_psds: tuple  # per span: (launch, fiber output) in dBm
    warnings: tuple = ()

    @property
    def min_snr(self) -> float:
        return float(np.min(self.snr))

    @property
    def excursion(self) -> float:
        return float(np.max(self.snr) - np.min(self.snr))


# -- amplifier models ---------------------------------------------------------------

def _log_sum_db(x_db):
    return 10 * jnp.log10(jnp.sum(10 ** (x_db / 10), axis=-1))


@dataclass
class StubAmplifier:
    """Analytic amplifier: fixed gain shape (dB) scaled to the target, fixed NF.

    ``nf_db=None`` makes the stage noiseless (NF = 1/G, no ASE).
    """

    gain_shape_db: np.ndarray | None = None
    nf_db: np.ndarray | float | None = None
    n_channels: int = 40

    def arrays(self) -> dict:
        n = self.n_channels if self.gain_shape_db is None else len(self.gain_shape_db)
        shape = np.zeros(n) if self.gain_shape_db is None else np.asarray(self.gain_shape_db, float)
        nf = np.zeros(n) if self.nf_db is None else np.broadcast_to(np.asarray(self.nf_db, float), (n,))
        return {"shape": jnp.asarray(shape), "nf": jnp.asarray(nf),
                "noiseless": jnp.asarray(1.0 if self.nf_db is None else 0.0)}

    @staticmethod
    def apply(arrays, input_norm_db, total_in, total_out):
        out = input_norm_db + arrays["shape"]
        gain = gain_from_output(input_norm_db, out - jnp.max(out), total_in, total_out)
        nf = jnp.where(arrays["noiseless"] > 0, -gain, arrays["nf"])
        return gain, nf


def resolve_model(model_id: str, model_dir=None, n_channels: int = 40):
    """Amplifier model by id: ``stub:noiseless``, ``stub:nf=<dB>`` or a trained surrogate id."""
    if model_id == "stub:noiseless":
        return StubAmplifier(n_channels=n_channels)
    if model_id.startswith("stub:nf="):
        return StubAmplifier(nf_db=float(model_id.split("=", 1)[1]), n_channels=n_channels)
    return _cached_surrogate(model_id, None if model_dir is None else str(model_dir))


@lru_cache(maxsize=None)
def _cached_surrogate(model_id, model_dir):
    return load_surrogate(model_id, model_dir)


def link_models(link: LinkConfig, models: dict | None = None) -> list:
    models = {} if models is None else models
    return [models[s.edfa_model_id] if s.edfa_model_id in models
            else resolve_model(s.edfa_model_id, link.model_dir, link.grid.count) for s in link.spans]


# -- ideal gain flattening -----------------------------------------------------------

def gff_w(p_w, ase_w, nli_w_, photon_b, nf_lin, level_w):
    """Traceable ideal GFF: extra amplifier (gain level/min P) then per-channel attenuation.

    The extra stage's ASE in the noise bandwidth is ``NF * h nu * B * (G_e - 1)``,
    which vanishes for a flat input.
    """
    g_e = level_w / jnp.min(p_w)
    atten = g_e * p_w / level_w
    extra = nf_lin * photon_b * (g_e - 1)
    return (jnp.full_like(p_w, level_w), (ase_w * g_e + extra) / atten, nli_w_ * g_e / atten, atten)


def apply_ideal_gff(psd: PowerSpectrum, noise: NoiseSpectrum, nf_extra: float = GFF_NF_DB,
                    level: float | None = None):
    """Flatten ``psd`` to ``level`` mW per channel (default: its current maximum)."""
    p = psd.mw() * 1e-3
    level_w = float(np.max(p)) if level is None else level * 1e-3
    photon_b = PLANCK * psd.grid.freq_hz * psd.grid.bandwidth_hz
    flat, ase, nli, _ = gff_w(jnp.asarray(p), jnp.asarray(noise.ase), jnp.asarray(noise.nli),
                              jnp.asarray(photon_b), 10 ** (nf_extra / 10), level_w)
    return (PowerSpectrum(psd.grid, np.asarray(flat) * 1e3, "mW"),
            NoiseSpectrum(noise.grid, np.asarray(ase), np.asarray(nli), noise.impl))


def gff_attenuation(psd: PowerSpectrum, level: float | None = None) -> np.ndarray:
    """Linear per-channel attenuation of the ideal GFF (all >= 1)."""
    p = psd.mw()
    level = float(np.max(p)) if level is None else level
    return (level / np.min(p)) * p / level


# -- compiled cascade -------------------------------------------------------------------

def structure_of(link: LinkConfig, models: list) -> tuple:
    return tuple((type(m).apply, s.include_srs, s.include_nli, s.gff, steps_for(s.fiber.length))
                 for s, m in zip(link.spans, models))


def params_of(link: LinkConfig, models: list) -> dict:
    grid = link.grid
    return {
        "f_thz": jnp.asarray(grid.freq_thz),
        "photon_b": jnp.asarray(PLANCK * grid.freq_hz * grid.bandwidth_hz),
        "nsr": jnp.asarray(10 ** (-link.b2b_snr / 10)),
        "first_w": jnp.asarray(1e-3 * 10 ** (link.first_edfa_total_input / 10)),
        "tout_dbm": jnp.asarray([s.edfa_target_output for s in link.spans], dtype=float),
        "fibers": [s.fiber.arrays() for s in link.spans],
        "edfa": [m.arrays() for m in models],
    }


def _run(structure, bandwidth_hz, p_in_w, prm):
    gff_nf = 10 ** (GFF_NF_DB / 10)
    p = p_in_w * (prm["first_w"] / jnp.sum(p_in_w))
    ase = jnp.zeros_like(p)
    nli = jnp.zeros_like(p)
    n = p.shape[-1]
    spans, edfa_inputs = [], []
    for i, (apply, srs, with_nli, gff, n_steps) in enumerate(structure):
        p_db = 10 * jnp.log10(p / 1e-3)
        tin = _log_sum_db(p_db)
        tout = prm["tout_dbm"][i]
        norm = p_db - jnp.max(p_db)
        edfa_inputs.append((norm, tin))
        gain_db, nf_db = apply(prm["edfa"][i], norm, tin, tout)
        g = 10 ** (gain_db / 10)
        amplified = p * g
        launch = amplified * (1e-3 * 10 ** (tout / 10) / jnp.sum(amplified))
        transfer = launch / p
        # NF * G - 1 is the ASE in units of h nu; clipped at the noiseless floor
        ase = ase * transfer + jnp.maximum(10 ** (nf_db / 10) * g - 1, 0.0) * prm["photon_b"]
        nli = nli * transfer
        if gff == "ideal":
            launch, ase, nli, _ = gff_w(launch, ase, nli, prm["photon_b"], gff_nf,
                                        1e-3 * 10 ** (tout / 10) / n)
        fp = prm["fibers"][i]
        if with_nli:
            nli = nli + nli_w(launch, prm["f_thz"], bandwidth_hz, fp)
        out = srs_transfer_w(launch, prm["f_thz"], fp, n_steps) if srs else loss_transfer_w(launch, fp)
        ratio = out / launch
        ase, nli = ase * ratio, nli * ratio
        spans.append((launch, out))
        p = out
    snr = p / (ase + nli + p * prm["nsr"])
    return {"p": p, "ase": ase, "nli": nli, "snr_db": 10 * jnp.log10(snr), "spans": spans,
            "edfa_inputs": edfa_inputs}


@lru_cache(maxsize=None)
def compiled(structure: tuple, bandwidth_hz: float):
    """Jitted ``(p_in_w, params) -> outputs`` for one link structure."""
    return jax.jit(lambda p_in_w, prm: _run(structure, bandwidth_hz, p_in_w, prm))


def link_function(link: LinkConfig, models: dict | None = None):
    """``(fn, params)`` with ``fn(p_in_w, params)`` the traceable cascade of ``link``."""
    ms = link_models(link, models)
    structure = structure_of(link, ms)
    bw = link.grid.bandwidth_hz
    return (lambda p_in_w, prm: _run(structure, bw, p_in_w, prm)), params_of(link, ms)


def simulate(link: LinkConfig, input_psd: PowerSpectrum, models: dict | None = None) -> SnrReport:
    """Received PSD, noise decomposition and SNR for ``input_psd`` launched into ``link``."""
    if input_psd.grid != link.grid:
        raise ValueError("input spectrum and link use different channel grids")
    ms = link_models(link, models)
    fn = compiled(structure_of(link, ms), link.grid.bandwidth_hz)
    out = fn(jnp.asarray(input_psd.mw() * 1e-3), params_of(link, ms))
    p = np.asarray(out["p"])
    if not (np.all(np.isfinite(p)) and np.all(p > 0) and np.all(np.isfinite(np.asarray(out["snr_db"])))):
        raise ValueError("cascade produced non-finite powers; check the link configuration")
    flagged = []
    for i, (m, s, (norm, tin)) in enumerate(zip(ms, link.spans, out["edfa_inputs"])):
        check = getattr(m, "in_envelope", None)
        if check is not None and not check(np.asarray(norm), float(tin), s.edfa_target_output):
            flagged.append(f"span {i + 1}: amplifier {s.edfa_model_id} queried outside its training envelope")
    for msg in flagged:
        warnings.warn(msg, EnvelopeWarning, stacklevel=2)
    grid = link.grid
    span_psds = tuple((PowerSpectrum(grid, 10 * np.log10(np.asarray(a) * 1e3)),
                       PowerSpectrum(grid, 10 * np.log10(np.asarray(b) * 1e3))) for a, b in out["spans"])
    noise = NoiseSpectrum(grid, np.asarray(out["ase"]), np.asarray(out["nli"]),
                          10 ** (-link.b2b_snr / 10))
    return SnrReport(PowerSpectrum(grid, p * 1e3, "mW"), noise, np.asarray(out["snr_db"]),
                     span_psds, tuple(flagged))


def snr_from_fields(report: SnrReport) -> np.ndarray:
    p = report.received_psd.mw() * 1e-3
    n = report.noise
    return 10 * np.log10(p / (n.ase + n.nli + p * n.impl))


# -- files -----------------------------------------------------------------------------

def default_b2b(grid: ChannelGrid | None = None) -> np.ndarray:
    text = resources.files("snropt").joinpath("data/b2b_default.csv")
    with resources.as_file(text) as path:
        return read_b2b(path, grid or default_grid())


def read_b2b(path, grid: ChannelGrid) -> np.ndarray:
    """B2B SNR measured at a few carriers, interpolated linearly in dB onto ``grid``."""
    _, rows = _fileio.read_table(path, "b2b")
    f = np.array([float(r[0]) for r in rows])
    snr = np.array([float(r[1]) for r in rows])
    order = np.argsort(f)
    return np.interp(grid.freq_thz, f[order], snr[order])


def write_b2b(path, freq_thz, snr_db) -> None:
    _fileio.write_table(path, "b2b", ["frequency_THz", "snr_dB"],
                        zip(map(float, freq_thz), map(float, snr_db)))


def link_to_dict(link: LinkConfig) -> dict:
    return {
        "format": LINK_FORMAT, "version": 1,
        "first_edfa_total_input_dBm": link.first_edfa_total_input,
        "b2b_snr_dB": [float(v) for v in link.b2b_snr],
        "grid": {"count": link.grid.count, "start_THz": link.grid.frequencies[0],
                 "spacing_GHz": link.grid.spacing, "symbol_rate_GBd": link.grid.symbol_rate},
        "model_dir": link.model_dir,
        "spans": [{"edfa_model": s.edfa_model_id, "target_output_dBm": s.edfa_target_output,
                   "srs": s.include_srs, "nli": s.include_nli, "gff": s.gff,
                   "fiber": s.fiber.to_dict()} for s in link.spans],
    }


def link_from_dict(d: dict, base_dir=None) -> LinkConfig:
    """Build a link from its JSON form.

    ``b2b`` may name a b2b table (relative to ``base_dir``); ``b2b_snr_dB`` gives
    per-channel values inline; with neither, the packaged default profile is used.
    """
    if d.get("format") != LINK_FORMAT:
        raise _fileio.FileFormatError("not a link configuration")
    if d.get("version") != 1:
        raise _fileio.FileFormatError(f"unsupported link configuration version {d.get('version')}")
    g = d.get("grid")
    grid = default_grid() if g is None else ChannelGrid.uniform(
        int(g["count"]), float(g["start_THz"]), float(g.get("spacing_GHz", 100.0)),
        float(g.get("symbol_rate_GBd", 32.0)))
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    if "b2b" in d and d["b2b"] is not None:
        b2b = read_b2b(base / d["b2b"], grid)
    elif "b2b_snr_dB" in d:
        b2b = np.asarray(d["b2b_snr_dB"], float)
    else:
        b2b = default_b2b(grid)
    model_dir = d.get("model_dir")
    if model_dir is not None:
        model_dir = str(base / model_dir)
    spans = tuple(SpanConfig(FiberParams.from_dict(s["fiber"]), s.get("edfa_model", "A1"),
                             float(s.get("target_output_dBm", 18.0)), bool(s.get("srs", True)),
                             bool(s.get("nli", True)), s.get("gff", "none"))
                  for s in d["spans"])
    return LinkConfig(spans, float(d.get("first_edfa_total_input_dBm", -2.0)), b2b, grid, model_dir)


def load_link(path=None) -> LinkConfig:
    """Read a link JSON file; the packaged default 3-span link when ``path`` is None."""
    if path is None:
        return link_from_dict(json.loads(resources.files("snropt").joinpath(
            "data/link_default.json").read_text()))
    path = Path(path)
    return link_from_dict(json.loads(path.read_text()), path.parent)


def save_link(path, link: LinkConfig) -> None:
    Path(path).write_text(json.dumps(link_to_dict(link), indent=2))


def write_report(path, report: SnrReport) -> None:
    grid = report.received_psd.grid
    rows = zip(range(grid.count), grid.freq_thz.tolist(), report.received_psd.dbm().tolist(),
               report.noise.ase.tolist(), report.noise.nli.tolist(), report.snr.tolist())
    _fileio.write_table(path, "snr-report", ["channel", "frequency_THz", "received_dBm", "ase_W",
                                             "nli_W", "snr_dB"], rows,
                        [f"min_snr_dB={report.min_snr!r}", f"excursion_dB={report.excursion!r}"])


def read_report(path) -> dict:
    cols, rows = _fileio.read_table(path, "snr-report")
    return {c: np.array([float(r[i]) for r in rows]) for i, c in enumerate(cols)}
