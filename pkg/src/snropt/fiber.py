"""Single-span fiber propagation: attenuation, Raman power transfer and Kerr NLI.

Signal powers obey the coupled Raman equations

    dP_n/dz = P_n * (-a + sum_m C_r * clip(f_m - f_n, +-peak_shift) * P_m)

with P in W, z in km and ``a`` the power attenuation in 1/km.  The loss is
factored out analytically (P = Q exp(-a z)) and only the Raman part is
stepped with fixed-step RK4, so a fiber without Raman coupling reproduces the
exponential loss to rounding.

NLI uses the closed-form incoherent GN approximation for a comb of
rectangular channels (SPM term plus one XPM term per interfering channel).
All ``*_w`` functions are jax-traceable and take fiber parameters as a pytree
from :meth:`FiberParams.arrays`, so the cascade can differentiate through
them and keep the span length a traced value.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import jax
import jax.numpy as jnp
import numpy as np

from .spectral import NoiseSpectrum, PowerSpectrum

DB_TO_NEPER = math.log(10) / 10
STEPS_PER_100KM = 1000


class IntegrationError(ArithmeticError):
    """The Raman integrator produced a non-positive or non-finite power."""


@dataclass(frozen=True)
class FiberParams:
    """Standard single-mode fiber by default.

    Units: length km, attenuation dB/km, beta2 ps^2/km, gamma 1/(W km),
    raman_slope 1/(W km THz), raman_peak_shift THz, connector_loss dB.
    """

    length: float
    attenuation: float = 0.2
    beta2: float = -21.7
    gamma: float = 1.3
    raman_slope: float = 0.028
    raman_peak_shift: float = 13.0
    connector_loss: float = 0.5

    def __post_init__(self):
        if not self.length >= 0:
            raise ValueError("fiber length must be non-negative")
        if self.attenuation < 0:
            raise ValueError("attenuation must be non-negative")
        if self.raman_slope < 0:
            raise ValueError("raman_slope must be non-negative")
        if self.raman_peak_shift <= 0:
            raise ValueError("raman_peak_shift must be positive")
        if self.connector_loss < 0:
            raise ValueError("connector_loss must be non-negative")

    @property
    def alpha(self) -> float:
        """Power attenuation coefficient in 1/km."""
        return self.attenuation * DB_TO_NEPER

    def arrays(self) -> dict:
        """Traceable parameter pytree in the units the ``*_w`` kernels expect."""
        return {
            "length": jnp.asarray(float(self.length)),
            "alpha": jnp.asarray(self.alpha),
            "beta2": jnp.asarray(abs(self.beta2) * 1e-27),  # s^2/m
            "gamma": jnp.asarray(self.gamma * 1e-3),  # 1/(W m)
            "raman_slope": jnp.asarray(float(self.raman_slope)),
            "raman_peak_shift": jnp.asarray(float(self.raman_peak_shift)),
            "connector": jnp.asarray(10 ** (-self.connector_loss / 10)),
        }

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FiberParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown fiber parameters: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})


def steps_for(length_km: float) -> int:
    """Fixed RK4 step count keeping the step at or below 0.1 km."""
    return STEPS_PER_100KM * max(1, math.ceil(length_km / 100.0 - 1e-12))


# -- traceable kernels ------------------------------------------------------------

def raman_matrix(f_thz, slope, peak_shift):
    """K[n, m] = C_r * clip(f_m - f_n); antisymmetric, so Raman alone conserves power."""
    df = f_thz[None, :] - f_thz[:, None]
    return slope * jnp.clip(df, -peak_shift, peak_shift)


def srs_transfer_w(p_w, f_thz, fp: dict, n_steps: int):
    """Fiber output powers (W) for launch ``p_w``; connector loss included."""
    k = raman_matrix(f_thz, fp["raman_slope"], fp["raman_peak_shift"])
    a = fp["alpha"]
    h = fp["length"] / n_steps

    def rhs(z, q):
        return q * (k @ q) * jnp.exp(-a * z)

    def step(q, i):
        z = i * h
        k1 = rhs(z, q)
        k2 = rhs(z + h / 2, q + h / 2 * k1)
        k3 = rhs(z + h / 2, q + h / 2 * k2)
        k4 = rhs(z + h, q + h * k3)
        return q + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4), None

    q, _ = jax.lax.scan(step, p_w, jnp.arange(n_steps, dtype=p_w.dtype))
    return q * jnp.exp(-a * fp["length"]) * fp["connector"]


def loss_transfer_w(p_w, fp: dict):
    """Fiber output without Raman coupling."""
    return p_w * jnp.exp(-fp["alpha"] * fp["length"]) * fp["connector"]


def nli_w(p_w, f_thz, bandwidth_hz, fp: dict):
    """Per-channel NLI power (W) generated in one span, referred to the span input."""
    a = fp["alpha"] * 1e-3  # 1/m
    length = fp["length"] * 1e3
    beta2, gamma = fp["beta2"], fp["gamma"]
    l_eff = -jnp.expm1(-a * length) / a
    l_asym = 1 / a
    psd = p_w / bandwidth_hz
    df = jnp.abs(f_thz[:, None] - f_thz[None, :]) * 1e12
    c = jnp.pi ** 2 * l_asym * beta2 * bandwidth_hz
    xpm = jnp.arcsinh(c * (df + bandwidth_hz / 2)) - jnp.arcsinh(c * (df - bandwidth_hz / 2))
    spm = jnp.arcsinh(0.5 * jnp.pi ** 2 * l_asym * beta2 * bandwidth_hz ** 2)
    psi = jnp.where(df == 0, spm, xpm)
    eta = (16 / 27) * (gamma * l_eff) ** 2 / (2 * jnp.pi * beta2 * l_asym)
    g_nli = eta * psd * (psi @ psd ** 2)
    return g_nli * bandwidth_hz


# -- spectrum-level API -----------------------------------------------------------

def srs_propagate(launch: PowerSpectrum, params: FiberParams, n_steps: int | None = None) -> PowerSpectrum:
    """Propagate a launch spectrum through the span; result in mW."""
    p_w = jnp.asarray(launch.mw() * 1e-3)
    steps = steps_for(params.length) if n_steps is None else int(n_steps)
    out = np.asarray(jax.jit(srs_transfer_w, static_argnums=3)(
        p_w, jnp.asarray(launch.grid.freq_thz), params.arrays(), steps))
    if not np.all(np.isfinite(out)) or np.any(out <= 0):
        raise IntegrationError("Raman integration left the positive orthant; reduce the step")
    return PowerSpectrum(launch.grid, out * 1e3, "mW")


def nli_power(launch: PowerSpectrum, params: FiberParams) -> np.ndarray:
    """NLI power (W) per channel within the symbol-rate bandwidth."""
    if params.gamma == 0:
        return np.zeros(launch.grid.count)
    if params.attenuation <= 0 or params.length <= 0 or params.beta2 == 0:
        raise ValueError("the closed-form GN kernel needs attenuation, length and beta2 non-zero")
    grid = launch.grid
    return np.asarray(nli_w(jnp.asarray(launch.mw() * 1e-3), jnp.asarray(grid.freq_thz),
                            grid.bandwidth_hz, params.arrays()))


def propagate_noise(noise: NoiseSpectrum, params: FiberParams, launch: PowerSpectrum,
                    include_srs: bool = True) -> NoiseSpectrum:
    """Carry accumulated noise through the span with the signal's per-channel transfer."""
    if include_srs:
        out = srs_propagate(launch, params).mw()
    else:
        out = np.asarray(loss_transfer_w(jnp.asarray(launch.mw()), params.arrays()))
    ratio = out / launch.mw()
    return NoiseSpectrum(noise.grid, noise.ase * ratio, noise.nli * ratio, noise.impl)
