"""Launch-profile optimization.

The free parameters are per-channel dB offsets; a candidate launch spectrum is
their linear form rescaled to the first amplifier's total input power, so the
power constraint holds by construction.  Adam runs first on a soft-min of the
SNR (which spreads gradient over the worst few channels) and then refines on
the hard minimum with a decaying step.  Every iterate is also scored with the
full model (Raman and NLI on) and the best of those is returned.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import jax
import jax.numpy as jnp
import numpy as np

from . import _fileio
from .cascade import LinkConfig, _run, link_models, params_of, structure_of
from .spectral import PowerSpectrum

# strategy -> (Raman on, NLI on, default cost) for the model used while optimizing
STRATEGIES = {
    "flat-input-reference": None,
    "flat-received-power": (True, False, "psd-flatness"),
    "flat-snr-linear": (False, False, "min-snr"),
    "flat-snr-srs": (True, False, "min-snr"),
    "flat-snr-full": (True, True, "min-snr"),
}
COSTS = ("min-snr", "throughput", "psd-flatness")


@dataclass(frozen=True)
class OptimizationSpec:
    strategy: str = "flat-snr-full"
    cost: str | None = None  # None: the strategy's default
    iterations: int = 500
    learning_rate: float = 0.05
    softmin_temperature: float = 10.0
    refine_iterations: int = 150
    tolerance: float = 1e-6
    window: int = 20
    seed: int = 0
    init_jitter: float = 0.0  # dB std of a seeded random start; 0 starts flat

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; choose from {sorted(STRATEGIES)}")
        if self.cost is not None and self.cost not in COSTS:
            raise ValueError(f"unknown cost {self.cost!r}; choose from {COSTS}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")

    @property
    def cost_name(self) -> str:
        if self.cost is not None:
            return self.cost
        return "min-snr" if STRATEGIES[self.strategy] is None else STRATEGIES[self.strategy][2]


@dataclass
class Trace:
    cost: list = field(default_factory=list)
    min_snr: list = field(default_factory=list)
    excursion: list = field(default_factory=list)

    def __len__(self):
        return len(self.cost)

    def append(self, cost, min_snr, excursion):
        self.cost.append(float(cost))
        self.min_snr.append(float(min_snr))
        self.excursion.append(float(excursion))


@dataclass
class OptimizationResult:
    input_psd: PowerSpectrum
    trace: Trace
    converged: bool
    full_cost: float
    min_snr: float
    excursion: float
    best_iteration: int


class NonFiniteCostError(ArithmeticError):
    def __init__(self, iteration: int, trace: Trace):
        super().__init__(f"cost became non-finite at iteration {iteration}")
        self.iteration = iteration
        self.trace = trace


# -- costs -------------------------------------------------------------------------------

def cost_min_snr(snr_db, temperature: float | None = None):
    """Negated minimum SNR; with ``temperature`` the log-mean-exp soft minimum.

    The soft version is normalized by the channel count so that equal values
    give exactly that value back.
    """
    snr_db = jnp.asarray(snr_db)
    if temperature is None:
        return -jnp.min(snr_db)
    n = snr_db.shape[-1]
    return (jax.nn.logsumexp(-temperature * snr_db) - math.log(n)) / temperature


def cost_throughput(snr_linear):
    return -jnp.sum(jnp.log2(1 + jnp.asarray(snr_linear)))


def cost_psd_flatness(psd_db):
    psd_db = jnp.asarray(psd_db)
    return jnp.mean((psd_db - jnp.mean(psd_db)) ** 2)


def _cost(name, out, temperature):
    if name == "min-snr":
        return cost_min_snr(out["snr_db"], temperature)
    if name == "throughput":
        return cost_throughput(10 ** (out["snr_db"] / 10))
    return cost_psd_flatness(10 * jnp.log10(out["p"] / 1e-3))


def candidate_w(theta, total_w):
    lin = 10 ** (theta / 10)
    return lin * (total_w / jnp.sum(lin))


# -- compiled pieces ---------------------------------------------------------------------

@lru_cache(maxsize=None)
def _evaluator(structure, bandwidth, cost_name):
    """Full-model scoring of a parameter vector: (cost, min SNR, SNR excursion)."""
    def score(theta, prm):
        out = _run(structure, bandwidth, candidate_w(theta, prm["first_w"]), prm)
        snr = out["snr_db"]
        return _cost(cost_name, out, None), jnp.min(snr), jnp.max(snr) - jnp.min(snr)
    return jax.jit(score)


@lru_cache(maxsize=None)
def _stepper(structure, bandwidth, cost_name, temperature):
    """One Adam step; also returns the hard-cost metrics of the model at ``theta``."""
    def objective(theta, prm):
        out = _run(structure, bandwidth, candidate_w(theta, prm["first_w"]), prm)
        snr = out["snr_db"]
        metrics = (_cost(cost_name, out, None), jnp.min(snr), jnp.max(snr) - jnp.min(snr))
        return _cost(cost_name, out, temperature), metrics

    def step(theta, m, v, t, lr, prm):
        (c, metrics), g = jax.value_and_grad(objective, has_aux=True)(theta, prm)
        t = t + 1
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g ** 2
        update = lr * (m / (1 - 0.9 ** t)) / (jnp.sqrt(v / (1 - 0.999 ** t)) + 1e-12)
        return theta - update, m, v, t, c, metrics
    return jax.jit(step)


def objective_function(link: LinkConfig, spec: OptimizationSpec, models: dict | None = None,
                       soft: bool = True):
    """``(f, params)`` where ``f(theta, params)`` is the cost minimized for ``spec``."""
    opt_link = _strategy_link(link, spec)
    ms = link_models(opt_link, models)
    structure, bw = structure_of(opt_link, ms), link.grid.bandwidth_hz
    temperature = spec.softmin_temperature if soft else None

    def f(theta, prm):
        return _cost(spec.cost_name, _run(structure, bw, candidate_w(theta, prm["first_w"]), prm),
                     temperature)
    return f, params_of(opt_link, ms)


def full_link(link: LinkConfig) -> LinkConfig:
    return link.with_flags(include_srs=True, include_nli=True)


def _strategy_link(link, spec):
    srs, nli, _ = STRATEGIES[spec.strategy]
    return link.with_flags(include_srs=srs, include_nli=nli)


# -- driver ------------------------------------------------------------------------------

def optimize(link: LinkConfig, spec: OptimizationSpec, models: dict | None = None) -> OptimizationResult:
    """Optimize the launch profile of ``link`` under ``spec``; deterministic given the seed."""
    n = link.grid.count
    full = full_link(link)
    ms_full = link_models(full, models)
    full_prm = params_of(full, ms_full)
    score = _evaluator(structure_of(full, ms_full), link.grid.bandwidth_hz, spec.cost_name)
    total_w = full_prm["first_w"]
    trace = Trace()

    theta = jnp.zeros(n)
    if spec.init_jitter > 0:
        theta = jnp.asarray(np.random.default_rng(spec.seed).normal(0.0, spec.init_jitter, n))

    best = {"cost": math.inf, "theta": theta, "iteration": 0}

    def record(th, cost_value, iteration, metrics=None):
        if metrics is None:
            metrics = score(th, full_prm)
        full_cost, mn, exc = (float(v) for v in metrics)
        trace.append(cost_value, mn, exc)
        if not (math.isfinite(cost_value) and math.isfinite(full_cost)):
            raise NonFiniteCostError(iteration, trace)
        if full_cost < best["cost"]:
            best.update(cost=full_cost, theta=th, iteration=iteration, min_snr=mn, excursion=exc)
        return full_cost

    converged = True
    if STRATEGIES[spec.strategy] is None:
        record(theta, float(score(theta, full_prm)[0]), 0)
    else:
        opt_link = _strategy_link(link, spec)
        ms = link_models(opt_link, models)
        structure, bw = structure_of(opt_link, ms), link.grid.bandwidth_hz
        prm = params_of(opt_link, ms)
        # when optimizing on the full model its scores come for free with the gradient
        same_model = structure == structure_of(full, ms_full)
        soft = spec.softmin_temperature if spec.cost_name == "min-snr" else None
        phases = [(_stepper(structure, bw, spec.cost_name, soft), spec.iterations, False)]
        if spec.cost_name == "min-snr" and spec.refine_iterations > 0:
            phases.append((_stepper(structure, bw, spec.cost_name, None), spec.refine_iterations, True))
        it = 0
        for step, budget, decay in phases:
            m = jnp.zeros(n)
            v = jnp.zeros(n)
            t = jnp.asarray(0.0)
            history = []
            phase_converged = False
            for k in range(budget):
                lr = spec.learning_rate * (1 - k / budget) if decay else spec.learning_rate
                new_theta, m, v, t, c, metrics = step(theta, m, v, t, lr, prm)
                record(theta, float(c), it, metrics if same_model else None)
                history.append(float(c))
                theta = new_theta
                it += 1
                if len(history) > spec.window:
                    ref = history[-1 - spec.window]
                    if abs(history[-1] - ref) <= spec.tolerance * max(abs(ref), 1e-12):
                        phase_converged = True
                        break
            if not decay:
                converged = phase_converged
        # the final iterate has not been scored yet
        record(theta, float(score(theta, full_prm)[0]), it)

    p = np.asarray(candidate_w(best["theta"], total_w)) * 1e3
    psd = PowerSpectrum(link.grid, 10 * np.log10(p), "dBm")
    return OptimizationResult(psd, trace, converged, best["cost"], best["min_snr"], best["excursion"],
                              best["iteration"])


def write_trace(path, trace: Trace) -> None:
    rows = zip(range(len(trace)), trace.cost, trace.min_snr, trace.excursion)
    _fileio.write_table(path, "trace", ["iteration", "cost", "min_snr_dB", "excursion_dB"], rows)


def read_trace(path) -> Trace:
    _, rows = _fileio.read_table(path, "trace")
    tr = Trace()
    for r in rows:
        tr.append(float(r[1]), float(r[2]), float(r[3]))
    return tr
