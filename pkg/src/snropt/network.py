"""Per-link optimization over a network topology.

Nodes are assumed to terminate the optical path (OEO at every node), so each
link is optimized on its own.  The packaged topology is the German core
network with its random span-length draw as published; node names are not
part of that table, so its endpoint columns are empty.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

from . import _fileio
from .cascade import LinkConfig, SpanConfig, simulate
from .fiber import FiberParams
from .optimize import OptimizationSpec, optimize
from .spectral import PowerSpectrum

log = logging.getLogger(__name__)

SPAN_TOLERANCE_KM = 1.0


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class TopologyLink:
    id: int
    node_a: str
    node_b: str
    total_km: float
    spans_km: tuple[float, ...]


@dataclass(frozen=True)
class Topology:
    links: tuple[TopologyLink, ...]

    @property
    def nodes(self) -> tuple[str, ...]:
        return tuple(sorted({n for ln in self.links for n in (ln.node_a, ln.node_b) if n}))

    def link(self, link_id: int) -> TopologyLink:
        for ln in self.links:
            if ln.id == link_id:
                return ln
        raise KeyError(f"no link {link_id}")


def _parse_spans(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def load_topology(path=None) -> Topology:
    """Read a topology table; the packaged German-network fixture when ``path`` is None."""
    if path is None:
        with resources.as_file(resources.files("snropt").joinpath("data/german_topology.csv")) as p:
            return load_topology(p)
    cols, rows = _fileio.read_table(path, "topology")
    idx = {c: i for i, c in enumerate(cols)}
    links = []
    for r in rows:
        spans = _parse_spans(r[idx["spans_km"]])
        total = float(r[idx["total_km"]]) if "total_km" in idx else sum(spans)
        link_id = int(r[idx["id"]])
        if not spans:
            raise TopologyError(f"link {link_id}: no spans listed")
        if abs(sum(spans) - total) > SPAN_TOLERANCE_KM:
            raise TopologyError(f"link {link_id}: spans sum to {sum(spans):g} km, "
                                f"total says {total:g} km")
        links.append(TopologyLink(link_id, r[idx["node_a"]], r[idx["node_b"]], total, spans))
    return Topology(tuple(sorted(links, key=lambda ln: ln.id)))


def write_topology(path, topology: Topology) -> None:
    rows = [(ln.id, ln.node_a, ln.node_b, ln.total_km, ",".join(f"{s:g}" for s in ln.spans_km))
            for ln in topology.links]
    _fileio.write_table(path, "topology", ["id", "node_a", "node_b", "total_km", "spans_km"], rows)


def random_spans(seed: int, n_spans: int, low: float = 36.0, high: float = 100.0) -> tuple[float, ...]:
    """Whole-km span lengths drawn uniformly from [low, high]."""
    rng = np.random.default_rng(seed)
    return tuple(float(v) for v in rng.integers(int(low), int(high), n_spans, endpoint=True))


def random_topology(seed: int, n_links: int, max_spans: int = 5) -> Topology:
    rng = np.random.default_rng(seed)
    links = []
    for i, child in enumerate(rng.spawn(n_links)):
        n = int(child.integers(1, max_spans, endpoint=True))
        spans = tuple(float(v) for v in child.integers(36, 100, n, endpoint=True))
        links.append(TopologyLink(i + 1, "", "", sum(spans), spans))
    links.sort(key=lambda ln: ln.total_km)
    return Topology(tuple(replace(ln, id=i + 1) for i, ln in enumerate(links)))


def link_config(link: TopologyLink, launch_power: float = 18.0, gff: str = "none",
                model_id: str = "A1", first_input: float = -2.0, fiber: dict | None = None,
                b2b_snr=None, model_dir=None) -> LinkConfig:
    fiber = fiber or {}
    spans = tuple(SpanConfig(FiberParams(length=float(L), **fiber), model_id, launch_power,
                             True, True, gff) for L in link.spans_km)
    return LinkConfig(spans, first_input, b2b_snr, model_dir=model_dir)


# -- runs --------------------------------------------------------------------------------

@dataclass
class LinkResult:
    link_id: int
    strategy: str
    gff: str
    distance_km: float
    n_spans: int
    min_snr: float = math.nan
    excursion: float = math.nan
    profile_dbm: np.ndarray | None = None
    error: str | None = None


@dataclass
class NetworkReport:
    results: list = field(default_factory=list)
    launch_power: float = 18.0

    def get(self, link_id: int, strategy: str, gff: str) -> LinkResult:
        for r in self.results:
            if (r.link_id, r.strategy, r.gff) == (link_id, strategy, gff):
                return r
        raise KeyError((link_id, strategy, gff))

    def link_ids(self) -> list[int]:
        return sorted({r.link_id for r in self.results})

    def penalty(self, strategy: str, gff: str, reference: str = "flat-snr-full",
                reference_gff: str | None = None) -> dict[int, float]:
        """Min-SNR loss of ``strategy`` relative to ``reference`` per link (dB, positive = worse)."""
        ref_gff = gff if reference_gff is None else reference_gff
        return {i: self.get(i, reference, ref_gff).min_snr - self.get(i, strategy, gff).min_snr
                for i in self.link_ids()}


def _run_link(link: TopologyLink, strategies, gff_modes, launch_power, spec, models, link_kwargs):
    out = []
    for gff in gff_modes:
        cfg = link_config(link, launch_power, gff, **link_kwargs)
        for strategy in strategies:
            res = LinkResult(link.id, strategy, gff, link.total_km, len(link.spans_km))
            try:
                opt = optimize(cfg, replace(spec, strategy=strategy), models)
                res.min_snr, res.excursion = opt.min_snr, opt.excursion
                res.profile_dbm = opt.input_psd.dbm().copy()
            except Exception as exc:  # recorded; the run carries on
                log.warning("link %d %s/%s failed: %s", link.id, strategy, gff, exc)
                res.error = f"{type(exc).__name__}: {exc}"
            out.append(res)
    return out


def run_network(topology: Topology, strategies=("flat-input-reference", "flat-snr-srs", "flat-snr-full"),
                gff_modes=("none", "ideal"), launch_power: float = 18.0,
                spec: OptimizationSpec | None = None, models: dict | None = None, threads: int = 1,
                **link_kwargs) -> NetworkReport:
    """Optimize every link under every (strategy, gff mode); results ordered by link id."""
    spec = spec or OptimizationSpec()
    work = [(ln, strategies, gff_modes, launch_power, spec, models, link_kwargs) for ln in topology.links]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            chunks = list(pool.map(lambda a: _run_link(*a), work))
    else:
        chunks = [_run_link(*a) for a in work]
    return NetworkReport([r for chunk in chunks for r in chunk], launch_power)


def resimulate(result: LinkResult, topology: Topology, launch_power: float = 18.0,
               models: dict | None = None, **link_kwargs):
    """Full-model report for a stored optimized profile."""
    cfg = link_config(topology.link(result.link_id), launch_power, result.gff, **link_kwargs)
    return simulate(cfg, PowerSpectrum(cfg.grid, result.profile_dbm), models)


def sweep_launch_power(link: LinkConfig, powers, strategies=("flat-snr-srs", "flat-snr-full"),
                       spec: OptimizationSpec | None = None, models: dict | None = None) -> list[dict]:
    """Min-SNR per (launch power, strategy); every span is driven at the swept power."""
    spec = spec or OptimizationSpec()
    rows = []
    for p in powers:
        cfg = replace(link, spans=tuple(replace(s, edfa_target_output=float(p)) for s in link.spans))
        for strategy in strategies:
            opt = optimize(cfg, replace(spec, strategy=strategy), models)
            rows.append({"power_dBm": float(p), "strategy": strategy, "min_snr_dB": opt.min_snr,
                         "excursion_dB": opt.excursion})
    return rows


def sweep_optimum(rows: list[dict]) -> dict[str, float]:
    best = {}
    for r in rows:
        if r["strategy"] not in best or r["min_snr_dB"] > best[r["strategy"]][1]:
            best[r["strategy"]] = (r["power_dBm"], r["min_snr_dB"])
    return {k: v[0] for k, v in best.items()}


# -- files -------------------------------------------------------------------------------

def write_network_report(path, report: NetworkReport) -> None:
    rows = [(r.link_id, r.strategy, r.gff, r.distance_km, r.n_spans, r.min_snr, r.excursion,
             r.error or "") for r in report.results]
    _fileio.write_table(path, "network-report", ["link", "strategy", "gff_mode", "distance_km", "n_spans",
                                                 "min_snr_dB", "excursion_dB", "error"], rows,
                        [f"launch_power_dBm={report.launch_power!r}"])


def write_network_profiles(path, report: NetworkReport) -> None:
    n = next((len(r.profile_dbm) for r in report.results if r.profile_dbm is not None), 0)
    rows = [(r.link_id, r.strategy, r.gff, *r.profile_dbm.tolist()) for r in report.results
            if r.profile_dbm is not None]
    _fileio.write_table(path, "network-profiles", ["link", "strategy", "gff_mode"]
                        + [f"p_{i:02d}_dBm" for i in range(n)], rows)


def write_sweep(path, rows: list[dict]) -> None:
    _fileio.write_table(path, "sweep", ["power_dBm", "strategy", "min_snr_dB", "excursion_dB"],
                        [(r["power_dBm"], r["strategy"], r["min_snr_dB"], r["excursion_dB"]) for r in rows])
