import warnings

import numpy as np
import pytest

from snropt import network as N
from snropt.optimize import OptimizationSpec
from snropt.surrogate import EnvelopeWarning

QUICK = OptimizationSpec(iterations=40, refine_iterations=10)


@pytest.fixture(scope="module")
def topology():
    return N.load_topology()


def test_table_fixture(topology):
    assert len(topology.links) == 26
    assert [ln.id for ln in topology.links] == list(range(1, 27))
    totals = [ln.total_km for ln in topology.links]
    assert totals == sorted(totals)
    assert topology.link(12).total_km == 144 and topology.link(12).spans_km == (86, 58)
    assert topology.link(26).total_km == 353 and topology.link(26).spans_km == (62, 88, 63, 76, 64)
    assert topology.link(1).spans_km == (36,)
    assert min(totals) == 36 and max(totals) == 353


def test_span_mismatch_names_link(tmp_path):
    bad = N.Topology((N.TopologyLink(7, "a", "b", 150.0, (80.0, 60.0)),))
    N.write_topology(tmp_path / "t.csv", bad)
    with pytest.raises(N.TopologyError, match="link 7"):
        N.load_topology(tmp_path / "t.csv")


def test_topology_round_trip(tmp_path, topology):
    N.write_topology(tmp_path / "t.csv", topology)
    assert N.load_topology(tmp_path / "t.csv") == topology


def test_random_spans():
    a = N.random_spans(4, 200)
    assert a == N.random_spans(4, 200)
    assert min(a) >= 36 and max(a) <= 100
    assert all(float(v).is_integer() for v in a)
    t = N.random_topology(2, 10)
    assert [ln.id for ln in t.links] == list(range(1, 11))
    assert all(abs(sum(ln.spans_km) - ln.total_km) < 1e-9 for ln in t.links)


def small_topology():
    return N.Topology((N.TopologyLink(1, "x", "y", 60.0, (60.0,)),
                       N.TopologyLink(2, "y", "z", 130.0, (70.0, 60.0))))


def test_run_records_and_resimulates():
    top = small_topology()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EnvelopeWarning)
        rep = N.run_network(top, spec=QUICK)
        assert len(rep.results) == 2 * 3 * 2
        for r in rep.results:
            assert r.error is None
            again = N.resimulate(r, top)
            assert again.min_snr == pytest.approx(r.min_snr, abs=1e-9)
            assert again.excursion == pytest.approx(r.excursion, abs=1e-9)
    # NLI-blind optimization is never better once scored with the full model
    assert all(v >= -1e-9 for v in rep.penalty("flat-snr-srs", "none").values())


def test_serial_and_threaded_identical():
    top = small_topology()
    kw = dict(strategies=("flat-snr-full",), gff_modes=("none",), spec=QUICK, model_id="stub:nf=5")
    a = N.run_network(top, **kw)
    b = N.run_network(top, threads=2, **kw)
    assert [(r.link_id, r.min_snr) for r in a.results] == [(r.link_id, r.min_snr) for r in b.results]
    for ra, rb in zip(a.results, b.results):
        assert np.array_equal(ra.profile_dbm, rb.profile_dbm)


def test_failures_recorded_and_run_continues(tmp_path):
    rep = N.run_network(small_topology(), strategies=("flat-input-reference",), gff_modes=("none",),
                        model_id="no-such-model", model_dir=str(tmp_path))
    assert len(rep.results) == 2
    assert all(r.error for r in rep.results)
    N.write_network_report(tmp_path / "r.csv", rep)


def test_report_files(tmp_path):
    rep = N.run_network(small_topology(), strategies=("flat-input-reference",), gff_modes=("none",),
                        model_id="stub:nf=5")
    N.write_network_report(tmp_path / "r.csv", rep)
    N.write_network_profiles(tmp_path / "p.csv", rep)
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0].startswith("# snropt:network-report v1")
    assert sum(1 for ln in lines if not ln.startswith("#")) == 3


@pytest.mark.slow
def test_launch_power_sweep(topology):
    cfg = N.link_config(topology.link(12))
    powers = [8.0, 11.0, 13.0, 15.0, 18.0]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EnvelopeWarning)
        rows = N.sweep_launch_power(cfg, powers, spec=OptimizationSpec(iterations=150, refine_iterations=50))
    full = [r["min_snr_dB"] for r in rows if r["strategy"] == "flat-snr-full"]
    blind = [r["min_snr_dB"] for r in rows if r["strategy"] == "flat-snr-srs"]
    peak = int(np.argmax(full))
    assert all(np.diff(full[:peak + 1]) > 0) and all(np.diff(full[peak:]) < 0)
    # ASE-limited end: ignoring NLI costs nothing
    assert abs(full[0] - blind[0]) < 0.05
    best = N.sweep_optimum(rows)
    assert best["flat-snr-full"] <= best["flat-snr-srs"]
