"""Acceptance criteria 1-9, one test each; every test prints a single PASS/FAIL line."""
import time
import warnings

import jax
import jax.numpy as jnp
import numpy as np
import pytest

from snropt import cascade as C
from snropt import network as N
from snropt import oracle
from snropt import surrogate as S
from snropt.cli import main
from snropt.edfa_noise import PLANCK, ase_from_nf, nf_from_ase
from snropt.fiber import FiberParams, nli_power, srs_propagate
from snropt.optimize import OptimizationSpec, optimize
from snropt.spectral import ChannelGrid, PowerSpectrum, default_grid

from test_fiber import gn_integral


@pytest.fixture
def verdict(capsys):
    def emit(n, checks, elapsed, limit=None, detail=""):
        ok = all(checks.values())
        if limit is not None:
            ok = ok and elapsed < limit
        failed = [k for k, v in checks.items() if not v]
        if limit is not None and elapsed >= limit:
            failed.append(f"runtime >= {limit:g} s")
        status = "PASS" if ok else "FAIL"
        line = f"ACCEPTANCE {n}: {status} ({elapsed:.1f} s) {detail}"
        if failed:
            line += " | failed: " + ", ".join(failed)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return emit


def test_criterion_1_noise_figure_relation(verdict):
    t = time.time()
    rng = np.random.default_rng(0)
    g = 10 ** rng.uniform(0, 4, 10_000)
    nf = (1 / g) * 10 ** rng.uniform(0, 4, 10_000)
    f = rng.uniform(190, 197, 10_000)
    rt = nf_from_ase(ase_from_nf(nf, g, f), g, f)
    worked = nf_from_ase(5.11788e-17, 100.0, 193.1)
    checks = {
        "round trip 1e-12": bool(np.max(np.abs(rt / nf - 1)) < 1e-12),
        "zero ASE -> 1/G": nf_from_ase(0.0, 2.0, 193.1) == 0.5,
        # the stated figures carry a rounded photon energy (2e-5 relative) and 6.0314 dB shown as 6.032
        "worked example": abs(worked / 4.01 - 1) < 5e-5 and abs(10 * np.log10(worked) - 6.032) < 1e-3,
        "worked inverse": abs(ase_from_nf(4.01, 100.0, 193.1) / 5.11788e-17 - 1) < 5e-5,
        "one photon -> 1 + 1/G": abs(nf_from_ase(100 * PLANCK * 193.1e12, 100.0, 193.1) - 1.01) < 1e-12,
    }
    verdict(1, checks, time.time() - t, 1.0)


def test_criterion_2_evaluation_arithmetic(verdict):
    t = time.time()
    truth = np.zeros((3, 2))
    pred = np.array([[1.0, 1.0], [2.0, 0.0], [0.0, 3.0]])
    r = S.report_from_predictions(pred, truth, [6.0, 7.0, 20.0], [15.0, 15.0, 18.0])
    same = S.report_from_predictions(truth, truth, [6.0, 7.0, 20.0], [15.0, 15.0, 18.0])
    checks = {
        "MAE example": S.mae([10.5, 11.8, 11], [10, 12, 11]) == 0.5,
        "bucket 6": r.mse_per_gav[6.0] == (1.5, 2),
        "bucket 7": r.mse_per_gav[7.0] == (1.5, 2),
        "bucket 20": r.mse_per_gav[20.0] == (4.5, 1),
        "empty bucket omitted": 12.0 not in r.mse_per_gav,
        "per-sample MAE": r.mae_values.tolist() == [1.0, 2.0, 3.0],
        "identity zero": all(m == 0 for m, _ in same.mse_per_gav.values()) and not same.mae_values.any(),
    }
    verdict(2, checks, time.time() - t)


def test_criterion_3_raman_solver(verdict):
    t = time.time()
    g2 = ChannelGrid((192.1, 196.0), spacing=3900.0)
    fp = FiberParams(100.0, attenuation=0.0, raman_slope=0.028, connector_loss=0.0)
    out = srs_propagate(PowerSpectrum(g2, [10.0, 10.0], "mW"), fp).mw()
    low = 20 / (1 + np.exp(-0.028 * 3.9 * 0.02 * 100))
    g = default_grid()
    rng = np.random.default_rng(3)
    launch = PowerSpectrum(g, rng.uniform(-2, 8, g.count))
    lossless = srs_propagate(launch, FiberParams(100.0, attenuation=0.0, connector_loss=0.0))
    plain = srs_propagate(launch, FiberParams(100.0, raman_slope=0.0, connector_loss=0.0)).mw()
    checks = {
        "logistic 1e-6": bool(abs(out[0] / low - 1) < 1e-6 and abs(out[1] / (20 - low) - 1) < 1e-6),
        "conservation 1e-9": abs(lossless.total_mw() / launch.total_mw() - 1) < 1e-9,
        "exponential 1e-12": bool(np.max(np.abs(plain / (launch.mw() * 1e-2) - 1)) < 1e-12),
    }
    verdict(3, checks, time.time() - t, 5.0, f"logistic {out[0]:.5f}/{out[1]:.5f} mW")


def test_criterion_4_gn_nli(verdict):
    t = time.time()
    g = default_grid()
    base = PowerSpectrum(g, np.linspace(-3, 4, g.count))
    fp = FiberParams(75.0)
    a = nli_power(base, fp)
    b = nli_power(PowerSpectrum(g, base.mw() * 3.7, "mW"), fp)
    comb = ChannelGrid((193.0, 193.1, 193.2))
    fp3 = FiberParams(80.0, connector_loss=0.0)
    launch = PowerSpectrum(comb, [1.0, 2.0, 1.5])
    ref = gn_integral(comb, launch.mw() * 1e-3, fp3)
    dev = np.max(np.abs(nli_power(launch, fp3) / ref - 1))
    checks = {
        "cubic": bool(np.allclose(b, a * 3.7 ** 3, rtol=1e-12, atol=0)),
        "gamma 0": bool(np.all(nli_power(base, FiberParams(75.0, gamma=0.0)) == 0)),
        "brute force 15%": bool(dev < 0.15),
    }
    verdict(4, checks, time.time() - t, 30.0, f"closed form vs integral {100 * dev:.1f}%")


def test_criterion_5_gradients(verdict):
    t = time.time()
    base = C.load_link()
    rng = np.random.default_rng(5)
    p = jnp.asarray(10 ** (rng.uniform(-3, 0, 40) / 10) * 1e-3)
    w = jnp.asarray(rng.normal(size=40))
    worst = {}
    for srs in (False, True):
        for nli in (False, True):
            fn, prm = C.link_function(base.with_flags(include_srs=srs, include_nli=nli))
            f = jax.jit(lambda x: jnp.dot(w, fn(x, prm)["snr_db"]))
            grad = jax.grad(f)(p)
            errs = []
            for j in (0, 7, 19, 28, 39):
                h = 1e-6 * float(p[j])
                e = jnp.zeros(40).at[j].set(h)
                fd = float(f(p + e) - f(p - e)) / (2 * h)
                errs.append(abs(float(grad[j]) - fd) / abs(fd))
            worst[(srs, nli)] = max(errs)
    checks = {f"srs={s} nli={n}": e < 1e-3 for (s, n), e in worst.items()}
    verdict(5, checks, time.time() - t, 120.0, f"max rel err {max(worst.values()):.2e}")


def test_criterion_6_surrogate_quality(verdict, default_params):
    t = time.time()
    train = oracle.generate_dataset(default_params, 1, 125)
    held = oracle.generate_dataset(default_params, 2, 30)
    other = oracle.generate_dataset(oracle.perturb_unit(default_params, 7, 0.05), 2, 30)
    checks, parts = {}, []
    for kind in ("gain", "nf"):
        model = S.train(train, kind, seed=0)
        intra = S.evaluate(model, held).mse_per_gav
        inter = S.evaluate(model, other, "inter").mse_per_gav
        low = max(m for c, (m, _) in intra.items() if c < 15)
        high = max(m for c, (m, _) in intra.items() if c >= 20)
        deg = max(inter[c][0] - m for c, (m, _) in intra.items())
        checks[f"{kind} intra G_av<15"] = low <= 0.07
        checks[f"{kind} intra G_av>=20"] = high <= 0.02
        checks[f"{kind} inter degradation"] = deg <= 0.05
        parts.append(f"{kind}: intra max {low:.4f}/{high:.4f}, degradation max {deg:.4f}")
    assert len(train.samples) == 5000
    verdict(6, checks, time.time() - t, 600.0, "dB^2 " + "; ".join(parts))


def test_criterion_7_optimization_regression(verdict):
    t = time.time()
    link = C.load_link()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", S.EnvelopeWarning)
        res = {s: optimize(link, OptimizationSpec(s)) for s in
               ("flat-input-reference", "flat-received-power", "flat-snr-linear", "flat-snr-full")}
    flat, full = res["flat-input-reference"], res["flat-snr-full"]
    lin, rp = res["flat-snr-linear"], res["flat-received-power"]
    checks = {
        "min SNR +0.5 dB": full.min_snr >= flat.min_snr + 0.5,
        "excursion -50%": full.excursion <= 0.5 * flat.excursion,
        "full >= linear": full.min_snr >= lin.min_snr - 0.05,
        "linear >= received-power": lin.min_snr >= rp.min_snr - 0.05,
    }
    detail = ", ".join(f"{k}: {v.min_snr:.2f} dB / {v.excursion:.2f} dB" for k, v in res.items())
    verdict(7, checks, time.time() - t, 180.0, detail)


def test_criterion_8_network(verdict):
    t = time.time()
    top = N.load_topology()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", S.EnvelopeWarning)
        rep = N.run_network(top, spec=OptimizationSpec(iterations=200, refine_iterations=100))
    elapsed = time.time() - t
    checks = {"no failures": not any(r.error for r in rep.results)}
    gaps = {}
    for ln in top.links:
        i = ln.id
        full_none = rep.get(i, "flat-snr-full", "none").min_snr
        full_ideal = rep.get(i, "flat-snr-full", "ideal").min_snr
        if len(ln.spans_km) <= 3:
            gaps[i] = abs(full_none - full_ideal)
            checks[f"(a) link {i}"] = gaps[i] <= 0.3
        for gff in ("none", "ideal"):
            checks[f"(b) link {i} {gff}"] = (rep.get(i, "flat-snr-full", gff).min_snr
                                             >= rep.get(i, "flat-snr-srs", gff).min_snr)
        checks[f"(c) link {i}"] = full_ideal >= rep.get(i, "flat-input-reference", "ideal").min_snr
    worst = max(gaps, key=gaps.get)
    verdict(8, checks, elapsed, 900.0, f"largest GFF gap {gaps[worst]:.2f} dB on link {worst}")


def test_criterion_9_determinism(verdict, tmp_path):
    t = time.time()
    top = N.Topology((N.TopologyLink(1, "a", "b", 60.0, (60.0,)),))
    N.write_topology(tmp_path / "top.csv", top)
    quick = ["--iterations", "10", "--refine", "5", "--seed", "4"]

    def commands(d):
        return [
            ["gen-dataset", "--out", f"{d}/ds.csv", "--profiles", "3", "--seed", "3", "--perturb", "0.05"],
            ["train", "--dataset", f"{d}/ds.csv", "--kind", "gain", "--out", f"{d}/m.json", "--epochs", "5"],
            ["eval-model", "--model", f"{d}/m.json", "--dataset", f"{d}/ds.csv", "--out", f"{d}/ev"],
            ["predict", "--out", f"{d}/snr.csv"],
            ["optimize", "--strategy", "flat-snr-full", "--out", f"{d}/p.csv", "--trace", f"{d}/t.csv", *quick],
            ["sweep-power", "--powers", "17,18", "--out", f"{d}/sw.csv", *quick],
            ["network", "--topology", str(tmp_path / "top.csv"), "--out", f"{d}/net", *quick],
        ]
    for run in ("a", "b"):
        (tmp_path / run).mkdir()
        for cmd in commands(tmp_path / run):
            assert main(cmd) == 0, cmd
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    checks = {str(f): (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files}
    verdict(9, checks, time.time() - t, detail=f"{len(files)} output files compared")
