import subprocess
import sys
import time

import numpy as np
import pytest

from snropt import cascade as C
from snropt import network as N
from snropt.cli import main
from snropt.fiber import FiberParams
from snropt.spectral import read_spectrum


def zero_link(path):
    link = C.LinkConfig([C.SpanConfig(FiberParams(0.0), "stub:noiseless", 18.0, False, False)], -2.0)
    C.save_link(path, link)
    return link


def data_rows(path):
    return [ln for ln in path.read_text().splitlines() if ln and not ln.startswith("#")][1:]


def test_help_documents_formats():
    out = subprocess.run([sys.executable, "-m", "snropt.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for kind in ("spectrum", "dataset", "snr-report", "trace", "topology", "network-report", "link config"):
        assert kind in out.stdout


def test_predict_identity_link_gives_b2b(tmp_path):
    link = zero_link(tmp_path / "link.json")
    assert main(["predict", "--link", str(tmp_path / "link.json"), "--out", str(tmp_path / "r.csv")]) == 0
    snr = C.read_report(tmp_path / "r.csv")["snr_dB"]
    assert np.allclose(snr, link.b2b_snr, atol=1e-12, rtol=0)


def test_optimize_reference_is_flat(tmp_path, capsys):
    assert main(["optimize", "--strategy", "flat-input-reference", "--out", str(tmp_path / "p.csv"),
                 "--trace", str(tmp_path / "t.csv")]) == 0
    p = read_spectrum(tmp_path / "p.csv")
    assert np.ptp(p.dbm()) < 1e-9
    assert p.total_dbm() == pytest.approx(-2.0, abs=1e-9)
    assert len(data_rows(tmp_path / "t.csv")) == 1
    assert "min SNR" in capsys.readouterr().out


def test_missing_file_one_line_error(tmp_path, capsys):
    code = main(["predict", "--link", str(tmp_path / "nope.json"), "--out", str(tmp_path / "r.csv")])
    assert code == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    assert "reading link config" in err[0] and "nope.json" in err[0]


def test_unknown_version_rejected(tmp_path, capsys):
    f = tmp_path / "in.csv"
    f.write_text("# snropt:spectrum v2\nfrequency_THz,power_dBm\n")
    assert main(["predict", "--input", str(f), "--out", str(tmp_path / "r.csv")]) == 1
    assert "reading input spectrum" in capsys.readouterr().err


def test_config_dir_lookup(tmp_path, monkeypatch):
    zero_link(tmp_path / "cfg.json")
    monkeypatch.setenv("SNROPT_CONFIG_DIR", str(tmp_path))
    monkeypatch.chdir(tmp_path.parent)
    assert main(["predict", "--link", "cfg.json", "--out", str(tmp_path / "r.csv")]) == 0


def test_dataset_and_eval_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["gen-dataset", "--out", str(tmp_path / f"{name}.csv"), "--profiles", "3",
                     "--seed", "5", "--perturb", "0.05"]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert len(data_rows(tmp_path / "a.csv")) == 3 * 40


def test_train_and_eval(tmp_path):
    ds = tmp_path / "d.csv"
    assert main(["gen-dataset", "--out", str(ds), "--profiles", "4", "--seed", "2"]) == 0
    for name in ("m1", "m2"):
        assert main(["train", "--dataset", str(ds), "--kind", "nf", "--out", str(tmp_path / f"{name}.json"),
                     "--epochs", "5", "--hidden", "16"]) == 0
    assert (tmp_path / "m1.json").read_bytes() == (tmp_path / "m2.json").read_bytes()
    assert main(["eval-model", "--model", str(tmp_path / "m1.json"), "--dataset", str(ds),
                 "--out", str(tmp_path / "ev")]) == 0
    assert data_rows(tmp_path / "ev_mse.csv") and data_rows(tmp_path / "ev_mae.csv")


def test_optimize_deterministic(tmp_path):
    args = ["optimize", "--strategy", "flat-snr-srs", "--iterations", "15", "--refine", "5", "--seed", "1"]
    for name in ("a", "b"):
        assert main(args + ["--out", str(tmp_path / f"{name}.csv"), "--trace", str(tmp_path / f"{name}_t.csv")]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a_t.csv").read_bytes() == (tmp_path / "b_t.csv").read_bytes()


def test_sweep_and_network_commands(tmp_path):
    assert main(["sweep-power", "--powers", "16,18", "--iterations", "5", "--refine", "2",
                 "--out", str(tmp_path / "s.csv")]) == 0
    assert len(data_rows(tmp_path / "s.csv")) == 4
    top = N.Topology((N.TopologyLink(1, "a", "b", 50.0, (50.0,)),))
    N.write_topology(tmp_path / "t.csv", top)
    assert main(["network", "--topology", str(tmp_path / "t.csv"), "--iterations", "5", "--refine", "2",
                 "--strategies", "flat-input-reference,flat-snr-full", "--gff", "none",
                 "--out", str(tmp_path / "net")]) == 0
    assert len(data_rows(tmp_path / "net" / "network_report.csv")) == 2
    assert (tmp_path / "net" / "network_profiles.csv").exists()


def test_plot(tmp_path):
    pytest.importorskip("matplotlib")
    assert main(["predict", "--out", str(tmp_path / "r.csv")]) == 0
    assert main(["plot", "--report", str(tmp_path / "r.csv"), "--out", str(tmp_path / "r.svg")]) == 0
    assert (tmp_path / "r.svg").read_text().lstrip().startswith("<?xml")


@pytest.mark.slow
def test_pipeline_smoke(tmp_path):
    t0 = time.time()
    ds, models = tmp_path / "a1.csv", tmp_path / "models"
    assert main(["gen-dataset", "--out", str(ds), "--profiles", "200", "--seed", "11"]) == 0
    for kind in ("gain", "nf"):
        assert main(["train", "--dataset", str(ds), "--kind", kind, "--out", str(models / f"A1_{kind}.json")]) == 0
    assert main(["predict", "--models", str(models), "--out", str(tmp_path / "flat.csv")]) == 0
    assert main(["optimize", "--models", str(models), "--out", str(tmp_path / "opt.csv")]) == 0
    assert main(["predict", "--models", str(models), "--input", str(tmp_path / "opt.csv"),
                 "--out", str(tmp_path / "after.csv")]) == 0
    elapsed = time.time() - t0
    flat = C.read_report(tmp_path / "flat.csv")["snr_dB"].min()
    after = C.read_report(tmp_path / "after.csv")["snr_dB"].min()
    assert after > flat
    assert elapsed < 300
