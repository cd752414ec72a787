"""Static figures drawn from the CSV outputs (optional; needs matplotlib)."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from . import _fileio


def _kind(path) -> str:
    first = Path(path).read_text().split("\n", 1)[0]
    if not first.startswith("# snropt:"):
        raise _fileio.FileFormatError(f"{path}: not an snropt table")
    return first[len("# snropt:"):].split()[0]


def _columns(path, kind):
    cols, rows = _fileio.read_table(path, kind)
    return {c: [r[i] for r in rows] for i, c in enumerate(cols)}


def plot_file(path, out) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    kind = _kind(path)
    d = _columns(path, kind)
    fig, ax = plt.subplots(figsize=(6, 4))
    if kind == "snr-report":
        f = np.array(d["frequency_THz"], float)
        ax.plot(f, np.array(d["snr_dB"], float), "o-", ms=3)
        ax.set(xlabel="Frequency [THz]", ylabel="SNR [dB]")
    elif kind == "spectrum":
        ax.plot(np.array(d["frequency_THz"], float), np.array(d["power_dBm"], float), "o-", ms=3)
        ax.set(xlabel="Frequency [THz]", ylabel="Power [dBm]")
    elif kind == "trace":
        ax.plot(np.array(d["iteration"], float), np.array(d["min_snr_dB"], float))
        ax.set(xlabel="Iteration", ylabel="Min SNR [dB]")
    elif kind == "sweep":
        p = np.array(d["power_dBm"], float)
        s = np.array(d["min_snr_dB"], float)
        for name in dict.fromkeys(d["strategy"]):
            sel = np.array(d["strategy"]) == name
            ax.plot(p[sel], s[sel], "o-", label=name)
        ax.set(xlabel="Launch power [dBm]", ylabel="Min SNR [dB]")
        ax.legend()
    elif kind == "network-report":
        dist = np.array(d["distance_km"], float)
        s = np.array([float(v) for v in d["min_snr_dB"]])
        labels = [f"{a}/{b}" for a, b in zip(d["strategy"], d["gff_mode"])]
        for name in dict.fromkeys(labels):
            sel = np.array(labels) == name
            ax.plot(dist[sel], s[sel], "o-", ms=3, label=name)
        ax.set(xlabel="Distance [km]", ylabel="Min SNR [dB]")
        ax.legend(fontsize=7)
    else:
        raise ValueError(f"no figure defined for '{kind}' tables")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out)
    plt.close(fig)
