"""snropt command line.

Typical pipeline::

    snropt gen-dataset --out a1.csv --profiles 125 --seed 1
    snropt train --dataset a1.csv --kind gain --out models/A1_gain.json
    snropt train --dataset a1.csv --kind nf --out models/A1_nf.json
    snropt optimize --strategy flat-snr-full --out profile.csv --trace trace.csv
    snropt network --out results/
"""
from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
import warnings
from dataclasses import replace
from pathlib import Path

CONFIG_ENV = "SNROPT_CONFIG_DIR"

FILE_FORMATS = """\
file formats (every table starts with a '# snropt:<kind> v1' header line,
then optional '#' comments, then a CSV header row):
  spectrum          frequency_THz, power_dBm (one row per channel)
  grid              count, start_THz, spacing_GHz, symbol_rate_GBd
  dataset           unit_id, profile_id, total_input_dBm, total_output_dBm,
                    pin_00..pin_39 (dBm), gain_00..gain_39 (dB), nf_00..nf_39 (dB)
  b2b               frequency_THz, snr_dB (interpolated linearly in dB)
  snr-report        channel, frequency_THz, received_dBm, ase_W, nli_W, snr_dB
  trace             iteration, cost, min_snr_dB, excursion_dB
  eval-mse          group (gav|pout|channel), bucket, mse_dB2, count
  eval-mae          bin_low_dB, bin_high_dB, density
  topology          id, node_a, node_b, total_km, spans_km ("86,58")
  network-report    link, strategy, gff_mode, distance_km, n_spans, min_snr_dB,
                    excursion_dB, error
  sweep             power_dBm, strategy, min_snr_dB, excursion_dB
JSON files carry "format" and "version" keys:
  oracle params     {"format": "snropt-oracle", "version": 1, "length_m", "background_loss_dB_per_m",
                     "max_total_output_dBm", "unit_id", "absorption"/"emission": lists of
                     Gaussians {"amp" dB/m, "center_THz", "sigma_THz"}, or per-channel arrays
                     "absorption_dB_per_m"/"emission_dB_per_m" with "frequencies_THz"}
  link config       {"format": "snropt-link", "version": 1, "first_edfa_total_input_dBm",
                     "b2b" (b2b table path) or "b2b_snr_dB" (per channel), "model_dir",
                     "spans": [{"edfa_model", "target_output_dBm", "srs", "nli", "gff",
                                "fiber": {"length", "attenuation", "beta2", "gamma",
                                          "raman_slope", "raman_peak_shift", "connector_loss"}}]}
  surrogate model   {"format": "snropt-surrogate", "version": 1, "kind", dims, scalers, weights, seed}
Relative paths that do not exist are also looked up in $SNROPT_CONFIG_DIR.
"""

log = logging.getLogger("snropt")


class StageError(RuntimeError):
    pass


@contextlib.contextmanager
def stage(name, path=None):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        where = f" {path}" if path is not None else ""
        raise StageError(f"{name}{where}: {exc}") from exc


def _resolve(path):
    if path is None:
        return None
    p = Path(path)
    if not p.exists() and not p.is_absolute() and os.environ.get(CONFIG_ENV):
        alt = Path(os.environ[CONFIG_ENV]) / p
        if alt.exists():
            return alt
    return p


def _csv_list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def _load_link(args):
    from .cascade import load_link

    path = _resolve(args.link)
    with stage("reading link config", path or "<default>"):
        link = load_link(path)
        if getattr(args, "models", None):
            link = replace(link, model_dir=str(_resolve(args.models)))
    return link


def _input_spectrum(text, link):
    from .spectral import PowerSpectrum, normalize_total, read_spectrum

    if text in (None, "flat"):
        return PowerSpectrum.flat(link.grid, link.first_edfa_total_input)
    path = _resolve(text)
    with stage("reading input spectrum", path):
        return normalize_total(read_spectrum(path, link.grid), link.first_edfa_total_input)


def _spec(args, strategy):
    from .optimize import OptimizationSpec

    return OptimizationSpec(strategy, getattr(args, "cost", None), args.iterations, args.lr,
                            args.temperature, args.refine, seed=args.seed)


# -- commands ----------------------------------------------------------------------------

def cmd_gen_dataset(args):
    from . import oracle

    path = _resolve(args.oracle)
    with stage("reading oracle parameters", path or "<default>"):
        params = oracle.load_params(path)
    if args.perturb:
        params = oracle.perturb_unit(params, args.perturb_seed, args.perturb)
    with stage("generating dataset"):
        ds = oracle.generate_dataset(params, args.seed, args.profiles,
                                     excursion_max=args.excursion_max, tilt_max=args.tilt_max)
    with stage("writing dataset", args.out):
        oracle.write_dataset(args.out, ds)
    print(f"{len(ds.samples)} samples from unit {params.unit_id} ({ds.skipped} infeasible skipped) -> {args.out}")


def cmd_train(args):
    from . import oracle, surrogate

    path = _resolve(args.dataset)
    with stage("reading dataset", path):
        ds = oracle.read_dataset(path)
    hp = surrogate.Hyperparams(hidden_dim=args.hidden)
    with stage("training"):
        model = surrogate.train(ds, args.kind, hp, seed=args.seed, epochs=args.epochs)
    with stage("writing model", args.out):
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        surrogate.save_model(args.out, model)
    t = model.training
    print(f"{args.kind} model: {t['epochs_run']} epochs, best {t['best_epoch']}, "
          f"validation MSE {t['val_mse_dB2']:.4g} dB^2 -> {args.out}")


def cmd_eval_model(args):
    from . import oracle, surrogate

    mpath, dpath = _resolve(args.model), _resolve(args.dataset)
    with stage("reading model", mpath):
        model = surrogate.load_model(mpath)
    with stage("reading dataset", dpath):
        ds = oracle.read_dataset(dpath)
    with stage("evaluating"):
        report = surrogate.evaluate(model, ds, args.mode)
    prefix = args.out
    with stage("writing report", prefix):
        surrogate.write_report(report, f"{prefix}_mse.csv", f"{prefix}_mae.csv")
    print(f"{args.mode} {model.kind} MSE {report.mse:.4g} dB^2 over {len(ds.samples)} samples")
    for center, (mse, count) in sorted(report.mse_per_gav.items()):
        print(f"  G_av {center:5.1f} dB: {mse:.4g} dB^2 ({count})")


def cmd_predict(args):
    from .cascade import simulate, write_report

    link = _load_link(args)
    psd = _input_spectrum(args.input, link)
    with stage("simulating link"):
        report = simulate(link, psd)
    with stage("writing report", args.out):
        write_report(args.out, report)
    print(f"min SNR {report.min_snr:.3f} dB, excursion {report.excursion:.3f} dB -> {args.out}")


def cmd_optimize(args):
    from .cascade import simulate
    from .optimize import optimize, write_trace
    from .spectral import write_spectrum

    link = _load_link(args)
    with stage("optimizing"):
        result = optimize(link, _spec(args, args.strategy))
        report = simulate(link, result.input_psd)
    with stage("writing profile", args.out):
        write_spectrum(args.out, result.input_psd, [f"strategy={args.strategy}", f"seed={args.seed}"])
    if args.trace:
        with stage("writing trace", args.trace):
            write_trace(args.trace, result.trace)
    print(f"{args.strategy}: min SNR {report.min_snr:.3f} dB, excursion {report.excursion:.3f} dB, "
          f"{len(result.trace)} evaluations, converged={result.converged} -> {args.out}")


def cmd_sweep_power(args):
    from .network import sweep_launch_power, sweep_optimum, write_sweep

    link = _load_link(args)
    powers = [float(p) for p in _csv_list(args.powers)]
    with stage("sweeping launch power"):
        rows = sweep_launch_power(link, powers, _csv_list(args.strategies), _spec(args, "flat-snr-full"))
    with stage("writing sweep", args.out):
        write_sweep(args.out, rows)
    for strategy, p in sweep_optimum(rows).items():
        print(f"{strategy}: best launch power {p:g} dBm")


def cmd_network(args):
    from .network import load_topology, run_network, write_network_profiles, write_network_report

    path = _resolve(args.topology)
    with stage("reading topology", path or "<default>"):
        topo = load_topology(path)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with stage("running network"):
        report = run_network(topo, _csv_list(args.strategies), _csv_list(args.gff), args.launch_power,
                             _spec(args, "flat-snr-full"), threads=args.threads,
                             model_dir=None if args.models is None else str(_resolve(args.models)))
    with stage("writing network report", out):
        write_network_report(out / "network_report.csv", report)
        write_network_profiles(out / "network_profiles.csv", report)
    failed = [r for r in report.results if r.error]
    print(f"{len(topo.links)} links, {len(report.results)} runs, {len(failed)} failed -> {out}")


def cmd_plot(args):
    from .plotting import plot_file

    path = _resolve(args.report)
    with stage("plotting", path):
        plot_file(path, args.out)
    print(f"-> {args.out}")


# -- parser ------------------------------------------------------------------------------

def _add_opt_args(p):
    p.add_argument("--iterations", type=int, default=500, help="soft-min Adam iterations")
    p.add_argument("--refine", type=int, default=150, help="hard-min refinement iterations")
    p.add_argument("--lr", type=float, default=0.05, help="Adam step in dB")
    p.add_argument("--temperature", type=float, default=10.0, help="soft-min temperature, 1/dB")
    p.add_argument("--seed", type=int, default=0)


def build_parser():
    parser = argparse.ArgumentParser(prog="snropt", description=__doc__.splitlines()[0],
                                     epilog=FILE_FORMATS,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--threads", type=int, default=1, help="cap on worker threads")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dataset", help="characterize a synthetic EDFA")
    p.add_argument("--oracle", help="oracle parameter JSON (default: packaged unit)")
    p.add_argument("--out", required=True)
    p.add_argument("--profiles", type=int, default=125)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--perturb", type=float, default=0.0, help="relative perturbation magnitude")
    p.add_argument("--perturb-seed", type=int, default=7)
    p.add_argument("--excursion-max", type=float, default=20.0)
    p.add_argument("--tilt-max", type=float, default=10.0)
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("train", help="train a gain or NF surrogate")
    p.add_argument("--dataset", required=True)
    p.add_argument("--kind", choices=("gain", "nf"), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--epochs", type=int, default=None, help="epoch cap (default 2000)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-model", help="bucketed MSE and MAE histogram of a surrogate")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--mode", choices=("intra", "inter"), default="intra")
    p.add_argument("--out", required=True, help="prefix for <out>_mse.csv and <out>_mae.csv")
    p.set_defaults(func=cmd_eval_model)

    p = sub.add_parser("predict", help="simulate a link")
    p.add_argument("--link", help="link config JSON (default: packaged 3-span link)")
    p.add_argument("--models", help="directory with <id>_gain.json / <id>_nf.json")
    p.add_argument("--input", default="flat", help="spectrum file or 'flat'")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    from .optimize import COSTS, STRATEGIES

    p = sub.add_parser("optimize", help="optimize the launch profile of a link")
    p.add_argument("--link")
    p.add_argument("--models")
    p.add_argument("--strategy", choices=sorted(STRATEGIES), default="flat-snr-full")
    p.add_argument("--cost", choices=COSTS, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--trace")
    _add_opt_args(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("sweep-power", help="min SNR against per-span launch power")
    p.add_argument("--link")
    p.add_argument("--models")
    p.add_argument("--powers", required=True, help="comma-separated dBm values")
    p.add_argument("--strategies", default="flat-snr-srs,flat-snr-full")
    p.add_argument("--out", required=True)
    _add_opt_args(p)
    p.set_defaults(func=cmd_sweep_power)

    p = sub.add_parser("network", help="optimize every link of a topology")
    p.add_argument("--topology", help="topology table (default: German core network)")
    p.add_argument("--models")
    p.add_argument("--strategies", default="flat-input-reference,flat-snr-srs,flat-snr-full")
    p.add_argument("--gff", default="none,ideal")
    p.add_argument("--launch-power", type=float, default=18.0)
    p.add_argument("--out", required=True, help="output directory")
    _add_opt_args(p)
    p.set_defaults(func=cmd_network, iterations=200, refine=100)

    p = sub.add_parser("plot", help="static SVG figure from a report CSV (needs matplotlib)")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads >= 1:
        os.environ.setdefault("XLA_FLAGS", f"--xla_cpu_multi_thread_eigen={'true' if args.threads > 1 else 'false'} "
                                           f"intra_op_parallelism_threads={args.threads}")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            args.func(args)
        except StageError as exc:
            print(f"snropt {args.command}: error: {exc}", file=sys.stderr)
            return 1
    for w in {str(w.message) for w in caught}:
        print(f"warning: {w}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
