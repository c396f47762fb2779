"""Command-line front end: ``modalfft synthesize`` and ``modalfft identify``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .campaign import (EXIT_NUMERIC, EXIT_OK, EXIT_VALIDATION, BandConfig, bands_document,
                       export_plots, input_digest, load_bands, load_dataset, run, write_dataset)
from .estimator import DescentOptions
from .exceptions import ModalIDError, NumericalError
from .synthesis import PRESETS, preset

log = logging.getLogger("modalfft")

MICRO_G = 1e-6


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modalfft", description="Bayesian FFT modal identification for multi-setup forced-vibration tests")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    ident = sub.add_parser("identify", help="identify modal parameters of a dataset")
    ident.add_argument("--dataset", required=True, type=Path, help="dataset manifest (JSON)")
    ident.add_argument("--bands", required=True, type=Path, help="bands config (JSON)")
    ident.add_argument("--out", required=True, type=Path, help="report file to write (JSON)")
    ident.add_argument("--plots", type=Path, help="directory for plot-data tables")
    ident.add_argument("--tol", type=_positive_float, default=1e-6)
    ident.add_argument("--max-iter", type=_positive_int, default=100)
    ident.add_argument("--seed", type=int, default=0,
                       help="recorded in the report; identification itself is deterministic")
    ident.add_argument("--sv-window", type=_positive_int, default=5)
    ident.add_argument("--frf-window", type=_positive_int, default=3)

    syn = sub.add_parser("synthesize", help="generate a synthetic campaign")
    syn.add_argument("--preset", required=True, choices=sorted(PRESETS))
    syn.add_argument("--out", required=True, type=Path, help="output directory")
    syn.add_argument("--seed", type=int, default=0)
    syn.add_argument("--input-noise", type=float, default=0.0,
                     help="input channel noise, micro-g/sqrt(Hz)")
    syn.add_argument("--drive", type=_positive_float, help="shaker-on duration per setup, s")
    syn.add_argument("--level", type=_positive_float, help="excitation root PSD, g/sqrt(Hz)")
    syn.add_argument("--format", choices=("csv", "binary"), default="csv")
    return parser


def cmd_synthesize(args) -> int:
    if args.input_noise < 0:
        raise argparse.ArgumentTypeError("--input-noise must be non-negative")
    sc = preset(args.preset)
    exc = sc.excitation
    if args.drive is not None:
        exc = replace(exc, drive=args.drive)
    if args.level is not None:
        exc = replace(exc, level=args.level)
    sc = sc.with_(excitation=exc, input_noise=args.input_noise * MICRO_G)
    records = sc.simulate(args.seed)
    meta = {"preset": sc.name, "seed": args.seed, "input_noise_ug": args.input_noise,
            "output_noise": sc.output_noise, "excitation_level": exc.level,
            "durations": [exc.pre_roll, exc.drive, exc.post_roll], **sc.metadata}
    manifest = write_dataset(args.out, sc.plan, records, args.format, meta)
    truth = {"freqs": sc.model.freqs.tolist(), "dampings": sc.model.dampings.tolist(),
             "mode_shapes": (sc.model.mode_shapes.T + 0.0).tolist(),
             "mpf": [(x + 0.0).tolist() for x in sc.model.mpf]}
    (args.out / "truth.json").write_text(json.dumps(truth, indent=2))
    configs, start = [], 0
    for band in sc.bands:
        modes = range(start, start + band.n_modes)
        configs.append(BandConfig(band, sc.model.mode_shapes[:, list(modes)]))
        start += band.n_modes
    (args.out / "bands.json").write_text(json.dumps(bands_document(configs), indent=2))
    log.info("wrote %s", manifest)
    print(manifest)
    return EXIT_OK


def cmd_identify(args) -> int:
    plan, records = load_dataset(args.dataset)
    bands = load_bands(args.bands, plan.n_dofs)
    opts = DescentOptions(tol=args.tol, max_iter=args.max_iter)
    manifest_dir = args.dataset.parent
    files = [args.dataset, args.bands] + sorted(
        manifest_dir / e["file"] for e in json.loads(args.dataset.read_text())["setups"])
    options = {"seed": args.seed}
    digest = input_digest(files, {"tol": args.tol, "max_iter": args.max_iter,
                                  "sv_window": args.sv_window, "frf_window": args.frf_window})
    report = run(plan, records, bands, opts, args.sv_window, args.frf_window, digest, options)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(report.dumps())
    if args.plots is not None:
        export_plots(records, plan, report, args.plots, args.sv_window)
    for b in report.bands:
        if "freqs" in b:
            fs = ", ".join(f"{f:.4f}" for f in b["freqs"])
            log.info("band %d [%g, %g] Hz: %s; f = [%s] Hz", b["index"], b["f_lo"], b["f_hi"], b["status"], fs)
        else:
            log.error("band %d [%g, %g] Hz: %s", b["index"], b["f_lo"], b["f_hi"], b.get("error"))
    return report.exit_code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return {"identify": cmd_identify, "synthesize": cmd_synthesize}[args.command](args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ModalIDError, argparse.ArgumentTypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
