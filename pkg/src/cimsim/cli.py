"""Command-line interface: run, sweep, analyze, calibrate, gen-fixture.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import glob
import logging
import os
import sys
from dataclasses import replace

import numpy as np
import yaml

from . import __version__
from .analysis import SweepSpec, adc_error_rate, layer_rmse, run_sweep, write_sweep_csv
from .config import build_config, dump_config, load_config
from .crossbar import AdcRecorder, StateTable
from .errors import CimError, ConfigError, RmseUndefined
from .mapper import PrecisionConfig
from .noise import OutputNoiseTable, relative_sigmas
from .ppa import CoefficientTable, collect_trace, estimate
from .quantizer import CalibrationKind, CalibrationMethod, write_calibration_csv

log = logging.getLogger("cimsim")

EXIT_CONFIG = 2
EXIT_RUNTIME = 3
TAP_SAMPLES = 200_000


def _load_npz(path, what):
    if path is None:
        raise ConfigError(f"{what}: no file given")
    if not os.path.exists(path):
        raise ConfigError(f"{what}: file not found: {path}")
    with np.load(path) as f:
        return {k: f[k] for k in f.files}


def _prepare_model(rc):
    from .netexec.graph import calibrate_model
    from .netexec.manifest import load_model

    if rc.model_path is None:
        raise ConfigError("model: a model manifest directory is required")
    model, input_shape = load_model(rc.model_path)
    prec = rc.hardware.precision
    if not model.calibrated or (model.precision.b_in, model.precision.b_w) != (prec.b_in, prec.b_w):
        calib = rc.raw["eval"].get("calibration")
        if calib is None:
            raise ConfigError(f"model: not calibrated for {prec.b_in}b/{prec.b_w}b and eval.calibration is not set")
        data = _load_npz(rc._path(calib), "eval.calibration")
        batches = [data["x"][i::2] for i in range(2)]
        calibrate_model(model, batches, prec)
    return model, input_shape


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def cmd_run(args) -> int:
    from .netexec.graph import accuracy, reference_inference, run_inference

    rc = load_config(args.config)
    hw = rc.hardware if args.jobs is None else replace(rc.hardware, jobs=args.jobs)
    model, input_shape = _prepare_model(rc)
    data = _load_npz(rc.dataset_path, "eval.dataset")
    x, y = data["x"], data.get("y")
    n = rc.raw["eval"].get("samples")
    if n is not None:
        x, y = x[:n], None if y is None else y[:n]
    coeff_path = rc.raw["ppa"].get("coefficients")
    coeffs = CoefficientTable.from_csv(rc._path(coeff_path)) if coeff_path else CoefficientTable.default()

    out = rc.output_dir
    os.makedirs(out, exist_ok=True)
    dump_config(rc.resolved(), os.path.join(out, "resolved_config.yaml"))

    want_taps = bool(rc.raw.get("taps"))
    recorder = AdcRecorder(max_per_layer=TAP_SAMPLES) if want_taps else None
    res = run_inference(model, x, hw, record_taps=want_taps, recorder=recorder)
    rows = [("samples", len(x)), ("noise_mode", hw.noise.mode), ("seed", hw.seed), ("p_adc", hw.adc().p_adc)]
    if y is not None:
        rows.append(("accuracy", repr(accuracy(res.logits, y))))
        rows.append(("quant_baseline_accuracy", repr(accuracy(reference_inference(model, x), y))))
    _write_rows(os.path.join(out, "accuracy.csv"), ["metric", "value"], rows)

    trace = collect_trace(model, hw, input_shape)
    trace.to_csv(os.path.join(out, "trace.csv"))
    report = estimate(trace, coeffs, int(rc.raw["ppa"].get("duplication", 1)))
    report.to_csv(os.path.join(out, "ppa_report.csv"))
    report.line_items_csv(os.path.join(out, "ppa_line_items.csv"))
    with open(os.path.join(out, "ppa_report.txt"), "w") as fh:
        fh.write(report.table() + "\n")

    calib_rows = [(n.name, CalibrationMethod(CalibrationKind.MAX), n.w_params) for n in model.nodes if n.w_params]
    calib_rows += [(f"{n.name}.input{i}", CalibrationMethod(), p) for n in model.nodes for i, p in enumerate(n.in_params)]
    write_calibration_csv(os.path.join(out, "calibration.csv"), calib_rows)

    if want_taps:
        tap_dir = os.path.join(out, "taps")
        os.makedirs(tap_dir, exist_ok=True)
        ids = model.layer_ids()
        for node in model.nodes:
            if node.engine.value == "digital" and node.kind.value != "lut":
                continue
            ideal, noisy = res.taps[node.name]
            _write_rows(os.path.join(tap_dir, f"layer_{node.name}.csv"), ["ideal", "noisy"],
                        ((repr(float(a)), repr(float(b))) for a, b in zip(ideal.ravel(), noisy.ravel())))
            if node.engine.value == "acim":
                e, o = recorder.arrays(ids[node.name])
                _write_rows(os.path.join(tap_dir, f"adc_{node.name}.csv"), ["expected", "observed"], zip(e, o))
    print(f"wrote results to {out}")
    return 0


def cmd_sweep(args) -> int:
    from .netexec.manifest import load_model

    try:
        with open(args.spec) as fh:
            doc = yaml.safe_load(fh) or {}
    except FileNotFoundError:
        raise ConfigError(f"sweep spec not found: {args.spec}") from None
    base_dir = os.path.dirname(os.path.abspath(args.spec))
    rc = build_config(doc.get("base", {}), base_dir=base_dir)
    grid = doc.get("grid") or {}
    unknown = set(grid) - {"arrays", "b_cells", "adc_offsets", "precisions"}
    if unknown:
        raise ConfigError(f"grid: unknown field(s) {sorted(unknown)}")
    frac = doc.get("d2d_sigma")
    if isinstance(frac, (int, float)):
        frac = (frac, frac)
    spec = SweepSpec(arrays=grid.get("arrays", [128]), b_cells=grid.get("b_cells", [1]),
                     adc_offsets=grid.get("adc_offsets", [0]),
                     precisions=[tuple(p) for p in grid.get("precisions", [[8, 8]])], base=rc.hardware,
                     noise_fraction=None if frac is None else tuple(frac), seeds=int(doc.get("seeds", 3)),
                     coefficients=CoefficientTable.from_csv(rc._path(rc.raw["ppa"]["coefficients"]))
                     if rc.raw["ppa"].get("coefficients") else None,
                     duplication=int(rc.raw["ppa"].get("duplication", 1)))
    if rc.model_path is None:
        raise ConfigError("base.model: a model manifest directory is required")
    model, _ = load_model(rc.model_path)
    data = _load_npz(rc.dataset_path, "base.eval.dataset")
    calib = _load_npz(rc._path(rc.raw["eval"].get("calibration")), "base.eval.calibration")
    n = rc.raw["eval"].get("samples")
    x, y = (data["x"], data["y"]) if n is None else (data["x"][:n], data["y"][:n])
    points = run_sweep(spec, model, x, y, [calib["x"][i::2] for i in range(2)],
                       jobs=args.jobs or rc.hardware.jobs)
    out = doc.get("output") or os.path.join(rc.output_dir, "sweep.csv")
    out = out if os.path.isabs(out) else os.path.join(base_dir, out)
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    write_sweep_csv(out, points)
    failed = sum(p.status != "ok" for p in points)
    print(f"wrote {len(points)} design points ({failed} failed) to {out}")
    return 0


def cmd_analyze(args) -> int:
    taps = args.taps
    if not os.path.isdir(taps):
        raise ConfigError(f"taps directory not found: {taps}")
    layer_files = sorted(glob.glob(os.path.join(taps, "layer_*.csv")))
    adc_files = sorted(glob.glob(os.path.join(taps, "adc_*.csv")))
    if not layer_files and not adc_files:
        raise ConfigError(f"no taps in {taps}")
    out = args.out or os.path.join(os.path.dirname(os.path.abspath(taps)), "analysis")
    os.makedirs(out, exist_ok=True)
    rows = []
    for f in layer_files:
        name = os.path.basename(f)[len("layer_"):-len(".csv")]
        d = np.loadtxt(f, delimiter=",", skiprows=1, ndmin=2)
        try:
            rows.append((name, repr(layer_rmse(d[:, 0], d[:, 1]))))
        except RmseUndefined:
            rows.append((name, "undefined"))
    _write_rows(os.path.join(out, "rmse.csv"), ["layer", "rmse"], rows)
    for f in adc_files:
        name = os.path.basename(f)[len("adc_"):-len(".csv")]
        d = np.loadtxt(f, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
        adc_error_rate(d[:, 0], d[:, 1]).to_csv(os.path.join(out, f"error_rate_{name}.csv"))
    print(f"wrote analysis to {out}")
    return 0


def cmd_calibrate(args) -> int:
    from .netexec.graph import calibrate_model
    from .netexec.manifest import load_model, save_model

    model, input_shape = load_model(args.model)
    data = _load_npz(args.data, "--data")
    method = CalibrationMethod(args.method, args.percentile)
    prec = PrecisionConfig(b_in=args.b_in, b_w=args.b_w)
    batches = [data["x"][i::args.batches] for i in range(args.batches)]
    calibrate_model(model, batches, prec, method)
    out = args.out or args.model
    save_model(model, out, input_shape)
    rows = [(n.name, CalibrationMethod(CalibrationKind.MAX), n.w_params) for n in model.nodes if n.w_params]
    rows += [(f"{n.name}.input{i}", method, p) for n in model.nodes for i, p in enumerate(n.in_params)]
    write_calibration_csv(os.path.join(out, "calibration.csv"), rows)
    print(f"calibrated model written to {out}")
    return 0


def cmd_gen_fixture(args) -> int:
    from .netexec.fixture import make_fixture
    from .netexec.graph import accuracy, calibrate_model, reference_inference
    from .netexec.manifest import save_model

    out = args.out
    os.makedirs(os.path.join(out, "data"), exist_ok=True)
    fx = make_fixture(seed=args.seed)
    calib = fx.train.x[:512]
    calibrate_model(fx.model, [calib[:256], calib[256:]], PrecisionConfig())
    save_model(fx.model, os.path.join(out, "model"), (fx.train.x.shape[1],))
    fx.eval.save(os.path.join(out, "data", "eval.npz"))
    np.savez(os.path.join(out, "data", "calib.npz"), x=calib)
    st = StateTable.linear(1)
    st.with_sigmas(relative_sigmas(st.means, 0.04, 0.02)).to_csv(os.path.join(out, "mem_states.csv"))
    OutputNoiseTable.uniform_sigma(0.3).to_csv(os.path.join(out, "output_noise.csv"))
    CoefficientTable.default().to_csv(os.path.join(out, "coefficients.csv"))
    cfg = {"model": "model", "eval": {"dataset": "data/eval.npz", "calibration": "data/calib.npz"},
           "output_dir": "out", "ppa": {"coefficients": "coefficients.csv"}}
    dump_config(cfg, os.path.join(out, "config.yaml"))
    dump_config({**cfg, "noise": {"mode": "device", "mem_states": "mem_states.csv"}, "taps": True,
                 "output_dir": "out_device"}, os.path.join(out, "config_device.yaml"))
    dump_config({"base": {**cfg, "output_dir": "out_sweep"},
                 "grid": {"arrays": [32, 64, 128], "b_cells": [1, 2], "adc_offsets": [0, -1]}, "seeds": 3},
                os.path.join(out, "sweep.yaml"))
    acc = accuracy(reference_inference(fx.model, fx.eval.x, "float"), fx.eval.y)
    print(f"fixture written to {out} (float accuracy {acc:.4f})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cimsim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate inference and estimate PPA for one configuration")
    r.add_argument("config")
    r.add_argument("--jobs", type=int, default=None, help="tile-level parallelism (never changes results)")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="design-space sweep with Pareto flags")
    s.add_argument("spec")
    s.add_argument("--jobs", type=int, default=None)
    s.set_defaults(func=cmd_sweep)

    a = sub.add_parser("analyze", help="RMSE and ADC error-rate metrics from a taps directory")
    a.add_argument("taps")
    a.add_argument("--out", default=None)
    a.set_defaults(func=cmd_analyze)

    c = sub.add_parser("calibrate", help="post-training calibration of a model manifest")
    c.add_argument("--model", required=True)
    c.add_argument("--data", required=True, help=".npz file with an 'x' array")
    c.add_argument("--b-in", type=int, default=8)
    c.add_argument("--b-w", type=int, default=8)
    c.add_argument("--method", choices=["max", "percentile"], default="percentile")
    c.add_argument("--percentile", type=float, default=0.9999)
    c.add_argument("--batches", type=int, default=2)
    c.add_argument("--out", default=None)
    c.set_defaults(func=cmd_calibrate)

    g = sub.add_parser("gen-fixture", help="write the blob-MLP fixture, data and example configs")
    g.add_argument("out")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_fixture)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CimError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
