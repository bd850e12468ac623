"""Command-line entry point: ``se2kit <subcommand> ...``.

Every subcommand writes into a run directory (``--run-dir``) and records a
step in its ``manifest.json``: argv, seed, effective configuration, package
versions and SHA-256 hashes of the files read and written.
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import datetime as _dt
import hashlib
import json
import logging
import platform
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import HAVE_NUMBA
from .device import AERStream, VirtualDevice, raster_to_aer
from .experiments import (NoiseParams, Selection, bench_training, evaluate, experiment_params,
                          experiment_train_config, generate_frozen_noise, FrozenNoiseDataset,
                          train_frozen_noise)
from .graph import NetGraph, as_graph, net_from_graph
from .hwconfig import BiasTable, DeviceConfig, config_from_specification, net_from_config
from .mapper import HardwareSpec, map_graph
from .mismatch import MismatchSpec
from .quantizer import QuantizedSpec, apply_quantization, quantize_spec

log = logging.getLogger("se2kit")

DEFAULTS = {
    "data": {"rate": 50.0, "duration": 0.5, "dt": 1e-3, "n_channels": 60, "n_test": 1000},
    "neuron": {"tau_mem": 20e-3, "tau_syn": 0.2, "t_pulse": 100e-6, "gain_mem": 4.0,
               "gain_syn": 40.0, "weight_unit": 1e-10},
    "init": {"w_in_mean": 0.05, "w_in_std": 0.05, "w_rec_std": 0.0},
    "train": {"epochs": 40000, "learning_rate": 3e-3, "surrogate_slope": 10.0,
              "trainable": ["w_in"], "ema_decay": 0.999, "adversarial_step": 0.0,
              "mismatch_sigma": 0.2, "mismatch_refresh": 100,
              "mismatch_targets": ["w_in", "w_rec"]},
    "selection": {"every": 1000, "start": 20000, "n_validation": 1000, "restarts": 3},
    "quantize": {"steps": 1000, "lr": 1e-2, "restarts": 256},
    "device": {"sigma": 0.2, "n_test": 10, "n_chips": 10},
}


class CLIError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration and manifest


def merge_config(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k not in base:
            raise CLIError(f"unknown configuration key {where}{k}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise CLIError(f"configuration key {where}{k} must be a table")
            out[k] = merge_config(base[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


def load_config(path) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULTS)
    try:
        user = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CLIError(f"cannot read config {path}: {exc}") from exc
    return merge_config(DEFAULTS, user)


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def versions() -> dict:
    out = {"se2kit": __version__, "python": platform.python_version()}
    for pkg in ("numpy", "scipy", "numba"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    out["backend"] = "numba" if HAVE_NUMBA else "numpy"
    return out


class Run:
    """Run directory bookkeeping for one subcommand invocation."""

    def __init__(self, args):
        self.dir = Path(args.run_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.args = args
        self.inputs, self.outputs = [], []

    def path(self, given, default: str) -> Path:
        return Path(given) if given else self.dir / default

    def read(self, path) -> Path:
        p = Path(path)
        if not p.exists():
            raise CLIError(f"input file {p} does not exist")
        self.inputs.append(p)
        return p

    def write_text(self, path, text: str) -> Path:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)
        self.outputs.append(p)
        return p

    def wrote(self, path) -> Path:
        self.outputs.append(Path(path))
        return Path(path)

    def finish(self, extra: dict | None = None) -> None:
        manifest_path = self.dir / "manifest.json"
        manifest = {"steps": []}
        if manifest_path.exists():
            try:
                manifest = json.loads(manifest_path.read_text())
            except json.JSONDecodeError:
                log.warning("overwriting unreadable manifest %s", manifest_path)
        step = {
            "command": self.args.command,
            "argv": list(self.args.argv),
            "seed": self.args.seed,
            "config": self.args.cfg,
            "versions": versions(),
            "time": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
            "inputs": {str(p): sha256(p) for p in self.inputs},
            "outputs": {str(p): sha256(p) for p in self.outputs},
        }
        if extra:
            step["result"] = extra
        manifest["steps"].append(step)
        manifest_path.write_text(json.dumps(_finite(manifest), indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# helpers


def _finite(obj):
    # strict JSON has no infinity; an unbounded FRR is written as "inf"
    if isinstance(obj, float) and not np.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def _noise_params(cfg) -> NoiseParams:
    return NoiseParams(**cfg["data"])


def _train_config(cfg, seed):
    t = cfg["train"]
    mm = None
    if t["mismatch_sigma"] > 0:
        mm = MismatchSpec(t["mismatch_sigma"], t["mismatch_refresh"], seed,
                          frozenset(t["mismatch_targets"]))
    base = experiment_train_config(seed, t["epochs"])
    return dataclasses.replace(base, learning_rate=t["learning_rate"],
                               surrogate_slope=t["surrogate_slope"],
                               trainable=frozenset(t["trainable"]), ema_decay=t["ema_decay"],
                               adversarial_step=t["adversarial_step"], mismatch=mm)


def _load_table(run, path):
    return BiasTable.from_csv(run.read(path)) if path else BiasTable.synthetic()


def _load_net(run, path):
    return net_from_graph(NetGraph.loads(run.read(path).read_text()))


def _report_rows(reports) -> str:
    lines = ["stage,set,n,rate_n0_hz,rate_n1_hz,frr_mean,frr_max,frr_min"]
    for r in reports:
        s = r.summary()
        lines.append(f"{s['stage']},{s['set']},{s['n']},{s['mean_rate_n0_hz']:.4g},"
                     f"{s['mean_rate_n1_hz']:.4g},{s['frr_mean']:.4g},{s['frr_max']:.4g},"
                     f"{s['frr_min']:.4g}")
    return "\n".join(lines) + "\n"


def _target_rows(report) -> list:
    return [{"class": i, "rate_n0_hz": float(a), "rate_n1_hz": float(b),
             "frr": float(f), "winner": int(w)}
            for i, ((a, b), f, w) in enumerate(zip(report.rates, report.frr, report.winners))]


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args, run):
    data = generate_frozen_noise(_noise_params(args.cfg), args.seed)
    out = run.path(args.out, "data.npz")
    data.save(out)
    run.wrote(out)
    for c, r in enumerate(data.target_rasters()):
        run.write_text(run.dir / f"target{c}_events.csv", raster_to_aer(r).dumps())
    return {"targets": 2, "tests": int(data.tests.shape[0])}


def cmd_train(args, run):
    data = FrozenNoiseDataset.load(run.read(args.data))
    cfg = args.cfg
    tc = _train_config(cfg, args.seed)
    sel = Selection(**cfg["selection"]) if cfg["selection"]["n_validation"] else None
    params = experiment_params(**cfg["neuron"])
    model = train_frozen_noise(data, tc, params, sel, cfg["init"])
    run.write_text(run.path(args.out, "net.json"), as_graph(model.net).dumps())
    loss = "epoch,loss\n" + "".join(f"{i + 1},{v:.8g}\n" for i, v in enumerate(model.record.losses))
    run.write_text(run.dir / "loss.csv", loss)
    run.write_text(run.dir / "checkpoints.csv", model.checkpoints_csv())
    tr = evaluate(model.net, data.targets, data.dt, label="target")
    return {"chosen_epoch": model.epoch, "targets": _target_rows(tr)}


def _model_for(args, run):
    if args.net:
        return _load_net(run, args.net), "simulated"
    if args.spec:
        return HardwareSpec.loads(run.read(args.spec).read_text()), args.stage or "quantized"
    if args.config_file:
        config = DeviceConfig.load(run.read(args.config_file))
        sigma = args.sigma if args.sigma is not None else args.cfg["device"]["sigma"]
        dev = VirtualDevice(config, MismatchSpec(sigma, seed=args.seed), _load_table(run, args.table))
        return dev, "hardware"
    raise CLIError("evaluate needs one of --net, --spec or --device-config")


def cmd_evaluate(args, run):
    data = FrozenNoiseDataset.load(run.read(args.data))
    model, stage = _model_for(args, run)
    tests = data.tests[:args.n_test] if args.n_test else data.tests
    reports = [evaluate(model, data.targets, data.dt, stage, "target"),
               evaluate(model, tests, data.dt, stage, "test")]
    run.write_text(run.path(args.out, f"frr_{stage}.csv"), "".join(
        r.to_csv() if i == 0 else r.to_csv().split("\n", 1)[1] for i, r in enumerate(reports)))
    run.write_text(run.dir / f"summary_{stage}.csv", _report_rows(reports))
    return {k: v for r in reports for k, v in
            ((f"{r.label}_frr_mean", r.mean), (f"{r.label}_frr_max", r.max), (f"{r.label}_frr_min", r.min))}


def cmd_map(args, run):
    spec = map_graph(as_graph(_load_net(run, args.net)))
    run.write_text(run.path(args.out, "spec.json"), spec.dumps())
    return {"neurons": spec.n_neurons, "cores": len(spec.cores())}


def cmd_quantize(args, run):
    spec = HardwareSpec.loads(run.read(args.spec).read_text())
    q = args.cfg["quantize"]
    quant = quantize_spec(spec, q["steps"], q["lr"], args.seed, q["restarts"])
    run.write_text(run.path(args.out, "quant.json"), quant.dumps(spec))
    run.write_text(run.dir / "spec_quantized.json", apply_quantization(spec, quant).dumps())
    return {"loss": [c.loss for c in quant.clusters]}


def cmd_deploy(args, run):
    spec = HardwareSpec.loads(run.read(args.spec).read_text())
    quant = QuantizedSpec.loads(run.read(args.quant).read_text())
    config = config_from_specification(apply_quantization(spec, quant), quant,
                                       _load_table(run, args.table))
    run.write_text(run.path(args.out, "config.json"), config.dumps())
    return {"neurons": len(config.hardware_tags),
            "cam_entries": sum(len(nc.cam) for _, nc in config.neurons())}


def cmd_run_device(args, run):
    config = DeviceConfig.load(run.read(args.config_file))
    events = AERStream.load(run.read(args.input))
    sigma = args.sigma if args.sigma is not None else args.cfg["device"]["sigma"]
    dev = VirtualDevice(config, MismatchSpec(sigma, seed=args.seed), _load_table(run, args.table))
    out = dev.run(events, args.duration)
    run.write_text(run.path(args.out, "output_events.csv"), out.dumps())
    return {"input_events": len(events), "output_events": len(out)}


def cmd_reverse(args, run):
    config = DeviceConfig.load(run.read(args.config_file))
    net = net_from_config(config, _load_table(run, args.table))
    run.write_text(run.path(args.out, "net_reversed.json"), as_graph(net).dumps())
    return {"neurons": net.n_out}


def cmd_bench(args, run):
    backends = ["numba", "numpy"] if HAVE_NUMBA else ["numpy"]
    if args.backend != "all":
        backends = [args.backend]
    rows = []
    for b in backends:
        rep = bench_training(args.epochs, backend=b, seed=args.seed)
        rows.append(rep)
        print(f"{b}: {rep.epochs_per_second:.1f} epochs/s")
    text = rows[0].to_csv() + "".join(r.to_csv().split("\n", 1)[1] for r in rows[1:])
    run.write_text(run.path(args.out, "bench.csv"), text)
    return {r.backend: r.epochs_per_second for r in rows}


def cmd_repro(args, run):
    """generate -> train -> map -> quantize -> deploy -> virtual device, one seed."""
    cfg, seed = args.cfg, args.seed
    data = generate_frozen_noise(_noise_params(cfg), seed)
    data.save(run.dir / "data.npz")
    run.wrote(run.dir / "data.npz")
    sel = Selection(**cfg["selection"]) if cfg["selection"]["n_validation"] else None
    model = train_frozen_noise(data, _train_config(cfg, seed), experiment_params(**cfg["neuron"]),
                               sel, cfg["init"])
    run.write_text(run.dir / "net.json", as_graph(model.net).dumps())
    run.write_text(run.dir / "loss.csv", "epoch,loss\n" + "".join(
        f"{i + 1},{v:.8g}\n" for i, v in enumerate(model.record.losses)))
    run.write_text(run.dir / "checkpoints.csv", model.checkpoints_csv())

    spec = map_graph(as_graph(model.net))
    run.write_text(run.dir / "spec.json", spec.dumps())
    q = cfg["quantize"]
    quant = quantize_spec(spec, q["steps"], q["lr"], seed, q["restarts"])
    qspec = apply_quantization(spec, quant)
    run.write_text(run.dir / "quant.json", quant.dumps(spec))
    config = config_from_specification(qspec, quant, _load_table(run, args.table))
    run.write_text(run.dir / "config.json", config.dumps())

    reports = [evaluate(model.net, data.targets, data.dt, "simulated", "target"),
               evaluate(model.net, data.tests, data.dt, "simulated", "test"),
               evaluate(qspec, data.targets, data.dt, "quantized", "target"),
               evaluate(qspec, data.tests, data.dt, "quantized", "test")]
    dcfg = cfg["device"]
    n_dev = dcfg["n_test"]
    orderings = []
    for chip in range(dcfg["n_chips"]):
        dev = VirtualDevice(config, MismatchSpec(dcfg["sigma"], seed=seed * 1000 + chip))
        rt = evaluate(dev, data.targets, data.dt, "hardware", f"target_chip{chip}")
        orderings.append(bool(np.array_equal(rt.winners, [0, 1])))
        if chip == 0:
            reports += [rt, evaluate(dev, data.tests[:n_dev], data.dt, "hardware", "test_chip0")]
    run.write_text(run.dir / "table.csv", _report_rows(reports))
    run.write_text(run.dir / "frr_all.csv", reports[0].to_csv() + "".join(
        r.to_csv().split("\n", 1)[1] for r in reports[1:]))
    for c, r in enumerate(data.target_rasters()):
        out = VirtualDevice(config, MismatchSpec(dcfg["sigma"], seed=seed * 1000)).run(
            raster_to_aer(r), data.params.duration)
        run.write_text(run.dir / f"device_target{c}_output.csv", out.dumps())
    print(_report_rows(reports), end="")
    print(f"device ordering correct on {sum(orderings)}/{len(orderings)} mismatch draws")
    return {"chosen_epoch": model.epoch, "device_orderings": orderings,
            "summary": [r.summary() for r in reports]}


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    def globals_(suppress: bool):
        # subcommands repeat the global flags without defaults so that a value
        # given before the subcommand is not reset by the subparser
        g = argparse.ArgumentParser(add_help=False,
                                    argument_default=argparse.SUPPRESS if suppress else None)
        d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        g.add_argument("--seed", type=int, default=d(0), help="seed for every random stage")
        g.add_argument("--config", dest="config_path", default=d(None),
                       help="JSON file overriding the defaults (see 'se2kit defaults')")
        g.add_argument("--run-dir", default=d("runs/default"), help="output directory with manifest")
        g.add_argument("-v", "--verbose", action="store_true", default=d(False))
        return g

    common = globals_(True)
    p = argparse.ArgumentParser(prog="se2kit", parents=[globals_(False)],
                                description="Train, quantize and deploy mismatch-robust SNNs.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=func)
        return sp

    sp = add("gen-data", cmd_gen_data, "generate frozen-noise targets and test samples")
    sp.add_argument("--out", default=None)
    sp = add("train", cmd_train, "train the 60->2 classifier under mismatch")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", default=None)
    sp = add("evaluate", cmd_evaluate, "firing rates and FRR of a net, spec or device config")
    sp.add_argument("--data", required=True)
    sp.add_argument("--net", default=None)
    sp.add_argument("--spec", default=None)
    sp.add_argument("--device-config", dest="config_file", default=None)
    sp.add_argument("--stage", choices=["simulated", "quantized"], default=None)
    sp.add_argument("--sigma", type=float, default=None)
    sp.add_argument("--table", default=None)
    sp.add_argument("--n-test", type=int, default=0, help="limit the number of test samples")
    sp.add_argument("--out", default=None)
    sp = add("map", cmd_map, "map a trained network onto chip resources")
    sp.add_argument("--net", required=True)
    sp.add_argument("--out", default=None)
    sp = add("quantize", cmd_quantize, "quantize a mapped spec to 4-bit masks and base weights")
    sp.add_argument("--spec", required=True)
    sp.add_argument("--out", default=None)
    sp = add("deploy", cmd_deploy, "build a device configuration")
    sp.add_argument("--spec", required=True)
    sp.add_argument("--quant", required=True)
    sp.add_argument("--table", default=None, help="bias table CSV (default: synthetic)")
    sp.add_argument("--out", default=None)
    sp = add("run-device", cmd_run_device, "run AER input through the virtual device")
    sp.add_argument("--device-config", dest="config_file", required=True)
    sp.add_argument("--input", required=True)
    sp.add_argument("--sigma", type=float, default=None)
    sp.add_argument("--duration", type=float, default=0.5)
    sp.add_argument("--table", default=None)
    sp.add_argument("--out", default=None)
    sp = add("reverse", cmd_reverse, "rebuild a simulatable network from a device configuration")
    sp.add_argument("--device-config", dest="config_file", required=True)
    sp.add_argument("--table", default=None)
    sp.add_argument("--out", default=None)
    sp = add("bench", cmd_bench, "training throughput, numba against numpy")
    sp.add_argument("--epochs", type=int, default=1000)
    sp.add_argument("--backend", choices=["all", "numba", "numpy"], default="all")
    sp.add_argument("--out", default=None)
    sp = add("repro", cmd_repro, "the whole pipeline with one seed")
    sp.add_argument("--table", default=None)
    sp = sub.add_parser("defaults", help="print the default configuration as JSON")
    sp.set_defaults(func=None)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "defaults":
        print(json.dumps(DEFAULTS, indent=1))
        return 0
    try:
        args.cfg = load_config(args.config_path)
        run = Run(args)
        if args.config_path:
            run.read(args.config_path)
        result = args.func(args, run)
        run.finish(result)
    except (CLIError, ValueError, OSError) as exc:
        print(f"se2kit {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
