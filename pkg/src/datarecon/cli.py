"""Command-line entry point: train, reconstruct, sweep, linear-analysis, and manifest replay.

Every command writes ``manifest.json`` next to its artifacts.  The manifest
holds the merged configuration and the input files, so

    datarecon --replay RUN/manifest.json --out NEW

recomputes the same CSV and binary artifacts byte for byte.

Exit codes: 0 success, 2 usage / bad configuration, 3 numerical failure,
4 I/O or file-format problem.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, _kernels, dataio
from .bilevel import ReconConfig
from .errors import DataFormatError, NumericalError
from .experiments import build_spec, noise_reference, run_attack, run_grid, synth_split
from .gradpen import GradPenConfig, penalty
from .initsch import DEFAULT_LAMBDAS, InitScheme, make_init
from .linear import (construct_collapse, construct_interpolating_inputs,
                     push_to_margin, underdetermination_report)
from .metrics import closer_to_init_fraction, nearest_neighbors, write_grid, write_nn_table
from .model import Dataset, LossSpec, forward
from .numcore import RngStream
from .solvers import CGConfig
from .trainer import TrainConfig, load_weights, save_report, train

log = logging.getLogger("datarecon")

OUT_ENV = "DATARECON_OUT"
COMMANDS = ("train", "reconstruct", "sweep", "linear-analysis")

DEFAULTS = {
    "seed": 1,
    "data": {"source": "synth", "n": 12, "k": 48, "separation": 1.0, "sigma": 0.1,
             "cifar": [], "classes": [0, 1], "per_class": 10},
    "model": {"arch": "affine", "hidden": None, "activation": "softplus", "beta": 20.0},
    "loss": {"kind": "logistic", "rho": 1e-4},
    "train": {k: v for k, v in TrainConfig().to_dict().items() if k != "seed"},
    "recon": {
        "method": "bilevel", "init": "random", "sigma": 1.0, "lambda1": 1.0, "lambda2": 1.0,
        "bilevel": {k: v for k, v in ReconConfig().to_dict().items() if k not in ("method", "lower")},
        "gradpen": GradPenConfig().to_dict(),
    },
    "sweep": {"lambdas": list(DEFAULT_LAMBDAS), "methods": ["bilevel", "gradpen"], "jobs": 1},
    "linear": {"construct": None, "margin": 20.0, "collapse_seed": "noise", "target": 1.0},
}


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _set(tree: dict, dotted: str, value):
    *parents, leaf = dotted.split(".")
    node = tree
    for p in parents:
        node = node.setdefault(p, {})
    node[leaf] = value


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _int_list(text: str) -> list[int]:
    return [int(v) for v in _float_list(text)]


# flag dest -> config path
FLAG_PATHS = {
    "seed": "seed",
    "data": "data.source", "n": "data.n", "k": "data.k", "separation": "data.separation",
    "cifar_files": "data.cifar", "classes": "data.classes", "per_class": "data.per_class",
    "arch": "model.arch", "hidden": "model.hidden", "activation": "model.activation", "beta": "model.beta",
    "loss": "loss.kind", "rho": "loss.rho",
    "lr": "train.lr", "momentum": "train.momentum", "max_iters": "train.max_iters",
    "grad_tol": "train.grad_tol",
    "method": "recon.method", "init": "recon.init", "sigma": "recon.sigma",
    "lambda1": "recon.lambda1", "lambda2": "recon.lambda2",
    "eta": "recon.bilevel.eta", "outer_iters": "recon.bilevel.outer_iters",
    "stop_tol": "recon.bilevel.stop_tol", "project_box": "recon.bilevel.project_box",
    "gp_lr": "recon.gradpen.lr", "gp_iters": "recon.gradpen.iters",
    "lambdas": "sweep.lambdas", "methods": "sweep.methods", "jobs": "sweep.jobs",
    "construct": "linear.construct", "margin": "linear.margin", "collapse_seed": "linear.collapse_seed",
}


def effective_config(args) -> dict:
    """defaults < JSON config file < explicit flags."""
    cfg = copy.deepcopy(DEFAULTS)
    if getattr(args, "config", None):
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{args.config}: invalid JSON ({exc})") from exc
        if not isinstance(file_cfg, dict):
            raise DataFormatError(f"{args.config}: top level must be an object")
        cfg = deep_merge(cfg, file_cfg)
    for dest, path in FLAG_PATHS.items():
        val = getattr(args, dest, None)
        if val is not None:
            _set(cfg, path, val)
    return cfg


def _train_cfg(cfg) -> TrainConfig:
    return TrainConfig(seed=int(cfg["seed"]), **cfg["train"])


def _recon_cfg(cfg) -> ReconConfig:
    b = dict(cfg["recon"]["bilevel"])
    b["cg"] = CGConfig(**b.get("cg", {}))
    return ReconConfig(method="bilevel", lower=_train_cfg(cfg), **b)


def _gp_cfg(cfg) -> GradPenConfig:
    return GradPenConfig(**cfg["recon"]["gradpen"])


# ---------------------------------------------------------------------------
# run directory and manifest
# ---------------------------------------------------------------------------

def run_dir(command: str, seed: int, out: str | None) -> Path:
    if out:
        path = Path(out)
    else:
        root = Path(os.environ.get(OUT_ENV, "runs"))
        stamp = time.strftime("%Y%m%d-%H%M%S")
        path = root / f"{stamp}_{command}_seed{seed}"
        i = 1
        while path.exists():
            path = root / f"{stamp}_{command}_seed{seed}_{i}"
            i += 1
    path.mkdir(parents=True, exist_ok=True)
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def write_manifest(out: Path, command: str, cfg: dict, inputs: dict, artifacts: dict,
                   dataset_fp: str) -> Path:
    man = {
        "command": command,
        "config": cfg,
        "master_seed": int(cfg["seed"]),
        "inputs": {name: str(Path(p).resolve()) for name, p in inputs.items()},
        "dataset_fingerprint": dataset_fp,
        "artifacts": {name: str(Path(p).relative_to(out)) for name, p in artifacts.items()},
        "tool_version": __version__,
        "backend": _kernels.BACKEND,
    }
    return write_json(out / "manifest.json", man)


# ---------------------------------------------------------------------------
# data helpers
# ---------------------------------------------------------------------------

def build_datasets(cfg) -> tuple[Dataset, Dataset]:
    d = cfg["data"]
    seed = int(cfg["seed"])
    if d["source"] == "synth":
        return synth_split(int(d["n"]), int(d["k"]), seed, float(d["separation"]), float(d["sigma"]))
    if d["source"] == "cifar":
        if not d["cifar"]:
            raise UsageError("--data cifar needs --cifar-files")
        images, labels = dataio.load_cifar10(d["cifar"])
        a, b = d["classes"]
        pool = dataio.select_binary(images, labels, a, b, int(d["per_class"]), seed)
        return dataio.partition_disjoint(pool, 0.5, seed, stratified=True)
    raise UsageError(f"unknown data source {d['source']!r}")


def save_datasets(path: Path, tr: Dataset, ho: Dataset, cfg) -> Path:
    return dataio.write_arrays(path, {"train_x": tr.inputs, "train_y": tr.labels,
                                      "holdout_x": ho.inputs, "holdout_y": ho.labels},
                               {"kind": "dataset", "data": cfg["data"], "seed": cfg["seed"],
                                "fingerprint": dataio.fingerprint(tr.inputs, tr.labels)})


def load_datasets(path) -> tuple[Dataset, Dataset]:
    header, arr = dataio.read_arrays(path)
    if header.get("kind") != "dataset":
        raise DataFormatError(f"{path} is not a dataset file")
    return Dataset(arr["train_x"], arr["train_y"]), Dataset(arr["holdout_x"], arr["holdout_y"])


def _load_pair(inputs: dict):
    theta, loss, header = load_weights(inputs["weights"])
    tr, ho = load_datasets(inputs["dataset"])
    if tr.k != theta.spec.input_dim:
        raise DataFormatError(f"weights expect K={theta.spec.input_dim}, dataset has K={tr.k}")
    return theta, loss, tr, ho


def _write_trace(path: Path, result) -> Path:
    keys, rows = result.trace_rows()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
    return path


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def run_train(cfg: dict, inputs: dict, out: Path) -> dict:
    tr, ho = build_datasets(cfg)
    m = cfg["model"]
    spec = build_spec(m["arch"], tr.k, m["hidden"], m["activation"], float(m["beta"]))
    loss = LossSpec(cfg["loss"]["kind"], float(cfg["loss"]["rho"]))
    tcfg = _train_cfg(cfg)
    report = train(spec, tr, loss, tcfg)
    arts = save_report(report, loss, tcfg, out)
    arts["dataset"] = str(save_datasets(out / "dataset.bin", tr, ho, cfg))
    summary = {"converged": report.converged, "final_grad_norm": report.final_grad_norm,
               "iters_used": report.iters_used, "newton_iters_used": report.newton_iters_used,
               "final_energy": report.energy_trace[-1], "n_train": tr.n, "n_holdout": ho.n,
               "train_accuracy": float(np.mean(np.sign(forward(spec, report.theta_star.flat, tr.inputs)) == tr.labels))}
    arts["summary"] = str(write_json(out / "summary.json", summary))
    write_manifest(out, "train", cfg, inputs, arts, dataio.fingerprint(tr.inputs, tr.labels))
    return summary


def run_reconstruct(cfg: dict, inputs: dict, out: Path) -> dict:
    theta, loss, tr, ho = _load_pair(inputs)
    spec = theta.spec
    rc = cfg["recon"]
    method, init = rc["method"], rc["init"]
    rng = RngStream(int(cfg["seed"])).child("reconstruct")
    kind = {"random": "uniform"}.get(init, init)
    scheme = InitScheme(kind, sigma=float(rc["sigma"]), lambda1=float(rc["lambda1"]), lambda2=float(rc["lambda2"]))
    src = {"gt": tr.inputs, "labels": tr.labels, "holdout": ho.inputs, "holdout_labels": ho.labels}
    x0, init_info = make_init(scheme, tr.inputs.shape, rng.child("init"), src)
    res = run_attack(spec, theta.flat, tr.labels, x0, loss, method, _recon_cfg(cfg), _gp_cfg(cfg))

    arts = {}
    arts["recon"] = str(dataio.write_arrays(out / "recon.bin", {"x_rec": res.x_rec, "x0": x0,
                                                                "theta_final": res.theta_final.flat},
                                            {"kind": "recon", "method": method, "init": init_info}))
    arts["trace"] = str(_write_trace(out / "trace.csv", res))
    # claimed counterpart of slot i is training row i
    arts["nn_table"] = str(write_nn_table(out / "nn_table.csv", res.x_rec, tr.inputs, claimed=range(tr.n)))
    geo = dataio.geometry_for(tr.k)
    dataio.export_images(res.x_rec, geo, out / "images", "recon")
    dataio.export_images(x0, geo, out / "images_init", "init")
    arts["images"] = str(out / "images" / "index.json")
    nn = np.array([r.l2 for r in nearest_neighbors(res.x_rec, tr.inputs)])
    summary = {
        "method": method, "init": init, "converged": res.converged, "stop_reason": res.stop_reason,
        "theta_dist": res.theta_dist if method == "bilevel" else None,
        "final_penalty": penalty(spec, theta.flat, Dataset(res.x_rec, tr.labels), loss),
        "iterations": len(res.traces["iter"]) - 1,
        "nn_l2_mean": float(nn.mean()), "nn_l2_min": float(nn.min()), "nn_l2_max": float(nn.max()),
        "mean_abs_to_gt": float(np.mean(np.abs(res.x_rec - tr.inputs))),
        "closer_to_init_fraction": closer_to_init_fraction(res.x_rec, x0, tr.inputs),
    }
    if "assignment" in init_info:
        summary["partition_assignment"] = init_info["assignment"]
    arts["summary"] = str(write_json(out / "summary.json", summary))
    write_manifest(out, "reconstruct", cfg, inputs, arts, dataio.fingerprint(tr.inputs, tr.labels))
    return summary


def run_sweep(cfg: dict, inputs: dict, out: Path) -> dict:
    theta, loss, tr, ho = _load_pair(inputs)
    sw = cfg["sweep"]
    lambdas = [float(v) for v in sw["lambdas"]]
    rng = RngStream(int(cfg["seed"])).child("sweep")
    all_cells = []
    for method in sw["methods"]:
        if method not in ("bilevel", "gradpen"):
            raise UsageError(f"unknown method {method!r}")
        try:
            _, _, agg = run_grid(theta.spec, theta.flat, tr, ho, loss, method, rng, lambdas,
                                 _recon_cfg(cfg), _gp_cfg(cfg), int(sw["jobs"]))
        except Exception:
            if all_cells:
                part = _write_grid_rows(out / "grid_partial.csv", all_cells)
                log.error("sweep aborted during %s; completed methods in %s", method, part)
            raise
        all_cells.extend((method, c) for c in agg)
    arts = {"grid": str(_write_grid_rows(out / "grid.csv", all_cells))}
    arts["noise_reference"] = str(dataio.write_arrays(out / "noise_ref.bin",
                                                      {"x": noise_reference(tr.inputs.shape, rng)},
                                                      {"kind": "noise_reference"}))
    summary = {"cells": len(all_cells), "methods": sw["methods"], "lambdas": lambdas}
    arts["summary"] = str(write_json(out / "summary.json", summary))
    write_manifest(out, "sweep", cfg, inputs, arts, dataio.fingerprint(tr.inputs, tr.labels))
    return summary


def _write_grid_rows(path: Path, rows) -> Path:
    return write_grid(path, [c for _, c in rows], [m for m, _ in rows])


def run_linear(cfg: dict, inputs: dict, out: Path) -> dict:
    theta, loss, tr, ho = _load_pair(inputs)
    spec = theta.spec
    if spec.arch != "affine":
        raise UsageError(f"linear analysis needs affine weights, got {spec.arch!r}")
    lc = cfg["linear"]
    rep = underdetermination_report(tr.n, tr.k, spec.output_dim, tr, theta.flat, loss)
    report = {"stationarity_residual": rep.residual, **rep.to_dict()}
    arts = {}
    construct = lc.get("construct")
    if construct == "interpolate":
        x = construct_interpolating_inputs(theta.flat, tr.labels)
        mse = LossSpec("mse", 0.0)
        report["interpolate"] = {"penalty_mse": penalty(spec, theta.flat, Dataset(x, tr.labels), mse),
                                 "max_abs_fit_error": float(np.max(np.abs(
                                     np.hstack([x, np.ones((tr.n, 1))]) @ theta.flat - tr.labels)))}
        arts["interpolate"] = str(dataio.write_arrays(out / "interpolate.bin", {"x": x, "y": tr.labels},
                                                      {"kind": "interpolate"}))
    elif construct == "collapse":
        y_t = float(lc.get("target", 1.0))
        if lc["collapse_seed"] == "holdout":
            rows = np.flatnonzero(ho.labels == y_t)
            seed_x = ho.inputs[rows[0]]
        else:
            seed_x = RngStream(int(cfg["seed"])).child("collapse_seed").generator().uniform(size=tr.k)
        x = push_to_margin(spec, theta.flat, seed_x, y_t, float(lc["margin"]))
        # weight decay is a property of training, not of the data: the collapse
        # argument is about the data-fit gradient
        fit_loss = LossSpec(loss.kind, 0.0)
        data = construct_collapse(x, spec, theta.flat, y_t, tr.n, fit_loss, float(lc["margin"]))
        nn = nearest_neighbors(data.inputs[:1], tr.inputs)[0]
        report["collapse"] = {"penalty": data.meta["penalty"], "margin": data.meta["margin"],
                              "penalty_with_weight_decay": penalty(spec, theta.flat, data, loss),
                              "nn_l2_to_train": nn.l2, "n": data.n}
        arts["collapse"] = str(dataio.write_arrays(out / "collapse.bin", {"x": data.inputs, "y": data.labels},
                                                   {"kind": "collapse"}))
    elif construct is not None:
        raise UsageError(f"unknown construction {construct!r}")
    arts["report"] = str(write_json(out / "linear_report.json", report))
    write_manifest(out, "linear-analysis", cfg, inputs, arts, dataio.fingerprint(tr.inputs, tr.labels))
    return report


RUNNERS = {"train": run_train, "reconstruct": run_reconstruct, "sweep": run_sweep,
           "linear-analysis": run_linear}


def replay(manifest_path, out: str | None) -> tuple[Path, dict]:
    try:
        man = json.loads(Path(manifest_path).read_text())
        command, cfg, inputs = man["command"], man["config"], man["inputs"]
    except (json.JSONDecodeError, KeyError) as exc:
        raise DataFormatError(f"{manifest_path}: not a run manifest") from exc
    if command not in RUNNERS:
        raise DataFormatError(f"{manifest_path}: unknown command {command!r}")
    if man.get("tool_version") != __version__:
        log.warning("manifest written by version %s, replaying with %s", man.get("tool_version"), __version__)
    path = run_dir(command, int(cfg["seed"]), out)
    return path, RUNNERS[command](cfg, inputs, path)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="datarecon", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--replay", metavar="MANIFEST", help="re-run the command recorded in a manifest")
    p.add_argument("--out", help="output directory for --replay")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command")

    def common(sp):
        sp.add_argument("--config", help="JSON config file (flags take precedence)")
        sp.add_argument("--out", help=f"run directory (default: ${OUT_ENV} or ./runs, timestamp + seed)")
        sp.add_argument("--seed", type=int)

    def weights(sp):
        sp.add_argument("--weights", required=True, help="weights.bin from a train run")
        sp.add_argument("--dataset", help="dataset.bin (default: next to the weights file)")

    def recon_flags(sp):
        sp.add_argument("--eta", type=float)
        sp.add_argument("--outer-iters", type=int)
        sp.add_argument("--stop-tol", type=float)
        sp.add_argument("--project-box", action="store_const", const=True)
        sp.add_argument("--gp-lr", type=float, help="gradient-penalty learning rate")
        sp.add_argument("--gp-iters", type=int, help="gradient-penalty iterations")

    t = sub.add_parser("train", help="train theta* on a dataset")
    common(t)
    t.add_argument("--data", choices=("synth", "cifar"))
    t.add_argument("--n", type=int, help="training rows (an equal-size held-out set is drawn too)")
    t.add_argument("--k", type=int, help="input dimension (synthetic data)")
    t.add_argument("--separation", type=float)
    t.add_argument("--cifar-files", nargs="+")
    t.add_argument("--classes", type=_int_list, help="two CIFAR class ids, e.g. 0,1")
    t.add_argument("--per-class", type=int)
    t.add_argument("--arch", choices=("affine", "onehidden", "mlp"))
    t.add_argument("--hidden", type=int)
    t.add_argument("--activation", choices=("softplus", "relu"))
    t.add_argument("--beta", type=float)
    t.add_argument("--loss", choices=("logistic", "mse"))
    t.add_argument("--rho", type=float)
    t.add_argument("--lr", type=float)
    t.add_argument("--momentum", type=float)
    t.add_argument("--max-iters", type=int)
    t.add_argument("--grad-tol", type=float)

    r = sub.add_parser("reconstruct", help="reconstruct training inputs from weights")
    common(r)
    weights(r)
    r.add_argument("--method", choices=("bilevel", "gradpen"))
    r.add_argument("--init", choices=("random", "gaussian", "gt", "partition", "mix"))
    r.add_argument("--sigma", type=float, help="std of the gaussian init")
    r.add_argument("--lambda1", type=float)
    r.add_argument("--lambda2", type=float)
    recon_flags(r)

    s = sub.add_parser("sweep", help="run the lambda1/lambda2 initialisation grid")
    common(s)
    weights(s)
    s.add_argument("--lambdas", type=_float_list, help="comma-separated grid values")
    s.add_argument("--methods", type=lambda v: v.split(","), help="bilevel,gradpen")
    s.add_argument("--jobs", type=int)
    recon_flags(s)

    la = sub.add_parser("linear-analysis", help="stationarity and degenerate constructions (affine)")
    common(la)
    weights(la)
    la.add_argument("--construct", choices=("collapse", "interpolate"))
    la.add_argument("--margin", type=float)
    la.add_argument("--collapse-seed", choices=("noise", "holdout"))
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.replay:
            if args.command:
                parser.error("--replay cannot be combined with a subcommand")
            path, result = replay(args.replay, args.out)
        else:
            if not args.command:
                parser.error("a subcommand or --replay is required")
            cfg = effective_config(args)
            inputs = {}
            if args.command != "train":
                inputs["weights"] = args.weights
                inputs["dataset"] = args.dataset or str(Path(args.weights).with_name("dataset.bin"))
                for f in inputs.values():
                    if not Path(f).is_file():
                        raise FileNotFoundError(f"{f} does not exist")
            path = run_dir(args.command, int(cfg["seed"]), args.out)
            result = RUNNERS[args.command](cfg, inputs, path)
    except (UsageError, TypeError) as exc:
        print(f"datarecon: usage error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"datarecon: numerical failure: {exc}", file=sys.stderr)
        return 3
    except (DataFormatError, OSError) as exc:
        print(f"datarecon: I/O error: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"datarecon: invalid configuration: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(_jsonable({"run_dir": str(path), **result}), sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
