"""Command-line front end.

    spikelab train       --config exp.cfg --out runs/a
    spikelab compare     --schemes ikun_v2,normal --seeds 0,1,2 --out runs/cmp
    spikelab hessian     --checkpoint runs/a/best.ckpt --out runs/a
    spikelab varprop     --schemes ikun_v1,ikun_v2,normal --out runs/vp
    spikelab init-report --set init.calibrate=true --out runs/init

Exit status: 0 on success, 1 on a runtime or data failure, 2 on a usage or
configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import numerics as nx
from .config import ExperimentConfig, dump_config, parse_config
from .data import Dataset, load_fashion_mnist, subset, synthetic_dataset
from .errors import ConfigError, SpikeLabError, UsageError
from .hessian import NetworkOracle, curvature_batch, default_eps, hessian_report
from .init import INIT_KINDS, initialize_network
from .network import Network, default_spec, load_checkpoint
from .train import run_training, scheme1_epoch, scheme2_best, write_metrics_csv
from .varprop import build_stack, measure_variances, write_varprop_csv

log = logging.getLogger("spikelab")

COMPARE_COLUMNS = ("scheme", "seed", "optimizer", "scheme1_epoch", "best_epoch", "best_test_acc",
                   "hessian_trace", "lambda_max", "lambda_min_top50")
INIT_REPORT_COLUMNS = ("layer", "fan_in", "fan_out", "sigma_w", "sigma_x2", "mu_h", "ef2", "v_threshold")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.9g}"
    return str(x)


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# building blocks shared by the subcommands
# --------------------------------------------------------------------------

def load_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    d = cfg.data
    if d.source == "synthetic":
        return synthetic_dataset(d.train_size, d.subset_seed), synthetic_dataset(d.test_size, d.subset_seed + 1)
    train, test = load_fashion_mnist(d.path)
    return subset(train, d.train_size, d.subset_seed), subset(test, d.test_size, d.subset_seed)


def build_network(cfg: ExperimentConfig, train: Dataset | None = None):
    """Network from the config, initialized; returns ``(net, calibration stats)``."""
    spec = default_spec(T=cfg.net.T, neuron=cfg.neuron, surrogate=cfg.surrogate, encoder=cfg.net.encoder)
    net = Network(spec)
    calib = None
    if cfg.init.calibrate:
        if train is None:
            train, _ = load_data(cfg)
        calib = train.images[:cfg.init.calib_size]
    return initialize_network(net, cfg.scheme, calib=calib, rng=nx.RngStream(cfg.seed).substream("init"))


def train_run(cfg: ExperimentConfig, out: Path, data=None) -> dict:
    """Train one configuration into ``out``; returns the summary dict."""
    out.mkdir(parents=True, exist_ok=True)
    train, test = data if data is not None else load_data(cfg)
    net, _ = build_network(cfg, train)
    result = run_training(net, train, test, cfg.train, nx.RngStream(cfg.seed).substream("train"),
                          checkpoint_path=out / "best.ckpt")
    write_metrics_csv(result.metrics, out / "metrics.csv")
    summary = {
        "scheme": cfg.init.kind,
        "seed": cfg.seed,
        "optimizer": cfg.train.optimizer,
        "epochs": cfg.train.epochs,
        "scheme1_epoch": scheme1_epoch(result.metrics, cfg.train.train_acc_threshold,
                                       cfg.train.test_acc_threshold),
        "scheme2": None,
    }
    if result.metrics:
        epoch, acc = scheme2_best(result.metrics)
        summary["scheme2"] = {"epoch": epoch, "test_acc": acc}
    _write_json(out / "summary.json", summary)
    return summary


def hessian_run(cfg: ExperimentConfig, checkpoint: Path, out: Path, data=None) -> dict:
    """Curvature report for a checkpoint, written to ``out/hessian.json``."""
    out.mkdir(parents=True, exist_ok=True)
    spec = default_spec(T=cfg.net.T, neuron=cfg.neuron, surrogate=cfg.surrogate, encoder=cfg.net.encoder)
    net = load_checkpoint(checkpoint, spec)
    _, test = data if data is not None else load_data(cfg)
    batch = curvature_batch(test, cfg.hessian.batch_size, cfg.seed)
    h = cfg.hessian
    oracle = NetworkOracle(net, batch.images, batch.labels, mode=h.mode, seed=cfg.seed)
    theta = net.get_flat()
    report = hessian_report(oracle, theta, nx.RngStream(cfg.seed).substream("hessian"), k=h.k,
                            n_probes=h.probes, max_iters=h.max_iters, tol=h.tol,
                            lanczos_steps=h.lanczos_steps, density_probes=h.density_probes,
                            eps=default_eps(theta, h.rel_eps))
    payload = report.to_json()
    _write_json(out / "hessian.json", payload)
    return payload


def _compare_cell(cfg: ExperimentConfig, scheme: str, seed: int, out: Path) -> dict:
    cell = cfg.with_overrides({"init.kind": scheme, "seed": str(seed)})
    data = load_data(cell)
    summary = train_run(cell, out, data)
    row = {"scheme": scheme, "seed": seed, "optimizer": cell.train.optimizer,
           "scheme1_epoch": summary["scheme1_epoch"],
           "best_epoch": summary["scheme2"]["epoch"] if summary["scheme2"] else None,
           "best_test_acc": summary["scheme2"]["test_acc"] if summary["scheme2"] else None,
           "hessian_trace": None, "lambda_max": None, "lambda_min_top50": None}
    if cell.hessian.enabled and (out / "best.ckpt").exists():
        rep = hessian_run(cell, out / "best.ckpt", out, data)
        row["hessian_trace"] = rep["trace"]
        row["lambda_max"] = rep["top_eigenvalues"][0]
        row["lambda_min_top50"] = min(rep["top_eigenvalues"])
    return row


def _safe_cell(args) -> tuple[dict | None, str]:
    cfg, scheme, seed, out = args
    try:
        return _compare_cell(cfg, scheme, seed, out), "ok"
    except (SpikeLabError, OSError, ValueError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_train(cfg: ExperimentConfig, args) -> int:
    summary = train_run(cfg, args.out)
    log.info("scheme1_epoch=%s scheme2=%s", summary["scheme1_epoch"], summary["scheme2"])
    return 0


def cmd_compare(cfg: ExperimentConfig, args) -> int:
    schemes = args.schemes or list(INIT_KINDS)
    seeds = args.seeds or [cfg.seed]
    cells = [(cfg, s, seed, args.out / s / f"seed{seed}") for s in schemes for seed in seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_safe_cell, cells))
    else:
        results = [_safe_cell(c) for c in cells]
    rows, status = [], []
    for (_, scheme, seed, _), (row, msg) in zip(cells, results):
        status.append((scheme, seed, msg))
        if row is not None:
            rows.append([row[c] for c in COMPARE_COLUMNS])
        else:
            log.error("compare cell %s/seed%d failed: %s", scheme, seed, msg)
    _write_csv(args.out / "compare.csv", COMPARE_COLUMNS, rows)
    _write_csv(args.out / "status.csv", ("scheme", "seed", "status"), status)
    return 0 if rows else 1


def cmd_hessian(cfg: ExperimentConfig, args) -> int:
    checkpoint = args.checkpoint
    if checkpoint is None:
        raise UsageError("hessian needs --checkpoint PATH")
    rep = hessian_run(cfg, checkpoint, args.out)
    log.info("trace=%.6g lambda_max=%.6g", rep["trace"], rep["top_eigenvalues"][0])
    return 0


def cmd_varprop(cfg: ExperimentConfig, args) -> int:
    schemes = args.schemes or ["ikun_v1", "ikun_v2", "normal"]
    v = cfg.varprop
    reports = []
    for scheme in schemes:
        cell = cfg.with_overrides({"init.kind": scheme})
        rng = nx.RngStream(cfg.seed).substream("varprop")
        net, _ = build_stack(v.depth, v.width, cell.neuron, cell.surrogate, cell.scheme, rng, T=v.T,
                             calib_size=cfg.init.calib_size, calibrate=cfg.init.calibrate)
        batch = nx.sample_gaussian(rng.substream("batch"), (v.batch, v.width))
        reports.append(measure_variances(net, batch, rng, scheme))
    write_varprop_csv(reports, args.out / "varprop.csv")
    return 0


def cmd_init_report(cfg: ExperimentConfig, args) -> int:
    _, stats = build_network(cfg)
    rows = [(s.layer, s.fan_in, s.fan_out, s.sigma_w, s.sigma_x2, s.mu_h, s.ef2, s.v_threshold)
            for s in stats]
    _write_csv(args.out / "init_report.csv", INIT_REPORT_COLUMNS, rows)
    return 0


COMMANDS = {
    "train": cmd_train,
    "compare": cmd_compare,
    "hessian": cmd_hessian,
    "varprop": cmd_varprop,
    "init-report": cmd_init_report,
}


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _seed_list(text: str) -> list[int]:
    try:
        return [int(t) for t in _csv_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spikelab", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", type=Path, help="config file of 'key = value' lines")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override one config key (repeatable)")
    ap.add_argument("--out", type=Path, default=Path("."), help="output directory")
    ap.add_argument("--seed", type=int, help="master seed (overrides the config)")
    ap.add_argument("--schemes", type=_csv_list, help="comma-separated init schemes")
    ap.add_argument("--seeds", type=_seed_list, help="comma-separated seeds for compare")
    ap.add_argument("--jobs", type=int, default=1, help="parallel compare cells")
    ap.add_argument("--checkpoint", type=Path, help="checkpoint for the hessian command")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = list(args.set)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        cfg = parse_config(args.config, overrides)
        for s in args.schemes or []:
            if s not in INIT_KINDS:
                cfg.with_overrides({"init.kind": s})  # raises with suggestions
        if args.jobs < 1:
            raise UsageError(f"--jobs must be >= 1, got {args.jobs}")
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "config.txt").write_text(dump_config(cfg))
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, UsageError) as exc:
        print(f"spikelab: error: {exc}", file=sys.stderr)
        ap.print_usage(sys.stderr)
        return 2
    except (SpikeLabError, OSError) as exc:
        print(f"spikelab: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
