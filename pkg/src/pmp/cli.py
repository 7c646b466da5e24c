"""Command line entry point: ``pmp run|sweep|dump-curves|data|eval``.

Exit codes: 0 success, 1 data or checkpoint error, 2 invalid configuration,
3 training diverged (a diagnostic is written next to the metrics).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .bandstop import BandStopConfig, observed_pruning_rate, psi_curve
from .config import (NO_TARGET, TARGET_PRESETS, ConfigError, DataSpec, ExperimentConfig, TargetSpec,
                     load_config, validate_sweep, _parse_section)
from .data import DataFormatError, load_dataset, read_sequences, synth_dataset, synth_sequences, write_sequences
from .distributions import discretize
from .gcn import count_params, load_checkpoint, save_checkpoint
from .histogram import make_grid, soft_histogram
from .report import (BINS_FIELDS, BINS_SCHEMA, METRICS_SCHEMA, PSI_FIELDS, PSI_SCHEMA, SUMMARY_FIELDS,
                     SUMMARY_SCHEMA, CsvWriter, ReportRow, summarize, write_csv, write_report)
from .trainer import (METRIC_FIELDS, TrainingDiverged, default_gcn_config, evaluate, train_mp_baseline,
                      train_pmp)

log = logging.getLogger("pmp")

EXIT_DATA, EXIT_CONFIG, EXIT_DIVERGED = 1, 2, 3


class Diverged(Exception):
    def __init__(self, message: str, diagnostic: Path):
        super().__init__(message)
        self.diagnostic = diagnostic


# ----------------------------------------------------------------- helpers

def build_dataset(spec: DataSpec):
    if spec.path is not None:
        return load_dataset(spec.path, spec.format, spec.chunks)
    s = spec.synth
    return synth_dataset(s.n_joints, s.classes, s.per_class, s.frames, s.noise_std, s.seed,
                         spec.chunks, s.test_fraction, s.jitter)


def _gcn_config(cfg: ExperimentConfig, dataset):
    return default_gcn_config(dataset, **asdict(cfg.model))


def train_one(cfg: ExperimentConfig, out_dir: Path, *, kind: str = "pmp", rate: float | None = None,
              target: str | TargetSpec | None = None, seed: int | None = None, dataset=None) -> ReportRow:
    """Train one model, streaming metrics to ``out_dir``; returns its report row.

    ``kind`` is "pmp" or "mp". ``target`` may be a preset name, ``"none"``
    (lam = 0 with the gaussian threshold) or a TargetSpec.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = dataset if dataset is not None else build_dataset(cfg.dataset)
    overrides = {}
    if rate is not None:
        overrides["rate"] = rate
    if seed is not None:
        overrides["seed"] = seed
    label = cfg.train.target.kind
    if isinstance(target, TargetSpec):
        overrides["target"], label = target.build(), target.kind
    elif target == NO_TARGET:
        overrides["target"], overrides["lam"], label = TARGET_PRESETS["gaussian"], 0.0, NO_TARGET
    elif target is not None:
        overrides["target"], label = TargetSpec(target).build(), target
    tcfg = cfg.train.build(**overrides)
    if kind == "mp":
        label = "mp"
    gcfg = _gcn_config(cfg, dataset)
    start = time.perf_counter()
    with CsvWriter(out_dir / "metrics.csv", METRICS_SCHEMA, METRIC_FIELDS) as metrics:
        trainer = train_mp_baseline if kind == "mp" else train_pmp
        try:
            model, history = trainer(dataset, gcfg, tcfg, on_epoch=metrics.write)
        except TrainingDiverged as exc:
            diag = out_dir / "diagnostic.json"
            snap = exc.snapshot
            diag.write_text(json.dumps({"error": str(exc), "epoch": snap["epoch"],
                                        "last_rows": snap["history"][-5:]}, indent=2, default=float))
            if "model" in snap:
                save_checkpoint(snap["model"], out_dir / "diverged.npz")
            raise Diverged(str(exc), diag) from None
    wall = time.perf_counter() - start
    accuracy = history.final.get("test_acc", float("nan"))
    observed = history.final.get("observed_pr", 0.0)
    save_checkpoint(model, out_dir / "checkpoint.npz",
                    extra={"dataset": asdict(cfg.dataset), "kind": kind, "target_kind": label,
                           "rate": tcfg.rate, "seed": tcfg.seed, "threshold": history.threshold,
                           "omega": list(tcfg.omega), "K": tcfg.K, "histogram": tcfg.histogram})
    return ReportRow.make(tcfg.rate, observed, label, accuracy, tcfg.seed, wall)


def _sweep_row(args) -> ReportRow:
    cfg, out_dir, kind, rate, target, seed = args
    name = target.kind if isinstance(target, TargetSpec) else target
    label = "mp" if kind == "mp" else name
    start = time.perf_counter()
    try:
        return train_one(cfg, out_dir, kind=kind, rate=rate, target=target, seed=seed)
    except (Diverged, ValueError, FloatingPointError) as exc:
        log.warning("row %s r=%g seed=%d failed: %s", label, rate, seed, exc)
        return ReportRow.failed(rate, label, seed, str(exc), time.perf_counter() - start)


def sweep_rows(cfg: ExperimentConfig, out_dir: Path) -> list[tuple]:
    rows = []
    for seed in cfg.sweep.seeds:
        for rate in cfg.sweep.rates:
            for target in cfg.sweep.targets:
                name = target.kind if isinstance(target, TargetSpec) else target
                rows.append((cfg, out_dir / "rows" / f"{name}_r{rate:g}_s{seed}", "pmp", rate, target, seed))
            if cfg.sweep.baseline:
                rows.append((cfg, out_dir / "rows" / f"mp_r{rate:g}_s{seed}", "mp", rate, None, seed))
    return rows


def run_sweep(cfg: ExperimentConfig, out_dir: Path) -> list[ReportRow]:
    validate_sweep(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = sweep_rows(cfg, out_dir)
    if cfg.sweep.jobs > 1:
        with ProcessPoolExecutor(cfg.sweep.jobs) as pool:
            rows = list(pool.map(_sweep_row, jobs))
    else:
        rows = [_sweep_row(j) for j in jobs]
    write_report(out_dir, rows)
    write_csv(out_dir / "summary.csv", SUMMARY_SCHEMA, SUMMARY_FIELDS, summarize(rows))
    return rows


def dump_curves(cfg: ExperimentConfig, out_dir: Path, checkpoint: str | None = None) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    tcfg = cfg.train.build()
    a = cfg.curves.a if cfg.curves.a is not None else tcfg.threshold()
    sigma = cfg.curves.sigma if cfg.curves.sigma is not None else tcfg.sigma0
    band = BandStopConfig(a, sigma)
    curve = psi_curve(band, tcfg.omega, cfg.curves.points)
    paths = [write_csv(out_dir / "psi.csv", PSI_SCHEMA, PSI_FIELDS,
                       ({"w_hat": float(w), "psi": float(p), "w_psi": float(e)} for w, p, e in curve))]
    grid = make_grid(tcfg.omega[0], tcfg.omega[1], tcfg.K)
    p = discretize(tcfg.truncated_target(), grid.centers, grid.omega)
    paths.append(_write_bins(out_dir / "target_p.csv", grid.centers, p.probs))
    if checkpoint is not None:
        if not Path(checkpoint).exists():
            raise FileNotFoundError(f"checkpoint {checkpoint} not found; observed Q needs a trained model")
        model, _ = load_checkpoint(checkpoint)
        latents = [ad.Tensor(model.layer_weights(l).data if not model.gate else l.latent.data)
                   for l in model.latent_layers]
        q = soft_histogram(latents, grid, tcfg.histogram).numpy()
        paths.append(_write_bins(out_dir / "observed_q.csv", grid.centers, q))
    return paths


def _write_bins(path, centers, probs) -> Path:
    return write_csv(path, BINS_SCHEMA, BINS_FIELDS,
                     ({"bin_center": float(c), "probability": float(v)} for c, v in zip(centers, probs)))


def evaluate_checkpoint(path, data: str | None = None, soft: bool = False) -> dict:
    model, extra = load_checkpoint(path)
    if data is not None:
        spec = DataSpec(path=data)
    elif "dataset" in extra:
        spec = _parse_section(DataSpec, extra["dataset"], "dataset")
    else:
        raise ValueError("checkpoint carries no dataset reference; pass --data")
    dataset = build_dataset(spec)
    x, y = dataset.arrays("test")
    if len(y) == 0:
        raise ValueError("dataset has no test samples")
    if model.gate:
        observed = observed_pruning_rate(model.latent_layers)
    elif model.masks is not None:
        total = sum(m.size for m in model.masks.values())
        observed = sum(int(np.count_nonzero(m == 0)) for m in model.masks.values()) / total
    else:
        observed = 0.0
    return {"checkpoint": str(path), "accuracy": evaluate(model, (x, y), exported=not soft),
            "observed_pr": observed, "threshold": model.band.a, "test_samples": int(len(y)),
            "params": count_params(model)["total"]}


# --------------------------------------------------------------------- main

def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if getattr(args, "out", None):
        cfg = replace(cfg, output=str(Path(args.out).resolve()))
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    out = cfg.output_dir()
    row = train_one(cfg, out)
    write_report(out, [row])
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"{out}: observed_pr={row.observed_pr:.4f} gap={row.gap:.4f} accuracy={row.accuracy:.4f}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    out = cfg.output_dir()
    rows = run_sweep(cfg, out)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    for r in rows:
        print(f"{r.target_kind:>9} r={r.fixed_pr:<5g} seed={r.seed} observed={r.observed_pr:.4f} "
              f"gap={r.gap:.4f} acc={r.accuracy:.4f} {r.status}")
    return 0


def cmd_dump_curves(args) -> int:
    cfg = _load(args)
    for p in dump_curves(cfg, cfg.output_dir(), args.checkpoint):
        print(p)
    return 0


def cmd_data_synth(args) -> int:
    seqs = synth_sequences(args.n_joints, args.classes, args.per_class, args.frames, args.noise_std,
                           args.seed, args.test_fraction, args.jitter)
    path = write_sequences(seqs, args.out, args.format, [f"class{c}" for c in range(args.classes)])
    print(f"wrote {len(seqs)} sequences to {path}")
    return 0


def cmd_data_validate(args) -> int:
    seqs, names = read_sequences(args.path, args.format)
    ds = load_dataset(args.path, args.format, args.chunks)
    labels = sorted({s.label for s in seqs})
    print(f"{args.path}: ok, {len(seqs)} sequences, {ds.n} joints, {len(labels)} labels, "
          f"train={len(ds.train)} test={len(ds.test)}, node signal {ds.s}x{ds.n}")
    return 0


def cmd_eval(args) -> int:
    print(json.dumps(evaluate_checkpoint(args.checkpoint, args.data, args.soft), sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pmp", description="Pruning experiments on skeleton GCNs.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train one model from a config")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("sweep", help="train every (rate, target, seed) cell plus baselines")
    p.add_argument("config")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("dump-curves", help="write band-stop curve, target P and observed Q")
    p.add_argument("config")
    p.add_argument("--checkpoint", help="trained model whose latent histogram Q is dumped")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_dump_curves)

    p = sub.add_parser("eval", help="accuracy and pruning rate of a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--data", help="dataset file (default: the one recorded in the checkpoint)")
    p.add_argument("--soft", action="store_true", help="use gated weights instead of the hard export")
    p.set_defaults(fn=cmd_eval)

    data = sub.add_parser("data", help="dataset utilities").add_subparsers(dest="data_command", required=True)
    p = data.add_parser("synth", help="write a synthetic skeleton dataset")
    p.add_argument("out")
    p.add_argument("--format", choices=("jsonl", "csv"))
    p.add_argument("--n-joints", type=int, default=14)
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--per-class", type=int, default=60)
    p.add_argument("--frames", type=int, default=64)
    p.add_argument("--noise-std", type=float, default=0.01)
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--test-fraction", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_data_synth)
    p = data.add_parser("validate", help="check a dataset file against the schema")
    p.add_argument("path")
    p.add_argument("--format", choices=("jsonl", "csv"))
    p.add_argument("--chunks", type=int, default=32)
    p.set_defaults(fn=cmd_data_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Diverged as exc:
        print(f"training diverged: {exc} (diagnostic: {exc.diagnostic})", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
