"""Command-line entry point: gen-data, train, eval, ablate.

Exit codes: 0 success, 1 usage / configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from . import harness
from .config import ConfigError, RunConfig, load_config
from .grid import write_pgm
from .model import CheckpointError, load_checkpoint, save_checkpoint
from .synth import PlacementError, dump_samples, generate_split

log = logging.getLogger("disep")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="key = value run configuration")
    p.add_argument("--set", dest="overrides", metavar="KEY=VALUE", action="append", default=[],
                   help="override one configuration key (repeatable)")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides out_dir)")
    p.add_argument("--seed", type=int, help="training seed (overrides seed)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="disep", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write the synthetic splits as PPM/PGM files")
    _common(p)

    p = sub.add_parser("train", help="train one model and write checkpoint + CSV log")
    _common(p)

    p = sub.add_parser("eval", help="score a checkpoint on the validation and test splits")
    _common(p)
    p.add_argument("--checkpoint", metavar="PATH", required=True)
    p.add_argument("--dump-masks", action="store_true", help="write pred/gt/instance PGMs per test sample")

    p = sub.add_parser("ablate", help="sweep one axis and write a comparison CSV")
    _common(p)
    p.add_argument("--axis", required=True, help=f"one of {', '.join(harness.AXES)}")
    p.add_argument("--values", required=True,
                   help="comma-separated values; thresholds as T_HIGH:T_LOW, e.g. 0.6:0.4,0.45:0.45")
    p.add_argument("--seeds", default="0,1,2", help="comma-separated training seeds shared by every value")
    p.add_argument("--workers", type=int, default=1)
    return parser


def _resolve(args) -> RunConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out is not None:
        overrides.append(f"out_dir={args.out}")
    return load_config(args.config, overrides)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_snapshot(cfg: RunConfig, out: Path, command: str) -> None:
    (out / "config.resolved").write_text(cfg.dumps())
    # timestamps live here only, so every other artifact is reproducible byte for byte
    (out / "metadata.txt").write_text(f"command = {command}\nstarted = {time.strftime('%Y-%m-%dT%H:%M:%S')}\n")


def _split(cfg: RunConfig):
    tc = cfg.experiment.train
    return generate_split(cfg.experiment.synth, tc.n_train, tc.n_val, tc.n_test)


def _report_row(name: str, rep: harness.MetricReport) -> dict:
    return {"split": name, "f1": rep.f1, "oa": rep.oa, "iou": rep.iou, "precision": rep.precision,
            "recall": rep.recall, "inst_mae": rep.instance_count_mae}


_REPORT_COLUMNS = ["split", "f1", "oa", "iou", "precision", "recall", "inst_mae"]


def cmd_gen_data(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    _write_snapshot(cfg, out, "gen-data")
    for name, samples in zip(("train", "val", "test"), _split(cfg)):
        dump_samples(samples, out / name, prefix=name)
    print(f"wrote synthetic splits to {out}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    _write_snapshot(cfg, out, "train")
    result = harness.train(cfg.experiment)
    save_checkpoint(result.params, out / "checkpoint.bin")
    (out / "log.csv").write_text(result.csv_text())
    rows = [_report_row("val", result.val), _report_row("test", result.test)]
    (out / "summary.csv").write_text(harness.format_csv(rows, _REPORT_COLUMNS))
    _print_report(rows)
    return EXIT_OK


def _print_report(rows) -> None:
    print("(inst_mae = |predicted components - true instances|, averaged per sample)")
    for r in rows:
        print(f"{r['split']:>5}: F1 {r['f1']:.4f}  OA {r['oa']:.4f}  IoU {r['iou']:.4f}  "
              f"P {r['precision']:.4f}  R {r['recall']:.4f}  inst_mae {r['inst_mae']:.3f}")


def cmd_eval(cfg: RunConfig, checkpoint: str, dump_masks: bool) -> int:
    params = load_checkpoint(checkpoint)
    if params.config != cfg.experiment.model:
        raise CheckpointError(
            f"checkpoint has {params.config} but the configuration asks for {cfg.experiment.model}")
    _, val, test = _split(cfg)
    rows = [_report_row("val", harness.evaluate_split(params, val, cfg.experiment)),
            _report_row("test", harness.evaluate_split(params, test, cfg.experiment))]
    _print_report(rows)
    out = _out_dir(cfg)
    (out / "eval.csv").write_text(harness.format_csv(rows, _REPORT_COLUMNS))
    if dump_masks:
        mask_dir = out / "masks"
        mask_dir.mkdir(exist_ok=True)
        preds = harness.predict_masks(params, test, cfg.experiment)
        for i, (pred, s) in enumerate(zip(preds, test)):
            write_pgm(mask_dir / f"test_{i:05d}_pred.pgm", pred)
            write_pgm(mask_dir / f"test_{i:05d}_gt.pgm", s.gt)
            write_pgm(mask_dir / f"test_{i:05d}_inst.pgm", s.gt_instances)
        print(f"wrote {len(test)} mask triples to {mask_dir}")
    return EXIT_OK


def cmd_ablate(cfg: RunConfig, axis: str, values: str, seeds: str, workers: int) -> int:
    if axis not in harness.AXES:
        raise ConfigError(f"unknown axis {axis!r}; valid axes: {', '.join(harness.AXES)}")
    try:
        parsed = [harness.parse_axis_value(axis, v.strip()) for v in values.split(",") if v.strip()]
        seed_list = [int(s) for s in seeds.split(",") if s.strip()]
        for v in parsed:
            harness.apply_axis(cfg.experiment, axis, v)
    except ValueError as exc:
        raise ConfigError(f"bad --values for axis {axis!r}: {exc}") from None
    if not parsed or not seed_list:
        raise ConfigError("--values and --seeds must not be empty")
    out = _out_dir(cfg)
    _write_snapshot(cfg, out, f"ablate {axis}")
    rows = harness.ablation_sweep(cfg.experiment, axis, parsed, seed_list, workers)
    path = out / f"ablation_{axis}.csv"
    path.write_text(harness.format_csv(rows, harness.SUMMARY_COLUMNS))
    for r in rows:
        print(f"{axis}={r['value']:>12}  F1 {r['f1']:.4f}  IoU {r['iou']:.4f}  inst_mae {r['inst_mae']:.3f}")
    print(f"wrote {path}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _resolve(args)
        if args.command == "gen-data":
            return cmd_gen_data(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint, args.dump_masks)
        return cmd_ablate(cfg, args.axis, args.values, args.seeds, args.workers)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (harness.TrainingAborted, CheckpointError, PlacementError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
