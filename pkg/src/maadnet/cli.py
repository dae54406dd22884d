"""Command-line entry point: data generation, training, evaluation, statistics, grad checks, ablations."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .data import DatasetError, DomainSpec, generate_dataset, load_dataset, source_spec, target_spec
from .train import CheckpointError, ConfigError, TrainConfig, TrainingData, Trainer, restore_networks
from .train.ablation import GRIDS, run_grid
from .train.evaluate import evaluate_model

log = logging.getLogger("maadnet")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """argparse that reports bad arguments as exit code 1 instead of exiting with 2."""

    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# -- data config ----------------------------------------------------------------------

@dataclasses.dataclass
class DataConfig:
    source: dict = dataclasses.field(default_factory=dict)  # DomainSpec overrides
    target: dict = dataclasses.field(default_factory=dict)
    counts: tuple[int, int] = (200, 100)
    split_fractions: dict = dataclasses.field(
        default_factory=lambda: {"source": [1.0, 0.0, 0.0], "target": [0.6, 0.0, 0.4]}
    )
    seed: int = 0
    image_size: int = 64

    @classmethod
    def from_json(cls, path: Optional[str]) -> "DataConfig":
        if path is None:
            return cls()
        raw = _read_json_config(path)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"{path}: unknown key(s) {', '.join(unknown)}")
        return cls(**raw)

    def specs(self) -> tuple[DomainSpec, DomainSpec]:
        out = []
        for base, overrides in ((source_spec(self.image_size), self.source), (target_spec(self.image_size), self.target)):
            merged = {**base.to_dict(), **overrides}
            if "background" in overrides:
                merged["background"] = {**base.to_dict()["background"], **overrides["background"]}
            try:
                out.append(DomainSpec.from_dict(merged))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"domain spec {base.name}: {exc}") from exc
        return out[0], out[1]


def _read_json_config(path: str) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"{path}: config file not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc.msg})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return raw


def _train_config(path: Optional[str], seed: Optional[int]) -> TrainConfig:
    cfg = TrainConfig.from_json(path) if path else TrainConfig()
    return dataclasses.replace(cfg, seed=seed) if seed is not None else cfg


# -- subcommands -------------------------------------------------------------------------

def cmd_generate(args) -> int:
    dc = DataConfig.from_json(args.config)
    src, tgt = dc.specs()
    fractions = {k: tuple(v) for k, v in dc.split_fractions.items()} if isinstance(dc.split_fractions, dict) else tuple(dc.split_fractions)
    manifest = generate_dataset(args.out, src, tgt, tuple(dc.counts), fractions, dc.seed)
    print(manifest)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _train_config(args.config, args.seed)
    data = TrainingData.from_manifest(args.data, cfg.label_domain)
    report = Trainer(cfg, data).fit(args.out)
    print(json.dumps(report.metrics, sort_keys=True))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg, nets, norm, _ = restore_networks(args.checkpoint)
    samples = list(load_dataset(args.data, args.split, args.domain))
    if not samples:
        raise DatasetError(f"split '{args.split}' of {args.data} has no {args.domain} images")
    metrics = evaluate_model(nets.detector, samples, norm, cfg.evaluation, cfg.model.num_keypoints)
    text = json.dumps(metrics, indent=1, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return EXIT_OK


def cmd_stats(args) -> int:
    from .stats import annotation_stats, domain_gap_rows

    per_domain = {}
    for domain in ("source", "target"):
        samples = list(load_dataset(args.data, None, domain))[: args.images or None]
        if not samples:
            raise DatasetError(f"{args.data}: no {domain} images")
        size = samples[0].image.shape[:2]
        per_domain[domain] = annotation_stats([s.annotations for s in samples], size, [s.image for s in samples])
    rows = domain_gap_rows(per_domain["source"], per_domain["target"])
    print(f"{'metric':<20s} {'source':>18s} {'target':>18s}  target lower")
    for r in rows:
        print(f"{r['metric']:<20s} {r['source_mean']:>9.3f} ± {r['source_std']:<6.3f} {r['target_mean']:>9.3f} ± {r['target_std']:<6.3f}  {r['target_lower']}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_suite

    results, elapsed = run_suite(range(args.seeds))
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name:<22s} max rel err {r.report.max_error:.3e} (tol {r.tolerance:g}) {status}")
    print(f"{sum(r.passed for r in results)}/{len(results)} passed in {elapsed:.1f} s")
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


def cmd_ablate(args) -> int:
    cfg = _train_config(args.config, None)
    data = TrainingData.from_manifest(args.data, cfg.label_domain)
    path = run_grid(args.grid, cfg, data, args.out, args.seeds)
    print(path)
    return EXIT_OK


def build_parser() -> Parser:
    parser = Parser(prog="maadnet", description="Multi-level adversarial domain adaptation for leaf detection.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("generate-data", help="render the synthetic two-domain dataset")
    p.add_argument("--config", help="JSON data config (defaults: 200 source, 100 target images)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one model and write checkpoint + reports")
    p.add_argument("--config", help="JSON training config")
    p.add_argument("--data", required=True, help="dataset manifest or directory")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--domain", default="target", choices=("source", "target"))
    p.add_argument("--out", help="also write the metrics JSON here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stats", help="domain-gap statistics table")
    p.add_argument("--data", required=True)
    p.add_argument("--images", type=int, default=0, help="images per domain (0 = all)")
    p.add_argument("--out", help="also write the table as CSV")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and the adversarial branch")
    p.add_argument("--seeds", type=int, default=3)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="run an ablation grid and write comparison.csv")
    p.add_argument("--grid", required=True, choices=GRIDS)
    p.add_argument("--config", help="base JSON training config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, DatasetError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - top-level boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
