"""Command-line interface.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 model error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from blade import __version__, pipeline
from blade.behavior import VARIANTS, DetectionResult
from blade.config import Config, load_config
from blade.errors import BladeError, ConfigError, DataError
from blade.ingestion import is_benign, parse_flow_records, write_flow_records
from blade.metrics import evaluate_windows
from blade.model import ModelBundle

logger = logging.getLogger("blade")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_MODEL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config(args) -> Config:
    cfg = load_config(args.config) if args.config else Config()
    if getattr(args, "seed", None) is not None:
        cfg.reseed(args.seed)
    cfg.validate()
    return cfg


def _records(paths):
    records = []
    for p in paths:
        records.extend(parse_flow_records(p))
    return records


def _data_paths(args, cfg: Config | None = None) -> list[str]:
    paths = list(args.data or [])
    if not paths and cfg is not None and cfg.data.path:
        paths = [cfg.data.path]
    if not paths:
        raise ConfigError("no input data: pass --data or set data.path in the config")
    return paths


def _write_json(obj, out: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_train(args) -> int:
    cfg = _config(args)
    records = _records(_data_paths(args, cfg))
    attacks = sum(not is_benign(r.label) for r in records)
    if attacks:
        raise DataError(f"training data contains {attacks} attack-labelled flows; "
                        "training uses benign traffic only")
    out = Path(args.out or "bundle")
    bundle, train_set, heldout = pipeline.train(records, cfg)
    bundle.save(out)
    keys = {(w.user_key, f.timestamp) for w in heldout for f in w.flows}
    held = [r for r in records if (r.user_key, r.first_seen) in keys]
    write_flow_records(held, out / "heldout_benign.csv")
    logger.info("bundle written to %s (%d train windows, %d held-out benign windows)",
                out, len(train_set), len(heldout))
    _write_json({"bundle": str(out), "manifest_hash": bundle.manifest["hash"],
                 "train_windows": len(train_set), "heldout_windows": len(heldout),
                 "clusters": bundle.flow.clusters.n_clusters}, None)
    return EXIT_OK


def _load_bundle(args) -> ModelBundle:
    if not args.bundle:
        raise ConfigError("--bundle is required")
    bundle = ModelBundle.load(args.bundle)
    if getattr(args, "config", None):
        cfg = load_config(args.config)
        bundle.check_compatible(len(cfg.data.channels), cfg.data.L, cfg.data.W)
    return bundle


def cmd_detect(args) -> int:
    bundle = _load_bundle(args)
    records = _records(_data_paths(args))
    windows, dropped = pipeline.build_windows(records, bundle.config)
    results = bundle.detect(windows)
    lines = "".join(json.dumps(r.to_record()) + "\n" for r in results)
    if args.out:
        Path(args.out).write_text(lines)
    else:
        sys.stdout.write(lines)
    flagged = sum(r.is_anomalous for r in results)
    print(json.dumps({"windows": len(results), "anomalous": flagged, "skipped_flows": dropped}),
          file=sys.stderr)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if not args.results:
        raise ConfigError("--results is required")
    bundle = ModelBundle.load(args.bundle) if args.bundle else None
    cfg = bundle.config if bundle else _config(args)
    windows, _ = pipeline.build_windows(_records(_data_paths(args)), cfg)
    truth = {(w.user_key, w.window_index): w.label for w in windows}
    try:
        results = [DetectionResult.from_record(json.loads(line))
                   for line in Path(args.results).read_text().splitlines() if line.strip()]
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"cannot read detection results: {exc}") from exc
    labels, flagged = [], []
    for r in results:
        key = (r.user_key, r.window_index)
        if key not in truth:
            raise DataError(f"result for {key} has no ground-truth window in the data")
        labels.append(truth[key])
        flagged.append(r.is_anomalous)
    clustering = bundle.reports.get("clustering_metrics") if bundle else None
    report = evaluate_windows(labels, flagged, clustering, cfg.behavior.variant)
    _write_json(report.to_dict(), args.out)
    return EXIT_OK


def cmd_synthesize(args) -> int:
    from blade import synth

    scenario = synth.load_scenario(args.config) if args.config else synth.ScenarioConfig()
    if args.seed is not None:
        scenario.seed = args.seed
    scenario.validate()
    records = []
    if args.part in ("all", "benign"):
        records += synth.generate_benign(scenario)
    if args.part in ("all", "attacks"):
        records += synth.inject_flow_level_attacks(scenario)
        records += synth.inject_behavior_level_attacks(scenario)
    out = Path(args.out or "flows.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_flow_records(records, out)
    synth.write_manifest(scenario, out.with_suffix(".manifest.json"))
    _write_json({"out": str(out), "flows": len(records)}, None)
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args)
    if args.variant == "all":
        variants = sorted(VARIANTS)
    else:
        try:
            variants = [int(args.variant)]
        except ValueError:
            raise ConfigError(f"unknown variant {args.variant!r}") from None
        if variants[0] not in VARIANTS:
            raise ConfigError(f"unknown variant {variants[0]}; choose from {sorted(VARIANTS)}")
    train_set, test = pipeline.prepare(_records(_data_paths(args, cfg)), cfg)
    run = pipeline.ablate(train_set, test, cfg, variants)
    reports = {}
    for v, rep in run.reports.items():
        d = rep.to_dict()
        d["variant_name"] = VARIANTS[v]
        reports[str(v)] = d
    _write_json(reports if len(reports) > 1 else next(iter(reports.values())), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="blade", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"blade {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model bundle on benign flow records")
    p.add_argument("--config")
    p.add_argument("--data", action="append")
    p.add_argument("--out", help="bundle directory (default ./bundle)")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="classify every complete window of the input")
    p.add_argument("--bundle", required=True)
    p.add_argument("--data", action="append", required=True)
    p.add_argument("--config", help="optional config checked against the bundle's N, L, W")
    p.add_argument("--out", help="JSON-lines results file (default stdout)")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="score detection results against labelled data")
    p.add_argument("--results", required=True)
    p.add_argument("--data", action="append", required=True)
    p.add_argument("--bundle")
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synthesize", help="generate a synthetic flow-record file")
    p.add_argument("--config", help="scenario YAML")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--part", choices=("all", "benign", "attacks"), default="all")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("ablate", help="train and evaluate an ablation variant")
    p.add_argument("--config")
    p.add_argument("--data", action="append")
    p.add_argument("--variant", default="all", help="0-3 or 'all'")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except BladeError as exc:
        print(f"blade {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except KeyboardInterrupt:
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
