"""Command-line entry point: synth, run, compare, report, serve.

Exit codes: 0 ok, 2 config error, 3 data error, 4 runtime error. Failures
print one machine-parsable JSON line to stderr. Output files are written
atomically (temp file + rename); running reports additionally stream one
line per completed round so an interrupted run keeps its finished rounds.
"""

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import report as report_mod
from .bundle import load_bundle
from .data import load_config
from .errors import ConfigError, IngestionError, OpensetALError
from .orchestrator import (
    STRATEGY_NAMES,
    ActiveLearningEngine,
    OracleLabeler,
    run_upper_bound,
)
from .synth import generate, load_synth_spec

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4

_CONFIG_KEY_DOC = """\
config file keys (plain text, one `key = value` per line):
  budget_L rounds_R percentile_M batches_B tau seed
  training.epochs training.lr training.lr_decay_factor training.lr_decay_every
  training.weight_decay training.hidden_dim training.batch_size
  feature_space_for_prototypes use_ood_centroid_in_pis warmup_strategy
  train_with_ood_class refine_clusters
  id_class_names ood_class_names task_description
"""


def _fail(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": message, "kind": kind}, sort_keys=True) + "\n")


def _run_one(config_path, data_dir, strategy, seed) -> list[dict]:
    """One (strategy, seed) simulation; returns the round records as dicts."""
    bundle = load_bundle(config_path, data_dir)
    config = dataclasses.replace(bundle.config, seed=seed)
    engine = ActiveLearningEngine(
        config, bundle.catalog, bundle.train, bundle.prompts,
        strategy=strategy, test_dataset=bundle.test,
    )
    labeler = OracleLabeler(bundle.train, bundle.catalog.id_count)
    return [r.to_json_dict() for r in engine.run(labeler)]


def _cmd_synth(args) -> int:
    spec = load_synth_spec(args.spec)
    out = generate(spec, args.out)
    print(f"wrote synthetic benchmark to {Path(args.out).resolve()}")
    print(f"  classes: {out.catalog.id_count} ID + {out.catalog.ood_count} OOD")
    return EXIT_OK


def _cmd_run(args) -> int:
    bundle = load_bundle(args.config, args.data)
    config = bundle.config
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if args.strategy not in STRATEGY_NAMES:
        raise ConfigError(
            f"unknown strategy {args.strategy!r}; choose from {', '.join(STRATEGY_NAMES)}"
        )
    engine = ActiveLearningEngine(
        config, bundle.catalog, bundle.train, bundle.prompts,
        strategy=args.strategy, test_dataset=bundle.test,
    )
    labeler = OracleLabeler(bundle.train, bundle.catalog.id_count)
    writer = report_mod.ReportWriter(args.out)
    try:
        writer.write_header(report_mod.config_echo(config, bundle.catalog, args.strategy))
        while not engine.is_done:
            record = engine.commit(labeler(engine.pending_query()))
            writer.write_round(record)
            print(
                f"round {record.round}: qp={record.qp:.3f}"
                + (f" aqr={record.aqr:.3f}" if record.aqr is not None else "")
                + (f" macc={record.macc:.3f}" if record.macc is not None else "")
            )
    except BaseException:
        writer.abort()
        raise
    writer.finish()
    print(f"report written to {args.out}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    unknown = [s for s in strategies if s not in STRATEGY_NAMES]
    if unknown:
        raise ConfigError(f"unknown strategies: {', '.join(unknown)}")
    if not strategies or not seeds:
        raise ConfigError("need at least one strategy and one seed")

    tasks = [(strategy, seed) for strategy in strategies for seed in seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [
                pool.submit(_run_one, args.config, args.data, strategy, seed)
                for strategy, seed in tasks
            ]
            results = [f.result() for f in futures]
    else:
        results = [
            _run_one(args.config, args.data, strategy, seed) for strategy, seed in tasks
        ]

    rows = []
    finals: dict[str, list] = {}
    for (strategy, seed), records in zip(tasks, results):
        for row in records:
            rows.append(
                [
                    str(row["round"]),
                    strategy,
                    str(seed),
                    report_mod.cell_text(row["qp"]),
                    report_mod.cell_text(row["aqr"]),
                    report_mod.cell_text(row["macc"]),
                ]
            )
        finals.setdefault(strategy, []).append(records[-1])

    if args.upper_bound:
        bundle = load_bundle(args.config, args.data)
        if bundle.test is None:
            raise IngestionError("--upper-bound requires a test split in the data dir")
        for seed in seeds:
            config = dataclasses.replace(bundle.config, seed=seed)
            macc = run_upper_bound(config, bundle.catalog, bundle.train, bundle.test)
            rows.append(
                [str(config.rounds_R), "upper_bound", str(seed), "", "", report_mod.cell_text(macc)]
            )

    report_mod.write_csv(args.out, rows)
    for strategy, records in finals.items():
        def mean(key):
            values = [r[key] for r in records if r[key] is not None]
            return sum(values) / len(values) if values else None

        parts = [f"strategy={strategy}", f"seeds={len(records)}"]
        for key in ("qp", "aqr", "macc"):
            value = mean(key)
            if value is not None:
                parts.append(f"final_{key}_mean={value:.4f}")
        print(" ".join(parts))
    print(f"csv written to {args.out}")
    return EXIT_OK


def _cmd_report(args) -> int:
    header, records = report_mod.read_report(args.infile)
    if args.format == "csv":
        text = report_mod.report_to_csv_text(header, records)
    else:
        text = report_mod.report_to_markdown(header, records)
    if args.out:
        report_mod._atomic_write_text(args.out, text)
        print(f"report written to {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(
        config_path=args.config,
        data_dir=args.data,
        patches_dir=args.patches,
        journal_dir=args.journal_dir,
        ui_dir=args.ui_dir,
    )
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="osal",
        description="Open-set pool-based active learning on precomputed embeddings.",
        epilog=_CONFIG_KEY_DOC,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic open-set benchmark")
    p.add_argument("--spec", required=True, help="synth spec file (key = value lines)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("run", help="run one oracle-labeled simulation")
    p.add_argument("--config", required=True, help="experiment config file")
    p.add_argument("--data", required=True, help="data directory")
    p.add_argument("--strategy", default="openpath", help=f"one of {', '.join(STRATEGY_NAMES)}")
    p.add_argument("--out", required=True, help="output report (JSON-lines)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("compare", help="run a strategy/seed grid, emit per-round CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--strategies", required=True, help="comma-separated strategy names")
    p.add_argument("--seeds", required=True, help="comma-separated integer seeds")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument(
        "--upper-bound", action="store_true",
        help="also train on all pool ID samples per seed and append its accuracy",
    )
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("report", help="render a JSON-lines report as csv or markdown")
    p.add_argument("--in", dest="infile", required=True, help="input report (JSON-lines)")
    p.add_argument("--format", choices=("csv", "md"), default="md")
    p.add_argument("--out", default=None, help="output path (default: stdout)")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("serve", help="start the interactive annotation service")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--patches", default=None, help="directory with viewable patch images")
    p.add_argument("--journal-dir", default=None, help="session journal directory")
    p.add_argument("--ui-dir", default=None, help="static frontend directory to serve at /ui")
    p.set_defaults(func=_cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        _fail("config", str(err))
        return EXIT_CONFIG
    except (IngestionError, FileNotFoundError) as err:
        _fail("data", str(err))
        return EXIT_DATA
    except OpensetALError as err:
        _fail("runtime", str(err))
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
