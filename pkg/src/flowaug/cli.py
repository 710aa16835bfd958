"""Command-line interface.

Exit codes: 0 on success, 2 for usage or input errors (bad flags, missing
files, invalid configs/plans/datasets), 1 for anything unexpected.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import __version__
from .augment import ClassGenerators, load_plan, oversample, run_plan
from .classifier import load_model, predict, save_model
from .errors import ConfigError, UsageError
from .evaluation import RunReport, compare_runs, confusion, per_class_table, read_report, write_report
from .ingest import class_stats, format_stats, load_dataset, save_dataset, split
from .kde import ConstantModel, KdeModel
from .nn import save_archive
from .pipeline import load_run_config, normalize_mode, run_pipeline, train_and_evaluate
from .seqgen import SeqGenConfig, seqgen_to_arrays
from .synthetic import load_synthetic_spec, synth_dataset

logger = logging.getLogger("flowaug")


def _density_meta(model, prefix: str, arrays: dict) -> dict | None:
    if model is None:
        return None
    if isinstance(model, ConstantModel):
        return {"type": "constant", "value": model.value}
    assert isinstance(model, KdeModel)
    arrays[f"{prefix}.samples"] = model.samples
    return {"type": "kde", "bandwidth": model.bandwidth}


def save_generators(path: str | Path, generators: dict[int, ClassGenerators]) -> Path:
    arrays: dict = {}
    meta: dict = {"kind": "generators", "classes": {}}
    for cid, g in sorted(generators.items()):
        entry = {"name": g.label.name, "swap_ports": g.swap_ports}
        for kind, model in (("direction", g.direction), ("window", g.window)):
            a, m = seqgen_to_arrays(model, f"c{cid}.{kind}")
            arrays.update(a)
            entry[kind] = m
        for feat in ("src_port", "dst_port", "log_iat", "payload"):
            entry[feat] = _density_meta(getattr(g, feat), f"c{cid}.{feat}", arrays)
        meta["classes"][str(cid)] = entry
    return save_archive(path, arrays, meta)


def cmd_ingest(args) -> int:
    if args.synthetic:
        if args.seed is None:
            raise ConfigError("--synthetic requires --seed")
        data = synth_dataset(load_synthetic_spec(args.synthetic), args.seed)
    elif args.input:
        data = load_dataset(args.input, args.format)
    else:
        raise ConfigError("give --input or --synthetic")
    print(format_stats(class_stats(data)))
    if data.rejected_rows:
        print(f"rejected rows: {data.rejected_rows} (flows dropped: {data.rejected_flows})")
    if args.split is not None:
        if args.split_seed is None:
            raise ConfigError("--split requires --split-seed")
        if not args.output:
            raise ConfigError("--split requires --output DIR")
        train, test = split(data, args.split, args.split_seed)
        out = Path(args.output)
        save_dataset(train, out / "train.csv")
        save_dataset(test, out / "test.csv")
        print(f"wrote {out / 'train.csv'} ({len(train)} flows) and {out / 'test.csv'} ({len(test)} flows)")
    elif args.output:
        save_dataset(data, args.output)
        print(f"wrote {args.output} ({len(data)} flows)")
    return 0


def cmd_augment(args) -> int:
    data = load_dataset(args.input, args.format)
    plan = load_plan(args.plan, data)
    if args.mode == "oversample":
        out = oversample(data, plan)
    else:
        gen_cfg = SeqGenConfig(hidden_size=args.hidden, epochs=args.epochs, lr=args.lr)
        out, generators = run_plan(data, plan, gen_cfg, return_generators=True)
        if args.models:
            save_generators(args.models, generators)
            print(f"wrote generator models to {args.models}")
    save_dataset(out, args.output)
    before, after = data.class_counts(), out.class_counts()
    for label in data.labels:
        print(f"{label.name}: {before[label.id]} -> {after[label.id]}")
    print(f"wrote {args.output} ({len(out)} flows)")
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    modes = [normalize_mode(args.input_mode)] if args.input_mode else list(cfg.input_modes)
    train_set = load_dataset(args.input, args.format)
    test_set = load_dataset(args.test, args.format) if args.test else None
    for mode in modes:
        config = dataclasses.replace(cfg.classifier, input_mode=mode)
        if args.epochs is not None:
            config = dataclasses.replace(config, epochs=args.epochs)
        out = Path(args.output)
        if len(modes) > 1:
            out = out.with_name(f"{out.stem}-{mode}{out.suffix}")
        model, report, history = train_and_evaluate(train_set, test_set or train_set, config, args.scheme)
        save_model(model, out, {"scheme": args.scheme})
        final = history.losses[-1] if history.losses else float("nan")
        print(f"{mode}: {history.parameters} parameters, {history.epochs} epochs, final loss {final:.4f}")
        print(f"wrote {out}")
        if args.report and test_set is not None:
            rep = Path(args.report)
            if len(modes) > 1:
                rep = rep.with_name(f"{rep.stem}-{mode}{rep.suffix}")
            write_report(report, rep)
            print(f"wrote {rep}")
    return 0


def cmd_eval(args) -> int:
    model, extra = load_model(args.model)
    test = load_dataset(args.test, args.format)
    _, pred = predict(model, test.flows)
    cm = confusion([f.label.id for f in test.flows], pred, model.num_classes)
    names = tuple(l.name for l in test.labels)
    if len(names) != model.num_classes:
        raise UsageError(f"test set has {len(names)} classes, model expects {model.num_classes}")
    report = RunReport(
        scheme=args.scheme or extra.get("scheme", "model"),
        mode=model.mode,
        parameters=model.num_parameters(),
        epochs=0,
        class_names=names,
        confusion=cm,
    )
    print(per_class_table(report), end="")
    if args.report:
        write_report(report, args.report)
        print(f"wrote {args.report}")
    return 0


def cmd_compare(args) -> int:
    reports = [read_report(p) for p in args.reports]
    if len(reports) < 2:
        raise UsageError("compare needs at least two reports")
    try:
        table = compare_runs(reports)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(table.to_text(), end="")
    if args.output:
        Path(args.output).write_text(table.to_lines())
        print(f"wrote {args.output}")
    return 0


def cmd_run(args) -> int:
    cfg = load_run_config(args.config)
    if args.output:
        cfg.output = Path(args.output)
    reports, comparison = run_pipeline(cfg)
    for r in reports:
        m = r.metrics
        print(f"{r.scheme} / {r.mode}: accuracy {m.accuracy:.4f}, macro-F1 {m.macro_f1:.4f}, {r.parameters} parameters")
    if comparison is not None:
        print(comparison.to_text(), end="")
    print(f"outputs in {cfg.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flowaug", description="Balance, encode and classify labeled network flows.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="load or synthesise a dataset and print class statistics")
    s.add_argument("--input", help="flow file (csv or jsonl)")
    s.add_argument("--format", choices=("csv", "jsonl"))
    s.add_argument("--synthetic", help="synthetic spec file")
    s.add_argument("--seed", type=int, help="seed for --synthetic")
    s.add_argument("--output", help="write the dataset here (a directory with --split)")
    s.add_argument("--split", type=float, help="train fraction for a stratified split, e.g. 0.85")
    s.add_argument("--split-seed", type=int)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("augment", help="balance a training set with generated or duplicated flows")
    s.add_argument("--input", required=True, help="training flows")
    s.add_argument("--format", choices=("csv", "jsonl"))
    s.add_argument("--plan", required=True, help="augmentation plan file")
    s.add_argument("--mode", choices=("lstm-kde", "oversample"), default="lstm-kde")
    s.add_argument("--output", required=True)
    s.add_argument("--models", help="write fitted generators to this archive")
    s.add_argument("--epochs", type=int, default=60, help="generator training epochs")
    s.add_argument("--hidden", type=int, default=64, help="generator LSTM hidden size")
    s.add_argument("--lr", type=float, default=1e-2, help="generator learning rate")
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("train", help="train a classifier")
    s.add_argument("--config", required=True, help="run config ([run] seed and [classifier] settings)")
    s.add_argument("--input", required=True, help="training flows")
    s.add_argument("--format", choices=("csv", "jsonl"))
    s.add_argument("--input-mode", help="fs | onehot (default: from the config)")
    s.add_argument("--epochs", type=int)
    s.add_argument("--test", help="test flows; with --report writes a metrics report")
    s.add_argument("--report")
    s.add_argument("--scheme", default="actual", help="label recorded in the report")
    s.add_argument("--output", required=True, help="model archive path")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a trained model on a test set")
    s.add_argument("--model", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--format", choices=("csv", "jsonl"))
    s.add_argument("--report", help="write the machine-readable report here")
    s.add_argument("--scheme")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("compare", help="tabulate several reports")
    s.add_argument("--reports", nargs="+", required=True)
    s.add_argument("--output", help="write the machine-readable comparison here")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("run", help="run the full pipeline from a run config")
    s.add_argument("--config", required=True)
    s.add_argument("--output", help="override [run] output")
    s.set_defaults(func=cmd_run)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (UsageError, FileNotFoundError) as exc:
        print(f"flowaug {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - last-resort reporting
        logger.debug("internal error", exc_info=True)
        print(f"flowaug {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
