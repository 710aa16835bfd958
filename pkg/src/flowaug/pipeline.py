"""End-to-end experiment runs driven by a run-configuration file.

A run config is a flat INI document::

    [run]
    seed = 7                         ; required; every other seed derives from it
    output = runs/demo               ; datasets/, models/ and reports/ go here

    [data]
    synthetic = configs/synthetic.ini   ; or: input = flows.csv (+ format = csv|jsonl)
    synthetic_seed = 11                 ; required with synthetic
    train_fraction = 0.85

    [augment]
    schemes = actual, oversample, lstm-kde
    plan = configs/plan.ini
    generator_epochs = 40
    generator_hidden = 64
    generator_lr = 0.01

    [classifier]
    preset = desk
    input_modes = fs-embedding, one-hot
    epochs = 20                      ; any ClassifierConfig field may be overridden

Relative paths resolve against the config file's directory. Every
(scheme, input mode) pair is trained and evaluated on the same test split.
"""

from __future__ import annotations

import configparser
import dataclasses
import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import AugmentationPlan, load_plan, make_plan, oversample, run_plan
from .classifier import ClassifierConfig, build_model, predict, preset, save_model, train
from .embedding import fit_encoder
from .errors import ConfigError
from .evaluation import Comparison, RunReport, compare_runs, confusion, write_report
from .ingest import Dataset, load_dataset, save_dataset, split
from .seqgen import SeqGenConfig
from .synthetic import load_synthetic_spec, synth_dataset

logger = logging.getLogger(__name__)

SCHEMES = ("actual", "oversample", "lstm-kde")
MODE_ALIASES = {"fs": "fs-embedding", "fs-embedding": "fs-embedding", "onehot": "one-hot", "one-hot": "one-hot"}


def normalize_mode(name: str) -> str:
    try:
        return MODE_ALIASES[name.strip().lower()]
    except KeyError:
        raise ConfigError(f"unknown input mode {name!r}; use fs-embedding or one-hot") from None


def derive_seed(seed: int, *tags) -> int:
    """Stable sub-seed for a named stage of a run."""
    words = [seed] + [zlib.crc32(str(t).encode()) for t in tags]
    return int(np.random.SeedSequence(words).generate_state(1)[0])


@dataclass
class RunConfig:
    seed: int
    output: Path
    input: Path | None = None
    format: str | None = None
    synthetic: Path | None = None
    synthetic_seed: int | None = None
    train_fraction: float = 0.85
    schemes: tuple[str, ...] = ("actual",)
    plan: Path | None = None
    plan_target: str = "median"
    generator: SeqGenConfig = field(default_factory=SeqGenConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    input_modes: tuple[str, ...] = ("fs-embedding",)


_CLASSIFIER_FIELDS = {f.name: f for f in dataclasses.fields(ClassifierConfig)}


def _coerce(name: str, text: str):
    f = _CLASSIFIER_FIELDS[name]
    kind = str(f.type)
    try:
        if "tuple" in kind:
            return tuple(int(v) for v in text.split(",") if v.strip())
        if "bool" in kind:
            return text.strip().lower() in ("1", "true", "yes", "on")
        if kind.startswith("int"):
            return None if text.strip().lower() == "none" else int(text)
        if kind.startswith("float"):
            return None if text.strip().lower() == "none" else float(text)
    except ValueError:
        raise ConfigError(f"[classifier] {name}: cannot parse {text!r}") from None
    return text.strip()


def classifier_config(section: dict[str, str], seed: int) -> ClassifierConfig:
    overrides = {}
    for key, value in section.items():
        if key in ("preset", "input_modes", "input_mode"):
            continue
        if key not in _CLASSIFIER_FIELDS:
            raise ConfigError(f"[classifier] unknown key {key!r}")
        overrides[key] = _coerce(key, value)
    overrides.setdefault("seed", derive_seed(seed, "classifier"))
    return preset(section.get("preset", "preset-a"), **overrides)


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"run config not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    base = path.parent

    def resolve(p: str | None) -> Path | None:
        if p is None:
            return None
        q = Path(p.strip())
        return q if q.is_absolute() else base / q

    run = dict(parser["run"]) if parser.has_section("run") else {}
    if "seed" not in run:
        raise ConfigError(f"{path}: [run] seed is required")
    try:
        seed = int(run["seed"])
    except ValueError:
        raise ConfigError(f"{path}: [run] seed must be an integer") from None
    data = dict(parser["data"]) if parser.has_section("data") else {}
    aug = dict(parser["augment"]) if parser.has_section("augment") else {}
    cls = dict(parser["classifier"]) if parser.has_section("classifier") else {}

    cfg = RunConfig(seed=seed, output=resolve(run.get("output", "run")))
    if ("input" in data) == ("synthetic" in data):
        raise ConfigError(f"{path}: [data] needs exactly one of input or synthetic")
    if "input" in data:
        cfg.input = resolve(data["input"])
        cfg.format = data.get("format")
        if not cfg.input.exists():
            raise FileNotFoundError(f"dataset not found: {cfg.input}")
    else:
        cfg.synthetic = resolve(data["synthetic"])
        if not cfg.synthetic.exists():
            raise FileNotFoundError(f"synthetic spec not found: {cfg.synthetic}")
        if "synthetic_seed" not in data:
            raise ConfigError(f"{path}: [data] synthetic_seed is required with synthetic")
        cfg.synthetic_seed = int(data["synthetic_seed"])
    try:
        cfg.train_fraction = float(data.get("train_fraction", "0.85"))
    except ValueError:
        raise ConfigError(f"{path}: train_fraction must be a number") from None
    if not 0 < cfg.train_fraction < 1:
        raise ConfigError(f"{path}: train_fraction must lie in (0, 1)")

    cfg.schemes = tuple(s.strip() for s in aug.get("schemes", "actual").split(",") if s.strip())
    bad = [s for s in cfg.schemes if s not in SCHEMES]
    if bad:
        raise ConfigError(f"{path}: unknown schemes {bad}; choose from {SCHEMES}")
    if "plan" in aug:
        cfg.plan = resolve(aug["plan"])
        if not cfg.plan.exists():
            raise FileNotFoundError(f"plan not found: {cfg.plan}")
    cfg.plan_target = aug.get("target", "median")
    try:
        cfg.generator = SeqGenConfig(
            hidden_size=int(aug.get("generator_hidden", 64)),
            epochs=int(aug.get("generator_epochs", 60)),
            lr=float(aug.get("generator_lr", 1e-2)),
            top_k=int(aug.get("generator_top_k", 64)),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: [augment] {exc}") from None
    cfg.classifier = classifier_config(cls, seed)
    modes = cls.get("input_modes", cls.get("input_mode", cfg.classifier.input_mode))
    cfg.input_modes = tuple(normalize_mode(m) for m in modes.split(",") if m.strip())
    return cfg


def load_source(cfg: RunConfig) -> Dataset:
    if cfg.synthetic is not None:
        return synth_dataset(load_synthetic_spec(cfg.synthetic), cfg.synthetic_seed)
    return load_dataset(cfg.input, cfg.format)


def training_plan(cfg: RunConfig, train_set: Dataset) -> AugmentationPlan:
    if cfg.plan is not None:
        return load_plan(cfg.plan, train_set)
    return make_plan(train_set, "auto", cfg.plan_target, derive_seed(cfg.seed, "augment"))


def balance(train_set: Dataset, scheme: str, plan: AugmentationPlan, generator: SeqGenConfig) -> Dataset:
    if scheme == "actual":
        return train_set
    if scheme == "oversample":
        return oversample(train_set, plan)
    return run_plan(train_set, plan, generator)


def train_and_evaluate(
    train_set: Dataset,
    test_set: Dataset,
    config: ClassifierConfig,
    scheme: str,
):
    """Fit the encoder and classifier on ``train_set``; score on ``test_set``."""
    encoder = fit_encoder(train_set, config.input_mode, config.onehot_k, config.min_port_flows)
    model = build_model(config, encoder.input_size, train_set.num_classes)
    model.encoder = encoder
    history = train(model, encoder.encode(train_set.flows), config=config)
    _, pred = predict(model, test_set.flows)
    cm = confusion([f.label.id for f in test_set.flows], pred, train_set.num_classes)
    report = RunReport(
        scheme=scheme,
        mode=config.input_mode,
        parameters=history.parameters,
        epochs=history.epochs,
        class_names=tuple(l.name for l in train_set.labels),
        confusion=cm,
        losses=history.losses,
        extra={"train_flows": str(len(train_set)), "test_flows": str(len(test_set))},
    )
    return model, report, history


def run_pipeline(cfg: RunConfig, write: bool = True) -> tuple[list[RunReport], Comparison | None]:
    """ingest -> split -> balance -> train -> eval for every scheme and input mode."""
    data = load_source(cfg)
    train_set, test_set = split(data, cfg.train_fraction, derive_seed(cfg.seed, "split"))
    out = Path(cfg.output)
    if write:
        save_dataset(train_set, out / "datasets" / "train.csv")
        save_dataset(test_set, out / "datasets" / "test.csv")
    plan = training_plan(cfg, train_set) if set(cfg.schemes) - {"actual"} else None
    reports = []
    for scheme in cfg.schemes:
        balanced = balance(train_set, scheme, plan, cfg.generator) if plan is not None else train_set
        if write and scheme != "actual":
            save_dataset(balanced, out / "datasets" / f"train-{scheme}.csv")
        for mode in cfg.input_modes:
            config = dataclasses.replace(cfg.classifier, input_mode=mode)
            model, report, _ = train_and_evaluate(balanced, test_set, config, scheme)
            reports.append(report)
            tag = f"{scheme}-{mode}"
            if write:
                save_model(model, out / "models" / f"{tag}.bin", {"scheme": scheme})
                write_report(report, out / "reports" / f"{tag}.rep")
            logger.info("%s: accuracy %.4f", tag, report.metrics.accuracy)
    comparison = compare_runs(reports) if len(reports) >= 2 else None
    if write and comparison is not None:
        (out / "reports" / "comparison.txt").write_text(comparison.to_text())
        (out / "reports" / "comparison.rep").write_text(comparison.to_lines())
    return reports, comparison
