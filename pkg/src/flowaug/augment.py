"""Minority-class augmentation and the random-oversampling baseline.

For each class in the plan, two sequence generators (packet directions and TCP
window sizes) and a set of per-feature KDEs are fitted on that class's flows.
A generated flow takes its length and direction track from the direction
generator, a length-matched window track, ports drawn once per flow, and
per-packet inter-arrival times and payload lengths drawn from the KDEs.
"""

from __future__ import annotations

import configparser
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ClassNotFound, InvalidPlan, ModelMissing
from .flows import PORT_MAX, ClassLabel, FlowRecord, Origin, PacketFeatures
from .ingest import Dataset
from .kde import ConstantModel, KdeModel, fit_or_constant, sample_clamped_int
from .seqgen import OTHER, SeqGenConfig, SeqGenModel, build_training_corpus, sample_aligned, sample_sequences, train_seqgen

logger = logging.getLogger(__name__)

PAYLOAD_MAX = 65535
WINDOW_MAX = 65535

Density = KdeModel | ConstantModel


@dataclass(frozen=True)
class AugmentationPlan:
    """Target flow count per class id plus the master seed."""

    targets: Mapping[int, int]
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "targets", dict(sorted(self.targets.items())))
        for cid, count in self.targets.items():
            if count < 0:
                raise InvalidPlan(f"class {cid}: negative target {count}")

    @property
    def classes(self) -> tuple[int, ...]:
        return tuple(self.targets)

    def validate(self, dataset: Dataset) -> None:
        counts = dataset.class_counts()
        for cid, target in self.targets.items():
            label = dataset.label(cid)
            if target < counts[cid]:
                raise InvalidPlan(f"class {label.name!r}: target {target} below current count {counts[cid]}")
            if counts[cid] == 0 and target > 0:
                raise InvalidPlan(f"class {label.name!r} has no flows to learn from")


def _resolve_class(dataset: Dataset, key: str) -> int:
    key = key.strip()
    try:
        return dataset.label(key).id
    except ClassNotFound:
        if key.isdigit():
            return dataset.label(int(key)).id
        raise


def minority_classes(dataset: Dataset) -> list[int]:
    """Classes strictly below the median class count."""
    counts = dataset.class_counts()
    median = float(np.median(counts))
    return [i for i, c in enumerate(counts) if c < median]


def target_count(dataset: Dataset, spec: str | int | float) -> int:
    """Resolve ``median``, ``max``, an absolute count, or a fraction of the majority."""
    counts = dataset.class_counts()
    if isinstance(spec, str):
        text = spec.strip().lower()
        if text == "median":
            return int(np.floor(np.median(counts) + 0.5))
        if text == "max":
            return int(counts.max())
        try:
            spec = float(text) if "." in text else int(text)
        except ValueError:
            raise InvalidPlan(f"unrecognised target {spec!r}") from None
    if isinstance(spec, float):
        if not 0 < spec <= 1:
            raise InvalidPlan(f"fractional target must lie in (0, 1], got {spec}")
        return int(np.floor(spec * counts.max() + 0.5))
    return int(spec)


def make_plan(
    dataset: Dataset,
    classes: Sequence[int | str] | str = "auto",
    target: str | int | float = "median",
    seed: int = 0,
    overrides: Mapping[int | str, int] | None = None,
) -> AugmentationPlan:
    """Build a plan; listed classes already at or above the target are skipped."""
    counts = dataset.class_counts()
    if isinstance(classes, str):
        if classes.strip().lower() != "auto":
            raise InvalidPlan(f"classes must be 'auto' or a list, got {classes!r}")
        ids = minority_classes(dataset)
    else:
        ids = [dataset.label(c).id if isinstance(c, (int, np.integer)) else _resolve_class(dataset, c) for c in classes]
    default = target_count(dataset, target)
    targets = {cid: max(default, int(counts[cid])) for cid in ids}
    for key, value in (overrides or {}).items():
        cid = dataset.label(key).id if isinstance(key, int) else _resolve_class(dataset, key)
        targets[cid] = int(value)
    plan = AugmentationPlan(targets, seed)
    plan.validate(dataset)
    return plan


def load_plan(path: str | Path, dataset: Dataset) -> AugmentationPlan:
    """Read a plan file.

    Format::

        [plan]
        seed = 7
        classes = auto          ; or a comma-separated list of class names
        target = median         ; median | max | <count> | <fraction of majority>

        [targets]               ; optional per-class absolute targets
        rdp = 1500
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"plan file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise InvalidPlan(f"{path}: {exc}") from None
    if not parser.has_section("plan"):
        raise InvalidPlan(f"{path}: missing [plan] section")
    sec = parser["plan"]
    if "seed" not in sec:
        raise InvalidPlan(f"{path}: [plan] needs a seed")
    try:
        seed = int(sec["seed"])
    except ValueError:
        raise InvalidPlan(f"{path}: seed must be an integer") from None
    raw = sec.get("classes", "auto").strip()
    classes: str | list[str] = raw if raw.lower() == "auto" else [c for c in raw.split(",") if c.strip()]
    overrides: dict[str, int] = {}
    if parser.has_section("targets"):
        for name, value in parser.items("targets"):
            try:
                overrides[name] = int(value)
            except ValueError:
                raise InvalidPlan(f"{path}: target for {name!r} must be an integer") from None
    return make_plan(dataset, classes, sec.get("target", "median"), seed, overrides)


@dataclass(eq=False)
class ClassGenerators:
    """Everything needed to synthesise flows for one class."""

    label: ClassLabel
    direction: SeqGenModel
    window: SeqGenModel
    src_port: Density
    dst_port: Density
    log_iat: Density | None
    payload: Density
    swap_ports: bool
    # the real flows the generators were fitted on (leakage audits)
    source_flows: tuple[FlowRecord, ...] = field(repr=False, default=())


def _derive_seeds(seed: int, class_id: int, n: int) -> list[int]:
    ss = np.random.SeedSequence([seed, class_id])
    return [int(s) for s in ss.generate_state(n, dtype=np.uint32)]


def _swaps_ports(flows: Sequence[FlowRecord]) -> bool:
    """Majority vote on whether reverse packets carry swapped ports."""
    swapped = same = 0
    for f in flows:
        sp, dp = f.packets[0].src_port, f.packets[0].dst_port
        for p in f.packets[1:]:
            if p.direction == 0:
                if (p.src_port, p.dst_port) == (dp, sp):
                    swapped += 1
                elif (p.src_port, p.dst_port) == (sp, dp):
                    same += 1
    return swapped >= same


def fit_class_generators(
    dataset: Dataset,
    class_id: int,
    seed: int,
    config: SeqGenConfig | None = None,
) -> ClassGenerators:
    config = config or SeqGenConfig()
    label = dataset.label(class_id)
    flows = tuple(dataset.flows_of(class_id))
    dir_seed, win_seed = _derive_seeds(seed, class_id, 2)
    direction = train_seqgen(
        build_training_corpus(dataset, class_id, "direction"),
        _with_seed(config, dir_seed),
        kind="direction",
        class_id=class_id,
    )
    window = train_seqgen(
        build_training_corpus(dataset, class_id, "window"),
        _with_seed(config, win_seed),
        kind="window",
        class_id=class_id,
    )
    # first-packet inter-arrival time is 0 by definition, so only later packets inform the model
    iats = [p.inter_arrival_time for f in flows for p in f.packets[1:]]
    return ClassGenerators(
        label=label,
        direction=direction,
        window=window,
        src_port=fit_or_constant([f.packets[0].src_port for f in flows]),
        dst_port=fit_or_constant([f.packets[0].dst_port for f in flows]),
        log_iat=fit_or_constant(np.log1p(iats)) if iats else None,
        payload=fit_or_constant([p.payload_length for f in flows for p in f.packets]),
        swap_ports=_swaps_ports(flows),
        source_flows=flows,
    )


def _with_seed(config: SeqGenConfig, seed: int) -> SeqGenConfig:
    return SeqGenConfig(**{**config.__dict__, "seed": seed})


def augment_class(
    dataset: Dataset,
    class_id: int,
    count: int,
    models: ClassGenerators | Mapping[str, object],
    seed,
) -> list[FlowRecord]:
    """Generate ``count`` flows of ``class_id`` with origin ``generated``."""
    label = dataset.label(class_id)
    if isinstance(models, Mapping):
        missing = [k for k in ("direction", "window", "src_port", "dst_port", "payload") if k not in models]
        if missing:
            raise ModelMissing(f"class {label.name!r}: missing models {missing}")
        gens = ClassGenerators(
            label=label,
            direction=models["direction"],
            window=models["window"],
            src_port=models["src_port"],
            dst_port=models["dst_port"],
            log_iat=models.get("log_iat"),
            payload=models["payload"],
            swap_ports=bool(models.get("swap_ports", True)),
        )
    else:
        gens = models
    if gens.direction.class_id != class_id or gens.window.class_id != class_id:
        raise ModelMissing(f"generators were not trained on class {label.name!r}")
    if count < 1:
        raise ValueError("count must be at least 1")

    rng = np.random.default_rng(seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed))
    directions = sample_sequences(gens.direction, count, rng)
    lengths = [len(d) for d in directions]
    windows = sample_aligned(gens.window, lengths, rng)
    total = sum(lengths)

    sp = sample_clamped_int(gens.src_port, count, 0, PORT_MAX, rng)
    dp = sample_clamped_int(gens.dst_port, count, 0, PORT_MAX, rng)
    payload = sample_clamped_int(gens.payload, total, 0, PAYLOAD_MAX, rng)
    if gens.log_iat is not None:
        iat = np.expm1(np.maximum(gens.log_iat.sample(total, rng), 0.0))
    else:
        iat = np.zeros(total)
    other = [v for w in windows for v in w if v == OTHER]
    other_values = iter(())
    if other:
        if gens.window.other_model is None:
            raise ModelMissing(f"class {label.name!r}: window generator emitted OTHER without a fallback model")
        other_values = iter(sample_clamped_int(gens.window.other_model, len(other), 0, WINDOW_MAX, rng).tolist())

    flows = []
    pos = 0
    for i, (dirs, wins) in enumerate(zip(directions, windows)):
        packets = []
        for j, (d, w) in enumerate(zip(dirs, wins)):
            if d == 1 or not gens.swap_ports:
                ports = (int(sp[i]), int(dp[i]))
            else:
                ports = (int(dp[i]), int(sp[i]))
            packets.append(
                PacketFeatures(
                    src_port=ports[0],
                    dst_port=ports[1],
                    inter_arrival_time=0.0 if j == 0 else float(iat[pos]),
                    payload_length=int(payload[pos]),
                    direction=int(d),
                    tcp_window_size=int(next(other_values)) if w == OTHER else int(w),
                )
            )
            pos += 1
        flows.append(FlowRecord(tuple(packets), label, Origin.GENERATED, f"gen-{label.name}-{i:06d}"))
    return flows


def run_plan(
    dataset: Dataset,
    plan: AugmentationPlan,
    config: SeqGenConfig | None = None,
    return_generators: bool = False,
):
    """Append generated flows so every planned class reaches its target.

    ``dataset`` must be the training split: generators are fitted on it and
    nothing else. With ``return_generators`` the fitted per-class generators
    are returned as well, which lets callers audit the fitting inputs.
    """
    plan.validate(dataset)
    counts = dataset.class_counts()
    generated: list[FlowRecord] = []
    fitted: dict[int, ClassGenerators] = {}
    for cid, target in plan.targets.items():
        deficit = int(target - counts[cid])
        if deficit <= 0:
            continue
        gens = fit_class_generators(dataset, cid, plan.seed, config)
        fitted[cid] = gens
        sample_seed = np.random.SeedSequence([plan.seed, cid, 1])
        generated.extend(augment_class(dataset, cid, deficit, gens, sample_seed))
        logger.info("class %s: generated %d flows (%d -> %d)", gens.label.name, deficit, counts[cid], target)
    out = dataset.replace_flows(dataset.flows + tuple(generated))
    return (out, fitted) if return_generators else out


def oversample(dataset: Dataset, plan: AugmentationPlan, seed: int | None = None) -> Dataset:
    """Duplicate minority flows uniformly at random with replacement."""
    plan.validate(dataset)
    seed = plan.seed if seed is None else seed
    extra: list[FlowRecord] = []
    for cid, target in plan.targets.items():
        flows = dataset.flows_of(cid)
        deficit = target - len(flows)
        if deficit <= 0:
            continue
        rng = np.random.default_rng([seed, cid])
        for k, idx in enumerate(rng.integers(0, len(flows), size=deficit)):
            src = flows[idx]
            extra.append(FlowRecord(src.packets, src.label, Origin.OVERSAMPLED, f"{src.flow_id}~dup{k:06d}"))
    return dataset.replace_flows(dataset.flows + tuple(extra))
