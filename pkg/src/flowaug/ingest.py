"""Loading, splitting and summarising labeled flow datasets.

Flow files hold one row per packet::

    label,flow_id,pkt_index,src_port,dst_port,inter_arrival_time,payload_length,direction,tcp_window_size

Rows of one flow are contiguous and ``pkt_index`` ascends from 0. An optional
trailing ``origin`` column (``real``/``generated``/``oversampled``) is written for
augmented datasets and read back when present.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ClassNotFound, ClassTooSmall, EmptyDataset, FlowValidationError, SchemaError
from .flows import MAX_PACKETS, ClassLabel, FlowRecord, Origin, PacketFeatures

logger = logging.getLogger(__name__)

COLUMNS = (
    "label",
    "flow_id",
    "pkt_index",
    "src_port",
    "dst_port",
    "inter_arrival_time",
    "payload_length",
    "direction",
    "tcp_window_size",
)
OPTIONAL_COLUMNS = ("origin",)
INT_FIELDS = ("pkt_index", "src_port", "dst_port", "payload_length", "direction", "tcp_window_size")
MAX_REJECTED_FRACTION = 0.10


@dataclass(frozen=True, eq=False)
class Dataset:
    flows: tuple[FlowRecord, ...]
    labels: tuple[ClassLabel, ...]
    split_seed: int | None = None
    rejected_rows: int = 0
    rejected_flows: int = 0

    def __post_init__(self):
        object.__setattr__(self, "flows", tuple(self.flows))
        object.__setattr__(self, "labels", tuple(self.labels))
        for i, label in enumerate(self.labels):
            if label.id != i:
                raise SchemaError(f"label ids must be dense 0..K-1, got {label}")
        for flow in self.flows:
            lid = flow.label.id
            if not 0 <= lid < len(self.labels) or self.labels[lid] != flow.label:
                raise SchemaError(f"flow {flow.flow_id!r} carries unknown label {flow.label}")

    def __len__(self):
        return len(self.flows)

    @property
    def num_classes(self) -> int:
        return len(self.labels)

    def class_counts(self) -> np.ndarray:
        counts = np.zeros(len(self.labels), dtype=np.int64)
        for flow in self.flows:
            counts[flow.label.id] += 1
        return counts

    def flows_of(self, class_id: int) -> list[FlowRecord]:
        self.label(class_id)
        return [f for f in self.flows if f.label.id == class_id]

    def label(self, key: int | str) -> ClassLabel:
        if isinstance(key, str):
            for label in self.labels:
                if label.name == key:
                    return label
            raise ClassNotFound(f"no class named {key!r}")
        if not 0 <= key < len(self.labels):
            raise ClassNotFound(f"no class with id {key}")
        return self.labels[key]

    def replace_flows(self, flows: Iterable[FlowRecord]) -> "Dataset":
        return Dataset(tuple(flows), self.labels, self.split_seed)


@dataclass(frozen=True)
class ClassStats:
    labels: tuple[ClassLabel, ...]
    counts: tuple[int, ...]
    fractions: tuple[float, ...]
    # per class: port -> number of flows using it as a source or destination port
    port_counts: tuple[dict[int, int], ...] = field(repr=False)

    @property
    def total(self) -> int:
        return sum(self.counts)


def labels_from_names(names: Iterable[str]) -> tuple[ClassLabel, ...]:
    return tuple(ClassLabel(i, name) for i, name in enumerate(names))


def _parse_int(value, column: str, line: int) -> int:
    if isinstance(value, bool):
        raise SchemaError(f"line {line}: {column} is not numeric: {value!r}")
    if isinstance(value, int):
        return value
    try:
        return int(value)
    except (TypeError, ValueError):
        pass
    try:
        as_float = float(value)
    except (TypeError, ValueError):
        raise SchemaError(f"line {line}: {column} is not numeric: {value!r}") from None
    if not as_float.is_integer():
        raise SchemaError(f"line {line}: {column} must be an integer, got {value!r}")
    return int(as_float)


def _parse_float(value, column: str, line: int) -> float:
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise SchemaError(f"line {line}: {column} is not numeric: {value!r}") from None
    if math.isnan(out):
        raise SchemaError(f"line {line}: {column} is NaN")
    return out


def _iter_rows(path: Path, fmt: str):
    """Yield ``(line_number, dict)`` pairs; validates the column set."""
    required = set(COLUMNS)
    allowed = required | set(OPTIONAL_COLUMNS)
    if fmt == "csv":
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            missing = required - set(header)
            extra = set(header) - allowed
            if missing or extra:
                raise SchemaError(f"{path}: column mismatch (missing={sorted(missing)}, unexpected={sorted(extra)})")
            for row in reader:
                if None in row or any(v is None for v in row.values()):
                    raise SchemaError(f"{path}:{reader.line_num}: wrong number of fields")
                yield reader.line_num, row
    elif fmt == "jsonl":
        with path.open() as fh:
            for lineno, text in enumerate(fh, start=1):
                if not text.strip():
                    continue
                try:
                    row = json.loads(text)
                except json.JSONDecodeError as exc:
                    raise SchemaError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
                if not isinstance(row, dict):
                    raise SchemaError(f"{path}:{lineno}: expected an object")
                missing = required - set(row)
                extra = set(row) - allowed
                if missing or extra:
                    raise SchemaError(
                        f"{path}:{lineno}: column mismatch (missing={sorted(missing)}, unexpected={sorted(extra)})"
                    )
                yield lineno, row
    else:
        raise SchemaError(f"unknown dataset format {fmt!r} (expected csv or jsonl)")


def infer_format(path: str | Path) -> str:
    suffix = Path(path).suffix.lower()
    if suffix in (".jsonl", ".ndjson"):
        return "jsonl"
    return "csv"


def load_dataset(
    path: str | Path,
    format: str | None = None,
    labels: Sequence[str] | None = None,
) -> Dataset:
    """Read a flow file into a validated :class:`Dataset`.

    Rows that violate packet invariants (ports, direction, negative values) are
    rejected along with their flow and logged with their line number. Flows whose
    first packet is not source -> destination are rejected as well. Loading fails
    with :class:`SchemaError` when more than 10% of rows are rejected.

    ``labels`` fixes the class-name -> id assignment (e.g. a trained model's
    classes); by default ids follow the sorted class names.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    fmt = format or infer_format(path)

    # one entry per flow: [label_name, origin, packets, has_rejected_row, flow_id]
    groups: list[list] = []
    seen_ids: set[str] = set()
    current_id = None
    total_rows = 0
    rejected_rows = 0
    truncated = 0
    for lineno, row in _iter_rows(path, fmt):
        total_rows += 1
        flow_id = str(row["flow_id"])
        label_name = str(row["label"])
        pkt_index = _parse_int(row["pkt_index"], "pkt_index", lineno)
        ints = {c: _parse_int(row[c], c, lineno) for c in INT_FIELDS[1:]}
        iat = _parse_float(row["inter_arrival_time"], "inter_arrival_time", lineno)
        origin_raw = row.get("origin") or Origin.REAL.value
        try:
            origin = Origin(origin_raw)
        except ValueError:
            raise SchemaError(f"line {lineno}: unknown origin {origin_raw!r}") from None

        if flow_id != current_id:
            if flow_id in seen_ids:
                raise SchemaError(f"line {lineno}: rows of flow {flow_id!r} are not contiguous")
            seen_ids.add(flow_id)
            current_id = flow_id
            groups.append([label_name, origin, [], False, flow_id])
            expected = 0
        group = groups[-1]
        if group[0] != label_name:
            raise SchemaError(f"line {lineno}: flow {flow_id!r} changes label")
        if pkt_index != expected:
            raise SchemaError(f"line {lineno}: flow {flow_id!r} expected pkt_index {expected}, got {pkt_index}")
        expected += 1
        if pkt_index >= MAX_PACKETS:
            truncated += 1
            continue
        try:
            packet = PacketFeatures(
                ints["src_port"],
                ints["dst_port"],
                iat,
                ints["payload_length"],
                ints["direction"],
                ints["tcp_window_size"],
            )
        except FlowValidationError as exc:
            rejected_rows += 1
            group[3] = True
            logger.warning("%s:%d: rejected row: %s", path, lineno, exc)
            continue
        group[2].append(packet)

    if total_rows and rejected_rows > MAX_REJECTED_FRACTION * total_rows:
        raise SchemaError(f"{path}: {rejected_rows} of {total_rows} rows rejected (more than 10%)")
    if truncated:
        logger.info("%s: ignored %d packets beyond the %d-packet cutoff", path, truncated, MAX_PACKETS)

    if labels is None:
        names = sorted({g[0] for g in groups})
    else:
        names = list(labels)
    label_objs = labels_from_names(names)
    by_name = {label.name: label for label in label_objs}

    flows = []
    rejected_flows = 0
    for label_name, origin, packets, bad, flow_id in groups:
        if label_name not in by_name:
            raise SchemaError(f"flow {flow_id!r} has label {label_name!r} outside the known classes")
        if bad:
            rejected_flows += 1
            continue
        try:
            flows.append(FlowRecord(tuple(packets), by_name[label_name], origin, flow_id))
        except FlowValidationError as exc:
            rejected_flows += 1
            logger.warning("%s: rejected flow %r: %s", path, flow_id, exc)
    if not flows:
        raise EmptyDataset(f"{path}: no valid flows")
    if rejected_rows or rejected_flows:
        logger.warning("%s: %d rows rejected, %d flows dropped", path, rejected_rows, rejected_flows)
    return Dataset(tuple(flows), label_objs, None, rejected_rows, rejected_flows)


def save_dataset(dataset: Dataset, path: str | Path, format: str | None = None, origin: bool = True) -> Path:
    """Write ``dataset`` in the flow-file schema (plus ``origin`` when requested)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fmt = format or infer_format(path)
    columns = COLUMNS + (("origin",) if origin else ())
    with path.open("w", newline="") as fh:
        if fmt == "csv":
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
        for flow in dataset.flows:
            for j, p in enumerate(flow.packets):
                values = [
                    flow.label.name,
                    flow.flow_id,
                    j,
                    p.src_port,
                    p.dst_port,
                    p.inter_arrival_time,
                    p.payload_length,
                    p.direction,
                    p.tcp_window_size,
                ]
                if origin:
                    values.append(flow.origin.value)
                if fmt == "csv":
                    writer.writerow(values)
                elif fmt == "jsonl":
                    fh.write(json.dumps(dict(zip(columns, values))) + "\n")
                else:
                    raise SchemaError(f"unknown dataset format {fmt!r}")
    return path


def split(dataset: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified random split; class ``c`` contributes round(f * n_c) flows to train."""
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    counts = dataset.class_counts()
    small = [dataset.labels[i].name for i, c in enumerate(counts) if 0 < c < 2]
    if small:
        raise ClassTooSmall(f"classes with fewer than 2 flows cannot be split: {small}")
    rng = np.random.default_rng(seed)
    by_class: dict[int, list[int]] = {}
    for i, flow in enumerate(dataset.flows):
        by_class.setdefault(flow.label.id, []).append(i)
    train_idx: list[int] = []
    for cid in sorted(by_class):
        idx = np.array(by_class[cid])
        perm = rng.permutation(len(idx))
        n_train = int(math.floor(train_fraction * len(idx) + 0.5))
        train_idx.extend(idx[perm[:n_train]].tolist())
    in_train = np.zeros(len(dataset.flows), dtype=bool)
    in_train[train_idx] = True
    train = [f for f, t in zip(dataset.flows, in_train) if t]
    test = [f for f, t in zip(dataset.flows, in_train) if not t]
    return (
        Dataset(tuple(train), dataset.labels, seed),
        Dataset(tuple(test), dataset.labels, seed),
    )


def flow_ports(flow: FlowRecord) -> set[int]:
    ports = set()
    for p in flow.packets:
        ports.add(p.src_port)
        ports.add(p.dst_port)
    return ports


def class_stats(dataset: Dataset) -> ClassStats:
    if not dataset.flows:
        raise EmptyDataset("cannot compute statistics of an empty dataset")
    k = dataset.num_classes
    port_counts: list[Counter] = [Counter() for _ in range(k)]
    for flow in dataset.flows:
        port_counts[flow.label.id].update(flow_ports(flow))
    counts = dataset.class_counts()
    total = int(counts.sum())
    return ClassStats(
        labels=dataset.labels,
        counts=tuple(int(c) for c in counts),
        fractions=tuple(float(c) / total for c in counts),
        port_counts=tuple(dict(sorted(pc.items())) for pc in port_counts),
    )


def format_stats(stats: ClassStats) -> str:
    width = max(len(label.name) for label in stats.labels)
    lines = [f"{'id':>3}  {'class':<{width}}  {'flows':>8}  {'percent':>8}"]
    for label, count, frac in zip(stats.labels, stats.counts, stats.fractions):
        lines.append(f"{label.id:>3}  {label.name:<{width}}  {count:>8}  {100 * frac:>7.2f}%")
    lines.append(f"{'':>3}  {'total':<{width}}  {stats.total:>8}")
    return "\n".join(lines)
