"""Flow-as-a-sentence encoding.

Each port is replaced by the letter of the class in which it is most frequent
(class 0 -> ``A``, class 1 -> ``B``, ...; unseen ports -> ``Z``). A packet then
becomes the three-character word ``char(src) + char(dst) + direction`` and a
flow becomes a sentence of up to 20 words. The module also carries the
one-hot port baseline and the min-max scaler for the numerical features that
accompany each word.
"""

from __future__ import annotations

import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyStats, EncodingMismatch, InvalidDirection
from .flows import MAX_PACKETS, FlowRecord
from .ingest import ClassStats, Dataset, class_stats, flow_ports

OOV_CHAR = "Z"
CLASS_ALPHABET = string.ascii_uppercase[:25]
PAD = "<PAD>"
OOV_WORD = "<OOV>"
PAD_INDEX = 0
OOV_INDEX = 1
NUMERIC_FEATURES = ("inter_arrival_time", "payload_length", "tcp_window_size")
# inter-arrival times enter the scaler as log1p(microseconds)
IAT_SCALE = 1e6


@dataclass(frozen=True)
class PortLookupTable:
    num_classes: int
    ports: dict[int, str] = field(repr=False)

    def __post_init__(self):
        if not 1 <= self.num_classes <= len(CLASS_ALPHABET):
            raise ValueError(f"between 1 and {len(CLASS_ALPHABET)} classes are supported, got {self.num_classes}")
        allowed = set(self.alphabet)
        bad = {c for c in self.ports.values() if c not in allowed}
        if bad:
            raise ValueError(f"characters outside the class alphabet: {sorted(bad)}")
        object.__setattr__(self, "ports", dict(sorted(self.ports.items())))

    @property
    def alphabet(self) -> str:
        return CLASS_ALPHABET[: self.num_classes]

    def char(self, port: int) -> str:
        return self.ports.get(int(port), OOV_CHAR)

    def __len__(self):
        return len(self.ports)

    def to_text(self) -> str:
        lines = [f"classes {self.num_classes}"]
        lines += [f"{port} {char}" for port, char in self.ports.items()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PortLookupTable":
        lines = [ln.split() for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0][0] != "classes":
            raise ValueError("lookup table text must start with 'classes <K>'")
        return cls(int(lines[0][1]), {int(p): c for p, c in lines[1:]})


def class_char(class_id: int) -> str:
    return CLASS_ALPHABET[class_id]


def build_lookup(stats: ClassStats, min_flows: int = 1) -> PortLookupTable:
    """Map every observed port to the class using it in the most flows.

    Ties go to the lower class id. Ports seen in fewer than ``min_flows`` flows
    overall stay unmapped; the default keeps every observed port.
    """
    if not stats.labels or stats.total == 0:
        raise EmptyStats("cannot build a lookup table from empty statistics")
    best: dict[int, tuple[int, int]] = {}
    totals: Counter = Counter()
    for cid, counts in enumerate(stats.port_counts):
        for port, n in counts.items():
            totals[port] += n
            # strict '>' keeps the earlier (lower) class id on ties
            if port not in best or n > best[port][0]:
                best[port] = (n, cid)
    ports = {p: class_char(cid) for p, (_, cid) in best.items() if totals[p] >= min_flows}
    return PortLookupTable(len(stats.labels), ports)


def make_word(sp: int, dp: int, pd: int, table: PortLookupTable) -> str:
    if pd not in (0, 1):
        raise InvalidDirection(f"direction must be 0 or 1, got {pd!r}")
    return f"{table.char(sp)}{table.char(dp)}{pd}"


def flow_words(flow: FlowRecord, table: PortLookupTable) -> list[str]:
    return [make_word(p.src_port, p.dst_port, p.direction, table) for p in flow.packets]


@dataclass(frozen=True)
class WordVocab:
    """PAD is index 0 and OOV index 1; observed words follow in sorted order."""

    words: tuple[str, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.words[:2] != (PAD, OOV_WORD):
            raise ValueError("vocabulary must start with PAD and OOV")
        object.__setattr__(self, "_index", {w: i for i, w in enumerate(self.words)})

    @classmethod
    def build(cls, flows: Iterable[FlowRecord], table: PortLookupTable) -> "WordVocab":
        seen = {w for f in flows for w in flow_words(f, table)}
        return cls((PAD, OOV_WORD) + tuple(sorted(seen)))

    def __len__(self):
        return len(self.words)

    def index(self, word: str) -> int:
        return self._index.get(word, OOV_INDEX)

    def to_text(self) -> str:
        return "\n".join(self.words) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "WordVocab":
        return cls(tuple(ln for ln in text.splitlines() if ln))


def max_vocab_size(num_classes: int) -> int:
    return (num_classes + 1) ** 2 * 2 + 2


def encode_flow(flow: FlowRecord, table: PortLookupTable, vocab: WordVocab, length: int = MAX_PACKETS) -> np.ndarray:
    """Word indices for each packet, padded with PAD to ``length``."""
    out = np.full(length, PAD_INDEX, dtype=np.int64)
    words = flow_words(flow, table)[:length]
    out[: len(words)] = [vocab.index(w) for w in words]
    return out


@dataclass(frozen=True)
class OneHotPortTable:
    """Top-K port buckets; every other port falls into bucket K (OTHER)."""

    ports: tuple[int, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "ports", tuple(int(p) for p in self.ports))
        object.__setattr__(self, "_index", {p: i for i, p in enumerate(self.ports)})

    @property
    def k(self) -> int:
        return len(self.ports)

    @property
    def buckets(self) -> int:
        return self.k + 1

    @property
    def width(self) -> int:
        """Width of the equivalent dense per-packet vector."""
        return 2 * self.buckets + 1

    def bucket(self, port: int) -> int:
        return self._index.get(int(port), self.k)


def build_onehot_table(flows: Iterable[FlowRecord], k: int = 1024) -> OneHotPortTable:
    """The ``k`` ports used by the most flows (ties toward the lower port)."""
    counts: Counter = Counter()
    for f in flows:
        counts.update(flow_ports(f))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return OneHotPortTable(tuple(p for p, _ in ranked[:k]))


def encode_onehot_baseline(flow: FlowRecord, table: OneHotPortTable, length: int = MAX_PACKETS) -> np.ndarray:
    """Per packet ``(src bucket, dst bucket, direction)``; pad rows are zeros.

    This is the sparse form of ``onehot(src) | onehot(dst) | direction``.
    """
    out = np.zeros((length, 3), dtype=np.int64)
    for j, p in enumerate(flow.packets[:length]):
        out[j] = (table.bucket(p.src_port), table.bucket(p.dst_port), p.direction)
    return out


def densify_onehot(sparse: np.ndarray, table: OneHotPortTable) -> np.ndarray:
    """Materialise the ``2(K+1)+1`` wide vectors (mostly for inspection)."""
    sparse = np.asarray(sparse)
    out = np.zeros(sparse.shape[:-1] + (table.width,))
    flat = out.reshape(-1, table.width)
    s = sparse.reshape(-1, 3)
    rows = np.arange(len(s))
    flat[rows, s[:, 0]] = 1.0
    flat[rows, table.buckets + s[:, 1]] = 1.0
    flat[rows, 2 * table.buckets] = s[:, 2]
    return out


def _raw_numeric(flows: Sequence[FlowRecord], length: int) -> tuple[np.ndarray, np.ndarray]:
    values = np.zeros((len(flows), length, len(NUMERIC_FEATURES)))
    mask = np.zeros((len(flows), length), dtype=bool)
    for i, f in enumerate(flows):
        n = min(len(f.packets), length)
        mask[i, :n] = True
        values[i, :n] = [(np.log1p(p.inter_arrival_time * IAT_SCALE), p.payload_length, p.tcp_window_size) for p in f.packets[:n]]
    return values, mask


@dataclass(frozen=True)
class FeatureScaler:
    """Min-max scaling fitted on training packets.

    Inter-arrival times are log-compressed first: raw seconds span several
    orders of magnitude and would otherwise collapse near zero.
    """

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    @classmethod
    def fit(cls, flows: Sequence[FlowRecord]) -> "FeatureScaler":
        values, mask = _raw_numeric(flows, MAX_PACKETS)
        real = values[mask]
        if not len(real):
            raise EmptyStats("no packets to fit the feature scaler on")
        return cls(tuple(real.min(axis=0).tolist()), tuple(real.max(axis=0).tolist()))

    def transform(self, flows: Sequence[FlowRecord], length: int = MAX_PACKETS) -> tuple[np.ndarray, np.ndarray]:
        values, mask = _raw_numeric(flows, length)
        lo, hi = np.array(self.lo), np.array(self.hi)
        span = np.where(hi > lo, hi - lo, 1.0)
        scaled = (values - lo) / span
        scaled[~mask] = 0.0
        return scaled, mask


@dataclass(frozen=True, eq=False)
class EncodedFlows:
    """Model-ready arrays for a batch of flows.

    ``tokens`` is ``(N, T)`` word indices in ``fs-embedding`` mode or
    ``(N, T, 3)`` port buckets in ``one-hot`` mode.
    """

    mode: str
    tokens: np.ndarray
    numeric: np.ndarray
    mask: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)

    @property
    def length(self) -> int:
        return self.mask.shape[1]

    def subset(self, idx) -> "EncodedFlows":
        return EncodedFlows(self.mode, self.tokens[idx], self.numeric[idx], self.mask[idx], self.labels[idx])

    def padded(self, length: int) -> "EncodedFlows":
        """Append pad positions up to ``length``."""
        extra = length - self.length
        if extra < 0:
            raise EncodingMismatch("cannot pad to a shorter length")
        pad_tok = [(0, 0), (0, extra)] + [(0, 0)] * (self.tokens.ndim - 2)
        return EncodedFlows(
            self.mode,
            np.pad(self.tokens, pad_tok),
            np.pad(self.numeric, [(0, 0), (0, extra), (0, 0)]),
            np.pad(self.mask, [(0, 0), (0, extra)]),
            self.labels,
        )


@dataclass(frozen=True, eq=False)
class Encoder:
    """Frozen training-time tables that turn flows into model inputs."""

    mode: str
    scaler: FeatureScaler
    lookup: PortLookupTable | None = None
    vocab: WordVocab | None = None
    onehot: OneHotPortTable | None = None

    def __post_init__(self):
        if self.mode == "fs-embedding":
            if self.lookup is None or self.vocab is None:
                raise EncodingMismatch("fs-embedding mode needs a lookup table and a vocabulary")
        elif self.mode == "one-hot":
            if self.onehot is None:
                raise EncodingMismatch("one-hot mode needs a port table")
        else:
            raise EncodingMismatch(f"unknown input mode {self.mode!r}")

    @property
    def input_size(self) -> int:
        """Vocabulary size, or the number of port buckets for one-hot."""
        return len(self.vocab) if self.mode == "fs-embedding" else self.onehot.buckets

    def encode(self, flows: Sequence[FlowRecord], length: int = MAX_PACKETS) -> EncodedFlows:
        flows = list(flows)
        numeric, mask = self.scaler.transform(flows, length)
        if self.mode == "fs-embedding":
            tokens = np.zeros((len(flows), length), dtype=np.int64)
            for i, f in enumerate(flows):
                tokens[i] = encode_flow(f, self.lookup, self.vocab, length)
        else:
            tokens = np.zeros((len(flows), length, 3), dtype=np.int64)
            for i, f in enumerate(flows):
                tokens[i] = encode_onehot_baseline(f, self.onehot, length)
        labels = np.array([f.label.id for f in flows], dtype=np.int64)
        return EncodedFlows(self.mode, tokens, numeric, mask, labels)


def fit_encoder(
    train: Dataset,
    mode: str = "fs-embedding",
    onehot_k: int = 1024,
    min_port_flows: int = 1,
    stats: ClassStats | None = None,
) -> Encoder:
    """Build every table from the training split only."""
    scaler = FeatureScaler.fit(train.flows)
    if mode == "fs-embedding":
        table = build_lookup(stats or class_stats(train), min_port_flows)
        return Encoder(mode, scaler, lookup=table, vocab=WordVocab.build(train.flows, table))
    if mode == "one-hot":
        return Encoder(mode, scaler, onehot=build_onehot_table(train.flows, onehot_k))
    raise EncodingMismatch(f"unknown input mode {mode!r}")
