"""Transformer-encoder flow classifier.

Per packet, a word embedding (or the one-hot port projection) of width
``3D/4`` is concatenated with a ``D/4`` projection of the scaled numerical
features. Sinusoidal positions are added, the sequence passes through pre-norm
encoder blocks with pad keys masked out, non-pad positions are averaged, and
a dense head produces class logits.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .embedding import (
    NUMERIC_FEATURES,
    EncodedFlows,
    Encoder,
    FeatureScaler,
    OneHotPortTable,
    PortLookupTable,
    WordVocab,
)
from .errors import EmptyDataset, EncodingMismatch, InvalidConfig, ShapeMismatch
from .flows import FlowRecord
from .nn import (
    Adam,
    Dense,
    Embedding,
    GELU,
    EncoderBlock,
    Layer,
    LayerNorm,
    MaskedMeanPool,
    SparseOneHotDense,
    load_archive,
    positional_encoding,
    save_archive,
    softmax,
    softmax_cross_entropy,
)

logger = logging.getLogger(__name__)

INPUT_MODES = ("fs-embedding", "one-hot")
# final-layer init gain: keeps initial logits small so the first loss sits near ln K
OUTPUT_GAIN = 0.01


@dataclass(frozen=True)
class ClassifierConfig:
    blocks: int = 3
    heads: int = 4
    dim: int = 128
    ff_hidden: int = 4
    head_widths: tuple[int, ...] = (512, 256)
    epochs: int = 30
    batch_size: int = 256
    lr: float = 1e-3
    seed: int = 0
    input_mode: str = "fs-embedding"
    dropout: float = 0.0
    dtype: str = "float64"
    clip_norm: float | None = None
    patience: int | None = None
    onehot_k: int = 1024
    min_port_flows: int = 1

    def __post_init__(self):
        object.__setattr__(self, "head_widths", tuple(int(w) for w in self.head_widths))
        if self.input_mode not in INPUT_MODES:
            raise InvalidConfig(f"input_mode must be one of {INPUT_MODES}, got {self.input_mode!r}")
        if self.dim <= 0 or self.heads <= 0 or self.dim % self.heads:
            raise InvalidConfig(f"{self.heads} heads do not divide model dim {self.dim}")
        if self.dim % 4:
            raise InvalidConfig(f"model dim must be a multiple of 4, got {self.dim}")
        if self.blocks < 1 or self.ff_hidden < 1 or any(w < 1 for w in self.head_widths):
            raise InvalidConfig("blocks, ff_hidden and head widths must be positive")
        if self.epochs < 0 or self.batch_size < 1 or not self.lr > 0:
            raise InvalidConfig("epochs >= 0, batch_size >= 1 and lr > 0 are required")
        if not 0 <= self.dropout < 1:
            raise InvalidConfig("dropout must lie in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise InvalidConfig("dtype must be float32 or float64")

    @property
    def word_dim(self) -> int:
        return 3 * self.dim // 4

    @property
    def numeric_dim(self) -> int:
        return self.dim // 4

    def to_dict(self) -> dict:
        d = asdict(self)
        d["head_widths"] = list(self.head_widths)
        return d


PRESETS = {
    "preset-a": ClassifierConfig(blocks=3, heads=4, dim=128, ff_hidden=4),
    "preset-b": ClassifierConfig(blocks=3, heads=10, dim=320, ff_hidden=4),
    # small enough for a laptop CPU in minutes
    "desk": ClassifierConfig(blocks=2, heads=4, dim=32, ff_hidden=32, head_widths=(64, 32), epochs=20),
}


def preset(name: str, **overrides) -> ClassifierConfig:
    if name not in PRESETS:
        raise InvalidConfig(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return replace(PRESETS[name], **overrides)


def count_parameters(config: ClassifierConfig, input_size: int, num_classes: int) -> int:
    """Closed-form parameter count.

    ``input_size`` is the vocabulary size for fs-embedding, or the number of
    port buckets (K + 1) for one-hot.
    """
    D, F, E = config.dim, config.ff_hidden, config.word_dim
    if config.input_mode == "fs-embedding":
        inp = input_size * E
    else:
        inp = (2 * input_size + 1) * E + E
    numeric = len(NUMERIC_FEATURES) * config.numeric_dim + config.numeric_dim
    block = 2 * (2 * D) + 4 * (D * D + D) + (D * F + F) + (F * D + D)
    widths = (D,) + config.head_widths + (num_classes,)
    head = sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))
    return inp + numeric + config.blocks * block + 2 * D + head


class ClassifierModel(Layer):
    def __init__(self, config: ClassifierConfig, input_size: int, num_classes: int):
        super().__init__()
        if num_classes < 2:
            raise InvalidConfig("a classifier needs at least 2 classes")
        self.config = config
        self.input_size = input_size
        self.num_classes = num_classes
        self.dtype = np.dtype(config.dtype)
        rng = np.random.default_rng(config.seed)
        dt = self.dtype
        if config.input_mode == "fs-embedding":
            self.words = self.add_child("words", Embedding(input_size, config.word_dim, rng, dt))
        else:
            self.words = self.add_child("words", SparseOneHotDense(input_size, config.word_dim, rng, dt))
        self.numeric = self.add_child("numeric", Dense(len(NUMERIC_FEATURES), config.numeric_dim, rng, dt))
        self.blocks = [
            self.add_child(f"block{i}", EncoderBlock(config.dim, config.heads, config.ff_hidden, rng, config.dropout, dt))
            for i in range(config.blocks)
        ]
        self.norm = self.add_child("norm", LayerNorm(config.dim, dtype=dt))
        self.pool = self.add_child("pool", MaskedMeanPool())
        widths = (config.dim,) + config.head_widths
        self.head: list[Layer] = []
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            self.head.append(self.add_child(f"fc{i}", Dense(a, b, rng, dt)))
            self.head.append(self.add_child(f"act{i}", GELU()))
        self.head.append(self.add_child("out", Dense(widths[-1], num_classes, rng, dt, gain=OUTPUT_GAIN)))
        # inputs are scaled by sqrt(D) so positions do not swamp the per-flow signal
        self._input_scale = float(np.sqrt(config.dim))
        self.encoder: Encoder | None = None

    @property
    def mode(self) -> str:
        return self.config.input_mode

    def check_inputs(self, batch: EncodedFlows) -> None:
        if batch.mode != self.mode:
            raise EncodingMismatch(f"model expects {self.mode} inputs, got {batch.mode}")
        tok = batch.tokens
        if tok.size:
            hi = tok[..., :2].max() if self.mode == "one-hot" else tok.max()
            if tok.min() < 0 or hi >= self.input_size:
                raise EncodingMismatch("token index outside the model's input table")
        if batch.numeric.shape[-1] != len(NUMERIC_FEATURES):
            raise EncodingMismatch("numeric feature width does not match the model")

    def forward(self, tokens: np.ndarray, numeric: np.ndarray, mask: np.ndarray) -> np.ndarray:
        w = self.words.forward(tokens)
        x = np.concatenate([w, self.numeric.forward(numeric.astype(self.dtype, copy=False))], axis=-1)
        x = x * self._input_scale + positional_encoding(x.shape[1], self.config.dim, self.dtype)
        for block in self.blocks:
            x = block.forward(x, mask)
        h = self.pool.forward(self.norm.forward(x), mask)
        for layer in self.head:
            h = layer.forward(h)
        return h

    def backward(self, dlogits: np.ndarray) -> None:
        d = dlogits
        for layer in reversed(self.head):
            d = layer.backward(d)
        d = self.norm.backward(self.pool.backward(d))
        for block in reversed(self.blocks):
            d = block.backward(d)
        E = self.config.word_dim
        d = d * self._input_scale
        self.words.backward(d[..., :E])
        self.numeric.backward(d[..., E:])


def build_model(config: ClassifierConfig, input_size: int, num_classes: int) -> ClassifierModel:
    """Deterministic given ``config.seed``."""
    model = ClassifierModel(config, input_size, num_classes)
    expected = count_parameters(config, input_size, num_classes)
    if model.num_parameters() != expected:  # pragma: no cover - guards the closed form
        raise AssertionError(f"parameter count {model.num_parameters()} != closed form {expected}")
    return model


@dataclass
class TrainReport:
    mode: str
    parameters: int
    epochs: int
    losses: list[float] = field(default_factory=list)
    accuracies: list[float] = field(default_factory=list)
    valid_accuracies: list[float] = field(default_factory=list)
    first_batch_loss: float = float("nan")
    wall_clock: float = 0.0


def _trim(batch: EncodedFlows) -> EncodedFlows:
    """Drop trailing positions that are padding for every flow in the batch."""
    used = np.flatnonzero(batch.mask.any(axis=0))
    t = int(used[-1]) + 1 if len(used) else 1
    if t == batch.length:
        return batch
    return EncodedFlows(batch.mode, batch.tokens[:, :t], batch.numeric[:, :t], batch.mask[:, :t], batch.labels)


def _logits(model: ClassifierModel, batch: EncodedFlows) -> np.ndarray:
    b = _trim(batch)
    return model.forward(b.tokens, b.numeric, b.mask)


def train(
    model: ClassifierModel,
    train_set: EncodedFlows,
    valid_set: EncodedFlows | None = None,
    config: ClassifierConfig | None = None,
) -> TrainReport:
    """Minimise cross-entropy with Adam; deterministic given ``config.seed``."""
    config = config or model.config
    if len(train_set) == 0:
        raise EmptyDataset("no training flows")
    model.check_inputs(train_set)
    if valid_set is not None:
        model.check_inputs(valid_set)
    if train_set.labels.max() >= model.num_classes or train_set.labels.min() < 0:
        raise ShapeMismatch("training label outside the model's classes")
    start = time.perf_counter()
    opt = Adam(model.parameters(), lr=config.lr, clip_norm=config.clip_norm)
    order_rng = np.random.default_rng([config.seed, 1])
    report = TrainReport(model.mode, model.num_parameters(), 0)
    best, stale = -1.0, 0
    n = len(train_set)
    for epoch in range(config.epochs):
        model.train()
        perm = order_rng.permutation(n)
        total = 0.0
        correct = 0
        for s in range(0, n, config.batch_size):
            batch = train_set.subset(perm[s : s + config.batch_size])
            opt.zero_grad()
            logits = _logits(model, batch)
            loss, dlogits = softmax_cross_entropy(logits, batch.labels)
            if epoch == 0 and s == 0:
                report.first_batch_loss = loss
            model.backward(dlogits)
            opt.step()
            total += loss * len(batch)
            correct += int((logits.argmax(axis=1) == batch.labels).sum())
        report.losses.append(total / n)
        report.accuracies.append(correct / n)
        report.epochs = epoch + 1
        if valid_set is not None and len(valid_set):
            acc = float((predict_encoded(model, valid_set)[1] == valid_set.labels).mean())
            report.valid_accuracies.append(acc)
            if config.patience is not None:
                if acc > best:
                    best, stale = acc, 0
                else:
                    stale += 1
                    if stale >= config.patience:
                        break
        logger.info("epoch %d loss %.4f acc %.4f", epoch + 1, report.losses[-1], report.accuracies[-1])
    model.eval()
    report.wall_clock = time.perf_counter() - start
    return report


def predict_encoded(model: ClassifierModel, batch: EncodedFlows, batch_size: int = 1024) -> tuple[np.ndarray, np.ndarray]:
    model.check_inputs(batch)
    was_training = model.training
    model.eval()
    probs = np.zeros((len(batch), model.num_classes))
    for s in range(0, len(batch), batch_size):
        chunk = batch.subset(slice(s, s + batch_size))
        probs[s : s + len(chunk)] = softmax(_logits(model, chunk).astype(np.float64), axis=-1)
    model.train(was_training)
    return probs, probs.argmax(axis=1)


def predict(model: ClassifierModel, flows: Sequence[FlowRecord] | EncodedFlows) -> tuple[np.ndarray, np.ndarray]:
    """Per-flow class probabilities and argmax labels."""
    if isinstance(flows, EncodedFlows):
        return predict_encoded(model, flows)
    if model.encoder is None:
        raise EncodingMismatch("model has no attached encoder; pass encoded flows")
    return predict_encoded(model, model.encoder.encode(flows))


def save_model(model: ClassifierModel, path: str | Path, extra: dict | None = None) -> Path:
    enc = model.encoder
    meta = {
        "kind": "classifier",
        "config": model.config.to_dict(),
        "input_size": model.input_size,
        "num_classes": model.num_classes,
        "extra": extra or {},
    }
    if enc is not None:
        meta["encoder"] = {
            "mode": enc.mode,
            "scaler": {"lo": list(enc.scaler.lo), "hi": list(enc.scaler.hi)},
            "lookup": enc.lookup.to_text() if enc.lookup else None,
            "vocab": list(enc.vocab.words) if enc.vocab else None,
            "onehot": list(enc.onehot.ports) if enc.onehot else None,
        }
    return save_archive(path, model.state_dict(), meta)


def load_model(path: str | Path) -> tuple[ClassifierModel, dict]:
    arrays, meta = load_archive(path)
    if meta.get("kind") != "classifier":
        raise EncodingMismatch(f"{path} does not hold a classifier")
    cfg = dict(meta["config"])
    cfg["head_widths"] = tuple(cfg["head_widths"])
    model = ClassifierModel(ClassifierConfig(**cfg), int(meta["input_size"]), int(meta["num_classes"]))
    model.load_state_dict(arrays)
    info = meta.get("encoder")
    if info:
        model.encoder = Encoder(
            info["mode"],
            FeatureScaler(tuple(info["scaler"]["lo"]), tuple(info["scaler"]["hi"])),
            lookup=PortLookupTable.from_text(info["lookup"]) if info["lookup"] else None,
            vocab=WordVocab(tuple(info["vocab"])) if info["vocab"] else None,
            onehot=OneHotPortTable(tuple(info["onehot"])) if info["onehot"] is not None else None,
        )
    model.eval()
    return model, meta.get("extra", {})
