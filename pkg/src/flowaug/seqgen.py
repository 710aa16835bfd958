"""Per-class LSTM generators for packet-direction and TCP-window sequences.

Each flow becomes a token sequence terminated by an end token. The LSTM is
trained with teacher forcing to predict the sequence shifted by one step, and
generation feeds each sampled token back in until the end token appears or the
flow reaches 20 packets.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ClassNotFound, EmptyClass, EmptyCorpus
from .flows import MAX_PACKETS
from .ingest import Dataset
from .kde import ConstantModel, KdeModel, as_rng, fit_or_constant
from .nn import LSTM, Adam, Dense, softmax, softmax_cross_entropy

logger = logging.getLogger(__name__)

END = "<END>"
OTHER = "<OTHER>"
KINDS = ("direction", "window")


@dataclass(frozen=True)
class SeqVocab:
    tokens: tuple
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.tokens.count(END) != 1:
            raise ValueError("vocabulary must contain the end token exactly once")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    @classmethod
    def for_directions(cls) -> "SeqVocab":
        return cls((0, 1, END))

    @classmethod
    def for_windows(cls, values: Sequence[int], top_k: int = 64) -> "SeqVocab":
        """Keep the ``top_k`` most frequent values (ties -> smaller value) plus OTHER."""
        ranked = sorted(Counter(int(v) for v in values).items(), key=lambda kv: (-kv[1], kv[0]))
        return cls(tuple(v for v, _ in ranked[:top_k]) + (OTHER, END))

    def __len__(self):
        return len(self.tokens)

    @property
    def end_index(self) -> int:
        return self._index[END]

    def index(self, token) -> int:
        if token in self._index:
            return self._index[token]
        if OTHER in self._index and token != END:
            return self._index[OTHER]
        raise KeyError(f"token {token!r} not in vocabulary")

    def encode(self, tokens) -> list[int]:
        return [self.index(t) for t in tokens]


@dataclass
class SeqGenConfig:
    hidden_size: int = 64
    epochs: int = 60
    lr: float = 1e-2
    batch_size: int = 64
    seed: int = 0
    top_k: int = 64
    clip_norm: float | None = 5.0


@dataclass(eq=False)
class SeqGenModel:
    class_id: int
    kind: str
    vocab: SeqVocab
    lstm: LSTM
    proj: Dense
    first_step: np.ndarray
    other_model: KdeModel | ConstantModel | None = None
    loss_history: list[float] = field(default_factory=list)

    def next_probs(self, h: np.ndarray) -> np.ndarray:
        # no cache: sampling never backpropagates
        probs = softmax(h @ self.proj.W.value + self.proj.b.value)
        if self.kind == "window" and self.other_model is None:
            # OTHER never occurred in training, so there is nothing to materialise it from
            probs[:, self.vocab.index(OTHER)] = 0.0
        return probs


def _flow_tokens(flow, kind: str) -> list:
    if kind == "direction":
        return [p.direction for p in flow.packets]
    return [p.tcp_window_size for p in flow.packets]


def build_training_corpus(dataset: Dataset, class_id: int, kind: str) -> list[list]:
    """Token sequences (up to 20 tokens, then END) for every flow of one class."""
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    if not 0 <= class_id < dataset.num_classes:
        raise ClassNotFound(f"no class with id {class_id}")
    flows = dataset.flows_of(class_id)
    if not flows:
        raise EmptyClass(f"class {dataset.labels[class_id].name!r} has no flows")
    return [_flow_tokens(f, kind)[:MAX_PACKETS] + [END] for f in flows]


def training_pairs(sequence: Sequence) -> tuple[list, list]:
    """Inputs and next-step targets: the sequence and its one-step shift."""
    return list(sequence[:-1]), list(sequence[1:])


def _one_hot(idx: np.ndarray, size: int, dtype=np.float64) -> np.ndarray:
    out = np.zeros(idx.shape + (size,), dtype=dtype)
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return out


def _batch(encoded: list[list[int]], end_index: int):
    t = max(len(s) for s in encoded) - 1
    n = len(encoded)
    inputs = np.full((n, t), end_index, dtype=np.int64)
    targets = np.full((n, t), end_index, dtype=np.int64)
    weights = np.zeros((n, t))
    for i, s in enumerate(encoded):
        k = len(s) - 1
        inputs[i, :k] = s[:-1]
        targets[i, :k] = s[1:]
        weights[i, :k] = 1.0
    return inputs, targets, weights


def train_seqgen(
    corpus: Sequence[Sequence],
    config: SeqGenConfig | None = None,
    kind: str = "direction",
    class_id: int = 0,
) -> SeqGenModel:
    """Fit one LSTM on ``corpus`` (sequences ending in END) with teacher forcing."""
    config = config or SeqGenConfig()
    if not corpus:
        raise EmptyCorpus("cannot train a sequence generator on an empty corpus")
    if any(len(s) < 1 or s[-1] != END for s in corpus):
        raise ValueError("every corpus sequence must end with the end token")
    if kind == "direction":
        vocab = SeqVocab.for_directions()
    else:
        vocab = SeqVocab.for_windows([t for s in corpus for t in s[:-1]], config.top_k)
    V = len(vocab)
    encoded = [vocab.encode(s) for s in corpus]

    first = np.zeros(V)
    for s in encoded:
        if s[0] == vocab.end_index:
            raise ValueError("corpus sequences must contain at least one token before END")
        first[s[0]] += 1
    first /= first.sum()

    other_model = None
    if kind == "window":
        kept = set(vocab.tokens)
        rare = [t for s in corpus for t in s[:-1] if t not in kept]
        other_model = fit_or_constant(rare) if rare else None

    rng = np.random.default_rng(config.seed)
    lstm = LSTM(V, config.hidden_size, rng)
    proj = Dense(config.hidden_size, V, rng)
    params = lstm.parameters() + proj.parameters()
    opt = Adam(params, lr=config.lr, clip_norm=config.clip_norm)
    model = SeqGenModel(class_id, kind, vocab, lstm, proj, first, other_model)

    multi_step = [s for s in encoded if len(s) > 1]
    order_rng = np.random.default_rng([config.seed, 1])
    for epoch in range(config.epochs):
        perm = order_rng.permutation(len(multi_step))
        total, weight = 0.0, 0.0
        for start in range(0, len(perm), config.batch_size):
            batch = [multi_step[i] for i in perm[start : start + config.batch_size]]
            inputs, targets, weights = _batch(batch, vocab.end_index)
            opt.zero_grad()
            hs = lstm.forward(_one_hot(inputs, V))
            logits = proj.forward(hs)
            loss, dlogits = softmax_cross_entropy(logits, targets, weights)
            lstm.backward(proj.backward(dlogits))
            opt.step()
            total += loss * weights.sum()
            weight += weights.sum()
        model.loss_history.append(float(total / weight))
    if model.loss_history:
        logger.debug("class %d %s generator: loss %.4f -> %.4f", class_id, kind, model.loss_history[0], model.loss_history[-1])
    return model


def _sample_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cum = np.cumsum(probs, axis=1)
    u = rng.random(len(probs)) * cum[:, -1]
    return np.minimum((cum <= u[:, None]).sum(axis=1), probs.shape[1] - 1)


def _generate(
    model: SeqGenModel,
    count: int,
    rng: np.random.Generator,
    prefixes: Sequence[Sequence[int]] | None = None,
    min_len: np.ndarray | None = None,
    max_len: np.ndarray | None = None,
    greedy: bool = False,
) -> list[list[int]]:
    """Batched generation over token indices (END excluded from the output).

    ``prefixes`` force the leading tokens; ``min_len`` masks END until a row
    holds that many tokens; ``max_len`` (default 20) stops a row outright.
    """
    V = len(model.vocab)
    end = model.vocab.end_index
    max_len = np.full(count, MAX_PACKETS) if max_len is None else np.minimum(max_len, MAX_PACKETS)
    min_len = np.zeros(count, dtype=np.int64) if min_len is None else min_len
    dtype = model.lstm.W.value.dtype
    H = model.lstm.hidden_size

    if prefixes is not None:
        tok = np.array([p[0] for p in prefixes], dtype=np.int64)
    elif greedy:
        tok = np.full(count, int(np.argmax(model.first_step)))
    else:
        tok = _sample_rows(np.broadcast_to(model.first_step, (count, V)), rng)
    out = [[int(t)] for t in tok]
    alive = np.ones(count, dtype=bool)
    h = np.zeros((count, H), dtype=dtype)
    c = np.zeros((count, H), dtype=dtype)
    for step in range(1, MAX_PACKETS):
        alive &= max_len > step
        if not alive.any():
            break
        h, c = model.lstm.step(_one_hot(tok, V, dtype), h, c)
        probs = model.next_probs(h)
        need_more = step < min_len
        if need_more.any():
            probs = probs.copy()
            probs[need_more, end] = 0.0
            dead = probs.sum(axis=1) <= 0
            probs[dead] = 1.0
            probs[dead, end] = 0.0
        nxt = np.argmax(probs, axis=1) if greedy else _sample_rows(probs, rng)
        if prefixes is not None:
            for i, p in enumerate(prefixes):
                if step < len(p):
                    nxt[i] = p[step]
        tok = nxt
        for i in np.flatnonzero(alive):
            if tok[i] == end:
                alive[i] = False
            else:
                out[i].append(int(tok[i]))
    return out


def _decode(model: SeqGenModel, seq: list[int]) -> list:
    return [model.vocab.tokens[i] for i in seq]


def sample_sequences(model: SeqGenModel, count: int, rng_seed) -> list[list]:
    """Draw ``count`` sequences; each has 1..20 tokens and no END."""
    rng = as_rng(rng_seed)
    return [_decode(model, s) for s in _generate(model, count, rng)]


def sample_sequence(model: SeqGenModel, rng_seed) -> list:
    return sample_sequences(model, 1, rng_seed)[0]


def greedy_sequence(model: SeqGenModel) -> list:
    return _decode(model, _generate(model, 1, np.random.default_rng(0), greedy=True)[0])


def sample_aligned(model: SeqGenModel, lengths: Sequence[int], rng_seed, attempts: int = 3) -> list[list]:
    """Sample one sequence per requested length.

    Each row is resampled up to ``attempts`` times looking for an exact length
    match; leftovers are truncated, or extended with END suppressed until the
    requested length is reached.
    """
    rng = as_rng(rng_seed)
    lengths = np.asarray(lengths, dtype=np.int64)
    result: list[list[int] | None] = [None] * len(lengths)
    last: list[list[int]] = [[] for _ in lengths]
    pending = np.arange(len(lengths))
    for _ in range(attempts):
        if not len(pending):
            break
        drawn = _generate(model, len(pending), rng)
        still = []
        for i, seq in zip(pending, drawn):
            if len(seq) == lengths[i]:
                result[i] = seq
            else:
                last[i] = seq
                still.append(i)
        pending = np.array(still, dtype=np.int64)
    short = [i for i in pending if len(last[i]) < lengths[i]]
    for i in pending:
        if len(last[i]) >= lengths[i]:
            result[i] = last[i][: lengths[i]]
    if short:
        short_idx = np.array(short)
        target = lengths[short_idx]
        extended = _generate(
            model, len(short), rng, prefixes=[last[i] for i in short], min_len=target, max_len=target
        )
        for i, seq in zip(short, extended):
            result[i] = seq
    return [_decode(model, s) for s in result]


def seqgen_to_arrays(model: SeqGenModel, prefix: str) -> tuple[dict[str, np.ndarray], dict]:
    arrays = {
        f"{prefix}.lstm.W": model.lstm.W.value,
        f"{prefix}.lstm.b": model.lstm.b.value,
        f"{prefix}.proj.W": model.proj.W.value,
        f"{prefix}.proj.b": model.proj.b.value,
        f"{prefix}.first_step": model.first_step,
    }
    meta = {
        "class_id": model.class_id,
        "kind": model.kind,
        "tokens": list(model.vocab.tokens),
        "hidden_size": model.lstm.hidden_size,
        "loss_history": list(model.loss_history),
        "other": None,
    }
    if isinstance(model.other_model, KdeModel):
        arrays[f"{prefix}.other.samples"] = model.other_model.samples
        meta["other"] = {"type": "kde", "bandwidth": model.other_model.bandwidth}
    elif isinstance(model.other_model, ConstantModel):
        meta["other"] = {"type": "constant", "value": model.other_model.value}
    return arrays, meta


def seqgen_from_arrays(arrays: dict[str, np.ndarray], meta: dict, prefix: str) -> SeqGenModel:
    tokens = tuple(t for t in meta["tokens"])
    vocab = SeqVocab(tokens)
    V, H = len(vocab), int(meta["hidden_size"])
    rng = np.random.default_rng(0)
    lstm = LSTM(V, H, rng)
    proj = Dense(H, V, rng)
    lstm.load_state_dict({"W": arrays[f"{prefix}.lstm.W"], "b": arrays[f"{prefix}.lstm.b"]})
    proj.load_state_dict({"W": arrays[f"{prefix}.proj.W"], "b": arrays[f"{prefix}.proj.b"]})
    other = None
    info = meta.get("other")
    if info and info["type"] == "kde":
        other = KdeModel(arrays[f"{prefix}.other.samples"], info["bandwidth"])
    elif info and info["type"] == "constant":
        other = ConstantModel(info["value"])
    return SeqGenModel(
        int(meta["class_id"]),
        meta["kind"],
        vocab,
        lstm,
        proj,
        np.array(arrays[f"{prefix}.first_step"]),
        other,
        list(meta.get("loss_history", [])),
    )
