import numpy as np
import pytest

from flowaug.errors import EmptyStats, EncodingMismatch, InvalidDirection
from flowaug.flows import ClassLabel, make_flow
from flowaug.ingest import ClassStats, Dataset, class_stats
from flowaug.embedding import (
    OOV_INDEX,
    PAD_INDEX,
    OneHotPortTable,
    PortLookupTable,
    WordVocab,
    build_lookup,
    build_onehot_table,
    densify_onehot,
    encode_flow,
    encode_onehot_baseline,
    fit_encoder,
    flow_words,
    make_word,
    max_vocab_size,
)

LABELS = tuple(ClassLabel(i, n) for i, n in enumerate(["http", "b", "c", "d", "ssl"]))


def stats_from(port_counts):
    k = len(port_counts)
    labels = tuple(ClassLabel(i, f"c{i}") for i in range(k))
    return ClassStats(labels, (1,) * k, (1 / k,) * k, tuple(port_counts))


def five_class_table():
    return build_lookup(stats_from([{80: 10}, {}, {}, {}, {443: 20, 80: 3}]))


def test_golden_words():
    table = five_class_table()
    assert table.char(80) == "A" and table.char(443) == "E"
    assert make_word(80, 443, 0, table) == "AE0"
    assert make_word(443, 80, 1, table) == "EA1"


def test_unknown_port_is_z():
    assert five_class_table().char(12345) == "Z"
    assert make_word(12345, 443, 1, five_class_table()) == "ZE1"


def test_tie_goes_to_lower_class():
    table = build_lookup(stats_from([{}, {8080: 5}, {8080: 5}]))
    assert table.char(8080) == "B"


def test_min_flows_threshold():
    table = build_lookup(stats_from([{80: 10, 50123: 1}, {443: 4}]), min_flows=2)
    assert table.char(50123) == "Z" and table.char(80) == "A"


def test_invalid_inputs():
    with pytest.raises(InvalidDirection):
        make_word(1, 2, 2, five_class_table())
    with pytest.raises(EmptyStats):
        build_lookup(ClassStats((), (), (), ()))
    with pytest.raises(ValueError):
        PortLookupTable(2, {80: "E"})


def flows_for(seed=0, n=300):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        cid = int(rng.integers(0, 5))
        srv = [80, 22, 53, 25, 443][cid]
        cli = int(rng.integers(40000, 40100))
        length = int(rng.integers(1, 21))
        rows = []
        for j in range(length):
            d = 1 if j == 0 else int(rng.integers(0, 2))
            sp, dp = (cli, srv) if d else (srv, cli)
            rows.append((sp, dp, 0.0 if j == 0 else 0.01, 10 * j, d, 100))
        out.append(make_flow(rows, LABELS[cid], flow_id=str(i)))
    return Dataset(out, LABELS)


def test_encode_length_and_padding():
    data = flows_for()
    table = build_lookup(class_stats(data))
    vocab = WordVocab.build(data.flows, table)
    for f in data.flows[:50]:
        enc = encode_flow(f, table, vocab)
        assert enc.shape == (20,)
        assert (enc[: len(f)] > OOV_INDEX).all()
        assert (enc[len(f) :] == PAD_INDEX).all()


def test_vocab_bound_and_oov():
    data = flows_for()
    table = build_lookup(class_stats(data))
    vocab = WordVocab.build(data.flows, table)
    assert len(vocab) <= max_vocab_size(5) == 74
    assert max_vocab_size(19) == 802
    assert vocab.index("QQ1") == OOV_INDEX
    assert vocab.words[:2] == ("<PAD>", "<OOV>")
    assert list(vocab.words[2:]) == sorted(vocab.words[2:])


def test_vocab_for_nineteen_classes_within_802():
    labels = tuple(ClassLabel(i, f"k{i}") for i in range(19))
    rng = np.random.default_rng(1)
    flows = []
    for i in range(2000):
        cid = i % 19
        rows = [(int(rng.integers(0, 65536)), int(rng.integers(0, 65536)), 0.0, 1, 1, 0)]
        rows += [(int(rng.integers(0, 65536)), int(rng.integers(0, 65536)), 0.1, 1, int(rng.integers(0, 2)), 0)]
        flows.append(make_flow(rows, labels[cid]))
    data = Dataset(flows, labels)
    vocab = WordVocab.build(data.flows, build_lookup(class_stats(data)))
    assert len(vocab) <= 802


def test_rebuild_is_byte_identical():
    data = flows_for(3)
    t1, t2 = build_lookup(class_stats(data)), build_lookup(class_stats(data))
    assert t1.to_text() == t2.to_text()
    v1, v2 = WordVocab.build(data.flows, t1), WordVocab.build(data.flows, t2)
    assert v1.to_text() == v2.to_text()
    assert PortLookupTable.from_text(t1.to_text()) == t1
    assert WordVocab.from_text(v1.to_text()) == v1


def test_flow_words_order():
    table = five_class_table()
    f = make_flow([(40000, 443, 0.0, 1, 1, 0), (443, 40000, 0.1, 1, 0, 0)], LABELS[4])
    assert flow_words(f, table) == ["ZE1", "EZ0"]


def test_onehot_k4_example():
    ports = [80] * 5 + [443] * 4 + [22] * 3 + [53] * 2 + [25]
    flows = [make_flow([(40000 + i, p, 0.0, 1, 1, 0)], LABELS[0]) for i, p in enumerate(ports)]
    table = build_onehot_table(flows, k=4)
    assert table.ports == (80, 443, 22, 53)
    assert table.width == 2 * (4 + 1) + 1 == 11
    f = make_flow([(80, 25, 0.0, 1, 1, 0), (25, 80, 0.1, 1, 0, 0)], LABELS[0])
    sparse = encode_onehot_baseline(f, table, length=3)
    assert sparse[:2].tolist() == [[0, 4, 1], [4, 0, 0]]
    dense = densify_onehot(sparse, table)
    assert dense.shape == (3, 11)
    assert dense[0].tolist() == [1, 0, 0, 0, 0] + [0, 0, 0, 0, 1] + [1]
    assert dense[1].tolist() == [0, 0, 0, 0, 1] + [1, 0, 0, 0, 0] + [0]
    assert dense[0].sum() == 3 and dense[1].sum() == 2


def test_onehot_default_k():
    assert OneHotPortTable(tuple(range(1024))).width == 2051


def test_encoder_modes_and_scaling():
    data = flows_for(5)
    fs = fit_encoder(data, "fs-embedding")
    oh = fit_encoder(data, "one-hot", onehot_k=8)
    a, b = fs.encode(data.flows), oh.encode(data.flows)
    assert a.tokens.shape == (300, 20) and b.tokens.shape == (300, 20, 3)
    assert oh.input_size == 9 and fs.input_size == len(fs.vocab)
    assert np.array_equal(a.mask, b.mask)
    valid = a.numeric[a.mask]
    assert valid.min() >= -1e-9 and valid.max() <= 1 + 1e-9
    assert not a.numeric[~a.mask].any()
    with pytest.raises(EncodingMismatch):
        fit_encoder(data, "bag-of-words")
