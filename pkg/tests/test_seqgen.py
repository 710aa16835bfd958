import numpy as np
import pytest

from flowaug.errors import ClassNotFound, EmptyClass, EmptyCorpus
from flowaug.flows import ClassLabel, make_flow
from flowaug.ingest import Dataset
from flowaug.nn import load_archive, save_archive
from flowaug.seqgen import (
    END,
    OTHER,
    SeqGenConfig,
    SeqVocab,
    build_training_corpus,
    greedy_sequence,
    sample_aligned,
    sample_sequence,
    sample_sequences,
    seqgen_from_arrays,
    seqgen_to_arrays,
    train_seqgen,
    training_pairs,
)

A, B = ClassLabel(0, "a"), ClassLabel(1, "b")


def flow(directions, label=A, windows=None):
    windows = windows or [1000] * len(directions)
    return make_flow([(5000, 80, 0.0, 10, d, w) for d, w in zip(directions, windows)], label)


@pytest.fixture(scope="module")
def pattern_model():
    corpus = [[1, 0, 1, 0, END]] * 32
    return train_seqgen(corpus, SeqGenConfig(epochs=80, seed=3))


def test_corpus_and_shifted_targets():
    data = Dataset([flow([1, 0, 1]), flow([1] * 20), flow([1], B)], (A, B))
    corpus = build_training_corpus(data, 0, "direction")
    assert corpus[0] == [1, 0, 1, END]
    assert len(corpus[1]) == 21 and corpus[1][-1] == END
    inputs, targets = training_pairs(corpus[0])
    assert inputs == [1, 0, 1] and targets == [0, 1, END]


def test_corpus_errors():
    data = Dataset([flow([1, 0])], (A, B))
    with pytest.raises(EmptyClass):
        build_training_corpus(data, 1, "direction")
    with pytest.raises(ClassNotFound):
        build_training_corpus(data, 4, "direction")
    with pytest.raises(EmptyCorpus):
        train_seqgen([])


def test_window_vocab_top_k():
    vocab = SeqVocab.for_windows([5, 5, 5, 7, 7, 9, 1, 1], top_k=2)
    assert vocab.tokens == (5, 1, OTHER, END)
    assert vocab.index(9) == vocab.index(OTHER)
    assert vocab.end_index == 3
    with pytest.raises(ValueError):
        SeqVocab((0, 1))


def test_greedy_reproduces_single_pattern(pattern_model):
    assert greedy_sequence(pattern_model) == [1, 0, 1, 0]


def test_loss_decays(pattern_model):
    hist = pattern_model.loss_history
    assert all(hist[e + 10] <= hist[e] for e in range(len(hist) - 10))
    assert hist[-1] < 0.05


def test_sampling_overfit_pattern(pattern_model):
    draws = sample_sequences(pattern_model, 1000, 0)
    assert sum(d == [1, 0, 1, 0] for d in draws) >= 950


def test_sampling_contracts():
    rng = np.random.default_rng(0)
    corpus = []
    for _ in range(200):
        n = int(rng.integers(1, 21))
        corpus.append([1] + rng.integers(0, 2, size=n - 1).tolist() + [END])
    model = train_seqgen(corpus, SeqGenConfig(epochs=5, seed=1))
    draws = sample_sequences(model, 2000, 4)
    assert all(1 <= len(d) <= 20 for d in draws)
    assert all(d[0] == 1 for d in draws)
    assert all(set(d) <= {0, 1} for d in draws)


def test_first_step_distribution_tv():
    corpus = [[1, 5, END]] * 70 + [[3, END]] * 30
    model = train_seqgen(corpus, SeqGenConfig(epochs=3, seed=0), kind="window")
    assert abs(model.first_step.sum() - 1) < 1e-9
    firsts = [s[0] for s in sample_sequences(model, 10_000, 1)]
    emp = np.array([np.mean([f == t for f in firsts]) for t in model.vocab.tokens])
    assert 0.5 * np.abs(emp - model.first_step).sum() < 0.03


def test_determinism():
    corpus = [[1, 0, 0, END], [1, 1, END]] * 10
    a = train_seqgen(corpus, SeqGenConfig(epochs=5, seed=9))
    b = train_seqgen(corpus, SeqGenConfig(epochs=5, seed=9))
    assert np.array_equal(a.lstm.W.value, b.lstm.W.value)
    assert np.array_equal(a.proj.W.value, b.proj.W.value)
    assert sample_sequence(a, 3) == sample_sequence(b, 3)
    assert sample_sequences(a, 50, 11) == sample_sequences(a, 50, 11)


def test_other_token_never_sampled_without_rare_values():
    corpus = [[1000, 2000, END], [1000, END]] * 20
    model = train_seqgen(corpus, SeqGenConfig(epochs=3, seed=0), kind="window")
    assert model.other_model is None
    assert all(OTHER not in s for s in sample_sequences(model, 500, 2))


def test_other_bucket_keeps_rare_values():
    corpus = [[v, END] for v in range(100)]
    model = train_seqgen(corpus, SeqGenConfig(epochs=1, seed=0, top_k=10), kind="window")
    assert len(model.vocab) == 12
    assert model.other_model is not None and model.other_model.n == 90


def test_sample_aligned_lengths():
    corpus = [[1000, 2000, 3000, END], [1000, 2000, END]] * 30
    model = train_seqgen(corpus, SeqGenConfig(epochs=20, seed=0), kind="window")
    lengths = [1, 2, 3, 7, 20, 5]
    out = sample_aligned(model, lengths, 5)
    assert [len(s) for s in out] == lengths
    assert all(t in (1000, 2000, 3000) for s in out for t in s)


def test_archive_round_trip(tmp_path):
    corpus = [[v % 7, END] for v in range(40)]
    model = train_seqgen(corpus, SeqGenConfig(epochs=2, seed=0, top_k=3), kind="window", class_id=2)
    arrays, meta = seqgen_to_arrays(model, "m")
    path = save_archive(tmp_path / "g.bin", arrays, {"m": meta})
    arrays2, meta2 = load_archive(path)
    back = seqgen_from_arrays(arrays2, meta2["m"], "m")
    assert back.vocab == model.vocab and back.class_id == 2
    assert sample_sequences(back, 30, 1) == sample_sequences(model, 30, 1)
