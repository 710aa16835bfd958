import math

import numpy as np
import pytest

from flowaug.augment import (
    AugmentationPlan,
    augment_class,
    fit_class_generators,
    load_plan,
    make_plan,
    minority_classes,
    oversample,
    run_plan,
    target_count,
)
from flowaug.errors import ClassNotFound, InvalidPlan, ModelMissing
from flowaug.flows import ClassLabel, Origin, make_flow
from flowaug.ingest import Dataset
from flowaug.seqgen import SeqGenConfig

FAST = SeqGenConfig(epochs=15, hidden_size=16, seed=0)
LABELS = (ClassLabel(0, "big"), ClassLabel(1, "small"), ClassLabel(2, "tiny"))


def toy_dataset(counts=(60, 12, 2), seed=0, payload=None):
    rng = np.random.default_rng(seed)
    flows = []
    for cid, n in enumerate(counts):
        for i in range(n):
            length = int(rng.integers(2, 9))
            rows = []
            for j in range(length):
                d = 1 if j % 2 == 0 else 0
                sp, dp = (int(rng.integers(40000, 60000)), 443 + cid) if d else (443 + cid, 0)
                if not d:
                    sp, dp = 443 + cid, rows[0][0]
                iat = 0.0 if j == 0 else float(rng.lognormal(-3 + cid, 0.5))
                pl = payload if payload is not None else int(rng.normal(500 + 100 * cid, 30))
                rows.append((sp, dp, iat, max(pl, 0), d, int(rng.choice([1000, 2000]))))
            flows.append(make_flow(rows, LABELS[cid], flow_id=f"{cid}-{i}"))
    return Dataset(flows, LABELS[: len(counts)])


def test_augment_class_contract():
    data = toy_dataset()
    gens = fit_class_generators(data, 1, seed=3, config=FAST)
    flows = augment_class(data, 1, 10, gens, seed=5)
    assert len(flows) == 10
    for f in flows:
        assert f.label == LABELS[1]
        assert f.origin is Origin.GENERATED
        assert 1 <= len(f) <= 20
        assert f.packets[0].direction == 1
        assert f.packets[0].inter_arrival_time == 0.0
        assert all(0 <= p.src_port <= 65535 and 0 <= p.dst_port <= 65535 for p in f.packets)
        # ports are drawn once per flow and swapped on reverse packets
        sp, dp = f.packets[0].src_port, f.packets[0].dst_port
        for p in f.packets:
            assert (p.src_port, p.dst_port) == ((sp, dp) if p.direction == 1 else (dp, sp))


def test_degenerate_payload_is_constant():
    data = toy_dataset(payload=100)
    gens = fit_class_generators(data, 1, seed=0, config=FAST)
    flows = augment_class(data, 1, 50, gens, seed=1)
    assert {p.payload_length for f in flows for p in f.packets} == {100}


def test_iat_mean_preserved():
    data = toy_dataset(counts=(10, 400), seed=2)
    gens = fit_class_generators(data, 1, seed=0, config=FAST)
    flows = augment_class(data, 1, 10_000, gens, seed=4)
    gen = np.array([p.inter_arrival_time for f in flows for p in f.packets[1:]])
    real = np.array([p.inter_arrival_time for f in data.flows_of(1) for p in f.packets[1:]])
    se = math.sqrt(gen.var() / len(gen) + real.var() / len(real))
    assert abs(gen.mean() - real.mean()) < 3 * se


def test_augment_class_errors():
    data = toy_dataset()
    gens = fit_class_generators(data, 1, seed=0, config=FAST)
    with pytest.raises(ModelMissing):
        augment_class(data, 0, 5, gens, seed=0)
    with pytest.raises(ModelMissing):
        augment_class(data, 1, 5, {"direction": gens.direction}, seed=0)


def test_run_plan_arithmetic_and_originals_untouched():
    data = toy_dataset(counts=(100, 20))
    plan = AugmentationPlan({1: 100}, seed=1)
    out = run_plan(data, plan, FAST)
    assert out.class_counts().tolist() == [100, 100]
    assert out.flows[: len(data)] == data.flows
    new = out.flows[len(data) :]
    assert len(new) == 80 and all(f.origin is Origin.GENERATED and f.label.id == 1 for f in new)


def test_run_plan_empty_is_identity():
    data = toy_dataset()
    out = run_plan(data, AugmentationPlan({}, seed=0))
    assert out.flows == data.flows


def test_run_plan_unknown_class():
    with pytest.raises(ClassNotFound):
        run_plan(toy_dataset(), AugmentationPlan({7: 10}, seed=0))


def test_leakage_guard_sources_are_training_flows():
    data = toy_dataset()
    from flowaug.ingest import split

    train, test = split(data, 0.7, 3)
    _, fitted = run_plan(train, make_plan(train, [1], 42, seed=2), FAST, return_generators=True)
    train_ids = {id(f) for f in train.flows}
    test_ids = {id(f) for f in test.flows}
    for gens in fitted.values():
        ids = {id(f) for f in gens.source_flows}
        assert ids <= train_ids and not ids & test_ids


def test_class_order_does_not_matter():
    data = toy_dataset()
    a = run_plan(data, AugmentationPlan({1: 30, 2: 30}, seed=5), FAST)
    b = run_plan(data, AugmentationPlan({2: 30}, seed=5), FAST)
    gen_a = [f for f in a.flows if f.origin is Origin.GENERATED and f.label.id == 2]
    gen_b = [f for f in b.flows if f.origin is Origin.GENERATED and f.label.id == 2]
    assert len(gen_a) == len(gen_b) == 28
    assert all(x.same_features(y) for x, y in zip(gen_a, gen_b))


def test_oversample_duplicates():
    data = toy_dataset()
    out = oversample(data, AugmentationPlan({2: 6}, seed=0))
    dups = [f for f in out.flows if f.origin is Origin.OVERSAMPLED]
    assert len(dups) == 4
    originals = data.flows_of(2)
    assert all(any(d.same_features(o) for o in originals) for d in dups)


def test_oversample_deterministic():
    data = toy_dataset()
    plan = AugmentationPlan({1: 40, 2: 9}, seed=3)
    a, b = oversample(data, plan), oversample(data, plan)
    assert [f.flow_id for f in a.flows] == [f.flow_id for f in b.flows]
    with pytest.raises(ClassNotFound):
        oversample(data, AugmentationPlan({9: 3}, seed=0))


def test_plan_targets():
    data = toy_dataset(counts=(60, 12, 2))
    assert minority_classes(data) == [2]
    assert target_count(data, "median") == 12
    assert target_count(data, "max") == 60
    assert target_count(data, "0.5") == 30
    assert target_count(data, 25) == 25
    plan = make_plan(data, "auto", "median", seed=1)
    assert plan.targets == {2: 12}
    with pytest.raises(InvalidPlan):
        make_plan(data, [0], 10, seed=0, overrides={"big": 10})
    with pytest.raises(InvalidPlan):
        target_count(data, "lots")


def test_load_plan(tmp_path):
    data = toy_dataset()
    p = tmp_path / "plan.ini"
    p.write_text("[plan]\nseed = 4\nclasses = small, tiny\ntarget = 20\n\n[targets]\ntiny = 30\n")
    plan = load_plan(p, data)
    assert plan.seed == 4 and plan.targets == {1: 20, 2: 30}
    p.write_text("[plan]\nclasses = auto\n")
    with pytest.raises(InvalidPlan):
        load_plan(p, data)
    p.write_text("[plan]\nseed = 1\nclasses = nope\n")
    with pytest.raises(ClassNotFound):
        load_plan(p, data)
    with pytest.raises(FileNotFoundError):
        load_plan(tmp_path / "missing.ini", data)
