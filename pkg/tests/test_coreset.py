import numpy as np
import pytest

from corebank.coreset import (
    MemoryBank,
    covering_radius,
    export_coreset,
    greedy_kcenter,
    random_sample,
)
from corebank.distance import min_pair as full_min_pair
from corebank.tensor_io import EmbeddingBatch

from oracles import ReferenceCoreset, random_stream


def col(*vals):
    return np.asarray(vals, dtype=np.float32).reshape(-1, 1)


def test_fill_inserts_farthest_first():
    bank = MemoryBank(3)
    stats = bank.update(col(1.0, 5.0, 2.0))
    assert stats.inserted == 3
    assert stats.evicted == 0
    # first element as is, then farthest-first: 1.0, then 5.0, then 2.0
    assert bank.elements.ravel().tolist() == [1.0, 5.0, 2.0]
    mp = bank.min_pair()
    assert mp[0] == 1.0 and (mp[1], mp[2]) == (0, 2)


def test_no_change_when_margin_not_exceeded():
    bank = MemoryBank(2)
    bank.update(col(0.0, 10.0))
    stats = bank.update(col(5.0))
    assert stats.inserted == 0 and stats.evicted == 0
    assert bank.elements.ravel().tolist() == [0.0, 10.0]


def test_replacement_evicts_min_pair_member():
    bank = MemoryBank(2)
    bank.update(col(0.0, 1.0))
    stats = bank.update(col(10.0))
    assert stats.inserted == 1 and stats.evicted == 1
    assert bank.elements.ravel().tolist() == [1.0, 10.0]


def test_duplicate_batch_is_a_no_op():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(10, 4)).astype(np.float32)
    bank = MemoryBank(32)
    bank.update(X)
    before = bank.elements.copy()
    stats = bank.update(X)
    assert stats.inserted == 0 and stats.evicted == 0
    assert (bank.elements == before).all()


def test_equality_does_not_trigger_replacement():
    bank = MemoryBank(2)
    bank.update(col(0.0, 2.0))  # min pair = 2
    stats = bank.update(col(4.0))  # d(4, bank) = 2, not strictly greater
    assert stats.inserted == 0
    assert bank.elements.ravel().tolist() == [0.0, 2.0]


def test_capacity_never_exceeded():
    rng = np.random.default_rng(5)
    bank = MemoryBank(7)
    for _ in range(10):
        bank.update(rng.normal(size=(int(rng.integers(1, 12)), 3)).astype(np.float32))
        assert len(bank) <= 7


def test_update_accepts_embedding_batch_and_tracks_provenance():
    emb = np.eye(4, dtype=np.float32) * 10
    batch = EmbeddingBatch(emb, source_id="img_0", task_id="bolts")
    bank = MemoryBank(8)
    bank.update(batch)
    assert bank.provenance == [("bolts", "img_0")] * 4
    assert bank.task_counts() == {"bolts": 4}


def test_dimension_mismatch_rejected():
    bank = MemoryBank(4)
    bank.update(np.zeros((2, 3), np.float32))
    with pytest.raises(ValueError):
        bank.update(np.zeros((2, 5), np.float32))


def test_stats_invariants_on_random_streams():
    for seed in range(25):
        batches, capacity = random_stream(seed)
        bank = MemoryBank(capacity)
        for X in batches:
            at_capacity = len(bank) == capacity
            stats = bank.update(X)
            assert stats.iterations >= stats.inserted
            assert stats.iterations <= len(X) + capacity + 1
            if at_capacity:
                assert stats.inserted == stats.evicted
            if len(bank) >= 2:
                assert stats.final_min_pair == bank.min_pair()[0]
            else:
                assert stats.final_min_pair == np.inf


def test_bank_matches_straight_line_reference():
    for seed in range(30):
        batches, capacity = random_stream(seed)
        bank = MemoryBank(capacity)
        ref = ReferenceCoreset(capacity)
        for X in batches:
            bank.update(X)
            ref.update(X)
        assert bank.elements.shape == ref.elements.shape, f"seed {seed}"
        assert (bank.elements == ref.elements).all(), f"seed {seed}"


def test_nn_cache_matches_full_rebuild():
    for seed in (1, 8, 15):
        batches, capacity = random_stream(seed)
        bank = MemoryBank(capacity)
        for X in batches:
            bank.update(X)
            if len(bank) < 2:
                continue
            rebuilt = MemoryBank.from_elements(bank.elements, capacity)
            assert np.abs(bank.nn_dist - rebuilt.nn_dist).max() <= 1e-4
            assert (bank.nn_idx == rebuilt.nn_idx).all()


def test_min_pair_cache_matches_full_scan():
    for seed in (2, 9, 23):
        batches, capacity = random_stream(seed)
        bank = MemoryBank(capacity)
        for X in batches:
            bank.update(X)
            if len(bank) >= 2:
                d, i, j = full_min_pair(bank.elements)
                got = bank.min_pair()
                assert got == (d, i, j)


def test_snapshot_round_trip_preserves_bank(tmp_path):
    batches, capacity = random_stream(4)
    bank = MemoryBank(capacity)
    for X in batches:
        bank.update(X, provenance=("t", "s"))
    snap = bank.to_snapshot()
    back = MemoryBank.from_snapshot(snap)
    assert (back.elements == bank.elements).all()
    assert back.capacity == bank.capacity
    assert back.provenance == bank.provenance
    assert back.min_pair() == bank.min_pair()


def test_empty_bank_properties():
    bank = MemoryBank(4)
    assert len(bank) == 0
    assert bank.min_pair() is None
    snap = bank.to_snapshot()
    assert snap.embeddings.shape[0] == 0


def test_capacity_one_bank_accepts_one_element_then_stops():
    bank = MemoryBank(1)
    stats = bank.update(col(3.0, 9.0, 1.0))
    assert len(bank) == 1
    assert stats.inserted == 1
    assert bank.elements.ravel().tolist() == [3.0]
    # no min pair exists, so nothing can ever be replaced
    stats = bank.update(col(100.0))
    assert stats.inserted == 0


def test_greedy_kcenter_picks_extremes():
    pool = col(0.0, 1.0, 9.0, 10.0)
    bank = greedy_kcenter(pool, 2, seed_index=0)
    assert bank.elements.ravel().tolist() == [0.0, 10.0]


def test_greedy_kcenter_k_equals_n():
    pool = np.random.default_rng(1).normal(size=(6, 2)).astype(np.float32)
    bank = greedy_kcenter(pool, 6)
    assert sorted(map(tuple, bank.elements.tolist())) == sorted(map(tuple, pool.tolist()))


def test_greedy_kcenter_k_one_is_the_seed():
    pool = col(5.0, 7.0, 2.0)
    bank = greedy_kcenter(pool, 1, seed_index=2)
    assert bank.elements.ravel().tolist() == [2.0]


def test_greedy_kcenter_rejects_k_over_pool():
    with pytest.raises(ValueError):
        greedy_kcenter(col(1.0, 2.0), 3)


def test_random_sample_deterministic_and_complete():
    pool = np.random.default_rng(3).normal(size=(40, 2)).astype(np.float32)
    a = random_sample(pool, 10, rng_seed=7)
    b = random_sample(pool, 10, rng_seed=7)
    assert (a.elements == b.elements).all()
    c = random_sample(pool, 40, rng_seed=0)
    assert sorted(map(tuple, c.elements.tolist())) == sorted(map(tuple, pool.tolist()))


def test_random_sample_matches_documented_generator():
    pool = np.arange(100, dtype=np.float32).reshape(-1, 1)
    bank = random_sample(pool, 5, rng_seed=7)
    want = np.random.default_rng(7).choice(100, size=5, replace=False)
    assert bank.elements.ravel().tolist() == [float(i) for i in want]


def test_covering_radius():
    pool = col(0.0, 3.0)
    assert covering_radius(col(0.0), pool) == 3.0
    assert covering_radius(pool, pool) == 0.0


def test_export_coreset_histogram():
    bank = MemoryBank.from_elements(
        np.eye(3, dtype=np.float32),
        provenance=[("a", "x"), ("a", "y"), ("b", "z")],
    )
    snap, counts = export_coreset(bank)
    assert counts == {"a": 2, "b": 1}
    assert snap.embeddings.shape == (3, 3)
    empty_snap, empty_counts = export_coreset(MemoryBank(4))
    assert empty_counts == {}
    assert empty_snap.embeddings.shape[0] == 0


def test_sampler_provenance_carries_over():
    pool = np.arange(8, dtype=np.float32).reshape(-1, 1)
    prov = [("t", f"i{i}") for i in range(8)]
    bank = greedy_kcenter(pool, 3, provenance=prov)
    assert len(bank.provenance) == 3
    assert bank.provenance[0] == ("t", "i0")
