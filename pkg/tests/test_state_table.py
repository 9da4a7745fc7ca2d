import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtlsperf.state_table import MAX_LOAD, StateTable


def _check_invariants(t):
    assert t.capacity >= 8 and t.capacity & (t.capacity - 1) == 0
    assert t.occupied + t.tombstones <= t.capacity * MAX_LOAD
    assert t.capacity == 8 * 2 ** t.resize_count


def test_four_inserts_no_resize():
    t = StateTable()
    for k in range(4):
        assert t.insert(k, k)
    assert (t.capacity, t.occupied, t.resize_count) == (8, 4, 0)


def test_fifth_insert_resizes():
    t = StateTable()
    for k in range(5):
        t.insert(k, k)
    assert (t.capacity, t.resize_count) == (16, 1)


def test_thousand_inserts_schedule():
    t = StateTable()
    caps = [t.capacity]
    for k in random.Random(1).sample(range(1 << 62), 1000):
        t.insert(k, None)
        if t.capacity != caps[-1]:
            caps.append(t.capacity)
    assert caps == [8 * 2 ** i for i in range(9)]
    assert t.capacity == 2048 and t.resize_count == 8


def test_lookup_and_remove_basics():
    t = StateTable()
    assert t.lookup(42) is None
    assert not t.remove(42)
    t.insert(42, "s")
    assert t.lookup(42) == "s"
    assert not t.insert(42, "other")
    assert t.lookup(42) == "s"
    assert t.remove(42)
    assert t.lookup(42) is None
    t.insert(42, "s2")
    assert t.lookup(42) == "s2"


def _run_against_oracle(ops):
    t = StateTable()
    oracle = []  # association list of (key, value)
    for op, key, val in ops:
        idx = next((i for i, (k, _) in enumerate(oracle) if k == key), None)
        if op == "insert":
            assert t.insert(key, val) == (idx is None)
            if idx is None:
                oracle.append((key, val))
        elif op == "remove":
            assert t.remove(key) == (idx is not None)
            if idx is not None:
                oracle.pop(idx)
        else:
            assert t.lookup(key) == (None if idx is None else oracle[idx][1])
        assert len(t) == len(oracle)
        _check_invariants(t)
    assert sorted(t.keys()) == sorted(k for k, _ in oracle)


def test_oracle_equivalence_10k():
    rnd = random.Random(2024)
    ops = [(rnd.choice(("insert", "lookup", "remove")), rnd.randrange(300), rnd.random())
           for _ in range(10_000)]
    _run_against_oracle(ops)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["insert", "lookup", "remove"]),
                          st.integers(0, 64), st.integers()), max_size=300))
def test_oracle_equivalence_property(ops):
    _run_against_oracle(ops)


def test_colliding_low_bits():
    # keys sharing their low bits all land in the same home slot
    t = StateTable()
    keys = [i << 40 for i in range(200)]
    for k in keys:
        t.insert(k, k)
    assert all(t.lookup(k) == k for k in keys)


def test_mean_probes_at_half_load():
    rnd = random.Random(9)
    keys = [rnd.getrandbits(64) for _ in range(100_000)]
    t = StateTable()
    for k in keys:
        t.insert(k, None)
    t.probe_count = t.lookup_count = 0
    for k in keys:
        t.lookup(k)
    assert t.probe_count / t.lookup_count <= 2.0


def test_bad_capacity():
    with pytest.raises(ValueError):
        StateTable(12)
    with pytest.raises(ValueError):
        StateTable(4)
