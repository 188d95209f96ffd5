"""Instruction parsing, task sampling, and FIFO queue semantics."""

import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from triarm.geometry import SLOTS
from triarm.instruction import (Difficulty, Instruction, InstructionQueue,
                                ParseError, QueueFullError, Source, TaskSpec,
                                Waypoint, difficulty_of, parse_instruction,
                                sample_task)


# -- types -------------------------------------------------------------------

def test_waypoint_from_slot_resolves_table():
    w = Waypoint.from_slot(2, "c")
    assert w.slot == "C"
    np.testing.assert_array_equal(w.target, SLOTS[1, 2])


def test_waypoint_validation():
    with pytest.raises(ValueError):
        Waypoint(arm=4, target=np.array([0.5, 0.5, 0.5]))
    with pytest.raises(ValueError):
        Waypoint(arm=1, target=np.array([1.5, 0.5, 0.5]))
    with pytest.raises(ValueError):
        Waypoint(arm=1, target=np.array([0.5, 0.5]))


def test_instruction_bounds():
    wp = Waypoint.from_slot(1, "A")
    with pytest.raises(ValueError):
        Instruction([])
    with pytest.raises(ValueError):
        Instruction([wp] * 11)
    ins = Instruction([wp] * 10)
    assert len(ins) == 10


def test_instruction_ids_unique():
    wp = Waypoint.from_slot(1, "A")
    ids = {Instruction([wp]).id for _ in range(100)}
    assert len(ids) == 100


def test_difficulty_brackets():
    assert difficulty_of(1) == Difficulty.EASY
    assert difficulty_of(3) == Difficulty.EASY
    assert difficulty_of(4) == Difficulty.MEDIUM
    assert difficulty_of(6) == Difficulty.MEDIUM
    assert difficulty_of(7) == Difficulty.HARD
    assert difficulty_of(10) == Difficulty.HARD
    with pytest.raises(ValueError):
        difficulty_of(0)
    with pytest.raises(ValueError):
        difficulty_of(11)


# -- parser ------------------------------------------------------------------

def test_parse_basic():
    ins = parse_instruction("seq: 2@A, 3@B, 1@C")
    assert [w.arm for w in ins.waypoints] == [2, 3, 1]
    assert [w.slot for w in ins.waypoints] == ["A", "B", "C"]
    assert ins.source == Source.MACHINE


def test_parse_whitespace_and_case_tolerant():
    ins = parse_instruction("SEQ:1@a,2@b")
    assert [w.slot for w in ins.waypoints] == ["A", "B"]


def test_parse_roundtrip_text():
    ins = parse_instruction("seq: 2@A, 3@B")
    assert parse_instruction(ins.text()).text() == ins.text()


@pytest.mark.parametrize("bad,fragment", [
    ("", "empty"),
    ("run: 1@A", "seq"),
    ("seq: 1A", "missing '@'"),
    ("seq: x@A", "not an integer"),
    ("seq: 1@Z", "unknown slot"),
    ("seq: 5@A", "out of range"),
    ("seq: 1@A,,2@B", "empty waypoint"),
])
def test_parse_errors_explain(bad, fragment):
    with pytest.raises(ParseError) as exc:
        parse_instruction(bad)
    assert fragment in str(exc.value)


def test_parse_error_positions_point_at_token():
    with pytest.raises(ParseError) as exc:
        parse_instruction("seq: 1@A, 9@B")
    assert exc.value.pos == 9  # column of the second entry


# -- sampler -----------------------------------------------------------------

def test_sample_difficulty_brackets_always_respected():
    rng = np.random.default_rng(0)
    for diff, (lo, hi) in [(Difficulty.EASY, (1, 3)),
                           (Difficulty.MEDIUM, (4, 6)),
                           (Difficulty.HARD, (7, 10))]:
        for _ in range(2000):
            t = sample_task(rng, diff)
            assert lo <= len(t.instruction) <= hi
            assert t.difficulty == diff


def test_sample_unspecified_difficulty_spans_1_to_10():
    rng = np.random.default_rng(1)
    seen = {len(sample_task(rng).instruction) for _ in range(2000)}
    assert seen == set(range(1, 11))


def test_sample_seed_reproducible():
    a = sample_task(np.random.default_rng(7), Difficulty.MEDIUM)
    b = sample_task(np.random.default_rng(7), Difficulty.MEDIUM)
    assert a.instruction.text() == b.instruction.text()


def test_sample_arm_frequency_uniform():
    # chi-square-style 3-sigma window around the binomial expectation
    rng = np.random.default_rng(2)
    counts = {1: 0, 2: 0, 3: 0}
    total = 0
    for _ in range(20000):
        for w in sample_task(rng, Difficulty.EASY).instruction.waypoints:
            counts[w.arm] += 1
            total += 1
    p = 1.0 / 3.0
    sigma = (total * p * (1 - p)) ** 0.5
    for arm in counts:
        assert abs(counts[arm] - total * p) < 3 * sigma


def test_sample_forbid_consecutive():
    rng = np.random.default_rng(3)
    for _ in range(300):
        t = sample_task(rng, Difficulty.HARD, forbid_consecutive=True)
        arms = [w.arm for w in t.instruction.waypoints]
        assert all(a != b for a, b in zip(arms, arms[1:]))


def test_taskspec_of_derives_difficulty():
    ins = parse_instruction("seq: 1@A, 2@B, 3@C, 1@D")
    assert TaskSpec.of(ins).difficulty == Difficulty.MEDIUM


# -- queue: sequential semantics ---------------------------------------------

def ins(n=1):
    return parse_instruction("seq: " + ", ".join(["1@A"] * n))


def test_enqueue_and_active():
    q = InstructionQueue()
    assert q.active() is None
    a, b = ins(), ins()
    q.enqueue(a)
    q.enqueue(b)
    assert q.active() is a
    assert len(q) == 2


def test_enqueue_rejects_non_instruction():
    q = InstructionQueue()
    with pytest.raises(TypeError):
        q.enqueue("seq: 1@A")


def test_soft_limit_back_pressure():
    q = InstructionQueue(soft_limit=2)
    q.enqueue(ins())
    q.enqueue(ins())
    with pytest.raises(QueueFullError):
        q.enqueue(ins())
    assert len(q) == 2


def test_dequeue_gated_on_satisfaction():
    q = InstructionQueue()
    a = ins(2)
    q.enqueue(a)
    assert q.dequeue_if_satisfied() is None  # cursor 0 of 2
    q.advance()
    assert not q.satisfied()
    assert q.dequeue_if_satisfied() is None
    q.advance()
    assert q.satisfied()
    assert q.dequeue_if_satisfied() is a
    assert q.active() is None and q.cursor() == 0


def test_cursor_never_exceeds_m():
    q = InstructionQueue()
    q.enqueue(ins(2))
    q.advance(10)
    assert q.cursor() == 2


def test_operations_total_on_empty_queue():
    q = InstructionQueue()
    assert q.active() is None
    assert q.dequeue_if_satisfied() is None
    assert q.force_dequeue() is None
    assert not q.satisfied()
    q.advance()
    assert q.cursor() == 0 and len(q) == 0


def test_force_dequeue_resets_cursor():
    q = InstructionQueue()
    a, b = ins(3), ins(1)
    q.enqueue(a)
    q.enqueue(b)
    q.advance()
    assert q.force_dequeue() is a
    assert q.active() is b and q.cursor() == 0


def test_enqueue_stamps_created_at_with_tick():
    q = InstructionQueue()
    q.set_tick(42)
    a = ins()
    q.enqueue(a)
    assert a.created_at == 42


# -- queue: list-oracle property over random operation sequences -------------

@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from(["enq", "adv", "deq"]), min_size=1,
                max_size=200),
       st.randoms(use_true_random=False))
def test_queue_matches_list_oracle(ops, pyrng):
    q = InstructionQueue(soft_limit=10 ** 9)
    oracle: list[tuple[int, int]] = []   # (id, M)
    oracle_cursor = 0
    dequeued_q, dequeued_o = [], []
    for op in ops:
        if op == "enq":
            n = pyrng.randint(1, 3)
            i = ins(n)
            q.enqueue(i)
            oracle.append((i.id, n))
        elif op == "adv":
            q.advance()
            if oracle:
                oracle_cursor = min(oracle_cursor + 1, oracle[0][1])
        else:
            got = q.dequeue_if_satisfied()
            if oracle and oracle_cursor == oracle[0][1]:
                dequeued_o.append(oracle.pop(0)[0])
                oracle_cursor = 0
                assert got is not None and got.id == dequeued_o[-1]
            else:
                assert got is None
            if got is not None:
                dequeued_q.append(got.id)
    assert dequeued_q == dequeued_o
    snap, cur = q.snapshot()
    assert [i.id for i in snap] == [i for i, _ in oracle]
    assert cur == oracle_cursor


def test_queue_random_ops_bulk():
    # high-volume mirror of the hypothesis property with one fixed seed
    rng = np.random.default_rng(99)
    q = InstructionQueue(soft_limit=10 ** 9)
    oracle = []
    cursor = 0
    for _ in range(10 ** 4):
        op = rng.integers(3)
        if op == 0:
            i = ins(int(rng.integers(1, 4)))
            q.enqueue(i)
            oracle.append(i)
        elif op == 1:
            q.advance()
            if oracle:
                cursor = min(cursor + 1, len(oracle[0]))
        else:
            got = q.dequeue_if_satisfied()
            if oracle and cursor == len(oracle[0]):
                assert got is oracle.pop(0)
                cursor = 0
            else:
                assert got is None
    snap, cur = q.snapshot()
    assert snap == oracle and cur == cursor


# -- queue: producer/consumer stress -----------------------------------------

def test_producer_consumer_stress_no_loss_no_dup_no_reorder():
    q = InstructionQueue(soft_limit=10 ** 9)
    n = 1000
    produced = []

    def producer():
        for _ in range(n):
            i = ins(1)
            produced.append(i.id)
            q.enqueue(i)

    consumed = []

    def consumer():
        while len(consumed) < n:
            if q.active() is not None:
                q.advance()  # single-waypoint: one advance satisfies
                got = q.dequeue_if_satisfied()
                if got is not None:
                    consumed.append(got.id)

    t1 = threading.Thread(target=producer)
    t2 = threading.Thread(target=consumer)
    t1.start(); t2.start()
    t1.join(timeout=30); t2.join(timeout=30)
    assert not t1.is_alive() and not t2.is_alive()
    assert consumed == produced
    assert len(q) == 0
