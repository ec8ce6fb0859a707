from collections import Counter

import pytest
from hypothesis import given
from hypothesis import strategies as st

from hbp.core import SampleSet
from hbp.errors import ValidationError
from hbp.packing import (
    _best_fit,
    STRATEGIES,
    PackingStrategy,
    pack,
    parse_packlist_text,
    random_batching,
    sorted_batching,
)

corpora = st.lists(st.integers(1, 100), min_size=1, max_size=120).map(SampleSet.from_lengths)


def _ids(packs):
    return Counter(s.id for p in packs for s in p.samples)


def test_ffd_known_instance():
    s = SampleSet.from_lengths([7, 5, 4, 3, 1])
    out = pack(s, 10, "ffd")
    assert [[x.length for x in p.samples] for p in out.packs] == [[7, 3], [5, 4, 1]]


def test_best_fit_takes_tightest_pack():
    order = list(SampleSet.from_lengths([6, 5, 4]))
    assert [[x.length for x in b] for b in _best_fit(order, 10)] == [[6, 4], [5]]


def test_spfhp_takes_roomiest_pack():
    out = pack(SampleSet.from_lengths([6, 5, 4]), 10, "spfhp")
    assert [[x.length for x in p.samples] for p in out.packs] == [[6], [5, 4]]


def test_spfhp_max_per_pack():
    s = SampleSet.from_lengths([1] * 10)
    out = pack(s, 10, PackingStrategy("spfhp", {"max_per_pack": 3}))
    assert max(len(p.samples) for p in out.packs) == 3


def test_over_capacity_sample_named():
    with pytest.raises(ValidationError, match="sample 1"):
        pack(SampleSet.from_lengths([3, 30]), 10, "ffd")


def test_strategy_validation():
    with pytest.raises(ValidationError):
        PackingStrategy("greedy")  # type: ignore[arg-type]
    with pytest.raises(ValidationError):
        PackingStrategy("isf", {"iterations": 0})


def test_isf_single_round_never_beats_more_rounds():
    s = SampleSet.from_lengths([(i * 37) % 90 + 5 for i in range(300)])
    one = pack(s, 128, PackingStrategy("isf", {"iterations": 1}), seed=2)
    many = pack(s, 128, PackingStrategy("isf", {"iterations": 10}), seed=2)
    assert len(many) <= len(one)


def test_packlist_text_round_trip():
    out = pack(SampleSet.from_lengths([4, 5, 6]), 10, "ffd")
    assert parse_packlist_text(out.to_text()) == [(p.total, [x.id for x in p.samples]) for p in out.packs]


def test_sorted_batching_budget_and_padding():
    s = SampleSet.from_lengths([10, 9, 3, 2, 2])
    batches = sorted_batching(s, 20)
    assert [[x.length for x in b.samples] for b in batches] == [[10, 9], [3, 2, 2]]
    assert all(b.capacity <= 20 for b in batches)
    assert batches[1].compute_tokens == 9


def test_random_batching_modes():
    s = SampleSet.from_lengths(list(range(1, 21)))
    assert [len(b.samples) for b in random_batching(s, batch_size=8)] == [8, 8, 4]
    for b in random_batching(s, token_budget=40, seed=3):
        assert b.capacity <= 40
    with pytest.raises(ValidationError):
        random_batching(s)


@pytest.mark.parametrize("kind", STRATEGIES)
@given(corpus=corpora, seed=st.integers(0, 1000))
def test_strategies_conserve_and_respect_capacity(kind, corpus, seed):
    out = pack(corpus, 100, kind, seed)
    assert _ids(out.packs) == Counter(s.id for s in corpus)
    assert all(p.total <= 100 for p in out.packs)
    assert all(p.samples for p in out.packs)


@pytest.mark.parametrize("kind", STRATEGIES)
@given(corpus=corpora, seed=st.integers(0, 1000))
def test_strategies_deterministic_per_seed(kind, corpus, seed):
    assert pack(corpus, 100, kind, seed) == pack(corpus, 100, kind, seed)


@given(corpus=corpora)
def test_first_fit_family_leaves_at_most_one_half_empty_pack(corpus):
    # two half-empty packs would have been merged by first fit
    for kind in ("ffd", "ffs"):
        out = pack(corpus, 100, kind)
        assert sum(1 for p in out.packs if p.total <= 50) <= 1


@given(st.lists(st.integers(1, 64), min_size=1, max_size=80), st.integers(64, 200))
def test_sorted_batching_conserves(lengths, budget):
    s = SampleSet.from_lengths(lengths)
    batches = sorted_batching(s, budget)
    assert _ids(batches) == Counter(x.id for x in s)
    assert all(b.capacity <= budget for b in batches)
