import math
from collections import Counter

import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from hbp.core import DeviceBatch, HierarchicalGroups, Iteration, Pack, Plan, Sample
from hbp.errors import ValidationError
from hbp.schedule import (
    CurriculumSpec,
    LossBatch,
    assign_runtime,
    curriculum_order,
    normalize_loss,
    split_ranks,
)

GROUPS = HierarchicalGroups.from_triples([(16, 1, 4), (128, 8, 20)])


def _plan(pattern, seed=0):
    its, nid = [], 0
    for g in pattern:
        its.append(Iteration(g, (DeviceBatch(0, (Pack((Sample(nid, 5),), 16 if g == 0 else 128),), GROUPS[g].config.sp),)))
        nid += 1
    return Plan(GROUPS, tuple(its), device_count=8, seed=seed)


def _key(it):
    return it.device_batches[0].packs[0].samples[0].id


def test_ave_token_example():
    ranks = [LossBatch((2, 4), (1, 2)), LossBatch((3, 1), (3, 4))]
    per, final = normalize_loss(ranks, "ave_token")
    assert per == pytest.approx([1.2, 0.8])
    assert final == pytest.approx(1.0)


def test_token_mean_example_is_biased():
    ranks = [LossBatch((2, 4), (1, 2)), LossBatch((3, 1), (3, 4))]
    per, final = normalize_loss(ranks, "token_mean")
    assert per == pytest.approx([2.0, 4 / 7])
    assert final == pytest.approx(9 / 7)
    assert final != pytest.approx(1.0)


@pytest.mark.parametrize("mode,expect", [("sum", 6.0), ("sample_mean", 1.5), ("token_mean", 1.5), ("ave_token", 1.5)])
def test_identical_samples(mode, expect):
    ranks = [LossBatch((3.0, 3.0), (2, 2)), LossBatch((3.0, 3.0), (2, 2))]
    assert normalize_loss(ranks, mode)[1] == pytest.approx(expect)


def test_loss_validation():
    with pytest.raises(ValidationError):
        LossBatch((1.0,), (0,))
    with pytest.raises(ValidationError):
        normalize_loss([LossBatch((1.0,), (1,))], "median")  # type: ignore[arg-type]
    with pytest.raises(ValidationError, match="same local batch"):
        normalize_loss([LossBatch((1.0,), (1,)), LossBatch((1.0, 2.0), (1, 1))], "ave_token")


loss_cases = st.integers(1, 8).flatmap(
    lambda b_l: st.integers(1, 8).flatmap(
        lambda ranks: st.tuples(
            st.just(b_l),
            st.lists(st.floats(0, 1e4, allow_nan=False), min_size=b_l * ranks, max_size=b_l * ranks),
            st.lists(st.integers(1, 10_000), min_size=b_l * ranks, max_size=b_l * ranks),
        )
    )
)


@given(loss_cases)
def test_ave_token_equals_global_token_mean(case):
    b_l, losses, tokens = case
    _, final = normalize_loss(split_ranks(losses, tokens, b_l), "ave_token")
    want = math.fsum(losses) / sum(tokens)
    assert final == pytest.approx(want, rel=1e-12, abs=1e-300)


two_ranks = st.tuples(
    st.lists(st.floats(0.01, 1e3), min_size=3, max_size=3),
    st.lists(st.integers(1, 500), min_size=3, max_size=3),
    st.lists(st.floats(0.01, 1e3), min_size=3, max_size=3),
    st.lists(st.integers(1, 500), min_size=3, max_size=3),
)


@given(two_ranks)
def test_rank_means_biased_when_rank_tokens_differ(case):
    l1, t1, l2, t2 = case
    ranks = [LossBatch(tuple(l1), tuple(t1)), LossBatch(tuple(l2), tuple(t2))]
    pooled = math.fsum(l1 + l2) / (sum(t1) + sum(t2))
    m1, m2 = math.fsum(l1) / sum(t1), math.fsum(l2) / sum(t2)
    w1 = sum(t1) / (sum(t1) + sum(t2))
    # mean of rank means minus pooled mean is (m1 - m2) * (1/2 - w1)
    assume(abs(m1 - m2) > 1e-6 * pooled and abs(w1 - 0.5) > 1e-6)
    _, got = normalize_loss(ranks, "token_mean")
    assert got != pytest.approx(pooled, rel=1e-9)
    assert got - pooled == pytest.approx((m1 - m2) * (0.5 - w1), rel=1e-6, abs=1e-12)


def test_curriculum_warmup_short_only():
    plan = _plan([0] * 600 + [1] * 200)
    out = curriculum_order(plan, CurriculumSpec(warmup_iterations=500))
    assert all(it.group_index == 0 for it in out.iterations[:500])
    assert out.warmup_iterations == 500
    assert sorted(map(_key, out.iterations)) == sorted(map(_key, plan.iterations))


def test_curriculum_preset_100():
    out = curriculum_order(_plan([0, 1] * 150), CurriculumSpec(warmup_iterations=100))
    assert {it.group_index for it in out.iterations[:100]} == {0}


def test_curriculum_zero_warmup_is_a_reshuffle():
    plan = _plan([0, 1, 0, 1, 0] * 4)
    out = curriculum_order(plan, CurriculumSpec(warmup_iterations=0))
    assert Counter(map(_key, out.iterations)) == Counter(map(_key, plan.iterations))
    assert out.warmup_iterations == 0


def test_curriculum_needs_enough_short_steps():
    with pytest.raises(ValidationError, match="needs 5 .* has 2"):
        curriculum_order(_plan([0, 0, 1]), CurriculumSpec(warmup_iterations=5))


def test_round_robin_alternates():
    out = curriculum_order(_plan([0] * 4 + [1] * 4), CurriculumSpec(warmup_iterations=0, pattern="round_robin"))
    assert [it.group_index for it in out.iterations] == [0, 1] * 4


@given(st.lists(st.integers(0, 1), min_size=1, max_size=60), st.integers(0, 10), st.integers(0, 99))
def test_curriculum_is_a_permutation(pattern, warm, seed):
    plan = _plan(pattern, seed)
    assume(warm <= pattern.count(0))
    out = curriculum_order(plan, CurriculumSpec(warmup_iterations=warm))
    assert sorted(map(_key, out.iterations)) == sorted(map(_key, plan.iterations))
    assert all(it.group_index == 0 for it in out.iterations[:warm])


def test_assign_runtime_switches():
    rs = assign_runtime(_plan([0, 0, 1, 0, 1, 1]))
    assert [e.config.sp for e in rs.entries] == [1, 1, 8, 1, 8, 8]
    assert rs.switch_count == 3
    assert assign_runtime(_plan([1] * 5)).switch_count == 0


def test_warmup_has_no_switches_and_csv_phases():
    out = curriculum_order(_plan([0] * 30 + [1] * 30), CurriculumSpec(warmup_iterations=20))
    rs = assign_runtime(out)
    configs = [e.config for e in rs.entries[:20]]
    assert len(set(configs)) == 1
    lines = rs.to_csv().splitlines()
    assert lines[0] == "iteration,group,length,sp,ckpt,phase"
    assert lines[1].endswith(",warmup") and lines[-1].endswith(",hybrid")
