import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from hbp.core import Pack, RuntimeConfig, Sample
from hbp.costmodel import (
    GB,
    HardwareProfile,
    TableProfile,
    ckpt_from_memory,
    find_best_sp_ckpt,
    greedy_profile_ckpt,
    iter_time,
    load_profile,
    profiling_overhead,
)
from hbp.errors import InfeasibleError, OutOfMemoryError, ParseError, ValidationError

K = 1024


def test_ckpt_from_memory_example():
    # slope 0.5 GB per layer; zero remaining memory is reached at 32 - 10 / 0.5
    assert ckpt_from_memory(2 * GB, 10 * GB, 16, 32) == 12


def test_ckpt_from_memory_rounds_up_and_clamps():
    assert ckpt_from_memory(-3.0, 1.0, 0, 4) == 3
    assert ckpt_from_memory(5.0, 9.0, 0, 4) == 0


def test_ckpt_from_memory_errors():
    with pytest.raises(ValidationError, match="does not reduce"):
        ckpt_from_memory(5.0, 5.0, 0, 8)
    with pytest.raises(InfeasibleError, match="even with 8"):
        ckpt_from_memory(-9.0, -1.0, 0, 8)
    with pytest.raises(ValidationError):
        ckpt_from_memory(1.0, 2.0, 8, 8)


def test_profiling_overhead_example():
    assert profiling_overhead([16 * K, 32 * K, 128 * K], [2, 4, 8], 5, 1.0, [4 * K, 8 * K, 16 * K]) == 60.0
    assert profiling_overhead([1], [1], 3, 2.5) == 15.0


def test_iter_time_closed_form():
    hp = HardwareProfile()
    pk = Pack((Sample(0, 1000), Sample(1, 3000)), 8 * K)
    cfg = RuntimeConfig(1, 8)
    gc = 1 + hp.gc_recompute_factor * 8 / hp.layer_count
    want = (hp.per_token_linear_cost * 4000 + hp.per_token2_attention_cost * (1000**2 + 3000**2)) * gc
    assert iter_time([pk], cfg, hp) == pytest.approx(want)


def test_sp_divides_work_and_adds_comm():
    hp = HardwareProfile()
    pk = Pack((Sample(0, 64 * K),), 128 * K)
    c8, m8 = hp.device_cost([pk], RuntimeConfig(8, 29))
    c16, m16 = hp.device_cost([pk], RuntimeConfig(16, 29))
    assert c16 == pytest.approx(c8 / 2)
    assert m8 == pytest.approx(hp.sp_comm_cost * 8 * K * 3)
    # past one node every doubling costs inter_node_comm_factor hops
    assert m16 == pytest.approx(hp.sp_comm_cost * 4 * K * (3 + hp.inter_node_comm_factor))


def test_device_cost_reports_oom():
    hp = HardwareProfile()
    pk = Pack((Sample(0, 128 * K),), 128 * K)
    with pytest.raises(OutOfMemoryError) as info:
        hp.device_cost([pk], RuntimeConfig(1, 0))
    assert info.value.required > info.value.available


def test_default_profile_prefers_sp8_for_long_and_sp1_for_short():
    hp = HardwareProfile()
    assert find_best_sp_ckpt(16 * K, [1, 2, 4, 8], hp).sp == 1
    assert find_best_sp_ckpt(32 * K, [1, 2, 4, 8, 16], hp).sp == 8
    assert find_best_sp_ckpt(128 * K, [1, 2, 4, 8, 16], hp).sp == 8


def test_find_best_lists_every_failure():
    with pytest.raises(InfeasibleError) as info:
        find_best_sp_ckpt(1024 * K, [1, 2], HardwareProfile())
    assert "sp=1" in str(info.value) and "sp=2" in str(info.value)


def test_profile_dict_rejects_unknown_keys():
    with pytest.raises(ValidationError, match="bogus"):
        HardwareProfile.from_dict({"bogus": 1})


def test_load_profile_forms(tmp_path, data_dir):
    assert isinstance(load_profile("analytic"), HardwareProfile)
    f = tmp_path / "p.json"
    f.write_text('{"sp_comm_cost": 0.0}')
    assert load_profile(f"analytic:{f}").sp_comm_cost == 0.0
    assert isinstance(load_profile(str(data_dir / "sp_sweep_profile.csv")), TableProfile)
    with pytest.raises(ValidationError):
        load_profile("mystery")


def test_table_profile_rows(data_dir):
    t = TableProfile.load(data_dir / "sp_sweep_profile.csv")
    assert t.choose_ckpt(32 * K, 8) == 8
    assert t.profile_time(32 * K, RuntimeConfig(8, 8)) == 2.82
    assert t.profile_memory(32 * K, RuntimeConfig(1, 32)) == -math.inf
    with pytest.raises(OutOfMemoryError):
        t.choose_ckpt(32 * K, 1)
    with pytest.raises(InfeasibleError, match="never profiled"):
        t.choose_ckpt(16 * K, 8)


def test_gc_sweep_picks_fastest_measured(data_dir):
    t = TableProfile.load(data_dir / "gc_sweep_profile.csv")
    assert find_best_sp_ckpt(32 * K, [2, 4, 8], t) == RuntimeConfig(8, 8)
    assert find_best_sp_ckpt(64 * K, [2, 4, 8], t) == RuntimeConfig(8, 24)
    assert find_best_sp_ckpt(128 * K, [4, 8, 16], t) == RuntimeConfig(8, 29)


def test_table_profile_parse_error(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text("length,sp,ckpt,memory_bytes,iter_seconds\n32K,two,1,1,1\n")
    with pytest.raises(ParseError) as info:
        TableProfile.load(f)
    assert info.value.line == 2


profiles = st.builds(
    HardwareProfile,
    base_memory=st.floats(5 * GB, 40 * GB),
    per_token_activation_memory=st.floats(1e5, 1e6),
    gc_memory_saving_per_layer=st.floats(1e4, 1e5),
    layer_count=st.integers(8, 80),
)


@given(profiles, st.integers(1, 64 * K), st.sampled_from([1, 2, 4, 8]))
def test_greedy_ckpt_within_one_layer_of_exact(hp, length, sp):
    exact = hp.min_ckpt(length, sp)
    if exact is None:
        with pytest.raises(InfeasibleError):
            greedy_profile_ckpt(length, sp, hp)
    else:
        assert abs(greedy_profile_ckpt(length, sp, hp) - exact) <= 1


@given(st.integers(1, 4 * K), st.integers(1, 4 * K))
def test_more_tokens_never_cheaper(a, b):
    hp = HardwareProfile()
    cfg = RuntimeConfig(1, 32)
    ta = iter_time([Pack((Sample(0, a),), 8 * K)], cfg, hp)
    tb = iter_time([Pack((Sample(0, a), Sample(1, b)), 8 * K)], cfg, hp)
    assert tb > ta
