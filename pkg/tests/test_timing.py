import math

import pytest
from hypothesis import given, settings, strategies as st

from mdksim.config import HardwareConfig
from mdksim.timing import (LN_RES, MHA, MP, TileSpec, aux_cost, ln_res_cost, mha_cost,
                           mha_stage_cycles, mp_block_times, mp_tile_cost, split_rows, sync_cost)

HW = HardwareConfig()


def test_mp_1024x1024_is_memory_bound():
    c = mp_tile_cost(TileSpec(1024, 1024), HW)
    assert c.kernel_kind == MP
    assert c.compute_cycles == 2048
    assert c.compute_cycles / HW.freq_hz == pytest.approx(7.186e-6, rel=1e-3)
    assert c.memory_time == pytest.approx(1024 * 1024 / (16 * 8.49e9))
    assert c.memory_time == pytest.approx(7.72e-6, rel=1e-3)
    assert c.total_time == pytest.approx(c.memory_time + (HW.mp_fill_cycles + 1) / HW.freq_hz)


def test_mp_single_burst():
    c = mp_tile_cost(TileSpec(1, HW.n_channel * HW.n_group), HW)
    assert c.compute_cycles == 1
    assert c.pipeline_fill_cycles == 16


def test_mp_empty_tile_rejected():
    with pytest.raises(ValueError):
        TileSpec(0, 10)


def test_mp_halving_channels_doubles_costs():
    a = mp_tile_cost(TileSpec(1024, 1024), HW)
    b = mp_tile_cost(TileSpec(1024, 1024), HardwareConfig(n_channel=8))
    assert b.compute_cycles == 2 * a.compute_cycles
    assert b.memory_time == pytest.approx(2 * a.memory_time)


def test_mp_block_summation_oracle():
    # independent recomputation: fill once, each block max(compute, memory), last drain cycle
    tiles = split_rows(1024, 1024, HW)
    assert [t.rows for t in tiles] == [512, 512]
    f = HW.freq_hz
    per = max(math.ceil(512 * 1024 / 512) / f, 512 * 1024 / (16 * 8.49e9))
    want = 2 * per + 17 / f
    assert sum(mp_block_times(tiles, HW)) == pytest.approx(want, rel=1e-12)


def test_split_rows_ragged():
    assert [t.rows for t in split_rows(1100, 8, HW)] == [512, 512, 76]


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 4096), st.integers(1, 4096), st.sampled_from([1, 2, 4, 8, 16, 32]),
       st.sampled_from([8, 16, 32, 64]))
def test_mp_roofline_bounds(rows, cols, nc, ng):
    hw = HardwareConfig(n_channel=nc, n_group=ng, datapack_bytes=ng)
    c = mp_tile_cost(TileSpec(rows, cols), hw)
    assert c.total_time >= rows * cols / (nc * hw.hbm_bw_per_channel)
    assert c.total_time >= rows * cols / (nc * ng) / hw.freq_hz
    assert c.total_time >= max(c.compute_cycles / hw.freq_hz, c.memory_time)
    assert min(c.compute_cycles, c.memory_time, c.pipeline_fill_cycles, c.total_time) >= 0


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 2048), st.integers(1, 2048), st.sampled_from([1, 2, 4, 8, 16]))
def test_mp_monotone(rows, cols, nc):
    small = mp_tile_cost(TileSpec(rows, cols), HardwareConfig(n_channel=nc))
    assert mp_tile_cost(TileSpec(rows, cols), HardwareConfig(n_channel=2 * nc)).total_time <= small.total_time
    assert mp_tile_cost(TileSpec(rows + 1, cols), HardwareConfig(n_channel=nc)).total_time >= small.total_time
    assert mp_tile_cost(TileSpec(rows, cols + 1), HardwareConfig(n_channel=nc)).total_time >= small.total_time


def test_mha_one_head_is_stage_sum():
    stages = mha_stage_cycles(100, HW, 64)
    c = mha_cost(100, 1, HW, 64)
    assert c.kernel_kind == MHA
    assert c.compute_cycles == sum(stages)
    assert mha_cost(100, 1, HW, 64, pipelined=False).compute_cycles == sum(stages)


def test_mha_pipeline_against_unpipelined_oracle():
    hw = HardwareConfig(mha_parallelism=512, softmax_parallelism=32, mha_kv_channels=32)
    stages = mha_stage_cycles(64, hw, 32)
    assert stages == (4, 2, 4, 4)
    piped = mha_cost(64, 8, hw, 32).compute_cycles
    serial = mha_cost(64, 8, hw, 32, pipelined=False).compute_cycles
    assert serial == 8 * 14
    assert piped == 14 + 7 * 4
    # with many heads the win tends to sum(stages) / max(stage)
    many = mha_cost(64, 1000, hw, 32, pipelined=False).compute_cycles / mha_cost(64, 1000, hw, 32).compute_cycles
    assert many == pytest.approx(14 / 4, rel=1e-2)


def test_mha_t1_dominated_by_fill():
    c = mha_cost(1, 1, HW, 64)
    assert c.pipeline_fill_cycles > c.compute_cycles


def test_mha_rejects_t0():
    with pytest.raises(ValueError):
        mha_cost(0, 1, HW, 64)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 2048), st.integers(1, 16), st.sampled_from([8, 16, 64]))
def test_mha_pipeline_bounds(t, p, hd):
    stages = mha_stage_cycles(t, HW, hd)
    c = mha_cost(t, p, HW, hd).compute_cycles
    assert max(stages) * p <= c <= sum(stages) * p


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 2048), st.integers(1, 16))
def test_mha_monotone(t, p):
    base = mha_cost(t, p, HW, 64).total_time
    assert mha_cost(t + 1, p, HW, 64).total_time >= base
    assert mha_cost(t, p, HardwareConfig(n_group=64, datapack_bytes=64), 64).total_time <= base
    assert mha_cost(t, p, HardwareConfig(softmax_parallelism=32), 64).total_time <= base


def test_ln_res_formula_1024_at_32():
    fused = ln_res_cost(1024, HW, fused=True, parallelism=32)
    unfused = ln_res_cost(1024, HW, fused=False, parallelism=32)
    assert fused.kernel_kind == LN_RES
    assert fused.compute_cycles == 64 and unfused.compute_cycles == 96


def test_ln_res_width_equal_parallelism():
    assert ln_res_cost(32, HW, parallelism=32).compute_cycles == 2
    assert ln_res_cost(32, HW, fused=False, parallelism=32).compute_cycles == 3


@pytest.mark.parametrize("d", [1, 17, 64, 1024, 4096])
def test_fused_never_slower(d):
    for p in (1, 2, 32):
        assert ln_res_cost(d, HW, True, p).total_time <= ln_res_cost(d, HW, False, p).total_time
    assert ln_res_cost(d, HW, True).total_time <= ln_res_cost(d, HW, False).total_time


def test_aux_cost():
    c = aux_cost("gelu", 4096, HardwareConfig(aux_parallelism=4))
    assert c.compute_cycles == 1024


def test_sync_zero_bytes_is_hop():
    assert sync_cost(0, HW) == HW.net_hop_latency


def test_sync_256_bytes():
    hw = HardwareConfig(net_hop_latency=0.0)
    assert sync_cost(256, hw) == pytest.approx(30.15e-9, rel=1e-3)


def test_sync_linear_in_bytes():
    hw = HardwareConfig(net_hop_latency=0.0)
    assert sync_cost(2048, hw) == pytest.approx(2 * sync_cost(1024, hw))


def test_sync_negative_rejected():
    with pytest.raises(ValueError):
        sync_cost(-1, HW)
