"""Analytic cycle-cost models of the macro dataflow kernels.

Costs are pure functions of the hardware config. Cycle counts are integers;
times are seconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

from .config import HardwareConfig

MP, MHA, LN_RES, AUX = "MP", "MHA", "LN_RES", "AUX"
KERNEL_KINDS = (MP, MHA, LN_RES, AUX)


@dataclass(frozen=True)
class KernelCost:
    kernel_kind: str
    compute_cycles: int
    memory_time: float
    pipeline_fill_cycles: int
    total_time: float
    drain_cycles: int = 0


@dataclass(frozen=True)
class TileSpec:
    rows: int
    cols: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"empty tile {self.rows}x{self.cols}")

    @property
    def nbytes(self) -> int:
        return self.rows * self.cols


def _cdiv(a: int, b: int) -> int:
    return -(-a // b)


def mp_tile_cost(tile: TileSpec, hw: HardwareConfig) -> KernelCost:
    """One activation of the fused MP kernel on a single weight tile.

    All ``n_channel * n_group`` MACs consume one int8 weight per cycle while
    each slice streams its weights from a dedicated HBM channel. The
    quantization unit drains ``ceil(rows / n_group)`` bursts behind the MACs;
    only the last burst is exposed.
    """
    macs = hw.n_channel * hw.n_group
    compute = _cdiv(tile.rows * tile.cols, macs)
    memory = tile.nbytes / (hw.n_channel * hw.hbm_bw_per_channel)
    drain = _cdiv(tile.rows, hw.n_group)
    exposed = hw.mp_fill_cycles + 1
    total = max(compute / hw.freq_hz, memory) + exposed / hw.freq_hz
    return KernelCost(MP, compute, memory, hw.mp_fill_cycles, total, drain)


def mp_block_times(tiles, hw: HardwareConfig) -> list[float]:
    """Per-block busy time when consecutive tiles stream through one activation.

    The pipeline fills once before the first block and the last quantization
    burst is exposed after the final block; everything between overlaps.
    """
    times = []
    for tile in tiles:
        c = mp_tile_cost(tile, hw)
        times.append(max(c.compute_cycles / hw.freq_hz, c.memory_time))
    if times:
        times[0] += hw.mp_fill_cycles / hw.freq_hz
        times[-1] += 1 / hw.freq_hz
    return times


def split_rows(rows: int, cols: int, hw: HardwareConfig) -> list[TileSpec]:
    """Cut ``rows`` output rows into blocks of one MAC-array pass each."""
    step = hw.mp_block_rows
    return [TileSpec(min(step, rows - r), cols) for r in range(0, rows, step)]


def mha_stage_cycles(t: int, hw: HardwareConfig, head_dim: int) -> tuple[int, int, int, int]:
    """Per-head cycles of (score MAC, mask, softmax, value MAC).

    MAC stages are bounded by both the MAC count and the K (or V) channel
    bandwidth; softmax is two passes (exponent sum, then normalize).
    """
    elems = t * head_dim
    bytes_per_cycle = hw.mha_kv_channels * hw.hbm_bw_per_channel / hw.freq_hz
    mac = max(_cdiv(elems, hw.mha_macs), math.ceil(elems / bytes_per_cycle))
    mask = _cdiv(t, hw.softmax_parallelism)
    soft = 2 * _cdiv(t, hw.softmax_parallelism)
    return mac, mask, soft, mac


def mha_cost(t: int, local_heads: int, hw: HardwareConfig, head_dim: int,
             pipelined: bool = True) -> KernelCost:
    """Fused MHA kernel over ``local_heads`` heads with ``t`` cached tokens.

    Pipelined: softmax of head i-1 overlaps the MACs of head i, giving the
    classic makespan ``sum(stages) + (P-1) * max(stage)``. Otherwise the heads
    run back to back.
    """
    if t < 1:
        raise ValueError("mha_cost needs t >= 1")
    stages = mha_stage_cycles(t, hw, head_dim)
    if local_heads < 1:
        cycles = 0
    elif pipelined:
        cycles = sum(stages) + (local_heads - 1) * max(stages)
    else:
        cycles = local_heads * sum(stages)
    fill = hw.mha_fill_cycles * len(stages)
    memory = local_heads * t * head_dim / (hw.mha_kv_channels * hw.hbm_bw_per_channel)
    total = (cycles + fill) / hw.freq_hz
    return KernelCost(MHA, cycles, memory, fill, total)


def ln_res_cost(d: int, hw: HardwareConfig, fused: bool = True,
                parallelism: int | None = None) -> KernelCost:
    """Residual add plus the two layernorm passes over a width-``d`` vector.

    Fused, the residual add overlaps the statistics pass. The unfused baseline
    runs the three passes back to back at ``ln_parallelism_unfused``.
    """
    if parallelism is None:
        parallelism = hw.ln_parallelism if fused else hw.ln_parallelism_unfused
    p = _cdiv(d, parallelism)
    res, ln1, ln2 = p, p, p
    cycles = max(res, ln1) + ln2 if fused else res + ln1 + ln2
    return KernelCost(LN_RES, cycles, 0.0, 0, cycles / hw.freq_hz)


def aux_cost(kind: str, size: int, hw: HardwareConfig) -> KernelCost:
    """Elementwise functional unit (activation) over ``size`` elements."""
    cycles = _cdiv(size, hw.aux_parallelism)
    return KernelCost(AUX, cycles, 0.0, 0, cycles / hw.freq_hz)


def sync_cost(nbytes: int, hw: HardwareConfig) -> float:
    """Time of one ring round moving ``nbytes`` over one link."""
    if nbytes < 0:
        raise ValueError("negative byte count")
    return nbytes / hw.net_bw + hw.net_hop_latency


# memoized variants used by the simulator hot path
cached_mha_cost = lru_cache(maxsize=None)(mha_cost)
cached_ln_res_cost = lru_cache(maxsize=None)(ln_res_cost)
cached_aux_cost = lru_cache(maxsize=None)(aux_cost)


@lru_cache(maxsize=None)
def cached_mp_block_times(rows: int, cols: int, hw: HardwareConfig) -> tuple[float, ...]:
    return tuple(mp_block_times(split_rows(rows, cols, hw), hw))
