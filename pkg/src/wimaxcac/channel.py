"""Per-frame service capacity of the allocated OFDMA subchannels.

Each subchannel sees an independent Nakagami-m faded SNR (Gamma distributed
power) every frame, and adaptive modulation maps it to a packet count through
a threshold table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce

import numpy as np
from scipy import special

from .mmpp import Pmf


@dataclass(frozen=True)
class RateEntry:
    snr_threshold_db: float
    packets_per_frame: int


@dataclass(frozen=True)
class ChannelParams:
    subchannel_count: int
    avg_snr_db: float
    rate_table: tuple[RateEntry, ...]
    nakagami_m: float = 1.0

    def __post_init__(self):
        table = tuple(e if isinstance(e, RateEntry) else RateEntry(float(e[0]), int(e[1]))
                      for e in self.rate_table)
        object.__setattr__(self, "rate_table", table)
        if self.subchannel_count < 1:
            raise ValueError("subchannel_count must be >= 1")
        if self.nakagami_m < 0.5:
            raise ValueError("nakagami_m must be >= 0.5")
        if not table:
            raise ValueError("rate_table is empty")
        if table[0].snr_threshold_db != -math.inf:
            raise ValueError("first rate_table threshold must be -inf")
        for lo, hi in zip(table, table[1:]):
            if not hi.snr_threshold_db > lo.snr_threshold_db:
                raise ValueError("rate_table thresholds must be strictly increasing")
            if not hi.packets_per_frame > lo.packets_per_frame:
                raise ValueError("rate_table packets_per_frame must be strictly increasing")
        if table[0].packets_per_frame < 0:
            raise ValueError("packets_per_frame must be >= 0")

    @property
    def max_packets(self) -> int:
        return self.rate_table[-1].packets_per_frame


def _exceedance(threshold_db: float, avg_snr_db: float, m: float) -> float:
    """P(SNR > threshold) for Gamma(m, mean) distributed linear SNR."""
    if threshold_db == -math.inf:
        return 1.0
    if avg_snr_db == math.inf:
        return 1.0
    if avg_snr_db == -math.inf:
        return 0.0
    ratio = 10.0 ** ((threshold_db - avg_snr_db) / 10.0)
    return float(special.gammaincc(m, m * ratio))


def subchannel_rate_pmf(params: ChannelParams) -> Pmf:
    table = params.rate_table
    tails = [_exceedance(e.snr_threshold_db, params.avg_snr_db, params.nakagami_m) for e in table]
    tails.append(0.0)
    p = np.zeros(params.max_packets + 1)
    for i, entry in enumerate(table):
        p[entry.packets_per_frame] = max(tails[i] - tails[i + 1], 0.0)
    return Pmf(p / p.sum())


def convolve_pmfs(*pmfs: Pmf) -> Pmf:
    out = reduce(np.convolve, (p.probs for p in pmfs))
    return Pmf(np.clip(out, 0.0, None) / out.sum())


def service_pmf(params: ChannelParams) -> Pmf:
    """Total packets served per frame across all subchannels."""
    sub = subchannel_rate_pmf(params)
    return convolve_pmfs(*([sub] * params.subchannel_count))
