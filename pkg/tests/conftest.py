"""Shared builders for hand-crafted traces used across the suite."""

from __future__ import annotations

import pytest

from roamsim.trace import (
    ApObservation,
    DeviceContext,
    ScanSample,
    SynthConfig,
    Trace,
    sort_candidates,
)


def mac(i: int) -> str:
    n = i + 1
    return f"AA:00:00:00:{(n >> 8) & 0xFF:02X}:{n & 0xFF:02X}"


MAC_A, MAC_B, MAC_C, MAC_D = mac(0), mac(1), mac(2), mac(3)


def make_sample(t: int, levels: dict[str, float], assoc: str | None = None,
                activity: str = "active", lat: float | None = None,
                lon: float | None = None, battery: float | None = None) -> ScanSample:
    ctx = DeviceContext(timestamp=t, latitude=lat, longitude=lon,
                        battery_pct=battery, activity=activity)
    cands = sort_candidates(ApObservation(bssid=b, rssi=r) for b, r in levels.items())
    return ScanSample(context=ctx, candidates=cands, associated=assoc)


def make_trace(rows: list[dict[str, float]], interval: int = 1, assoc0: str | None = None,
               activity: str = "active") -> Trace:
    samples = tuple(
        make_sample(t * interval, levels, assoc=assoc0 if t == 0 else None,
                    activity=activity)
        for t, levels in enumerate(rows)
    )
    return Trace(samples=samples, sample_interval=interval)


def band_synth(seed: int, duration: int = 200, num_aps: int = 4) -> SynthConfig:
    """Synthetic config whose walks straddle the -70 dBm trigger band."""
    bases = (-58.0, -66.0, -72.0, -80.0, -63.0, -75.0)[:num_aps]
    return SynthConfig(
        num_aps=num_aps,
        duration=duration,
        base_dbm=bases if num_aps > 1 else bases[0],
        step_stddev=4.0,
        floor_dbm=-95.0,
        ceil_dbm=-45.0,
        seed=seed,
    )


@pytest.fixture
def crossover_trace() -> Trace:
    """Two APs whose strengths cross mid-trace: A strong early, B strong late."""
    rows = []
    for t in range(12):
        a = -55.0 - 3.0 * t          # -55 .. -88
        b = -88.0 + 3.0 * t          # -88 .. -55
        rows.append({MAC_A: a, MAC_B: b})
    return make_trace(rows)
