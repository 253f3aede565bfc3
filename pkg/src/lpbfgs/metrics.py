"""Perturbation norms and per-cell aggregation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

L0_THRESHOLD = 1e-8

CSV_COLUMNS = ("attack", "loss", "strategy", "k", "asr", "confidence", "l0", "l1", "l2", "linf", "time_ms")
TIMING_COLUMNS = ("time_ms",)


def perturbation_norms(r) -> tuple[int, float, float, float]:
    r = np.asarray(r, dtype=np.float64).reshape(-1)
    a = np.abs(r)
    if a.size == 0:
        return 0, 0.0, 0.0, 0.0
    return int(np.count_nonzero(a > L0_THRESHOLD)), float(a.sum()), float(np.linalg.norm(r)), float(a.max())


@dataclass
class MetricsRow:
    attack: str
    loss: str
    strategy: str
    k: int
    asr: float
    confidence: float
    l0: float
    l1: float
    l2: float
    linf: float
    time_ms: float
    attempted: int = 0
    successes: int = 0

    @classmethod
    def from_records(cls, records: list[dict]) -> "MetricsRow":
        """Aggregate per-example records of one grid cell.

        Confidence and norms average over successful examples only; time
        averages over every attempted example.
        """
        if not records:
            raise ValueError("no records to aggregate")
        first = records[0]
        wins = [r for r in records if r["success"]]

        def mean(key, rows):
            return float(np.mean([r[key] for r in rows])) if rows else 0.0

        return cls(
            attack=first["attack"], loss=first["loss"], strategy=first["strategy"], k=int(first["K"]),
            asr=100.0 * len(wins) / len(records),
            confidence=mean("confidence", wins),
            l0=mean("l0", wins), l1=mean("l1", wins), l2=mean("l2", wins), linf=mean("linf", wins),
            time_ms=mean("time_ms", records),
            attempted=len(records), successes=len(wins),
        )

    def csv_fields(self) -> list[str]:
        out = []
        for col in CSV_COLUMNS:
            v = getattr(self, col)
            out.append(f"{v:.4f}" if isinstance(v, float) else str(v))
        return out
