"""Phase-aware sim-to-real gap metrics over paired episodes.

Each task phase present on both sides is mapped to normalized time
u in [0, 1] and the simulated signals are linearly interpolated onto the
real side's u-grid, which removes duration mismatch before comparing.
The metric suite covers joint-space RMSE, TCP position RMSE, the RMS of
the 3-D TCP Euclidean distance, rotation-vector RMSE, and the exact 1-D
Wasserstein-1 distance between pooled effort samples.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .errors import EmptyInput, NoCommonPhases
from .ingest import EpisodePair
from .schema import ChannelDescriptor, SignalRole


def wasserstein_1d(a: np.ndarray, b: np.ndarray) -> float:
    """Exact W1 between two empirical distributions (any sizes).

    Integrates |Fa^-1 - Fb^-1| over the union of quantile breakpoints,
    which is exact for empirical CDFs; for equal sizes this reduces to the
    mean absolute difference of the sorted samples.
    """
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise EmptyInput("W1 needs non-empty samples")
    n, m = a.size, b.size
    edges = np.union1d(np.arange(1, n + 1) / n, np.arange(1, m + 1) / m)
    edges = np.concatenate([[0.0], edges])
    mids = (edges[:-1] + edges[1:]) / 2.0
    ia = np.minimum((mids * n).astype(int), n - 1)
    ib = np.minimum((mids * m).astype(int), m - 1)
    return float(np.sum(np.diff(edges) * np.abs(a[ia] - b[ib])))


# ---------------------------------------------------------------------------
# phase alignment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AlignedPair:
    pair_key: str
    channel_names: tuple[str, ...]
    descriptors: tuple[ChannelDescriptor, ...]   # real-side descriptors
    real: np.ndarray                             # n_aligned x C
    sim: np.ndarray                              # sim interpolated, same shape
    phases_used: tuple[str, ...]
    phases_skipped: tuple[str, ...]


def _phase_order(phase: np.ndarray) -> list[str]:
    seen: list[str] = []
    for label in phase:
        label = str(label)
        if label not in seen:
            seen.append(label)
    return seen


def phase_align(pair: EpisodePair) -> AlignedPair:
    """Align the pair's common channels phase by phase on normalized time.

    Phases present on only one side are skipped (and reported); raises
    NoCommonPhases when the shared vocabulary is empty.
    """
    real, sim = pair.real, pair.sim
    common = [n for n in real.channel_names if sim.has_channel(n)]
    real_cols = np.array([real.channel_index(n) for n in common], dtype=int)
    sim_cols = np.array([sim.channel_index(n) for n in common], dtype=int)

    real_phases = _phase_order(real.phase)
    sim_phases = set(_phase_order(sim.phase))
    used = [p for p in real_phases if p in sim_phases]
    skipped = [p for p in real_phases if p not in sim_phases]
    skipped += [p for p in _phase_order(sim.phase) if p not in set(real_phases)]
    if not used:
        raise NoCommonPhases(
            f"pair {pair.pair_key!r}: no shared phases between real and sim"
        )

    real_blocks, sim_blocks = [], []
    for p in used:
        ridx = np.flatnonzero(real.phase == p)
        sidx = np.flatnonzero(sim.phase == p)
        u_real = (
            np.arange(ridx.size) / (ridx.size - 1) if ridx.size > 1 else np.zeros(1)
        )
        u_sim = (
            np.arange(sidx.size) / (sidx.size - 1) if sidx.size > 1 else np.zeros(1)
        )
        real_blocks.append(real.channels[np.ix_(ridx, real_cols)])
        sim_block = np.empty((ridx.size, len(common)))
        for c in range(len(common)):
            sim_block[:, c] = np.interp(u_real, u_sim, sim.channels[sidx, sim_cols[c]])
        sim_blocks.append(sim_block)

    return AlignedPair(
        pair_key=pair.pair_key,
        channel_names=tuple(common),
        descriptors=tuple(real.descriptors[i] for i in real_cols),
        real=np.vstack(real_blocks),
        sim=np.vstack(sim_blocks),
        phases_used=tuple(used),
        phases_skipped=tuple(skipped),
    )


# ---------------------------------------------------------------------------
# pair metrics
# ---------------------------------------------------------------------------

JOINT_CHANNELS = tuple(f"feedback_pos_{i}" for i in range(6))
TCP_POS_CHANNELS = tuple(f"feedback_pos_cartesian_{i}" for i in range(3))
TCP_ROT_CHANNELS = tuple(f"feedback_pos_cartesian_{i}" for i in range(3, 6))


@dataclass(frozen=True)
class GapMetrics:
    pair_key: str
    joint_rmse_deg: Optional[float] = None
    tcp_pos_rmse_mm: Optional[float] = None
    ee_l2_rms_mm: Optional[float] = None
    tcp_rotvec_rmse_mrad: Optional[float] = None
    w1_effort_mean: Optional[float] = None
    rotvec_wrapped: bool = False     # any rotvec component spans more than pi

    def as_dict(self) -> dict[str, Optional[float]]:
        return {f.name: getattr(self, f.name) for f in fields(self)
                if f.name not in ("pair_key", "rotvec_wrapped")}


METRIC_NAMES = (
    "joint_rmse_deg",
    "tcp_pos_rmse_mm",
    "ee_l2_rms_mm",
    "tcp_rotvec_rmse_mrad",
    "w1_effort_mean",
)

_RAD_TO_DEG = 180.0 / np.pi


def _unit_factor(unit: str, to: str) -> float:
    """Scale factor from a channel's recorded unit to the metric unit."""
    unit = unit.lower()
    if to == "deg":
        return 1.0 if unit.startswith("deg") else _RAD_TO_DEG
    if to == "mm":
        return 1.0 if unit == "mm" else 1000.0
    if to == "mrad":
        if unit.startswith("deg"):
            return np.pi / 180.0 * 1000.0
        return 1000.0
    raise ValueError(to)


def _select(aligned: AlignedPair, names: Sequence[str]):
    idx = []
    for n in names:
        if n not in aligned.channel_names:
            return None
        idx.append(aligned.channel_names.index(n))
    return np.asarray(idx, dtype=int)


def pair_metrics(aligned: AlignedPair) -> GapMetrics:
    """Table-style metric suite for one aligned pair.

    A metric whose channels are absent is reported as None rather than
    failing the pair.
    """
    values: dict[str, Optional[float]] = {}

    idx = _select(aligned, JOINT_CHANNELS)
    if idx is not None:
        diff = aligned.real[:, idx] - aligned.sim[:, idx]
        factors = np.array([
            _unit_factor(aligned.descriptors[i].unit, "deg") for i in idx
        ])
        values["joint_rmse_deg"] = float(np.sqrt(np.mean((diff * factors) ** 2)))

    idx = _select(aligned, TCP_POS_CHANNELS)
    if idx is not None:
        factors = np.array([
            _unit_factor(aligned.descriptors[i].unit, "mm") for i in idx
        ])
        diff = (aligned.real[:, idx] - aligned.sim[:, idx]) * factors
        values["tcp_pos_rmse_mm"] = float(np.sqrt(np.mean(diff ** 2)))
        # RMS of the 3-D Euclidean distance (pools axes before the mean)
        values["ee_l2_rms_mm"] = float(np.sqrt(np.mean(np.sum(diff ** 2, axis=1))))

    wrapped = False
    idx = _select(aligned, TCP_ROT_CHANNELS)
    if idx is not None:
        factors = np.array([
            _unit_factor(aligned.descriptors[i].unit, "mrad") for i in idx
        ])
        diff = (aligned.real[:, idx] - aligned.sim[:, idx]) * factors
        values["tcp_rotvec_rmse_mrad"] = float(np.sqrt(np.mean(diff ** 2)))
        # no angular unwrapping is applied; flag suspicious component spans
        for side in (aligned.real, aligned.sim):
            span = side[:, idx].max(axis=0) - side[:, idx].min(axis=0)
            if np.any(span * (factors / 1000.0) > np.pi):
                wrapped = True

    effort_idx = [
        i for i, d in enumerate(aligned.descriptors) if d.role == SignalRole.EFFORT
    ]
    if effort_idx:
        w1s = [
            wasserstein_1d(aligned.real[:, i], aligned.sim[:, i]) for i in effort_idx
        ]
        values["w1_effort_mean"] = float(np.mean(w1s))

    return GapMetrics(pair_key=aligned.pair_key, rotvec_wrapped=wrapped, **values)


# ---------------------------------------------------------------------------
# batch summary
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricSummary:
    metric: str
    mean: float
    median: float
    p10: float
    p90: float
    n: int


@dataclass(frozen=True)
class GapSummary:
    rows: tuple[MetricSummary, ...]
    n_pairs: int

    def row(self, metric: str) -> Optional[MetricSummary]:
        for r in self.rows:
            if r.metric == metric:
                return r
        return None


def batch_summary(per_pair: Sequence[GapMetrics]) -> GapSummary:
    """Mean/median/p10/p90 of each metric over pairs (linear percentiles)."""
    if not per_pair:
        raise EmptyInput("no pairs to summarize")
    rows = []
    for metric in METRIC_NAMES:
        vals = np.asarray([
            getattr(m, metric) for m in per_pair if getattr(m, metric) is not None
        ])
        if vals.size == 0:
            continue
        p10, median, p90 = np.percentile(vals, [10.0, 50.0, 90.0])
        rows.append(MetricSummary(
            metric=metric,
            mean=float(vals.mean()),
            median=float(median),
            p10=float(p10),
            p90=float(p90),
            n=int(vals.size),
        ))
    return GapSummary(rows=tuple(rows), n_pairs=len(per_pair))


def write_pair_metrics_csv(per_pair: Sequence[GapMetrics], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pair_key", "metric", "value", "rotvec_wrapped"])
        for m in per_pair:
            for metric in METRIC_NAMES:
                v = getattr(m, metric)
                writer.writerow([
                    m.pair_key, metric,
                    "" if v is None else f"{v:.9g}",
                    int(m.rotvec_wrapped),
                ])
    return path


def write_summary_csv(summary: GapSummary, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "mean", "median", "p10", "p90", "n"])
        for r in summary.rows:
            writer.writerow([
                r.metric, f"{r.mean:.9g}", f"{r.median:.9g}",
                f"{r.p10:.9g}", f"{r.p90:.9g}", r.n,
            ])
    return path
