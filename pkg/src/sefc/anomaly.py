"""Setpoint->effort anomaly detection protocol.

A dense regressor is trained on healthy episodes only to predict the six
motor-torque channels from the 18 setpoint channels; the anomaly score of
an episode is its mean absolute prediction error in standardized units.
Per-channel standardization is fitted on the training split only and
travels with the model checkpoint (stored data stays in raw units).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateLabels, EmptyDataset, MissingChannel, SchemaViolation
from .nnkit import DenseNet, TrainConfig, TrainHistory, train
from .nnkit.checkpoint import load_model, save_model
from .schema import Episode

ANOMALY_INPUT_CHANNELS = tuple(
    f"setpoint_{kind}_{i}" for kind in ("pos", "vel", "acc") for i in range(6)
)
ANOMALY_OUTPUT_CHANNELS = tuple(f"effort_motor_torque_{i}" for i in range(6))

HEALTHY_LABEL = "healthy"


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardizer":
        std = x.std(axis=0)
        return cls(mean=x.mean(axis=0), std=np.maximum(std, 1e-12))

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def inverse(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean


@dataclass(frozen=True)
class ScoredEpisode:
    episode_id: str
    label: str                 # HEALTHY_LABEL or the fault type
    score: float

    @property
    def is_anomalous(self) -> bool:
        return self.label != HEALTHY_LABEL


def _episode_matrix(ep: Episode, names: Sequence[str]) -> np.ndarray:
    cols = []
    for name in names:
        if not ep.has_channel(name):
            raise MissingChannel(name)
        cols.append(ep.channel(name))
    return np.column_stack(cols)


def build_regression_set(
    episodes: Sequence[Episode],
    input_channels: Sequence[str] = ANOMALY_INPUT_CHANNELS,
    output_channels: Sequence[str] = ANOMALY_OUTPUT_CHANNELS,
) -> tuple[np.ndarray, np.ndarray]:
    """Pool per-timestep rows across episodes into (X, Y) matrices."""
    if not episodes:
        raise EmptyDataset("no episodes")
    xs, ys = [], []
    for ep in episodes:
        xs.append(_episode_matrix(ep, input_channels))
        ys.append(_episode_matrix(ep, output_channels))
    return np.vstack(xs), np.vstack(ys)


@dataclass
class AnomalyModel:
    net: DenseNet
    x_std: Standardizer
    y_std: Standardizer
    input_channels: tuple[str, ...] = ANOMALY_INPUT_CHANNELS
    output_channels: tuple[str, ...] = ANOMALY_OUTPUT_CHANNELS

    def save(self, path: Union[str, Path]) -> Path:
        extra = {
            "input_channels": list(self.input_channels),
            "output_channels": list(self.output_channels),
            "x_mean": self.x_std.mean.tolist(),
            "x_stdev": self.x_std.std.tolist(),
            "y_mean": self.y_std.mean.tolist(),
            "y_stdev": self.y_std.std.tolist(),
        }
        return save_model(path, self.net, extra=extra)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "AnomalyModel":
        net, extra = load_model(path)
        if not isinstance(net, DenseNet):
            raise SchemaViolation(f"{path}: not an anomaly checkpoint")
        return cls(
            net=net,
            x_std=Standardizer(np.asarray(extra["x_mean"]), np.asarray(extra["x_stdev"])),
            y_std=Standardizer(np.asarray(extra["y_mean"]), np.asarray(extra["y_stdev"])),
            input_channels=tuple(extra["input_channels"]),
            output_channels=tuple(extra["output_channels"]),
        )


def train_anomaly_model(
    episodes: Sequence[Episode],
    config: TrainConfig = TrainConfig(),
    hidden: Sequence[int] = (512, 256, 128),
    val_fraction: float = 0.15,
    input_channels: Sequence[str] = ANOMALY_INPUT_CHANNELS,
    output_channels: Sequence[str] = ANOMALY_OUTPUT_CHANNELS,
) -> tuple[AnomalyModel, TrainHistory]:
    """Fit the regressor on healthy episodes only.

    Any labeled-faulty episode in the input is a protocol violation and
    raises SchemaViolation.  The last ``val_fraction`` of episodes form the
    validation split; the standardizers are fitted on the training split.
    """
    faulty = [ep.episode_id for ep in episodes if not ep.healthy]
    if faulty:
        raise SchemaViolation(
            "anomaly training is healthy-only; faulty episodes in input: "
            + ", ".join(faulty[:5])
        )
    if len(episodes) < 2:
        raise EmptyDataset("need at least 2 healthy episodes (train + val)")

    n_val = max(1, int(round(val_fraction * len(episodes))))
    train_eps = list(episodes[:-n_val])
    val_eps = list(episodes[-n_val:])
    x_train, y_train = build_regression_set(train_eps, input_channels, output_channels)
    x_val, y_val = build_regression_set(val_eps, input_channels, output_channels)

    x_std = Standardizer.fit(x_train)
    y_std = Standardizer.fit(y_train)

    net = DenseNet([len(input_channels), *hidden, len(output_channels)], seed=config.seed)
    history = train(
        net,
        (x_std.transform(x_train), y_std.transform(y_train)),
        (x_std.transform(x_val), y_std.transform(y_val)),
        config,
    )
    model = AnomalyModel(net, x_std, y_std, tuple(input_channels), tuple(output_channels))
    return model, history


def score_episode(model: AnomalyModel, ep: Episode) -> ScoredEpisode:
    """Per-episode MAE between predicted and true efforts (standardized)."""
    x = model.x_std.transform(_episode_matrix(ep, model.input_channels))
    y = model.y_std.transform(_episode_matrix(ep, model.output_channels))
    pred = model.net.predict(x)
    score = float(np.mean(np.abs(pred - y)))
    return ScoredEpisode(ep.episode_id, ep.fault or HEALTHY_LABEL, score)


def score_episodes(model: AnomalyModel, episodes: Sequence[Episode]) -> list[ScoredEpisode]:
    return [score_episode(model, ep) for ep in episodes]


# ---------------------------------------------------------------------------
# AUROC and confidence intervals
# ---------------------------------------------------------------------------

def auroc(scored: Sequence[tuple[float, bool]]) -> float:
    """Probability an anomalous score outranks a healthy one (ties half).

    Computed with the midrank formula; equal to the exhaustive pairwise
    count exactly, including ties.
    """
    scores = np.asarray([s for s, _ in scored], dtype=np.float64)
    labels = np.asarray([bool(a) for _, a in scored])
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("need at least one anomalous and one healthy score")
    ranks = rankdata(scores, method="average")
    rank_sum = ranks[labels].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _auroc_of(scored: Sequence[ScoredEpisode]) -> float:
    return auroc([(s.score, s.is_anomalous) for s in scored])


def bootstrap_ci(
    scored: Sequence[ScoredEpisode],
    n_resamples: int = 1000,
    level: float = 0.95,
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile bootstrap CI of the AUROC over episode-level scores.

    Resampling is stratified by label (healthy/anomalous sizes preserved),
    so no resample can lose a class; deterministic given the seed.
    """
    healthy = np.asarray([s.score for s in scored if not s.is_anomalous])
    anom = np.asarray([s.score for s in scored if s.is_anomalous])
    if healthy.size == 0 or anom.size == 0:
        raise DegenerateLabels("need both classes for a bootstrap CI")
    rng = np.random.default_rng(seed)
    stats = np.empty(n_resamples)
    for b in range(n_resamples):
        h = rng.choice(healthy, size=healthy.size, replace=True)
        a = rng.choice(anom, size=anom.size, replace=True)
        pairs = [(float(s), False) for s in h] + [(float(s), True) for s in a]
        stats[b] = auroc(pairs)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.percentile(stats, [100.0 * alpha, 100.0 * (1.0 - alpha)])
    return float(lo), float(hi)


@dataclass(frozen=True)
class CategoryRow:
    category: str
    n: int
    auroc: Optional[float]     # None when the category has no episodes


@dataclass(frozen=True)
class AnomalyReport:
    rows: tuple[CategoryRow, ...]
    mean_auroc: float          # unweighted mean over present categories
    pooled_auroc: float        # all anomalies vs the shared healthy pool
    ci: tuple[float, float]
    ci_level: float
    n_healthy: int


def per_category_report(
    scored: Sequence[ScoredEpisode],
    categories: Optional[Sequence[str]] = None,
    n_resamples: int = 1000,
    ci_level: float = 0.95,
    seed: int = 0,
) -> AnomalyReport:
    """One AUROC per fault category against the shared healthy pool."""
    healthy = [s for s in scored if not s.is_anomalous]
    anomalous = [s for s in scored if s.is_anomalous]
    if not healthy or not anomalous:
        raise DegenerateLabels("need healthy and anomalous episodes for a report")
    if categories is None:
        categories = sorted({s.label for s in anomalous})

    rows: list[CategoryRow] = []
    present: list[float] = []
    for cat in categories:
        cat_eps = [s for s in anomalous if s.label == cat]
        if not cat_eps:
            rows.append(CategoryRow(cat, 0, None))
            continue
        value = _auroc_of(healthy + cat_eps)
        rows.append(CategoryRow(cat, len(cat_eps), value))
        present.append(value)

    pooled = _auroc_of(scored)
    ci = bootstrap_ci(scored, n_resamples=n_resamples, level=ci_level, seed=seed)
    return AnomalyReport(
        rows=tuple(rows),
        mean_auroc=float(np.mean(present)),
        pooled_auroc=pooled,
        ci=ci,
        ci_level=ci_level,
        n_healthy=len(healthy),
    )


def write_report_csv(report: AnomalyReport, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["category", "n", "auroc"])
        for row in report.rows:
            writer.writerow([row.category, row.n,
                             "" if row.auroc is None else f"{row.auroc:.6f}"])
        writer.writerow(["mean", sum(r.n for r in report.rows),
                         f"{report.mean_auroc:.6f}"])
        writer.writerow(["pooled", sum(r.n for r in report.rows),
                         f"{report.pooled_auroc:.6f}"])
        writer.writerow([
            f"ci{int(report.ci_level * 100)}",
            report.n_healthy,
            f"[{report.ci[0]:.6f}, {report.ci[1]:.6f}]",
        ])
    return path


def write_report_summary(report: AnomalyReport, path: Union[str, Path]) -> Path:
    """Structured-text companion to the per-category CSV."""
    import yaml

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "mean_auroc": round(report.mean_auroc, 6),
        "pooled_auroc": round(report.pooled_auroc, 6),
        "ci": [round(report.ci[0], 6), round(report.ci[1], 6)],
        "ci_level": report.ci_level,
        "n_healthy": report.n_healthy,
        "n_anomalous": sum(r.n for r in report.rows),
        "categories": {
            r.category: {"n": r.n,
                         "auroc": None if r.auroc is None else round(r.auroc, 6)}
            for r in report.rows
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(payload, fh, sort_keys=False)
    return path


def write_scores_csv(scored: Sequence[ScoredEpisode], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode_id", "label", "score"])
        for s in scored:
            writer.writerow([s.episode_id, s.label, "{:.17g}".format(s.score)])
    return path
