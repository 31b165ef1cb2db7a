"""Forward-dynamics forecasting, Euler rollouts, and transfer metrics.

Models consume a 10-step context window of 36 features (feedback pos/vel/
acc then setpoint pos/vel/acc, six joints each) and predict the next
step's six target values.  Rollouts are closed loop: predicted feedback
states replace the recorded feedback features while setpoint features keep
replaying the recording, and position/velocity come from first-order Euler
integration of the predicted accelerations.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .errors import (
    EmptyDataset,
    HorizonOverrun,
    MissingChannel,
    SchemaViolation,
    ShapeMismatch,
)
from .anomaly import Standardizer
from .nnkit import DenseNet, Model, SeqNet, TCNNet, TrainConfig, TrainHistory, train
from .nnkit.checkpoint import load_model, save_model
from .schema import Episode

WINDOW_STEPS = 10
N_JOINTS = 6

#: 36-feature layout: six joints per block, feedback first.
FEATURE_BLOCKS = (
    "feedback_pos",
    "feedback_vel",
    "feedback_acc",
    "setpoint_pos",
    "setpoint_vel",
    "setpoint_acc",
)
N_FEATURES = len(FEATURE_BLOCKS) * N_JOINTS

_FB_POS = slice(0, 6)
_FB_VEL = slice(6, 12)
_FB_ACC = slice(12, 18)

MODEL_KINDS = ("linear", "flat_mlp", "tcn", "tcn_transformer", "kinematic_zero")

TARGET_CHANNELS = {
    "accel": tuple(f"feedback_acc_{i}" for i in range(N_JOINTS)),
    "effort": tuple(f"effort_motor_torque_{i}" for i in range(N_JOINTS)),
}


def episode_features(ep: Episode, blocks: Sequence[str] = FEATURE_BLOCKS) -> np.ndarray:
    """Per-step feature matrix; missing feedback acceleration is derived.

    The default layout is the 36-feature window (feedback pos/vel/acc then
    setpoint pos/vel/acc); alternate block orders can be passed in.  When
    the recording carries no feedback_acc channels, acceleration is the
    backward difference of feedback velocity (first step copies the
    second).
    """
    cols: list[np.ndarray] = []
    for block in blocks:
        for i in range(N_JOINTS):
            name = f"{block}_{i}"
            if ep.has_channel(name):
                cols.append(ep.channel(name))
            elif block == "feedback_acc":
                vel_name = f"feedback_vel_{i}"
                if not ep.has_channel(vel_name):
                    raise MissingChannel(vel_name)
                vel = ep.channel(vel_name)
                acc = np.empty_like(vel)
                acc[1:] = (vel[1:] - vel[:-1]) * ep.rate_hz
                acc[0] = acc[1]
                cols.append(acc)
            else:
                raise MissingChannel(name)
    return np.column_stack(cols)


def episode_targets(ep: Episode, target: str = "accel") -> np.ndarray:
    if target not in TARGET_CHANNELS:
        raise SchemaViolation(f"unknown target {target!r}")
    if target == "accel" and not ep.has_channel("feedback_acc_0"):
        return episode_features(ep)[:, _FB_ACC]
    cols = []
    for name in TARGET_CHANNELS[target]:
        if not ep.has_channel(name):
            raise MissingChannel(name)
        cols.append(ep.channel(name))
    return np.column_stack(cols)


def make_windows(
    ep: Episode, target: str = "accel", window: int = WINDOW_STEPS
) -> tuple[np.ndarray, np.ndarray]:
    """All (window, 36) -> next-step-target training pairs of one episode."""
    feats = episode_features(ep)
    targets = episode_targets(ep, target)
    T = ep.n_steps
    if T <= window:
        raise EmptyDataset(f"{ep.episode_id}: too short for a {window}-step window")
    n = T - window
    x = np.empty((n, window, N_FEATURES))
    for k in range(n):
        x[k] = feats[k:k + window]
    y = targets[window:]
    return x, y


def validate_window(window: np.ndarray) -> np.ndarray:
    window = np.asarray(window, dtype=np.float64)
    if window.shape != (WINDOW_STEPS, N_FEATURES):
        raise ShapeMismatch(
            f"context window must be ({WINDOW_STEPS}, {N_FEATURES}), got {window.shape}"
        )
    return window


# ---------------------------------------------------------------------------
# forecaster wrapper
# ---------------------------------------------------------------------------

@dataclass
class Forecaster:
    """A trained predictor (or the zero baseline) operating in raw units."""

    kind: str
    net: Optional[Model] = None
    x_std: Optional[Standardizer] = None    # per-feature, over the 36 features
    y_std: Optional[Standardizer] = None
    target: str = "accel"
    out_dim: int = N_JOINTS

    def predict_batch(self, windows: np.ndarray) -> np.ndarray:
        windows = np.asarray(windows, dtype=np.float64)
        if windows.ndim != 3 or windows.shape[1:] != (WINDOW_STEPS, N_FEATURES):
            raise ShapeMismatch(
                f"expected (N, {WINDOW_STEPS}, {N_FEATURES}), got {windows.shape}"
            )
        if self.kind == "kinematic_zero":
            return np.zeros((windows.shape[0], self.out_dim))
        z = self.x_std.transform(windows)
        if self.kind in ("linear", "flat_mlp"):
            pred = self.net.predict(z.reshape(len(z), -1))
        else:
            pred = self.net.predict(z)
        return self.y_std.inverse(pred)

    def save(self, path: Union[str, Path]) -> Path:
        if self.kind == "kinematic_zero":
            raise SchemaViolation("the zero baseline has nothing to checkpoint")
        extra = {
            "forecaster_kind": self.kind,
            "target": self.target,
            "x_mean": self.x_std.mean.tolist(),
            "x_stdev": self.x_std.std.tolist(),
            "y_mean": self.y_std.mean.tolist(),
            "y_stdev": self.y_std.std.tolist(),
        }
        return save_model(path, self.net, extra=extra)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Forecaster":
        net, extra = load_model(path)
        return cls(
            kind=str(extra["forecaster_kind"]),
            net=net,
            x_std=Standardizer(np.asarray(extra["x_mean"]), np.asarray(extra["x_stdev"])),
            y_std=Standardizer(np.asarray(extra["y_mean"]), np.asarray(extra["y_stdev"])),
            target=str(extra.get("target", "accel")),
            out_dim=net.spec().get("out_dim", N_JOINTS)
            if net.spec()["kind"] != "dense" else net.spec()["widths"][-1],
        )


def predict_accel(model: Forecaster, window: np.ndarray) -> np.ndarray:
    """Six next-step values from one context window (zeros for the baseline)."""
    window = validate_window(window)
    return model.predict_batch(window[None])[0]


def _build_net(kind: str, out_dim: int, seed: int) -> Model:
    flat_in = WINDOW_STEPS * N_FEATURES
    if kind == "linear":
        return DenseNet([flat_in, out_dim], seed=seed)
    if kind == "flat_mlp":
        return DenseNet([flat_in, 128, 64, out_dim], seed=seed)
    if kind == "tcn":
        return TCNNet(N_FEATURES, hidden=64, kernel=3, dilations=(1, 2),
                      out_dim=out_dim, seed=seed)
    if kind == "tcn_transformer":
        return SeqNet(N_FEATURES, hidden=64, kernel=3, tcn_dilations=(1, 2, 4),
                      n_blocks=2, heads=4, ff_dim=128, out_dim=out_dim, seed=seed)
    raise SchemaViolation(f"unknown model kind {kind!r}")


def train_forecaster(
    episodes: Sequence[Episode],
    kind: str,
    target: str = "accel",
    config: TrainConfig = TrainConfig(optimizer="adamw", lr0=1e-4, max_epochs=100,
                                      patience=100, batch_size=1024),
    val_fraction: float = 0.12,
) -> tuple[Forecaster, Optional[TrainHistory]]:
    """Train one of the named predictors on pooled episode windows."""
    if kind not in MODEL_KINDS:
        raise SchemaViolation(f"unknown model kind {kind!r}")
    if kind == "kinematic_zero":
        return Forecaster(kind="kinematic_zero", target=target), None
    if not episodes:
        raise EmptyDataset("no training episodes")

    n_val = max(1, int(round(val_fraction * len(episodes))))
    if len(episodes) <= n_val:
        raise EmptyDataset("not enough episodes for a train/val split")
    windows = [make_windows(ep, target) for ep in episodes]
    x_train = np.concatenate([x for x, _ in windows[:-n_val]])
    y_train = np.concatenate([y for _, y in windows[:-n_val]])
    x_val = np.concatenate([x for x, _ in windows[-n_val:]])
    y_val = np.concatenate([y for _, y in windows[-n_val:]])

    x_std = Standardizer.fit(x_train.reshape(-1, N_FEATURES))
    y_std = Standardizer.fit(y_train)
    out_dim = y_train.shape[1]
    net = _build_net(kind, out_dim, seed=config.seed)

    def prep_x(x):
        z = x_std.transform(x)
        return z.reshape(len(z), -1) if kind in ("linear", "flat_mlp") else z

    history = train(
        net,
        (prep_x(x_train), y_std.transform(y_train)),
        (prep_x(x_val), y_std.transform(y_val)),
        config,
    )
    return Forecaster(kind, net, x_std, y_std, target, out_dim), history


# ---------------------------------------------------------------------------
# Euler rollout and survival
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RolloutResult:
    episode_id: str
    start: int
    dt: float
    threshold_rad: float
    pred_pos: np.ndarray     # H x 6
    pred_vel: np.ndarray
    pred_acc: np.ndarray
    truth_pos: np.ndarray
    truth_vel: np.ndarray
    truth_acc: np.ndarray
    first_violation: np.ndarray  # per joint, 1-based step; -1 when none
    survival_steps: float

    @property
    def horizon(self) -> int:
        return self.pred_pos.shape[0]


def _survival(err: np.ndarray, threshold: float) -> tuple[np.ndarray, float]:
    H = err.shape[0]
    first = np.full(err.shape[1], -1, dtype=int)
    survival = np.full(err.shape[1], float(H))
    for j in range(err.shape[1]):
        over = np.flatnonzero(err[:, j] > threshold)
        if over.size:
            first[j] = int(over[0]) + 1          # 1-based violating step
            survival[j] = float(over[0])         # steps survived before it
    return first, float(survival.mean())


def euler_rollout(
    model,
    ep: Episode,
    start: int,
    horizon: int,
    threshold_rad: float = 0.01,
    window: int = WINDOW_STEPS,
) -> RolloutResult:
    """Closed-loop rollout of *horizon* steps from the recorded state at *start*.

    At each step t the model sees the window of rows [t-window, t) --
    recorded history before the start, its own predictions after -- and
    returns the acceleration at t; then v_{t+1} = v_t + a_t dt and
    q_{t+1} = q_t + v_t dt.  *model* needs only a ``predict_batch`` method.
    """
    if start < window:
        raise HorizonOverrun(f"start={start} leaves no {window}-step history")
    if start + horizon >= ep.n_steps:
        raise HorizonOverrun(
            f"start={start} + H={horizon} overruns episode of {ep.n_steps} steps"
        )
    dt = 1.0 / ep.rate_hz
    feats = episode_features(ep)
    truth_pos = feats[:, _FB_POS].copy()
    truth_vel = feats[:, _FB_VEL].copy()
    truth_acc = feats[:, _FB_ACC].copy()

    work = feats.copy()
    q = truth_pos[start].copy()
    v = truth_vel[start].copy()
    pred_pos = np.empty((horizon, N_JOINTS))
    pred_vel = np.empty((horizon, N_JOINTS))
    pred_acc = np.empty((horizon, N_JOINTS))
    for k in range(horizon):
        t = start + k
        work[t, _FB_POS] = q
        work[t, _FB_VEL] = v
        a = np.asarray(model.predict_batch(work[t - window:t][None]))[0]
        work[t, _FB_ACC] = a
        v_next = v + a * dt
        q_next = q + v * dt
        pred_pos[k] = q_next
        pred_vel[k] = v_next
        pred_acc[k] = a
        q, v = q_next, v_next

    sl = slice(start + 1, start + 1 + horizon)
    err = np.abs(pred_pos - truth_pos[sl])
    first, survival = _survival(err, threshold_rad)
    return RolloutResult(
        episode_id=ep.episode_id,
        start=start,
        dt=dt,
        threshold_rad=threshold_rad,
        pred_pos=pred_pos,
        pred_vel=pred_vel,
        pred_acc=pred_acc,
        truth_pos=truth_pos[sl].copy(),
        truth_vel=truth_vel[sl].copy(),
        truth_acc=truth_acc[sl].copy(),
        first_violation=first,
        survival_steps=survival,
    )


@dataclass(frozen=True)
class HorizonRow:
    horizon: int
    mse_scaled: float        # x 1e-4 rad^2
    mse_std: float
    mae_scaled: float        # x 1e-2 rad
    mae_std: float
    n_rollouts: int


def horizon_metrics(
    results: Sequence[RolloutResult], horizons: Sequence[int] = (50, 100, 200)
) -> list[HorizonRow]:
    """Position MSE/MAE at each horizon, mean +/- std over rollouts.

    Each horizon is evaluated on the prefix of the same rollout, so a
    shorter horizon recomputed from a longer rollout gives identical rows.
    """
    if not results:
        raise EmptyDataset("no rollouts")
    rows = []
    for h in horizons:
        if any(r.horizon < h for r in results):
            raise HorizonOverrun(f"a rollout is shorter than H={h}")
        mses, maes = [], []
        for r in results:
            err = r.pred_pos[:h] - r.truth_pos[:h]
            mses.append(float(np.mean(err ** 2)))
            maes.append(float(np.mean(np.abs(err))))
        mses, maes = np.asarray(mses), np.asarray(maes)
        rows.append(HorizonRow(
            horizon=int(h),
            mse_scaled=float(mses.mean() * 1e4),
            mse_std=float(mses.std() * 1e4),
            mae_scaled=float(maes.mean() * 1e2),
            mae_std=float(maes.std() * 1e2),
            n_rollouts=len(results),
        ))
    return rows


def survival_curve(results: Sequence[RolloutResult], horizon: int) -> np.ndarray:
    """Fraction of (rollout, joint) trajectories surviving each step 1..H."""
    if not results:
        raise EmptyDataset("no rollouts")
    alive = np.zeros(horizon)
    total = 0
    for r in results:
        for j in range(r.first_violation.size):
            total += 1
            steps = r.horizon if r.first_violation[j] < 0 else r.first_violation[j] - 1
            alive[:min(steps, horizon)] += 1
    return alive / max(total, 1)


# ---------------------------------------------------------------------------
# mean-centered transfer metrics
# ---------------------------------------------------------------------------

def mc_mae(pred: np.ndarray, truth: np.ndarray) -> float:
    """MAE after removing each channel's per-episode mean from both sides.

    Exactly invariant to adding per-channel constants to either argument,
    which is what isolates dynamic shape from static bias.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeMismatch(f"{pred.shape} vs {truth.shape}")
    if pred.ndim == 1:
        pred = pred[:, None]
        truth = truth[:, None]
    centered = (pred - pred.mean(axis=0)) - (truth - truth.mean(axis=0))
    return float(np.mean(np.abs(centered)))


@dataclass(frozen=True)
class TransferReport:
    model_kind: str
    target: str
    mc_mae_mean: float
    ci_halfwidth: float      # normal-approximation 95% CI over episodes
    raw_mae_mean: float
    n_episodes: int
    per_episode: tuple[float, ...]


def transfer_eval(
    model: Forecaster,
    target_episodes: Sequence[Episode],
    target: Optional[str] = None,
    window: int = WINDOW_STEPS,
) -> TransferReport:
    """Zero-shot one-step-ahead evaluation on an unseen embodiment.

    No target-side fitting happens; per-episode MC-MAE is aggregated as
    mean +/- 1.96 std / sqrt(n).
    """
    if not target_episodes:
        raise EmptyDataset("no target episodes")
    target = target or model.target
    mcs, raws = [], []
    for ep in target_episodes:
        x, y = make_windows(ep, target, window)
        pred = model.predict_batch(x)
        mcs.append(mc_mae(pred, y))
        raws.append(float(np.mean(np.abs(pred - y))))
    mcs_arr = np.asarray(mcs)
    half = 1.96 * mcs_arr.std(ddof=1) / np.sqrt(len(mcs)) if len(mcs) > 1 else 0.0
    return TransferReport(
        model_kind=model.kind,
        target=target,
        mc_mae_mean=float(mcs_arr.mean()),
        ci_halfwidth=float(half),
        raw_mae_mean=float(np.mean(raws)),
        n_episodes=len(mcs),
        per_episode=tuple(mcs),
    )


# ---------------------------------------------------------------------------
# CSV reports
# ---------------------------------------------------------------------------

def write_forecast_csv(
    rows_by_model: dict[str, list[HorizonRow]],
    survival_by_model: dict[str, float],
    path: Union[str, Path],
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "horizon", "mse_scaled", "mse_std",
                         "mae_scaled", "mae_std", "survival_steps"])
        for model_kind in sorted(rows_by_model):
            for row in rows_by_model[model_kind]:
                writer.writerow([
                    model_kind, row.horizon,
                    f"{row.mse_scaled:.6f}", f"{row.mse_std:.6f}",
                    f"{row.mae_scaled:.6f}", f"{row.mae_std:.6f}",
                    f"{survival_by_model[model_kind]:.3f}",
                ])
    return path


def write_transfer_csv(reports: Sequence[TransferReport], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "target", "mc_mae", "ci_halfwidth",
                         "raw_mae", "n_episodes"])
        for r in reports:
            writer.writerow([
                r.model_kind, r.target, f"{r.mc_mae_mean:.6f}",
                f"{r.ci_halfwidth:.6f}", f"{r.raw_mae_mean:.6f}", r.n_episodes,
            ])
    return path
