"""Batch command-line surface: generate, ingest, train, score, evaluate, report.

Every run writes a manifest next to its outputs.  Config precedence is
CLI flag > config file > built-in default.  Exit codes: 0 on success, 2
for configuration/usage errors, 1 for operational failures.  The env var
``SEFC_LOG`` sets the log level.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__, anomaly, forecast, gap, ingest, synthgen
from .errors import SchemaViolation, SefcError, UnsupportedFault
from .nnkit import TrainConfig
from .schema import BUILTIN_ADAPTER_IDS, EpisodeMeta, apply_adapter, builtin_adapter, load_adapter

log = logging.getLogger("sefc")


def _write_manifest(out_dir: Path, command: str, args: argparse.Namespace,
                    inputs: list[str], outputs: list[str], wall_time_s: float) -> None:
    manifest = {
        "command": command,
        "config": getattr(args, "config", None),
        "seed": getattr(args, "seed", None),
        "inputs": inputs,
        "outputs": outputs,
        "tool_version": __version__,
        "wall_time_s": round(wall_time_s, 3),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "manifest.yaml", "w", encoding="utf-8") as fh:
        yaml.safe_dump(manifest, fh, sort_keys=False)


def _train_config(args: argparse.Namespace, **overrides) -> TrainConfig:
    kwargs = dict(
        lr0=args.lr,
        batch_size=args.batch_size,
        max_epochs=args.epochs,
        patience=min(args.patience, args.epochs),
        seed=args.seed,
    )
    kwargs.update(overrides)
    return TrainConfig(**kwargs)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_generate(args: argparse.Namespace) -> int:
    t0 = time.time()
    if args.config:
        loaded = synthgen.load_generation_config(args.config)
        config = loaded["config"]
        n_healthy = loaded["n_healthy"] if args.n_healthy is None else args.n_healthy
        fault_mix = loaded["fault_mix"]
        seed = loaded["seed"] if args.seed is None else args.seed
    else:
        config = synthgen.RandomizationConfig()
        n_healthy = args.n_healthy if args.n_healthy is not None else 10
        fault_mix = {}
        seed = args.seed if args.seed is not None else 0
    if args.fault_mix:
        fault_mix = {}
        for part in args.fault_mix.split(","):
            name, _, count = part.partition("=")
            fault_mix[name.strip()] = int(count)
    args.seed = seed

    errors = config.validate()
    if errors:
        raise SchemaViolation("; ".join(errors))
    for name in fault_mix:
        if name not in synthgen.INJECTABLE_FAULTS:
            raise UnsupportedFault(name)

    episodes = synthgen.generate_corpus(
        n_healthy, fault_mix, seed, config, noise=not args.no_noise
    )
    out = Path(args.out)
    ep_dir = out / "episodes"
    written = []
    for ep in episodes:
        csv_path, _ = ingest.write_canonical(ep, ep_dir)
        written.append(csv_path.name)
    _write_manifest(out, "generate", args, inputs=[],
                    outputs=sorted(written), wall_time_s=time.time() - t0)
    print(f"generated {len(episodes)} episodes -> {ep_dir}")
    return 0


def cmd_ingest(args: argparse.Namespace) -> int:
    t0 = time.time()
    adapter_arg = args.adapter
    if adapter_arg in BUILTIN_ADAPTER_IDS:
        adapter = builtin_adapter(adapter_arg)
    elif Path(adapter_arg).exists():
        adapter = load_adapter(adapter_arg)
    else:
        raise SchemaViolation(
            f"unknown adapter {adapter_arg!r}; built-ins: {', '.join(BUILTIN_ADAPTER_IDS)}"
        )

    dialect = ingest.CsvDialect(
        delimiter=args.dialect_delimiter,
        decimal=args.dialect_decimal,
        na_tokens=tuple(args.dialect_na.split("|")) if args.dialect_na else ingest.DEFAULT_NA_TOKENS,
    )
    raw_dir = Path(args.raw_dir)
    files = sorted(raw_dir.glob("*.csv"))
    out = Path(args.out)
    ep_dir = out / "episodes"
    written, failures = [], []
    for path in files:
        try:
            table = ingest.parse_raw_csv(path, dialect)
            meta = EpisodeMeta(
                episode_id=path.stem,
                embodiment=args.embodiment or adapter.source_id,
                task=args.task,
                phase_column=args.phase_column,
            )
            ep = apply_adapter(table, adapter, meta,
                               allow_missing=args.allow_missing.split(",") if args.allow_missing else ())
            ep = ingest.fill_gaps(ep, args.max_missing_fraction)
            if abs(ep.rate_hz - args.rate_hz) > 1e-12:
                ep = ingest.resample(ep, args.rate_hz)
            csv_path, _ = ingest.write_canonical(ep, ep_dir)
            written.append(csv_path.name)
        except (SefcError, OSError) as exc:
            log.error("%s: %s", path.name, exc)
            failures.append(f"{path.name}: {exc}")
    _write_manifest(out, "ingest", args,
                    inputs=[str(p.name) for p in files],
                    outputs=sorted(written), wall_time_s=time.time() - t0)
    print(f"ingested {len(written)}/{len(files)} files -> {ep_dir}")
    if failures:
        print("failures:", *failures, sep="\n  ", file=sys.stderr)
        return 1
    return 0


def cmd_train_anomaly(args: argparse.Namespace) -> int:
    t0 = time.time()
    episodes = ingest.read_episode_dir(args.data)
    config = _train_config(args)
    model, history = anomaly.train_anomaly_model(episodes, config=config)
    out = Path(args.out)
    ckpt = model.save(out / "anomaly_model.ckpt")
    hist_path = out / "train_history.csv"
    with open(hist_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for e, (tr, va, lr) in enumerate(
            zip(history.train_loss, history.val_loss, history.lr)
        ):
            writer.writerow([e, f"{tr:.12g}", f"{va:.12g}", f"{lr:.12g}"])
    _write_manifest(out, "train-anomaly", args, inputs=[str(args.data)],
                    outputs=[ckpt.name, hist_path.name], wall_time_s=time.time() - t0)
    print(f"trained {history.n_epochs} epochs, best epoch {history.best_epoch} -> {ckpt}")
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    t0 = time.time()
    model = anomaly.AnomalyModel.load(args.model)
    episodes = ingest.read_episode_dir(args.data)
    scored = anomaly.score_episodes(model, episodes)
    out = Path(args.out)
    scores_path = anomaly.write_scores_csv(scored, out / "scores.csv")
    outputs = [scores_path.name]
    if any(s.is_anomalous for s in scored) and any(not s.is_anomalous for s in scored):
        report = anomaly.per_category_report(scored, seed=args.seed or 0)
        outputs.append(anomaly.write_report_csv(report, out / "anomaly_report.csv").name)
        outputs.append(
            anomaly.write_report_summary(report, out / "anomaly_summary.yaml").name
        )
    _write_manifest(out, "score", args, inputs=[str(args.data)],
                    outputs=outputs, wall_time_s=time.time() - t0)
    print(f"scored {len(scored)} episodes -> {scores_path}")
    return 0


def cmd_eval_forecast(args: argparse.Namespace) -> int:
    t0 = time.time()
    episodes = [ep for ep in ingest.read_episode_dir(args.data) if ep.healthy]
    if len(episodes) < 3:
        raise SchemaViolation("eval-forecast needs at least 3 healthy episodes")
    horizons = sorted(int(h) for h in args.horizon.split(","))
    h_max = horizons[-1]
    kinds = [k.strip() for k in args.models.split(",")]
    for kind in kinds:
        if kind not in forecast.MODEL_KINDS:
            raise SchemaViolation(f"unknown model kind {kind!r}")

    n_eval = max(1, len(episodes) // 5)
    train_eps, eval_eps = episodes[:-n_eval], episodes[-n_eval:]
    start = args.start
    for ep in eval_eps:
        if start + h_max >= ep.n_steps:
            raise SchemaViolation(
                f"episode {ep.episode_id} too short for start={start}, H={h_max}"
            )

    rows_by_model: dict[str, list[forecast.HorizonRow]] = {}
    survival_by_model: dict[str, float] = {}
    curves: dict[str, np.ndarray] = {}
    for kind in kinds:
        model, _ = forecast.train_forecaster(
            train_eps, kind, target="accel",
            config=_train_config(args, optimizer="adamw"),
        )
        results = [
            forecast.euler_rollout(model, ep, start, h_max, args.threshold)
            for ep in eval_eps
        ]
        rows_by_model[kind] = forecast.horizon_metrics(results, horizons)
        survival_by_model[kind] = float(np.mean([r.survival_steps for r in results]))
        curves[kind] = forecast.survival_curve(results, h_max)

    out = Path(args.out)
    report_path = forecast.write_forecast_csv(rows_by_model, survival_by_model,
                                              out / "forecast_report.csv")
    curve_path = out / "survival_curve.csv"
    with open(curve_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "step", "fraction_surviving"])
        for kind in sorted(curves):
            for step, frac in enumerate(curves[kind], start=1):
                writer.writerow([kind, step, f"{frac:.6f}"])
    _write_manifest(out, "eval-forecast", args, inputs=[str(args.data)],
                    outputs=[report_path.name, curve_path.name],
                    wall_time_s=time.time() - t0)
    print(f"evaluated {kinds} at H={horizons} -> {report_path}")
    return 0


def cmd_eval_transfer(args: argparse.Namespace) -> int:
    t0 = time.time()
    source = [ep for ep in ingest.read_episode_dir(args.train_data) if ep.healthy]
    target = ingest.read_episode_dir(args.eval_data)
    kinds = [k.strip() for k in args.models.split(",")]
    reports = []
    for kind in kinds:
        model, _ = forecast.train_forecaster(
            source, kind, target=args.channel_set,
            config=_train_config(args, optimizer="adamw"),
        )
        reports.append(forecast.transfer_eval(model, target, args.channel_set))
    out = Path(args.out)
    path = forecast.write_transfer_csv(reports, out / "transfer_report.csv")
    _write_manifest(out, "eval-transfer", args,
                    inputs=[str(args.train_data), str(args.eval_data)],
                    outputs=[path.name], wall_time_s=time.time() - t0)
    print(f"transfer report -> {path}")
    return 0


def cmd_gap(args: argparse.Namespace) -> int:
    t0 = time.time()
    real = ingest.read_episode_dir(args.real_dir)
    sim = ingest.read_episode_dir(args.sim_dir)
    pairs, unpaired = ingest.pair_episodes(real, sim)
    per_pair = [gap.pair_metrics(gap.phase_align(p)) for p in pairs]
    summary = gap.batch_summary(per_pair)
    out = Path(args.out)
    pair_path = gap.write_pair_metrics_csv(per_pair, out / "gap_pairs.csv")
    summary_path = gap.write_summary_csv(summary, out / "gap_summary.csv")
    _write_manifest(out, "gap", args, inputs=[str(args.real_dir), str(args.sim_dir)],
                    outputs=[pair_path.name, summary_path.name],
                    wall_time_s=time.time() - t0)
    if unpaired.real_only or unpaired.sim_only:
        print(f"unpaired: real={list(unpaired.real_only)} sim={list(unpaired.sim_only)}")
    print(f"gap summary over {summary.n_pairs} pairs -> {summary_path}")
    return 0


_REPORT_SECTIONS = (
    ("anomaly", "anomaly_report.csv"),
    ("forecast", "forecast_report.csv"),
    ("transfer", "transfer_report.csv"),
    ("gap", "gap_summary.csv"),
)


def cmd_report(args: argparse.Namespace) -> int:
    t0 = time.time()
    in_dir = Path(args.in_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    merged = out / "summary.csv"
    n_sections = 0
    with open(merged, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["section", "row"])
        for section, filename in _REPORT_SECTIONS:
            path = in_dir / filename
            if not path.exists():
                continue
            n_sections += 1
            for line in path.read_text(encoding="utf-8").splitlines():
                writer.writerow([section, line])
    _write_manifest(out, "report", args, inputs=[str(in_dir)],
                    outputs=[merged.name], wall_time_s=time.time() - t0)
    print(f"merged {n_sections} report sections -> {merged}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_train_flags(p: argparse.ArgumentParser, epochs: int, lr: float,
                     batch_size: int, patience: int) -> None:
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--lr", type=float, default=lr)
    p.add_argument("--batch-size", type=int, default=batch_size)
    p.add_argument("--patience", type=int, default=patience)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sefc",
        description="Control-loop telemetry toolkit: generation, ingestion, evaluation.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="generation config YAML")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n-healthy", type=int, default=None)
    p.add_argument("--fault-mix", default=None, help="e.g. additional_axis_payload=20")
    p.add_argument("--no-noise", action="store_true")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("ingest", help="adapt raw CSVs into canonical episodes")
    p.add_argument("--raw-dir", required=True)
    p.add_argument("--adapter", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rate-hz", type=float, default=100.0)
    p.add_argument("--task", default="pick_and_place")
    p.add_argument("--embodiment", default=None)
    p.add_argument("--phase-column", default=None)
    p.add_argument("--allow-missing", default=None, help="comma-separated raw names")
    p.add_argument("--max-missing-fraction", type=float, default=0.001)
    p.add_argument("--dialect-delimiter", default=",")
    p.add_argument("--dialect-decimal", default=".")
    p.add_argument("--dialect-na", default=None, help="pipe-separated NA tokens")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train-anomaly", help="train the setpoint->effort regressor")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_train_flags(p, epochs=60, lr=5e-4, batch_size=4096, patience=30)
    p.set_defaults(func=cmd_train_anomaly)

    p = sub.add_parser("score", help="score episodes with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval-forecast", help="rollout evaluation of the forecaster zoo")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--models", default=",".join(forecast.MODEL_KINDS))
    p.add_argument("--horizon", default="50,100,200")
    p.add_argument("--start", type=int, default=10)
    p.add_argument("--threshold", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    _add_train_flags(p, epochs=30, lr=1e-4, batch_size=1024, patience=30)
    p.set_defaults(func=cmd_eval_forecast)

    p = sub.add_parser("eval-transfer", help="zero-shot cross-embodiment evaluation")
    p.add_argument("--train-data", required=True)
    p.add_argument("--eval-data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--models", default="kinematic_zero,tcn_transformer")
    p.add_argument("--channel-set", choices=("effort", "accel"), default="effort")
    p.add_argument("--seed", type=int, default=0)
    _add_train_flags(p, epochs=30, lr=1e-4, batch_size=1024, patience=30)
    p.set_defaults(func=cmd_eval_transfer)

    p = sub.add_parser("gap", help="phase-aware gap metrics over episode pairs")
    p.add_argument("--real-dir", required=True)
    p.add_argument("--sim-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gap)

    p = sub.add_parser("report", help="merge report CSVs into one summary")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("SEFC_LOG", "WARNING"))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SchemaViolation, UnsupportedFault, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SefcError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
