"""Raw table parsing, resampling, gap filling, and canonical episode files.

The canonical on-disk form of an episode is a UTF-8 CSV (first column
``t_s``, one column per canonical channel, floats at 17 significant
digits) plus a YAML sidecar ``<episode_id>.meta.yaml`` holding metadata,
run-length-encoded phase labels, and channel descriptors.  The pipeline
order for raw sources is parse -> apply_adapter -> fill_gaps -> resample.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np
import yaml

from .errors import (
    DegenerateEpisode,
    DuplicateKey,
    EmptyFile,
    ExcessiveMissing,
    RaggedRow,
    SchemaViolation,
)
from .schema import MODELING_ROLES, ChannelDescriptor, Episode, SignalRole

FLOAT_FMT = "{:.17g}"

DEFAULT_NA_TOKENS = ("", "NA", "N/A", "NaN", "nan", "null", "NULL")


@dataclass(frozen=True)
class CsvDialect:
    delimiter: str = ","
    decimal: str = "."
    na_tokens: tuple[str, ...] = DEFAULT_NA_TOKENS


def parse_raw_csv(
    path: Union[str, Path], dialect: CsvDialect = CsvDialect()
) -> dict[str, np.ndarray]:
    """Parse a raw per-episode CSV into named columns.

    Numeric columns come back as float64 arrays with NaN at NA tokens;
    columns with any non-numeric cell come back as object arrays of
    ``str | None``.

    Raises:
        EmptyFile: no header or no data rows.
        RaggedRow: a row whose field count differs from the header
            (carries the 1-based line number).
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter=dialect.delimiter)
        rows = list(reader)
    rows = [r for r in rows if r]  # drop blank lines
    if not rows:
        raise EmptyFile(str(path))
    header = [h.strip() for h in rows[0]]
    data = rows[1:]
    if len(data) < 2:
        raise EmptyFile(f"{path}: needs at least 2 data rows, got {len(data)}")
    n_cols = len(header)
    for line_no, row in enumerate(data, start=2):
        if len(row) != n_cols:
            raise RaggedRow(line_no, n_cols, len(row))

    na = set(dialect.na_tokens)
    table: dict[str, np.ndarray] = {}
    for j, name in enumerate(header):
        cells: list[Optional[str]] = []
        for row in data:
            v = row[j].strip()
            cells.append(None if v in na else v)
        table[name] = _parse_column(cells, dialect.decimal)
    return table


def _parse_column(cells: Sequence[Optional[str]], decimal: str) -> np.ndarray:
    values = np.empty(len(cells), dtype=np.float64)
    for i, cell in enumerate(cells):
        if cell is None:
            values[i] = np.nan
            continue
        s = cell if decimal == "." else cell.replace(decimal, ".")
        try:
            values[i] = float(s)
        except ValueError:
            return np.asarray(cells, dtype=object)
    return values


# ---------------------------------------------------------------------------
# resampling and gap filling
# ---------------------------------------------------------------------------

def resample(ep: Episode, target_hz: float) -> Episode:
    """Linearly interpolate every channel onto a uniform grid at target_hz.

    The new grid starts at t0 with spacing 1/target_hz and never extends
    beyond t_end. Phase labels are carried by the nearest source sample at
    or before each new timestamp (zero-order hold; phases are categorical).
    """
    if target_hz <= 0:
        raise ValueError("target_hz must be positive")
    if ep.n_steps < 2:
        raise DegenerateEpisode(ep.episode_id)

    t0, t_end = ep.t[0], ep.t[-1]
    n_new = int(np.floor((t_end - t0) * target_hz + 1e-9)) + 1
    if n_new < 2:
        raise DegenerateEpisode(f"{ep.episode_id}: span too short for {target_hz} Hz")
    t_new = t0 + np.arange(n_new, dtype=np.float64) / target_hz

    channels = np.empty((n_new, ep.n_channels), dtype=np.float64)
    for j in range(ep.n_channels):
        channels[:, j] = np.interp(t_new, ep.t, ep.channels[:, j])

    left_idx = np.clip(np.searchsorted(ep.t, t_new + 1e-12, side="right") - 1, 0, None)
    phase = np.asarray(ep.phase)[left_idx]

    return Episode(
        episode_id=ep.episode_id,
        source_id=ep.source_id,
        embodiment=ep.embodiment,
        task=ep.task,
        rate_hz=target_hz,
        t=t_new,
        channels=channels,
        descriptors=ep.descriptors,
        phase=phase,
        fault=ep.fault,
        healthy=ep.healthy,
    )


def fill_gaps(ep: Episode, max_missing_fraction: float = 0.001) -> Episode:
    """Fill sensor dropouts (NaN cells) by linear interpolation.

    Interior runs are interpolated between the nearest valid neighbors;
    leading/trailing runs take the nearest valid value.  Channels with a
    modeling role whose missing fraction exceeds *max_missing_fraction*
    raise ExcessiveMissing; all-NaN carrier channels (e.g. a string label
    column coerced to NaN) are left untouched.  Idempotent.
    """
    channels = np.array(ep.channels, dtype=np.float64)
    T = ep.n_steps
    for j, desc in enumerate(ep.descriptors):
        col = channels[:, j]
        missing = ~np.isfinite(col)
        n_missing = int(missing.sum())
        if n_missing == 0:
            continue
        fraction = n_missing / T
        if n_missing == T:
            if desc.role in MODELING_ROLES:
                raise ExcessiveMissing(desc.canonical_name, 1.0)
            continue
        if fraction > max_missing_fraction:
            raise ExcessiveMissing(desc.canonical_name, fraction)
        valid = ~missing
        # np.interp extends with edge values, which is exactly the
        # leading/trailing nearest-value rule.
        channels[missing, j] = np.interp(
            ep.t[missing], ep.t[valid], col[valid]
        )
    return ep.replace(channels=channels)


# ---------------------------------------------------------------------------
# canonical episode files
# ---------------------------------------------------------------------------

def encode_phase_rle(phase: Iterable[str]) -> list[list]:
    runs: list[list] = []
    for label in phase:
        label = str(label)
        if runs and runs[-1][0] == label:
            runs[-1][1] += 1
        else:
            runs.append([label, 1])
    return runs


def decode_phase_rle(rle: Sequence[Sequence], n_steps: int) -> np.ndarray:
    labels: list[str] = []
    for entry in rle:
        if len(entry) != 2:
            raise SchemaViolation(f"bad phase RLE entry: {entry!r}")
        label, count = str(entry[0]), int(entry[1])
        if count < 1:
            raise SchemaViolation(f"phase RLE count must be >= 1, got {count}")
        labels.extend([label] * count)
    if len(labels) != n_steps:
        raise SchemaViolation(
            f"phase RLE decodes to {len(labels)} labels for T={n_steps}"
        )
    return np.asarray(labels)


def sidecar_path_for(csv_path: Union[str, Path]) -> Path:
    csv_path = Path(csv_path)
    return csv_path.with_name(csv_path.stem + ".meta.yaml")


def write_canonical(ep: Episode, out_dir: Union[str, Path]) -> tuple[Path, Path]:
    """Write an episode as ``<id>.csv`` + ``<id>.meta.yaml`` under out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{ep.episode_id}.csv"
    sidecar = sidecar_path_for(csv_path)

    names = ["t_s"] + list(ep.channel_names)
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(names) + "\n")
        for i in range(ep.n_steps):
            row = [FLOAT_FMT.format(ep.t[i])]
            row.extend(FLOAT_FMT.format(v) for v in ep.channels[i])
            fh.write(",".join(row) + "\n")

    meta = {
        "episode_id": ep.episode_id,
        "source_id": ep.source_id,
        "embodiment": ep.embodiment,
        "task": ep.task,
        "rate_hz": float(ep.rate_hz),
        "fault": ep.fault,
        "healthy": bool(ep.healthy),
        "phase_rle": encode_phase_rle(ep.phase),
        "channels": [
            {
                "name": d.canonical_name,
                "role": d.role.value,
                "unit": d.unit,
                "axis": d.axis,
            }
            for d in ep.descriptors
        ],
    }
    with open(sidecar, "w", encoding="utf-8") as fh:
        yaml.safe_dump(meta, fh, sort_keys=False, default_flow_style=False)
    return csv_path, sidecar


def read_canonical(
    csv_path: Union[str, Path], sidecar: Union[str, Path, None] = None
) -> Episode:
    """Read a canonical episode, validating all invariants.

    Raises SchemaViolation when the data file and sidecar disagree or the
    decoded episode breaks an invariant.
    """
    csv_path = Path(csv_path)
    sidecar = Path(sidecar) if sidecar is not None else sidecar_path_for(csv_path)
    with open(sidecar, "r", encoding="utf-8") as fh:
        meta = yaml.safe_load(fh)
    if not isinstance(meta, dict):
        raise SchemaViolation(f"{sidecar}: sidecar is not a mapping")

    try:
        descs = tuple(
            ChannelDescriptor(
                canonical_name=str(c["name"]),
                role=SignalRole(str(c["role"])),
                unit=str(c["unit"]),
                axis=None if c.get("axis") is None else int(c["axis"]),
            )
            for c in meta["channels"]
        )
        episode_id = str(meta["episode_id"])
        source_id = str(meta["source_id"])
        embodiment = str(meta["embodiment"])
        task = str(meta["task"])
        rate_hz = float(meta["rate_hz"])
        fault = meta.get("fault")
        fault = None if fault is None else str(fault)
        healthy = bool(meta["healthy"])
        rle = meta["phase_rle"]
    except (KeyError, ValueError, TypeError) as exc:
        raise SchemaViolation(f"{sidecar}: {exc!r}") from exc

    with open(csv_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        raise SchemaViolation(f"{csv_path}: empty data file")
    header = rows[0]
    if not header or header[0] != "t_s":
        raise SchemaViolation(f"{csv_path}: first column must be t_s")
    if tuple(header[1:]) != tuple(d.canonical_name for d in descs):
        raise SchemaViolation(
            f"{csv_path}: data columns do not match sidecar channel list"
        )
    n_cols = len(header)
    data = rows[1:]
    t = np.empty(len(data), dtype=np.float64)
    channels = np.empty((len(data), n_cols - 1), dtype=np.float64)
    for i, row in enumerate(data):
        if len(row) != n_cols:
            raise SchemaViolation(f"{csv_path}: row {i + 2} has {len(row)} fields")
        try:
            t[i] = float(row[0])
            for j in range(1, n_cols):
                channels[i, j - 1] = float(row[j])
        except ValueError as exc:
            raise SchemaViolation(f"{csv_path}: row {i + 2}: {exc}") from exc

    phase = decode_phase_rle(rle, len(data))
    return Episode(
        episode_id=episode_id,
        source_id=source_id,
        embodiment=embodiment,
        task=task,
        rate_hz=rate_hz,
        t=t,
        channels=channels,
        descriptors=descs,
        phase=phase,
        fault=fault,
        healthy=healthy,
    )


def read_episode_dir(directory: Union[str, Path]) -> list[Episode]:
    """Read every canonical episode under a directory (sorted by filename)."""
    directory = Path(directory)
    return [read_canonical(p) for p in sorted(directory.glob("*.csv"))]


# ---------------------------------------------------------------------------
# pairing real and simulated episodes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EpisodePair:
    real: Episode
    sim: Episode
    pair_key: str

    def __post_init__(self):
        if self.real.task != self.sim.task:
            raise SchemaViolation(
                f"pair {self.pair_key!r}: task mismatch "
                f"({self.real.task} vs {self.sim.task})"
            )


@dataclass(frozen=True)
class UnpairedReport:
    real_only: tuple[str, ...] = ()
    sim_only: tuple[str, ...] = ()


_PAIR_SUFFIXES = ("_twin", "_sim", "_real")


def default_pair_key(ep: Episode) -> str:
    key = ep.episode_id
    for suffix in _PAIR_SUFFIXES:
        if key.endswith(suffix):
            return key[: -len(suffix)]
    return key


def pair_episodes(
    real_set: Sequence[Episode],
    sim_set: Sequence[Episode],
    key_fn: Callable[[Episode], str] = default_pair_key,
) -> tuple[list[EpisodePair], UnpairedReport]:
    """Match real and simulated episodes on a shared naming key.

    Raises DuplicateKey when a key repeats within one set; keys present on
    only one side land in the unpaired report.
    """
    def index(eps: Sequence[Episode], set_name: str) -> dict[str, Episode]:
        out: dict[str, Episode] = {}
        for ep in eps:
            key = key_fn(ep)
            if key in out:
                raise DuplicateKey(set_name, key)
            out[key] = ep
        return out

    real_by_key = index(real_set, "real")
    sim_by_key = index(sim_set, "sim")
    common = sorted(set(real_by_key) & set(sim_by_key))
    pairs = [EpisodePair(real_by_key[k], sim_by_key[k], k) for k in common]
    report = UnpairedReport(
        real_only=tuple(sorted(set(real_by_key) - set(sim_by_key))),
        sim_only=tuple(sorted(set(sim_by_key) - set(real_by_key))),
    )
    return pairs, report
