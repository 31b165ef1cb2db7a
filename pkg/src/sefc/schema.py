"""Signal taxonomy, adapter specifications, and canonical episodes.

Every raw telemetry column is assigned one of four modeling roles --
Setpoint (commanded intent), Effort (actuation energy), Feedback (measured
outcome), Context (environmental/static state) -- or one of three carrier
roles (Metadata, Auxiliary, RawLabel) that are stored but never fed to
models by default.  Adapters are declarative: each source ships a config
file mapping its raw column names onto canonical names, and the mapping is
applied mechanically.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np
import yaml

from .errors import MissingRawColumn, NonNumericColumn, SchemaViolation

TASKS = ("pick_and_place", "screwdriving", "peg_in_hole", "machining")

_SNAKE_RE = re.compile(r"^[a-z][a-z0-9_]*$")


class SignalRole(Enum):
    SETPOINT = "setpoint"
    EFFORT = "effort"
    FEEDBACK = "feedback"
    CONTEXT = "context"
    METADATA = "metadata"
    AUXILIARY = "auxiliary"
    RAW_LABEL = "raw_label"


#: Roles that are eligible as model inputs/outputs.
MODELING_ROLES = frozenset(
    {SignalRole.SETPOINT, SignalRole.EFFORT, SignalRole.FEEDBACK, SignalRole.CONTEXT}
)

#: Roles where every cell must parse as a number.
NUMERIC_ROLES = frozenset(
    {SignalRole.SETPOINT, SignalRole.EFFORT, SignalRole.FEEDBACK}
)


@dataclass(frozen=True)
class SignalSpec:
    """One raw-column -> canonical-channel mapping row."""

    raw_name: str
    canonical_name: str
    role: Optional[SignalRole]
    unit: str
    axis: Optional[int] = None
    notes: str = ""


@dataclass(frozen=True)
class AdapterSpec:
    """Declarative mapping for one data source."""

    source_id: str
    native_rate_hz: float
    signals: tuple[SignalSpec, ...]
    absent_channels: tuple[str, ...] = ()
    notes: str = ""

    def signal_for_raw(self, raw_name: str) -> Optional[SignalSpec]:
        for sig in self.signals:
            if sig.raw_name == raw_name:
                return sig
        return None

    def signal_for_canonical(self, canonical: str) -> Optional[SignalSpec]:
        for sig in self.signals:
            if sig.canonical_name == canonical:
                return sig
        return None


@dataclass(frozen=True)
class ChannelDescriptor:
    """Per-channel header carried inside an Episode."""

    canonical_name: str
    role: SignalRole
    unit: str
    axis: Optional[int] = None

    @classmethod
    def from_signal(cls, sig: SignalSpec) -> "ChannelDescriptor":
        if sig.role is None:
            raise SchemaViolation(f"signal {sig.raw_name!r} has no role")
        return cls(sig.canonical_name, sig.role, sig.unit, sig.axis)


@dataclass(frozen=True)
class ValidationFinding:
    code: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple[ValidationFinding, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.findings

    def __str__(self) -> str:
        if self.ok:
            return "valid"
        return "\n".join(f"[{f.code}] {f.message}" for f in self.findings)


@dataclass(frozen=True, eq=False)
class Episode:
    """A uniformly sampled multichannel recording of one task execution.

    Invariants are checked at construction: at least two samples, matching
    channel/descriptor counts, uniform time base within 1e-9 s of
    ``1/rate_hz``, and ``healthy`` consistent with ``fault``.  Arrays are
    made read-only; episodes are safe to share across threads.
    """

    episode_id: str
    source_id: str
    embodiment: str
    task: str
    rate_hz: float
    t: np.ndarray
    channels: np.ndarray
    descriptors: tuple[ChannelDescriptor, ...]
    phase: np.ndarray
    fault: Optional[str] = None
    healthy: bool = True

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64)
        channels = np.asarray(self.channels, dtype=np.float64)
        phase = np.asarray(self.phase)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "phase", phase)
        object.__setattr__(self, "descriptors", tuple(self.descriptors))

        if self.task not in TASKS:
            raise SchemaViolation(f"unknown task {self.task!r}")
        if self.rate_hz <= 0:
            raise SchemaViolation("rate_hz must be positive")
        if t.ndim != 1 or t.shape[0] < 2:
            raise SchemaViolation("episode needs at least 2 timestamps")
        if channels.ndim != 2 or channels.shape[0] != t.shape[0]:
            raise SchemaViolation(
                f"channels shape {channels.shape} does not match T={t.shape[0]}"
            )
        if channels.shape[1] < 1:
            raise SchemaViolation("episode needs at least one channel")
        if len(self.descriptors) != channels.shape[1]:
            raise SchemaViolation(
                f"{len(self.descriptors)} descriptors for {channels.shape[1]} channels"
            )
        if phase.shape != t.shape:
            raise SchemaViolation("phase vector length must equal T")
        dt = np.diff(t)
        if dt.min() <= 0:
            raise SchemaViolation("timestamps must be strictly increasing")
        if np.abs(dt - 1.0 / self.rate_hz).max() > 1e-9:
            raise SchemaViolation("time base is not uniform at 1/rate_hz within 1e-9 s")
        if self.healthy != (self.fault is None):
            raise SchemaViolation("healthy flag inconsistent with fault field")

        for arr in (t, channels):
            arr.setflags(write=False)

    # -- convenience accessors ------------------------------------------

    @property
    def n_steps(self) -> int:
        return self.t.shape[0]

    @property
    def n_channels(self) -> int:
        return self.channels.shape[1]

    @property
    def channel_names(self) -> tuple[str, ...]:
        return tuple(d.canonical_name for d in self.descriptors)

    def channel_index(self, canonical_name: str) -> int:
        for i, d in enumerate(self.descriptors):
            if d.canonical_name == canonical_name:
                return i
        raise KeyError(canonical_name)

    def has_channel(self, canonical_name: str) -> bool:
        return any(d.canonical_name == canonical_name for d in self.descriptors)

    def channel(self, canonical_name: str) -> np.ndarray:
        return self.channels[:, self.channel_index(canonical_name)]

    def replace(self, **kwargs) -> "Episode":
        """Copy with some fields replaced (re-validates invariants)."""
        return replace(self, **kwargs)


@dataclass(frozen=True)
class EpisodeMeta:
    """Caller-supplied metadata attached when adapting a raw table."""

    episode_id: str
    embodiment: str
    task: str
    fault: Optional[str] = None
    phase_column: Optional[str] = None
    start_time_s: float = 0.0


# ---------------------------------------------------------------------------
# adapter validation
# ---------------------------------------------------------------------------

def validate_adapter(spec: AdapterSpec) -> ValidationReport:
    """Check an adapter spec for structural problems.

    Never raises: returns a report listing duplicate raw/canonical names,
    malformed axis suffixes, non-snake-case canonical names, missing
    roles/units, and absent-channel overlaps.  The adapter is valid iff
    the report is empty.
    """
    findings: list[ValidationFinding] = []

    seen_raw: set[str] = set()
    seen_canon: set[str] = set()
    for sig in spec.signals:
        if sig.raw_name in seen_raw:
            findings.append(
                ValidationFinding("duplicate-raw", f"raw name {sig.raw_name!r} mapped twice")
            )
        seen_raw.add(sig.raw_name)
        if sig.canonical_name in seen_canon:
            findings.append(
                ValidationFinding(
                    "duplicate-canonical",
                    f"canonical name {sig.canonical_name!r} assigned twice",
                )
            )
        seen_canon.add(sig.canonical_name)

        if not _SNAKE_RE.match(sig.canonical_name):
            findings.append(
                ValidationFinding(
                    "bad-canonical-name",
                    f"{sig.canonical_name!r} is not lowercase snake case",
                )
            )
        if sig.axis is not None:
            if sig.axis < 0:
                findings.append(
                    ValidationFinding("bad-axis", f"{sig.canonical_name!r}: axis must be >= 0")
                )
            elif not sig.canonical_name.endswith(f"_{sig.axis}"):
                findings.append(
                    ValidationFinding(
                        "malformed-axis-suffix",
                        f"{sig.canonical_name!r} does not end in _{sig.axis}",
                    )
                )
        if sig.role is None:
            findings.append(
                ValidationFinding("missing-role", f"{sig.raw_name!r} has no role")
            )
        if not sig.unit:
            findings.append(
                ValidationFinding("missing-unit", f"{sig.raw_name!r} has no unit")
            )

    if spec.native_rate_hz <= 0:
        findings.append(ValidationFinding("bad-rate", "native_rate_hz must be positive"))

    overlap = set(spec.absent_channels) & seen_canon
    for name in sorted(overlap):
        findings.append(
            ValidationFinding(
                "absent-overlap", f"{name!r} both mapped and declared absent"
            )
        )

    return ValidationReport(tuple(findings))


# ---------------------------------------------------------------------------
# applying adapters to raw tables
# ---------------------------------------------------------------------------

_BOOL_WORDS = {"true": 1.0, "false": 0.0, "yes": 1.0, "no": 0.0}


def _coerce_cell(value) -> float:
    """Best-effort numeric coercion for non-modeling-role cells."""
    if value is None:
        return np.nan
    if isinstance(value, (int, float, np.floating, np.integer)):
        return float(value)
    s = str(value).strip()
    if not s:
        return np.nan
    low = s.lower()
    if low in _BOOL_WORDS:
        return _BOOL_WORDS[low]
    try:
        return float(s)
    except ValueError:
        return np.nan


def _column_as_floats(name: str, col: np.ndarray, role: SignalRole) -> np.ndarray:
    if col.dtype.kind == "f":
        return col.astype(np.float64)
    out = np.empty(len(col), dtype=np.float64)
    if role in NUMERIC_ROLES:
        for i, v in enumerate(col):
            if v is None:
                out[i] = np.nan
                continue
            try:
                out[i] = float(v)
            except (TypeError, ValueError):
                raise NonNumericColumn(name, f"row {i}: {v!r}") from None
    else:
        for i, v in enumerate(col):
            out[i] = _coerce_cell(v)
    return out


def apply_adapter(
    raw_table: Mapping[str, np.ndarray],
    spec: AdapterSpec,
    meta: EpisodeMeta,
    allow_missing: Iterable[str] = (),
) -> Episode:
    """Map a raw named-column table into a canonical episode.

    Output channels are exactly the mapped columns in spec order, renamed
    to canonical names; unmapped raw columns are dropped.  Raw columns in
    *allow_missing* may be absent (they are then omitted from the output).
    Deterministic: identical inputs yield bit-identical episodes.

    Raises:
        MissingRawColumn: a mapped column is absent and not allow-missing.
        NonNumericColumn: a Setpoint/Effort/Feedback column fails to parse.
        SchemaViolation: the adapter spec itself is invalid.
    """
    report = validate_adapter(spec)
    if not report.ok:
        raise SchemaViolation(f"adapter {spec.source_id!r} invalid:\n{report}")

    allow = set(allow_missing)
    cols: list[np.ndarray] = []
    descs: list[ChannelDescriptor] = []
    n_rows = None
    for sig in spec.signals:
        if sig.raw_name not in raw_table:
            if sig.raw_name in allow:
                continue
            raise MissingRawColumn(sig.raw_name)
        raw = np.asarray(raw_table[sig.raw_name])
        if n_rows is None:
            n_rows = len(raw)
        cols.append(_column_as_floats(sig.raw_name, raw, sig.role))
        descs.append(ChannelDescriptor.from_signal(sig))

    if n_rows is None:
        raise SchemaViolation("adapter maps no columns present in the table")

    phase: np.ndarray
    if meta.phase_column is not None and meta.phase_column in raw_table:
        phase = np.asarray(
            [("unknown" if v is None else str(v)) for v in raw_table[meta.phase_column]]
        )
    else:
        phase = np.full(n_rows, "unknown", dtype=object)
        phase = np.asarray(phase, dtype=str)

    t = meta.start_time_s + np.arange(n_rows, dtype=np.float64) / spec.native_rate_hz
    return Episode(
        episode_id=meta.episode_id,
        source_id=spec.source_id,
        embodiment=meta.embodiment,
        task=meta.task,
        rate_hz=spec.native_rate_hz,
        t=t,
        channels=np.column_stack(cols),
        descriptors=tuple(descs),
        phase=phase,
        fault=meta.fault,
        healthy=meta.fault is None,
    )


# ---------------------------------------------------------------------------
# role-based selection
# ---------------------------------------------------------------------------

def select_signals(
    ep: Episode,
    role: SignalRole,
    name_prefix: Union[str, Sequence[str], None] = None,
) -> tuple[np.ndarray, list[ChannelDescriptor]]:
    """Select channels by role and optional canonical-name prefix(es).

    With multiple prefixes the result is ordered by (prefix group, axis);
    without prefixes, episode column order is kept.  k may be 0.
    """
    if name_prefix is None:
        idx = [i for i, d in enumerate(ep.descriptors) if d.role == role]
        descs = [ep.descriptors[i] for i in idx]
        return ep.channels[:, idx] if idx else np.empty((ep.n_steps, 0)), descs

    prefixes = [name_prefix] if isinstance(name_prefix, str) else list(name_prefix)
    picked: list[tuple[int, float, str, int]] = []
    for i, d in enumerate(ep.descriptors):
        if d.role != role:
            continue
        for g, pre in enumerate(prefixes):
            if d.canonical_name.startswith(pre):
                ax = float(d.axis) if d.axis is not None else float("inf")
                picked.append((g, ax, d.canonical_name, i))
                break
    picked.sort()
    idx = [p[3] for p in picked]
    descs = [ep.descriptors[i] for i in idx]
    return ep.channels[:, idx] if idx else np.empty((ep.n_steps, 0)), descs


# ---------------------------------------------------------------------------
# adapter config files
# ---------------------------------------------------------------------------

def _parse_expand_values(value) -> list:
    if isinstance(value, str) and ".." in value:
        lo_s, hi_s = value.split("..", 1)
        return list(range(int(lo_s), int(hi_s) + 1))
    if isinstance(value, list):
        return value
    raise SchemaViolation(f"expand values must be 'lo..hi' or a list, got {value!r}")


def expand_signal_rows(record: Mapping) -> list[dict]:
    """Expand one config record into concrete signal rows.

    A record may carry ``expand: {var: lo..hi | [values], ...}``; all
    variables are zipped in parallel and substituted into ``raw``,
    ``canonical``, ``axis``, and ``notes`` via ``str.format``.  Records
    without ``expand`` pass through unchanged.
    """
    spec = dict(record)
    expand = spec.pop("expand", None)
    if expand is None:
        return [spec]
    names = list(expand.keys())
    columns = [_parse_expand_values(expand[k]) for k in names]
    lengths = {len(c) for c in columns}
    if len(lengths) != 1:
        raise SchemaViolation(
            f"expand variables must have equal lengths, got {dict(zip(names, map(len, columns)))}"
        )
    rows = []
    for values in zip(*columns):
        binding = dict(zip(names, values))
        row = dict(spec)
        for key in ("raw", "canonical", "notes"):
            if key in row and isinstance(row[key], str):
                row[key] = row[key].format(**binding)
        if "axis" in row and isinstance(row["axis"], str):
            row["axis"] = int(row["axis"].format(**binding))
        rows.append(row)
    return rows


def _signal_from_row(row: Mapping) -> SignalSpec:
    role_name = row.get("role")
    role = None
    if role_name is not None:
        try:
            role = SignalRole(str(role_name))
        except ValueError:
            raise SchemaViolation(f"unknown role {role_name!r}") from None
    axis = row.get("axis")
    return SignalSpec(
        raw_name=str(row["raw"]),
        canonical_name=str(row["canonical"]),
        role=role,
        unit=str(row.get("unit", "")),
        axis=int(axis) if axis is not None else None,
        notes=str(row.get("notes", "")),
    )


def adapter_from_dict(doc: Mapping) -> AdapterSpec:
    try:
        raw_signals = doc["signals"]
    except KeyError:
        raise SchemaViolation("adapter config has no 'signals' section") from None
    signals = []
    for record in raw_signals:
        for row in expand_signal_rows(record):
            signals.append(_signal_from_row(row))
    return AdapterSpec(
        source_id=str(doc["source_id"]),
        native_rate_hz=float(doc["native_rate_hz"]),
        signals=tuple(signals),
        absent_channels=tuple(str(c) for c in doc.get("absent_channels", []) or ()),
        notes=str(doc.get("notes", "")),
    )


def load_adapter(path: Union[str, Path]) -> AdapterSpec:
    """Load an adapter spec from a YAML config file."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise SchemaViolation(f"{path}: not a mapping")
    return adapter_from_dict(doc)


BUILTIN_ADAPTER_IDS = (
    "ur3_lab",
    "kuka_kr10",
    "umich_cnc",
    "aursad",
    "voraus_ad",
    "isaac_ur5",
)


def builtin_adapter(source_id: str) -> AdapterSpec:
    """Load one of the six shipped adapters by source id."""
    if source_id not in BUILTIN_ADAPTER_IDS:
        raise SchemaViolation(
            f"unknown adapter {source_id!r}; built-ins: {', '.join(BUILTIN_ADAPTER_IDS)}"
        )
    ref = resources.files("sefc.adapters").joinpath(f"{source_id}.yaml")
    doc = yaml.safe_load(ref.read_text(encoding="utf-8"))
    return adapter_from_dict(doc)
