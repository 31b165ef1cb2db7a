import numpy as np
import pytest

from conftest import raw_table_for
from sefc.errors import MissingRawColumn, NonNumericColumn, SchemaViolation
from sefc.schema import (
    BUILTIN_ADAPTER_IDS,
    AdapterSpec,
    Episode,
    EpisodeMeta,
    SignalRole,
    SignalSpec,
    apply_adapter,
    builtin_adapter,
    expand_signal_rows,
    select_signals,
    validate_adapter,
)


def sig(raw, canonical, role=SignalRole.SETPOINT, unit="rad", axis=None):
    return SignalSpec(raw, canonical, role, unit, axis)


META = EpisodeMeta(episode_id="e1", embodiment="arm", task="pick_and_place")


class TestSignalRole:
    def test_exactly_seven_variants(self):
        assert len(SignalRole) == 7

    def test_modeling_vs_carrier_split(self):
        from sefc.schema import MODELING_ROLES

        carriers = set(SignalRole) - MODELING_ROLES
        assert carriers == {
            SignalRole.METADATA, SignalRole.AUXILIARY, SignalRole.RAW_LABEL
        }


class TestValidateAdapter:
    def test_builtin_adapters_are_valid(self):
        for source_id in BUILTIN_ADAPTER_IDS:
            report = validate_adapter(builtin_adapter(source_id))
            assert report.ok, f"{source_id}: {report}"

    def test_duplicate_canonical_name(self):
        spec = AdapterSpec("x", 10.0, (
            sig("a", "setpoint_pos_0", axis=0),
            sig("b", "setpoint_pos_0", axis=0),
        ))
        report = validate_adapter(spec)
        assert [f.code for f in report.findings] == ["duplicate-canonical"]

    def test_duplicate_raw_name(self):
        spec = AdapterSpec("x", 10.0, (
            sig("a", "setpoint_pos_0", axis=0),
            sig("a", "setpoint_pos_1", axis=1),
        ))
        assert [f.code for f in validate_adapter(spec).findings] == ["duplicate-raw"]

    def test_malformed_axis_suffix(self):
        spec = AdapterSpec("x", 10.0, (
            sig("a", "feedback_pos_x", role=SignalRole.FEEDBACK, axis=0),
        ))
        assert [f.code for f in validate_adapter(spec).findings] == [
            "malformed-axis-suffix"
        ]

    def test_missing_role_and_unit(self):
        spec = AdapterSpec("x", 10.0, (
            SignalSpec("a", "ctx_thing", None, ""),
        ))
        codes = {f.code for f in validate_adapter(spec).findings}
        assert codes == {"missing-role", "missing-unit"}

    def test_absent_channel_overlap(self):
        spec = AdapterSpec("x", 10.0, (sig("a", "setpoint_pos_0", axis=0),),
                           absent_channels=("setpoint_pos_0",))
        assert [f.code for f in validate_adapter(spec).findings] == ["absent-overlap"]

    def test_validation_reports_instead_of_raising(self):
        spec = AdapterSpec("x", -5.0, (
            sig("a", "Bad Name!", axis=3),
            sig("a", "Bad Name!", axis=3),
        ))
        report = validate_adapter(spec)
        assert not report.ok and len(report.findings) >= 4


class TestApplyAdapter:
    def test_voraus_row_mapping(self):
        spec = builtin_adapter("voraus_ad")
        s = spec.signal_for_raw("target_position_1")
        assert s.canonical_name == "setpoint_pos_0"
        assert s.role == SignalRole.SETPOINT
        assert s.unit == "rad"

    def test_aursad_row_mapping(self):
        s = builtin_adapter("aursad").signal_for_raw("actual_current_0")
        assert (s.canonical_name, s.role, s.unit) == (
            "effort_current_0", SignalRole.EFFORT, "A"
        )

    def test_cnc_row_mapping(self):
        s = builtin_adapter("umich_cnc").signal_for_raw("X1_CommandPosition")
        assert (s.canonical_name, s.role, s.unit) == (
            "setpoint_pos_0", SignalRole.SETPOINT, "mm"
        )

    def test_channels_in_spec_order_and_unmapped_dropped(self):
        spec = builtin_adapter("voraus_ad")
        table = raw_table_for(spec, n_rows=9)
        table["bogus_extra_column"] = np.zeros(9)
        ep = apply_adapter(table, spec, META)
        assert ep.channel_names == tuple(s.canonical_name for s in spec.signals)
        assert ep.rate_hz == spec.native_rate_hz
        assert ep.n_steps == 9

    def test_deterministic(self):
        spec = builtin_adapter("aursad")
        table = raw_table_for(spec, n_rows=7, seed=3)
        a = apply_adapter(table, spec, META)
        b = apply_adapter(table, spec, META)
        assert np.array_equal(a.channels, b.channels)
        assert np.array_equal(a.t, b.t)

    def test_missing_raw_column(self):
        spec = builtin_adapter("voraus_ad")
        table = raw_table_for(spec)
        del table["motor_torque_3"]
        with pytest.raises(MissingRawColumn, match="motor_torque_3"):
            apply_adapter(table, spec, META)

    def test_allow_missing_omits_channel(self):
        spec = builtin_adapter("voraus_ad")
        table = raw_table_for(spec)
        del table["motor_torque_3"]
        ep = apply_adapter(table, spec, META, allow_missing=["motor_torque_3"])
        assert not ep.has_channel("effort_motor_torque_2")
        assert ep.n_channels == len(spec.signals) - 1

    def test_non_numeric_modeling_column(self):
        spec = builtin_adapter("voraus_ad")
        table = raw_table_for(spec, n_rows=5)
        table["joint_position_2"] = np.asarray(["a", "b", "c", "d", "e"], dtype=object)
        with pytest.raises(NonNumericColumn, match="joint_position_2"):
            apply_adapter(table, spec, META)

    def test_non_numeric_label_column_coerced(self):
        spec = builtin_adapter("voraus_ad")
        table = raw_table_for(spec, n_rows=4)
        table["category"] = np.asarray(["grip", "grip", "none", None], dtype=object)
        table["anomaly"] = np.asarray(["True", "False", "True", "False"], dtype=object)
        ep = apply_adapter(table, spec, META)
        assert np.all(np.isnan(ep.channel("ctx_anomaly_category")[:3]))
        assert ep.channel("ctx_is_anomaly").tolist() == [1.0, 0.0, 1.0, 0.0]

    def test_phase_column_pickup(self):
        spec = builtin_adapter("isaac_ur5")
        table = raw_table_for(spec, n_rows=4)
        table["phase"] = np.asarray(["a", "a", "b", "b"], dtype=object)
        meta = EpisodeMeta("e", "ur5", "pick_and_place", phase_column="phase")
        ep = apply_adapter(table, spec, meta)
        assert list(ep.phase) == ["a", "a", "b", "b"]

    def test_default_phase_unknown(self):
        spec = builtin_adapter("voraus_ad")
        ep = apply_adapter(raw_table_for(spec, 5), spec, META)
        assert set(ep.phase) == {"unknown"}


@pytest.fixture(scope="module")
def voraus_episode():
    spec = builtin_adapter("voraus_ad")
    return apply_adapter(raw_table_for(spec, 20), spec, META)


class TestSelectSignals:
    def test_voraus_18_setpoint_channels(self, voraus_episode):
        m, descs = select_signals(
            voraus_episode, SignalRole.SETPOINT,
            ("setpoint_pos", "setpoint_vel", "setpoint_acc"),
        )
        assert m.shape == (20, 18)
        assert [d.canonical_name for d in descs[:6]] == [
            f"setpoint_pos_{i}" for i in range(6)
        ]

    def test_voraus_6_effort_channels(self, voraus_episode):
        m, descs = select_signals(
            voraus_episode, SignalRole.EFFORT, "effort_motor_torque"
        )
        assert m.shape == (20, 6)
        assert [d.axis for d in descs] == [0, 1, 2, 3, 4, 5]

    def test_empty_selection(self, voraus_episode):
        m, descs = select_signals(voraus_episode, SignalRole.AUXILIARY)
        assert m.shape == (20, 0) and descs == []

    def test_role_partition_covers_all_channels_once(self):
        for source_id in BUILTIN_ADAPTER_IDS:
            spec = builtin_adapter(source_id)
            ep = apply_adapter(raw_table_for(spec, 6), spec, META)
            names = []
            for role in SignalRole:
                _, descs = select_signals(ep, role)
                names.extend(d.canonical_name for d in descs)
            assert sorted(names) == sorted(ep.channel_names), source_id


class TestEpisodeInvariants:
    def _args(self, **over):
        T = 5
        base = dict(
            episode_id="e", source_id="s", embodiment="m", task="pick_and_place",
            rate_hz=10.0, t=np.arange(T) / 10.0, channels=np.zeros((T, 2)),
            descriptors=(
                sig("a", "setpoint_pos_0", axis=0),
                sig("b", "feedback_pos_0", SignalRole.FEEDBACK, axis=0),
            ),
            phase=np.full(T, "unknown"), fault=None, healthy=True,
        )
        from sefc.schema import ChannelDescriptor
        base["descriptors"] = (
            ChannelDescriptor("setpoint_pos_0", SignalRole.SETPOINT, "rad", 0),
            ChannelDescriptor("feedback_pos_0", SignalRole.FEEDBACK, "rad", 0),
        )
        base.update(over)
        return base

    def test_valid_episode_constructs(self):
        Episode(**self._args())

    def test_too_short(self):
        with pytest.raises(SchemaViolation):
            Episode(**self._args(t=np.array([0.0]), channels=np.zeros((1, 2)),
                                 phase=np.array(["u"])))

    def test_healthy_fault_consistency(self):
        with pytest.raises(SchemaViolation):
            Episode(**self._args(fault="collision_foam_spike", healthy=True))

    def test_non_uniform_time_base(self):
        t = np.array([0.0, 0.1, 0.2, 0.31, 0.4])
        with pytest.raises(SchemaViolation):
            Episode(**self._args(t=t))

    def test_channels_are_read_only(self):
        ep = Episode(**self._args())
        with pytest.raises(ValueError):
            ep.channels[0, 0] = 1.0

    def test_unknown_task(self):
        with pytest.raises(SchemaViolation):
            Episode(**self._args(task="juggling"))


class TestExpansion:
    def test_range_and_list_zip(self):
        rows = expand_signal_rows({
            "raw": "{ax}_Pos_{src}", "canonical": "setpoint_pos_{i}",
            "role": "setpoint", "unit": "mm", "axis": "{i}",
            "expand": {"ax": ["X", "Y"], "i": "0..1", "src": "1..2"},
        })
        assert [(r["raw"], r["canonical"], r["axis"]) for r in rows] == [
            ("X_Pos_1", "setpoint_pos_0", 0),
            ("Y_Pos_2", "setpoint_pos_1", 1),
        ]

    def test_plain_row_passthrough(self):
        rows = expand_signal_rows({"raw": "a", "canonical": "ctx_a", "role": "context"})
        assert rows == [{"raw": "a", "canonical": "ctx_a", "role": "context"}]

    def test_mismatched_lengths(self):
        with pytest.raises(SchemaViolation):
            expand_signal_rows({
                "raw": "{a}{b}", "canonical": "c",
                "expand": {"a": "0..2", "b": "0..1"},
            })
