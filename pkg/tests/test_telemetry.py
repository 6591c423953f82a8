"""Event log invariants, replay determinism, mutation detection, and scoring."""

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mci_sim import telemetry as tm
from mci_sim.errors import (
    ClosedLogError,
    DivergenceError,
    FormatError,
    IntegrityError,
)
from mci_sim.model import TriageCategory, default_case_list
from mci_sim.scenario import (
    Pose,
    generate_actor_scenario,
    generate_virtual_scenario,
    scenario_sha256,
)
from mci_sim.session import Role

from helpers import write_actor_run, write_virtual_run


def find_line(path, kind):
    for line in path.read_text().splitlines()[1:]:
        doc = json.loads(line)
        if doc["kind"] == kind:
            return line, doc
    raise AssertionError(f"no {kind} line in {path}")


# --- EventLog ----------------------------------------------------------------


def test_log_seqs_are_gapless_from_zero():
    sink = tm.MemorySink()
    cl = default_case_list()
    scenario = generate_virtual_scenario(cl, 1)
    log = tm.EventLog(tm.make_header("s", scenario, cl.version), sink)
    for _ in range(3):
        log.append(0, tm.HAND_SAMPLE, "t1", None, {})
    assert [json.loads(line)["seq"] for line in sink.lines[1:]] == [0, 1, 2]
    assert log.next_seq == 3


def test_header_is_written_at_creation():
    sink = tm.MemorySink()
    cl = default_case_list()
    scenario = generate_virtual_scenario(cl, 1)
    tm.EventLog(tm.make_header("s", scenario, cl.version), sink)
    header = json.loads(sink.lines[0])
    assert header["format_version"] == 1
    assert header["session_id"] == "s"
    assert header["scenario_id"] == "virtual-1"
    assert header["scenario_sha256"] == scenario_sha256(scenario)
    assert header["participants"] == []


def test_log_closes_after_session_end():
    sink = tm.MemorySink()
    cl = default_case_list()
    log = tm.EventLog(tm.make_header("s", generate_virtual_scenario(cl, 1), cl.version), sink)
    log.append(600_000, tm.SESSION_END, None, None, {})
    assert log.closed
    with pytest.raises(ClosedLogError):
        log.append(600_001, tm.HAND_SAMPLE, "t1", None, {})


def test_log_rejects_unknown_kind():
    sink = tm.MemorySink()
    cl = default_case_list()
    log = tm.EventLog(tm.make_header("s", generate_virtual_scenario(cl, 1), cl.version), sink)
    with pytest.raises(ValueError, match="unknown event kind"):
        log.append(0, "teleport", None, None, {})


def test_event_lines_use_fixed_key_order():
    event = tm.SessionEvent(3, 100, tm.HAND_SAMPLE, "t1", None, {"a": 1})
    line = tm.event_to_line(event)
    assert line == '{"seq":3,"ts_ms":100,"kind":"hand_sample","responder_id":"t1","instance_id":null,"payload":{"a":1}}'
    assert tm.event_from_line(line, 1) == event


@pytest.mark.parametrize(
    "line, message",
    [
        ("{broken", "invalid JSON"),
        ("[]", "expected object"),
        ('{"seq":0}', "missing field"),
        (
            '{"seq":0,"ts_ms":0,"kind":"warp","responder_id":null,"instance_id":null,"payload":{}}',
            "unknown event kind",
        ),
        (
            '{"seq":true,"ts_ms":0,"kind":"hand_sample","responder_id":null,"instance_id":null,"payload":{}}',
            "seq must be",
        ),
        (
            '{"seq":0,"ts_ms":-5,"kind":"hand_sample","responder_id":null,"instance_id":null,"payload":{}}',
            "ts_ms must be",
        ),
        (
            '{"seq":0,"ts_ms":0,"kind":"hand_sample","responder_id":7,"instance_id":null,"payload":{}}',
            "responder_id must be",
        ),
        (
            '{"seq":0,"ts_ms":0,"kind":"hand_sample","responder_id":null,"instance_id":null,"payload":[]}',
            "payload must be",
        ),
    ],
)
def test_event_from_line_rejects_malformed(line, message):
    with pytest.raises(FormatError, match=message):
        tm.event_from_line(line, 9)


def test_file_sink_failure_does_not_stop_the_session(tmp_path, caplog):
    cl = default_case_list()
    scenario = generate_virtual_scenario(cl, 1)
    log = tm.open_log(tmp_path / "x.jsonl", tm.make_header("s", scenario, cl.version))

    class FailingHandle:
        def write(self, _):
            raise OSError("disk full")

        def flush(self):
            pass

        def close(self):
            pass

    log._sink._handle = FailingHandle()
    with caplog.at_level("ERROR"):
        event = log.append(0, tm.HAND_SAMPLE, "t1", None, {})
    assert event.seq == 0
    assert log.append(1, tm.HAND_SAMPLE, "t1", None, {}).seq == 1
    assert any("session continues" in r.message for r in caplog.records)


# --- read_log ----------------------------------------------------------------


def test_read_log_round_trip(tmp_path):
    path, scenario, cl = write_virtual_run(tmp_path)
    header, lines = tm.read_log(path)
    assert header["session_id"] == "s-replay"
    assert json.loads(lines[0])["kind"] == tm.PARTICIPANT_JOINED
    assert json.loads(lines[-1])["kind"] == tm.SESSION_END


def test_read_log_rejects_empty_file(tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    with pytest.raises(FormatError, match="missing header"):
        tm.read_log(empty)


def test_read_log_rejects_bad_header(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{oops\n")
    with pytest.raises(FormatError, match="invalid header"):
        tm.read_log(bad)


def test_read_log_rejects_wrong_format_version(tmp_path):
    path, *_ = write_virtual_run(tmp_path)
    lines = path.read_text().splitlines()
    header = json.loads(lines[0])
    header["format_version"] = 2
    doctored = tmp_path / "v2.jsonl"
    doctored.write_text("\n".join([json.dumps(header)] + lines[1:]) + "\n")
    with pytest.raises(IntegrityError, match="format_version"):
        tm.read_log(doctored)


def test_read_log_rejects_missing_header_field(tmp_path):
    path, *_ = write_virtual_run(tmp_path)
    lines = path.read_text().splitlines()
    header = json.loads(lines[0])
    del header["scenario_sha256"]
    doctored = tmp_path / "nofield.jsonl"
    doctored.write_text("\n".join([json.dumps(header)] + lines[1:]) + "\n")
    with pytest.raises(FormatError, match="scenario_sha256"):
        tm.read_log(doctored)


def test_read_log_does_not_prejudge_gaps(tmp_path):
    """Gap detection belongs to replay, so a doctored log must load."""
    path, *_ = write_virtual_run(tmp_path)
    lines = path.read_text().splitlines()
    gapped = tmp_path / "gapped.jsonl"
    gapped.write_text("\n".join([lines[0], lines[1], lines[5]]) + "\n")
    header, raw = tm.read_log(gapped)
    assert len(raw) == 2


# --- replay ------------------------------------------------------------------


def test_replay_reproduces_the_virtual_run(tmp_path):
    path, scenario, cl = write_virtual_run(tmp_path)
    record = tm.replay(path, scenario, cl)
    _, raw = tm.read_log(path)
    assert len(record.events) == len(raw)
    assert record.session.phase.value == "complete"
    assert record.events[-1].kind == tm.SESSION_END
    assert record.events[-1].ts_ms == 600_000


def test_replay_reproduces_the_actor_run_with_edits(tmp_path):
    path, scenario, cl = write_actor_run(tmp_path)
    record = tm.replay(path, scenario, cl)
    _, raw = tm.read_log(path)
    assert len(record.events) == len(raw)
    assert record.session.scenario.instance("p1").pose == Pose(2.0, 0.0, 2.0, 90.0)
    assert record.session.scenario.instance("p1").visible
    mismatches = [e for e in record.events if e.kind == tm.CROSS_CHECK_MISMATCH]
    assert len(mismatches) == 1


def test_replay_of_header_only_log(tmp_path):
    cl = default_case_list()
    scenario = generate_virtual_scenario(cl, 3)
    path = tmp_path / "header-only.jsonl"
    log = tm.open_log(path, tm.make_header("s-empty", scenario, cl.version))
    log._sink.close()
    record = tm.replay(path, scenario, cl)
    assert record.events == []
    assert record.session.phase.value == "lobby"


def test_replay_detects_deleted_engine_event(tmp_path):
    path, scenario, cl = write_virtual_run(tmp_path)
    _, doc = find_line(path, tm.HEARTBEAT_TICK)
    lines = path.read_text().splitlines()
    doctored = tmp_path / "deleted.jsonl"
    doctored.write_text(
        "\n".join(l for l in lines if json.loads(l).get("seq") != doc["seq"]) + "\n"
    )
    with pytest.raises(DivergenceError) as err:
        tm.replay(doctored, scenario, cl)
    assert err.value.seq == doc["seq"]


def test_replay_detects_altered_engine_payload(tmp_path):
    path, scenario, cl = write_virtual_run(tmp_path)
    line, doc = find_line(path, tm.VITALS_READOUT)
    doc["payload"]["values"]["sys"] += 1
    altered = json.dumps(doc, separators=(",", ":"), ensure_ascii=False)
    doctored = tmp_path / "altered.jsonl"
    doctored.write_text(path.read_text().replace(line, altered))
    with pytest.raises(DivergenceError) as err:
        tm.replay(doctored, scenario, cl)
    assert err.value.seq == doc["seq"]


def test_replay_detects_altered_tick_timestamp(tmp_path):
    path, scenario, cl = write_virtual_run(tmp_path)
    line, doc = find_line(path, tm.HEARTBEAT_TICK)
    doc["ts_ms"] += 1
    altered = json.dumps(doc, separators=(",", ":"), ensure_ascii=False)
    doctored = tmp_path / "shifted.jsonl"
    doctored.write_text(path.read_text().replace(line, altered))
    with pytest.raises(DivergenceError) as err:
        tm.replay(doctored, scenario, cl)
    assert err.value.seq == doc["seq"]


def test_replay_detects_truncation_inside_a_command(tmp_path):
    """Cutting the log right after voice_query leaves its gesture_response
    regenerated but unmatched."""
    path, scenario, cl = write_virtual_run(tmp_path)
    _, query_doc = find_line(path, tm.VOICE_QUERY)
    lines = path.read_text().splitlines()
    keep = [l for l in lines if json.loads(l).get("seq", -1) <= query_doc["seq"]]
    doctored = tmp_path / "truncated.jsonl"
    doctored.write_text("\n".join(keep) + "\n")
    with pytest.raises(DivergenceError, match="missing from log") as err:
        tm.replay(doctored, scenario, cl)
    assert err.value.seq == query_doc["seq"] + 1


def test_replay_detects_event_appended_after_end(tmp_path):
    path, scenario, cl = write_virtual_run(tmp_path)
    lines = path.read_text().splitlines()
    last = json.loads(lines[-1])
    forged = {
        "seq": last["seq"] + 1,
        "ts_ms": 600_000,
        "kind": tm.HEARTBEAT_TICK,
        "responder_id": "t1",
        "instance_id": "p4",
        "payload": {},
    }
    doctored = tmp_path / "appended.jsonl"
    doctored.write_text(
        "\n".join(lines + [json.dumps(forged, separators=(",", ":"))]) + "\n"
    )
    with pytest.raises(DivergenceError, match="not regenerated") as err:
        tm.replay(doctored, scenario, cl)
    assert err.value.seq == forged["seq"]


def test_replay_rejects_wrong_scenario(tmp_path):
    path, scenario, cl = write_virtual_run(tmp_path)
    other = generate_virtual_scenario(cl, 43)
    with pytest.raises(IntegrityError, match="sha256"):
        tm.replay(path, other, cl)


def test_replay_rejects_case_list_version_skew(tmp_path):
    path, scenario, cl = write_virtual_run(tmp_path)
    lines = path.read_text().splitlines()
    header = json.loads(lines[0])
    header["case_list_version"] = "9.9.9"
    doctored = tmp_path / "skew.jsonl"
    doctored.write_text("\n".join([json.dumps(header)] + lines[1:]) + "\n")
    with pytest.raises(IntegrityError, match="case list"):
        tm.replay(doctored, scenario, cl)


# --- scoring -----------------------------------------------------------------


def make_record(events):
    return tm.SessionRecord(header={"session_id": "s-score"}, events=events, session=None)


def tag_event(seq, ts, instance_id, category, responder="t1"):
    return tm.SessionEvent(seq, ts, tm.TAG_ASSIGNED, responder, instance_id, {"category": category})


def test_final_tags_last_wins():
    events = [
        tag_event(0, 1000, "p1", "red"),
        tag_event(1, 2000, "p1", "green"),
    ]
    assert tm.final_tags(events)["p1"].payload["category"] == "green"


def test_time_in_task_measures_first_contact_to_final_tag():
    events = [
        tm.SessionEvent(0, 5_000, tm.ZONE_ENTER, "t1", "p1", {"zone": "chest"}),
        tm.SessionEvent(1, 9_000, tm.VOICE_QUERY, "t1", "p1", {"query": "can_you_wave"}),
        tag_event(2, 70_000, "p1", "red"),
    ]
    assert tm.time_in_task(events, "p1") == 65_000


def test_time_in_task_tag_only_is_zero():
    assert tm.time_in_task([tag_event(0, 9_000, "p1", "red")], "p1") == 0


def test_time_in_task_untagged_is_none():
    events = [tm.SessionEvent(0, 5_000, tm.ZONE_ENTER, "t1", "p1", {"zone": "chest"})]
    assert tm.time_in_task(events, "p1") is None


def test_score_counts_over_and_under_triage():
    cl = default_case_list()
    scenario = generate_virtual_scenario(cl, 42)
    # truths: p1 black, p2 grey, p3 red, p4 yellow, p5 green
    events = [
        tag_event(0, 1_000, "p1", "red"),     # priority 1 < 5: overtriage
        tag_event(1, 2_000, "p2", "grey"),    # correct
        tag_event(2, 3_000, "p3", "green"),   # priority 4 > 1: undertriage
        tag_event(3, 4_000, "p4", "yellow"),  # correct
        # p5 untagged
    ]
    report = tm.score(make_record(events), scenario, cl)
    assert report.correct_count == 2
    assert report.overtriage_count == 1
    assert report.undertriage_count == 1
    assert report.untagged_count == 1
    assert report.accuracy == pytest.approx(0.4)
    assert report.confusion[0][2] == 1  # black tagged red
    assert report.confusion[4][tm.UNTAGGED_COL] == 1
    assert report.per_patient["p5"]["tagged"] is None
    assert report.per_patient["p5"]["time_in_task_ms"] is None


def test_score_rejects_unknown_instance():
    cl = default_case_list()
    scenario = generate_virtual_scenario(cl, 42)
    with pytest.raises(IntegrityError, match="p99"):
        tm.score(make_record([tag_event(0, 1_000, "p99", "red")]), scenario, cl)


def test_score_duration_stops_at_session_end():
    cl = default_case_list()
    scenario = generate_virtual_scenario(cl, 42)
    events = [
        tag_event(0, 1_000, "p1", "black"),
        tm.SessionEvent(1, 600_000, tm.SESSION_END, None, None, {}),
    ]
    assert tm.score(make_record(events), scenario, cl).session_duration_ms == 600_000
    assert (
        tm.score(make_record(events[:1]), scenario, cl).session_duration_ms == 1_000
    )


def test_report_json_is_deterministic():
    cl = default_case_list()
    scenario = generate_virtual_scenario(cl, 42)
    events = [tag_event(0, 1_000, "p1", "black")]
    a = tm.score(make_record(events), scenario, cl).to_json()
    b = tm.score(make_record(events), scenario, cl).to_json()
    assert a == b
    doc = json.loads(a)
    assert doc["confusion_cols"] == ["black", "grey", "red", "yellow", "green", "untagged"]


@settings(max_examples=60, deadline=None)
@given(
    draws=st.lists(
        st.one_of(st.none(), st.sampled_from(tm.CATEGORY_ROWS)),
        min_size=5,
        max_size=5,
    )
)
def test_score_confusion_laws(draws):
    cl = default_case_list()
    scenario = generate_virtual_scenario(cl, 42)
    events = [
        tag_event(i, 1_000 * (i + 1), f"p{i + 1}", category)
        for i, category in enumerate(draws)
        if category is not None
    ]
    report = tm.score(make_record(events), scenario, cl)

    truth_counts = {}
    for inst in scenario.instances:
        truth = cl.by_id(inst.case_id).ground_truth.value
        truth_counts[truth] = truth_counts.get(truth, 0) + 1
    for r, row_name in enumerate(tm.CATEGORY_ROWS):
        assert sum(report.confusion[r]) == truth_counts.get(row_name, 0)

    untagged = sum(1 for d in draws if d is None)
    assert sum(row[tm.UNTAGGED_COL] for row in report.confusion) == untagged
    assert (
        report.correct_count
        + report.overtriage_count
        + report.undertriage_count
        + report.untagged_count
        == report.total_patients
        == 5
    )
    assert report.accuracy == pytest.approx(report.correct_count / 5)
    trace = sum(report.confusion[i][i] for i in range(5))
    assert trace == report.correct_count
