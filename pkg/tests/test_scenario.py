"""Generator determinism, layout constraints, and canonical persistence."""

import dataclasses
import hashlib
import itertools
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mci_sim.errors import (
    FormatError,
    GenerationError,
    LayoutError,
    NotFoundError,
    ReferentialError,
)
from mci_sim.model import MasterCaseList, TriageCategory, default_case_list
from mci_sim.scenario import (
    MIN_SEPARATION_M,
    QUOTA_COMBOS,
    TIME_LIMIT_S,
    Mode,
    Pose,
    generate_actor_scenario,
    generate_virtual_scenario,
    load_scenario,
    place_patient,
    save_scenario,
    scenario_from_json,
    scenario_sha256,
    scenario_to_json,
    scenario_violations,
    set_visibility,
)


@pytest.fixture(scope="module")
def cases() -> MasterCaseList:
    return default_case_list()


# --- Pose ---------------------------------------------------------------


def test_pose_quantizes_to_millimeters():
    p = Pose(x=1.23456, y=0.0005, z=2.9994, yaw_deg=10.00049)
    assert (p.x, p.y, p.z, p.yaw_deg) == (1.235, 0.001, 2.999, 10.0)


def test_pose_normalizes_negative_zero():
    p = Pose(x=-0.0001, y=0.0, z=0.0)
    assert str(p.x) == "0.0"


def test_pose_wraps_yaw():
    assert Pose(0, 0, 0, yaw_deg=725.0).yaw_deg == 5.0
    assert Pose(0, 0, 0, yaw_deg=-90.0).yaw_deg == 270.0


def test_pose_rejects_negative_z():
    with pytest.raises(ValueError):
        Pose(0, 0, -0.5)


def test_pose_rejects_non_finite():
    with pytest.raises(ValueError):
        Pose(float("nan"), 0, 0)
    with pytest.raises(ValueError):
        Pose(0, float("inf"), 0)


def test_pose_distance():
    assert Pose(0, 0, 0).distance_to(Pose(3, 0, 4)) == 5.0


# --- Virtual generation ---------------------------------------------------


def test_virtual_same_seed_is_byte_identical(cases):
    a = scenario_to_json(generate_virtual_scenario(cases, 42))
    b = scenario_to_json(generate_virtual_scenario(cases, 42))
    assert a == b


def test_virtual_different_seeds_differ(cases):
    a = scenario_to_json(generate_virtual_scenario(cases, 1))
    b = scenario_to_json(generate_virtual_scenario(cases, 2))
    assert a != b


def test_virtual_seed_sweep_satisfies_constraints(cases):
    for seed in range(200):
        scenario = generate_virtual_scenario(cases, seed)
        assert scenario_violations(scenario, cases) == []


def test_virtual_one_patient_per_category(cases):
    scenario = generate_virtual_scenario(cases, 9)
    truths = sorted(cases.by_id(i.case_id).ground_truth.value for i in scenario.instances)
    assert truths == sorted(c.value for c in TriageCategory)


def test_virtual_demographic_quota(cases):
    scenario = generate_virtual_scenario(cases, 9)
    combos = [(i.demographics.race, i.demographics.gender) for i in scenario.instances]
    for quota in QUOTA_COMBOS:
        assert (quota.race, quota.gender) in combos
        combos.remove((quota.race, quota.gender))
    assert len(combos) == 1  # fifth draw is unconstrained


def test_virtual_pairwise_separation(cases):
    for seed in range(50):
        scenario = generate_virtual_scenario(cases, seed)
        for a, b in itertools.combinations(scenario.instances, 2):
            assert a.pose.distance_to(b.pose) >= MIN_SEPARATION_M


def test_virtual_defaults(cases):
    scenario = generate_virtual_scenario(cases, 3)
    assert scenario.scenario_id == "virtual-3"
    assert scenario.mode is Mode.VIRTUAL
    assert scenario.required_responders == 1
    assert scenario.time_limit_s == TIME_LIMIT_S
    assert all(i.visible for i in scenario.instances)


def test_virtual_layout_error_on_tiny_area(cases):
    with pytest.raises(LayoutError, match="larger area"):
        generate_virtual_scenario(cases, 0, area=(1.0, 1.0))


def test_virtual_generation_error_names_empty_category(cases):
    thinned = MasterCaseList(
        version=cases.version,
        cases=tuple(c for c in cases.cases if c.ground_truth is not TriageCategory.GREEN),
    )
    with pytest.raises(GenerationError, match="green"):
        generate_virtual_scenario(thinned, 0)


# --- Actor generation -----------------------------------------------------


def test_actor_covers_every_case_invisible(cases):
    scenario = generate_actor_scenario(cases, 7)
    assert scenario.scenario_id == "actor-7"
    assert scenario.required_responders == 2
    assert len(scenario.instances) == 20
    assert sorted(i.case_id for i in scenario.instances) == sorted(
        c.case_id for c in cases.cases
    )
    assert not any(i.visible for i in scenario.instances)
    assert scenario_violations(scenario, cases) == []


def test_actor_seed_sweep(cases):
    for seed in range(25):
        assert scenario_violations(generate_actor_scenario(cases, seed), cases) == []


def test_actor_layout_passthrough(cases):
    layout = [Pose(x=float(i), y=0.0, z=float(i % 4) * 2.0) for i in range(20)]
    scenario = generate_actor_scenario(cases, 7, layout=layout)
    assert [i.pose for i in scenario.instances] == layout


def test_actor_layout_wrong_length(cases):
    layout = [Pose(x=float(i), y=0.0, z=0.0) for i in range(19)]
    with pytest.raises(GenerationError, match="19"):
        generate_actor_scenario(cases, 7, layout=layout)


def test_actor_same_seed_is_byte_identical(cases):
    a = scenario_to_json(generate_actor_scenario(cases, 11))
    b = scenario_to_json(generate_actor_scenario(cases, 11))
    assert a == b


# --- Author-mode edits (pure) ----------------------------------------------


def test_place_patient_returns_new_scenario(cases):
    before = generate_virtual_scenario(cases, 5)
    moved = place_patient(before, "p2", Pose(1.0, 0.0, 1.0, 90.0))
    assert moved is not before
    assert before.instance("p2").pose != Pose(1.0, 0.0, 1.0, 90.0)
    assert moved.instance("p2").pose == Pose(1.0, 0.0, 1.0, 90.0)
    untouched = [i for i in moved.instances if i.instance_id != "p2"]
    assert untouched == [i for i in before.instances if i.instance_id != "p2"]


def test_set_visibility_returns_new_scenario(cases):
    before = generate_actor_scenario(cases, 5)
    shown = set_visibility(before, "p3", True)
    assert not before.instance("p3").visible
    assert shown.instance("p3").visible


def test_edit_unknown_instance(cases):
    scenario = generate_virtual_scenario(cases, 5)
    with pytest.raises(NotFoundError, match="p99"):
        place_patient(scenario, "p99", Pose(0, 0, 0))
    with pytest.raises(NotFoundError, match="p99"):
        set_visibility(scenario, "p99", False)


# --- Persistence ------------------------------------------------------------


def test_round_trip_preserves_scenario(cases, tmp_path):
    scenario = generate_virtual_scenario(cases, 42)
    path = tmp_path / "s.json"
    save_scenario(scenario, path)
    loaded = load_scenario(path, cases)
    assert loaded.scenario == scenario
    assert loaded.warnings == []


def test_round_trip_is_byte_stable(cases, tmp_path):
    scenario = generate_actor_scenario(cases, 7)
    path = tmp_path / "s.json"
    save_scenario(scenario, path)
    first = path.read_bytes()
    save_scenario(load_scenario(path).scenario, path)
    assert path.read_bytes() == first


def test_pose_coordinates_serialized_as_decimal_strings(cases):
    doc = json.loads(scenario_to_json(generate_virtual_scenario(cases, 1)))
    pose = doc["instances"][0]["pose"]
    for key in ("x", "y", "z", "yaw_deg"):
        assert isinstance(pose[key], str)
        whole, frac = pose[key].split(".")
        assert len(frac) == 3


def test_sha256_matches_canonical_bytes(cases):
    scenario = generate_virtual_scenario(cases, 42)
    expected = hashlib.sha256(scenario_to_json(scenario).encode("utf-8")).hexdigest()
    assert scenario_sha256(scenario) == expected
    assert scenario_sha256(generate_virtual_scenario(cases, 42)) == expected


def test_load_rejects_unknown_case_reference(cases):
    doc = json.loads(scenario_to_json(generate_virtual_scenario(cases, 1)))
    doc["instances"][0]["case_id"] = "c99"
    with pytest.raises(ReferentialError, match="c99"):
        scenario_from_json(json.dumps(doc), cases)


def test_load_warns_on_version_skew(cases):
    doc = json.loads(scenario_to_json(generate_virtual_scenario(cases, 1)))
    doc["case_list_version"] = "0.9.0"
    loaded = scenario_from_json(json.dumps(doc), cases)
    assert any("0.9.0" in w for w in loaded.warnings)


@pytest.mark.parametrize(
    "mutate, message",
    [
        (lambda d: d.pop("seed"), "missing field 'seed'"),
        (lambda d: d.update(extra=1), "unknown field 'extra'"),
        (lambda d: d.update(mode="hybrid"), "not one of"),
        (lambda d: d.update(seed=True), "unsigned 64-bit"),
        (lambda d: d.update(seed=-1), "unsigned 64-bit"),
        (lambda d: d.update(time_limit_s=0), "positive integer"),
        (lambda d: d.update(required_responders=2), "expected 1 for virtual"),
        (lambda d: d["instances"][0].pop("pose"), "missing field 'pose'"),
        (lambda d: d["instances"][0]["pose"].update(x=1.0), "expected decimal string"),
        (lambda d: d["instances"][0]["pose"].update(x="abc"), "not a decimal"),
        (lambda d: d["instances"][0].update(visible="yes"), "expected boolean"),
        (lambda d: d["instances"][0]["demographics"].update(race="martian"), "unknown race"),
    ],
)
def test_load_rejects_malformed_documents(cases, mutate, message):
    doc = json.loads(scenario_to_json(generate_virtual_scenario(cases, 1)))
    mutate(doc)
    with pytest.raises(FormatError, match=message):
        scenario_from_json(json.dumps(doc))


def test_load_rejects_invalid_json():
    with pytest.raises(FormatError, match="invalid JSON"):
        scenario_from_json("{not json")


# --- Violation checks -------------------------------------------------------


def test_violations_flag_time_limit_change(cases):
    scenario = dataclasses.replace(generate_virtual_scenario(cases, 1), time_limit_s=300)
    assert any("time_limit_s" in v for v in scenario_violations(scenario, cases))


def test_violations_flag_hidden_virtual_patient(cases):
    scenario = set_visibility(generate_virtual_scenario(cases, 1), "p1", False)
    assert any("visible" in v for v in scenario_violations(scenario, cases))


def test_violations_flag_version_mismatch(cases):
    scenario = dataclasses.replace(
        generate_virtual_scenario(cases, 1), case_list_version="0.0.1"
    )
    assert any("version" in v for v in scenario_violations(scenario, cases))


# --- Property: generation is a pure function of (mode, seed) ----------------


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**32 - 1))
def test_virtual_generation_is_reproducible(seed):
    cases = default_case_list()
    assert scenario_to_json(generate_virtual_scenario(cases, seed)) == scenario_to_json(
        generate_virtual_scenario(cases, seed)
    )
