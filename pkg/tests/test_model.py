"""Master case list: shipped data, validator rules, serialization."""
import dataclasses
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mci_sim.errors import FormatError
from mci_sim.model import (
    PULSE_BP_SYS_THRESHOLD,
    REQUIRED_HISTOGRAM,
    SortObservation,
    TriageCategory,
    Vitals,
    case_list_from_json,
    case_list_to_json,
    default_case_list,
    derive_flags_from_vitals,
    validate_case_list,
)


RESPONSIVE = SortObservation(can_walk=True, responds_to_commands=True)
UNRESPONSIVE = SortObservation(can_walk=False, responds_to_commands=False)


@pytest.fixture(scope="module")
def shipped():
    return default_case_list()


def replace_case(case_list, case_id, **changes):
    cases = tuple(
        dataclasses.replace(case, **changes) if case.case_id == case_id else case
        for case in case_list.cases
    )
    return dataclasses.replace(case_list, cases=cases)


def rule_names(case_list):
    return {violation.rule for violation in validate_case_list(case_list).violations}


def test_shipped_list_is_valid(shipped):
    report = validate_case_list(shipped)
    assert report.ok, str(report)


def test_shipped_list_has_twenty_cases(shipped):
    assert len(shipped.cases) == 20


def test_shipped_category_split(shipped):
    histogram = {category.value: 0 for category in TriageCategory}
    for case in shipped.cases:
        histogram[case.ground_truth.value] += 1
    assert histogram == REQUIRED_HISTOGRAM
    assert REQUIRED_HISTOGRAM == {"black": 3, "grey": 4, "red": 5, "yellow": 5, "green": 3}


def test_shipped_ids_unique(shipped):
    ids = [case.case_id for case in shipped.cases]
    assert len(set(ids)) == 20


def test_validator_flags_wrong_length(shipped):
    short = dataclasses.replace(shipped, cases=shipped.cases[:19])
    assert "length" in rule_names(short)


def test_validator_flags_histogram_drift(shipped):
    green = next(c for c in shipped.cases if c.ground_truth is TriageCategory.GREEN)
    broken = replace_case(shipped, green.case_id, ground_truth=TriageCategory.YELLOW)
    assert "histogram" in rule_names(broken)


def test_validator_flags_duplicate_ids(shipped):
    dup = dataclasses.replace(
        shipped, cases=shipped.cases[:19] + (dataclasses.replace(shipped.cases[19], case_id=shipped.cases[0].case_id),)
    )
    assert "unique_ids" in rule_names(dup)


def test_validator_flags_breathing_without_respiration(shipped):
    # rr = 0 while the breathing flag stays true
    case = next(c for c in shipped.cases if c.flags.breathing_after_airway)
    broken = replace_case(
        shipped, case.case_id, vitals=dataclasses.replace(case.vitals, rr_bpm=0)
    )
    assert "rr_breathing" in rule_names(broken)


def test_validator_flags_inverted_blood_pressure(shipped):
    case = shipped.cases[0]
    broken = replace_case(
        shipped,
        case.case_id,
        vitals=dataclasses.replace(case.vitals, bp_sys_mmhg=60, bp_dia_mmhg=90),
    )
    assert "bp_order" in rule_names(broken)


def test_validator_flags_ground_truth_mismatch(shipped):
    green = next(c for c in shipped.cases if c.ground_truth is TriageCategory.GREEN)
    broken = replace_case(shipped, green.case_id, ground_truth=TriageCategory.BLACK)
    assert "ground_truth" in rule_names(broken)


def test_validator_flags_minor_injuries_on_urgent_case(shipped):
    red = next(c for c in shipped.cases if c.ground_truth is TriageCategory.RED)
    broken = replace_case(
        shipped,
        red.case_id,
        flags=dataclasses.replace(red.flags, minor_injuries_only=True),
    )
    assert "minor_consistency" in rule_names(broken)


def test_validator_flags_pulse_contradicting_pressure(shipped):
    case = next(
        c
        for c in shipped.cases
        if c.vitals.bp_sys_mmhg >= PULSE_BP_SYS_THRESHOLD and c.flags.has_peripheral_pulse
    )
    broken = replace_case(
        shipped,
        case.case_id,
        flags=dataclasses.replace(case.flags, has_peripheral_pulse=False),
    )
    assert "derived_flags" in rule_names(broken)


def test_validator_flags_script_wave_gesture_contradiction(shipped):
    case = shipped.cases[0]
    broken = replace_case(
        shipped,
        case.case_id,
        script=dataclasses.replace(
            case.script, gesture_on_wave_query=not case.sort_obs.responds_to_commands
        ),
    )
    assert "script_gesture" in rule_names(broken)


def test_round_trip_preserves_case_list(shipped):
    assert case_list_from_json(case_list_to_json(shipped)) == shipped


def test_round_trip_is_byte_stable(shipped):
    text = case_list_to_json(shipped)
    assert case_list_to_json(case_list_from_json(text)) == text


def mutated_doc(shipped, mutate):
    doc = json.loads(case_list_to_json(shipped))
    mutate(doc)
    return json.dumps(doc)


def test_decode_rejects_missing_field(shipped):
    with pytest.raises(FormatError, match=r"cases\[0\].*vitals"):
        case_list_from_json(mutated_doc(shipped, lambda d: d["cases"][0].pop("vitals")))


def test_decode_rejects_unknown_field(shipped):
    with pytest.raises(FormatError, match="extra"):
        case_list_from_json(
            mutated_doc(shipped, lambda d: d["cases"][0].update(extra=1))
        )


def test_decode_rejects_out_of_range_heart_rate(shipped):
    with pytest.raises(FormatError, match="hr_bpm"):
        case_list_from_json(
            mutated_doc(shipped, lambda d: d["cases"][0]["vitals"].update(hr_bpm=999))
        )


def test_decode_rejects_unknown_enum_value(shipped):
    with pytest.raises(FormatError, match="ground_truth"):
        case_list_from_json(
            mutated_doc(shipped, lambda d: d["cases"][0].update(ground_truth="purple"))
        )


def test_decode_rejects_non_boolean_flag(shipped):
    with pytest.raises(FormatError, match="breathing_after_airway"):
        case_list_from_json(
            mutated_doc(
                shipped,
                lambda d: d["cases"][0]["flags"].update(breathing_after_airway=1),
            )
        )


def test_decode_rejects_truncated_document():
    with pytest.raises(FormatError):
        case_list_from_json('{"version": "1.0.0", "cases": [')


def test_derived_pulse_threshold_boundary():
    at = derive_flags_from_vitals(Vitals(80, 16, PULSE_BP_SYS_THRESHOLD, 60), cognition=RESPONSIVE)
    below = derive_flags_from_vitals(
        Vitals(80, 16, PULSE_BP_SYS_THRESHOLD - 1, 60), cognition=RESPONSIVE
    )
    assert at["has_peripheral_pulse"] is True
    assert below["has_peripheral_pulse"] is False


def test_derived_breathing_tracks_respiratory_rate():
    assert derive_flags_from_vitals(Vitals(0, 0, 0, 0), cognition=UNRESPONSIVE)[
        "breathing_after_airway"
    ] is False
    assert derive_flags_from_vitals(Vitals(90, 12, 120, 80), cognition=RESPONSIVE)[
        "breathing_after_airway"
    ] is True


@given(
    hr=st.integers(0, 250),
    rr=st.integers(0, 60),
    sys=st.integers(0, 260),
    cognition=st.booleans(),
)
def test_derived_flags_follow_vitals_laws(hr, rr, sys, cognition):
    dia = min(sys, 160)
    obs = SortObservation(can_walk=False, responds_to_commands=cognition)
    derived = derive_flags_from_vitals(Vitals(hr, rr, sys, dia), obs)
    assert derived["breathing_after_airway"] == (rr > 0)
    assert derived["has_peripheral_pulse"] == (sys >= PULSE_BP_SYS_THRESHOLD)
    assert derived["obeys_commands_or_purposeful"] == cognition
    assert derived["in_respiratory_distress"] is None
    assert derived["major_hemorrhage_uncontrolled"] is None
    assert derived["likely_survivable_given_resources"] is None
    assert derived["minor_injuries_only"] is None
