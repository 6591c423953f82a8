"""Domain types for patient cases and the master case list, plus list validation.

The master case list is the fixed roster of 20 authored cases that every
scenario draws from. Its category distribution is pinned to 3 black,
4 grey, 5 red, 5 yellow, 3 green, and every case must be internally
consistent: vitals agree with assessment flags, and the stored ground
truth agrees with the reference classifier.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import FormatError

# Systolic threshold below which the peripheral (radial) pulse is treated
# as absent. Cases must be authored consistently with this.
PULSE_BP_SYS_THRESHOLD = 80

REQUIRED_HISTOGRAM = {"black": 3, "grey": 4, "red": 5, "yellow": 5, "green": 3}


class TriageCategory(enum.Enum):
    BLACK = "black"
    GREY = "grey"
    RED = "red"
    YELLOW = "yellow"
    GREEN = "green"


class Race(enum.Enum):
    WHITE = "white"
    BLACK = "black"
    ASIAN = "asian"
    HISPANIC = "hispanic"
    OTHER = "other"


class Gender(enum.Enum):
    WOMAN = "woman"
    MAN = "man"


class Movement(enum.Enum):
    STILL = "still"
    HOLDING_ARM = "holding_arm"
    ROCKING = "rocking"
    WAVING = "waving"
    WRITHING = "writhing"


@dataclass(frozen=True)
class Demographics:
    race: Race
    gender: Gender


@dataclass(frozen=True)
class Vitals:
    """Measurable channels: heart rate, respiration rate, blood pressure."""

    hr_bpm: int
    rr_bpm: int
    bp_sys_mmhg: int
    bp_dia_mmhg: int


@dataclass(frozen=True)
class SortObservation:
    """First-wave observations, both visible without touching the patient."""

    can_walk: bool
    responds_to_commands: bool


@dataclass(frozen=True)
class AssessmentFlags:
    """Second-wave assessment observations.

    When ``breathing_after_airway`` is false the remaining flags do not
    influence classification, but they are still stored with definite
    values.
    """

    breathing_after_airway: bool
    obeys_commands_or_purposeful: bool
    has_peripheral_pulse: bool
    in_respiratory_distress: bool
    major_hemorrhage_uncontrolled: bool
    likely_survivable_given_resources: bool
    minor_injuries_only: bool


@dataclass(frozen=True)
class Script:
    """Actor/animation brief: movement loop, voice lines, gesture responses."""

    movement_loop: Movement
    voice_lines: tuple[str, ...]
    gesture_on_wave_query: bool
    gesture_on_hurt_query: bool


@dataclass(frozen=True)
class PatientCase:
    case_id: str
    vitals: Vitals
    sort_obs: SortObservation
    flags: AssessmentFlags
    ground_truth: TriageCategory
    injuries_text: str
    moulage: bool
    script: Script


@dataclass(frozen=True)
class MasterCaseList:
    version: str
    cases: tuple[PatientCase, ...]

    def by_id(self, case_id: str) -> PatientCase:
        for case in self.cases:
            if case.case_id == case_id:
                return case
        raise KeyError(case_id)

    def by_category(self, category: TriageCategory) -> list[PatientCase]:
        return [c for c in self.cases if c.ground_truth is category]


@dataclass(frozen=True)
class Violation:
    rule: str
    case_id: str | None
    message: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, rule: str, case_id: str | None, message: str) -> None:
        self.violations.append(Violation(rule, case_id, message))

    def __str__(self) -> str:
        if self.ok:
            return "valid"
        return "\n".join(
            f"[{v.rule}] {v.case_id or '-'}: {v.message}" for v in self.violations
        )


def derive_flags_from_vitals(
    vitals: Vitals, cognition: SortObservation
) -> dict[str, bool | None]:
    """Flags derivable from numbers; non-derivable flags map to None.

    breathing follows the respiration rate, peripheral pulse follows the
    systolic threshold, obeying commands follows the sort observation.
    """
    return {
        "breathing_after_airway": vitals.rr_bpm > 0,
        "obeys_commands_or_purposeful": cognition.responds_to_commands,
        "has_peripheral_pulse": vitals.bp_sys_mmhg >= PULSE_BP_SYS_THRESHOLD,
        "in_respiratory_distress": None,
        "major_hemorrhage_uncontrolled": None,
        "likely_survivable_given_resources": None,
        "minor_injuries_only": None,
    }


def validate_case_list(case_list: MasterCaseList) -> ValidationReport:
    """Check the full consistency rule set; an empty report means valid.

    Rules: (length) exactly 20 cases; (histogram) exact category counts;
    (unique_ids) case ids unique; (rr_breathing) rr_bpm = 0 iff not
    breathing; (bp_order) diastolic <= systolic; (ground_truth) classifier
    output equals the stored category; (minor_consistency) minor-injuries
    cases have no distress or uncontrolled hemorrhage; (derived_flags)
    numeric-derived flags agree with stored flags; (script_gesture) the
    wave-gesture response mirrors the command-response observation.
    """
    from . import salt  # late import: salt depends on this module's types

    report = ValidationReport()

    if len(case_list.cases) != 20:
        report.add("length", None, f"expected 20 cases, found {len(case_list.cases)}")

    histogram = {name: 0 for name in REQUIRED_HISTOGRAM}
    for case in case_list.cases:
        histogram[case.ground_truth.value] += 1
    if histogram != REQUIRED_HISTOGRAM:
        for name, want in REQUIRED_HISTOGRAM.items():
            got = histogram[name]
            if got != want:
                report.add("histogram", None, f"{name}: expected {want}, found {got}")

    seen: dict[str, int] = {}
    for case in case_list.cases:
        seen[case.case_id] = seen.get(case.case_id, 0) + 1
    for case_id, count in seen.items():
        if count > 1:
            report.add("unique_ids", case_id, f"case id appears {count} times")

    for case in case_list.cases:
        breathing = case.flags.breathing_after_airway
        if (case.vitals.rr_bpm == 0) == breathing:
            report.add(
                "rr_breathing",
                case.case_id,
                f"rr_bpm={case.vitals.rr_bpm} inconsistent with "
                f"breathing_after_airway={breathing}",
            )
        if case.vitals.bp_dia_mmhg > case.vitals.bp_sys_mmhg:
            report.add(
                "bp_order",
                case.case_id,
                f"diastolic {case.vitals.bp_dia_mmhg} exceeds "
                f"systolic {case.vitals.bp_sys_mmhg}",
            )
        got = salt.classify(case.flags)
        if got is not case.ground_truth:
            report.add(
                "ground_truth",
                case.case_id,
                f"classifier says {got.value}, case says {case.ground_truth.value}",
            )
        if case.flags.minor_injuries_only and (
            case.flags.in_respiratory_distress
            or case.flags.major_hemorrhage_uncontrolled
        ):
            report.add(
                "minor_consistency",
                case.case_id,
                "minor_injuries_only set alongside distress or hemorrhage",
            )
        derived = derive_flags_from_vitals(case.vitals, case.sort_obs)
        stored = {
            "breathing_after_airway": case.flags.breathing_after_airway,
            "obeys_commands_or_purposeful": case.flags.obeys_commands_or_purposeful,
            "has_peripheral_pulse": case.flags.has_peripheral_pulse,
        }
        for name, value in stored.items():
            if derived[name] is not None and derived[name] != value:
                report.add(
                    "derived_flags",
                    case.case_id,
                    f"{name}={value} disagrees with value derived from vitals",
                )
        if case.script.gesture_on_wave_query != case.sort_obs.responds_to_commands:
            report.add(
                "script_gesture",
                case.case_id,
                "gesture_on_wave_query must equal responds_to_commands",
            )

    return report


# --- JSON (de)serialization -------------------------------------------------
#
# One JSON document per case list, field names exactly as in the dataclasses,
# unknown fields rejected. docs/cases.schema.json carries the schema.


def _expect_object(value, path: str) -> dict:
    if not isinstance(value, dict):
        raise FormatError(f"{path}: expected object, found {type(value).__name__}")
    return value


def _take(obj: dict, key: str, path: str):
    if key not in obj:
        raise FormatError(f"{path}: missing field {key!r}")
    return obj.pop(key)

def _no_extras(obj: dict, path: str) -> None:
    if obj:
        raise FormatError(f"{path}: unknown field {sorted(obj)[0]!r}")


def _dec_str(value, path: str) -> str:
    if not isinstance(value, str):
        raise FormatError(f"{path}: expected string")
    return value


def _dec_bool(value, path: str) -> bool:
    if not isinstance(value, bool):
        raise FormatError(f"{path}: expected boolean")
    return value


def _dec_int(value, path: str, lo: int, hi: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise FormatError(f"{path}: expected integer")
    if not lo <= value <= hi:
        raise FormatError(f"{path}: {value} outside range {lo}..{hi}")
    return value


def _dec_enum(enum_cls, value, path: str):
    name = _dec_str(value, path)
    try:
        return enum_cls(name)
    except ValueError:
        allowed = ", ".join(m.value for m in enum_cls)
        raise FormatError(f"{path}: {name!r} not one of: {allowed}") from None


def _dec_vitals(value, path: str) -> Vitals:
    obj = dict(_expect_object(value, path))
    vitals = Vitals(
        hr_bpm=_dec_int(_take(obj, "hr_bpm", path), f"{path}.hr_bpm", 0, 250),
        rr_bpm=_dec_int(_take(obj, "rr_bpm", path), f"{path}.rr_bpm", 0, 60),
        bp_sys_mmhg=_dec_int(_take(obj, "bp_sys_mmhg", path), f"{path}.bp_sys_mmhg", 0, 260),
        bp_dia_mmhg=_dec_int(_take(obj, "bp_dia_mmhg", path), f"{path}.bp_dia_mmhg", 0, 160),
    )
    _no_extras(obj, path)
    return vitals


def _dec_case(value, path: str) -> PatientCase:
    obj = dict(_expect_object(value, path))
    case_id = _dec_str(_take(obj, "case_id", path), f"{path}.case_id")
    vitals = _dec_vitals(_take(obj, "vitals", path), f"{path}.vitals")

    sort_raw = dict(_expect_object(_take(obj, "sort_obs", path), f"{path}.sort_obs"))
    sort_obs = SortObservation(
        can_walk=_dec_bool(_take(sort_raw, "can_walk", path), f"{path}.sort_obs.can_walk"),
        responds_to_commands=_dec_bool(
            _take(sort_raw, "responds_to_commands", path),
            f"{path}.sort_obs.responds_to_commands",
        ),
    )
    _no_extras(sort_raw, f"{path}.sort_obs")

    flags_raw = dict(_expect_object(_take(obj, "flags", path), f"{path}.flags"))
    flag_values = {}
    for name in (
        "breathing_after_airway",
        "obeys_commands_or_purposeful",
        "has_peripheral_pulse",
        "in_respiratory_distress",
        "major_hemorrhage_uncontrolled",
        "likely_survivable_given_resources",
        "minor_injuries_only",
    ):
        flag_values[name] = _dec_bool(_take(flags_raw, name, path), f"{path}.flags.{name}")
    _no_extras(flags_raw, f"{path}.flags")

    ground_truth = _dec_enum(TriageCategory, _take(obj, "ground_truth", path), f"{path}.ground_truth")
    injuries_text = _dec_str(_take(obj, "injuries_text", path), f"{path}.injuries_text")
    moulage = _dec_bool(_take(obj, "moulage", path), f"{path}.moulage")

    script_raw = dict(_expect_object(_take(obj, "script", path), f"{path}.script"))
    lines_raw = _take(script_raw, "voice_lines", path)
    if not isinstance(lines_raw, list):
        raise FormatError(f"{path}.script.voice_lines: expected array")
    voice_lines = tuple(
        _dec_str(line, f"{path}.script.voice_lines[{i}]") for i, line in enumerate(lines_raw)
    )
    script = Script(
        movement_loop=_dec_enum(
            Movement, _take(script_raw, "movement_loop", path), f"{path}.script.movement_loop"
        ),
        voice_lines=voice_lines,
        gesture_on_wave_query=_dec_bool(
            _take(script_raw, "gesture_on_wave_query", path),
            f"{path}.script.gesture_on_wave_query",
        ),
        gesture_on_hurt_query=_dec_bool(
            _take(script_raw, "gesture_on_hurt_query", path),
            f"{path}.script.gesture_on_hurt_query",
        ),
    )
    _no_extras(script_raw, f"{path}.script")
    _no_extras(obj, path)

    return PatientCase(
        case_id=case_id,
        vitals=vitals,
        sort_obs=sort_obs,
        flags=AssessmentFlags(**flag_values),
        ground_truth=ground_truth,
        injuries_text=injuries_text,
        moulage=moulage,
        script=script,
    )


def case_list_from_json(text: str) -> MasterCaseList:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"case list: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    obj = dict(_expect_object(doc, "case list"))
    version = _dec_str(_take(obj, "version", "case list"), "case_list.version")
    cases_raw = _take(obj, "cases", "case list")
    if not isinstance(cases_raw, list):
        raise FormatError("case_list.cases: expected array")
    cases = tuple(_dec_case(raw, f"cases[{i}]") for i, raw in enumerate(cases_raw))
    _no_extras(obj, "case list")
    return MasterCaseList(version=version, cases=cases)


def case_to_dict(case: PatientCase) -> dict:
    return {
        "case_id": case.case_id,
        "vitals": {
            "hr_bpm": case.vitals.hr_bpm,
            "rr_bpm": case.vitals.rr_bpm,
            "bp_sys_mmhg": case.vitals.bp_sys_mmhg,
            "bp_dia_mmhg": case.vitals.bp_dia_mmhg,
        },
        "sort_obs": {
            "can_walk": case.sort_obs.can_walk,
            "responds_to_commands": case.sort_obs.responds_to_commands,
        },
        "flags": {
            "breathing_after_airway": case.flags.breathing_after_airway,
            "obeys_commands_or_purposeful": case.flags.obeys_commands_or_purposeful,
            "has_peripheral_pulse": case.flags.has_peripheral_pulse,
            "in_respiratory_distress": case.flags.in_respiratory_distress,
            "major_hemorrhage_uncontrolled": case.flags.major_hemorrhage_uncontrolled,
            "likely_survivable_given_resources": case.flags.likely_survivable_given_resources,
            "minor_injuries_only": case.flags.minor_injuries_only,
        },
        "ground_truth": case.ground_truth.value,
        "injuries_text": case.injuries_text,
        "moulage": case.moulage,
        "script": {
            "movement_loop": case.script.movement_loop.value,
            "voice_lines": list(case.script.voice_lines),
            "gesture_on_wave_query": case.script.gesture_on_wave_query,
            "gesture_on_hurt_query": case.script.gesture_on_hurt_query,
        },
    }


def case_list_to_json(case_list: MasterCaseList) -> str:
    doc = {
        "version": case_list.version,
        "cases": [case_to_dict(c) for c in case_list.cases],
    }
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def load_case_list(path: str | Path) -> MasterCaseList:
    return case_list_from_json(Path(path).read_text(encoding="utf-8"))


def default_case_list() -> MasterCaseList:
    """The shipped 20-case roster."""
    text = resources.files("mci_sim.data").joinpath("cases.json").read_text("utf-8")
    return case_list_from_json(text)
