"""Constrained random scenario generation, author-mode edits, persistence.

Generation is a pure function of (case list, seed, area/layout). The PRNG
is pinned: MT19937 via ``random.Random(seed)``, with every draw derived
from ``Random.random()`` (the one method whose stream is guaranteed stable
across CPython versions for a given seed). Draw order is fixed: category
picks, then demographics, then poses.
"""
from __future__ import annotations

import enum
import hashlib
import json
import math
import random
from dataclasses import dataclass, replace
from itertools import product
from pathlib import Path

from .errors import FormatError, GenerationError, LayoutError, NotFoundError, ReferentialError
from .model import (
    Demographics,
    Gender,
    MasterCaseList,
    PatientCase,
    Race,
    TriageCategory,
)

TIME_LIMIT_S = 600
MIN_SEPARATION_M = 1.5
PLACEMENT_RETRY_BOUND = 10_000

DEFAULT_VIRTUAL_AREA = (10.0, 10.0)   # width, depth in meters
DEFAULT_ACTOR_AREA = (30.0, 30.0)

# Demographic quota for the virtual task: the first four instances cover
# these combinations (shuffled); the fifth draws from the full product.
QUOTA_COMBOS = (
    Demographics(Race.WHITE, Gender.WOMAN),
    Demographics(Race.BLACK, Gender.WOMAN),
    Demographics(Race.BLACK, Gender.MAN),
    Demographics(Race.WHITE, Gender.MAN),
)

ALL_COMBOS = tuple(Demographics(r, g) for r, g in product(Race, Gender))

CATEGORY_ORDER = (
    TriageCategory.BLACK,
    TriageCategory.GREY,
    TriageCategory.RED,
    TriageCategory.YELLOW,
    TriageCategory.GREEN,
)


class Mode(enum.Enum):
    VIRTUAL = "virtual"
    ACTOR = "actor"


def _quantize(value: float) -> float:
    # 1 mm precision; +0.0 normalizes negative zero
    return round(value, 3) + 0.0


@dataclass(frozen=True)
class Pose:
    """World-frame position (y up) and heading. Coordinates quantized to 1 mm."""

    x: float
    y: float
    z: float
    yaw_deg: float = 0.0

    def __post_init__(self):
        for name in ("x", "y", "z", "yaw_deg"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"pose {name} must be finite")
        if self.z < 0:
            raise ValueError("pose z must be >= 0")
        object.__setattr__(self, "x", _quantize(self.x))
        object.__setattr__(self, "y", _quantize(self.y))
        object.__setattr__(self, "z", _quantize(self.z))
        object.__setattr__(self, "yaw_deg", _quantize(self.yaw_deg % 360.0))

    def distance_to(self, other: "Pose") -> float:
        return math.sqrt(
            (self.x - other.x) ** 2 + (self.y - other.y) ** 2 + (self.z - other.z) ** 2
        )


@dataclass(frozen=True)
class PatientInstance:
    instance_id: str
    case_id: str
    demographics: Demographics
    pose: Pose
    visible: bool


@dataclass(frozen=True)
class Scenario:
    scenario_id: str
    mode: Mode
    seed: int
    case_list_version: str
    instances: tuple[PatientInstance, ...]
    time_limit_s: int = TIME_LIMIT_S

    @property
    def required_responders(self) -> int:
        return 1 if self.mode is Mode.VIRTUAL else 2

    def instance(self, instance_id: str) -> PatientInstance:
        for inst in self.instances:
            if inst.instance_id == instance_id:
                return inst
        raise NotFoundError(f"unknown instance_id {instance_id!r}")


class _Stream:
    """Deterministic draws layered on Random.random() only."""

    def __init__(self, seed: int):
        self._rng = random.Random(seed)

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self._rng.random()

    def index(self, n: int) -> int:
        # floor-scaled; the tiny modulo bias is irrelevant here
        return min(int(self._rng.random() * n), n - 1)

    def pick(self, seq):
        return seq[self.index(len(seq))]

    def shuffled(self, seq):
        items = list(seq)
        for i in range(len(items) - 1, 0, -1):
            j = self.index(i + 1)
            items[i], items[j] = items[j], items[i]
        return items


def _draw_poses(stream: _Stream, count: int, area: tuple[float, float]) -> list[Pose]:
    width, depth = area
    if width <= 0 or depth <= 0:
        raise GenerationError(f"degenerate area {width} x {depth}")
    poses: list[Pose] = []
    retries = 0
    while len(poses) < count:
        candidate = Pose(
            x=stream.uniform(0.0, width),
            y=0.0,
            z=stream.uniform(0.0, depth),
            yaw_deg=stream.uniform(0.0, 360.0),
        )
        if all(candidate.distance_to(p) >= MIN_SEPARATION_M for p in poses):
            poses.append(candidate)
            continue
        retries += 1
        if retries > PLACEMENT_RETRY_BOUND:
            raise LayoutError(
                f"could not place {count} patients {MIN_SEPARATION_M} m apart in "
                f"{width} x {depth} m after {PLACEMENT_RETRY_BOUND} retries; "
                "use a larger area"
            )
    return poses


def generate_virtual_scenario(
    case_list: MasterCaseList,
    seed: int,
    area: tuple[float, float] = DEFAULT_VIRTUAL_AREA,
) -> Scenario:
    """Five visible patients, one per category, demographic quota satisfied."""
    stream = _Stream(seed)

    picks: list[PatientCase] = []
    for category in CATEGORY_ORDER:
        subset = case_list.by_category(category)
        if not subset:
            raise GenerationError(f"case list has no {category.value} cases")
        picks.append(stream.pick(subset))

    demographics = stream.shuffled(QUOTA_COMBOS)
    demographics.append(stream.pick(ALL_COMBOS))

    poses = _draw_poses(stream, 5, area)

    instances = tuple(
        PatientInstance(
            instance_id=f"p{i + 1}",
            case_id=case.case_id,
            demographics=demographics[i],
            pose=poses[i],
            visible=True,
        )
        for i, case in enumerate(picks)
    )
    return Scenario(
        scenario_id=f"virtual-{seed}",
        mode=Mode.VIRTUAL,
        seed=seed,
        case_list_version=case_list.version,
        instances=instances,
    )


def generate_actor_scenario(
    case_list: MasterCaseList,
    seed: int,
    layout: list[Pose] | None = None,
    area: tuple[float, float] = DEFAULT_ACTOR_AREA,
) -> Scenario:
    """All twenty cases instantiated once, invisible, for the team task."""
    if layout is not None and len(layout) != len(case_list.cases):
        raise GenerationError(
            f"layout has {len(layout)} poses, need {len(case_list.cases)}"
        )
    stream = _Stream(seed)
    demographics = [stream.pick(ALL_COMBOS) for _ in case_list.cases]
    poses = list(layout) if layout is not None else _draw_poses(
        stream, len(case_list.cases), area
    )
    instances = tuple(
        PatientInstance(
            instance_id=f"p{i + 1}",
            case_id=case.case_id,
            demographics=demographics[i],
            pose=poses[i],
            visible=False,
        )
        for i, case in enumerate(case_list.cases)
    )
    return Scenario(
        scenario_id=f"actor-{seed}",
        mode=Mode.ACTOR,
        seed=seed,
        case_list_version=case_list.version,
        instances=instances,
    )


def place_patient(scenario: Scenario, instance_id: str, pose: Pose) -> Scenario:
    """Pure update: returns a scenario with one instance moved."""
    target = scenario.instance(instance_id)  # raises NotFoundError
    instances = tuple(
        replace(inst, pose=pose) if inst is target else inst
        for inst in scenario.instances
    )
    return replace(scenario, instances=instances)


def set_visibility(scenario: Scenario, instance_id: str, visible: bool) -> Scenario:
    target = scenario.instance(instance_id)
    instances = tuple(
        replace(inst, visible=visible) if inst is target else inst
        for inst in scenario.instances
    )
    return replace(scenario, instances=instances)


# --- Constraint checks (used by tests and the server at session creation) ---


def scenario_violations(scenario: Scenario, case_list: MasterCaseList) -> list[str]:
    problems: list[str] = []
    known = {c.case_id for c in case_list.cases}
    for inst in scenario.instances:
        if inst.case_id not in known:
            problems.append(f"{inst.instance_id}: unknown case_id {inst.case_id!r}")
    ids = [inst.instance_id for inst in scenario.instances]
    if len(set(ids)) != len(ids):
        problems.append("duplicate instance ids")
    if scenario.case_list_version != case_list.version:
        problems.append(
            f"case list version {scenario.case_list_version!r} != bound {case_list.version!r}"
        )
    if problems:
        return problems

    if scenario.mode is Mode.VIRTUAL:
        if len(scenario.instances) != 5:
            problems.append(f"virtual scenario has {len(scenario.instances)} instances")
        categories = sorted(
            case_list.by_id(i.case_id).ground_truth.value for i in scenario.instances
        )
        if categories != sorted(c.value for c in TriageCategory):
            problems.append(f"categories not one-per: {categories}")
        combos = [(i.demographics.race, i.demographics.gender) for i in scenario.instances]
        for combo in QUOTA_COMBOS:
            key = (combo.race, combo.gender)
            if key in combos:
                combos.remove(key)
            else:
                problems.append(f"demographic quota missing {combo.race.value}/{combo.gender.value}")
        if any(not i.visible for i in scenario.instances):
            problems.append("virtual instances must be visible")
    else:
        refs = sorted(i.case_id for i in scenario.instances)
        if refs != sorted(known):
            problems.append("actor scenario must reference every case exactly once")
        if any(i.visible for i in scenario.instances):
            problems.append("actor instances must be invisible")
    if scenario.time_limit_s != TIME_LIMIT_S:
        problems.append(f"time_limit_s must be {TIME_LIMIT_S}")
    return problems


# --- Persistence -------------------------------------------------------------
#
# Canonical form: stable field order, pose coordinates as fixed three-decimal
# strings so save/load round-trips without floating-point drift.


def _pose_to_dict(pose: Pose) -> dict:
    return {
        "x": f"{pose.x:.3f}",
        "y": f"{pose.y:.3f}",
        "z": f"{pose.z:.3f}",
        "yaw_deg": f"{pose.yaw_deg:.3f}",
    }


def _pose_from_dict(value, path: str) -> Pose:
    if not isinstance(value, dict):
        raise FormatError(f"{path}: expected object")
    obj = dict(value)
    parts = {}
    for name in ("x", "y", "z", "yaw_deg"):
        if name not in obj:
            raise FormatError(f"{path}: missing field {name!r}")
        raw = obj.pop(name)
        if not isinstance(raw, str):
            raise FormatError(f"{path}.{name}: expected decimal string")
        try:
            parts[name] = float(raw)
        except ValueError:
            raise FormatError(f"{path}.{name}: {raw!r} is not a decimal") from None
    if obj:
        raise FormatError(f"{path}: unknown field {sorted(obj)[0]!r}")
    try:
        return Pose(**parts)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def scenario_to_dict(scenario: Scenario) -> dict:
    return {
        "scenario_id": scenario.scenario_id,
        "mode": scenario.mode.value,
        "seed": scenario.seed,
        "case_list_version": scenario.case_list_version,
        "time_limit_s": scenario.time_limit_s,
        "required_responders": scenario.required_responders,
        "instances": [
            {
                "instance_id": inst.instance_id,
                "case_id": inst.case_id,
                "demographics": {
                    "race": inst.demographics.race.value,
                    "gender": inst.demographics.gender.value,
                },
                "pose": _pose_to_dict(inst.pose),
                "visible": inst.visible,
            }
            for inst in scenario.instances
        ],
    }


def scenario_to_json(scenario: Scenario) -> str:
    return json.dumps(scenario_to_dict(scenario), indent=2, ensure_ascii=False) + "\n"


def scenario_sha256(scenario: Scenario) -> str:
    return hashlib.sha256(scenario_to_json(scenario).encode("utf-8")).hexdigest()


def scenario_from_dict(doc, path: str = "scenario") -> Scenario:
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: expected object")
    obj = dict(doc)

    def take(key):
        if key not in obj:
            raise FormatError(f"{path}: missing field {key!r}")
        return obj.pop(key)

    scenario_id = take("scenario_id")
    mode_raw = take("mode")
    seed = take("seed")
    version = take("case_list_version")
    time_limit = take("time_limit_s")
    required = take("required_responders")
    instances_raw = take("instances")
    if obj:
        raise FormatError(f"{path}: unknown field {sorted(obj)[0]!r}")

    if not isinstance(scenario_id, str):
        raise FormatError(f"{path}.scenario_id: expected string")
    try:
        mode = Mode(mode_raw)
    except ValueError:
        raise FormatError(f"{path}.mode: {mode_raw!r} not one of: virtual, actor") from None
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0 or seed >= 2**64:
        raise FormatError(f"{path}.seed: expected unsigned 64-bit integer")
    if not isinstance(version, str):
        raise FormatError(f"{path}.case_list_version: expected string")
    if isinstance(time_limit, bool) or not isinstance(time_limit, int) or time_limit <= 0:
        raise FormatError(f"{path}.time_limit_s: expected positive integer")
    if not isinstance(instances_raw, list):
        raise FormatError(f"{path}.instances: expected array")

    instances = []
    for i, raw in enumerate(instances_raw):
        ipath = f"{path}.instances[{i}]"
        if not isinstance(raw, dict):
            raise FormatError(f"{ipath}: expected object")
        iobj = dict(raw)

        def itake(key):
            if key not in iobj:
                raise FormatError(f"{ipath}: missing field {key!r}")
            return iobj.pop(key)

        instance_id = itake("instance_id")
        case_id = itake("case_id")
        demo_raw = itake("demographics")
        pose = _pose_from_dict(itake("pose"), f"{ipath}.pose")
        visible = itake("visible")
        if iobj:
            raise FormatError(f"{ipath}: unknown field {sorted(iobj)[0]!r}")
        if not isinstance(instance_id, str) or not isinstance(case_id, str):
            raise FormatError(f"{ipath}: instance_id and case_id must be strings")
        if not isinstance(visible, bool):
            raise FormatError(f"{ipath}.visible: expected boolean")
        if not isinstance(demo_raw, dict):
            raise FormatError(f"{ipath}.demographics: expected object")
        try:
            demographics = Demographics(
                race=Race(demo_raw.get("race")), gender=Gender(demo_raw.get("gender"))
            )
        except ValueError:
            raise FormatError(f"{ipath}.demographics: unknown race or gender") from None
        if set(demo_raw) != {"race", "gender"}:
            raise FormatError(f"{ipath}.demographics: unexpected fields")
        instances.append(
            PatientInstance(instance_id, case_id, demographics, pose, visible)
        )

    expected = 1 if mode is Mode.VIRTUAL else 2
    if required != expected:
        raise FormatError(
            f"{path}.required_responders: expected {expected} for {mode.value} mode"
        )
    return Scenario(
        scenario_id=scenario_id,
        mode=mode,
        seed=seed,
        case_list_version=version,
        instances=tuple(instances),
        time_limit_s=time_limit,
    )


@dataclass
class LoadedScenario:
    scenario: Scenario
    warnings: list[str]


def scenario_from_json(
    text: str, case_list: MasterCaseList | None = None
) -> LoadedScenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"scenario: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    scenario = scenario_from_dict(doc)
    warnings: list[str] = []
    if case_list is not None:
        known = {c.case_id for c in case_list.cases}
        for inst in scenario.instances:
            if inst.case_id not in known:
                raise ReferentialError(
                    f"{inst.instance_id} references unknown case_id {inst.case_id!r}"
                )
        if scenario.case_list_version != case_list.version:
            warnings.append(
                f"scenario built against case list {scenario.case_list_version!r}, "
                f"bound list is {case_list.version!r}"
            )
    return LoadedScenario(scenario, warnings)


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(scenario_to_json(scenario), encoding="utf-8")


def load_scenario(
    path: str | Path, case_list: MasterCaseList | None = None
) -> LoadedScenario:
    return scenario_from_json(Path(path).read_text(encoding="utf-8"), case_list)


def export_actor_briefs(scenario: Scenario, case_list: MasterCaseList) -> str:
    """One printable brief per actor: location, movement, lines, vitals."""
    blocks = []
    for inst in scenario.instances:
        case = case_list.by_id(inst.case_id)
        lines = "\n".join(f'    "{line}"' for line in case.script.voice_lines) or "    (none)"
        blocks.append(
            "\n".join(
                [
                    f"=== {inst.instance_id} ({case.case_id}) ===",
                    f"position: x={inst.pose.x:.1f} m, z={inst.pose.z:.1f} m, facing {inst.pose.yaw_deg:.0f} deg",
                    f"presentation: {case.injuries_text}",
                    f"movement: {case.script.movement_loop.value}",
                    f"voice lines:\n{lines}",
                    f"vitals if asked: HR {case.vitals.hr_bpm}, RR {case.vitals.rr_bpm}, "
                    f"BP {case.vitals.bp_sys_mmhg}/{case.vitals.bp_dia_mmhg}",
                    f"walks: {'yes' if case.sort_obs.can_walk else 'no'}; "
                    f"follows commands: {'yes' if case.sort_obs.responds_to_commands else 'no'}",
                ]
            )
        )
    return "\n\n".join(blocks) + "\n"
