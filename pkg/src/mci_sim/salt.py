"""Reference SALT triage procedure: global sort wave, individual assessment, treatment priority.

The assessment step is a pure decision procedure over seven boolean
observations (see :class:`mci_sim.model.AssessmentFlags`):

1. Not breathing after the airway is opened -> black.
2. Breathing, but failing any of: obeys commands / purposeful movement,
   peripheral pulse present, no respiratory distress, no uncontrolled
   major hemorrhage -> red if likely survivable given current resources,
   grey otherwise.
3. Breathing and passing all four checks -> green if injuries are minor
   only, yellow otherwise.
"""
from __future__ import annotations

import enum

from .errors import ProtocolError
from .model import AssessmentFlags, SortObservation, TriageCategory


class SortGroup(enum.Enum):
    """First-wave sort groups, ordered by assessment priority."""

    STILL = "still"          # assessed first
    WAVE_ONLY = "wave_only"  # assessed second
    WALKER = "walker"        # assessed last


_SORT_ORDER = {SortGroup.STILL: 0, SortGroup.WAVE_ONLY: 1, SortGroup.WALKER: 2}

# Treatment/transport priority, 1 = treated and evacuated first.
_PRIORITY = {
    TriageCategory.RED: 1,
    TriageCategory.YELLOW: 2,
    TriageCategory.GREY: 3,
    TriageCategory.GREEN: 4,
    TriageCategory.BLACK: 5,
}


def sort_group(obs: SortObservation) -> SortGroup:
    """Assign one patient to a first-wave sort group.

    A patient who cannot respond to commands sorts to the still group even
    if ambulatory (fail-safe toward earlier assessment).
    """
    if not obs.responds_to_commands:
        return SortGroup.STILL
    if obs.can_walk:
        return SortGroup.WALKER
    return SortGroup.WAVE_ONLY


def sort_wave(
    patients: list[tuple[str, SortObservation]],
) -> list[tuple[str, SortGroup]]:
    """Globally sort patients into assessment order.

    Returns every input exactly once: still group first, wave-only second,
    walkers last; ties within a group break by instance id ascending.
    """
    seen: set[str] = set()
    for instance_id, _ in patients:
        if instance_id in seen:
            raise ProtocolError(f"duplicate instance_id in sort wave: {instance_id!r}")
        seen.add(instance_id)
    grouped = [(instance_id, sort_group(obs)) for instance_id, obs in patients]
    grouped.sort(key=lambda item: (_SORT_ORDER[item[1]], item[0]))
    return grouped


def classify(flags: AssessmentFlags) -> TriageCategory:
    """Assign the five-category tag for one patient's assessment."""
    if not flags.breathing_after_airway:
        return TriageCategory.BLACK
    critical = (
        not flags.obeys_commands_or_purposeful
        or not flags.has_peripheral_pulse
        or flags.in_respiratory_distress
        or flags.major_hemorrhage_uncontrolled
    )
    if critical:
        if flags.likely_survivable_given_resources:
            return TriageCategory.RED
        return TriageCategory.GREY
    if flags.minor_injuries_only:
        return TriageCategory.GREEN
    return TriageCategory.YELLOW


def treatment_priority(category: TriageCategory) -> int:
    """Treatment/transport rank for a category; 1 is most urgent, 5 last."""
    return _PRIORITY[category]
