"""Detection rate matrix and the stochastic resolution of a single screening.

A DRM maps keys of decreasing specificity to detection profiles:

    level 3   containment + commodity + threat + sensor
    level 2   commodity + threat + sensor
    level 1   commodity & threat + scenario label

A lookup tries the levels in that order and falls back to the default profile.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterable


class Outcome(enum.IntEnum):
    TRUE_POSITIVE = 0
    FALSE_NEGATIVE = 1
    FALSE_POSITIVE = 2
    TRUE_NEGATIVE = 3

    @property
    def positive(self) -> bool:
        return self in (Outcome.TRUE_POSITIVE, Outcome.FALSE_POSITIVE)


DEFAULT_THREAT = "clandestine"


@dataclass(frozen=True)
class DrmKey:
    sensor: str
    threat: str = DEFAULT_THREAT
    commodity: str | None = None
    containment: str | None = None
    wall_thickness: float | None = None
    wall_density: float | None = None
    scenario: str | None = None

    def __post_init__(self):
        if not self.sensor or not self.threat:
            raise ValueError("a DRM key needs both a sensor and a threat")

    def at_level(self, level: int) -> tuple:
        """The part of the key a level-``level`` entry is indexed by."""
        if level == 3:
            return (self.containment, self.wall_thickness, self.wall_density,
                    self.commodity, self.threat, self.sensor)
        if level == 2:
            return (self.commodity, self.threat, self.sensor)
        if level == 1:
            return (self.commodity, self.threat, self.scenario)
        raise ValueError(f"no DRM level {level}")

    def specificity(self) -> int:
        """Highest level this key can be stored at."""
        if self.containment is not None and self.commodity is not None:
            return 3
        if self.commodity is not None:
            return 2
        return 1


@dataclass(frozen=True)
class DetectionProfile:
    tp_rate: float
    fp_rate: float

    def __post_init__(self):
        for name in ("tp_rate", "fp_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name}={value!r} outside [0, 1]")


@dataclass(frozen=True)
class DrmEntry:
    level: int
    key: DrmKey
    profile: DetectionProfile


@dataclass(frozen=True)
class LoadModifier:
    """Linear loss of sensitivity once the entrance queue exceeds ``q0``."""

    alpha: float = 0.0
    q0: int = 0
    floor: float = 0.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if not 0.0 <= self.floor <= 1.0:
            raise ValueError("floor must lie in [0, 1]")

    @property
    def inert(self) -> bool:
        return self.alpha == 0.0


class Drm:
    def __init__(self, entries: Iterable[DrmEntry] = (),
                 default_profile: DetectionProfile = DetectionProfile(0.9, 0.05)):
        self.default_profile = default_profile
        self.entries: list[DrmEntry] = []
        self._tables: dict[int, dict[tuple, DetectionProfile]] = {1: {}, 2: {}, 3: {}}
        for entry in entries:
            self.add(entry)

    def add(self, entry: DrmEntry) -> None:
        if entry.level not in self._tables:
            raise ValueError(f"DRM level must be 1, 2 or 3, got {entry.level!r}")
        required = {3: ("containment", "commodity"), 2: ("commodity",), 1: ("commodity",)}
        for name in required[entry.level]:
            if getattr(entry.key, name) is None:
                raise ValueError(f"level-{entry.level} DRM entry needs '{name}'")
        # level-1 entries without a sensor apply to every sensor
        index = entry.key.at_level(entry.level)
        if entry.level == 1:
            index = index + (entry.key.sensor,)
        table = self._tables[entry.level]
        if index in table:
            raise ValueError(f"duplicate DRM entry at level {entry.level}: {entry.key}")
        table[index] = entry.profile
        self.entries.append(entry)

    def __len__(self):
        return len(self.entries)

    def lookup(self, key: DrmKey) -> tuple[DetectionProfile, int | None]:
        """Most specific matching profile and its level (``None`` = default)."""
        hit = self._tables[3].get(key.at_level(3))
        if hit is not None:
            return hit, 3
        hit = self._tables[2].get(key.at_level(2))
        if hit is not None:
            return hit, 2
        level1 = self._tables[1]
        if level1:
            base = key.at_level(1)
            hit = level1.get(base + (key.sensor,))
            if hit is None:
                hit = level1.get(base + (ANY_SENSOR,))
            if hit is not None:
                return hit, 1
        return self.default_profile, None

    def with_common_tp(self, p: float, fp: float | None = None) -> "Drm":
        """Copy with every true-positive rate (and optionally every fp rate) set to ``p``."""

        def swap(profile):
            return DetectionProfile(p, profile.fp_rate if fp is None else fp)

        return Drm(
            [replace(e, profile=swap(e.profile)) for e in self.entries],
            swap(self.default_profile),
        )


# sensor label stored on level-1 entries that do not name one
ANY_SENSOR = "*"


def drm_lookup(drm: Drm, key: DrmKey) -> tuple[DetectionProfile, int | None]:
    return drm.lookup(key)


def effective_tp(base: DetectionProfile, queue_len: int, m: LoadModifier) -> float:
    if queue_len < 0:
        raise ValueError("queue length cannot be negative")
    tp = base.tp_rate
    if m.alpha == 0.0:
        return tp
    degraded = tp * (1.0 - m.alpha * max(0, queue_len - m.q0))
    # floor can exceed a weak sensor's base rate; the base rate wins then
    return min(tp, max(m.floor, degraded))


def resolve_screening(lorry, profile: DetectionProfile, rng, *, node_id=None,
                      sensor=None, now=0.0, tp=None) -> Outcome:
    """Draw one screening outcome and apply it to ``lorry``.

    A true positive means the clandestines were found: they are taken off the
    lorry and the first detecting node/sensor is remembered.  Every positive
    leaves the lorry flagged for the outcome-dependent routing downstream.
    ``tp`` overrides the profile's sensitivity (load-degraded rate).
    """
    u = rng.random()
    if lorry.clandestine_aboard:
        hit = u < (profile.tp_rate if tp is None else tp)
        outcome = Outcome.TRUE_POSITIVE if hit else Outcome.FALSE_NEGATIVE
        if hit:
            lorry.clandestine_aboard = False
            if lorry.detected_by is None:
                lorry.detected_by = (node_id, sensor)
    else:
        hit = u < profile.fp_rate
        outcome = Outcome.FALSE_POSITIVE if hit else Outcome.TRUE_NEGATIVE
    lorry.flagged = hit
    lorry.checks.append((node_id, sensor, outcome, now))
    return outcome


def drm_gaps(drm: Drm, universe: Iterable[DrmKey]) -> list[DrmKey]:
    return [key for key in universe if drm.lookup(key)[1] is None]


@dataclass
class ProfileCache:
    """Memoised ``(sensor, side, commodity) -> profile`` lookups for one run."""

    drm: Drm
    containment: dict = field(default_factory=dict)
    scenario: str | None = None
    _memo: dict = field(default_factory=dict)

    def get(self, sensor: str, side, commodity: str | None) -> DetectionProfile:
        k = (sensor, side, commodity)
        hit = self._memo.get(k)
        if hit is None:
            key = DrmKey(sensor=sensor, commodity=commodity,
                         containment=self.containment.get(side), scenario=self.scenario)
            hit = self._memo[k] = self.drm.lookup(key)[0]
        return hit
