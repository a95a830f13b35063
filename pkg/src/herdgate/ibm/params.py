"""Simulator parameters.

Rates are per day. Symbols: ``beta_c`` within-herd transmission (frequency
dependent), ``sigma`` T->I progression, ``beta_e`` environment->cattle,
``eps_cattle``/``eps_badger`` environmental seeding per infectious cattle /
infected badger, ``delta`` environmental decay, ``badger_beta`` within-group
badger transmission and ``badger_beta_e`` environment->badger.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

_SE_FIELDS = ("se_T", "se_I", "severe_se_T", "severe_se_I")


@dataclass(frozen=True)
class TestCharacteristics:
    __test__ = False

    se_T: float = 0.55
    se_I: float = 0.8
    sp: float = 0.9995
    severe_se_T: float = 0.65
    severe_se_I: float = 0.9
    severe_sp: float = 0.998

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{f.name}={v} outside [0, 1]")
        if self.severe_se_T < self.se_T or self.severe_se_I < self.se_I:
            raise ValueError("severe sensitivity must be >= standard sensitivity")
        if self.severe_sp > self.sp:
            raise ValueError("severe specificity must be <= standard specificity")

    def shifted(self, delta: float) -> "TestCharacteristics":
        """Add ``delta`` to every sensitivity (standard and severe), clipped to [0, 1]."""
        kw = {k: min(1.0, max(0.0, getattr(self, k) + delta)) for k in _SE_FIELDS}
        return dataclasses.replace(self, **kw)

    def probabilities(self, severe: bool) -> tuple[float, float, float]:
        """Reaction probability for states (S, T, I)."""
        if severe:
            return 1.0 - self.severe_sp, self.severe_se_T, self.severe_se_I
        return 1.0 - self.sp, self.se_T, self.se_I


@dataclass(frozen=True)
class SimParams:
    beta_c: float = 0.01
    sigma: float = 1 / 180
    beta_e: float = 0.0
    eps_cattle: float = 1.0
    eps_badger: float = 1.0
    delta: float = 0.1
    badger_beta: float = 0.0
    badger_beta_e: float = 0.0
    birth_rate: float = 0.0
    death_rate: float = 0.0
    confirm_T: float = 0.3
    confirm_I: float = 0.8
    routine_interval: dict = field(default_factory=lambda: {"default": 365})
    follow_up_interval: int = 60
    clear_tests_to_restore: int = 2
    pre_movement_test: bool = True
    test: TestCharacteristics = field(default_factory=TestCharacteristics)

    def __post_init__(self):
        for name in ("beta_c", "sigma", "beta_e", "eps_cattle", "eps_badger", "delta", "badger_beta",
                     "badger_beta_e", "birth_rate", "death_rate"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("confirm_T", "confirm_I"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.follow_up_interval < 1 or self.clear_tests_to_restore < 1:
            raise ValueError("follow_up_interval and clear_tests_to_restore must be >= 1")
        if any(int(v) < 1 for v in self.routine_interval.values()):
            raise ValueError("routine intervals must be >= 1 day")

    def interval_for(self, area: str) -> int:
        if area in self.routine_interval:
            return int(self.routine_interval[area])
        if "default" in self.routine_interval:
            return int(self.routine_interval["default"])
        raise ValueError(f"no routine test interval for area {area!r}")

    def with_values(self, **values) -> "SimParams":
        """Copy with fields replaced; test-characteristic names are accepted too.

        Setting a standard sensitivity without its severe counterpart moves the
        severe value by the same amount (capped at 1), keeping their gap.
        """
        test_kw = {k: float(v) for k, v in values.items() if k in TestCharacteristics.__dataclass_fields__}
        own = {k: v for k, v in values.items() if k not in test_kw}
        unknown = set(own) - set(SimParams.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown parameters: {sorted(unknown)}")
        for std in ("se_T", "se_I"):
            sev = "severe_" + std
            if std in test_kw and sev not in test_kw:
                moved = getattr(self.test, sev) + test_kw[std] - getattr(self.test, std)
                test_kw[sev] = min(1.0, max(test_kw[std], moved))
        if "sp" in test_kw and "severe_sp" not in test_kw:
            test_kw["severe_sp"] = min(test_kw["sp"], max(0.0, self.test.severe_sp + test_kw["sp"] - self.test.sp))
        if test_kw:
            own["test"] = dataclasses.replace(self.test, **test_kw)
        return dataclasses.replace(self, **own)

    def get(self, name: str) -> float:
        if name in TestCharacteristics.__dataclass_fields__:
            return getattr(self.test, name)
        return getattr(self, name)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["routine_interval"] = dict(self.routine_interval)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimParams":
        d = dict(d)
        test = TestCharacteristics(**d.pop("test", {}))
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown SimParams fields: {sorted(unknown)}")
        return cls(test=test, **d)

    @classmethod
    def from_json(cls, path) -> "SimParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


def demo_params() -> SimParams:
    """Parameters giving a slow endemic regime on :func:`demo_world`: roughly a
    tenth of herds break down per year and herd sensitivity sits near 0.7, so
    better testing has room to act."""
    return SimParams(
        beta_c=0.01,
        beta_e=1e-6,
        eps_cattle=0.1,
        eps_badger=0.1,
        badger_beta=0.003,
        badger_beta_e=2e-4,
        birth_rate=1e-3,
        death_rate=1e-3,
        test=TestCharacteristics(se_T=0.35, se_I=0.55, severe_se_T=0.45, severe_se_I=0.65),
    )
