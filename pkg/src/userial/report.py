"""Check reports shared by the certificate checkers and the verifier."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional

# Every scheduled bound is checked against SLACK times its nominal value.
SLACK = 1.05


@dataclass(frozen=True)
class Check:
    name: str
    bound: float
    value: float
    passed: bool
    step: Optional[int] = None
    note: str = ""


def _num(x: float):
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    return x


@dataclass
class CheckReport:
    checks: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    @property
    def overall(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name: str, bound: float, value: float, passed: bool,
            step: Optional[int] = None, note: str = "") -> Check:
        c = Check(name, float(bound), float(value), bool(passed), step, note)
        self.checks.append(c)
        return c

    def upper(self, name: str, bound: float, value: float, step=None,
              slack: float = SLACK, strict: bool = True) -> Check:
        """Record value < slack * bound (or <= when strict is False)."""
        lim = slack * bound
        ok = value < lim if strict else value <= lim
        return self.add(name, lim, value, ok, step)

    def extend(self, other: "CheckReport", prefix: str = "") -> None:
        for c in other.checks:
            self.checks.append(Check(prefix + c.name, c.bound, c.value,
                                     c.passed, c.step, c.note))

    def failed(self) -> list:
        return [c for c in self.checks if not c.passed]

    def find(self, name: str) -> list:
        return [c for c in self.checks if c.name == name]

    def sorted_checks(self) -> list:
        # stable: by name, then step; order within equal keys is insertion
        return sorted(self.checks, key=lambda c: (c.name, -1 if c.step is None else c.step))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["check", "step", "bound", "value", "pass"])
        for c in self.sorted_checks():
            w.writerow([c.name, "" if c.step is None else c.step,
                        repr(c.bound), repr(c.value), "1" if c.passed else "0"])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {"overall": self.overall, "slack": SLACK,
                "provenance": self.provenance,
                "checks": [{"check": c.name, "step": c.step,
                            "bound": _num(c.bound), "value": _num(c.value),
                            "pass": c.passed, "note": c.note}
                           for c in self.sorted_checks()]}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True)

    def summary(self) -> str:
        bad = self.failed()
        head = f"{len(self.checks)} checks, {len(bad)} failed"
        return head + "".join(f"\n  FAIL {c.name} step={c.step} value={c.value:.6g} bound={c.bound:.6g}"
                              for c in bad)
