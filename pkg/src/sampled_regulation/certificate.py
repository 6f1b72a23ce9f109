"""Pass/fail bookkeeping for numerical certificates."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    margin: float
    tolerance: float
    detail: str = ""

    def as_dict(self):
        return {"name": self.name, "pass": bool(self.passed), "margin": float(self.margin),
                "tolerance": float(self.tolerance), "detail": self.detail}


@dataclass
class CertificateReport:
    """Ordered list of checks; ``overall`` is their conjunction."""

    checks: List[Check] = field(default_factory=list)

    @property
    def overall(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name, passed, margin, tolerance, detail=""):
        self.checks.append(Check(name, bool(passed), float(margin), float(tolerance), detail))
        return self

    def extend(self, other: "CertificateReport", prefix=""):
        for c in other.checks:
            self.checks.append(Check(prefix + c.name, c.passed, c.margin, c.tolerance, c.detail))
        return self

    def __getitem__(self, name) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failed(self):
        return [c for c in self.checks if not c.passed]

    def worst_margin(self):
        return max((c.margin for c in self.checks), default=float("nan"))

    def as_dict(self):
        return {"overall": self.overall, "checks": [c.as_dict() for c in self.checks]}

    @classmethod
    def from_dict(cls, d):
        rep = cls()
        for c in d["checks"]:
            rep.add(c["name"], c["pass"], c["margin"], c["tolerance"], c.get("detail", ""))
        return rep

    def summary(self):
        lines = [f"{'PASS' if c.passed else 'FAIL'}  {c.name:<28s} margin={c.margin:+.3e} tol={c.tolerance:.1e}"
                 for c in self.checks]
        lines.append(f"overall: {'PASS' if self.overall else 'FAIL'}")
        return "\n".join(lines)
