"""Structured pass/fail records for inequality checks.

Verdict rule for one-sided checks (lhs <= rhs expected):

* ``pass``         -- lhs.ci_high <= rhs.ci_low + slack,
* ``fail``         -- lhs.ci_low  >  rhs.ci_high + slack (clear violation),
* ``inconclusive`` -- the intervals overlap beyond the slack.

Equality-style checks compare |lhs - rhs| against an explicit tolerance.
The slack defaults to 1e-6 * max(1, |rhs|), so exact ties pass when both
sides are noise-free.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .estimators import EstimateWithCI

__all__ = ["InequalityReport", "one_sided_report", "equality_report", "SLACK_SCALE"]

SLACK_SCALE = 1e-6


@dataclass(frozen=True)
class InequalityReport:
    name: str
    lhs: EstimateWithCI
    rhs: EstimateWithCI
    margin: float
    verdict: str  # pass | fail | inconclusive
    slack: float
    kind: str = "one_sided"  # one_sided | equality
    constants: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    notes: tuple[str, ...] = ()

    def to_row(self) -> dict:
        return {
            "name": self.name,
            "lhs": self.lhs.value,
            "rhs": self.rhs.value,
            "margin": self.margin,
            "verdict": self.verdict,
            "seed": self.lhs.seed,
            "samples": self.lhs.count,
        }

    def to_json_dict(self) -> dict:
        def est(e: EstimateWithCI) -> dict:
            return {
                "value": e.value,
                "std_error": e.std_error,
                "ci_low": e.ci_low,
                "ci_high": e.ci_high,
                "confidence": e.confidence,
                "count": e.count,
                "seed": e.seed,
                "estimator_tag": e.estimator_tag,
                "note": e.note,
            }

        return {
            "name": self.name,
            "kind": self.kind,
            "lhs": est(self.lhs),
            "rhs": est(self.rhs),
            "margin": self.margin,
            "verdict": self.verdict,
            "slack": self.slack,
            "constants": dict(self.constants),
            "config": dict(self.config),
            "notes": list(self.notes),
            "seed": self.lhs.seed,
            "samples": self.lhs.count,
        }


def one_sided_report(name: str, lhs: EstimateWithCI, rhs: EstimateWithCI,
                     constants: dict | None = None, config: dict | None = None,
                     notes: tuple[str, ...] = (), slack: float | None = None,
                     ) -> InequalityReport:
    """Report for an 'lhs <= rhs' claim using the CI verdict rule."""
    if slack is None:
        slack = SLACK_SCALE * max(1.0, abs(rhs.value))
    if lhs.ci_high <= rhs.ci_low + slack:
        verdict = "pass"
    elif lhs.ci_low > rhs.ci_high + slack:
        verdict = "fail"
    else:
        verdict = "inconclusive"
    return InequalityReport(
        name=name,
        lhs=lhs,
        rhs=rhs,
        margin=rhs.value - lhs.value,
        verdict=verdict,
        slack=slack,
        kind="one_sided",
        constants=constants or {},
        config=config or {},
        notes=notes,
    )


def equality_report(name: str, lhs: EstimateWithCI, rhs: EstimateWithCI,
                    tolerance: float, constants: dict | None = None,
                    config: dict | None = None, notes: tuple[str, ...] = (),
                    ) -> InequalityReport:
    """Report for an 'lhs == rhs' claim at an explicit tolerance."""
    gap = abs(lhs.value - rhs.value)
    verdict = "pass" if gap <= tolerance else "fail"
    return InequalityReport(
        name=name,
        lhs=lhs,
        rhs=rhs,
        margin=rhs.value - lhs.value,
        verdict=verdict,
        slack=tolerance,
        kind="equality",
        constants=constants or {},
        config=config or {},
        notes=notes,
    )
