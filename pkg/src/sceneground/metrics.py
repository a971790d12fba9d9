"""Case/object QA scores and grounding-QA chain coherence statistics.

Judge scores are inputs (1..5 from an external judge); everything here is
pure arithmetic over them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

# A QA pair passes when the judge gives at least this score; the same bar
# gates the object-level metric and chain classification.
QA_PASS_SCORE = 4


@dataclass(frozen=True)
class JudgedCase:
    case_id: str
    judge_score: int
    object_id: Optional[str] = None
    pair_index: Optional[int] = None
    grounding_correct: Optional[bool] = None

    def __post_init__(self) -> None:
        if self.judge_score not in (1, 2, 3, 4, 5):
            raise ValueError(f"judge_score must be in 1..5, got {self.judge_score}")
        if self.object_id is not None and self.pair_index not in (1, 2, 3):
            raise ValueError(
                f"pair_index must be 1, 2, or 3 for object cases, got {self.pair_index}"
            )

    @property
    def qa_correct(self) -> bool:
        return self.judge_score >= QA_PASS_SCORE


def case_score(cases: Sequence[JudgedCase]) -> float:
    """Mean of (M - 1) / 4 over all pairs, scaled to 0..100."""
    if not cases:
        raise ValueError("case_score of an empty record set is undefined")
    return sum((c.judge_score - 1) / 4 for c in cases) / len(cases) * 100.0


def object_score(cases: Sequence[JudgedCase]) -> float:
    """Fraction of objects whose three QA pairs all score at least 4, in %."""
    groups: dict[str, list[JudgedCase]] = {}
    for c in cases:
        if c.object_id is None:
            raise ValueError(f"case {c.case_id} has no object_id")
        groups.setdefault(c.object_id, []).append(c)
    if not groups:
        raise ValueError("object_score of an empty record set is undefined")
    for oid, members in groups.items():
        if len(members) != 3:
            raise ValueError(f"object {oid} has {len(members)} pairs, expected 3")
    passed = sum(
        1
        for members in groups.values()
        if min(m.judge_score for m in members) >= QA_PASS_SCORE
    )
    return passed / len(groups) * 100.0


def chain_outcome(grounding_correct: bool, qa_correct: bool) -> str:
    if grounding_correct:
        return "G" if qa_correct else "T1"
    return "T2" if qa_correct else "D"


@dataclass(frozen=True)
class ChainStats:
    g: float  # percent (grounding ok, QA ok)
    t1: float  # percent (grounding ok, QA failed)
    t2: float  # percent (grounding failed, QA ok) - shortcut answers
    d: float  # percent (both failed)
    r1: Optional[float]  # T1 / (T1 + D) * 100; None when the denominator is 0
    r2: Optional[float]  # T2 / (T2 + G) * 100; None when the denominator is 0
    counts: dict

    def to_json(self) -> dict:
        return {
            "G": self.g,
            "T1": self.t1,
            "T2": self.t2,
            "D": self.d,
            "R1": self.r1,
            "R2": self.r2,
            "counts": self.counts,
        }


def chain_stats(cases: Sequence[JudgedCase]) -> ChainStats:
    """Outcome percentages plus the two conditional coherence ratios."""
    if not cases:
        raise ValueError("chain_stats of an empty record set is undefined")
    counts = {"G": 0, "T1": 0, "T2": 0, "D": 0}
    for c in cases:
        if c.grounding_correct is None:
            raise ValueError(f"case {c.case_id} has no grounding_correct flag")
        counts[chain_outcome(c.grounding_correct, c.qa_correct)] += 1
    n = len(cases)
    g, t1, t2, d = (counts[k] for k in ("G", "T1", "T2", "D"))
    r1 = t1 / (t1 + d) * 100.0 if (t1 + d) > 0 else None
    r2 = t2 / (t2 + g) * 100.0 if (t2 + g) > 0 else None
    return ChainStats(
        g=g / n * 100.0,
        t1=t1 / n * 100.0,
        t2=t2 / n * 100.0,
        d=d / n * 100.0,
        r1=r1,
        r2=r2,
        counts=counts,
    )


def load_judged_jsonl(path: Path) -> list[JudgedCase]:
    cases = []
    for lineno, line in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            cases.append(
                JudgedCase(
                    case_id=str(obj["case_id"]),
                    judge_score=int(obj["judge_score"]),
                    object_id=obj.get("object_id"),
                    pair_index=obj.get("pair_index"),
                    grounding_correct=obj.get("grounding_correct"),
                )
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}: line {lineno}: {exc}") from exc
    return cases


def full_report(cases: Sequence[JudgedCase]) -> dict:
    """Everything computable from the records; sections that need missing
    fields come back null."""
    report: dict = {"num_cases": len(cases), "case_qa_score": case_score(cases)}
    if all(c.object_id is not None for c in cases):
        try:
            report["object_qa_score"] = object_score(cases)
        except ValueError:
            report["object_qa_score"] = None
    else:
        report["object_qa_score"] = None
    if all(c.grounding_correct is not None for c in cases):
        report["chain"] = chain_stats(cases).to_json()
    else:
        report["chain"] = None
    return report
