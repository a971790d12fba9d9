import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sceneground.metrics import (
    JudgedCase,
    case_score,
    chain_outcome,
    chain_stats,
    full_report,
    load_judged_jsonl,
    object_score,
)


def cases_from_scores(scores):
    return [JudgedCase(case_id=f"c{i}", judge_score=m) for i, m in enumerate(scores)]


class TestCaseScore:
    def test_all_fives(self):
        assert case_score(cases_from_scores([5, 5, 5])) == 100.0

    def test_all_ones(self):
        assert case_score(cases_from_scores([1, 1])) == 0.0

    def test_mixed_hand_arithmetic(self):
        # (0 + 0.5 + 1) / 3 * 100
        assert case_score(cases_from_scores([1, 3, 5])) == pytest.approx(50.0)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            case_score([])

    @given(st.lists(st.integers(1, 5), min_size=1, max_size=30))
    @settings(max_examples=50, deadline=None)
    def test_permutation_invariant(self, scores):
        a = case_score(cases_from_scores(scores))
        b = case_score(cases_from_scores(list(reversed(scores))))
        assert a == pytest.approx(b)

    def test_score_validation(self):
        with pytest.raises(ValueError):
            JudgedCase(case_id="x", judge_score=6)


def object_cases(per_object_scores):
    cases = []
    for oid, scores in per_object_scores.items():
        for k, m in enumerate(scores, start=1):
            cases.append(
                JudgedCase(case_id=f"{oid}-{k}", judge_score=m, object_id=oid, pair_index=k)
            )
    return cases


class TestObjectScore:
    def test_min_four_passes(self):
        assert object_score(object_cases({"o1": (4, 5, 4)})) == 100.0

    def test_one_three_fails(self):
        assert object_score(object_cases({"o1": (5, 5, 3)})) == 0.0

    def test_half_pass(self):
        cases = object_cases({"o1": (4, 5, 4), "o2": (5, 5, 3)})
        assert object_score(cases) == 50.0

    def test_wrong_pair_count(self):
        cases = object_cases({"o1": (4, 5, 4)})
        with pytest.raises(ValueError, match="expected 3"):
            object_score(cases + [JudgedCase("extra", 5, object_id="o1", pair_index=1)])


def chain_cases(counts):
    flags = {"G": (True, 5), "T1": (True, 1), "T2": (False, 5), "D": (False, 1)}
    cases = []
    i = 0
    for outcome, n in counts.items():
        g, m = flags[outcome]
        for _ in range(n):
            cases.append(
                JudgedCase(case_id=f"c{i}", judge_score=m, grounding_correct=g)
            )
            i += 1
    return cases


class TestChainStats:
    def test_outcome_classification(self):
        assert chain_outcome(True, True) == "G"
        assert chain_outcome(True, False) == "T1"
        assert chain_outcome(False, True) == "T2"
        assert chain_outcome(False, False) == "D"

    def test_all_good(self):
        stats = chain_stats(chain_cases({"G": 10}))
        assert stats.g == 100.0
        assert stats.t1 == stats.t2 == stats.d == 0.0
        assert stats.r2 == 0.0
        assert stats.r1 is None  # no QA failures with correct grounding possible

    def test_synthetic_counts(self):
        stats = chain_stats(chain_cases({"T1": 20, "D": 20, "T2": 10, "G": 50}))
        assert stats.r1 == pytest.approx(50.0)
        assert stats.r2 == pytest.approx(100 * 10 / 60, abs=1e-9)

    def test_published_row_reproduced(self):
        # 1000 records at the published outcome percentages
        stats = chain_stats(chain_cases({"T1": 192, "T2": 239, "D": 172, "G": 397}))
        assert stats.r1 == pytest.approx(53.0, abs=0.5)
        assert stats.r2 == pytest.approx(37.5, abs=0.5)

    def test_percentages_sum_to_100(self, rng):
        for _ in range(20):
            counts = {k: int(rng.integers(0, 30)) for k in ("G", "T1", "T2", "D")}
            if sum(counts.values()) == 0:
                counts["G"] = 1
            stats = chain_stats(chain_cases(counts))
            assert stats.g + stats.t1 + stats.t2 + stats.d == pytest.approx(100.0, abs=1e-9)

    def test_matches_bruteforce_counting(self, rng):
        cases = []
        for i in range(200):
            cases.append(
                JudgedCase(
                    case_id=f"c{i}",
                    judge_score=int(rng.integers(1, 6)),
                    grounding_correct=bool(rng.integers(0, 2)),
                )
            )
        stats = chain_stats(cases)
        expect = {"G": 0, "T1": 0, "T2": 0, "D": 0}
        for c in cases:
            qa = c.judge_score >= 4
            key = {(True, True): "G", (True, False): "T1", (False, True): "T2", (False, False): "D"}[
                (c.grounding_correct, qa)
            ]
            expect[key] += 1
        assert stats.counts == expect

    def test_missing_flag_rejected(self):
        with pytest.raises(ValueError, match="grounding_correct"):
            chain_stats([JudgedCase(case_id="x", judge_score=5)])


class TestJsonl:
    def test_load_round_trip(self, tmp_path):
        lines = [
            {"case_id": "a", "judge_score": 4, "object_id": "o1", "pair_index": 1,
             "grounding_correct": True},
            {"case_id": "b", "judge_score": 2},
        ]
        path = tmp_path / "judged.jsonl"
        path.write_text("\n".join(json.dumps(l) for l in lines))
        cases = load_judged_jsonl(path)
        assert len(cases) == 2
        assert cases[0].object_id == "o1"
        assert cases[1].grounding_correct is None

    def test_malformed_line_reports_number(self, tmp_path):
        path = tmp_path / "judged.jsonl"
        path.write_text('{"case_id": "a", "judge_score": 4}\nnot json\n')
        with pytest.raises(ValueError, match="line 2"):
            load_judged_jsonl(path)

    def test_full_report_sections(self, tmp_path):
        cases = object_cases({"o1": (4, 5, 4), "o2": (5, 5, 3)})
        report = full_report(cases)
        assert report["case_qa_score"] == pytest.approx(
            (3 / 4 + 1 + 3 / 4 + 1 + 1 + 2 / 4) / 6 * 100
        )
        assert report["object_qa_score"] == 50.0
        assert report["chain"] is None  # no grounding flags present
