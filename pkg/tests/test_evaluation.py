from __future__ import annotations

import random

import pytest

from drckit.context import ContextScheme, RenderedInstance, VariantDataset
from drckit.evaluation import (
    aggregate_runs,
    bonferroni,
    score,
    wilcoxon_signed_rank,
)
from drckit.inference import UNPARSED, PredictionSet

from oracles import brute_force_scores, enumerate_signed_rank_p

DEFAULT = ContextScheme("default")


def make_dataset(gold: list[str]) -> VariantDataset:
    instances = tuple(
        RenderedInstance(
            instance_id=f"d:{i:03d}", context_text="", arg1_text=f"a{i}",
            arg2_text=f"b{i}", gold_label=label, scheme=DEFAULT, split="test")
        for i, label in enumerate(gold)
    )
    return VariantDataset("d", DEFAULT, "test", instances,
                          tuple(sorted(set(gold))))


def make_predictions(dataset: VariantDataset, labels: list[str],
                     condition: str = "default+x", run_id: int = 0
                     ) -> PredictionSet:
    records = {inst.instance_id: label
               for inst, label in zip(dataset.instances, labels)}
    return PredictionSet(condition=condition, run_id=run_id, records=records)


def test_score_all_correct():
    dataset = make_dataset(["A", "B", "A", "B"])
    report = score(dataset, make_predictions(dataset, ["A", "B", "A", "B"]))
    assert report.macro_f1 == 1.0
    assert report.accuracy == 1.0
    assert report.per_class["A"].support == 2


def test_score_hand_computed_case():
    dataset = make_dataset(["A", "A", "B", "B"])
    report = score(dataset, make_predictions(dataset, ["A", "B", "B", "B"]))
    assert report.per_class["A"].f1 == pytest.approx(2 / 3, abs=1e-15)
    assert report.per_class["B"].f1 == pytest.approx(4 / 5, abs=1e-15)
    assert report.macro_f1 == pytest.approx(11 / 15, abs=1e-15)
    assert report.accuracy == 0.75


def test_score_all_unparsed():
    dataset = make_dataset(["A", "B"])
    report = score(dataset, make_predictions(dataset, [UNPARSED, UNPARSED]))
    assert report.macro_f1 == 0.0
    assert report.accuracy == 0.0
    assert report.confusion.counts[0][-1] == 1  # gold A landed in <other>


def test_score_requires_exact_coverage():
    dataset = make_dataset(["A", "B"])
    preds = make_predictions(dataset, ["A", "B"])
    del preds.records["d:001"]
    with pytest.raises(ValueError, match="cover"):
        score(dataset, preds)


def test_score_matches_brute_force_oracle():
    rng = random.Random(99)
    for _ in range(300):
        n_labels = rng.randint(1, 6)
        labels = [f"L{i}" for i in range(n_labels)]
        n = rng.randint(1, 50)
        gold = [rng.choice(labels) for _ in range(n)]
        pred = [rng.choice(labels + [UNPARSED, "junk"]) for _ in range(n)]
        dataset = make_dataset(gold)
        report = score(dataset, make_predictions(dataset, pred))
        macro, accuracy = brute_force_scores(gold, pred)
        assert report.macro_f1 == pytest.approx(macro, abs=1e-15)
        assert report.accuracy == pytest.approx(accuracy, abs=1e-15)


def test_score_invariant_under_relabeling():
    rng = random.Random(4)
    labels = ["x", "y", "z"]
    gold = [rng.choice(labels) for _ in range(40)]
    pred = [rng.choice(labels) for _ in range(40)]
    dataset = make_dataset(gold)
    base = score(dataset, make_predictions(dataset, pred))
    mapping = {"x": "q", "y": "r", "z": "s"}
    dataset2 = make_dataset([mapping[g] for g in gold])
    renamed = score(dataset2,
                    make_predictions(dataset2, [mapping[p] for p in pred]))
    assert renamed.macro_f1 == pytest.approx(base.macro_f1, abs=1e-15)
    assert renamed.accuracy == base.accuracy


def test_aggregate_two_runs():
    dataset = make_dataset(["A", "B"])
    r1 = score(dataset, make_predictions(dataset, ["A", "B"], run_id=0))
    agg = aggregate_runs([r1])
    assert agg.mean_macro_f1 == 1.0
    assert agg.stddev == 0.0
    assert agg.n_runs == 1


def test_aggregate_sample_stddev():
    from dataclasses import replace
    dataset = make_dataset(["A", "B"])
    base = score(dataset, make_predictions(dataset, ["A", "B"]))
    reports = [replace(base, macro_f1=0.75, run_id=0),
               replace(base, macro_f1=0.76, run_id=1)]
    agg = aggregate_runs(reports)
    assert agg.mean_macro_f1 == pytest.approx(0.755)
    assert agg.stddev == pytest.approx(0.0070710678, abs=1e-9)


def test_aggregate_equal_scores_zero_stddev():
    from dataclasses import replace
    dataset = make_dataset(["A"])
    base = score(dataset, make_predictions(dataset, ["A"]))
    reports = [replace(base, run_id=i) for i in range(10)]
    agg = aggregate_runs(reports)
    assert agg.stddev == 0.0
    assert agg.n_runs == 10


def test_aggregate_rejects_mixed_conditions():
    from dataclasses import replace
    dataset = make_dataset(["A"])
    base = score(dataset, make_predictions(dataset, ["A"]))
    with pytest.raises(ValueError, match="mixed"):
        aggregate_runs([base, replace(base, condition="other")])


def test_wilcoxon_all_positive_ten_pairs():
    a = [0.5 + 0.01 * (i + 1) for i in range(10)]
    b = [0.5] * 10
    result = wilcoxon_signed_rank(a, b)
    assert result.n_effective == 10
    assert result.w_plus == 55.0
    assert result.p_two_sided == pytest.approx(2 / 1024, abs=1e-15)
    assert result.method == "exact"


def test_wilcoxon_identical_vectors():
    result = wilcoxon_signed_rank([0.3, 0.4], [0.3, 0.4])
    assert result.p_two_sided == 1.0
    assert result.n_effective == 0
    assert result.method == "all-tied"


def test_wilcoxon_matches_enumeration_oracle():
    rng = random.Random(17)
    for _ in range(120):
        n = rng.randint(1, 8)
        a = [rng.choice([0.0, 0.1, 0.25, 0.5, 0.75]) for _ in range(n)]
        b = [rng.choice([0.0, 0.1, 0.25, 0.5, 0.75]) for _ in range(n)]
        result = wilcoxon_signed_rank(a, b)
        w_ref, p_ref = enumerate_signed_rank_p(a, b)
        assert result.w_plus == pytest.approx(w_ref, abs=1e-12)
        assert result.p_two_sided == pytest.approx(p_ref, abs=1e-12)


def test_wilcoxon_shift_and_scale_invariance():
    rng = random.Random(31)
    a = [rng.random() for _ in range(9)]
    b = [rng.random() for _ in range(9)]
    base = wilcoxon_signed_rank(a, b)
    shifted = wilcoxon_signed_rank([x + 5 for x in a], [x + 5 for x in b])
    assert shifted.p_two_sided == pytest.approx(base.p_two_sided, abs=1e-12)
    scaled = wilcoxon_signed_rank([x * 4 for x in a], [x * 4 for x in b])
    assert scaled.p_two_sided == pytest.approx(base.p_two_sided, abs=1e-12)


def test_wilcoxon_bounds():
    rng = random.Random(53)
    for _ in range(100):
        n = rng.randint(1, 12)
        a = [rng.random() for _ in range(n)]
        b = [rng.random() for _ in range(n)]
        result = wilcoxon_signed_rank(a, b)
        assert 0.0 <= result.p_two_sided <= 1.0
        n_eff = result.n_effective
        assert 0.0 <= result.w_plus <= n_eff * (n_eff + 1) / 2


def test_wilcoxon_normal_approximation_path():
    n = 30
    a = [0.5 + 0.001 * (i + 1) for i in range(n)]
    b = [0.5] * n
    result = wilcoxon_signed_rank(a, b)
    assert result.method == "normal"
    assert 0.0 < result.p_two_sided < 1e-4
    # perfectly balanced differences sit at the null mean, p collapses to 1
    diffs = [float(d) for d in range(1, 12)] + [-float(d) for d in range(1, 12)]
    sym = wilcoxon_signed_rank(diffs, [0.0] * len(diffs))
    assert sym.method == "normal"
    assert sym.p_two_sided == 1.0


def test_wilcoxon_handles_tied_magnitudes():
    a = [1.0, 1.0, 2.0, 0.0]
    b = [0.0, 0.0, 0.0, 0.0]
    result = wilcoxon_signed_rank(a, b)
    w_ref, p_ref = enumerate_signed_rank_p(a, b)
    assert result.n_effective == 3
    assert result.w_plus == pytest.approx(w_ref, abs=1e-12)
    assert result.p_two_sided == pytest.approx(p_ref, abs=1e-12)


def test_wilcoxon_length_mismatch():
    with pytest.raises(ValueError):
        wilcoxon_signed_rank([1.0], [1.0, 2.0])


def test_bonferroni_adjustment():
    result = wilcoxon_signed_rank([1, 2, 3], [0, 0, 0.0])
    [adjusted] = bonferroni([result], m=2, alpha=0.05)
    assert adjusted.p_adjusted == pytest.approx(min(1.0, 2 * result.p_two_sided))

    from dataclasses import replace
    r = replace(result, p_two_sided=0.01)
    [adj] = bonferroni([r], m=2, alpha=0.05)
    assert adj.p_adjusted == pytest.approx(0.02)
    assert adj.significant is True

    r = replace(result, p_two_sided=0.8)
    [adj] = bonferroni([r], m=3, alpha=0.05)
    assert adj.p_adjusted == 1.0
    assert adj.significant is False

    r = replace(result, p_two_sided=0.0196)
    [adj] = bonferroni([r], m=2, alpha=0.05)
    assert adj.p_adjusted == pytest.approx(0.0392)
    assert adj.significant is True


def test_bonferroni_requires_family_at_least_results():
    result = wilcoxon_signed_rank([1.0], [0.0])
    with pytest.raises(ValueError, match="smaller"):
        bonferroni([result, result], m=1)
