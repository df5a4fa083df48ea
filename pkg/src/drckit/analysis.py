"""Paired error analysis between two prediction conditions.

For every instance and run, condition B (typically the context-bearing
one) either wins (B correct, A wrong), loses (A correct, B wrong) or ties
with condition A.  Margins aggregate wins and losses per gold relation
over the runs, and a connective-lexicon lookup over the first word of the
second argument separates explicitly marked relations from implicit ones.
"""

from __future__ import annotations

import string
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .inference import PredictionSet

WIN = "win"
LOSS = "loss"
TIE = "tie"

WINNING = "winning"
LOSING = "losing"
TIED = "tied"

_PUNCT = string.punctuation + "‘’“”«»"


@dataclass(frozen=True)
class PairedOutcome:
    instance_id: str
    run_id: int
    outcome: str  # win | loss | tie
    gold_label: str


@dataclass(frozen=True)
class RelationMargin:
    """Win/loss balance of one relation, averaged over runs."""

    relation: str
    wins: int
    losses: int
    ties: int
    delta: float  # (wins - losses) / number of runs
    category: str  # winning | losing | tied


@dataclass(frozen=True)
class ConnectiveLexicon:
    entries: frozenset[str]
    source: str = ""

    def __contains__(self, token: str) -> bool:
        return token in self.entries


@dataclass(frozen=True)
class CategoryMatch:
    matched: int
    total: int
    percentage: float


@dataclass(frozen=True)
class ConnectiveMatchReport:
    by_category: dict[str, CategoryMatch]
    level: str = "instance"


def _gold_map(gold) -> Mapping[str, str]:
    if hasattr(gold, "gold_labels"):
        return gold.gold_labels()
    return gold


def pair_outcomes(gold, preds_a: PredictionSet, preds_b: PredictionSet,
                  run_id: int) -> list[PairedOutcome]:
    """One outcome per instance for a single paired run.

    ``gold`` is a VariantDataset or a mapping instance_id -> gold label;
    both prediction sets must cover it exactly.
    """
    labels = _gold_map(gold)
    for name, preds in (("A", preds_a), ("B", preds_b)):
        if set(preds.records) != set(labels):
            raise ValueError(f"predictions {name} do not cover the gold instances")
    outcomes = []
    for instance_id in sorted(labels):
        gold_label = labels[instance_id]
        a_correct = preds_a.records[instance_id] == gold_label
        b_correct = preds_b.records[instance_id] == gold_label
        if b_correct and not a_correct:
            outcome = WIN
        elif a_correct and not b_correct:
            outcome = LOSS
        else:
            outcome = TIE
        outcomes.append(PairedOutcome(instance_id, run_id, outcome, gold_label))
    return outcomes


def relation_margins(outcomes: Iterable[PairedOutcome], num_runs: int,
                     normalizer: str = "runs") -> list[RelationMargin]:
    """Aggregate outcomes from all runs into per-relation margins.

    The default delta is (wins - losses) / num_runs; ``normalizer="support"``
    divides by the relation's outcome count instead, giving a per-instance
    margin.  Sorted by absolute delta descending (relation name breaks
    ties), the order the win/loss tables are usually presented in.
    """
    if num_runs < 1:
        raise ValueError("num_runs must be >= 1")
    if normalizer not in ("runs", "support"):
        raise ValueError(f"unknown normalizer {normalizer!r}")
    tallies: dict[str, Counter] = {}
    for o in outcomes:
        tallies.setdefault(o.gold_label, Counter())[o.outcome] += 1
    margins = []
    for relation, tally in tallies.items():
        wins, losses, ties = tally[WIN], tally[LOSS], tally[TIE]
        denominator = num_runs if normalizer == "runs" else wins + losses + ties
        delta = (wins - losses) / denominator
        category = WINNING if delta > 0 else LOSING if delta < 0 else TIED
        margins.append(RelationMargin(relation=relation, wins=wins,
                                      losses=losses, ties=ties,
                                      delta=delta, category=category))
    return sorted(margins, key=lambda m: (-abs(m.delta), m.relation))


def margins_by_category(margins: Sequence[RelationMargin]
                        ) -> dict[str, list[str]]:
    """Relation names per category, in margin order."""
    categories: dict[str, list[str]] = {WINNING: [], LOSING: [], TIED: []}
    for m in margins:
        categories[m.category].append(m.relation)
    return categories


def load_connective_lexicon(path: Path | str) -> ConnectiveLexicon:
    """One connective per line, '#' comments allowed; lowercased, deduped."""
    path = Path(path)
    entries = set()
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        entries.add(line.lower())
    if not entries:
        raise ValueError(f"empty connective lexicon: {path}")
    return ConnectiveLexicon(entries=frozenset(entries), source=str(path))


def default_lexicon() -> ConnectiveLexicon:
    """The lexicon shipped with the package."""
    text = (resources.files("drckit.data") / "connectives.txt").read_text("utf-8")
    entries = {
        line.strip().lower()
        for line in text.splitlines()
        if line.strip() and not line.startswith("#")
    }
    return ConnectiveLexicon(entries=frozenset(entries), source="builtin")


def first_connective_token(text: str) -> str:
    """First whitespace token after lowercasing and punctuation stripping.

    Tokens that are pure punctuation (an opening bracket, a quote) are
    skipped, so "( CC )" yields "cc".
    """
    for token in text.lower().split():
        token = token.strip(_PUNCT)
        if token:
            return token
    return ""


def _normalized_tokens(text: str, limit: int = 4) -> list[str]:
    tokens = []
    for token in text.lower().split():
        token = token.strip(_PUNCT)
        if token:
            tokens.append(token)
        if len(tokens) >= limit:
            break
    return tokens


def _matches(arg2_text: str, lexicon: ConnectiveLexicon, multiword: bool) -> bool:
    if multiword:
        tokens = _normalized_tokens(arg2_text)
        for end in range(len(tokens), 0, -1):
            if " ".join(tokens[:end]) in lexicon:
                return True
        return False
    return first_connective_token(arg2_text) in lexicon


def _arg2_text(instance) -> str:
    return getattr(instance, "arg2_text", None) or instance.arg2


def connective_match_rate(instances: Iterable,
                          relation_categories: Mapping[str, Sequence[str]],
                          lexicon: ConnectiveLexicon,
                          level: str = "instance",
                          multiword: bool = False) -> ConnectiveMatchReport:
    """Fraction of instances whose arg2 opens with a known connective.

    ``relation_categories`` maps category names (e.g. winning/losing) to
    the relations they contain, as produced by margins_by_category.  At
    ``level="type"`` the percentage is the unweighted mean of per-relation
    match rates instead of the instance-level pool.
    """
    if level not in ("instance", "type"):
        raise ValueError(f"unknown level {level!r}")
    relation_to_category = {}
    for category, relations in relation_categories.items():
        for relation in relations:
            relation_to_category[relation] = category

    per_relation: dict[str, list[int]] = {}
    for inst in instances:
        category = relation_to_category.get(inst.gold_label)
        if category is None:
            continue
        hit = _matches(_arg2_text(inst), lexicon, multiword)
        per_relation.setdefault(inst.gold_label, []).append(1 if hit else 0)

    by_category = {}
    for category, relations in relation_categories.items():
        hits = [per_relation.get(r, []) for r in relations]
        matched = sum(sum(h) for h in hits)
        total = sum(len(h) for h in hits)
        if level == "instance":
            percentage = 100.0 * matched / total if total else 0.0
        else:
            rates = [100.0 * sum(h) / len(h) for h in hits if h]
            percentage = sum(rates) / len(rates) if rates else 0.0
        by_category[category] = CategoryMatch(matched=matched, total=total,
                                              percentage=percentage)
    return ConnectiveMatchReport(by_category=by_category, level=level)


def write_margins_tsv(margins: Sequence[RelationMargin], path: Path | str) -> None:
    lines = ["relation\twins\tlosses\tties\tdelta\tcategory"]
    for m in margins:
        lines.append(f"{m.relation}\t{m.wins}\t{m.losses}\t{m.ties}"
                     f"\t{m.delta:.6g}\t{m.category}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_connective_report_tsv(report: ConnectiveMatchReport,
                                path: Path | str) -> None:
    lines = ["category\tmatched\ttotal\tpercentage"]
    for category in sorted(report.by_category):
        c = report.by_category[category]
        lines.append(f"{category}\t{c.matched}\t{c.total}\t{c.percentage:.1f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
