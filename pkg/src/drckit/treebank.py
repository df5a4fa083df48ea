"""Reading, validating and querying dependency discourse treebanks.

A treebank document is a list of EDUs (elementary discourse units) where
every EDU points at its head EDU through a labelled edge.  Documents carry
an explicit virtual ROOT node (id 0, head -1, relation "null") so that
"this EDU attaches to the root" is a queryable fact.  All structures here
are immutable once built; parsing and statistics are pure functions.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

ROOT_ID = 0
ROOT_HEAD = -1
ROOT_RELATION = "null"

#: File suffixes scanned when loading a corpus split directory.
DOCUMENT_SUFFIXES = (".dep", ".json", ".txt")

DEFAULT_CONNECTIVE = "none"


class TreebankError(Exception):
    """Base class for treebank ingestion failures."""


class TreeParseError(TreebankError):
    """A document could not be decoded into EDU records."""

    def __init__(self, doc_id: str, detail: str):
        super().__init__(f"{doc_id}: {detail}")
        self.doc_id = doc_id
        self.detail = detail


class TreeValidationError(TreebankError):
    """A decoded document violates the tree invariants."""

    def __init__(self, doc_id: str, violations: Sequence["Violation"]):
        detail = "; ".join(v.detail for v in violations)
        super().__init__(f"{doc_id}: {detail}")
        self.doc_id = doc_id
        self.violations = list(violations)


class CorpusError(TreebankError):
    """A corpus directory contains invalid documents."""

    def __init__(self, message: str, violations: Sequence["Violation"]):
        super().__init__(message)
        self.violations = list(violations)


@dataclass(frozen=True)
class EDU:
    """One elementary discourse unit plus its edge to the governing EDU."""

    id: int
    text: str
    head_id: int
    relation: str
    sentence_index: int = 0

    @property
    def is_root(self) -> bool:
        return self.head_id == ROOT_HEAD


@dataclass(frozen=True)
class DiscourseTree:
    """A single document: EDUs in document order, linked into a tree."""

    doc_id: str
    edus: tuple[EDU, ...]

    def __post_init__(self):
        object.__setattr__(self, "edus", tuple(self.edus))

    def edu(self, edu_id: int) -> EDU:
        for e in self.edus:
            if e.id == edu_id:
                return e
        raise ValueError(f"{self.doc_id}: unknown EDU id {edu_id}")

    @property
    def real_edus(self) -> tuple[EDU, ...]:
        return tuple(e for e in self.edus if not e.is_root)


@dataclass(frozen=True)
class Corpus:
    """One split of a treebank."""

    name: str
    split: str
    trees: tuple[DiscourseTree, ...]

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple(self.trees))


@dataclass(frozen=True)
class RelationInstance:
    """One classification item: a labelled head/dependent EDU pair.

    ``arg1`` is the text of the head EDU, ``arg2`` the text of the dependent
    EDU that carries the relation label.
    """

    instance_id: str
    doc_id: str
    arg1: str
    arg2: str
    arg1_edu_id: int
    arg2_edu_id: int
    gold_label: str
    connective: str = DEFAULT_CONNECTIVE


@dataclass(frozen=True)
class Violation:
    """One failed invariant, locatable by document."""

    doc_id: str
    code: str
    detail: str

    def report_line(self) -> str:
        return f"{self.doc_id}\t{self.code}\t{self.detail}"


@dataclass(frozen=True)
class GapStats:
    """Distance histogram for one gap unit (EDUs or sentences)."""

    histogram: dict[int, int]
    adjacent_fraction: float
    gap_3_to_5_fraction: float
    total: int


@dataclass(frozen=True)
class DistanceStats:
    """Head/dependent distance statistics in both gap units."""

    edu: GapStats
    sentence: GapStats


# Terminal punctuation, optionally followed by closing quotes or brackets.
_SENTENCE_END = re.compile(r"[.!?][\"'”’»)\]}]*$")


def ends_sentence(text: str) -> bool:
    return bool(_SENTENCE_END.search(text.rstrip()))


def derive_sentence_indices(tree: DiscourseTree) -> DiscourseTree:
    """Return a copy of ``tree`` with sentence_index filled on every EDU.

    A new sentence starts after an EDU whose text ends with terminal
    punctuation.  The virtual ROOT keeps index 0 and never advances the
    counter.
    """
    index = 0
    edus = []
    for e in tree.edus:
        if e.is_root:
            edus.append(replace(e, sentence_index=0))
            continue
        edus.append(replace(e, sentence_index=index))
        if ends_sentence(e.text):
            index += 1
    return DiscourseTree(tree.doc_id, tuple(edus))


def make_instance_id(doc_id: str, dependent_id: int) -> str:
    # Zero padding keeps lexicographic instance_id order aligned with
    # (doc_id, dependent id) order.
    return f"{doc_id}:{dependent_id:03d}"


def parse_tree_document(data: bytes | str, doc_id: str) -> DiscourseTree:
    """Decode and validate one canonical tree document.

    The canonical format is a JSON object with key "root" holding an array
    of ``{id, parent, relation, text}`` records in ascending id order.
    Raises TreeParseError for malformed input and TreeValidationError when
    the decoded records do not form a legal tree.
    """
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise TreeParseError(doc_id, f"malformed syntax: {exc}") from exc
    try:
        payload = json.loads(data)
    except json.JSONDecodeError as exc:
        raise TreeParseError(doc_id, f"malformed syntax: {exc}") from exc

    if not isinstance(payload, dict) or "root" not in payload:
        raise TreeParseError(doc_id, 'missing top-level "root" key')
    records = payload["root"]
    if not isinstance(records, list) or not records:
        raise TreeParseError(doc_id, '"root" must be a non-empty array')

    edus = []
    seen_ids = set()
    for i, rec in enumerate(records):
        if not isinstance(rec, dict):
            raise TreeParseError(doc_id, f"record {i} is not an object")
        for field, kind in (("id", int), ("parent", int),
                            ("relation", str), ("text", str)):
            if field not in rec:
                raise TreeParseError(doc_id, f"record {i}: missing field '{field}'")
            if not isinstance(rec[field], kind) or isinstance(rec[field], bool):
                raise TreeParseError(
                    doc_id, f"record {i}: field '{field}' must be {kind.__name__}")
        if rec["id"] in seen_ids:
            raise TreeParseError(doc_id, f"duplicate id {rec['id']}")
        seen_ids.add(rec["id"])
        edus.append(EDU(id=rec["id"], text=rec["text"].strip(),
                        head_id=rec["parent"], relation=rec["relation"]))

    tree = DiscourseTree(doc_id, tuple(edus))
    violations = validate_tree(tree)
    if violations:
        raise TreeValidationError(doc_id, violations)
    return derive_sentence_indices(tree)


def serialize_tree_document(tree: DiscourseTree) -> bytes:
    """Render a tree back into the canonical document format."""
    records = [
        {"id": e.id, "parent": e.head_id, "relation": e.relation, "text": e.text}
        for e in sorted(tree.edus, key=lambda e: e.id)
    ]
    text = json.dumps({"root": records}, ensure_ascii=False, indent=2)
    return (text + "\n").encode("utf-8")


def validate_tree(tree: DiscourseTree) -> list[Violation]:
    """Check every tree invariant; an empty list means the tree is legal.

    Violations are data, not errors: callers decide whether to raise.
    """
    v: list[Violation] = []
    doc = tree.doc_id
    ids = [e.id for e in tree.edus]
    id_set = set(ids)

    dupes = sorted(i for i, c in Counter(ids).items() if c > 1)
    if dupes:
        v.append(Violation(doc, "duplicate-id",
                           "duplicate ids: " + ",".join(map(str, dupes))))
    elif ids != list(range(len(ids))):
        v.append(Violation(doc, "id-order",
                           "ids must be contiguous from 0 in ascending order"))

    roots = [e for e in tree.edus if e.is_root]
    if not roots:
        v.append(Violation(doc, "no-root", "missing ROOT (no EDU with head -1)"))
    elif len(roots) > 1:
        v.append(Violation(doc, "multiple-roots",
                           "multiple roots: ids "
                           + ",".join(str(e.id) for e in roots)))
    else:
        root = roots[0]
        if root.id != ROOT_ID:
            v.append(Violation(doc, "root-id",
                               f"virtual ROOT must have id {ROOT_ID}, got {root.id}"))
        if root.relation != ROOT_RELATION:
            v.append(Violation(doc, "root-relation",
                               f'virtual ROOT must carry relation "{ROOT_RELATION}"'))

    attached = [e for e in tree.edus if not e.is_root and e.head_id == ROOT_ID]
    if len(roots) == 1 and roots[0].id == ROOT_ID:
        if not attached:
            v.append(Violation(doc, "root-attachment",
                               "no real EDU attaches to ROOT"))
        elif len(attached) > 1:
            v.append(Violation(doc, "root-attachment",
                               "multiple EDUs attach to ROOT: ids "
                               + ",".join(str(e.id) for e in attached)))

    for e in tree.edus:
        if e.is_root:
            continue
        if not e.text:
            v.append(Violation(doc, "empty-text", f"empty text at id {e.id}"))
        if e.head_id == e.id:
            v.append(Violation(doc, "self-loop", f"self-loop at id {e.id}"))
        elif e.head_id not in id_set and e.head_id != ROOT_HEAD:
            v.append(Violation(doc, "dangling-head",
                               f"dangling head_id {e.head_id} at id {e.id}"))

    v.extend(_find_cycles(tree))
    return v


def _find_cycles(tree: DiscourseTree) -> list[Violation]:
    heads = {e.id: e.head_id for e in tree.edus}
    state: dict[int, int] = {}  # 0 on current path, 1 done
    cycles = []
    for start in heads:
        if start in state:
            continue
        path = []
        node = start
        while node in heads and node not in state and heads[node] != node:
            state[node] = 0
            path.append(node)
            node = heads[node]
            if node in state and state[node] == 0:
                members = path[path.index(node):]
                if len(members) > 1:
                    cycles.append(sorted(members))
                break
        for n in path:
            state[n] = 1
    return [
        Violation(tree.doc_id, "cycle",
                  "cycle involving ids " + ",".join(map(str, members)))
        for members in sorted(cycles)
    ]


def extract_instances(tree: DiscourseTree) -> list[RelationInstance]:
    """One instance per real EDU whose head is another real EDU.

    The edge to the virtual ROOT yields no instance, so a legal tree with
    n real EDUs produces exactly n - 1 instances, ordered by dependent id.
    """
    by_id = {e.id: e for e in tree.edus}
    instances = []
    for e in sorted(tree.real_edus, key=lambda e: e.id):
        if e.head_id == ROOT_ID or e.head_id == ROOT_HEAD:
            continue
        head = by_id[e.head_id]
        instances.append(RelationInstance(
            instance_id=make_instance_id(tree.doc_id, e.id),
            doc_id=tree.doc_id,
            arg1=head.text,
            arg2=e.text,
            arg1_edu_id=head.id,
            arg2_edu_id=e.id,
            gold_label=e.relation,
        ))
    return instances


def ancestors(tree: DiscourseTree, edu_id: int, max_n: int) -> list[int]:
    """Up to ``max_n`` ancestor ids of ``edu_id``, nearest first.

    The walk stops before the virtual ROOT, so an EDU attached directly to
    ROOT has no ancestors.
    """
    if max_n < 1:
        raise ValueError(f"max_n must be >= 1, got {max_n}")
    by_id = {e.id: e for e in tree.edus}
    if edu_id not in by_id:
        raise ValueError(f"{tree.doc_id}: unknown EDU id {edu_id}")
    out: list[int] = []
    node = by_id[edu_id].head_id
    steps = 0
    while node != ROOT_HEAD and node != ROOT_ID and len(out) < max_n:
        if node not in by_id or steps > len(tree.edus):
            raise ValueError(f"{tree.doc_id}: broken head chain from id {edu_id}")
        out.append(node)
        node = by_id[node].head_id
        steps += 1
    return out


def dependency_distance_stats(corpus: Corpus) -> DistanceStats:
    """Head/dependent gap histograms over every relation instance.

    EDU gaps are signed (positive when the head precedes the dependent);
    sentence gaps are absolute.  Adjacency means an absolute gap of 1 in
    the respective unit.
    """
    if not corpus.trees:
        raise ValueError("corpus is empty")
    edu_hist: Counter[int] = Counter()
    sent_hist: Counter[int] = Counter()
    for tree in corpus.trees:
        by_id = {e.id: e for e in tree.edus}
        for inst in extract_instances(tree):
            edu_hist[inst.arg2_edu_id - inst.arg1_edu_id] += 1
            head = by_id[inst.arg1_edu_id]
            dep = by_id[inst.arg2_edu_id]
            sent_hist[abs(head.sentence_index - dep.sentence_index)] += 1
    return DistanceStats(edu=_gap_stats(edu_hist), sentence=_gap_stats(sent_hist))


def _gap_stats(hist: Counter) -> GapStats:
    total = sum(hist.values())
    adjacent = sum(c for gap, c in hist.items() if abs(gap) == 1)
    mid = sum(c for gap, c in hist.items() if 3 <= abs(gap) <= 5)
    return GapStats(
        histogram=dict(sorted(hist.items())),
        adjacent_fraction=adjacent / total if total else 0.0,
        gap_3_to_5_fraction=mid / total if total else 0.0,
        total=total,
    )


def count_instances(corpus: Corpus) -> int:
    return sum(len(extract_instances(t)) for t in corpus.trees)


# Converters normalize foreign serializations into the canonical model.
# The canonical (SciDTB-style) reader ships by default; other treebank
# front-ends register themselves here.
Converter = Callable[[bytes, str], DiscourseTree]

_CONVERTERS: dict[str, Converter] = {"scidtb": parse_tree_document}


def register_converter(name: str, fn: Converter) -> None:
    _CONVERTERS[name] = fn


def get_converter(name: str) -> Converter:
    try:
        return _CONVERTERS[name]
    except KeyError:
        raise ValueError(f"unknown converter {name!r}; "
                         f"known: {sorted(_CONVERTERS)}") from None


def iter_document_files(split_dir: Path) -> Iterator[Path]:
    for path in sorted(split_dir.iterdir()):
        if path.is_file() and path.suffix in DOCUMENT_SUFFIXES:
            yield path


def load_split(corpus_dir: Path | str, split: str, name: str | None = None,
               converter: str = "scidtb") -> tuple[Corpus, list[Violation]]:
    """Scan ``<corpus_dir>/<split>/`` and parse every document file.

    Returns the corpus of successfully parsed trees together with the
    violations collected from documents that failed; strict callers raise
    on a non-empty violation list.
    """
    corpus_dir = Path(corpus_dir)
    split_dir = corpus_dir / split
    if not split_dir.is_dir():
        raise TreebankError(f"split directory not found: {split_dir}")
    parse = get_converter(converter)
    trees = []
    violations: list[Violation] = []
    seen_docs = set()
    for path in iter_document_files(split_dir):
        doc_id = path.stem
        if doc_id in seen_docs:
            violations.append(Violation(doc_id, "duplicate-doc",
                                        f"doc_id occurs twice in split {split}"))
            continue
        seen_docs.add(doc_id)
        try:
            trees.append(parse(path.read_bytes(), doc_id))
        except TreeValidationError as exc:
            violations.extend(exc.violations)
        except TreeParseError as exc:
            violations.append(Violation(doc_id, "parse-error", exc.detail))
    return Corpus(name or corpus_dir.name, split, tuple(trees)), violations


def load_corpus(corpus_dir: Path | str, split: str, name: str | None = None,
                converter: str = "scidtb") -> Corpus:
    """Strict variant of load_split: raise CorpusError on any violation."""
    corpus, violations = load_split(corpus_dir, split, name, converter)
    if violations:
        raise CorpusError(
            f"{corpus.name}/{split}: {len(violations)} violation(s)", violations)
    return corpus


def write_validation_report(violations: Iterable[Violation], path: Path | str) -> None:
    lines = [v.report_line() for v in violations]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""),
                          encoding="utf-8")
