"""Context selection schemes and dataset variant rendering.

Three schemes govern which preceding text is prepended to the first
argument of a classification item:

* ``default``: no context at all.
* ``add`` (ADn): the n sentences immediately preceding the sentence of the
  first argument, regardless of discourse links.
* ``oracle`` (ORn): the texts of up to n tree ancestors of the first
  argument, read root-to-argument, using the ground-truth annotations.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .treebank import (
    Corpus,
    DiscourseTree,
    RelationInstance,
    ancestors,
    extract_instances,
)

# n is optional in scheme names and defaults to 1 ("OR" means "OR1").
_SCHEME_RE = re.compile(r"^(?:(default)|(?:ad|add)(\d*)|(?:or|oracle)(\d*))$",
                        re.IGNORECASE)


@dataclass(frozen=True)
class ContextScheme:
    """Which preceding text gets prepended before the first argument."""

    kind: str  # "default" | "add" | "oracle"
    n: int | None = None

    def __post_init__(self):
        if self.kind not in ("default", "add", "oracle"):
            raise ValueError(f"unknown scheme kind {self.kind!r}")
        if self.kind == "default":
            if self.n is not None:
                raise ValueError("default scheme takes no n")
        elif self.n is None or self.n < 1:
            raise ValueError(f"{self.kind} scheme requires n >= 1")

    @property
    def tag(self) -> str:
        if self.kind == "default":
            return "default"
        prefix = "AD" if self.kind == "add" else "OR"
        return f"{prefix}{self.n}"

    @classmethod
    def parse(cls, text: str) -> "ContextScheme":
        m = _SCHEME_RE.match(text.strip())
        if not m:
            raise ValueError(f"cannot parse context scheme {text!r} "
                             "(expected default, AD<n> or OR<n>)")
        if m.group(1):
            return cls("default")
        if m.group(2) is not None:
            return cls("add", int(m.group(2) or 1))
        return cls("oracle", int(m.group(3) or 1))


DEFAULT_SCHEME = ContextScheme("default")


@dataclass(frozen=True)
class RenderedInstance:
    """A classification item with its context already selected."""

    instance_id: str
    context_text: str
    arg1_text: str
    arg2_text: str
    gold_label: str
    scheme: ContextScheme
    split: str
    connective: str = "none"

    @property
    def model_input(self) -> str:
        """Context-bearing first-argument string fed to a model."""
        if self.context_text:
            return f"{self.context_text} {self.arg1_text}"
        return self.arg1_text


@dataclass(frozen=True)
class VariantDataset:
    """Every instance of one split rendered under one scheme."""

    corpus_name: str
    scheme: ContextScheme
    split: str
    instances: tuple[RenderedInstance, ...]
    label_inventory: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        object.__setattr__(self, "label_inventory", tuple(self.label_inventory))
        ids = [inst.instance_id for inst in self.instances]
        if len(ids) != len(set(ids)):
            raise ValueError(f"{self.corpus_name}/{self.split}: "
                             "duplicate instance ids")

    def instance_ids(self) -> list[str]:
        return [inst.instance_id for inst in self.instances]

    def gold_labels(self) -> dict[str, str]:
        return {inst.instance_id: inst.gold_label for inst in self.instances}


def select_context(tree: DiscourseTree, instance: RelationInstance,
                   scheme: ContextScheme,
                   include_relations: bool = False) -> list[str]:
    """Pick the context fragments for one instance, in reading order.

    Oracle fragments come back furthest-ancestor-first so the concatenated
    text reads top-down; Add fragments are whole preceding sentences in
    document order.  ``include_relations`` prefixes oracle fragments with
    the relation label of the linked edge, off by default.
    """
    if instance.doc_id != tree.doc_id:
        raise ValueError(f"instance {instance.instance_id} does not belong "
                         f"to document {tree.doc_id}")
    dep = tree.edu(instance.arg2_edu_id)
    if dep.head_id != instance.arg1_edu_id:
        raise ValueError(f"instance {instance.instance_id} is inconsistent "
                         f"with tree {tree.doc_id}")

    if scheme.kind == "default":
        return []
    if scheme.kind == "add":
        return _preceding_sentences(tree, instance.arg1_edu_id, scheme.n)
    ancestor_ids = ancestors(tree, instance.arg1_edu_id, scheme.n)
    fragments = []
    for edu_id in reversed(ancestor_ids):
        edu = tree.edu(edu_id)
        if include_relations:
            fragments.append(f"({edu.relation}) {edu.text}")
        else:
            fragments.append(edu.text)
    return fragments


def _preceding_sentences(tree: DiscourseTree, edu_id: int, n: int) -> list[str]:
    arg_sentence = tree.edu(edu_id).sentence_index
    sentences: dict[int, list[str]] = {}
    for e in tree.real_edus:
        sentences.setdefault(e.sentence_index, []).append(e.text)
    picked = range(max(0, arg_sentence - n), arg_sentence)
    return [" ".join(sentences[i]) for i in picked if i in sentences]


def render_instance(instance: RelationInstance, fragments: Sequence[str],
                    scheme: ContextScheme, split: str) -> RenderedInstance:
    """Join fragments with single spaces and attach them to the instance."""
    return RenderedInstance(
        instance_id=instance.instance_id,
        context_text=" ".join(fragments),
        arg1_text=instance.arg1,
        arg2_text=instance.arg2,
        gold_label=instance.gold_label,
        scheme=scheme,
        split=split,
        connective=instance.connective,
    )


def corpus_label_inventory(corpus: Corpus) -> tuple[str, ...]:
    """Sorted distinct relation labels over all instances of a corpus."""
    labels = set()
    for tree in corpus.trees:
        for inst in extract_instances(tree):
            labels.add(inst.gold_label)
    return tuple(sorted(labels))


def build_variant_dataset(corpus: Corpus, scheme: ContextScheme,
                          label_inventory: Sequence[str] | None = None,
                          include_relations: bool = False) -> VariantDataset:
    """Render every instance of the corpus split under one scheme.

    ``label_inventory`` should be the training-split inventory when
    rendering dev or test data; it defaults to the labels of this corpus,
    which is only correct for the training split itself.
    """
    if label_inventory is None:
        label_inventory = corpus_label_inventory(corpus)
    rendered = []
    for tree in sorted(corpus.trees, key=lambda t: t.doc_id):
        for inst in extract_instances(tree):
            fragments = select_context(tree, inst, scheme, include_relations)
            rendered.append(render_instance(inst, fragments, scheme, corpus.split))
    return VariantDataset(
        corpus_name=corpus.name,
        scheme=scheme,
        split=corpus.split,
        instances=tuple(rendered),
        label_inventory=tuple(label_inventory),
    )


def write_variant_dataset(dataset: VariantDataset, path: Path | str) -> None:
    """Write the line-delimited dataset file consumed by inference.

    One JSON record per instance with fields {instance_id, context, arg1,
    arg2, label, scheme, split}, UTF-8, sorted by instance_id.  A
    non-default connective is carried in an optional extra field.
    """
    lines = []
    for inst in sorted(dataset.instances, key=lambda i: i.instance_id):
        record = {
            "instance_id": inst.instance_id,
            "context": inst.context_text,
            "arg1": inst.arg1_text,
            "arg2": inst.arg2_text,
            "label": inst.gold_label,
            "scheme": inst.scheme.tag,
            "split": inst.split,
        }
        if inst.connective != "none":
            record["connective"] = inst.connective
        lines.append(json.dumps(record, ensure_ascii=False))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_variant_dataset(path: Path | str, corpus_name: str = "",
                         label_inventory: Sequence[str] | None = None
                         ) -> VariantDataset:
    """Read a dataset file back; the inverse of write_variant_dataset.

    Without an explicit ``label_inventory`` the sorted labels found in the
    file are used, which matches the training split convention.
    """
    path = Path(path)
    instances = []
    scheme: ContextScheme | None = None
    split = ""
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{lineno}: malformed record: {exc}") from exc
        rec_scheme = ContextScheme.parse(rec["scheme"])
        if scheme is None:
            scheme, split = rec_scheme, rec["split"]
        elif rec_scheme != scheme or rec["split"] != split:
            raise ValueError(f"{path}:{lineno}: mixed scheme or split")
        instances.append(RenderedInstance(
            instance_id=rec["instance_id"],
            context_text=rec["context"],
            arg1_text=rec["arg1"],
            arg2_text=rec["arg2"],
            gold_label=rec["label"],
            scheme=rec_scheme,
            split=rec["split"],
            connective=rec.get("connective", "none"),
        ))
    if scheme is None:
        raise ValueError(f"{path}: empty dataset file")
    if label_inventory is None:
        label_inventory = tuple(sorted({i.gold_label for i in instances}))
    return VariantDataset(
        corpus_name=corpus_name or path.stem,
        scheme=scheme,
        split=split,
        instances=tuple(instances),
        label_inventory=tuple(label_inventory),
    )
