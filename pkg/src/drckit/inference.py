"""Prompt construction, output parsing, baselines and prediction files.

Predictions come from three places: a chat-completion endpoint (see
``endpoint``), the deterministic desk-scale baselines below, or external
prediction files produced by a separate fine-tuning harness.  All three
yield a PredictionSet, the unit that evaluation and pairing consume.
"""

from __future__ import annotations

import json
import logging
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .context import RenderedInstance, VariantDataset

log = logging.getLogger(__name__)

#: Sentinel for model output that names no known label.  It is a value,
#: not an error: unparsed predictions are counted and scored as wrong.
UNPARSED = "<UNPARSED>"

BASELINE_KINDS = ("majority", "cue")


@dataclass(frozen=True)
class ICLExample:
    """One in-context example line: two passages, a connective, the label."""

    arg1: str
    arg2: str
    connective: str
    label: str


@dataclass(frozen=True)
class PromptSpec:
    """Everything needed to render one classification prompt."""

    label_inventory: tuple[str, ...]
    icl_examples: tuple[ICLExample, ...]
    target: RenderedInstance
    connective_token: str = "none"

    def __post_init__(self):
        example_labels = [ex.label for ex in self.icl_examples]
        if example_labels != list(self.label_inventory):
            raise ValueError("need exactly one example per label, "
                             "in inventory order")


@dataclass
class PredictionSet:
    """Per-run model outputs keyed by instance id."""

    condition: str
    run_id: int
    records: dict[str, str]

    @property
    def unparsed_count(self) -> int:
        return sum(1 for label in self.records.values() if label == UNPARSED)


def sample_icl_examples(train_dataset: VariantDataset, seed: int
                        ) -> tuple[ICLExample, ...]:
    """Pick one training instance per label, deterministically from seed.

    Example passages use the model-input string, so context-bearing
    training variants yield context-bearing examples.
    """
    rng = random.Random(seed)
    by_label: dict[str, list[RenderedInstance]] = {}
    for inst in train_dataset.instances:
        by_label.setdefault(inst.gold_label, []).append(inst)
    examples = []
    for label in train_dataset.label_inventory:
        candidates = by_label.get(label)
        if not candidates:
            raise ValueError(f"label {label!r} has no training instance")
        pick = rng.choice(candidates)
        examples.append(ICLExample(
            arg1=pick.model_input,
            arg2=pick.arg2_text,
            connective=pick.connective,
            label=label,
        ))
    return tuple(examples)


def _example_line(arg1: str, arg2: str, connective: str, slot: str) -> str:
    return (f"Passage 1: <{arg1}>, Passage 2: <{arg2}>, "
            f"connective: <{connective}> | {slot}")


def build_prompt(spec: PromptSpec) -> str:
    """Render the MASK-replacement classification prompt.

    Line 1 carries the instruction, the bracketed label list and the first
    example; each remaining example gets its own line; the final line holds
    the target passages with the [MASK] slot.  Context rides inside
    Passage 1 through the target's model-input string.
    """
    labels = ", ".join(spec.label_inventory)
    first = spec.icl_examples[0]
    lines = [
        "Replace the MASK token (a discourse relation) by selecting only one "
        f"of the following labels: [ {labels}] Examples: "
        + _example_line(first.arg1, first.arg2, first.connective, first.label)
    ]
    for ex in spec.icl_examples[1:]:
        lines.append(_example_line(ex.arg1, ex.arg2, ex.connective, ex.label))
    connective = spec.target.connective or spec.connective_token
    lines.append(_example_line(spec.target.model_input, spec.target.arg2_text,
                               connective, "[MASK]"))
    return "\n".join(lines)


def parse_llm_output(text: str, label_inventory: Sequence[str]) -> str:
    """Map raw model output onto an inventory label.

    Case-insensitive scan for the earliest label occurrence; on a shared
    start position the longer label wins so that "elab" cannot shadow
    "elab-addition".  Returns UNPARSED when no label occurs at all.
    """
    haystack = text.lower()
    best: tuple[int, int, str] | None = None
    for label in label_inventory:
        pos = haystack.find(label.lower())
        if pos < 0:
            continue
        key = (pos, -len(label))
        if best is None or key < best[:2]:
            best = (pos, -len(label), label)
    return best[2] if best else UNPARSED


@dataclass(frozen=True)
class BaselineModel:
    """A trained desk-scale classifier (majority or lexical cue)."""

    kind: str
    majority_label: str
    cue_table: Mapping[tuple[str, ...], str] = field(default_factory=dict)


def _first_token(text: str) -> str:
    parts = text.lower().split()
    return parts[0] if parts else ""


def _cue_key(inst: RenderedInstance) -> tuple[str, ...]:
    # The cue is the first token of arg2, joined by the first context token
    # when the instance carries context.
    if inst.context_text:
        return (_first_token(inst.arg2_text), _first_token(inst.context_text))
    return (_first_token(inst.arg2_text),)


def _most_frequent(counter: Counter) -> str:
    # Ties break lexicographically.
    return sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]


def train_baseline(train_dataset: VariantDataset, kind: str) -> BaselineModel:
    """Fit a deterministic baseline on a rendered training split."""
    if kind not in BASELINE_KINDS:
        raise ValueError(f"unknown baseline kind {kind!r}; known: {BASELINE_KINDS}")
    if not train_dataset.instances:
        raise ValueError("empty training data")
    label_counts = Counter(i.gold_label for i in train_dataset.instances)
    majority = _most_frequent(label_counts)
    if kind == "majority":
        return BaselineModel(kind="majority", majority_label=majority)
    cue_counts: dict[tuple[str, ...], Counter] = {}
    for inst in train_dataset.instances:
        cue_counts.setdefault(_cue_key(inst), Counter())[inst.gold_label] += 1
    cue_table = {key: _most_frequent(c) for key, c in cue_counts.items()}
    return BaselineModel(kind="cue", majority_label=majority, cue_table=cue_table)


def predict_baseline(model: BaselineModel, dataset: VariantDataset,
                     condition: str, run_id: int = 0) -> PredictionSet:
    records = {}
    for inst in dataset.instances:
        if model.kind == "majority":
            records[inst.instance_id] = model.majority_label
        else:
            records[inst.instance_id] = model.cue_table.get(
                _cue_key(inst), model.majority_label)
    return PredictionSet(condition=condition, run_id=run_id, records=records)


def write_predictions(predictions: PredictionSet, path: Path | str) -> None:
    """Write the line-delimited prediction file format."""
    lines = []
    for instance_id in sorted(predictions.records):
        lines.append(json.dumps({
            "instance_id": instance_id,
            "predicted_label": predictions.records[instance_id],
            "condition": predictions.condition,
            "run_id": predictions.run_id,
        }, ensure_ascii=False))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def import_predictions(path: Path | str, dataset: VariantDataset,
                       condition: str | None = None,
                       run_id: int | None = None) -> PredictionSet:
    """Load an external prediction file against a dataset.

    The file must cover the dataset exactly: unknown or missing instance
    ids are errors.  Labels outside the inventory are kept (they will score
    as wrong) but logged as a warning.
    """
    path = Path(path)
    dataset_ids = set(dataset.instance_ids())
    records: dict[str, str] = {}
    file_condition: str | None = None
    file_run: int | None = None
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        rec = json.loads(line)
        instance_id = rec["instance_id"]
        if instance_id not in dataset_ids:
            raise ValueError(f"{path}:{lineno}: unknown instance_id {instance_id!r}")
        if instance_id in records:
            raise ValueError(f"{path}:{lineno}: duplicate instance_id {instance_id!r}")
        records[instance_id] = rec["predicted_label"]
        if "condition" in rec:
            if file_condition is not None and rec["condition"] != file_condition:
                raise ValueError(f"{path}:{lineno}: mixed conditions in file")
            file_condition = rec["condition"]
        if "run_id" in rec:
            if file_run is not None and rec["run_id"] != file_run:
                raise ValueError(f"{path}:{lineno}: mixed run_ids in file")
            file_run = int(rec["run_id"])
    missing = sorted(dataset_ids - set(records))
    if missing:
        shown = ", ".join(missing[:5])
        raise ValueError(f"{path}: missing prediction(s) for {len(missing)} "
                         f"instance(s): {shown}")
    known = set(dataset.label_inventory) | {UNPARSED}
    strange = sorted({lbl for lbl in records.values() if lbl not in known})
    if strange:
        log.warning("%s: %d label(s) outside the inventory "
                    "(kept, will score as wrong): %s",
                    path, len(strange), ", ".join(strange[:5]))
    final_condition = condition if condition is not None else (file_condition or "")
    final_run = run_id if run_id is not None else (file_run or 0)
    return PredictionSet(condition=final_condition, run_id=final_run,
                         records=records)
