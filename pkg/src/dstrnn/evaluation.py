"""Schedule-2 joint goal accuracy and per-slot accuracy."""
from __future__ import annotations

import json
from dataclasses import dataclass, asdict, field
from typing import Sequence

from .data import SLOTS, Dialogue, GoalState, dialogue_arrays, normalize_label

ONSETS = ("joint", "per_slot")


@dataclass
class EvaluationReport:
    joint_goal_accuracy: float
    per_slot_accuracy: dict
    n_scored_turns: int
    n_skipped_turns: int
    dataset: str = ""
    model: str = ""
    onset: str = "joint"
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        head = f"{'Model':<12}{'Dataset':<14}{'Joint':>8}" + "".join(f"{s:>12}" for s in SLOTS) + f"{'Scored':>9}"
        row = (f"{self.model:<12}{self.dataset:<14}{self.joint_goal_accuracy:>8.3f}"
               + "".join(f"{self.per_slot_accuracy[s]:>12.3f}" for s in SLOTS)
               + f"{self.n_scored_turns:>9d}")
        return f"{head}\n{'-' * len(head)}\n{row}"


def schedule2_scored_turns(golds: Sequence[GoalState]) -> set:
    """Turns from the first one whose gold goal has any non-None slot onwards."""
    for i, g in enumerate(golds):
        if any(v is not None for v in g):
            return set(range(i, len(golds)))
    return set()


def slot_scored_turns(golds: Sequence[GoalState], slot: str) -> set:
    j = SLOTS.index(slot)
    for i, g in enumerate(golds):
        if g[j] is not None:
            return set(range(i, len(golds)))
    return set()


def _same(a, b) -> bool:
    return normalize_label(a) == normalize_label(b)


def joint_accuracy(predictions: Sequence[GoalState], golds: Sequence[GoalState], scored) -> float:
    if len(predictions) != len(golds):
        raise ValueError(f"{len(predictions)} predictions for {len(golds)} gold turns")
    scored = sorted(scored)
    if not scored:
        return float("nan")
    hits = sum(all(_same(p, g) for p, g in zip(predictions[i], golds[i])) for i in scored)
    return hits / len(scored)


def score_dialogues(predictions: Sequence[Sequence[GoalState]], golds: Sequence[Sequence[GoalState]],
                    onset: str = "joint") -> EvaluationReport:
    """Aggregate over dialogues; ``predictions[d][t]`` aligns with ``golds[d][t]``.

    With ``onset="per_slot"`` each slot is scored from its own first non-None
    gold turn; the joint figure always uses the joint onset.
    """
    if onset not in ONSETS:
        raise ValueError(f"onset must be one of {ONSETS}")
    if len(predictions) != len(golds):
        raise ValueError(f"{len(predictions)} predicted dialogues for {len(golds)} gold dialogues")
    joint_hits = scored = total = 0
    slot_hits = dict.fromkeys(SLOTS, 0)
    slot_n = dict.fromkeys(SLOTS, 0)
    for pred, gold in zip(predictions, golds):
        if len(pred) != len(gold):
            raise ValueError(f"dialogue has {len(pred)} predictions for {len(gold)} turns")
        total += len(gold)
        turns = schedule2_scored_turns(gold)
        scored += len(turns)
        for i in turns:
            joint_hits += all(_same(p, g) for p, g in zip(pred[i], gold[i]))
        for j, s in enumerate(SLOTS):
            slot_turns = turns if onset == "joint" else slot_scored_turns(gold, s)
            slot_n[s] += len(slot_turns)
            slot_hits[s] += sum(_same(pred[i][j], gold[i][j]) for i in slot_turns)
    nan = float("nan")
    return EvaluationReport(
        joint_goal_accuracy=joint_hits / scored if scored else nan,
        per_slot_accuracy={s: slot_hits[s] / slot_n[s] if slot_n[s] else nan for s in SLOTS},
        n_scored_turns=scored,
        n_skipped_turns=total - scored,
        onset=onset,
    )


class VocabularyMismatch(ValueError):
    pass


def predict_dialogues(model, dialogues: Sequence[Dialogue]) -> list[list[GoalState]]:
    """Per-turn goal predictions with the full history, one incremental pass per dialogue."""
    out = []
    for d in dialogues:
        ids, feats, ends = dialogue_arrays(d, model.featurizer)
        out.append(model.track_dialogue(ids, feats.astype(model.dtype, copy=False), ends))
    return out


def check_vocabulary(model, dialogues: Sequence[Dialogue]) -> None:
    """Gold values must be representable by the model's slot vocabularies."""
    for d in dialogues:
        for t in d.turns:
            for s, v in zip(SLOTS, t.gold):
                if v is not None and v not in model.slot_vocabs[s]:
                    raise VocabularyMismatch(
                        f"dialogue {d.id} turn {t.turn_index}: {s}={v!r} unknown to the checkpoint")


def evaluate(model, dialogues: Sequence[Dialogue], dataset: str = "", onset: str = "joint",
             strict_vocab: bool = False) -> EvaluationReport:
    if strict_vocab:
        check_vocabulary(model, dialogues)
    preds = predict_dialogues(model, dialogues)
    report = score_dialogues(preds, [d.golds for d in dialogues], onset)
    report.dataset = dataset
    report.model = model.kind
    return report
