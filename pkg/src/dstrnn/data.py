"""DSTC2 ingestion, vocabularies, per-turn examples, bucketing and re-splitting."""
from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .features import Featurizer, TokenInput, DatabaseTable, tokenize, normalize_value

log = logging.getLogger(__name__)

SLOTS = ("food", "area", "pricerange")
DONTCARE = "dontcare"

PAD = "<pad>"
UNK = "<unk>"


class DataError(Exception):
    """Base class for dataset problems."""


class LoadError(DataError):
    pass


class ParseError(DataError):
    pass


class ConfigError(DataError):
    pass


class GoalState(NamedTuple):
    food: str | None = None
    area: str | None = None
    pricerange: str | None = None

    def is_empty(self) -> bool:
        return all(v is None for v in self)


class DialogueActItem(NamedTuple):
    act_type: str
    slot_name: str
    slot_value: str | None


@dataclass
class Turn:
    turn_index: int
    system_words: list
    user_words: list
    gold: GoalState


@dataclass
class Dialogue:
    id: str
    turns: list

    def __post_init__(self):
        if not self.turns:
            raise DataError(f"dialogue {self.id} has no turns")
        for i, t in enumerate(self.turns):
            if t.turn_index != i:
                raise DataError(f"dialogue {self.id}: turn indices must run 0..n-1, got {t.turn_index} at {i}")

    @property
    def golds(self) -> list:
        return [t.gold for t in self.turns]


def normalize_label(value) -> str | None:
    if value is None:
        return None
    v = str(value).strip().lower()
    if v in ("", "none"):
        return None
    return v


def carry_forward(per_turn_labels: Iterable[dict]) -> list[GoalState]:
    """Goal per turn where a slot keeps its value until a label changes it."""
    current = dict.fromkeys(SLOTS)
    out = []
    for labels in per_turn_labels:
        for s in SLOTS:
            if s in labels:
                current[s] = normalize_label(labels[s])
        out.append(GoalState(**current))
    return out


# ----------------------------------------------------------------- loading


def read_file_list(path) -> list[str]:
    with open(path, encoding="utf-8") as f:
        return [ln.strip() for ln in f if ln.strip() and not ln.lstrip().startswith("#")]


def _call_dir(data_root: Path, entry: str) -> Path:
    for cand in (data_root / entry, data_root / "data" / entry):
        if cand.is_dir():
            return cand
    raise LoadError(f"call {entry}: directory not found under {data_root}")


def _read_json(path: Path, call: str):
    if not path.is_file():
        raise LoadError(f"call {call}: missing {path.name}")
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON ({e})") from e


def _asr_1best(turn: dict) -> str:
    inp = turn.get("input", {})
    for key in ("live", "batch"):
        hyps = inp.get(key, {}).get("asr-hyps")
        if hyps:
            return hyps[0].get("asr-hyp", "")
    return ""


def parse_call(log_json: dict, label_json: dict, call_id: str, source: str = "") -> Dialogue:
    log_turns = log_json.get("turns")
    label_turns = label_json.get("turns")
    if not isinstance(log_turns, list) or not isinstance(label_turns, list):
        raise ParseError(f"{source or call_id}: missing 'turns' list")
    if len(log_turns) != len(label_turns):
        raise ParseError(f"{source or call_id}: {len(log_turns)} log turns vs {len(label_turns)} label turns")
    raw_labels = []
    texts = []
    for i, (lt, bt) in enumerate(zip(log_turns, label_turns)):
        try:
            sys_text = lt["output"]["transcript"]
            usr_text = _asr_1best(lt)
            goal = bt.get("goal-labels", {})
            if not isinstance(goal, dict):
                raise TypeError("goal-labels is not an object")
        except (KeyError, TypeError, AttributeError) as e:
            raise ParseError(f"{source or call_id}: malformed record at turn {i} ({e})") from e
        raw_labels.append(goal)
        texts.append((sys_text, usr_text))
    golds = carry_forward(raw_labels)
    turns = [Turn(i, tokenize(s), tokenize(u), g) for i, ((s, u), g) in enumerate(zip(texts, golds))]
    sid = log_json.get("session-id") or call_id
    return Dialogue(str(sid), turns)


def load_dstc2(data_root, file_list) -> list[Dialogue]:
    """Load the calls named in ``file_list`` (paths relative to ``data_root``)."""
    root = Path(data_root)
    dialogues = []
    for entry in read_file_list(file_list):
        d = _call_dir(root, entry)
        log_json = _read_json(d / "log.json", entry)
        label_json = _read_json(d / "label.json", entry)
        dialogues.append(parse_call(log_json, label_json, entry, source=str(d)))
    log.info("loaded %d dialogues from %s", len(dialogues), file_list)
    return dialogues


def load_ontology(path) -> dict:
    with open(path, encoding="utf-8") as f:
        onto = json.load(f)
    informable = onto.get("informable")
    if not isinstance(informable, dict):
        raise ConfigError(f"{path}: ontology has no 'informable' section")
    return onto


# ------------------------------------------------------------ vocabularies


class Vocabulary:
    """Word ids; 0 is padding and 1 the unknown word."""

    PAD_ID = 0
    UNK_ID = 1

    def __init__(self, words: Sequence[str]):
        self.words = [PAD, UNK] + [w for w in words if w not in (PAD, UNK)]
        self.index = {w: i for i, w in enumerate(self.words)}

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word) -> bool:
        return word in self.index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.words == other.words

    def lookup(self, word: str) -> int:
        return self.index.get(word, self.UNK_ID)

    @classmethod
    def build(cls, dialogues: Iterable[Dialogue], min_count: int = 1) -> "Vocabulary":
        counts = Counter()
        for d in dialogues:
            for t in d.turns:
                counts.update(t.system_words)
                counts.update(t.user_words)
        kept = sorted((w for w, c in counts.items() if c >= min_count), key=lambda w: (-counts[w], w))
        return cls(kept)


class SlotVocab:
    """Values of one goal slot; index 0 is None and index 1 ``dontcare``."""

    def __init__(self, slot: str, values: Sequence):
        self.slot = slot
        rest = [v for v in dict.fromkeys(values) if v not in (None, DONTCARE)]
        self.values = [None, DONTCARE] + rest
        self.index = {v: i for i, v in enumerate(self.values)}

    def __len__(self) -> int:
        return len(self.values)

    def __contains__(self, value) -> bool:
        return value in self.index

    def __eq__(self, other) -> bool:
        return isinstance(other, SlotVocab) and (self.slot, self.values) == (other.slot, other.values)

    def encode(self, value) -> int:
        try:
            return self.index[value]
        except KeyError:
            raise KeyError(f"value {value!r} is not in the {self.slot} vocabulary") from None

    def decode(self, idx: int):
        return self.values[int(idx)]


def build_vocabularies(train: Sequence[Dialogue], ontology: dict | None = None,
                       min_count: int = 1) -> tuple[Vocabulary, dict]:
    """Word vocabulary from training dialogues plus one value vocabulary per goal slot.

    Without an ontology the slot values seen in the training labels are used.
    """
    words = Vocabulary.build(train, min_count)
    slot_vocabs = {}
    if ontology is not None:
        informable = ontology.get("informable", {})
        for s in SLOTS:
            if s not in informable:
                raise ConfigError(f"ontology lacks goal slot {s!r}")
            slot_vocabs[s] = SlotVocab(s, [normalize_label(v) for v in informable[s]])
    else:
        seen = {s: set() for s in SLOTS}
        for d in train:
            for t in d.turns:
                for s, v in zip(SLOTS, t.gold):
                    if v is not None:
                        seen[s].add(v)
        slot_vocabs = {s: SlotVocab(s, sorted(seen[s])) for s in SLOTS}
    return words, slot_vocabs


# ---------------------------------------------------------------- examples


@dataclass
class TrainingExample:
    """Full history up to one turn, stored as prefix views of the dialogue arrays."""

    dialogue_id: str
    turn_index: int
    ids: np.ndarray
    feats: np.ndarray
    target: GoalState
    turn_boundaries: tuple

    @property
    def length(self) -> int:
        return len(self.ids)

    @property
    def last_turn_start(self) -> int:
        return self.turn_boundaries[-2] if len(self.turn_boundaries) > 1 else 0

    @property
    def tokens(self) -> list[TokenInput]:
        return [TokenInput(int(i), int(f[0]), tuple(int(b) for b in f[1:]))
                for i, f in zip(self.ids, self.feats)]


def dialogue_arrays(d: Dialogue, featurizer: Featurizer):
    """Whole-dialogue ids/feats (system then user words per turn) and turn end offsets."""
    ids, feats, ends = [], [], []
    n = 0
    for t in d.turns:
        for words, role in ((t.system_words, "system"), (t.user_words, "user")):
            i, f = featurizer.arrays(words, role)
            ids.append(i)
            feats.append(f)
            n += len(words)
        ends.append(n)
    return np.concatenate(ids), np.concatenate(feats), ends


def build_examples(d: Dialogue, db: DatabaseTable | None = None, vocab: Vocabulary | None = None,
                   featurizer: Featurizer | None = None) -> list[TrainingExample]:
    """One example per turn, each conditioned on the full history so far."""
    if featurizer is None:
        featurizer = Featurizer(db if db is not None else DatabaseTable.empty(), vocab)
    ids, feats, ends = dialogue_arrays(d, featurizer)
    out = []
    for t, end in zip(d.turns, ends):
        bounds = tuple(ends[:t.turn_index + 1])
        out.append(TrainingExample(d.id, t.turn_index, ids[:end], feats[:end], t.gold, bounds))
    return out


def build_all_examples(dialogues: Sequence[Dialogue], featurizer: Featurizer) -> list[TrainingExample]:
    out = []
    for d in dialogues:
        out.extend(build_examples(d, featurizer=featurizer))
    return out


# --------------------------------------------------------------- bucketing


@dataclass
class Bucket:
    length_range: tuple  # (lo, hi]: lo exclusive
    examples: list = field(default_factory=list)


def bucket_edges(lengths: Sequence[int], n_buckets: int = 10) -> list[float]:
    """Upper edges at equal-frequency quantiles; duplicate edges are merged."""
    lengths = np.asarray(lengths)
    qs = np.quantile(lengths, np.arange(1, n_buckets + 1) / n_buckets)
    qs[-1] = lengths.max()
    edges = []
    for q in qs:
        q = float(q)
        if not edges or q > edges[-1]:
            edges.append(q)
    return edges


def bucket_examples(examples: Sequence[TrainingExample], n_buckets: int = 10) -> list[Bucket]:
    if not examples:
        raise ValueError("cannot bucket an empty example list")
    if n_buckets < 1:
        raise ValueError("n_buckets must be positive")
    lengths = [e.length for e in examples]
    edges = bucket_edges(lengths, n_buckets)
    lo = min(lengths) - 1
    buckets = []
    for hi in edges:
        buckets.append(Bucket((lo, hi)))
        lo = hi
    for e, n in zip(examples, lengths):
        buckets[int(np.searchsorted(edges, n, side="left"))].examples.append(e)
    return [b for b in buckets if b.examples]


def shuffle_within(buckets: Sequence[Bucket], rng: np.random.Generator) -> None:
    for b in buckets:
        order = rng.permutation(len(b.examples))
        b.examples[:] = [b.examples[i] for i in order]


# ---------------------------------------------------------------- resplit


def resplit(dialogues: Sequence, ratios=(0.8, 0.1, 0.1), seed: int = 0):
    """Seeded dialogue-level partition; dev/test get floor shares, train the rest."""
    if not dialogues:
        raise ValueError("nothing to split")
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    n = len(dialogues)
    n_dev = int(math.floor(n * ratios[1] + 1e-9))
    n_test = int(math.floor(n * ratios[2] + 1e-9))
    order = np.random.default_rng(seed).permutation(n)
    items = [dialogues[i] for i in order]
    dev = items[:n_dev]
    test = items[n_dev:n_dev + n_test]
    train = items[n_dev + n_test:]
    return train, dev, test


def write_resplit(out_dir, entries: Sequence[str], ratios=(0.8, 0.1, 0.1), seed: int = 0,
                  sources: Sequence[str] = ()) -> dict:
    """Re-split file-list entries and write ``{train,dev,test}.flist`` plus a manifest."""
    train, dev, test = resplit(list(entries), ratios, seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", train), ("dev", dev), ("test", test)):
        (out / f"dstc2_{name}.flist").write_text("".join(f"{e}\n" for e in part), encoding="utf-8")
    manifest = {
        "seed": seed,
        "ratios": list(ratios),
        "counts": {"train": len(train), "dev": len(dev), "test": len(test)},
        "sources": list(sources),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    return manifest


# -------------------------------------------------------------- statistics


@dataclass
class TripleHistogram:
    counts: list          # [(triple, count)] ascending by count
    unseen: dict          # split name -> {triple: count} for triples absent from the reference

    def as_dict(self) -> dict:
        return {
            "counts": [[list(t), c] for t, c in self.counts],
            "unseen": {k: [[list(t), c] for t, c in v.items()] for k, v in self.unseen.items()},
        }


def _targets(items) -> list[tuple]:
    out = []
    for x in items:
        if isinstance(x, TrainingExample):
            out.append(tuple(x.target))
        elif isinstance(x, Dialogue):
            out.extend(tuple(t.gold) for t in x.turns)
        else:
            out.append(tuple(x))
    return out


def triple_frequency(examples, others: dict | None = None) -> TripleHistogram:
    """Histogram of target triples, least frequent first.

    ``others`` maps a split name to examples (or dialogues); triples there
    which never occur in ``examples`` are reported under ``unseen``.
    """
    counts = Counter(_targets(examples))
    ordered = sorted(counts.items(), key=lambda kv: (kv[1], tuple("" if v is None else v for v in kv[0])))
    unseen = {}
    for name, items in (others or {}).items():
        oc = Counter(_targets(items))
        unseen[name] = {t: c for t, c in sorted(oc.items(), key=lambda kv: kv[1]) if t not in counts}
    return TripleHistogram(ordered, unseen)


def history_lengths(dialogues: Sequence[Dialogue]) -> np.ndarray:
    """Token count of the full history at every turn."""
    out = []
    for d in dialogues:
        n = 0
        for t in d.turns:
            n += len(t.system_words) + len(t.user_words)
            out.append(n)
    return np.asarray(out, dtype=np.int64)


def length_summary(dialogues: Sequence[Dialogue]) -> dict:
    lengths = history_lengths(dialogues)
    if lengths.size == 0:
        return {"n_turns": 0}
    return {
        "n_dialogues": len(dialogues),
        "n_turns": int(lengths.size),
        "max": int(lengths.max()),
        "p50": float(np.percentile(lengths, 50)),
        "p95": float(np.percentile(lengths, 95)),
        "mean": float(lengths.mean()),
    }


def goal_acts(gold: GoalState) -> list[DialogueActItem]:
    """The goal as ``inform`` act items (slots with a value only)."""
    return [DialogueActItem("inform", s, v) for s, v in zip(SLOTS, gold) if v is not None]


__all__ = [
    "SLOTS", "DONTCARE", "GoalState", "DialogueActItem", "Turn", "Dialogue", "TrainingExample",
    "Bucket", "Vocabulary", "SlotVocab", "load_dstc2", "load_ontology", "build_vocabularies",
    "build_examples", "bucket_examples", "shuffle_within", "resplit", "write_resplit",
    "triple_frequency", "history_lengths", "length_summary", "normalize_value",
]
