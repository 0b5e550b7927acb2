"""Seeded synthetic restaurant dialogues in the DSTC2 file layout.

Three goal slots with three values each.  Used for overfitting checks and
as a self-contained demo corpus for the command line tools.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .data import Dialogue, SLOTS, parse_call

VALUES = {
    "food": ["indian", "chinese", "italian"],
    "area": ["north", "south", "west"],
    "pricerange": ["cheap", "moderate", "expensive"],
}

DATABASE = [
    {"name": "indian heaven", "food": "indian", "pricerange": "cheap", "area": "west",
     "phone": "01223 000001", "addr": "12 mill road"},
    {"name": "india house", "food": "indian", "pricerange": "expensive", "area": "west",
     "phone": "01223 000002", "addr": "31 newnham road"},
    {"name": "golden wok", "food": "chinese", "pricerange": "moderate", "area": "north",
     "phone": "01223 000003", "addr": "191 histon road"},
    {"name": "the lucky star", "food": "chinese", "pricerange": "cheap", "area": "south",
     "phone": "01223 000004", "addr": "cambridge leisure park"},
    {"name": "pizza express", "food": "italian", "pricerange": "moderate", "area": "north",
     "phone": "01223 000005", "addr": "7 jesus lane"},
    {"name": "frankie and bennys", "food": "italian", "pricerange": "expensive", "area": "south",
     "phone": "01223 000006", "addr": "clifton way"},
]

GREETING = "Hello, welcome to the restaurant system. You can ask by area, price range or food type. How may I help you?"
ASK = {
    "food": "What kind of food would you like?",
    "area": "What part of town do you have in mind?",
    "pricerange": "Would you like something in the cheap, moderate, or expensive price range?",
}
ANSWER = {
    "food": ["{v}", "{v} food", "i want {v} food", "serving {v} food"],
    "area": ["{v}", "{v} part of town", "the {v}", "in the {v} of town"],
    "pricerange": ["{v}", "{v} price range", "a {v} restaurant", "something {v}"],
}
OPENERS = ["i'm looking for a restaurant", "hello", "i need a place to eat"]


def _utterances(rng: np.random.Generator):
    goal = {s: VALUES[s][rng.integers(3)] for s in SLOTS}
    order = [str(s) for s in rng.permutation(SLOTS)]
    turns = []          # (system text, user text, goal-labels)
    current: dict = {}
    if rng.random() < 0.5:
        first = order.pop(0)
        current[first] = goal[first]
        user = ANSWER[first][rng.integers(4)].format(v=goal[first])
    else:
        user = OPENERS[rng.integers(len(OPENERS))]
    turns.append((GREETING, user, dict(current)))
    for s in order:
        current[s] = goal[s]
        turns.append((ASK[s], ANSWER[s][rng.integers(4)].format(v=goal[s]), dict(current)))
    turns.append(("Is there anything else I can help you with?", "thank you good bye", dict(current)))
    return turns


def _call_json(call_id: str, turns):
    log = {"session-id": call_id, "turns": []}
    label = {"session-id": call_id, "turns": []}
    for i, (sys_text, usr_text, goal) in enumerate(turns):
        log["turns"].append({
            "turn-index": i,
            "output": {"transcript": sys_text, "dialog-acts": []},
            "input": {"live": {"asr-hyps": [{"asr-hyp": usr_text, "score": 0.0}]}},
        })
        label["turns"].append({"turn-index": i, "goal-labels": goal, "transcription": usr_text})
    return log, label


def micro_corpus_calls(n_dialogues: int = 20, seed: int = 0):
    rng = np.random.default_rng(seed)
    calls = []
    for i in range(n_dialogues):
        call_id = f"synth/voip-{seed:02d}-{i:04d}"
        calls.append((call_id, *_call_json(call_id, _utterances(rng))))
    return calls


def micro_corpus(n_dialogues: int = 20, seed: int = 0) -> list[Dialogue]:
    return [parse_call(log, label, cid) for cid, log, label in micro_corpus_calls(n_dialogues, seed)]


def ontology() -> dict:
    return {"informable": {**{s: list(v) for s, v in VALUES.items()},
                           "name": [r["name"] for r in DATABASE]},
            "requestable": ["addr", "area", "food", "phone", "pricerange", "name"]}


def write_corpus(root, n_dialogues: int = 20, seed: int = 0, splits=None) -> dict:
    """Write calls, file lists, ontology and database under ``root``.

    ``splits`` maps a split name to a dialogue count; by default everything
    goes to ``train`` and the same calls are listed for ``dev`` and ``test``.
    """
    root = Path(root)
    calls = micro_corpus_calls(n_dialogues, seed)
    for cid, log, label in calls:
        d = root / "data" / cid
        d.mkdir(parents=True, exist_ok=True)
        (d / "log.json").write_text(json.dumps(log, indent=1), encoding="utf-8")
        (d / "label.json").write_text(json.dumps(label, indent=1), encoding="utf-8")
    ids = [c[0] for c in calls]
    if splits is None:
        lists = {"train": ids, "dev": ids, "test": ids}
    else:
        lists, pos = {}, 0
        for name, n in splits.items():
            lists[name] = ids[pos:pos + n]
            pos += n
    paths = {}
    for name, entries in lists.items():
        p = root / f"dstc2_{name}.flist"
        p.write_text("".join(f"{e}\n" for e in entries), encoding="utf-8")
        paths[name] = p
    (root / "ontology_dstc2.json").write_text(json.dumps(ontology(), indent=1), encoding="utf-8")
    (root / "db.json").write_text(json.dumps(DATABASE, indent=1), encoding="utf-8")
    return {"root": root, "flists": paths, "ontology": root / "ontology_dstc2.json",
            "database": root / "db.json"}

