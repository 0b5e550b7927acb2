from contextlib import contextmanager

import numpy as np
import pytest

from dstrnn import data as D
from dstrnn import synthetic
from dstrnn.features import DatabaseTable, Featurizer
from dstrnn.models import ModelConfig, TrackerModel, build_triples

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@contextmanager
def criterion(number, text):
    """Record one acceptance line for the block's outcome."""
    def add(status):
        ACCEPTANCE_LINES.append(f"criterion {number:>2}: {status:<4}  {text}")
    try:
        yield
    except pytest.skip.Exception:
        add("SKIP")
        raise
    except BaseException:
        add("FAIL")
        raise
    add("PASS")


@pytest.fixture(scope="session")
def micro():
    dialogues = synthetic.micro_corpus()
    onto = synthetic.ontology()
    db = DatabaseTable(synthetic.DATABASE)
    vocab, slot_vocabs = D.build_vocabularies(dialogues, onto)
    featurizer = Featurizer(db, vocab)
    examples = D.build_all_examples(dialogues, featurizer)
    return dict(dialogues=dialogues, ontology=onto, db=db, vocab=vocab,
                slot_vocabs=slot_vocabs, featurizer=featurizer, examples=examples)


TINY_WORDS = [f"w{i}" for i in range(9)]
TINY_SLOTS = {"food": ["a", "b"], "area": ["c"], "pricerange": ["d"]}


def tiny_dialogue(rng, name="t", n_turns=2):
    """History length at most 6 tokens."""
    turns = []
    for t in range(n_turns):
        sys_words = [TINY_WORDS[i] for i in rng.integers(0, 9, size=rng.integers(1, 3))]
        usr_words = [TINY_WORDS[i] for i in rng.integers(0, 9, size=1)]
        gold = D.GoalState(*(rng.choice([None, D.DONTCARE] + TINY_SLOTS[s]) for s in D.SLOTS))
        turns.append(D.Turn(t, sys_words, usr_words, gold))
    return D.Dialogue(name, turns)


def tiny_model(kind, seed=0, hidden=4, embed=3, dtype="float64", dropout_keep=1.0, dialogues=None):
    rng = np.random.default_rng(seed)
    if dialogues is None:
        dialogues = [tiny_dialogue(rng, f"d{i}") for i in range(3)]
    vocab = D.Vocabulary(TINY_WORDS)
    slot_vocabs = {s: D.SlotVocab(s, TINY_SLOTS[s]) for s in D.SLOTS}
    db = DatabaseTable([{"name": "w1 w2", "food": "a", "price_range": "d", "area": "c",
                         "telephone": "w3", "address": "w4 w5"}])
    featurizer = Featurizer(db, vocab)
    examples = D.build_all_examples(dialogues, featurizer)
    triples = build_triples(examples) if kind == "joint" else None
    model = TrackerModel(ModelConfig(kind, embed, hidden, dropout_keep, seed, dtype),
                         vocab, slot_vocabs, db, triples)
    # break the symmetry of zero-initialised biases
    for name, p in model.params.items():
        if name.endswith((".b", ".b_z", ".b_r", ".b_h")):
            p.data[...] = rng.uniform(-0.1, 0.1, size=p.shape)
    return model, examples, dialogues
