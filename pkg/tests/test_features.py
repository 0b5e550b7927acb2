import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dstrnn import synthetic
from dstrnn.data import Vocabulary
from dstrnn.features import (DB_COLUMNS, DatabaseError, DatabaseTable, Featurizer, N_FEATURES,
                             ROLE_SYSTEM, ROLE_USER, extract_db_bits, featurize_turn, tokenize,
                             tokens_to_arrays)

import oracles

DB = DatabaseTable(synthetic.DATABASE)


@pytest.mark.parametrize("text, words", [
    ("West part of town.", ["west", "part", "of", "town"]),
    ("", []),
    ("India House is a nice place", ["india", "house", "is", "a", "nice", "place"]),
    ("I'm looking for... 'cheap' food!", ["i'm", "looking", "for", "'cheap'", "food"]),
    ("  ,  ; ", []),
])
def test_tokenize(text, words):
    assert tokenize(text) == words


def test_database_normalises_and_renames_columns():
    assert DB.rows[0]["price_range"] == "cheap"
    assert DB.rows[0]["telephone"] == "01223 000001"
    assert set(DB.rows[0]) == set(DB_COLUMNS)
    row = DatabaseTable([{"name": "Pizza Hut, Fen Ditton", "food": "Italian", "price_range": "x",
                          "area": "East", "telephone": "1", "address": "a", "postcode": "cb1"}]).rows[0]
    assert row["name"] == "pizza hut fen ditton" and row["area"] == "east"


@pytest.mark.parametrize("row", [
    {"name": "a", "food": "b", "price_range": "c", "area": "d", "telephone": "e"},
    {"name": "a", "food": "b", "price_range": "c", "area": "d", "telephone": "e", "address": "f", "stars": "5"},
])
def test_database_rejects_wrong_columns(row):
    with pytest.raises(DatabaseError):
        DatabaseTable([row])


def test_database_load(tmp_path):
    p = tmp_path / "db.json"
    p.write_text(json.dumps(synthetic.DATABASE))
    assert DatabaseTable.load(p).rows == DB.rows
    p.write_text("{}")
    with pytest.raises(DatabaseError):
        DatabaseTable.load(p)


def test_indian_fires_food_and_name():
    assert extract_db_bits("indian", DB) == (1, 1, 0, 0, 0, 0)


def test_absent_word_has_no_bits():
    assert extract_db_bits("xqzw", DB) == (0,) * 6
    assert extract_db_bits("", DB) == (0,) * 6


def test_west_matches_brute_force_scan():
    bits = extract_db_bits("west", DB)
    assert bits[DB_COLUMNS.index("area")] == 1
    assert bits == oracles.db_bits("west", DB.rows, DB_COLUMNS)


def test_substring_index_agrees_with_scan_over_many_words():
    rng = np.random.default_rng(0)
    words = {w for d in synthetic.micro_corpus(50) for t in d.turns for w in t.system_words + t.user_words}
    alphabet = list("abcdefghilmnorstuw0123 ")
    cells = [r[c] for r in DB.rows for c in DB_COLUMNS]
    while len(words) < 1000:
        if rng.random() < 0.5:
            cell = cells[rng.integers(len(cells))]
            i = rng.integers(len(cell))
            words.add(cell[i:i + rng.integers(1, 6)])
        else:
            words.add("".join(rng.choice(alphabet, size=rng.integers(1, 5))))
    for w in words:
        assert extract_db_bits(w, DB) == oracles.db_bits(w, DB.rows, DB_COLUMNS), w


@settings(max_examples=200, deadline=None)
@given(st.text(alphabet="abcdehilnorstw 0123", min_size=1, max_size=6))
def test_substring_property(word):
    assert extract_db_bits(word, DB) == oracles.db_bits(word, DB.rows, DB_COLUMNS)


def test_featurize_turn_roles_and_unknown_words():
    vocab = Vocabulary(["indian", "food"])
    sys_tokens = featurize_turn(["what", "food"], "system", DB, vocab)
    assert [t.role_bit for t in sys_tokens] == [ROLE_SYSTEM] * 2
    user = featurize_turn(["indian", "heaven"], "user", DB, vocab)
    assert user[0].role_bit == ROLE_USER and user[0].db_bits[DB_COLUMNS.index("food")] == 1
    assert user[0].word_id == vocab.lookup("indian")
    # out of vocabulary yet its bits still come from the surface form
    assert user[1].word_id == Vocabulary.UNK_ID
    assert user[1].db_bits == (1, 0, 0, 0, 0, 0)


def test_featurization_is_position_independent():
    vocab = Vocabulary(["indian", "west"])
    f = Featurizer(DB, vocab)
    a = f.turn(["west", "indian", "west"], "user")
    assert a[0] == a[2]
    b = Featurizer(DB, Vocabulary([])).token("indian", "user")
    assert b.db_bits == a[1].db_bits


def test_arrays_layout_matches_tokens():
    vocab = Vocabulary(["indian", "west"])
    f = Featurizer(DB, vocab)
    words = ["indian", "food", "west"]
    ids, feats = f.arrays(words, "system")
    assert feats.shape == (3, N_FEATURES) and feats.dtype == np.float32
    ids2, feats2 = tokens_to_arrays(f.turn(words, "system"))
    assert np.array_equal(ids, ids2) and np.array_equal(feats, feats2)
    assert np.all(feats[:, 0] == 1)
