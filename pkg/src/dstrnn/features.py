"""Tokenisation and per-word input features (speaker role + database columns)."""
from __future__ import annotations

import json
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

DB_COLUMNS = ("name", "food", "price_range", "area", "telephone", "address")

# Keys used by the distributed restaurant database that map onto our columns.
COLUMN_ALIASES = {"pricerange": "price_range", "phone": "telephone", "addr": "address"}
IGNORED_COLUMNS = frozenset({"postcode", "signature", "id", "type", "location"})

ROLE_USER = 0
ROLE_SYSTEM = 1
ROLES = {"user": ROLE_USER, "system": ROLE_SYSTEM}

N_FEATURES = 1 + len(DB_COLUMNS)

_STRIP = "".join(c for c in string.punctuation if c != "'")


class DatabaseError(ValueError):
    pass


def tokenize(utterance: str) -> list[str]:
    """Lowercase, split on whitespace, strip edge punctuation (apostrophes kept)."""
    words = []
    for raw in (utterance or "").lower().split():
        w = raw.strip(_STRIP)
        if w:
            words.append(w)
    return words


def normalize_value(value) -> str:
    return " ".join(tokenize(str(value)))


class TokenInput(NamedTuple):
    word_id: int
    role_bit: int
    db_bits: tuple  # (name, food, price_range, area, telephone, address)


@dataclass
class DatabaseTable:
    rows: list[dict]
    substring_index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.rows = [self._validate(i, r) for i, r in enumerate(self.rows)]
        index = {}
        for col in DB_COLUMNS:
            subs: set[str] = set()
            for row in self.rows:
                v = row[col]
                n = len(v)
                for i in range(n):
                    for j in range(i + 1, n + 1):
                        subs.add(v[i:j])
            index[col] = frozenset(subs)
        self.substring_index = index

    @staticmethod
    def _validate(i, row) -> dict:
        if not isinstance(row, dict):
            raise DatabaseError(f"record {i} is not an object")
        out = {}
        for key, value in row.items():
            key = COLUMN_ALIASES.get(key, key)
            if key in IGNORED_COLUMNS:
                continue
            out[key] = normalize_value(value if value is not None else "")
        if set(out) != set(DB_COLUMNS):
            missing = sorted(set(DB_COLUMNS) - set(out))
            extra = sorted(set(out) - set(DB_COLUMNS))
            raise DatabaseError(f"record {i}: columns must be exactly {list(DB_COLUMNS)}"
                                f" (missing {missing}, unexpected {extra})")
        return out

    @classmethod
    def load(cls, path) -> "DatabaseTable":
        with open(path, encoding="utf-8") as f:
            records = json.load(f)
        if not isinstance(records, list):
            raise DatabaseError(f"{path}: expected a JSON array of records")
        return cls(records)

    @classmethod
    def empty(cls) -> "DatabaseTable":
        return cls([])

    def to_records(self) -> list[dict]:
        return [dict(r) for r in self.rows]


def extract_db_bits(word: str, db: DatabaseTable) -> tuple:
    """One bit per column: does ``word`` occur as a substring of any value there."""
    if not word:
        return (0,) * len(DB_COLUMNS)
    return tuple(int(word in db.substring_index[c]) for c in DB_COLUMNS)


class Featurizer:
    """Caches database bits per surface form; the database is immutable."""

    def __init__(self, db: DatabaseTable, vocab):
        self.db = db
        self.vocab = vocab
        self._bits: dict[str, tuple] = {}

    def bits(self, word: str) -> tuple:
        b = self._bits.get(word)
        if b is None:
            b = self._bits[word] = extract_db_bits(word, self.db)
        return b

    def token(self, word: str, role: str) -> TokenInput:
        return TokenInput(self.vocab.lookup(word), ROLES[role], self.bits(word))

    def turn(self, words: Sequence[str], role: str) -> list[TokenInput]:
        return [self.token(w, role) for w in words]

    def arrays(self, words: Sequence[str], role: str, dtype=np.float32):
        """``(ids [n], feats [n, 7])`` with feats = role bit followed by db bits."""
        ids = np.fromiter((self.vocab.lookup(w) for w in words), dtype=np.int64, count=len(words))
        feats = np.zeros((len(words), N_FEATURES), dtype=dtype)
        feats[:, 0] = ROLES[role]
        for i, w in enumerate(words):
            feats[i, 1:] = self.bits(w)
        return ids, feats


def featurize_turn(words: Sequence[str], role: str, db: DatabaseTable, vocab) -> list[TokenInput]:
    return Featurizer(db, vocab).turn(words, role)


def tokens_to_arrays(tokens: Sequence[TokenInput], dtype=np.float32):
    ids = np.array([t.word_id for t in tokens], dtype=np.int64)
    feats = np.zeros((len(tokens), N_FEATURES), dtype=dtype)
    for i, t in enumerate(tokens):
        feats[i, 0] = t.role_bit
        feats[i, 1:] = t.db_bits
    return ids, feats


def load_database(path: str | Path) -> DatabaseTable:
    return DatabaseTable.load(path)
