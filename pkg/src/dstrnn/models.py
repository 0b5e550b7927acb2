"""Tracker architectures sharing one GRU word encoder.

* ``independent`` - one softmax head per goal slot on the last encoder state.
* ``joint``       - a single softmax over (food, area, pricerange) triples seen in training.
* ``encdec``      - attention decoder emitting ``food area pricerange EOS``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import layers as L
from .autodiff import Tensor
from .data import SLOTS, GoalState, SlotVocab, TrainingExample, Vocabulary
from .features import N_FEATURES, DatabaseTable, Featurizer, TokenInput, tokens_to_arrays

KINDS = ("independent", "joint", "encdec")
KIND_ALIASES = {"indep": "independent", "independent": "independent", "joint": "joint",
                "encdec": "encdec"}

EOS = "<eos>"
GO = "<go>"
MAX_DECODE_STEPS = 4


def canonical_kind(kind: str) -> str:
    try:
        return KIND_ALIASES[kind]
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {sorted(KIND_ALIASES)}") from None


@dataclass
class ModelConfig:
    kind: str = "independent"
    embed_dim: int = 100
    hidden_dim: int = 100
    dropout_keep: float = 0.7
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        self.kind = canonical_kind(self.kind)
        if self.embed_dim <= 0 or self.hidden_dim <= 0:
            raise ValueError("embed_dim and hidden_dim must be positive")
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ValueError("dropout_keep must lie in (0, 1]")


@dataclass
class EncoderState:
    h: Tensor                       # [hidden]
    all_states: list = field(default_factory=list)


class KindError(ValueError):
    pass


def decoder_tokens(slot_vocabs: dict) -> list:
    """Shared output vocabulary: EOS followed by the union of all slot values."""
    out = [EOS]
    seen = {EOS}
    for s in SLOTS:
        for v in slot_vocabs[s].values:
            if v not in seen:
                seen.add(v)
                out.append(v)
    return out


def sequence_to_goalstate(tokens: Sequence, slot_vocabs: dict) -> GoalState:
    """Positional decoding: food, area, pricerange; invalid or missing positions give None."""
    values = []
    ended = False
    for pos, slot in enumerate(SLOTS):
        tok = tokens[pos] if pos < len(tokens) and not ended else EOS
        if tok == EOS:
            ended = True
            values.append(None)
        elif tok in slot_vocabs[slot]:
            values.append(tok)
        else:
            values.append(None)
    return GoalState(*values)


def goalstate_to_sequence(goal: GoalState) -> list:
    return [*goal, EOS]


class TrackerModel:
    """Parameters plus the forward passes of one tracker kind."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary, slot_vocabs: dict,
                 database: DatabaseTable | None = None, triples: Sequence | None = None):
        self.config = config
        self.kind = config.kind
        self.vocab = vocab
        self.slot_vocabs = slot_vocabs
        self.database = database if database is not None else DatabaseTable.empty()
        self.featurizer = Featurizer(self.database, vocab)
        self.dtype = np.dtype(config.dtype)
        self.triples = [GoalState(*t) for t in triples] if triples is not None else None
        if self.kind == "joint" and not self.triples:
            raise ValueError("the joint model needs a non-empty triple vocabulary")
        self.triple_index = {t: i for i, t in enumerate(self.triples or [])}
        self.out_tokens = decoder_tokens(slot_vocabs) if self.kind == "encdec" else None
        self.out_index = {t: i for i, t in enumerate(self.out_tokens or [])}
        self.params: dict[str, Tensor] = {}
        self._build(np.random.default_rng(config.seed))

    # ------------------------------------------------------------- params

    def _build(self, rng):
        c, dt = self.config, self.dtype
        E, H = c.embed_dim, c.hidden_dim
        self.embedding = L.EmbeddingTable.init(rng, len(self.vocab), E, "embedding", dt)
        self.gru = L.GRUParams.init(rng, E + N_FEATURES, H, "encoder", dt)
        p = {"embedding": self.embedding.weights}
        p.update({f"encoder.{k}": v for k, v in self.gru.named().items()})
        if self.kind == "independent":
            self.heads = {}
            for s in SLOTS:
                W = L.uniform_param(rng, (len(self.slot_vocabs[s]), H), f"head.{s}.W", dt)
                b = L.zeros_param((len(self.slot_vocabs[s]),), f"head.{s}.b", dt)
                self.heads[s] = (W, b)
                p[f"head.{s}.W"], p[f"head.{s}.b"] = W, b
        elif self.kind == "joint":
            n = len(self.triples)
            self.joint_head = (L.uniform_param(rng, (n, H), "joint.W", dt),
                               L.zeros_param((n,), "joint.b", dt))
            p["joint.W"], p["joint.b"] = self.joint_head
        else:
            V = len(self.out_tokens)
            self.dec_embedding = L.EmbeddingTable.init(rng, V + 1, E, "decoder.embedding", dt)
            self.dec_gru = L.GRUParams.init(rng, E + H, H, "decoder", dt)
            self.attn = L.AttentionParams.init(rng, H, prefix="attn", dtype=dt)
            self.out_proj = (L.uniform_param(rng, (V, H), "out.W", dt), L.zeros_param((V,), "out.b", dt))
            p["decoder.embedding"] = self.dec_embedding.weights
            p.update({f"decoder.{k}": v for k, v in self.dec_gru.named().items()})
            p.update({f"attn.{k}": v for k, v in self.attn.named().items()})
            p["out.W"], p["out.b"] = self.out_proj
        self.params = p

    @property
    def go_id(self) -> int:
        return len(self.out_tokens)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise KeyError(f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, t in self.params.items():
            arr = np.asarray(state[k])
            if arr.shape != t.shape:
                raise ValueError(f"{k}: shape {arr.shape} does not match {t.shape}")
            t.data[...] = arr

    def _check_kind(self, kind: str) -> None:
        if self.kind != kind:
            raise KindError(f"operation needs a {kind} model, this one is {self.kind}")

    # ------------------------------------------------------------ encoder

    def zero_state(self) -> EncoderState:
        return EncoderState(Tensor(np.zeros(self.config.hidden_dim, dtype=self.dtype)), [])

    def advance(self, h: Tensor, word_id: int, feat_row) -> Tensor:
        """One eval-mode encoder step on a single token."""
        x = ad.concat([L.embed(word_id, self.embedding), Tensor(np.asarray(feat_row, dtype=self.dtype))])
        return L.gru_step(x, h, self.gru)

    def encode(self, tokens, mode: str = "eval", rng=None) -> EncoderState:
        """Run the encoder over ``tokens`` (TokenInputs or an ``(ids, feats)`` pair)."""
        ids, feats = self._as_arrays(tokens)
        if mode == "train":
            if len(ids) == 0:
                return self.zero_state()
            run = self._encode_batch([ids], [feats], mode, rng)
            states = [ad.reshape(ad.slice_(s, np.s_[0:1, :]), (self.config.hidden_dim,))
                      for s in run.states]
            return EncoderState(ad.reshape(run.h, (self.config.hidden_dim,)), states)
        state = self.zero_state()
        with ad.no_grad():
            for i in range(len(ids)):
                state.h = self.advance(state.h, int(ids[i]), feats[i])
                state.all_states.append(state.h)
        return state

    def _as_arrays(self, tokens):
        if isinstance(tokens, TrainingExample):
            return tokens.ids, tokens.feats.astype(self.dtype, copy=False)
        if isinstance(tokens, tuple) and len(tokens) == 2 and isinstance(tokens[0], np.ndarray):
            return tokens[0], np.asarray(tokens[1], dtype=self.dtype)
        return tokens_to_arrays(list(tokens), self.dtype)

    def _encode_batch(self, ids_list, feats_list, mode, rng, grad_from=None) -> "_BatchRun":
        """Padded, time-major batch encoding.

        ``grad_from[b]``: positions before it are computed but detached, so no
        gradient reaches earlier words (truncation for the last-turn ablation).
        """
        B = len(ids_list)
        lengths = np.array([len(i) for i in ids_list])
        T = int(lengths.max())
        H = self.config.hidden_dim
        ids = np.full((T, B), Vocabulary.PAD_ID, dtype=np.int64)
        feats = np.zeros((T, B, N_FEATURES), dtype=self.dtype)
        for b, (i, f) in enumerate(zip(ids_list, feats_list)):
            ids[:len(i), b] = i
            feats[:len(i), b] = f
        x = ad.concat([L.embed_batch(ids.reshape(-1), self.embedding),
                       Tensor(feats.reshape(T * B, N_FEATURES))], axis=1)
        x = L.dropout(x, self.config.dropout_keep, mode, rng)
        seq = L.GRUSequence(self.gru)
        proj = seq.project_inputs(x)
        h = Tensor(np.zeros((B, H), dtype=self.dtype))
        states = []
        for t in range(T):
            h_new = seq.step(ad.slice_(proj, np.s_[t * B:(t + 1) * B]), h)
            alive = lengths > t
            if not alive.all():
                m = np.repeat(alive[:, None].astype(self.dtype), H, axis=1)
                h_new = ad.add(ad.mul(h_new, Tensor(m)), ad.mul(h, Tensor(1 - m)))
            if grad_from is not None:
                frozen = np.asarray(grad_from) > t
                if frozen.any():
                    m = np.repeat(frozen[:, None].astype(self.dtype), H, axis=1)
                    h_new = ad.add(ad.mul(ad.detach(h_new), Tensor(m)), ad.mul(h_new, Tensor(1 - m)))
            h = h_new
            states.append(h)
        mask = (np.arange(T)[None, :] < lengths[:, None]).astype(self.dtype)
        return _BatchRun(h, states, mask)

    # -------------------------------------------------------------- heads

    def _head_input(self, h: Tensor, mode, rng) -> Tensor:
        return L.dropout(h, self.config.dropout_keep, mode, rng)

    def predict_independent(self, enc: EncoderState, mode: str = "eval", rng=None) -> dict:
        """Per-slot distributions ``{slot: Tensor[n_values]}``."""
        self._check_kind("independent")
        h = self._head_input(enc.h, mode, rng)
        return {s: L.dense_softmax(h, W, b) for s, (W, b) in self.heads.items()}

    def predict_joint(self, enc: EncoderState, mode: str = "eval", rng=None) -> Tensor:
        self._check_kind("joint")
        h = self._head_input(enc.h, mode, rng)
        return L.dense_softmax(h, *self.joint_head)

    def _decoder_step(self, prev_ids, s: Tensor, memory) -> tuple[Tensor, Tensor]:
        """Returns the new decoder state and the output distribution (row batch)."""
        if memory is None:
            ctx = Tensor(np.zeros(s.shape, dtype=self.dtype))
        else:
            ctx, _ = memory(s)
        inp = ad.concat([L.embed_batch(prev_ids, self.dec_embedding), ctx], axis=1)
        s = L.gru_step(inp, s, self.dec_gru)
        W, b = self.out_proj
        return s, L.dense_softmax(s, W, b)

    def decode_encdec(self, enc: EncoderState, mode: str = "eval", gold: GoalState | None = None,
                      rng=None) -> list:
        """Greedy decode (or teacher-forced when ``gold`` is given); at most four tokens."""
        self._check_kind("encdec")
        H = self.config.hidden_dim
        s = ad.reshape(self._head_input(enc.h, mode, rng), (1, H))
        memory = None
        if enc.all_states:
            rows = [ad.reshape(x, (1, H)) for x in enc.all_states]
            memory = L.AttentionMemory(ad.stack(rows), self.attn)
        forced = goalstate_to_sequence(gold) if gold is not None else None
        prev = self.go_id
        out = []
        for k in range(MAX_DECODE_STEPS):
            s, p = self._decoder_step([prev], s, memory)
            tok_id = int(np.argmax(p.data[0]))
            tok = self.out_tokens[tok_id]
            out.append(tok)
            if forced is not None:
                prev = self.out_index[forced[k]]
            else:
                if tok == EOS:
                    break
                prev = tok_id
        return out

    def predict_goal(self, enc: EncoderState) -> GoalState:
        """Eval-mode argmax goal for an encoder state."""
        with ad.no_grad():
            if self.kind == "independent":
                dists = self.predict_independent(enc)
                return GoalState(*(self.slot_vocabs[s].decode(np.argmax(dists[s].data)) for s in SLOTS))
            if self.kind == "joint":
                return self.triples[int(np.argmax(self.predict_joint(enc).data))]
            return sequence_to_goalstate(self.decode_encdec(enc), self.slot_vocabs)

    # --------------------------------------------------------------- loss

    def encode_targets(self, golds: Sequence[GoalState]) -> np.ndarray:
        """Integer targets: [B, 3] slot indices, [B] triple indices or [B, 4] decoder ids."""
        if self.kind == "independent":
            return np.array([[self.slot_vocabs[s].encode(v) for s, v in zip(SLOTS, g)] for g in golds],
                            dtype=np.int64)
        if self.kind == "joint":
            return np.array([self.triple_index.get(GoalState(*g), -1) for g in golds], dtype=np.int64)
        rows = []
        for g in golds:
            for s, v in zip(SLOTS, g):
                self.slot_vocabs[s].encode(v)
            rows.append([self.out_index[t] for t in goalstate_to_sequence(g)])
        return np.array(rows, dtype=np.int64)

    def batch_losses(self, examples: Sequence[TrainingExample], mode: str = "train", rng=None,
                     last_turn_only: bool = False) -> Tensor:
        """Per-example summed cross-entropy, shape ``[B]``."""
        ids = [e.ids for e in examples]
        feats = [e.feats.astype(self.dtype, copy=False) for e in examples]
        grad_from = [e.last_turn_start for e in examples] if last_turn_only else None
        run = self._encode_batch(ids, feats, mode, rng, grad_from)
        targets = self.encode_targets([e.target for e in examples])
        h = self._head_input(run.h, mode, rng)
        if self.kind == "independent":
            total = None
            for j, s in enumerate(SLOTS):
                loss = L.cross_entropy(L.dense_softmax(h, *self.heads[s]), targets[:, j])
                total = loss if total is None else ad.add(total, loss)
            return total
        if self.kind == "joint":
            if (targets < 0).any():
                raise ValueError("training target triple missing from the joint vocabulary")
            return L.cross_entropy(L.dense_softmax(h, *self.joint_head), targets)
        memory = L.AttentionMemory(ad.stack(run.states), self.attn, run.mask)
        s = h
        prev = np.full(len(examples), self.go_id, dtype=np.int64)
        total = None
        for k in range(MAX_DECODE_STEPS):
            s, p = self._decoder_step(prev, s, memory)
            loss = L.cross_entropy(p, targets[:, k])
            total = loss if total is None else ad.add(total, loss)
            prev = targets[:, k]
        return total

    def batch_loss(self, examples, mode: str = "train", rng=None, last_turn_only: bool = False) -> Tensor:
        """Mean over the batch of :meth:`batch_losses`."""
        per = self.batch_losses(examples, mode, rng, last_turn_only)
        return ad.mul(ad.sum_(per), 1.0 / len(examples))

    # ---------------------------------------------------------- inference

    def track_dialogue(self, ids: np.ndarray, feats: np.ndarray, turn_ends: Sequence[int]) -> list[GoalState]:
        """Goal after every turn end, from a single incremental pass."""
        state = self.zero_state()
        out = []
        ends = list(turn_ends)
        pos = 0
        with ad.no_grad():
            for end in ends:
                while pos < end:
                    state.h = self.advance(state.h, int(ids[pos]), feats[pos])
                    state.all_states.append(state.h)
                    pos += 1
                out.append(self.predict_goal(state))
        return out

    def session(self) -> "TrackerSession":
        return TrackerSession(self)

    def describe(self) -> dict:
        return asdict(self.config)


@dataclass
class _BatchRun:
    h: Tensor
    states: list
    mask: np.ndarray


class TrackerSession:
    """Word-by-word tracking over one dialogue (eval mode)."""

    def __init__(self, model: TrackerModel):
        self.model = model
        self.state = model.zero_state()
        self.words_consumed = 0
        self.role = "system"

    def reset(self) -> None:
        self.state = self.model.zero_state()
        self.words_consumed = 0
        self.role = "system"

    def feed(self, word: str, role: str) -> GoalState:
        tok = self.model.featurizer.token(word, role)
        return self.feed_token(tok)

    def feed_token(self, tok: TokenInput) -> GoalState:
        with ad.no_grad():
            self.state.h = self.model.advance(self.state.h, tok.word_id, (tok.role_bit, *tok.db_bits))
            self.state.all_states.append(self.state.h)
        self.words_consumed += 1
        self.role = "system" if tok.role_bit else "user"
        return self.current()

    def current(self) -> GoalState:
        return self.model.predict_goal(self.state)


def track_word(session: TrackerSession, word: str, role: str) -> tuple[TrackerSession, GoalState]:
    goal = session.feed(word, role)
    return session, goal


def build_triples(examples: Sequence) -> list[GoalState]:
    """Distinct training target triples in first-seen order."""
    seen = {}
    for e in examples:
        t = GoalState(*(e.target if isinstance(e, TrainingExample) else e))
        seen.setdefault(t, None)
    return list(seen)
