"""Neural building blocks on top of :mod:`dstrnn.autodiff`.

All functions use the row-batch convention: an input with a leading batch
axis ``[B, n]`` is multiplied by the transpose of a ``[out, n]`` weight.
A 1-D input is treated as a single row and returned 1-D.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

INIT_SCALE = 0.1


def uniform_param(rng: np.random.Generator, shape, name: str, dtype=ad.DEFAULT_DTYPE,
                  scale: float = INIT_SCALE) -> Tensor:
    data = rng.uniform(-scale, scale, size=shape).astype(dtype)
    return Tensor(data, requires_grad=True, name=name)


def zeros_param(shape, name: str, dtype=ad.DEFAULT_DTYPE) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True, name=name)


def _as_rows(x: Tensor) -> tuple[Tensor, bool]:
    if x.data.ndim == 1:
        return ad.reshape(x, (1, x.shape[0])), True
    return x, False


def _unrows(x: Tensor, squeeze: bool) -> Tensor:
    return ad.reshape(x, (x.shape[1],)) if squeeze else x


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """``x`` [B, n] plus bias ``b`` [n] tiled over the batch."""
    if x.data.ndim == 1:
        return ad.add(x, b)
    return ad.add(x, ad.expand(b, x.shape[0]))


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    rows, squeeze = _as_rows(x)
    out = ad.matmul(rows, W, transpose_b=True)
    if b is not None:
        out = add_bias(out, b)
    return _unrows(out, squeeze)


# ----------------------------------------------------------------- embedding


@dataclass
class EmbeddingTable:
    weights: Tensor

    @classmethod
    def init(cls, rng, vocab_size: int, dim: int, name: str = "embedding", dtype=ad.DEFAULT_DTYPE):
        return cls(uniform_param(rng, (vocab_size, dim), name, dtype))

    @property
    def vocab_size(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]


def embed(word_id: int, table: EmbeddingTable) -> Tensor:
    """Row ``word_id`` of the table as a graph node of shape ``[dim]``."""
    if not 0 <= int(word_id) < table.vocab_size:
        raise IndexError(f"word id {word_id} out of range for vocabulary of {table.vocab_size}")
    return ad.reshape(ad.take_rows(table.weights, [int(word_id)]), (table.dim,))


def embed_batch(word_ids, table: EmbeddingTable) -> Tensor:
    return ad.take_rows(table.weights, word_ids)


# ----------------------------------------------------------------------- GRU


@dataclass
class GRUParams:
    """Gate weights; ``W_*`` are hidden x input, ``U_*`` hidden x hidden."""

    W_z: Tensor
    W_r: Tensor
    W_h: Tensor
    U_z: Tensor
    U_r: Tensor
    U_h: Tensor
    b_z: Tensor
    b_r: Tensor
    b_h: Tensor

    @classmethod
    def init(cls, rng, input_size: int, hidden_size: int, prefix: str = "gru",
             dtype=ad.DEFAULT_DTYPE):
        kw = {}
        for g in "zrh":
            kw[f"W_{g}"] = uniform_param(rng, (hidden_size, input_size), f"{prefix}.W_{g}", dtype)
        for g in "zrh":
            kw[f"U_{g}"] = uniform_param(rng, (hidden_size, hidden_size), f"{prefix}.U_{g}", dtype)
        for g in "zrh":
            kw[f"b_{g}"] = zeros_param((hidden_size,), f"{prefix}.b_{g}", dtype)
        return cls(**kw)

    @property
    def input_size(self) -> int:
        return self.W_z.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.W_z.shape[0]

    def named(self) -> dict[str, Tensor]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def gru_step(x: Tensor, h_prev: Tensor, p: GRUParams) -> Tensor:
    """One GRU update.

    z = sigmoid(W_z x + U_z h + b_z), r = sigmoid(W_r x + U_r h + b_r),
    h~ = tanh(W_h x + U_h (r * h) + b_h), h' = (1 - z) * h + z * h~.
    """
    if x.shape[-1] != p.input_size or h_prev.shape[-1] != p.hidden_size:
        raise ad.ShapeError(f"gru_step: input {x.shape} / state {h_prev.shape} do not fit "
                            f"GRU({p.input_size} -> {p.hidden_size})")
    z = ad.sigmoid(ad.add(linear(x, p.W_z, p.b_z), linear(h_prev, p.U_z)))
    r = ad.sigmoid(ad.add(linear(x, p.W_r, p.b_r), linear(h_prev, p.U_r)))
    cand = ad.tanh(ad.add(linear(x, p.W_h, p.b_h), linear(ad.mul(r, h_prev), p.U_h)))
    return ad.add(ad.mul(ad.one_minus(z), h_prev), ad.mul(z, cand))


class GRUSequence:
    """Batched GRU over padded sequences with the input projections hoisted.

    ``x_all`` is ``[T * B, input]`` in time-major order.  The input-to-hidden
    products for all steps are computed by one matmul; the recurrent part is
    stepped.  Same equations as :func:`gru_step`.
    """

    def __init__(self, p: GRUParams):
        self.p = p
        H = p.hidden_size
        self.H = H
        self.W_cat = ad.concat([p.W_z, p.W_r, p.W_h], axis=0)
        self.b_cat = ad.concat([p.b_z, p.b_r, p.b_h], axis=0)
        self.U_zr = ad.concat([p.U_z, p.U_r], axis=0)

    def project_inputs(self, x_all: Tensor) -> Tensor:
        return add_bias(ad.matmul(x_all, self.W_cat, transpose_b=True), self.b_cat)

    def step(self, xp: Tensor, h_prev: Tensor) -> Tensor:
        """``xp`` is this step's slice of the projected inputs, ``[B, 3H]``."""
        H = self.H
        uzr = ad.matmul(h_prev, self.U_zr, transpose_b=True)
        z = ad.sigmoid(ad.add(ad.slice_(xp, np.s_[:, :H]), ad.slice_(uzr, np.s_[:, :H])))
        r = ad.sigmoid(ad.add(ad.slice_(xp, np.s_[:, H:2 * H]), ad.slice_(uzr, np.s_[:, H:])))
        uh = ad.matmul(ad.mul(r, h_prev), self.p.U_h, transpose_b=True)
        cand = ad.tanh(ad.add(ad.slice_(xp, np.s_[:, 2 * H:]), uh))
        return ad.add(ad.mul(ad.one_minus(z), h_prev), ad.mul(z, cand))


# ----------------------------------------------------------------- attention


@dataclass
class AttentionParams:
    """Additive scoring ``v . tanh(W_enc h_t + W_dec s)``."""

    W_enc: Tensor
    W_dec: Tensor
    v: Tensor

    @classmethod
    def init(cls, rng, hidden_size: int, attn_size: int | None = None, prefix: str = "attn",
             dtype=ad.DEFAULT_DTYPE):
        a = attn_size or hidden_size
        return cls(uniform_param(rng, (a, hidden_size), f"{prefix}.W_enc", dtype),
                   uniform_param(rng, (a, hidden_size), f"{prefix}.W_dec", dtype),
                   uniform_param(rng, (a,), f"{prefix}.v", dtype))

    def named(self) -> dict[str, Tensor]:
        return {"W_enc": self.W_enc, "W_dec": self.W_dec, "v": self.v}


class AttentionMemory:
    """Encoder states stacked once so each decoder step costs one projection.

    ``states`` is ``[T, B, H]``; ``mask`` (optional, ``[B, T]`` of 0/1) marks
    real positions.  Padded positions receive zero weight.
    """

    def __init__(self, states: Tensor, p: AttentionParams, mask: np.ndarray | None = None):
        if states.data.ndim != 3 or states.shape[0] == 0:
            raise ValueError("attention needs at least one encoder state")
        self.p = p
        self.states = states
        T, B, H = states.shape
        self.T, self.B = T, B
        flat = ad.reshape(states, (T * B, H))
        self.keys = ad.matmul(flat, p.W_enc, transpose_b=True)   # [T*B, A]
        self.score_bias = None
        if mask is not None and not np.all(mask):
            big = np.where(mask > 0, 0.0, -1e9).astype(states.dtype)
            self.score_bias = Tensor(big)

    def __call__(self, dec_state: Tensor) -> tuple[Tensor, Tensor]:
        p = self.p
        q = ad.matmul(dec_state, p.W_dec, transpose_b=True)       # [B, A]
        q_all = ad.reshape(ad.expand(q, self.T), (self.T * self.B, q.shape[1]))
        hidden = ad.tanh(ad.add(self.keys, q_all))
        v_col = ad.reshape(p.v, (p.v.shape[0], 1))
        scores = ad.transpose(ad.reshape(ad.matmul(hidden, v_col), (self.T, self.B)))  # [B, T]
        if self.score_bias is not None:
            scores = ad.add(scores, self.score_bias)
        weights = ad.softmax(scores)
        return ad.attend(weights, self.states), weights


def attention(dec_state: Tensor, enc_states, p: AttentionParams) -> tuple[Tensor, Tensor]:
    """Context vector and weights for a decoder state over encoder states.

    ``enc_states`` is a sequence of ``[H]`` (or ``[B, H]``) tensors.  Returns
    ``(context, weights)`` shaped like ``dec_state`` and ``[T]`` (or ``[B, T]``).
    """
    enc_states = list(enc_states)
    if not enc_states:
        raise ValueError("attention needs at least one encoder state")
    dec_rows, squeeze = _as_rows(dec_state)
    rows = [ad.reshape(s, (1, s.shape[0])) if s.data.ndim == 1 else s for s in enc_states]
    memory = AttentionMemory(ad.stack(rows), p)
    context, weights = memory(dec_rows)
    if squeeze:
        return _unrows(context, True), _unrows(weights, True)
    return context, weights


# ---------------------------------------------------------------- classifier


def dense_softmax(h: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """``softmax(W h + b)`` over classes."""
    if h.shape[-1] != W.shape[1] or b.shape != (W.shape[0],):
        raise ad.ShapeError(f"dense_softmax: h {h.shape}, W {W.shape}, b {b.shape}")
    return ad.softmax(linear(h, W, b))


def cross_entropy(pred: Tensor, gold) -> Tensor:
    return ad.cross_entropy(pred, gold)


# ------------------------------------------------------------------- dropout


def dropout_mask(shape, keep_prob: float, rng: np.random.Generator, dtype=ad.DEFAULT_DTYPE) -> np.ndarray:
    return ((rng.random(shape) < keep_prob) / keep_prob).astype(dtype)


def dropout(t: Tensor, keep_prob: float, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1 / keep_prob`` in train mode."""
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"keep_prob must lie in (0, 1], got {keep_prob}")
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "eval" or keep_prob == 1.0:
        return t
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    return ad.mul(t, Tensor(dropout_mask(t.shape, keep_prob, rng, t.dtype)))
