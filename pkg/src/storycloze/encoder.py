"""Token embedding assembly and the shared bidirectional LSTM encoder.

Every sequence is embedded as concat(word, pos, ner, rel, tf, exact_match)
per token and run through one shared single-layer BiLSTM, giving each
sequence a (length x 2*hidden) contextual matrix. Inverted dropout applies
to the word-embedding slice only, and only in training mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import FeaturizedStory, SequenceFeatures

# Row counts for the tag embedding tables (row 0 = "none", zero and frozen).
N_POS_TAGS = 20
N_NER_TAGS = 20
N_REL_TYPES = 50


@dataclass
class EmbeddingParams:
    """Embedding tables; all are rows-by-width with a zero, frozen row 0."""

    word: Tensor
    pos: Tensor
    ner: Tensor
    rel: Tensor

    @property
    def d_in(self) -> int:
        return (self.word.shape[1] + self.pos.shape[1] + self.ner.shape[1]
                + self.rel.shape[1] + 2)


@dataclass
class LstmCellParams:
    """One direction of an LSTM: x @ w + h @ u + b, gates ordered i, f, o, g
    (the three sigmoids first, then the tanh candidate)."""

    w: Tensor  # d_in x 4h
    u: Tensor  # h x 4h
    b: Tensor  # 1 x 4h

    @property
    def hidden(self) -> int:
        return self.u.shape[0]


@dataclass
class BiLstmParams:
    forward: LstmCellParams
    backward: LstmCellParams

    @property
    def hidden(self) -> int:
        return self.forward.hidden


@dataclass
class EncodedStory:
    """Contextual matrices for the four sequences, each (length x 2h)."""

    exposition: Tensor
    climax: Tensor
    ending1: Tensor
    ending2: Tensor

    def ending(self, k: int) -> Tensor:
        return self.ending1 if k == 1 else self.ending2


def _validate_ids(ids, table: Tensor, what: str) -> None:
    n = table.shape[0]
    for i in ids:
        if not 0 <= i < n:
            raise IndexError(f"{what} id {i} out of range [0, {n})")


def embed(features: SequenceFeatures, params: EmbeddingParams,
          dropout_rate: float = 0.0, training: bool = False,
          rng: np.random.Generator | None = None) -> Tensor:
    """Per-token concat(word, pos, ner, rel, tf, em) -> (length x d_in)."""
    if len(features) == 0:
        raise ValueError("cannot embed an empty sequence")
    _validate_ids(features.pos_ids, params.pos, "POS")
    _validate_ids(features.ner_ids, params.ner, "NER")
    _validate_ids(features.rel_ids, params.rel, "relation")
    word = ad.gather_rows(params.word, features.token_ids)
    word = ad.dropout(word, dropout_rate, rng, training)
    parts = [
        word,
        ad.gather_rows(params.pos, features.pos_ids),
        ad.gather_rows(params.ner, features.ner_ids),
        ad.gather_rows(params.rel, features.rel_ids),
        Tensor(np.array(features.tf).reshape(-1, 1)),
        Tensor(np.array(features.exact_match, dtype=float).reshape(-1, 1)),
    ]
    return ad.concat_cols(parts)


def _run_direction(x: Tensor, cell: LstmCellParams, reverse: bool) -> list[Tensor]:
    """Run one LSTM direction; returns hidden states aligned to input rows."""
    h_size = cell.hidden
    steps = x.shape[0]
    xwb = ad.add(ad.matmul(x, cell.w), cell.b)  # hoisted projection + bias
    h = ad.zeros((1, h_size))
    c = ad.zeros((1, h_size))
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    out: list[Tensor | None] = [None] * steps
    for t in order:
        gates = ad.add(ad.row(xwb, t), ad.matmul(h, cell.u))
        ifo = ad.sigmoid(ad.cols(gates, 0, 3 * h_size))
        i = ad.cols(ifo, 0, h_size)
        f = ad.cols(ifo, h_size, 2 * h_size)
        o = ad.cols(ifo, 2 * h_size, 3 * h_size)
        g = ad.tanh(ad.cols(gates, 3 * h_size, 4 * h_size))
        c = ad.add(ad.mul(f, c), ad.mul(i, g))
        h = ad.mul(o, ad.tanh(c))
        out[t] = h
    return out  # type: ignore[return-value]


def bilstm_encode(x: Tensor, params: BiLstmParams) -> Tensor:
    """(length x d_in) -> (length x 2h); row t concatenates the forward state
    after step t with the backward state after consuming row t."""
    fw = _run_direction(x, params.forward, reverse=False)
    bw = _run_direction(x, params.backward, reverse=True)
    rows = [ad.concat_cols([f, b]) for f, b in zip(fw, bw)]
    return ad.concat_rows(rows)


def encode_story(fstory: FeaturizedStory, emb: EmbeddingParams, lstm: BiLstmParams,
                 dropout_rate: float = 0.0, training: bool = False,
                 rng: np.random.Generator | None = None) -> EncodedStory:
    """Encode all four sequences with the same parameters (weight sharing)."""

    def enc(features: SequenceFeatures) -> Tensor:
        return bilstm_encode(
            embed(features, emb, dropout_rate, training, rng), lstm)

    return EncodedStory(
        exposition=enc(fstory.exposition),
        climax=enc(fstory.climax),
        ending1=enc(fstory.ending1),
        ending2=enc(fstory.ending2),
    )
