"""Full network: parameter registry, story forward pass, scoring head, loss.

The head scores one candidate ending from the pooled aggregation vector
(optionally concatenated with the exposition summary) through a two-layer
tanh network. Training minimizes the two-way softmax cross-entropy between
the candidate scores, written in its numerically stable softplus form, plus
an L2 penalty over trainable parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import AblationConfig, TrainConfig
from .data import FeaturizedStory, Vocab
from .distill import DistillTrace, deem_init, deeav_vector, distill_exposition
from .encoder import (
    N_NER_TAGS,
    N_POS_TAGS,
    N_REL_TYPES,
    BiLstmParams,
    EmbeddingParams,
    EncodedStory,
    LstmCellParams,
    encode_story,
)
from .matching import (
    MatchParams,
    MatchTrace,
    aggregate_multi_turn,
    match_features,
    option_aware_climax,
    pool_aggregate,
)


class WidthMismatchError(ValueError):
    pass


class ModelParams:
    """Ordered name -> Tensor registry for every learned matrix and bias."""

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray, trainable: bool = True,
            grad_mask: np.ndarray | None = None) -> Tensor:
        if name in self._tensors:
            raise ValueError(f"duplicate parameter {name!r}")
        t = Tensor(data, name=name, trainable=trainable, grad_mask=grad_mask)
        self._tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def items(self):
        return self._tensors.items()

    def names(self) -> list[str]:
        return list(self._tensors)

    def trainable_items(self):
        return [(n, t) for n, t in self._tensors.items() if t.trainable]

    def zero_grads(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def count(self) -> int:
        """Total allocated coordinates (the ablation bookkeeping number)."""
        return sum(t.data.size for t in self._tensors.values())

    def l2_penalty(self) -> Tensor:
        """Sum of squares over trainable coordinates (frozen rows excluded)."""
        total = None
        for _, t in self.trainable_items():
            v = t if t.grad_mask is None else ad.mul(t, Tensor(t.grad_mask))
            term = ad.sum_all(ad.mul(v, v))
            total = term if total is None else ad.add(total, term)
        if total is None:
            raise ValueError("no trainable parameters")
        return total

    def copy_values(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._tensors.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for n, arr in values.items():
            t = self._tensors[n]
            if t.data.shape != arr.shape:
                raise WidthMismatchError(
                    f"{n}: stored shape {arr.shape} != expected {t.data.shape}")
            t.data = arr.astype(np.float64).copy()


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _table(rng: np.random.Generator, rows: int, width: int) -> np.ndarray:
    t = rng.uniform(-0.05, 0.05, size=(rows, width))
    t[0] = 0.0
    return t


def _row0_mask(rows: int, width: int) -> np.ndarray:
    m = np.ones((rows, width))
    m[0] = 0.0
    return m


def _add_cell(params: ModelParams, rng, prefix: str, d_in: int, hidden: int) -> None:
    b = np.zeros((1, 4 * hidden))
    b[0, hidden:2 * hidden] = 1.0  # forget-gate bias
    params.add(f"{prefix}.w", _xavier(rng, d_in, 4 * hidden))
    params.add(f"{prefix}.u", _xavier(rng, hidden, 4 * hidden))
    params.add(f"{prefix}.b", b)


def init_model_params(vocab: Vocab, config: TrainConfig) -> ModelParams:
    """Allocate every tensor the configuration uses, in a fixed order.

    Weights are Xavier-uniform, biases zero except the LSTM forget gates
    (1.0); embedding tables are uniform(-0.05, 0.05) with a zero, frozen
    row 0, and pretrained word rows frozen via the vocabulary's mask.
    """
    rng = np.random.default_rng(config.seed)
    abl = config.ablation
    h = config.hidden
    width = 2 * h
    params = ModelParams()

    params.add("emb.word", vocab.embeddings.copy(), grad_mask=vocab.grad_mask())
    params.add("emb.pos", _table(rng, N_POS_TAGS, config.d_pos),
               grad_mask=_row0_mask(N_POS_TAGS, config.d_pos))
    params.add("emb.ner", _table(rng, N_NER_TAGS, config.d_ner),
               grad_mask=_row0_mask(N_NER_TAGS, config.d_ner))
    params.add("emb.rel", _table(rng, N_REL_TYPES, config.d_rel),
               grad_mask=_row0_mask(N_REL_TYPES, config.d_rel))

    d_in = vocab.d_word + config.d_pos + config.d_ner + config.d_rel + 2
    _add_cell(params, rng, "enc.fw", d_in, h)
    _add_cell(params, rng, "enc.bw", d_in, h)

    for f in abl.features:
        view_width = 2 * width if f == "c" else width
        params.add(f"match.w_{f}", _xavier(rng, view_width, width))
        params.add(f"match.b_{f}", np.zeros((1, width)))
    params.add("match.mem_in", _xavier(rng, 2 * width, width))
    _add_cell(params, rng, "agg.fw", width, h)
    _add_cell(params, rng, "agg.bw", width, h)
    params.add("match.gate_w", _xavier(rng, 2 * width, width))
    params.add("match.gate_b", np.zeros((1, width)))

    if abl.deeav:
        params.add("distill.w_self", _xavier(rng, width, 1))

    head_in = 3 * width if abl.deeav else 2 * width
    params.add("head.w1", _xavier(rng, head_in, config.mlp_width))
    params.add("head.b1", np.zeros((1, config.mlp_width)))
    params.add("head.w2", _xavier(rng, config.mlp_width, 1))
    params.add("head.b2", np.zeros((1, 1)))
    return params


def embedding_params(params: ModelParams) -> EmbeddingParams:
    return EmbeddingParams(word=params["emb.word"], pos=params["emb.pos"],
                           ner=params["emb.ner"], rel=params["emb.rel"])


def _cell(params: ModelParams, prefix: str) -> LstmCellParams:
    return LstmCellParams(w=params[f"{prefix}.w"], u=params[f"{prefix}.u"],
                          b=params[f"{prefix}.b"])


def encoder_params(params: ModelParams) -> BiLstmParams:
    return BiLstmParams(forward=_cell(params, "enc.fw"), backward=_cell(params, "enc.bw"))


def match_params(params: ModelParams, config: AblationConfig) -> MatchParams:
    return MatchParams(
        proj={f: (params[f"match.w_{f}"], params[f"match.b_{f}"])
              for f in config.features},
        mem_in=params["match.mem_in"],
        agg=BiLstmParams(forward=_cell(params, "agg.fw"),
                         backward=_cell(params, "agg.bw")),
        gate_w=params["match.gate_w"],
        gate_b=params["match.gate_b"],
    )


# ---------------------------------------------------------------------------
# head


def score_option(o_hat: Tensor, e_hat: Tensor | None, params: ModelParams) -> Tensor:
    """Two-layer tanh scorer -> 1 x 1."""
    v = o_hat if e_hat is None else ad.concat_cols([o_hat, e_hat])
    w1 = params["head.w1"]
    if v.shape[1] != w1.shape[0]:
        raise WidthMismatchError(
            f"head input width {v.shape[1]} != expected {w1.shape[0]}")
    hidden = ad.tanh(ad.add(ad.matmul(v, w1), params["head.b1"]))
    return ad.add(ad.matmul(hidden, params["head.w2"]), params["head.b2"])


@dataclass
class StoryScores:
    """Candidate scores as live tensors, with derived probabilities."""

    s1: Tensor
    s2: Tensor

    @property
    def score1(self) -> float:
        return self.s1.item()

    @property
    def score2(self) -> float:
        return self.s2.item()

    @property
    def probabilities(self) -> tuple[float, float]:
        p1 = float(ad._sigmoid(np.array([[self.score1 - self.score2]]))[0, 0])
        return p1, 1.0 - p1


@dataclass
class StoryTrace:
    """Per-ending intermediates from one forward pass."""

    encoded: EncodedStory
    match: dict[int, MatchTrace]
    distill: dict[int, DistillTrace]


def forward_story(fstory: FeaturizedStory, params: ModelParams, config: TrainConfig,
                  training: bool = False, rng: np.random.Generator | None = None,
                  want_trace: bool = False) -> tuple[StoryScores, StoryTrace | None]:
    """Encode once, then score each candidate ending independently with the
    same parameters. The ablation switches select which paths exist."""
    abl = config.ablation
    encoded = encode_story(fstory, embedding_params(params), encoder_params(params),
                           dropout_rate=config.dropout_word, training=training, rng=rng)
    mparams = match_params(params, abl)
    scores: dict[int, Tensor] = {}
    mtraces: dict[int, MatchTrace] = {}
    dtraces: dict[int, DistillTrace] = {}
    for k in (1, 2):
        o_bar = encoded.ending(k)
        o_c = option_aware_climax(o_bar, encoded.climax)
        us = match_features(o_bar, o_c, mparams, abl.features)

        dtrace = DistillTrace()
        e_hat = None
        if abl.uses_exposition:
            if abl.distill:
                e_source, dtrace = distill_exposition(
                    encoded.exposition, encoded.climax, o_bar, abl)
            else:
                e_source = encoded.exposition
            if abl.deeav:
                e_hat, alpha_self = deeav_vector(e_source, params["distill.w_self"])
                dtrace.summary, dtrace.alpha_self = e_hat, alpha_self
        if abl.deem:
            m0 = deem_init(o_bar, e_source)
            dtrace.memory_init = m0
        else:
            m0 = ad.zeros(o_bar.shape)
        if training:
            m0 = ad.dropout(m0, config.dropout_memory, rng, training)

        m_final, mtrace = aggregate_multi_turn(us, m0, mparams)
        mtrace.option_aware_climax = o_c
        o_hat = pool_aggregate(m_final)
        mtrace.pooled = o_hat
        scores[k] = score_option(o_hat, e_hat, params)
        mtraces[k] = mtrace
        dtraces[k] = dtrace

    result = StoryScores(s1=scores[1], s2=scores[2])
    trace = StoryTrace(encoded=encoded, match=mtraces, distill=dtraces) if want_trace else None
    return result, trace


def data_loss(scores: StoryScores, label: int) -> Tensor:
    """Two-way softmax cross-entropy: softplus(score_wrong - score_correct)."""
    if label not in (1, 2):
        raise ValueError(f"label must be 1 or 2, got {label}")
    correct = scores.s1 if label == 1 else scores.s2
    wrong = scores.s2 if label == 1 else scores.s1
    return ad.softplus(ad.sub(wrong, correct))


def loss(scores: StoryScores, label: int, params: ModelParams | None = None,
         l2: float = 3e-8) -> Tensor:
    """Story loss: cross-entropy plus the L2 penalty over trainable params."""
    out = data_loss(scores, label)
    if params is not None and l2 > 0:
        out = ad.add(out, ad.scale(params.l2_penalty(), l2))
    return out


def predict(scores: StoryScores) -> int:
    """Argmax of the two candidate scores; ties go to ending 1."""
    return 1 if scores.score1 >= scores.score2 else 2
