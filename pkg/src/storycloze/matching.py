"""Ending-climax matching: attention, comparison features, gated multi-turn
memory aggregation, and pooling.

Shapes follow the encoder: sequences are (length x 2h). The option-aware
climax re-expresses the climax per ending token; the three comparison views
(concat / subtract / multiply, each ReLU-projected back to 2h) are folded
into a memory matrix one turn at a time through a small BiLSTM and a
per-coordinate sigmoid gate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionMismatchError, Tensor
from .config import FEATURE_ORDER
from .encoder import BiLstmParams, bilstm_encode


class EmptyFeatureSetError(ValueError):
    pass


@dataclass
class MatchParams:
    """Learned pieces of the matching module.

    proj[f] holds the (weight, bias) pair for comparison feature f; only the
    features a configuration uses are allocated. mem_in maps the
    concat(feature, memory) width 4h down to the aggregation BiLSTM input
    (no bias). gate_w/gate_b produce the per-coordinate update gate.
    """

    proj: dict[str, tuple[Tensor, Tensor]]
    mem_in: Tensor           # 4h x 2h
    agg: BiLstmParams        # input 2h, hidden h per direction
    gate_w: Tensor           # 4h x 2h
    gate_b: Tensor           # 1 x 2h


@dataclass
class MatchTrace:
    """Intermediates of one ending's matching pass, for tests and heatmaps."""

    option_aware_climax: Tensor | None = None
    features: list[Tensor] = field(default_factory=list)
    hidden: list[Tensor] = field(default_factory=list)
    gates: list[Tensor] = field(default_factory=list)
    memories: list[Tensor] = field(default_factory=list)  # m0..mT
    pooled: Tensor | None = None


def _attention(x: Tensor, y: Tensor) -> tuple[Tensor, Tensor]:
    """Dot-product attention; returns (x-aware y, row-stochastic weights)."""
    if x.shape[1] != y.shape[1]:
        raise DimensionMismatchError(
            f"attention widths differ: {x.shape} vs {y.shape}")
    scores = ad.matmul(x, ad.transpose(y))
    beta = ad.softmax_rows(scores)
    return ad.matmul(beta, y), beta


def attend(x: Tensor, y: Tensor) -> Tensor:
    """x-aware y: softmax(x yT) y, one convex mix of y rows per x row."""
    out, _ = _attention(x, y)
    return out


def option_aware_climax(o_bar: Tensor, c_bar: Tensor) -> Tensor:
    return attend(o_bar, c_bar)


def match_features(o_bar: Tensor, o_c: Tensor, params: MatchParams,
                   feature_set: str = FEATURE_ORDER) -> list[Tensor]:
    """Comparison views of (ending, option-aware climax) in fixed c, s, m order."""
    if not feature_set:
        raise EmptyFeatureSetError("need at least one matching feature")
    views = {
        "c": lambda: ad.concat_cols([o_bar, o_c]),
        "s": lambda: ad.sub(o_bar, o_c),
        "m": lambda: ad.mul(o_bar, o_c),
    }
    out = []
    for f in FEATURE_ORDER:
        if f in feature_set:
            w, b = params.proj[f]
            out.append(ad.relu(ad.add(ad.matmul(views[f](), w), b)))
    return out


def aggregate_multi_turn(us: list[Tensor], m0: Tensor,
                         params: MatchParams) -> tuple[Tensor, MatchTrace]:
    """Fold the feature list into memory, one turn per feature.

    Each turn: h = BiLSTM(concat(u, m_prev) @ mem_in), gate = sigmoid of the
    projected concat(h, m_prev), and m = gate*h + (1-gate)*m_prev, a
    per-coordinate convex combination.
    """
    if not us:
        raise EmptyFeatureSetError("need at least one feature to aggregate")
    trace = MatchTrace(memories=[m0])
    ones = Tensor(np.ones(m0.shape))
    m = m0
    for u in us:
        h = bilstm_encode(ad.matmul(ad.concat_cols([u, m]), params.mem_in), params.agg)
        gate = ad.sigmoid(ad.add(ad.matmul(ad.concat_cols([h, m]), params.gate_w),
                                 params.gate_b))
        m = ad.add(ad.mul(gate, h), ad.mul(ad.sub(ones, gate), m))
        trace.features.append(u)
        trace.hidden.append(h)
        trace.gates.append(gate)
        trace.memories.append(m)
    return m, trace


def pool_aggregate(m_final: Tensor) -> Tensor:
    """Columnwise max and mean, concatenated -> (1 x 4h)."""
    return ad.concat_cols([ad.maxpool_cols(m_final), ad.meanpool_cols(m_final)])
