"""Exposition distillation and its two injection points.

The exposition matrix is re-weighted by attention scores derived from its
disagreement with climax- and ending-conditioned views of itself. The
distilled matrix then either initializes the aggregation memory (per-ending
attention) or is summarized into a single self-attended vector appended to
the classifier input.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import autodiff as ad
from .autodiff import Tensor
from .config import AblationConfig
from .matching import attend


@dataclass
class DistillTrace:
    exposition_aware_climax: Tensor | None = None
    exposition_aware_ending: Tensor | None = None
    scores: Tensor | None = None        # s, (|e| x 2h)
    alpha: Tensor | None = None         # (|e| x |e|), row-stochastic
    distilled: Tensor | None = None     # e~, (|e| x 2h)
    memory_init: Tensor | None = None   # (|o| x 2h)
    alpha_self: Tensor | None = None    # (1 x |e|)
    summary: Tensor | None = None       # (1 x 2h)


def _disagreement_scores(e_bar: Tensor, e_c: Tensor | None,
                         e_o: Tensor | None) -> Tensor:
    """s combines the active interaction factors; with both views removed the
    exposition scores itself directly."""
    if e_c is not None and e_o is not None:
        return ad.mul(ad.sub(e_bar, e_c), ad.sub(e_bar, e_o))
    if e_c is not None:
        return ad.sub(e_bar, e_c)
    if e_o is not None:
        return ad.sub(e_bar, e_o)
    return e_bar


def distill_exposition(e_bar: Tensor, c_bar: Tensor, o_bar: Tensor,
                       config: AblationConfig | None = None) -> tuple[Tensor, DistillTrace]:
    """Re-weight exposition rows: alpha = softmax_rows(s sT), e~ = alpha e."""
    config = config or AblationConfig()
    trace = DistillTrace()
    e_c = e_o = None
    if config.exp_aware_climax:
        e_c = attend(e_bar, c_bar)
        trace.exposition_aware_climax = e_c
    if config.exp_aware_option:
        e_o = attend(e_bar, o_bar)
        trace.exposition_aware_ending = e_o
    s = _disagreement_scores(e_bar, e_c, e_o)
    alpha = ad.softmax_rows(ad.matmul(s, ad.transpose(s)))
    e_tilde = ad.matmul(alpha, e_bar)
    trace.scores = s
    trace.alpha = alpha
    trace.distilled = e_tilde
    return e_tilde, trace


def deem_init(o_bar: Tensor, e_tilde: Tensor) -> Tensor:
    """Memory initialization: each ending token attends into the distilled
    exposition. Adds no parameters. (Memory dropout is the caller's job.)"""
    return attend(o_bar, e_tilde)


def deeav_vector(e_tilde: Tensor, w_self: Tensor) -> tuple[Tensor, Tensor]:
    """Self-attention summary of the distilled exposition -> (1 x 2h).

    Returns (summary, weights); weights are the 1 x |e| softmax over
    positions of the linear scores e~ @ w_self.
    """
    scores = ad.transpose(ad.matmul(e_tilde, w_self))  # 1 x |e|
    alpha = ad.softmax_rows(scores)
    return ad.matmul(alpha, e_tilde), alpha
