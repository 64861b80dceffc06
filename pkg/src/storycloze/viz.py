"""Memory heatmap emission: one CSV and one SVG per aggregation turn.

Rows are the option-ending tokens, columns the memory dimensions. Each SVG
also carries a per-token salience strip (the row L2 norm). Output is plain
text with fixed float formatting, so identical inputs give identical bytes.
"""

from __future__ import annotations

import csv
import os

import numpy as np

from .data import LabeledStory, featurize
from .model import forward_story
from .training import Checkpoint


class UnknownStoryIdError(KeyError):
    pass


def _color(value: float, lo: float, hi: float) -> str:
    """Diverging blue-white-red scale over [lo, hi]."""
    if hi <= lo:
        t = 0.5
    else:
        t = (value - lo) / (hi - lo)
    t = min(max(t, 0.0), 1.0)
    if t < 0.5:
        u = t / 0.5  # blue -> white
        r, g, b = int(59 + u * 196), int(76 + u * 179), 255
    else:
        u = (t - 0.5) / 0.5  # white -> red
        r, g, b = 255, int(255 - u * 179), int(255 - u * 196)
    return f"#{r:02x}{g:02x}{b:02x}"


def _gray(value: float, lo: float, hi: float) -> str:
    t = 0.5 if hi <= lo else min(max((value - lo) / (hi - lo), 0.0), 1.0)
    v = int(255 - t * 215)
    return f"#{v:02x}{v:02x}{v:02x}"


def write_heatmap_csv(matrix: np.ndarray, tokens: list[str], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["token"] + [f"dim_{j}" for j in range(matrix.shape[1])])
        for tok, row in zip(tokens, matrix):
            w.writerow([tok] + [f"{v:.6f}" for v in row])


def write_heatmap_svg(matrix: np.ndarray, tokens: list[str], path: str,
                      title: str) -> None:
    n_rows, n_cols = matrix.shape
    cell, label_w, strip_w, top = 9, 110, 22, 28
    width = label_w + n_cols * cell + 14 + strip_w
    height = top + n_rows * cell + 8
    lo, hi = float(matrix.min()), float(matrix.max())
    salience = np.sqrt((matrix ** 2).sum(axis=1))
    s_lo, s_hi = float(salience.min()), float(salience.max())

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<text x="4" y="16" font-family="monospace" font-size="12">{title}</text>',
    ]
    for i, tok in enumerate(tokens):
        y = top + i * cell
        parts.append(
            f'<text x="{label_w - 4}" y="{y + cell - 2}" text-anchor="end" '
            f'font-family="monospace" font-size="8">{tok}</text>')
        for j in range(n_cols):
            parts.append(
                f'<rect x="{label_w + j * cell}" y="{y}" width="{cell}" '
                f'height="{cell}" fill="{_color(matrix[i, j], lo, hi)}"/>')
        parts.append(
            f'<rect x="{label_w + n_cols * cell + 14}" y="{y}" width="{strip_w}" '
            f'height="{cell}" fill="{_gray(salience[i], s_lo, s_hi)}"/>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")


def dump_story_heatmaps(checkpoint: Checkpoint, stories: list[LabeledStory],
                        story_id: str, ending: int, out_dir: str,
                        annotations: dict | None = None) -> list[str]:
    """Forward one story and write per-turn memory CSV+SVG pairs.

    Returns the written paths; the number of turn pairs equals the
    configured feature count.
    """
    by_id = {s.story_id: s for s in stories}
    if story_id not in by_id:
        raise UnknownStoryIdError(f"story id {story_id!r} not in the data")
    story = by_id[story_id]
    fstory = featurize(story, checkpoint.vocab, annotations)
    _, trace = forward_story(fstory, checkpoint.params, checkpoint.config,
                             training=False, want_trace=True)
    mtrace = trace.match[ending]
    tokens = (story.ending1_tokens if ending == 1 else story.ending2_tokens)
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for turn, memory in enumerate(mtrace.memories[1:], start=1):
        base = os.path.join(out_dir, f"{story_id}_ending{ending}_turn{turn}")
        write_heatmap_csv(memory.data, tokens, base + ".csv")
        write_heatmap_svg(memory.data, tokens, base + ".svg",
                          title=f"{story_id} ending {ending} memory turn {turn}")
        written.extend([base + ".csv", base + ".svg"])
    return written
