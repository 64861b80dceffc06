"""Corpus loading, tokenization, vocabulary, and per-token features.

File formats
------------
Story CSV (UTF-8, header row, comma-separated, quoted fields), columns::

    InputStoryid, InputSentence1, InputSentence2, InputSentence3,
    InputSentence4, RandomFifthSentenceQuiz1, RandomFifthSentenceQuiz2,
    AnswerRightEnding

Sentences 1-3 form the exposition (joined with "<s>" boundary markers),
sentence 4 the climax, and the two quiz sentences the candidate endings.
AnswerRightEnding is 1 or 2 and may be absent when ``has_labels=False``.

Pretrained embedding text: one token per line, the token followed by
``d_word`` space-separated reals.

Annotation sidecar: JSON-lines, one record per story::

    {"story_id": ..., "pos": [[...], [...], [...], [...]],
     "ner": [[...], ...], "rel": [[...], ...]}

with one token-aligned id list per sequence in the order exposition,
climax, ending1, ending2. Absent sidecars mean id 0 ("none") everywhere.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
SENT_MARKER = "<s>"

CSV_COLUMNS = [
    "InputStoryid",
    "InputSentence1",
    "InputSentence2",
    "InputSentence3",
    "InputSentence4",
    "RandomFifthSentenceQuiz1",
    "RandomFifthSentenceQuiz2",
]
ANSWER_COLUMN = "AnswerRightEnding"


class MissingColumnError(ValueError):
    pass


class BadLabelError(ValueError):
    pass


class EmbeddingDimMismatchError(ValueError):
    pass


class UnknownTokenError(KeyError):
    pass


class SidecarLengthMismatchError(ValueError):
    pass


@dataclass
class LabeledStory:
    """One story: exposition (sentences 1-3), climax (sentence 4), and two
    candidate endings. ``label`` is the index (1 or 2) of the correct ending,
    or None for unlabeled data."""

    story_id: str
    exposition_tokens: list[str]
    climax_tokens: list[str]
    ending1_tokens: list[str]
    ending2_tokens: list[str]
    label: int | None = None

    def sequences(self) -> list[list[str]]:
        return [self.exposition_tokens, self.climax_tokens,
                self.ending1_tokens, self.ending2_tokens]


def tokenize(text: str) -> list[str]:
    """Lowercase and split into alphanumeric runs and single punctuation marks.

    Deterministic and idempotent on rejoined output: "He woke up shocked."
    becomes [he, woke, up, shocked, .] and "didn't" becomes [didn, ', t].
    """
    tokens = []
    for chunk in text.lower().split():
        run = []
        for ch in chunk:
            if ch.isalnum():
                run.append(ch)
            else:
                if run:
                    tokens.append("".join(run))
                    run = []
                tokens.append(ch)
        if run:
            tokens.append("".join(run))
    return tokens


def _exposition_tokens(s1: str, s2: str, s3: str) -> list[str]:
    out = tokenize(s1)
    for s in (s2, s3):
        out.append(SENT_MARKER)
        out.extend(tokenize(s))
    return out


def load_rocstories(path: str, has_labels: bool = True) -> list[LabeledStory]:
    """Load a story CSV (see module docstring for the column layout).

    Rows with an empty sentence are skipped with a logged warning count.
    A missing required column raises MissingColumnError; an answer value
    other than 1/2 raises BadLabelError.
    """
    stories = []
    skipped = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        required = CSV_COLUMNS + ([ANSWER_COLUMN] if has_labels else [])
        missing = [c for c in required if c not in header]
        if missing:
            raise MissingColumnError(f"{path}: missing columns {missing}")
        for lineno, rec in enumerate(reader, start=2):
            cells = [rec[c] for c in CSV_COLUMNS]
            if any(not (c or "").strip() for c in cells):
                skipped += 1
                continue
            label = None
            if has_labels:
                raw = (rec[ANSWER_COLUMN] or "").strip()
                if raw not in ("1", "2"):
                    raise BadLabelError(f"{path}:{lineno}: answer must be 1 or 2, got {raw!r}")
                label = int(raw)
            story = LabeledStory(
                story_id=rec["InputStoryid"],
                exposition_tokens=_exposition_tokens(*cells[1:4]),
                climax_tokens=tokenize(cells[4]),
                ending1_tokens=tokenize(cells[5]),
                ending2_tokens=tokenize(cells[6]),
                label=label,
            )
            if any(not seq for seq in story.sequences()):
                skipped += 1
                continue
            stories.append(story)
    if skipped:
        log.warning("%s: skipped %d rows with empty sentences", path, skipped)
    return stories


def write_rocstories(path: str, stories: list[LabeledStory]) -> None:
    """Serialize stories back to the CSV layout (token lists space-joined);
    exposition markers split the three sentences again."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS + [ANSWER_COLUMN])
        for s in stories:
            parts, cur = [], []
            for tok in s.exposition_tokens:
                if tok == SENT_MARKER:
                    parts.append(" ".join(cur))
                    cur = []
                else:
                    cur.append(tok)
            parts.append(" ".join(cur))
            while len(parts) < 3:
                parts.append(parts[-1])
            w.writerow([s.story_id, *parts[:3], " ".join(s.climax_tokens),
                        " ".join(s.ending1_tokens), " ".join(s.ending2_tokens),
                        s.label if s.label is not None else ""])


# ---------------------------------------------------------------------------
# vocabulary


@dataclass
class Vocab:
    """Token table with embedding rows.

    Index 0 is the padding token with an all-zero, frozen embedding row.
    Rows found in a pretrained file are frozen; the rest train. When built
    with an OOV bucket, unknown tokens map to it, otherwise lookup raises
    UnknownTokenError.
    """

    tokens: list[str]
    embeddings: np.ndarray  # V x d_word
    frozen_rows: list[int]
    d_word: int
    has_oov: bool
    index: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.index:
            self.index = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def lookup(self, token: str) -> int:
        idx = self.index.get(token)
        if idx is None:
            if self.has_oov:
                return self.index[UNK_TOKEN]
            raise UnknownTokenError(f"token {token!r} not in vocabulary (no OOV bucket)")
        return idx

    def lookup_all(self, tokens: list[str]) -> list[int]:
        return [self.lookup(t) for t in tokens]

    def grad_mask(self) -> np.ndarray:
        """1 for trainable embedding coordinates, 0 for pad/pretrained rows."""
        mask = np.ones_like(self.embeddings)
        mask[0] = 0.0
        for r in self.frozen_rows:
            mask[r] = 0.0
        return mask


def read_embedding_file(path: str, d_word: int) -> dict[str, np.ndarray]:
    vectors = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) <= 1:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != d_word:
                raise EmbeddingDimMismatchError(
                    f"{path}:{lineno}: expected {d_word} values, got {len(values)}")
            vectors[token] = np.array([float(v) for v in values])
    return vectors


def build_vocab(stories: list[LabeledStory], embedding_file: str | None = None,
                d_word: int = 300, include_oov: bool = False, seed: int = 0) -> Vocab:
    """Index every corpus token; pretrained rows are copied and frozen,
    the rest are uniform(-0.05, 0.05) and trainable. First-occurrence order
    keeps the index deterministic."""
    if not stories:
        raise ValueError("build_vocab needs at least one story")
    tokens = [PAD_TOKEN] + ([UNK_TOKEN] if include_oov else [])
    known = set(tokens)
    for story in stories:
        for seq in story.sequences():
            for tok in seq:
                if tok not in known:
                    known.add(tok)
                    tokens.append(tok)
    pretrained = read_embedding_file(embedding_file, d_word) if embedding_file else {}
    rng = np.random.default_rng(seed)
    rows = np.empty((len(tokens), d_word))
    frozen = []
    for i, tok in enumerate(tokens):
        if i == 0:
            rows[0] = 0.0
        elif tok in pretrained:
            rows[i] = pretrained[tok]
            frozen.append(i)
        else:
            rows[i] = rng.uniform(-0.05, 0.05, size=d_word)
    return Vocab(tokens=tokens, embeddings=rows, frozen_rows=frozen,
                 d_word=d_word, has_oov=include_oov)


# ---------------------------------------------------------------------------
# features


@dataclass
class SequenceFeatures:
    """Token-aligned inputs for one sequence."""

    token_ids: list[int]
    pos_ids: list[int]
    ner_ids: list[int]
    rel_ids: list[int]
    tf: list[float]
    exact_match: list[int]

    def __len__(self) -> int:
        return len(self.token_ids)


@dataclass
class FeaturizedStory:
    story: LabeledStory
    exposition: SequenceFeatures
    climax: SequenceFeatures
    ending1: SequenceFeatures
    ending2: SequenceFeatures

    @property
    def story_id(self) -> str:
        return self.story.story_id

    @property
    def label(self) -> int | None:
        return self.story.label

    def ending(self, k: int) -> SequenceFeatures:
        return self.ending1 if k == 1 else self.ending2


def load_annotations(path: str) -> dict[str, dict]:
    """Read a JSON-lines sidecar into a story_id -> record map."""
    records = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            records[rec["story_id"]] = rec
    return records


def featurize(story: LabeledStory, vocab: Vocab,
              annotations: dict[str, dict] | None = None) -> FeaturizedStory:
    """Compute per-token features for all four sequences.

    TF is the token's count over the full story (plot plus both endings)
    divided by the total token count, so it lies in (0, 1] and does not
    depend on ending order. Exact-match is 1 for an ending token occurring
    verbatim in the plot (exposition or climax) and, symmetrically, for a
    plot token occurring in either candidate ending. POS/NER/relation ids
    come from the sidecar record when present, else 0 ("none").
    """
    seqs = story.sequences()
    total = sum(len(s) for s in seqs)
    counts: dict[str, int] = {}
    for seq in seqs:
        for tok in seq:
            counts[tok] = counts.get(tok, 0) + 1
    plot_set = set(seqs[0]) | set(seqs[1])
    ending_set = set(seqs[2]) | set(seqs[3])

    record = (annotations or {}).get(story.story_id)
    if record is not None:
        for key in ("pos", "ner", "rel"):
            got = [len(ids) for ids in record[key]]
            want = [len(s) for s in seqs]
            if got != want:
                raise SidecarLengthMismatchError(
                    f"story {story.story_id}: {key} lengths {got} != token counts {want}")

    def seq_features(i: int, match_against: set[str]) -> SequenceFeatures:
        seq = seqs[i]
        if record is not None:
            pos, ner, rel = record["pos"][i], record["ner"][i], record["rel"][i]
        else:
            pos = ner = rel = [0] * len(seq)
        return SequenceFeatures(
            token_ids=vocab.lookup_all(seq),
            pos_ids=list(pos),
            ner_ids=list(ner),
            rel_ids=list(rel),
            tf=[counts[t] / total for t in seq],
            exact_match=[1 if t in match_against else 0 for t in seq],
        )

    return FeaturizedStory(
        story=story,
        exposition=seq_features(0, ending_set),
        climax=seq_features(1, ending_set),
        ending1=seq_features(2, plot_set),
        ending2=seq_features(3, plot_set),
    )


# ---------------------------------------------------------------------------
# synthetic corpus


def gen_synthetic(n: int, vocab_size: int = 60, seed: int = 0) -> list[LabeledStory]:
    """Generate planted-structure stories for desk-scale runs.

    The correct ending shares a topic token with the exposition and a
    trigger token with the climax; the wrong ending draws from a disjoint
    filler pool, so a token-overlap heuristic classifies the corpus
    perfectly. Deterministic per (n, vocab_size, seed).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if vocab_size < 24:
        raise ValueError("vocab_size must be >= 24 to split the token pools")
    rng = np.random.default_rng(seed)
    quarter = vocab_size // 4
    topics = [f"topic{i}" for i in range(quarter)]
    triggers = [f"trigger{i}" for i in range(quarter)]
    plot_fill = [f"scene{i}" for i in range(quarter)]
    end_fill = [f"coda{i}" for i in range(vocab_size - 3 * quarter)]

    def pick(pool, k):
        return [pool[i] for i in rng.integers(0, len(pool), size=k)]

    stories = []
    for i in range(n):
        topic = topics[rng.integers(0, len(topics))]
        trigger = triggers[rng.integers(0, len(triggers))]
        sents = [pick(plot_fill, 3) for _ in range(3)]
        sents[rng.integers(0, 3)][rng.integers(0, 3)] = topic
        exposition = sents[0] + [SENT_MARKER] + sents[1] + [SENT_MARKER] + sents[2]
        climax = pick(plot_fill, 3) + [trigger]
        rng.shuffle(climax)
        correct = [topic, trigger] + pick(end_fill, 2)
        rng.shuffle(correct)
        wrong = pick(end_fill, 4)
        label = int(rng.integers(1, 3))
        e1, e2 = (correct, wrong) if label == 1 else (wrong, correct)
        stories.append(LabeledStory(
            story_id=f"syn-{seed}-{i:04d}",
            exposition_tokens=exposition,
            climax_tokens=climax,
            ending1_tokens=e1,
            ending2_tokens=e2,
            label=label,
        ))
    return stories
