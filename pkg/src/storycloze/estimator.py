"""Scikit-learn style front door for the story-ending matching network.

The classifier fits on labeled stories and predicts which of the two
candidate endings (1 or 2) completes each story. It follows the estimator
protocol (``get_params``/``set_params``, ``fit``/``predict``/``score``), so
it composes with pipelines, ``clone``, and model-selection utilities.

Stories may be given as :class:`~storycloze.data.LabeledStory` objects or as
plain tuples of raw strings ``(exposition, climax, ending1, ending2[, label])``
where the exposition holds the first three sentences.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .config import AblationConfig, TrainConfig
from .data import (
    LabeledStory,
    _exposition_tokens,
    build_vocab,
    load_annotations,
    tokenize,
)
from .training import evaluate, split_holdout, train


def as_story(item, index: int = 0) -> LabeledStory:
    """Validate and coerce one input record into a LabeledStory."""
    if isinstance(item, LabeledStory):
        story = item
    elif isinstance(item, (tuple, list)) and len(item) in (4, 5):
        if not all(isinstance(part, str) for part in item[:4]):
            raise TypeError(f"story {index}: text fields must be strings")
        label = None
        if len(item) == 5:
            label = int(item[4])
        sentences = item[0].split(". ")
        while len(sentences) < 3:
            sentences.append("")
        story = LabeledStory(
            story_id=f"x{index}",
            exposition_tokens=_exposition_tokens(sentences[0], sentences[1],
                                                 ". ".join(sentences[2:])),
            climax_tokens=tokenize(item[1]),
            ending1_tokens=tokenize(item[2]),
            ending2_tokens=tokenize(item[3]),
            label=label,
        )
    else:
        raise TypeError(
            f"story {index}: expected LabeledStory or a 4/5-tuple of strings, "
            f"got {type(item).__name__}")
    if story.label is not None and story.label not in (1, 2):
        raise ValueError(f"story {index}: label must be 1 or 2, got {story.label}")
    for seq_name, seq in zip(("exposition", "climax", "ending1", "ending2"),
                             story.sequences()):
        if not seq:
            raise ValueError(f"story {index}: empty {seq_name}")
    return story


def check_stories(X, require_labels: bool = False, y=None) -> list[LabeledStory]:
    """Coerce an iterable of story records; optionally merge external labels."""
    stories = [as_story(item, i) for i, item in enumerate(X)]
    if not stories:
        raise ValueError("need at least one story")
    if y is not None:
        y = np.asarray(y).astype(int).ravel()
        if len(y) != len(stories):
            raise ValueError(f"y has {len(y)} labels for {len(stories)} stories")
        stories = [
            LabeledStory(s.story_id, s.exposition_tokens, s.climax_tokens,
                         s.ending1_tokens, s.ending2_tokens, int(label))
            for s, label in zip(stories, y)
        ]
    if require_labels:
        missing = [s.story_id for s in stories if s.label is None]
        if missing:
            raise ValueError(f"stories without labels: {missing[:5]}")
    return stories


class StoryEndingClassifier(BaseEstimator, ClassifierMixin):
    """Two-way story-ending chooser built on the matching network.

    Parameters mirror the training configuration: the matching-feature
    subset ("c", "s", "m" in any combination), the exposition memory and
    summary-vector switches, distillation on/off, hidden width, and the
    optimizer settings. ``holdout`` controls the internal dev fraction used
    to keep the best epoch (0 trains on everything and keeps the last).

    After ``fit`` the learned state lives in ``checkpoint_``; ``classes_``
    is always ``[1, 2]``.
    """

    def __init__(self, hidden=96, word_dim=300, features="csm", deem=True,
                 deeav=True, distill=True, exp_aware_climax=True,
                 exp_aware_option=True, learning_rate=0.008, batch_size=64,
                 max_epochs=50, l2=3e-8, dropout_word=0.4, dropout_memory=0.41,
                 holdout=0.1, seed=0, embeddings_path=None, annotations_path=None):
        self.hidden = hidden
        self.word_dim = word_dim
        self.features = features
        self.deem = deem
        self.deeav = deeav
        self.distill = distill
        self.exp_aware_climax = exp_aware_climax
        self.exp_aware_option = exp_aware_option
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.l2 = l2
        self.dropout_word = dropout_word
        self.dropout_memory = dropout_memory
        self.holdout = holdout
        self.seed = seed
        self.embeddings_path = embeddings_path
        self.annotations_path = annotations_path

    def _config(self) -> TrainConfig:
        ablation = AblationConfig(
            deem=self.deem, deeav=self.deeav, distill=self.distill,
            exp_aware_climax=self.exp_aware_climax,
            exp_aware_option=self.exp_aware_option, features=self.features)
        return TrainConfig(
            batch_size=self.batch_size, learning_rate=self.learning_rate,
            l2=self.l2, dropout_word=self.dropout_word,
            dropout_memory=self.dropout_memory, hidden=self.hidden,
            d_word=self.word_dim, max_epochs=self.max_epochs, seed=self.seed,
            ablation=ablation)

    def fit(self, X, y=None):
        stories = check_stories(X, require_labels=True, y=y)
        config = self._config()
        annotations = (load_annotations(self.annotations_path)
                       if self.annotations_path else None)
        vocab = build_vocab(stories, embedding_file=self.embeddings_path,
                            d_word=self.word_dim, include_oov=True,
                            seed=self.seed)
        if self.holdout and len(stories) >= 10:
            train_part, dev_part = split_holdout(stories, self.seed)
        else:
            train_part = dev_part = stories
        result = train(train_part, dev_part, config, vocab, annotations)
        self.checkpoint_ = result.checkpoint
        self.history_ = result.history
        self.classes_ = np.array([1, 2])
        self.n_iter_ = len(result.history)
        return self

    def _eval(self, X):
        if not hasattr(self, "checkpoint_"):
            raise RuntimeError("fit the classifier before predicting")
        stories = check_stories(X)
        annotations = (load_annotations(self.annotations_path)
                       if self.annotations_path else None)
        return evaluate(stories, self.checkpoint_, annotations)

    def predict(self, X) -> np.ndarray:
        res = self._eval(X)
        return np.array([row[2] for row in res.predictions])

    def predict_proba(self, X) -> np.ndarray:
        res = self._eval(X)
        return np.array([[row[5], row[6]] for row in res.predictions])

    def decision_function(self, X) -> np.ndarray:
        """Score difference (ending 2 minus ending 1)."""
        res = self._eval(X)
        return np.array([row[4] - row[3] for row in res.predictions])

    def score(self, X, y=None) -> float:
        stories = check_stories(X, require_labels=(y is None), y=y)
        annotations = (load_annotations(self.annotations_path)
                       if self.annotations_path else None)
        return evaluate(stories, self.checkpoint_, annotations).accuracy
