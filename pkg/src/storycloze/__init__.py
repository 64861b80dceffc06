"""Story-cloze ending selection with an attention matching network.

The model encodes a story's exposition, climax, and two candidate endings
with a shared BiLSTM, matches each ending against the climax through
attention and a gated multi-turn memory, distills the exposition into the
matching process, and scores the candidates with a small tanh network.
Everything runs on a built-in reverse-mode autodiff core with a
finite-difference gradient-checking oracle.
"""

from .autodiff import GradCheckReport, Tape, Tensor, backward, grad_check
from .config import AblationConfig, TrainConfig
from .data import (
    FeaturizedStory,
    LabeledStory,
    Vocab,
    build_vocab,
    featurize,
    gen_synthetic,
    load_annotations,
    load_rocstories,
    tokenize,
)
from .estimator import StoryEndingClassifier, check_stories
from .model import (
    ModelParams,
    StoryScores,
    forward_story,
    init_model_params,
    loss,
    predict,
    score_option,
)
from .training import (
    Checkpoint,
    EvalResult,
    TrainResult,
    adam_step,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    split_holdout,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AblationConfig",
    "Checkpoint",
    "EvalResult",
    "FeaturizedStory",
    "GradCheckReport",
    "LabeledStory",
    "ModelParams",
    "StoryEndingClassifier",
    "StoryScores",
    "Tape",
    "Tensor",
    "TrainConfig",
    "TrainResult",
    "Vocab",
    "adam_step",
    "backward",
    "build_vocab",
    "check_stories",
    "evaluate",
    "featurize",
    "forward_story",
    "gen_synthetic",
    "grad_check",
    "init_model_params",
    "load_annotations",
    "load_checkpoint",
    "load_rocstories",
    "loss",
    "predict",
    "save_checkpoint",
    "score_option",
    "split_holdout",
    "tokenize",
    "train",
]
