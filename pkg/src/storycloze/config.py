"""Run configuration: ablation switches and training hyperparameters."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

FEATURE_ORDER = "csm"


def normalize_features(features: str) -> str:
    """Validate a matching-feature subset and return it in canonical c,s,m order."""
    if not features:
        raise ValueError("feature set must be non-empty")
    chosen = set(features)
    bad = chosen - set(FEATURE_ORDER)
    if bad:
        raise ValueError(f"unknown matching features: {sorted(bad)} (allowed: c, s, m)")
    return "".join(ch for ch in FEATURE_ORDER if ch in chosen)


@dataclass
class AblationConfig:
    """Which model components are active.

    ``deem``        initialize the aggregation memory from the exposition
    ``deeav``       append the exposition summary vector to the classifier input
    ``distill``     distill the exposition before use (off: raw encoder output)
    ``exp_aware_climax`` / ``exp_aware_option``
                    which interaction factors enter the distillation scores
    ``features``    matching-feature subset, ordered subset of "csm";
                    its length is the number of aggregation turns
    """

    deem: bool = True
    deeav: bool = True
    distill: bool = True
    exp_aware_climax: bool = True
    exp_aware_option: bool = True
    features: str = "csm"

    def __post_init__(self):
        self.features = normalize_features(self.features)

    @property
    def turns(self) -> int:
        return len(self.features)

    @property
    def uses_exposition(self) -> bool:
        return self.deem or self.deeav

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AblationConfig":
        return cls(**d)


@dataclass
class TrainConfig:
    """Optimization and architecture hyperparameters.

    Defaults follow the reference configuration: batch 64, Adam at lr 0.008,
    L2 3e-8, word/memory dropout 0.4/0.41, hidden size 96, and feature
    embedding widths 18/8/10 for POS/NER/relation tags.
    """

    batch_size: int = 64
    learning_rate: float = 0.008
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    l2: float = 3e-8
    dropout_word: float = 0.4
    dropout_memory: float = 0.41
    hidden: int = 96
    mlp_hidden: int | None = None  # None: track `hidden`
    d_word: int = 300
    d_pos: int = 18
    d_ner: int = 8
    d_rel: int = 10
    max_epochs: int = 50
    seed: int = 0
    target_train_acc: float | None = None  # early exit for overfit harnesses
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def __post_init__(self):
        for name in ("dropout_word", "dropout_memory"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {v}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    @property
    def mlp_width(self) -> int:
        return self.hidden if self.mlp_hidden is None else self.mlp_hidden

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ablation"] = self.ablation.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["ablation"] = AblationConfig.from_dict(d.get("ablation", {}))
        return cls(**d)
