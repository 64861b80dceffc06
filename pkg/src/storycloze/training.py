"""Optimization loop, holdout protocol, evaluation, and checkpointing.

Training shuffles the labeled stories each epoch, takes the mean story loss
per mini-batch, applies Adam with bias correction, evaluates on the held-out
part after every epoch, and keeps the best-scoring parameters. Everything is
driven by explicit seeds: two runs with the same inputs and configuration
produce byte-identical checkpoints and logs.

Checkpoint container (versioned, little-endian):

    magic "SCZK" | u32 version | u64 manifest length | manifest JSON (UTF-8)
    | one raw float64 array per parameter, in manifest order | sha256 of
    everything before the digest

The manifest records the config, ablation, vocabulary (tokens, frozen rows),
parameter names and shapes, the epoch, and the best dev accuracy.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Tape, backward
from .config import TrainConfig
from .data import FeaturizedStory, LabeledStory, Vocab, featurize
from .model import (
    ModelParams,
    data_loss,
    forward_story,
    init_model_params,
    predict,
)

CHECKPOINT_MAGIC = b"SCZK"
CHECKPOINT_VERSION = 1


class TooFewStoriesError(ValueError):
    pass


class ChecksumMismatchError(ValueError):
    pass


def split_holdout(stories: list, seed: int) -> tuple[list, list]:
    """Seeded shuffle; first tenth becomes the dev part, rest trains."""
    if len(stories) < 10:
        raise TooFewStoriesError(f"need at least 10 stories, got {len(stories)}")
    order = np.random.default_rng(seed).permutation(len(stories))
    n_dev = len(stories) // 10
    dev = [stories[i] for i in order[:n_dev]]
    train = [stories[i] for i in order[n_dev:]]
    return train, dev


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, params: ModelParams) -> "AdamState":
        state = cls()
        for name, tensor in params.trainable_items():
            state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        return state


def adam_step(params: ModelParams, state: AdamState, config: TrainConfig) -> None:
    """One Adam update with bias correction from each tensor's grad buffer.

    Coordinates frozen by a grad_mask carry exactly-zero gradients, so their
    moments stay zero and the parameter bits never change.
    """
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, tensor in params.trainable_items():
        g = tensor.grad
        if g is None:
            continue
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        update = (config.learning_rate / bc1) * m / (np.sqrt(v / bc2) + config.adam_eps)
        if tensor.grad_mask is not None:
            update *= tensor.grad_mask
        tensor.data -= update


@dataclass
class Checkpoint:
    params: ModelParams
    vocab: Vocab
    config: TrainConfig
    epoch: int
    best_dev_acc: float


@dataclass
class EvalResult:
    accuracy: float
    # rows: (story_id, label, prediction, score1, score2, p1, p2)
    predictions: list[tuple]


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[dict]


def _featurize_all(stories: list[LabeledStory], vocab: Vocab,
                   annotations: dict | None) -> list[FeaturizedStory]:
    return [featurize(s, vocab, annotations) for s in stories]


def _batch_loss_and_grads(batch: list[FeaturizedStory], params: ModelParams,
                          config: TrainConfig, rng: np.random.Generator) -> float:
    """Accumulate gradients of mean(story data loss) + L2 into the params."""
    params.zero_grads()
    tape = Tape()
    with tape:
        total = None
        for fstory in batch:
            scores, _ = forward_story(fstory, params, config, training=True, rng=rng)
            term = data_loss(scores, fstory.label)
            total = term if total is None else ad.add(total, term)
        mean_data = ad.scale(total, 1.0 / len(batch))
        full = ad.add(mean_data, ad.scale(params.l2_penalty(), config.l2))
    backward(tape, full)
    return full.item()


def _check_params_finite(params: ModelParams, epoch: int) -> None:
    for name, tensor in params.items():
        if not np.all(np.isfinite(tensor.data)):
            raise NonFiniteError(
                f"parameter {name} became non-finite during epoch {epoch}")


def evaluate_params(fstories: list[FeaturizedStory], params: ModelParams,
                    config: TrainConfig) -> EvalResult:
    """Dropout-free accuracy plus one prediction row per story."""
    rows = []
    correct = 0
    for fstory in fstories:
        scores, _ = forward_story(fstory, params, config, training=False)
        pred = predict(scores)
        if fstory.label is not None and pred == fstory.label:
            correct += 1
        p1, p2 = scores.probabilities
        rows.append((fstory.story_id, fstory.label, pred,
                     scores.score1, scores.score2, p1, p2))
    acc = correct / len(fstories) if fstories else 0.0
    return EvalResult(accuracy=acc, predictions=rows)


def evaluate(stories: list[LabeledStory], checkpoint: Checkpoint,
             annotations: dict | None = None) -> EvalResult:
    fstories = _featurize_all(stories, checkpoint.vocab, annotations)
    return evaluate_params(fstories, checkpoint.params, checkpoint.config)


def train(train_part: list[LabeledStory], dev_part: list[LabeledStory],
          config: TrainConfig, vocab: Vocab,
          annotations: dict | None = None) -> TrainResult:
    """Run the epoch loop and return the best-on-dev checkpoint plus history.

    ``config.target_train_acc``, when set, stops early once the training
    accuracy reaches the target (checked after each epoch); the extra
    ``train_acc`` field then appears in the history rows.
    """
    if not train_part or not dev_part:
        raise TooFewStoriesError("train and dev parts must be non-empty")
    params = init_model_params(vocab, config)
    state = AdamState.for_params(params)
    rng = np.random.default_rng(config.seed)
    train_f = _featurize_all(train_part, vocab, annotations)
    dev_f = _featurize_all(dev_part, vocab, annotations)

    best_values = params.copy_values()
    best_acc = -1.0
    best_epoch = 0
    history = []
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(train_f))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [train_f[i] for i in order[start:start + config.batch_size]]
            batch_loss = _batch_loss_and_grads(batch, params, config, rng)
            adam_step(params, state, config)
            epoch_loss += batch_loss * len(batch)
        _check_params_finite(params, epoch)
        train_loss = epoch_loss / len(train_f)
        dev_acc = evaluate_params(dev_f, params, config).accuracy
        record = {"epoch": epoch, "train_loss": train_loss, "dev_acc": dev_acc}
        if dev_acc >= best_acc:  # ties keep the most-trained parameters
            best_acc = dev_acc
            best_epoch = epoch
            best_values = params.copy_values()
        if config.target_train_acc is not None:
            train_acc = evaluate_params(train_f, params, config).accuracy
            record["train_acc"] = train_acc
            history.append(record)
            if train_acc >= config.target_train_acc:
                break
        else:
            history.append(record)

    params.load_values(best_values)
    ckpt = Checkpoint(params=params, vocab=vocab, config=config,
                      epoch=best_epoch, best_dev_acc=best_acc)
    return TrainResult(checkpoint=ckpt, history=history)


# ---------------------------------------------------------------------------
# checkpoint serialization


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    names = ckpt.params.names()
    manifest = {
        "version": CHECKPOINT_VERSION,
        "config": ckpt.config.to_dict(),
        "vocab": {
            "tokens": ckpt.vocab.tokens,
            "frozen_rows": ckpt.vocab.frozen_rows,
            "d_word": ckpt.vocab.d_word,
            "has_oov": ckpt.vocab.has_oov,
        },
        "params": [{"name": n, "shape": list(ckpt.params[n].data.shape)}
                   for n in names],
        "epoch": ckpt.epoch,
        "best_dev_acc": ckpt.best_dev_acc,
        "feature_turns": ckpt.config.ablation.turns,
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack("<I", CHECKPOINT_VERSION)
    out += struct.pack("<Q", len(blob))
    out += blob
    for n in names:
        out += np.ascontiguousarray(ckpt.params[n].data, dtype="<f8").tobytes()
    out += hashlib.sha256(bytes(out)).digest()
    with open(path, "wb") as fh:
        fh.write(bytes(out))


def read_manifest(path: str) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ChecksumMismatchError(f"{path}: not a checkpoint file")
    (mlen,) = struct.unpack("<Q", raw[8:16])
    return json.loads(raw[16:16 + mlen].decode())


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 48 or raw[:4] != CHECKPOINT_MAGIC:
        raise ChecksumMismatchError(f"{path}: not a checkpoint file")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumMismatchError(f"{path}: checksum mismatch (corrupt file)")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != CHECKPOINT_VERSION:
        raise ChecksumMismatchError(f"{path}: unsupported version {version}")
    (mlen,) = struct.unpack("<Q", raw[8:16])
    manifest = json.loads(raw[16:16 + mlen].decode())
    config = TrainConfig.from_dict(manifest["config"])
    vrec = manifest["vocab"]
    vocab = Vocab(tokens=vrec["tokens"], embeddings=np.zeros((len(vrec["tokens"]),
                  vrec["d_word"])), frozen_rows=vrec["frozen_rows"],
                  d_word=vrec["d_word"], has_oov=vrec["has_oov"])
    offset = 16 + mlen
    params = init_model_params(vocab, config)
    values = {}
    for rec in manifest["params"]:
        shape = tuple(rec["shape"])
        nbytes = 8 * shape[0] * shape[1]
        arr = np.frombuffer(body, dtype="<f8", count=shape[0] * shape[1],
                            offset=offset).reshape(shape)
        values[rec["name"]] = arr.astype(np.float64)
        offset += nbytes
    params.load_values(values)
    vocab.embeddings = params["emb.word"].data
    return Checkpoint(params=params, vocab=vocab, config=config,
                      epoch=manifest["epoch"], best_dev_acc=manifest["best_dev_acc"])
