"""Shared builders for gradient-check worlds and controlled mutation stories."""

from dataclasses import replace

import numpy as np

from storycloze.autodiff import Tape, backward
from storycloze.config import TrainConfig
from storycloze.data import LabeledStory, build_vocab, featurize
from storycloze.encoder import N_NER_TAGS, N_POS_TAGS, N_REL_TYPES
from storycloze.model import forward_story, init_model_params, loss
from storycloze.training import AdamState, adam_step


def make_check_story(rng, n_expo=6, n_climax=4, n_opt=5, n_words=28):
    """Random story for finite-difference checks: ending 1 reuses plot tokens
    (live attention structure), ending 2 stays distinct."""
    words = [f"w{i}" for i in range(n_words)]

    def seq(n, pool):
        return [words[i] for i in rng.choice(list(pool), size=n, replace=False)]

    expo = seq(n_expo, range(n_words))
    climax = seq(n_climax, range(n_words))
    e1 = [expo[0], expo[2], climax[1]] + seq(n_opt - 3, range(20, n_words))
    e2 = seq(n_opt, range(10, 20))
    return LabeledStory("chk", expo, climax, e1, e2, 1)


def make_check_sidecar(story, rng):
    """Random nonzero tag ids so every embedding input dimension is live."""
    lens = [len(s) for s in story.sequences()]
    return {story.story_id: {
        "story_id": story.story_id,
        "pos": [rng.integers(1, N_POS_TAGS, size=n).tolist() for n in lens],
        "ner": [rng.integers(1, N_NER_TAGS, size=n).tolist() for n in lens],
        "rel": [rng.integers(1, N_REL_TYPES, size=n).tolist() for n in lens],
    }}


def liven_embeddings(params, rng, scale=0.8):
    """Replace the tiny-uniform embedding tables with N(0, scale) rows so the
    encoder operates away from its vanishing-activation regime."""
    for name in ("emb.word", "emb.pos", "emb.ner", "emb.rel"):
        t = params[name]
        t.data = rng.normal(0.0, scale, size=t.data.shape)
        if t.grad_mask is not None:
            t.data *= t.grad_mask


def settle(story, fstory, config, params, steps=40, lr=0.05):
    """A few dropout-free Adam steps move the model to a generic operating
    point: activations are O(1), the score margin is real, and no gradient
    sits at the finite-difference noise floor."""
    opt_config = replace(config, learning_rate=lr)
    state = AdamState.for_params(params)
    final = None
    for _ in range(steps):
        params.zero_grads()
        tape = Tape()
        with tape:
            scores, _ = forward_story(fstory, params, config, training=False)
            final = loss(scores, story.label, params, l2=config.l2)
        backward(tape, final)
        adam_step(params, state, opt_config)
    return final.item()


def build_check_world(seed, hidden=8, d_word=12, pre_steps=40, n_words=28):
    """Story, featurization, config, and settled params for a grad check.

    The vocabulary covers all n_words tokens (plus padding) even though the
    story uses a subset, so the word table has its full row count.
    """
    rng = np.random.default_rng(seed)
    story = make_check_story(rng, n_words=n_words)
    sidecar = make_check_sidecar(story, rng)
    coverage = LabeledStory("cover", [f"w{i}" for i in range(n_words)],
                            ["w0"], ["w1"], ["w2"], 1)
    vocab = build_vocab([story, coverage], d_word=d_word, seed=seed)
    config = TrainConfig(hidden=hidden, d_word=d_word, seed=seed)
    params = init_model_params(vocab, config)
    liven_embeddings(params, rng)
    fstory = featurize(story, vocab, sidecar)
    settle(story, fstory, config, params, steps=pre_steps)
    return story, fstory, config, params


def disjoint_mutation_pair():
    """Base story plus an exposition mutation that provably leaves every
    climax/ending feature fixed: same exposition length, and all three token
    pools (original exposition, replacement exposition, plot/endings) are
    pairwise disjoint, so TF counts and exact-match flags cannot move."""
    expo = [f"a{i}" for i in range(9)]
    mutated = [f"b{i}" for i in range(9)]
    climax = [f"c{i}" for i in range(4)]
    e1 = [f"d{i}" for i in range(4)]
    e2 = [f"f{i}" for i in range(4)]
    base = LabeledStory("mut", expo, climax, e1, e2, 1)
    mut = LabeledStory("mut", mutated, climax, e1, e2, 1)
    return base, mut
