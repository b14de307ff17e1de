"""Pair-based agent training with RMSProp.

Embedding agents (siamese, proto) minimise a contrastive loss on Euclidean
distances between encodings; learned-similarity agents (relation, matching)
minimise binary cross-entropy on their sigmoid pair score.  Positive and
negative pairs strictly alternate, one pair per step.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .agents import AgentParams, match, relate
from .embeddings import WindowSpec, pad_to, substream
from .encoder import encode_sequence, encode_vector

log = logging.getLogger(__name__)


class TrainingHalted(FloatingPointError):
    def __init__(self, step: int, name: str):
        super().__init__(f"non-finite gradient for {name} at step {step}")
        self.step = step
        self.name = name


@dataclass
class TrainPair:
    a: np.ndarray
    b: np.ndarray
    y: int
    classes: tuple[str, str] = ("", "")


@dataclass
class OptimizerState:
    lr: float = 0.001
    rho: float = 0.9
    eps: float = 1e-8
    v: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class TrainConfig:
    # encodings live in (-1, 1)^20, so a margin of 1 leaves negative pairs at
    # cosine ~1; 5 forces the angular separation that cosine scoring relies on
    steps: int = 800_000
    seed: int = 0
    margin: float = 5.0
    lr: float = 0.001
    rho: float = 0.9
    checkpoint_interval: int = 0
    checkpoint_path: str | None = None

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.margin <= 0:
            raise ValueError("margin must be > 0")


@dataclass
class TrainResult:
    params: AgentParams
    losses: list[float]
    state: OptimizerState


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def contrastive_loss(a_enc, b_enc, y: int, margin: float = 5.0) -> ad.Tensor:
    """y * d^2 + (1 - y) * max(0, margin - d)^2 with d the Euclidean distance."""
    diff = ad.sub(a_enc, b_enc)
    sq = ad.total(ad.mul(diff, diff))
    if y:
        return sq
    if sq.item() == 0.0:
        # d = 0: the hinge is active but its direction is undefined; use a zero subgradient
        return ad.add(ad.mul(sq, 0.0), margin * margin)
    gap = ad.relu(ad.sub(margin, ad.sqrt(sq)))
    return ad.mul(gap, gap)


def score_loss(score, y: int) -> ad.Tensor:
    """Binary cross-entropy on a probability-valued score."""
    score = ad.as_tensor(score)
    s = score.item()
    if not 0.0 < s < 1.0:
        raise ValueError(f"score must lie strictly inside (0, 1), got {s}")
    if y:
        return ad.mul(ad.log(score), -1.0)
    return ad.mul(ad.log(ad.sub(1.0, score)), -1.0)


def pair_loss(params: AgentParams, a, b, y: int, margin: float = 5.0) -> ad.Tensor:
    enc = params.encoder
    if params.kind in ("siamese", "proto"):
        return contrastive_loss(encode_vector(a, enc), encode_vector(b, enc), y, margin)
    if params.kind == "relation":
        return score_loss(relate(encode_vector(a, enc), encode_vector(b, enc), params.relation), y)
    return score_loss(match(encode_sequence(a, enc), encode_sequence(b, enc), params.matching), y)


# ---------------------------------------------------------------------------
# optimiser
# ---------------------------------------------------------------------------

def rmsprop_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                 state: OptimizerState, step: int = 0):
    """In-place RMSProp update: v <- rho v + (1 - rho) g^2; p <- p - lr g / (sqrt(v) + eps)."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingHalted(step, name)
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        v = state.v.get(name)
        if v is None:
            v = state.v[name] = np.zeros_like(p)
        v *= state.rho
        v += (1.0 - state.rho) * g * g
        p -= state.lr * g / (np.sqrt(v) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# pair sampling
# ---------------------------------------------------------------------------

def _covering_offset(utt, width: int, rng) -> int:
    T = len(utt)
    if T <= width:
        return 0
    start, end = utt.span
    lo, hi = max(0, end - width), min(start, T - width)
    if lo > hi:
        # span longer than the window: take a window lying inside it
        lo, hi = min(start, T - width), min(end - width, T - width)
    return int(rng.integers(lo, hi + 1))


def _window_at(utt, offset: int, width: int) -> np.ndarray:
    return pad_to(utt.frames[offset:offset + width], width)


def sample_pair(corpus, rng: np.random.Generator, parity: str, spec: WindowSpec) -> TrainPair:
    """One training pair: a support clip against an utterance window.

    Positive pairs take a window covering the same keyword; negative pairs
    take any window of an utterance labelled with a different class.
    """
    classes = corpus.classes
    if len(classes) < 2:
        raise ValueError("pair sampling needs at least two classes")
    by_class = corpus.by_class
    if any(not corpus.clips.get(c) or not by_class.get(c) for c in classes):
        raise ValueError("every class needs at least one clip and one utterance")
    cls = classes[int(rng.integers(len(classes)))]
    clip = corpus.clips[cls][int(rng.integers(len(corpus.clips[cls])))]
    a = pad_to(clip, spec.width)
    if parity == "pos":
        utt = corpus.utterances[by_class[cls][int(rng.integers(len(by_class[cls])))]]
        b = _window_at(utt, _covering_offset(utt, spec.width, rng), spec.width)
        return TrainPair(a, b, 1, (cls, cls))
    if parity != "neg":
        raise ValueError(f"parity must be 'pos' or 'neg', got {parity!r}")
    other = cls
    while other == cls:
        other = classes[int(rng.integers(len(classes)))]
    utt = corpus.utterances[by_class[other][int(rng.integers(len(by_class[other])))]]
    offset = int(rng.integers(0, max(0, len(utt) - spec.width) + 1))
    return TrainPair(a, _window_at(utt, offset, spec.width), 0, (cls, other))


def pair_stream(corpus, seed: int, spec: WindowSpec, start: int = 0):
    """Endless pos, neg, pos, ... stream; ``start`` skips already-consumed pairs."""
    rng = substream(seed, "pairs")
    step = 0
    while True:
        pair = sample_pair(corpus, rng, "pos" if step % 2 == 0 else "neg", spec)
        if step >= start:
            yield pair
        step += 1


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def state_arrays(state: OptimizerState) -> dict[str, np.ndarray]:
    return {f"rms.{k}": v for k, v in state.v.items()}


def state_from_arrays(arrays: dict[str, np.ndarray], config: TrainConfig) -> OptimizerState:
    v = {k[4:]: np.array(a) for k, a in arrays.items() if k.startswith("rms.")}
    return OptimizerState(lr=config.lr, rho=config.rho, v=v)


def train(kind: str, corpus, config: TrainConfig, spec: WindowSpec = WindowSpec(),
          init: AgentParams | None = None, state: OptimizerState | None = None) -> TrainResult:
    """Train one agent for ``config.steps`` further steps (resuming from ``init`` if given)."""
    if init is None:
        init = AgentParams.init(kind, corpus.dim, window=spec.width, seed=config.seed)
    params = init
    if params.kind != kind:
        raise ValueError(f"initial parameters are for {params.kind!r}, asked to train {kind!r}")
    state = state or OptimizerState(lr=config.lr, rho=config.rho)
    named = params.named()
    arrays = {k: t.data for k, t in named.items()}
    losses = []
    stream = pair_stream(corpus, config.seed, spec, start=params.steps)
    for i in range(config.steps):
        pair = next(stream)
        params.zero_grad()
        loss = pair_loss(params, pair.a, pair.b, pair.y, config.margin)
        loss.backward()
        step = params.steps + 1
        rmsprop_step(arrays, {k: t.grad for k, t in named.items()}, state, step)
        params.steps = step
        losses.append(loss.item())
        if config.checkpoint_interval and config.checkpoint_path and step % config.checkpoint_interval == 0:
            params.save(config.checkpoint_path, state_arrays(state))
            log.info("step %d: checkpoint written, mean loss over interval %.4f",
                     step, float(np.mean(losses[-config.checkpoint_interval:])))
    return TrainResult(params, losses, state)
