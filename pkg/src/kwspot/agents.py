"""The four metric-space agents and the continuous-signal spotting loop.

Every agent scores one (query window, class) pair at a time:

* siamese   max over supports of cosine(enc(q), enc(s))
* relation  max over supports of mlp(concat(enc(q), enc(s)))
* proto     cosine(enc(q), mean_s enc(s))
* matching  max over supports of lstm-reduce(attention(enc_seq(q), enc_seq(s)))

:func:`spot` slides windows over an utterance, keeps the best score per
class and thresholds it into a :class:`KeywordList`.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .checkpoint import load_msp, save_msp
from .embeddings import EmbeddingSequence, WindowSpec, pad_to, substream, window_offsets, windows
from .encoder import FILTERS, EncoderParams, encode_sequence, encode_vector, sequence_length, uniform_init

KINDS = ("siamese", "relation", "proto", "matching")
RELATION_HIDDEN = 64
MATCHING_HIDDEN = 32
DEFAULT_THRESHOLDS = {"siamese": 0.8, "proto": 0.8, "relation": 0.5, "matching": 0.5}


def default_threshold(kind: str) -> float:
    return DEFAULT_THRESHOLDS[kind]


@dataclass
class RelationHead:
    fc1_w: ad.Tensor
    fc1_b: ad.Tensor
    fc2_w: ad.Tensor
    fc2_b: ad.Tensor

    @classmethod
    def init(cls, rng) -> "RelationHead":
        n_in = 2 * FILTERS
        return cls(uniform_init(rng, (n_in, RELATION_HIDDEN), n_in),
                   uniform_init(rng, (RELATION_HIDDEN,), n_in),
                   uniform_init(rng, (RELATION_HIDDEN, 1), RELATION_HIDDEN),
                   uniform_init(rng, (1,), RELATION_HIDDEN))

    def named(self):
        return {"rel.fc1.w": self.fc1_w, "rel.fc1.b": self.fc1_b,
                "rel.fc2.w": self.fc2_w, "rel.fc2.b": self.fc2_b}


@dataclass
class MatchingHead:
    wx: ad.Tensor
    wh: ad.Tensor
    b: ad.Tensor
    fc_w: ad.Tensor
    fc_b: ad.Tensor

    @classmethod
    def init(cls, n_in: int, rng) -> "MatchingHead":
        H = MATCHING_HIDDEN
        return cls(uniform_init(rng, (n_in, 4 * H), n_in),
                   uniform_init(rng, (H, 4 * H), H),
                   uniform_init(rng, (4 * H,), n_in + H),
                   uniform_init(rng, (H, 1), H),
                   uniform_init(rng, (1,), H))

    @property
    def n_in(self) -> int:
        return self.wx.shape[0]

    def named(self):
        return {"match.lstm.wx": self.wx, "match.lstm.wh": self.wh, "match.lstm.b": self.b,
                "match.fc.w": self.fc_w, "match.fc.b": self.fc_b}


@dataclass
class AgentParams:
    kind: str
    encoder: EncoderParams
    relation: RelationHead | None = None
    matching: MatchingHead | None = None
    window: int = 16
    seed: int = 0
    steps: int = 0
    prototype: str = "encoded"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown agent kind {self.kind!r}; expected one of {KINDS}")
        if (self.kind == "relation") != (self.relation is not None):
            raise ValueError("relation weights must be present exactly for the relation agent")
        if (self.kind == "matching") != (self.matching is not None):
            raise ValueError("matching head must be present exactly for the matching agent")
        if self.prototype not in ("encoded", "raw"):
            raise ValueError("prototype must be 'encoded' or 'raw'")

    @classmethod
    def init(cls, kind: str, dim: int, window: int = 16, seed: int = 0) -> "AgentParams":
        rng = substream(seed, f"init-{kind}")
        enc = EncoderParams.init(dim, rng)
        rel = RelationHead.init(rng) if kind == "relation" else None
        mat = MatchingHead.init(sequence_length(window), rng) if kind == "matching" else None
        return cls(kind, enc, rel, mat, window=window, seed=seed)

    @property
    def dim(self) -> int:
        return self.encoder.dim

    def named(self) -> dict[str, ad.Tensor]:
        out = dict(self.encoder.named())
        if self.relation is not None:
            out.update(self.relation.named())
        if self.matching is not None:
            out.update(self.matching.named())
        return out

    def parameter_count(self) -> int:
        return sum(t.data.size for t in self.named().values())

    def zero_grad(self):
        for t in self.named().values():
            t.zero_grad()

    def copy(self) -> "AgentParams":
        return from_arrays(self.header(), {k: t.data.copy() for k, t in self.named().items()})

    def header(self) -> dict:
        h = {"agent": self.kind, "dim": self.dim, "seed": self.seed, "steps": self.steps,
             "window": self.window}
        if self.kind == "proto":
            h["prototype"] = self.prototype
        return h

    def save(self, path, extra: dict[str, np.ndarray] | None = None) -> None:
        arrays = {k: t.data for k, t in self.named().items()}
        arrays.update(extra or {})
        save_msp(path, self.header(), arrays)


def from_arrays(header: dict, arrays: dict[str, np.ndarray]) -> AgentParams:
    t = lambda name: ad.Tensor(arrays[name].copy(), requires_grad=True)
    kind = header["agent"]
    try:
        enc = EncoderParams(t("enc.conv1.w"), t("enc.conv1.b"), t("enc.conv2.w"), t("enc.conv2.b"))
        rel = RelationHead(t("rel.fc1.w"), t("rel.fc1.b"), t("rel.fc2.w"), t("rel.fc2.b")) \
            if kind == "relation" else None
        mat = MatchingHead(t("match.lstm.wx"), t("match.lstm.wh"), t("match.lstm.b"),
                           t("match.fc.w"), t("match.fc.b")) if kind == "matching" else None
    except KeyError as exc:
        raise ValueError(f"checkpoint for {kind!r} agent lacks parameter {exc.args[0]}") from None
    params = AgentParams(kind, enc, rel, mat, window=int(header.get("window", 16)),
                         seed=int(header.get("seed", 0)), steps=int(header.get("steps", 0)),
                         prototype=header.get("prototype", "encoded"))
    if int(header.get("dim", params.dim)) != params.dim:
        raise ValueError(f"checkpoint header dim={header['dim']} disagrees with weights (dim={params.dim})")
    return params


def load_agent(path) -> tuple[AgentParams, dict[str, np.ndarray]]:
    """Load a checkpoint; returns the agent and any non-parameter arrays (optimizer state)."""
    header, arrays = load_msp(path)
    params = from_arrays(header, arrays)
    names = set(params.named())
    return params, {k: v for k, v in arrays.items() if k not in names}


# ---------------------------------------------------------------------------
# supports and results
# ---------------------------------------------------------------------------

@dataclass
class SupportSet:
    """class id -> k support windows, each W x D."""
    windows: dict[str, list[np.ndarray]]

    def __post_init__(self):
        shapes = set()
        for cls, ws in self.windows.items():
            if not ws:
                raise ValueError(f"class {cls!r} has no supports")
            self.windows[cls] = [np.asarray(w, dtype=np.float64) for w in ws]
            shapes.update(w.shape for w in self.windows[cls])
        if len(shapes) > 1:
            raise ValueError(f"supports must share one W x D shape, got {sorted(shapes)}")

    @classmethod
    def from_clips(cls, clips: dict[str, list[np.ndarray]], spec: WindowSpec) -> "SupportSet":
        """Pad (or truncate) keyword clips to the window width."""
        return cls({c: [pad_to(x, spec.width) for x in xs] for c, xs in clips.items()})

    @property
    def classes(self) -> list[str]:
        return list(self.windows)

    @property
    def dim(self) -> int:
        return next(iter(self.windows.values()))[0].shape[1]


@dataclass(frozen=True)
class SpotScore:
    class_id: str
    score: float
    window: int = 0
    support: int = -1


@dataclass
class KeywordList:
    """Spotted classes in descending score order."""
    spotted: list[SpotScore]

    @property
    def classes(self) -> list[str]:
        return [s.class_id for s in self.spotted]

    def __iter__(self):
        return iter(self.classes)

    def __len__(self):
        return len(self.spotted)

    def __contains__(self, cls):
        return cls in self.classes


@dataclass
class SpotResult:
    keywords: KeywordList
    scores: dict[str, SpotScore]
    offsets: list[int]
    trace: list[tuple[int, str, int, float]] = field(default_factory=list)


def write_trace_csv(result: SpotResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window_offset", "class_id", "support_idx", "score"])
        for offset, cls, sup, score in result.trace:
            w.writerow([offset, cls, sup, repr(score)])


# ---------------------------------------------------------------------------
# pair-level scoring (differentiable)
# ---------------------------------------------------------------------------

def relate(eq: ad.Tensor, es: ad.Tensor, head: RelationHead) -> ad.Tensor:
    h = ad.tanh(ad.dense(ad.concat([eq, es]), head.fc1_w, head.fc1_b))
    return ad.sigmoid(ad.dense(h, head.fc2_w, head.fc2_b))[0]


def attention(sq: ad.Tensor, ss: ad.Tensor) -> ad.Tensor:
    """Row-stochastic attention from query frames to support frames."""
    return ad.softmax_rows(ad.matmul(sq, ad.transpose(ss)) / np.sqrt(FILTERS))


def _fit_columns(a: ad.Tensor, n: int) -> ad.Tensor:
    cols = a.shape[1]
    if cols == n:
        return a
    if cols > n:
        return a[:, :n]
    return ad.concat([a, ad.Tensor(np.zeros((a.shape[0], n - cols)))], axis=1)


def match(sq: ad.Tensor, ss: ad.Tensor, head: MatchingHead) -> ad.Tensor:
    a = _fit_columns(attention(sq, ss), head.n_in)
    h = ad.lstm_sequence(a, head.wx, head.wh, head.b)
    return ad.sigmoid(ad.dense(h, head.fc_w, head.fc_b))[0]


def pair_score(q, s, params: AgentParams) -> ad.Tensor:
    """Differentiable score of one (query window, support window) pair."""
    if params.kind in ("siamese", "proto"):
        return ad.cosine(encode_vector(q, params.encoder), encode_vector(s, params.encoder))
    if params.kind == "relation":
        return relate(encode_vector(q, params.encoder), encode_vector(s, params.encoder), params.relation)
    return match(encode_sequence(q, params.encoder), encode_sequence(s, params.encoder), params.matching)


# ---------------------------------------------------------------------------
# per-window class scores
# ---------------------------------------------------------------------------

def _argmax_first(values) -> int:
    best = 0
    for i, v in enumerate(values):
        if v > values[best]:
            best = i
    return best


def _require_supports(supports):
    if len(supports) == 0:
        raise ValueError("need at least one support")


def score_siamese(q, supports, params: AgentParams, class_id: str = "") -> SpotScore:
    _require_supports(supports)
    with ad.no_grad():
        eq = encode_vector(q, params.encoder)
        scores = [ad.cosine(eq, encode_vector(s, params.encoder)).item() for s in supports]
    best = _argmax_first(scores)
    return SpotScore(class_id, scores[best], 0, best)


def score_relation(q, supports, params: AgentParams, class_id: str = "") -> SpotScore:
    _require_supports(supports)
    if params.relation is None:
        raise ValueError("relation scoring needs relation weights")
    with ad.no_grad():
        eq = encode_vector(q, params.encoder)
        scores = [relate(eq, encode_vector(s, params.encoder), params.relation).item() for s in supports]
    best = _argmax_first(scores)
    return SpotScore(class_id, scores[best], 0, best)


def prototype(supports, params: AgentParams) -> ad.Tensor:
    if params.prototype == "raw":
        raw = ad.mean_rows(ad.stack([ad.as_tensor(s) for s in supports]))
        return encode_vector(raw, params.encoder)
    return ad.mean_rows(ad.stack([encode_vector(s, params.encoder) for s in supports]))


def score_proto(q, supports, params: AgentParams, class_id: str = "") -> SpotScore:
    _require_supports(supports)
    with ad.no_grad():
        score = ad.cosine(encode_vector(q, params.encoder), prototype(supports, params)).item()
    return SpotScore(class_id, score, 0, -1)


def score_matching(q, supports, params: AgentParams, class_id: str = "") -> SpotScore:
    _require_supports(supports)
    if params.matching is None:
        raise ValueError("matching scoring needs a matching head")
    with ad.no_grad():
        sq = encode_sequence(q, params.encoder)
        scores = [match(sq, encode_sequence(s, params.encoder), params.matching).item() for s in supports]
    best = _argmax_first(scores)
    return SpotScore(class_id, scores[best], 0, best)


SCORERS = {"siamese": score_siamese, "relation": score_relation,
           "proto": score_proto, "matching": score_matching}


def score(q, supports, params: AgentParams, class_id: str = "") -> SpotScore:
    return SCORERS[params.kind](q, supports, params, class_id)


# ---------------------------------------------------------------------------
# spotting
# ---------------------------------------------------------------------------

def _encode_all(ws, params: AgentParams):
    fn = encode_sequence if params.kind == "matching" else encode_vector
    return [fn(w, params.encoder) for w in ws]


def _pair_scores(eq, encoded_supports, params: AgentParams) -> list[float]:
    if params.kind == "siamese":
        return [ad.cosine(eq, es).item() for es in encoded_supports]
    if params.kind == "relation":
        return [relate(eq, es, params.relation).item() for es in encoded_supports]
    return [match(eq, es, params.matching).item() for es in encoded_supports]


def spot(utterance, supports: SupportSet, spec: WindowSpec, params: AgentParams,
         threshold: float | None = None, trace: bool = True) -> SpotResult:
    """Score every class against every utterance window and threshold the per-class maxima."""
    frames = utterance.frames if isinstance(utterance, EmbeddingSequence) else np.asarray(utterance, dtype=np.float64)
    if frames.shape[1] != supports.dim:
        raise ValueError(f"utterance dim {frames.shape[1]} does not match support dim {supports.dim}")
    if params.kind == "relation" and params.relation is None:
        raise ValueError("relation scoring needs relation weights")
    if params.kind == "matching" and params.matching is None:
        raise ValueError("matching scoring needs a matching head")
    threshold = default_threshold(params.kind) if threshold is None else threshold
    offsets = window_offsets(len(frames), spec)
    rows = []
    best: dict[str, SpotScore] = {}
    with ad.no_grad():
        encoded_windows = _encode_all(windows(frames, spec), params)
        for cls, sup in supports.windows.items():
            if params.kind == "proto":
                proto = prototype(sup, params)
                per_window = [[ad.cosine(eq, proto).item()] for eq in encoded_windows]
            else:
                enc_sup = _encode_all(sup, params)
                per_window = [_pair_scores(eq, enc_sup, params) for eq in encoded_windows]
            top = None
            for w, scores in enumerate(per_window):
                b = _argmax_first(scores)
                if top is None or scores[b] > top.score:
                    top = SpotScore(cls, scores[b], w, -1 if params.kind == "proto" else b)
                if trace:
                    for si, sc in enumerate(scores):
                        rows.append((offsets[w], cls, -1 if params.kind == "proto" else si, sc))
            best[cls] = top
    spotted = sorted((s for s in best.values() if s.score >= threshold), key=lambda s: -s.score)
    return SpotResult(KeywordList(spotted), best, offsets, rows)
