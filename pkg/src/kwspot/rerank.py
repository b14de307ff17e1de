"""Keyword-aware n-best reranking and keyword-restricted WER.

A spotted keyword moves every beam hypothesis containing it ahead of those
that do not; the spotter's scores are not used, only the binary decision.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .embeddings import WindowSpec, substream
from .evaluation import TABLE_K, TABLE_N, episode_rng, sample_episode, spot_episode

BEAM = 4


@dataclass(frozen=True)
class Hypothesis:
    rank: int
    tokens: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(t.lower() for t in self.tokens))

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass
class HypothesisList:
    utt_id: str
    hypotheses: list[Hypothesis]
    reference: tuple[str, ...] | None = None

    def __post_init__(self):
        if not self.hypotheses:
            raise ValueError(f"utterance {self.utt_id!r} has no hypotheses")
        if [h.rank for h in self.hypotheses] != list(range(len(self.hypotheses))):
            raise ValueError(f"utterance {self.utt_id!r}: ranks must run 0..n-1 in order")
        if self.reference is not None:
            self.reference = tuple(t.lower() for t in self.reference)

    def __len__(self):
        return len(self.hypotheses)

    def __iter__(self):
        return iter(self.hypotheses)


@dataclass
class RerankResult:
    chosen: Hypothesis
    order: list[Hypothesis]
    triggered: list[str] = field(default_factory=list)

    @property
    def original_rank(self) -> int:
        return self.chosen.rank


def _spotted_set(spotted) -> set[str]:
    if spotted is None:
        return set()
    if hasattr(spotted, "classes"):
        spotted = spotted.classes
    return {s.lower() for s in spotted}


def rerank(hyps, spotted) -> RerankResult:
    """Stable partition: hypotheses with more distinct spotted keywords first, then input order."""
    hyps = list(hyps)
    if not hyps:
        raise ValueError("cannot rerank an empty hypothesis list")
    keys = _spotted_set(spotted)
    hits = [len(keys.intersection(h.tokens)) for h in hyps]
    order = [hyps[i] for i in sorted(range(len(hyps)), key=lambda i: (-hits[i], i))]
    chosen = order[0]
    triggered = sorted(keys.intersection(chosen.tokens)) if chosen is not hyps[0] else []
    return RerankResult(chosen, order, triggered)


# ---------------------------------------------------------------------------
# keyword WER
# ---------------------------------------------------------------------------

def keyword_errors(hyp, ref, keywords) -> tuple[int, int]:
    """(edit distance, keyword errors) of the alignment minimising both, lexicographically.

    Substitutions and deletions count as keyword errors when the reference
    token is a keyword; insertions when the inserted token is.
    """
    kw = {k.lower() for k in keywords}
    hyp = [t.lower() for t in hyp]
    ref = [t.lower() for t in ref]
    n, m = len(ref), len(hyp)
    cost = [[(0, 0)] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        e, k = cost[i - 1][0]
        cost[i][0] = (e + 1, k + (ref[i - 1] in kw))
    for j in range(1, m + 1):
        e, k = cost[0][j - 1]
        cost[0][j] = (e + 1, k + (hyp[j - 1] in kw))
    for i in range(1, n + 1):
        r = ref[i - 1]
        r_kw = r in kw
        for j in range(1, m + 1):
            h = hyp[j - 1]
            e, k = cost[i - 1][j - 1]
            diag = (e, k) if r == h else (e + 1, k + r_kw)
            e, k = cost[i - 1][j]
            delete = (e + 1, k + r_kw)
            e, k = cost[i][j - 1]
            insert = (e + 1, k + (h in kw))
            cost[i][j] = min(diag, delete, insert)
    return cost[n][m]


def keyword_wer(chosen, reference, keywords) -> Fraction:
    """Keyword errors of the chosen hypothesis divided by keyword occurrences in the reference."""
    tokens = chosen.tokens if isinstance(chosen, Hypothesis) else chosen
    kw = {k.lower() for k in keywords}
    if not reference:
        raise ValueError("reference must be non-empty")
    n_kw = sum(t.lower() in kw for t in reference)
    if n_kw == 0:
        raise ValueError("reference contains no keyword; keyword WER is undefined")
    return Fraction(keyword_errors(tokens, reference, kw)[1], n_kw)


def word_errors(hyp, ref) -> int:
    return keyword_errors(hyp, ref, ())[0]


# ---------------------------------------------------------------------------
# hypothesis files
# ---------------------------------------------------------------------------

def dumps_hypotheses(lists: list[HypothesisList]) -> str:
    blocks = []
    for hl in lists:
        lines = [f"UTT {hl.utt_id}"]
        if hl.reference is not None:
            lines.append("REF " + " ".join(hl.reference))
        lines += [f"HYP {h.rank} " + " ".join(h.tokens) for h in hl.hypotheses]
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def loads_hypotheses(text: str) -> list[HypothesisList]:
    out: list[HypothesisList] = []
    block: list[tuple[int, str]] = []

    def flush():
        if not block:
            return
        lineno, first = block[0]
        if not first.startswith("UTT "):
            raise ValueError(f"line {lineno}: block must start with 'UTT <id>'")
        uid, ref, hyps = first[4:].strip(), None, []
        for lineno, line in block[1:]:
            tag, _, rest = line.partition(" ")
            if tag == "REF":
                ref = tuple(rest.split())
            elif tag == "HYP":
                rank, _, words = rest.partition(" ")
                try:
                    hyps.append(Hypothesis(int(rank), tuple(words.split())))
                except ValueError:
                    raise ValueError(f"line {lineno}: malformed HYP line") from None
            else:
                raise ValueError(f"line {lineno}: unknown tag {tag!r}")
        try:
            out.append(HypothesisList(uid, hyps, ref))
        except ValueError as exc:
            raise ValueError(f"line {block[0][0]}: {exc}") from None
        block.clear()

    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.strip():
            block.append((lineno, line.strip()))
        else:
            flush()
    flush()
    return out


def save_hypotheses(lists, path) -> None:
    Path(path).write_text(dumps_hypotheses(lists), encoding="utf-8", newline="\n")


def load_hypotheses(path) -> list[HypothesisList]:
    return loads_hypotheses(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# synthetic beams
# ---------------------------------------------------------------------------

FILLERS = ("the was near bed and then he said to of in that it with as his on be at by had "
           "not but from they which one were her all she there would their him been when who").split()
_V = "aeiou"
_C = "bcdfghklmnprstvz"


def near_miss(word: str, rng: np.random.Generator, avoid: set[str]) -> str:
    """A one-letter misspelling (vowel for vowel, consonant for consonant) not in ``avoid``."""
    for _ in range(100):
        i = int(rng.integers(len(word)))
        pool = _V if word[i] in _V else _C
        cand = word[:i] + str(rng.choice([c for c in pool if c != word[i]])) + word[i + 1:]
        if cand not in avoid and cand != word:
            return cand
    return word + "h"


def make_hypothesis_corpus(labels: dict[str, str], vocabulary, seed: int = 0, beam: int = BEAM,
                           hidden_rate: float = 0.5, confusable_rate: float = 0.5,
                           trap_rate: float = 0.5, sentence_len: tuple[int, int] = (4, 8)) -> list[HypothesisList]:
    """Beam lists emulating rare-word ASR errors around one keyword per utterance.

    ``labels`` maps utterance id -> keyword.  Exactly ``round(hidden_rate * n)``
    utterances get the correct keyword at a rank > 0, behind misspellings or
    confusable vocabulary words.  In the others the correct hypothesis is
    rank 0 and, with probability ``trap_rate``, a lower-ranked hypothesis
    additionally inserts a spurious vocabulary keyword.
    """
    rng = substream(seed, "hypotheses")
    vocab = sorted({v.lower() for v in vocabulary})
    uids = list(labels)
    n_hidden = int(round(hidden_rate * len(uids)))
    hidden = {uids[i] for i in rng.permutation(len(uids))[:n_hidden]}
    out = []
    for uid in uids:
        kw = labels[uid].lower()
        others = [v for v in vocab if v != kw]
        words = [str(w) for w in rng.choice(FILLERS, size=int(rng.integers(sentence_len[0], sentence_len[1] + 1)))]
        pos = int(rng.integers(len(words) + 1))
        ref = tuple(words[:pos] + [kw] + words[pos:])
        sents = {}
        correct_rank = int(rng.integers(1, beam)) if uid in hidden else 0
        sents[correct_rank] = ref
        used = {ref}
        for r in range(beam):
            if r in sents:
                continue
            while True:
                if others and rng.random() < confusable_rate:
                    sub = str(rng.choice(others))
                else:
                    sub = near_miss(kw, rng, set(vocab))
                cand = ref[:pos] + (sub,) + ref[pos + 1:]
                if cand not in used:
                    break
            used.add(cand)
            sents[r] = cand
        if uid not in hidden and others and rng.random() < trap_rate:
            r = int(rng.integers(1, beam))
            sents[r] = ref[:pos + 1] + (str(rng.choice(others)),) + ref[pos + 1:]
        out.append(HypothesisList(uid, [Hypothesis(r, sents[r]) for r in range(beam)], ref))
    return out


# ---------------------------------------------------------------------------
# WER tables
# ---------------------------------------------------------------------------

def corpus_keyword_wer(lists, spotter, keywords) -> float:
    """Mean keyword WER when ``spotter(hyp_list)`` supplies the spotted keywords (None = vanilla)."""
    vals = []
    for hl in lists:
        chosen = hl.hypotheses[0] if spotter is None else rerank(hl, spotter(hl)).chosen
        vals.append(keyword_wer(chosen, hl.reference, keywords))
    return float(np.mean([float(v) for v in vals]))


@dataclass
class WerRow:
    agent: str
    N: int
    k: int
    keyword_wer: float


def wer_grid(hyp_lists, corpus, agents: dict, N_list=TABLE_N, k_list=TABLE_K, runs: int = 10,
             seed: int = 0, thresholds: dict | None = None,
             spec: WindowSpec = WindowSpec()) -> list[WerRow]:
    """Keyword WER per (agent, N, k) over the shared evaluation episodes, plus a vanilla row."""
    thresholds = thresholds or {}
    by_id = {hl.utt_id: hl for hl in hyp_lists}
    keywords = {c.lower() for c in corpus.classes}
    rows = []
    for N in N_list:
        for k in k_list:
            sums = {name: [] for name in ["vanilla", *agents]}
            for run in range(runs):
                episode = sample_episode(corpus, N, k, episode_rng(seed, N, k, run), spec)
                lists = [by_id[u] for u in episode.query_ids]
                for hl in lists:
                    sums["vanilla"].append(float(keyword_wer(hl.hypotheses[0], hl.reference, keywords)))
                for name, agent in agents.items():
                    found = spot_episode(episode, agent, thresholds.get(name), spec)
                    for hl, spotted in zip(lists, found):
                        sums[name].append(float(keyword_wer(rerank(hl, spotted).chosen, hl.reference, keywords)))
            rows += [WerRow(name, N, k, float(np.mean(v))) for name, v in sums.items()]
    return rows


def write_wer_csv(rows: list[WerRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["agent", "N", "k", "keyword_wer"])
        for r in rows:
            w.writerow([r.agent, r.N, r.k, repr(r.keyword_wer)])
