"""Episodic N-way k-shot spotting evaluation.

An episode draws N classes, k support clips per class and one query
utterance per class (each utterance contains exactly one keyword).  Every
agent in a grid run sees the very same episodes; metrics are averaged over
runs.
"""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .agents import AgentParams, SupportSet, spot
from .embeddings import EmbeddingSequence, WindowSpec, substream

TABLE_N = (1, 5, 10, 15, 20, 25, 30)
TABLE_K = (1, 4)


@dataclass
class Episode:
    classes: list[str]
    k: int
    supports: SupportSet
    query_ids: list[str]
    queries: list[EmbeddingSequence]

    @property
    def truth(self) -> list[str]:
        return [q.label for q in self.queries]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for cls in self.classes:
            h.update(cls.encode())
            for w in self.supports.windows[cls]:
                h.update(np.ascontiguousarray(w).tobytes())
        for uid, q in zip(self.query_ids, self.queries):
            h.update(uid.encode())
            h.update(np.ascontiguousarray(q.frames).tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class Tally:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "Tally") -> "Tally":
        return Tally(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0


def sample_episode(corpus, N: int, k: int, rng: np.random.Generator,
                   spec: WindowSpec = WindowSpec(), queries_per_class: int = 1) -> Episode:
    """Uniformly draw N classes, k supports each and query utterances, without replacement."""
    if N < 1 or k < 1:
        raise ValueError("N and k must be >= 1")
    if N > len(corpus.classes):
        raise ValueError(f"episode asks for N={N} classes, corpus has {len(corpus.classes)}")
    chosen = [corpus.classes[i] for i in rng.choice(len(corpus.classes), size=N, replace=False)]
    clips, query_ids = {}, []
    for cls in chosen:
        pool = corpus.clips.get(cls, [])
        utts = corpus.utterances_of(cls)
        if len(pool) < k:
            raise ValueError(f"class {cls!r} has {len(pool)} support clips, episode needs k={k}")
        if len(utts) < queries_per_class:
            raise ValueError(f"class {cls!r} has {len(utts)} utterances, episode needs {queries_per_class}")
        clips[cls] = [pool[i] for i in rng.choice(len(pool), size=k, replace=False)]
        query_ids += [utts[i] for i in rng.choice(len(utts), size=queries_per_class, replace=False)]
    return Episode(chosen, k, SupportSet.from_clips(clips, spec), query_ids,
                   [corpus.utterances[u] for u in query_ids])


def spot_episode(episode: Episode, agent, threshold: float | None = None,
                 spec: WindowSpec = WindowSpec()) -> list[list[str]]:
    """Spotted class ids per query.  ``agent`` is AgentParams or a callable(utterance, supports)."""
    out = []
    for q in episode.queries:
        if isinstance(agent, AgentParams):
            out.append(spot(q, episode.supports, spec, agent, threshold, trace=False).keywords.classes)
        else:
            out.append(list(agent(q, episode.supports)))
    return out


def tally(truth: list[str], spotted: list[list[str]]) -> Tally:
    total = Tally()
    for t, found in zip(truth, spotted):
        found = set(found)
        total += Tally(int(t in found), len(found - {t}), int(t not in found))
    return total


def evaluate_episode(episode: Episode, agent, threshold: float | None = None,
                     spec: WindowSpec = WindowSpec()) -> Tally:
    return tally(episode.truth, spot_episode(episode, agent, threshold, spec))


@dataclass
class EvalRow:
    agent: str
    N: int
    k: int
    run: int
    precision: float
    recall: float
    f1: float
    episode: str = ""


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)

    def cell(self, agent: str, N: int, k: int) -> list[EvalRow]:
        return [r for r in self.rows if (r.agent, r.N, r.k) == (agent, N, k)]

    def mean(self, agent: str, N: int, k: int, metric: str = "f1") -> float:
        return float(np.mean([getattr(r, metric) for r in self.cell(agent, N, k)]))

    def summary(self) -> list[dict]:
        keys = list(dict.fromkeys((r.agent, r.N, r.k) for r in self.rows))
        return [{"agent": a, "N": n, "k": k, "runs": len(self.cell(a, n, k)),
                 "precision": self.mean(a, n, k, "precision"),
                 "recall": self.mean(a, n, k, "recall"),
                 "f1": self.mean(a, n, k, "f1")} for a, n, k in keys]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["agent", "N", "k", "run", "precision", "recall", "f1"])
            for r in self.rows:
                w.writerow([r.agent, r.N, r.k, r.run, repr(r.precision), repr(r.recall), repr(r.f1)])

    def write_summary_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["agent", "N", "k", "runs", "precision", "recall", "f1"])
            for s in self.summary():
                w.writerow([s["agent"], s["N"], s["k"], s["runs"],
                            repr(s["precision"]), repr(s["recall"]), repr(s["f1"])])


def episode_rng(seed: int, N: int, k: int, run: int) -> np.random.Generator:
    return substream(seed, f"episode-N{N}-k{k}-run{run}")


def run_grid(corpus, agents: dict, N_list=TABLE_N, k_list=TABLE_K, runs: int = 10, seed: int = 0,
             thresholds: dict | None = None, spec: WindowSpec = WindowSpec()) -> EvalReport:
    """Evaluate every agent on the same randomised episodes for each (N, k, run)."""
    thresholds = thresholds or {}
    report = EvalReport()
    for N in N_list:
        for k in k_list:
            for run in range(runs):
                episode = sample_episode(corpus, N, k, episode_rng(seed, N, k, run), spec)
                fp = episode.fingerprint()
                for name, agent in agents.items():
                    t = evaluate_episode(episode, agent, thresholds.get(name), spec)
                    report.rows.append(EvalRow(name, N, k, run, t.precision, t.recall, t.f1, fp))
    return report


# ---------------------------------------------------------------------------
# random baseline
# ---------------------------------------------------------------------------

def _f1_counts(tp, fp, fn):
    tp, fp, fn = (np.asarray(x, dtype=np.float64) for x in (tp, fp, fn))
    denom = 2 * tp + fp + fn
    return np.where(tp > 0, 2 * tp / np.where(denom > 0, denom, 1), 0.0)


def random_baseline_f1(N: int, positive_rate: float = 0.5, trials: int = 100_000,
                       seed: int = 0, queries: int | None = None) -> float:
    """Monte-Carlo F1 of a spotter that flags each class independently at ``positive_rate``.

    One trial is one episode of ``queries`` utterances (default N, one per
    class), each containing exactly one of the N classes; counts are pooled
    per episode as in :func:`evaluate_episode`.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    queries = N if queries is None else queries
    rng = substream(seed, "random-baseline")
    tp = rng.binomial(queries, positive_rate, size=trials)
    fp = rng.binomial(queries * (N - 1), positive_rate, size=trials)
    return float(_f1_counts(tp, fp, queries - tp).mean())


def random_baseline_exact(N: int, positive_rate: float = 0.5, queries: int | None = None) -> float:
    """Expected value of :func:`random_baseline_f1` by enumerating both binomials."""
    queries = N if queries is None else queries
    neg = queries * (N - 1)

    def pmf(n, i):
        return math.comb(n, i) * positive_rate ** i * (1 - positive_rate) ** (n - i)

    total = 0.0
    for tp in range(1, queries + 1):
        p_tp = pmf(queries, tp)
        for fp in range(neg + 1):
            total += p_tp * pmf(neg, fp) * 2 * tp / (2 * tp + fp + queries - tp)
    return total
