"""Shared oracles for the test suite."""
import numpy as np

from kwspot.agents import AgentParams
from kwspot.embeddings import SyntheticCorpusSpec

DESK_SPEC = SyntheticCorpusSpec(n_classes=10, dim=16, noise_sigma=0.1, utterances_per_class=8,
                                clips_per_class=8, seed=0)
DESK_STEPS = 10_000

REL_TOL = 1e-4
ABS_TOL = 1e-7


def tiny_agent(kind: str, dim: int = 4, window: int = 8, seed: int = 0) -> AgentParams:
    return AgentParams.init(kind, dim, window=window, seed=seed)


def numeric_grad(f, arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar f() w.r.t. arr, perturbed in place."""
    out = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        up = f()
        arr[i] = old - h
        down = f()
        arr[i] = old
        out[i] = (up - down) / (2 * h)
    return out


def grad_mismatch(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest violation ratio; <= 1 passes (relative, with an absolute floor near zero)."""
    worst = 0.0
    for a, n in zip(analytic.ravel(), numeric.ravel()):
        err = abs(a - n)
        scale = max(abs(a), abs(n))
        ratio = err / ABS_TOL if scale < 1e-6 else err / (REL_TOL * scale)
        worst = max(worst, ratio)
    return worst


def check_param_grads(loss_fn, named: dict) -> dict[str, float]:
    """Backprop once, then compare every named parameter against finite differences."""
    for t in named.values():
        t.zero_grad()
    loss_fn().backward()
    out = {}
    for name, t in named.items():
        analytic = t.grad.copy()
        numeric = numeric_grad(lambda: loss_fn().item(), t.data)
        out[name] = grad_mismatch(analytic, numeric)
    return out


def naive_spot(frames, support_windows: dict, width: int, hop: int, params, threshold: float):
    """Triple loop (class, window, support) recomputing every pair score from scratch.

    Returns (spotted class ids in descending score order, {class: best score}, trace rows).
    """
    from kwspot import autodiff as ad
    from kwspot.agents import match, relate
    from kwspot.encoder import encode_sequence, encode_vector

    T, D = frames.shape
    if T < width:
        wins = [(0, np.vstack([frames, np.zeros((width - T, D))]))]
    else:
        wins = [(o, frames[o:o + width]) for o in range(0, T - width + 1, hop)]
    best, trace = {}, []
    with ad.no_grad():
        for cls, sups in support_windows.items():
            top = None
            for offset, w in wins:
                if params.kind == "proto":
                    mean = ad.mean_rows(ad.stack([encode_vector(s, params.encoder) for s in sups]))
                    scores = [ad.cosine(encode_vector(w, params.encoder), mean).item()]
                    ids = [-1]
                else:
                    scores, ids = [], []
                    for si, s in enumerate(sups):
                        if params.kind == "siamese":
                            v = ad.cosine(encode_vector(w, params.encoder), encode_vector(s, params.encoder))
                        elif params.kind == "relation":
                            v = relate(encode_vector(w, params.encoder), encode_vector(s, params.encoder),
                                       params.relation)
                        else:
                            v = match(encode_sequence(w, params.encoder), encode_sequence(s, params.encoder),
                                      params.matching)
                        scores.append(v.item())
                        ids.append(si)
                for sc, si in zip(scores, ids):
                    trace.append((offset, cls, si, sc))
                    if top is None or sc > top:
                        top = sc
            best[cls] = top
    order = sorted((c for c in support_windows if best[c] >= threshold), key=lambda c: -best[c])
    return order, best, trace


def random_instance(rng, kind: str, dim: int = 4, width: int = 8, max_n: int = 5, max_k: int = 4,
                    max_t: int = 40):
    """Random agent, support set and utterance for brute-force comparisons."""
    params = tiny_agent(kind, dim, width, seed=int(rng.integers(1 << 30)))
    n, k = int(rng.integers(1, max_n + 1)), int(rng.integers(1, max_k + 1))
    sups = {f"c{i}": [rng.normal(size=(width, dim)) for _ in range(k)] for i in range(n)}
    frames = rng.normal(size=(int(rng.integers(1, max_t + 1)), dim))
    return params, sups, frames
