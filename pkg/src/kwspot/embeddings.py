"""Embedding sequences: EMB v1 file I/O, windowing and a synthetic corpus.

The synthetic generator stands in for an ASR encoder.  Each keyword class
owns a latent template (unit-norm Gaussian frames); utterances embed one
noisy, optionally time-stretched instance of a template between background
frames, and support clips are independently jittered instances.
"""
from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

EMB_MAGIC = "EMB v1"


def fmt_real(x: float) -> str:
    return f"{x:.9g}"


def substream(seed: int, name: str) -> np.random.Generator:
    """Named, independent random stream derived from one integer seed."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(zlib.crc32(name.encode()),)))


class EmbeddingFormatError(ValueError):
    pass


@dataclass
class EmbeddingSequence:
    frames: np.ndarray
    label: str | None = None
    span: tuple[int, int] | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1 or self.frames.shape[1] < 1:
            raise ValueError(f"embedding sequence must be a non-empty T x D matrix, got shape {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("embedding sequence contains non-finite values")
        if self.label is not None and (not self.label or any(c.isspace() for c in self.label)):
            raise ValueError(f"label must be a non-empty token without whitespace, got {self.label!r}")
        if self.span is not None:
            start, end = (int(v) for v in self.span)
            if not 0 <= start < end <= len(self):
                raise ValueError(f"span {self.span} outside 0..{len(self)}")
            self.span = (start, end)

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class WindowSpec:
    width: int = 16
    hop: int = 4

    def __post_init__(self):
        if self.width < 8:
            raise ValueError(f"window width must be >= 8 frames (two conv+pool stages), got {self.width}")
        if not 1 <= self.hop <= self.width:
            raise ValueError(f"hop must be in [1, width], got {self.hop}")


# ---------------------------------------------------------------------------
# EMB v1
# ---------------------------------------------------------------------------

def dumps_embedding(seq: EmbeddingSequence) -> str:
    lines = [f"{EMB_MAGIC} dim={seq.dim} frames={len(seq)}"]
    lines += [" ".join(fmt_real(v) for v in row) for row in seq.frames]
    meta = []
    if seq.label is not None:
        meta.append(f"label={seq.label}")
    if seq.span is not None:
        meta.append(f"span={seq.span[0]}:{seq.span[1]}")
    if meta:
        lines.append(" ".join(meta))
    return "\n".join(lines) + "\n"


def loads_embedding(text: str) -> EmbeddingSequence:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise EmbeddingFormatError("line 1: empty file")
    head = lines[0].split()
    if len(head) != 4 or " ".join(head[:2]) != EMB_MAGIC:
        raise EmbeddingFormatError(f"line 1: expected 'EMB v1 dim=<D> frames=<T>', got {lines[0]!r}")
    try:
        key_d, dim = head[2].split("=")
        key_t, n = head[3].split("=")
        dim, n = int(dim), int(n)
    except ValueError:
        raise EmbeddingFormatError(f"line 1: malformed header {lines[0]!r}") from None
    if key_d != "dim" or key_t != "frames" or dim < 1 or n < 1:
        raise EmbeddingFormatError(f"line 1: malformed header {lines[0]!r}")
    if len(lines) - 1 < n:
        raise EmbeddingFormatError(f"line {len(lines) + 1}: header declares {n} frames, found {len(lines) - 1} data lines")
    frames = np.empty((n, dim))
    for i in range(n):
        tokens = lines[i + 1].split()
        if len(tokens) != dim:
            raise EmbeddingFormatError(f"line {i + 2}: expected {dim} values, got {len(tokens)}")
        try:
            frames[i] = [float(t) for t in tokens]
        except ValueError:
            raise EmbeddingFormatError(f"line {i + 2}: non-numeric token in {lines[i + 1]!r}") from None
    label = span = None
    rest = lines[n + 1:]
    if len(rest) > 1:
        raise EmbeddingFormatError(f"line {n + 3}: unexpected trailing content")
    if rest:
        for tok in rest[0].split():
            key, _, value = tok.partition("=")
            if key == "label" and value:
                label = value
            elif key == "span":
                try:
                    a, b = value.split(":")
                    span = (int(a), int(b))
                except ValueError:
                    raise EmbeddingFormatError(f"line {n + 2}: malformed span {tok!r}") from None
            else:
                raise EmbeddingFormatError(f"line {n + 2}: unexpected token {tok!r}")
    try:
        return EmbeddingSequence(frames, label=label, span=span)
    except ValueError as exc:
        raise EmbeddingFormatError(f"line {n + 2}: {exc}") from None


def save_embedding(seq: EmbeddingSequence, path) -> None:
    Path(path).write_text(dumps_embedding(seq), encoding="utf-8", newline="\n")


def load_embedding(path) -> EmbeddingSequence:
    return loads_embedding(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# windowing
# ---------------------------------------------------------------------------

def window_offsets(n_frames: int, spec: WindowSpec) -> list[int]:
    if n_frames < spec.width:
        return [0]
    return list(range(0, n_frames - spec.width + 1, spec.hop))


def pad_to(frames: np.ndarray, width: int) -> np.ndarray:
    """Right-pad with zero frames (or truncate) to exactly ``width`` frames."""
    frames = np.asarray(frames, dtype=np.float64)
    if len(frames) >= width:
        return frames[:width]
    return np.vstack([frames, np.zeros((width - len(frames), frames.shape[1]))])


def windows(seq, spec: WindowSpec) -> list[np.ndarray]:
    """Slice a sequence into W x D windows at hop H; short inputs give one zero-padded window."""
    frames = seq.frames if isinstance(seq, EmbeddingSequence) else np.asarray(seq, dtype=np.float64)
    if len(frames) < spec.width:
        return [pad_to(frames, spec.width)]
    return [frames[o:o + spec.width] for o in window_offsets(len(frames), spec)]


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

_ONSETS = ["b", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
           "br", "gr", "pr", "st", "tr", "ch", "sh"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ei", "io", "oi"]


def make_names(n: int, rng: np.random.Generator) -> list[str]:
    """Distinct pronounceable pseudo-names, e.g. for rare-word keyword classes."""
    names: list[str] = []
    while len(names) < n:
        parts = [str(rng.choice(_ONSETS)) + str(rng.choice(_VOWELS)) for _ in range(int(rng.integers(2, 4)))]
        name = "".join(parts) + str(rng.choice(["", "n", "r", "s", "l"]))
        if name not in names:
            names.append(name)
    return names


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    n_classes: int = 10
    dim: int = 16
    template_len: tuple[int, int] = (12, 16)
    background_len: tuple[int, int] = (4, 16)
    noise_sigma: float = 0.1
    stretch: float = 0.0
    background_sigma: float | None = None
    utterances_per_class: int = 4
    clips_per_class: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 1 or self.dim < 1:
            raise ValueError("n_classes and dim must be positive")
        for name in ("template_len", "background_len"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi or (name == "template_len" and lo < 1):
                raise ValueError(f"{name} must be a nonempty range, got {(lo, hi)}")
        if self.noise_sigma < 0 or (self.background_sigma is not None and self.background_sigma < 0):
            raise ValueError("noise levels must be >= 0")
        if not 0.0 <= self.stretch <= 0.2:
            raise ValueError("stretch must be within [0, 0.2]")
        if self.utterances_per_class < 1 or self.clips_per_class < 1:
            raise ValueError("need at least one utterance and one clip per class")

    @property
    def bg_sigma(self) -> float:
        # default: background frames carry a quarter of a template frame's energy
        return 0.5 / np.sqrt(self.dim) if self.background_sigma is None else self.background_sigma


@dataclass
class SyntheticCorpus:
    spec: SyntheticCorpusSpec | None
    templates: dict[str, np.ndarray]
    utterances: dict[str, EmbeddingSequence]
    clips: dict[str, list[np.ndarray]]
    classes: list[str] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return next(iter(self.utterances.values())).dim

    @cached_property
    def by_class(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {c: [] for c in self.classes}
        for uid, u in self.utterances.items():
            out.setdefault(u.label, []).append(uid)
        return out

    def utterances_of(self, cls: str) -> list[str]:
        return self.by_class.get(cls, [])

    def split(self, n_utterances: int, n_clips: int) -> tuple["SyntheticCorpus", "SyntheticCorpus"]:
        """Split every class's instances into a leading part and a held-out rest (same classes)."""
        def part(su: slice, sc: slice) -> SyntheticCorpus:
            utts = {u: self.utterances[u] for c in self.classes for u in self.utterances_of(c)[su]}
            return SyntheticCorpus(self.spec, self.templates, utts,
                                   {c: self.clips[c][sc] for c in self.classes}, classes=list(self.classes))
        return (part(slice(0, n_utterances), slice(0, n_clips)),
                part(slice(n_utterances, None), slice(n_clips, None)))


def make_template(length: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    t = rng.standard_normal((length, dim))
    return t / np.linalg.norm(t, axis=1, keepdims=True)


def template_instance(template: np.ndarray, sigma: float, stretch: float,
                      rng: np.random.Generator) -> np.ndarray:
    """Jittered copy of a template; time-stretch by frame repetition/deletion."""
    inst = template
    if stretch > 0:
        L = len(template)
        new_len = max(1, int(round(L * rng.uniform(1.0 - stretch, 1.0 + stretch))))
        inst = template[(np.arange(new_len) * L) // new_len]
    if sigma > 0:
        inst = inst + sigma * rng.standard_normal(inst.shape)
    return inst.copy()


def generate_corpus(spec: SyntheticCorpusSpec) -> SyntheticCorpus:
    rng = substream(spec.seed, "corpus")
    names = make_names(spec.n_classes, rng)
    templates, utterances, clips = {}, {}, {}
    for cls in names:
        L = int(rng.integers(spec.template_len[0], spec.template_len[1] + 1))
        templates[cls] = make_template(L, spec.dim, rng)
    for cls in names:
        tpl = templates[cls]
        for j in range(spec.utterances_per_class):
            inst = template_instance(tpl, spec.noise_sigma, spec.stretch, rng)
            lead, tail = (int(v) for v in rng.integers(spec.background_len[0], spec.background_len[1] + 1, size=2))
            frames = np.vstack([
                spec.bg_sigma * rng.standard_normal((lead, spec.dim)),
                inst,
                spec.bg_sigma * rng.standard_normal((tail, spec.dim)),
            ])
            utterances[f"{cls}-u{j}"] = EmbeddingSequence(frames, label=cls, span=(lead, lead + len(inst)))
        clips[cls] = [template_instance(tpl, spec.noise_sigma, spec.stretch, rng)
                      for _ in range(spec.clips_per_class)]
    return SyntheticCorpus(spec, templates, utterances, clips, classes=list(names))


def save_corpus(corpus: SyntheticCorpus, root) -> dict:
    """Write EMB v1 files plus ``manifest.json``; returns the manifest."""
    root = Path(root)
    manifest = {"classes": list(corpus.classes), "dim": corpus.dim, "clips": [], "utterances": []}
    for cls in corpus.classes:
        (root / "clips" / cls).mkdir(parents=True, exist_ok=True)
        for i, clip in enumerate(corpus.clips[cls]):
            rel = f"clips/{cls}/{i}.emb"
            save_embedding(EmbeddingSequence(clip, label=cls), root / rel)
            manifest["clips"].append({"path": rel, "label": cls})
    (root / "utterances").mkdir(parents=True, exist_ok=True)
    for uid, utt in corpus.utterances.items():
        rel = f"utterances/{uid}.emb"
        save_embedding(utt, root / rel)
        manifest["utterances"].append({"id": uid, "path": rel, "label": utt.label, "span": list(utt.span)})
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def load_corpus(root) -> SyntheticCorpus:
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    clips: dict[str, list[np.ndarray]] = {c: [] for c in manifest["classes"]}
    for entry in manifest["clips"]:
        clips[entry["label"]].append(load_embedding(root / entry["path"]).frames)
    utts = {e["id"]: load_embedding(root / e["path"]) for e in manifest["utterances"]}
    return SyntheticCorpus(None, {}, utts, clips, classes=list(manifest["classes"]))
