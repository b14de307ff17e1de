"""
Spotting a keyword in a stream of embeddings
============================================

Train a Siamese agent briefly, plant a keyword inside an utterance and watch
the per-window scores rise and fall as the window slides across it.
"""
import numpy as np

from kwspot import SupportSet, SyntheticCorpusSpec, TrainConfig, WindowSpec, generate_corpus, spot, train

# A small synthetic corpus: 10 keyword classes, 16-dim frames.
corpus = generate_corpus(SyntheticCorpusSpec(n_classes=10, utterances_per_class=8, clips_per_class=8, seed=0))
train_part, held_out = corpus.split(4, 4)
print("classes:", ", ".join(corpus.classes))

# Three thousand alternating positive/negative pairs is enough for a visible effect.
agent = train("siamese", train_part, TrainConfig(steps=3000, seed=0)).params

# One held-out support clip per class is the whole "training data" at inference time.
spec = WindowSpec(width=16, hop=4)
supports = SupportSet.from_clips({c: held_out.clips[c][:1] for c in held_out.classes}, spec)

utterance = held_out.utterances[held_out.utterances_of(corpus.classes[3])[0]]
print(f"\nutterance of {utterance.label!r}: {len(utterance)} frames, keyword at frames {utterance.span}")

result = spot(utterance, supports, spec, agent, threshold=0.8)

# Per-window best score for the true class and for the strongest impostor.
by_window = {}
for offset, cls, _, score in result.trace:
    by_window.setdefault(offset, {}).setdefault(cls, []).append(score)
print("\nwindow  true-class  best-other")
for offset, scores in by_window.items():
    true = max(scores[utterance.label])
    other = max(max(v) for c, v in scores.items() if c != utterance.label)
    bar = "#" * int(max(0.0, true) * 30)
    print(f"{offset:>6}  {true:>10.3f}  {other:>10.3f}  {bar}")

print("\nspotted at 0.8:", [(s.class_id, round(s.score, 3)) for s in result.keywords.spotted])
print("correct keyword found:", utterance.label in result.keywords)
