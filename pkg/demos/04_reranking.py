"""
Reranking n-best lists with spotted keywords
============================================

A beam of four hypotheses often holds the right rare word below rank 0.
Whenever the spotter flags a keyword, hypotheses containing it move to the
front; nothing else about the beam changes.
"""
from kwspot import Hypothesis, HypothesisList, SyntheticCorpusSpec, generate_corpus, keyword_wer, rerank
from kwspot.rerank import corpus_keyword_wer, make_hypothesis_corpus

beam = HypothesisList("example", [
    Hypothesis(0, ("nautier", "was", "near", "the", "bed")),
    Hypothesis(1, ("natier", "was", "near", "the", "bed")),
    Hypothesis(2, ("nartier", "was", "near", "the", "bed")),
    Hypothesis(3, ("noirtier", "was", "near", "the", "bed")),
])
print("no keyword spotted :", rerank(beam, []).chosen.text)
print("'noirtier' spotted :", rerank(beam, ["noirtier"]).chosen.text)

# A synthetic corpus of beams: half the utterances hide the correct keyword below rank 0.
corpus = generate_corpus(SyntheticCorpusSpec(n_classes=20, utterances_per_class=10, seed=7))
labels = {uid: u.label for uid, u in corpus.utterances.items()}
lists = make_hypothesis_corpus(labels, corpus.classes, seed=7)
print("\nsample beam:")
for h in lists[0]:
    print(f"  {h.rank}: {h.text}")
print("  reference:", " ".join(lists[0].reference))

vanilla = corpus_keyword_wer(lists, None, corpus.classes)
perfect = corpus_keyword_wer(lists, lambda hl: [labels[hl.utt_id]], corpus.classes)
trigger_happy = corpus_keyword_wer(lists, lambda hl: corpus.classes, corpus.classes)
print(f"\nkeyword WER  vanilla {vanilla:.1%}   perfect spotter {perfect:.1%}   "
      f"spot-everything {trigger_happy:.1%}")
# Spotting every class promotes wrong keywords and is worse than doing nothing.
