"""
Training the four agents
========================

Each agent learns from a stream of pairs that strictly alternates between a
matching pair (support clip, window over the same keyword) and a mismatched
one. Siamese and Prototypical agents use a contrastive loss on Euclidean
distance; the Relation and Matching agents learn a probability with
cross-entropy.
"""
import numpy as np

from kwspot import SyntheticCorpusSpec, TrainConfig, generate_corpus, train
from kwspot.agents import AgentParams

corpus = generate_corpus(SyntheticCorpusSpec(n_classes=10, seed=1))

for kind in ("siamese", "proto", "relation", "matching"):
    print(f"{kind:>9}: {AgentParams.init(kind, corpus.dim).parameter_count():>6} parameters at D={corpus.dim}")

print("\nmean loss per 500-step block")
for kind in ("siamese", "relation", "matching"):
    losses = train(kind, corpus, TrainConfig(steps=3000, seed=0)).losses
    blocks = np.array(losses).reshape(-1, 500).mean(axis=1)
    print(f"{kind:>9}: " + "  ".join(f"{b:.3f}" for b in blocks))

# With 512-dim frames the encoder still stays small.
print("\nat D=512:", {k: AgentParams.init(k, 512).parameter_count() for k in ("siamese", "relation", "matching")})
