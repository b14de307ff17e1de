"""Few-shot keyword spotting in continuous embedding streams."""
from .agents import (DEFAULT_THRESHOLDS, KINDS, AgentParams, KeywordList, SpotResult, SpotScore, SupportSet,
                     load_agent, score, score_matching, score_proto, score_relation, score_siamese, spot)
from .embeddings import (EmbeddingSequence, SyntheticCorpus, SyntheticCorpusSpec, WindowSpec, generate_corpus,
                         load_corpus, load_embedding, save_corpus, save_embedding, windows)
from .encoder import EncoderParams, encode_sequence, encode_vector, parameter_count
from .evaluation import (Episode, EvalReport, Tally, random_baseline_exact, random_baseline_f1, run_grid,
                         sample_episode)
from .rerank import Hypothesis, HypothesisList, keyword_wer, rerank, wer_grid
from .training import TrainConfig, TrainingHalted, contrastive_loss, rmsprop_step, score_loss, train

__version__ = "0.1.0"
