import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import naive_spot, random_instance, tiny_agent
from kwspot import autodiff as ad
from kwspot.agents import (DEFAULT_THRESHOLDS, AgentParams, SupportSet, attention, score, score_matching,
                           score_proto, score_relation, score_siamese, spot, write_trace_csv)
from kwspot.embeddings import EmbeddingSequence, SyntheticCorpusSpec, WindowSpec, generate_corpus
from kwspot.encoder import encode_sequence, encode_vector

SPEC8 = WindowSpec(8, 2)
KINDS = ["siamese", "relation", "proto", "matching"]
MAX_KINDS = ["siamese", "relation", "matching"]
seeds = st.integers(0, 2**32 - 1)


def _windows(rng, n, dim=4, width=8):
    return [rng.normal(size=(width, dim)) for _ in range(n)]


class TestSiamese:
    def test_self_similarity(self, rng):
        p = tiny_agent("siamese")
        q = rng.normal(size=(8, 4))
        assert score_siamese(q, [q.copy()], p).score == pytest.approx(1.0, abs=1e-12)

    def test_brute_force_max(self, rng):
        p = tiny_agent("siamese")
        q, sups = rng.normal(size=(8, 4)), _windows(rng, 5)
        eq = encode_vector(q, p.encoder).data
        cos = [eq @ e / np.linalg.norm(eq) / np.linalg.norm(e)
               for e in (encode_vector(s, p.encoder).data for s in sups)]
        got = score_siamese(q, sups, p)
        assert got.support == int(np.argmax(cos))
        assert got.score == pytest.approx(max(cos), abs=1e-12)

    def test_needs_support(self, rng):
        with pytest.raises(ValueError):
            score_siamese(rng.normal(size=(8, 4)), [], tiny_agent("siamese"))


class TestRelation:
    def test_zero_weights_constant(self, rng):
        p = tiny_agent("relation")
        for t in (p.relation.fc1_w, p.relation.fc1_b, p.relation.fc2_w):
            t.data[:] = 0
        p.relation.fc2_b.data[:] = 0.3
        expected = 1 / (1 + np.exp(-0.3))
        for _ in range(5):
            assert score_relation(rng.normal(size=(8, 4)), _windows(rng, 3), p).score == pytest.approx(expected)

    def test_brute_force_max(self, rng):
        p = tiny_agent("relation")
        q, sups = rng.normal(size=(8, 4)), _windows(rng, 4)
        eq = encode_vector(q, p.encoder).data
        r = p.relation
        vals = []
        for s in sups:
            h = np.tanh(np.concatenate([eq, encode_vector(s, p.encoder).data]) @ r.fc1_w.data + r.fc1_b.data)
            vals.append(1 / (1 + np.exp(-(h @ r.fc2_w.data + r.fc2_b.data)[0])))
        assert score_relation(q, sups, p).score == pytest.approx(max(vals), abs=1e-12)


class TestProto:
    def test_k1_equals_siamese(self, rng):
        for seed in range(20):
            p = tiny_agent("proto", seed=seed)
            q, s = rng.normal(size=(8, 4)), rng.normal(size=(8, 4))
            assert score_proto(q, [s], p).score == score_siamese(q, [s], p).score

    def test_identical_supports_equal_k1(self, rng):
        p = tiny_agent("proto")
        q, s = rng.normal(size=(8, 4)), rng.normal(size=(8, 4))
        assert score_proto(q, [s, s, s], p).score == pytest.approx(score_proto(q, [s], p).score, abs=1e-15)

    def test_k3_mean_of_encodings(self, rng):
        p = tiny_agent("proto")
        q, sups = rng.normal(size=(8, 4)), _windows(rng, 3)
        mean = np.mean([encode_vector(s, p.encoder).data for s in sups], axis=0)
        eq = encode_vector(q, p.encoder).data
        expected = eq @ mean / np.linalg.norm(eq) / np.linalg.norm(mean)
        assert score_proto(q, sups, p).score == pytest.approx(expected, abs=1e-12)

    def test_raw_mode_encodes_raw_mean(self, rng):
        p = tiny_agent("proto")
        p.prototype = "raw"
        q, sups = rng.normal(size=(8, 4)), _windows(rng, 3)
        e = encode_vector(np.mean(sups, axis=0), p.encoder).data
        eq = encode_vector(q, p.encoder).data
        assert score_proto(q, sups, p).score == pytest.approx(eq @ e / np.linalg.norm(eq) / np.linalg.norm(e),
                                                              abs=1e-12)


class TestMatching:
    def test_attention_rows_normalised(self, rng):
        p = tiny_agent("matching", window=16)
        a = attention(encode_sequence(rng.normal(size=(16, 4)), p.encoder),
                      encode_sequence(rng.normal(size=(16, 4)), p.encoder)).data
        assert np.all(np.abs(a.sum(axis=1) - 1) <= 1e-12)

    def test_zero_head_scores_half(self, rng):
        p = tiny_agent("matching", window=16)
        for t in p.matching.named().values():
            t.data[:] = 0
        assert score_matching(rng.normal(size=(16, 4)), _windows(rng, 2, width=16), p).score == 0.5

    def test_brute_force_max(self, rng):
        from kwspot.agents import match
        p = tiny_agent("matching")
        q, sups = rng.normal(size=(8, 4)), _windows(rng, 4)
        vals = [match(encode_sequence(q, p.encoder), encode_sequence(s, p.encoder), p.matching).item()
                for s in sups]
        got = score_matching(q, sups, p)
        assert got.score == max(vals) and got.support == vals.index(max(vals))


class TestSpot:
    @pytest.mark.parametrize("kind", KINDS)
    def test_threshold_above_one_is_empty(self, kind, rng):
        params, sups, frames = random_instance(rng, kind)
        assert len(spot(EmbeddingSequence(frames), SupportSet(sups), SPEC8, params, 1.01).keywords) == 0

    @pytest.mark.parametrize("kind", KINDS)
    def test_single_window_reduces_to_score(self, kind, rng):
        params, sups, _ = random_instance(rng, kind)
        q = rng.normal(size=(8, 4))
        res = spot(EmbeddingSequence(q), SupportSet(sups), SPEC8, params, -2.0)
        for cls, ws in sups.items():
            assert res.scores[cls].score == score(q, ws, params).score

    @pytest.mark.parametrize("kind", KINDS)
    def test_matches_naive_loop(self, kind, rng):
        for _ in range(5):
            params, sups, frames = random_instance(rng, kind)
            thr = float(rng.uniform(0.0, 1.0))
            res = spot(EmbeddingSequence(frames), SupportSet(sups), SPEC8, params, thr)
            order, best, trace = naive_spot(frames, sups, 8, 2, params, thr)
            assert res.keywords.classes == order
            assert {c: s.score for c, s in res.scores.items()} == best
            assert res.trace == trace

    def test_default_thresholds(self):
        assert DEFAULT_THRESHOLDS["siamese"] == DEFAULT_THRESHOLDS["proto"] == 0.8
        assert DEFAULT_THRESHOLDS["relation"] == DEFAULT_THRESHOLDS["matching"] == 0.5

    def test_dim_mismatch(self, rng):
        params, sups, _ = random_instance(rng, "siamese")
        with pytest.raises(ValueError, match="dim"):
            spot(EmbeddingSequence(rng.normal(size=(20, 5))), SupportSet(sups), SPEC8, params)

    def test_trace_csv(self, rng, tmp_path):
        params, sups, frames = random_instance(rng, "relation")
        res = spot(EmbeddingSequence(frames), SupportSet(sups), SPEC8, params)
        write_trace_csv(res, tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "window_offset,class_id,support_idx,score"
        k = len(next(iter(sups.values())))
        assert len(lines) - 1 == len(res.offsets) * len(sups) * k

    def test_earliest_best_window_wins(self):
        p = tiny_agent("siamese")
        w = np.random.default_rng(0).normal(size=(8, 4))
        res = spot(EmbeddingSequence(np.vstack([w, w])), SupportSet({"a": [w]}), WindowSpec(8, 8), p)
        assert res.scores["a"].window == 0

    def test_mixed_support_shapes_rejected(self, rng):
        with pytest.raises(ValueError):
            SupportSet({"a": [rng.normal(size=(8, 4))], "b": [rng.normal(size=(9, 4))]})

    def test_planted_keyword_scores_above_095(self, desk_siamese):
        from helpers import DESK_SPEC
        from dataclasses import replace
        clean = generate_corpus(replace(DESK_SPEC, noise_sigma=0.0))
        spec = WindowSpec()
        supports = SupportSet.from_clips({c: [clean.clips[c][0]] for c in clean.classes}, spec)
        for u in clean.utterances.values():
            res = spot(u, supports, spec, desk_siamese.params, 0.8)
            assert res.scores[u.label].score > 0.95
            assert u.label in res.keywords


# ---------------------------------------------------------------------------
# properties, 1,000 random cases each
# ---------------------------------------------------------------------------

@settings(max_examples=1000, deadline=None)
@given(seeds, st.sampled_from(MAX_KINDS))
def test_support_monotonicity(seed, kind):
    rng = np.random.default_rng(seed)
    params = tiny_agent(kind, seed=seed % 7)
    q, sups = rng.normal(size=(8, 4)), _windows(rng, int(rng.integers(1, 4)))
    extra = rng.normal(size=(8, 4))
    assert score(q, sups + [extra], params).score >= score(q, sups, params).score


@settings(max_examples=1000, deadline=None)
@given(seeds, st.sampled_from(KINDS))
def test_window_monotonicity(seed, kind):
    rng = np.random.default_rng(seed)
    params = tiny_agent(kind, seed=seed % 7)
    sups = SupportSet({"a": _windows(rng, 2), "b": _windows(rng, 2)})
    frames = rng.normal(size=(int(rng.integers(8, 20)), 4))
    longer = np.vstack([frames, rng.normal(size=(int(rng.integers(1, 10)), 4))])
    short = spot(EmbeddingSequence(frames), sups, SPEC8, params, trace=False).scores
    long = spot(EmbeddingSequence(longer), sups, SPEC8, params, trace=False).scores
    assert all(long[c].score >= short[c].score for c in short)


@settings(max_examples=1000, deadline=None)
@given(seeds, st.sampled_from(KINDS), st.floats(-1.2, 1.2), st.floats(-1.2, 1.2))
def test_threshold_monotonicity(seed, kind, t1, t2):
    t1, t2 = min(t1, t2), max(t1, t2)
    rng = np.random.default_rng(seed)
    params, sups, frames = random_instance(rng, kind, max_n=3, max_k=2, max_t=16)
    res = spot(EmbeddingSequence(frames), SupportSet(sups), SPEC8, params, t1, trace=False)
    # re-thresholding the same scores: KeywordList(t2) is a subset of KeywordList(t1)
    hi = spot(EmbeddingSequence(frames), SupportSet(sups), SPEC8, params, t2, trace=False)
    assert set(hi.keywords.classes) <= set(res.keywords.classes)


@settings(max_examples=1000, deadline=None)
@given(seeds, st.sampled_from(KINDS))
def test_score_ranges(seed, kind):
    rng = np.random.default_rng(seed)
    params = tiny_agent(kind, seed=seed % 5)
    s = score(rng.normal(size=(8, 4)) * rng.uniform(0.1, 10), _windows(rng, 2), params).score
    if kind in ("siamese", "proto"):
        assert -1.0 <= s <= 1.0
    else:
        assert 0.0 < s < 1.0


@settings(max_examples=1000, deadline=None)
@given(seeds)
def test_proto_equals_siamese_at_k1(seed):
    rng = np.random.default_rng(seed)
    params = tiny_agent("proto", seed=seed % 11)
    q, s = rng.normal(size=(8, 4)), rng.normal(size=(8, 4))
    assert score_proto(q, [s], params).score == score_siamese(q, [s], params).score


def test_agent_param_validation():
    p = tiny_agent("relation")
    with pytest.raises(ValueError):
        AgentParams("siamese", p.encoder, p.relation)
    with pytest.raises(ValueError):
        AgentParams("bogus", p.encoder)


def test_head_parameter_counts():
    assert tiny_agent("relation", dim=512, window=16).parameter_count() - 31_960 == 40 * 64 + 64 + 64 + 1
    m = tiny_agent("matching", dim=512, window=16)
    assert m.parameter_count() - 31_960 == 5 * 128 + 32 * 128 + 128 + 32 + 1
