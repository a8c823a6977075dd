"""Corpus generation, serialization, splitting, and metric tests."""

import numpy as np
import pytest

from emodann import data as D


def small_cfg(**kw):
    base = dict(n_sessions=3, speakers_per_session=2, conversations_per_session=4,
                utterances_min=3, utterances_max=5, k_emotions=4, d_a=6, d_t=4,
                emotion_signal_strength=1.0, speaker_shift_strength=2.0,
                noise_std=0.5, stickiness=0.7, seed=0)
    base.update(kw)
    return D.SynthConfig(**base)


def corpora_equal(a, b):
    if a.n_conversations != b.n_conversations:
        return False
    for ca, cb in zip(a.conversations, b.conversations):
        if (ca.id, ca.session_id) != (cb.id, cb.session_id) or len(ca) != len(cb):
            return False
        for ua, ub in zip(ca.utterances, cb.utterances):
            if ua.speaker_id != ub.speaker_id or ua.emotion != ub.emotion:
                return False
            if ua.acoustic.tobytes() != ub.acoustic.tobytes():
                return False
            if ua.lexical.tobytes() != ub.lexical.tobytes():
                return False
    return True


# ---------------------------------------------------------------------------
# Synthetic generation


def test_generation_is_deterministic():
    cfg = small_cfg()
    assert corpora_equal(D.generate_synthetic_corpus(cfg),
                         D.generate_synthetic_corpus(cfg))


def test_generation_seed_changes_corpus():
    a = D.generate_synthetic_corpus(small_cfg(seed=0))
    b = D.generate_synthetic_corpus(small_cfg(seed=1))
    assert not corpora_equal(a, b)


def test_generated_structure():
    cfg = small_cfg()
    corpus = D.generate_synthetic_corpus(cfg)
    assert corpus.n_conversations == 3 * 4
    assert corpus.sessions == [1, 2, 3]
    assert len(corpus.speakers) == 6
    assert corpus.d_a == 6 and corpus.d_t == 4
    assert corpus.k_emotions_observed == 4
    for conv in corpus.conversations:
        assert 3 <= len(conv) <= 5
        assert conv.speaker_id.startswith(f"S{conv.session_id}_")
        for u in conv.utterances:
            assert 0 <= u.emotion < 4


def test_stickiness_one_freezes_emotion():
    corpus = D.generate_synthetic_corpus(small_cfg(stickiness=1.0))
    for conv in corpus.conversations:
        emotions = {u.emotion for u in conv.utterances}
        assert len(emotions) == 1


def test_stickiness_zero_mixes_emotions():
    corpus = D.generate_synthetic_corpus(small_cfg(
        stickiness=0.0, utterances_min=12, utterances_max=12))
    varied = sum(len({u.emotion for u in c.utterances}) > 1
                 for c in corpus.conversations)
    assert varied >= corpus.n_conversations - 1


def test_zero_shift_class_means_agree_across_speakers():
    # with the speaker nuisance disabled, per-speaker class means differ only
    # by sampling noise: rms deviation within 3 * noise_std * sqrt(1/na + 1/nb)
    cfg = small_cfg(n_sessions=2, conversations_per_session=10,
                    utterances_min=8, utterances_max=10,
                    speaker_shift_strength=0.0, noise_std=0.5)
    corpus = D.generate_synthetic_corpus(cfg)
    by_speaker_emotion = {}
    for conv in corpus.conversations:
        for u in conv.utterances:
            key = (u.speaker_id, u.emotion)
            by_speaker_emotion.setdefault(key, []).append(
                np.concatenate([u.acoustic, u.lexical]))
    speakers = corpus.speakers
    for emotion in range(cfg.k_emotions):
        groups = [(np.mean(by_speaker_emotion[(s, emotion)], axis=0),
                   len(by_speaker_emotion[(s, emotion)]))
                  for s in speakers if (s, emotion) in by_speaker_emotion]
        for i in range(len(groups)):
            for j in range(i + 1, len(groups)):
                (ma, na), (mb, nb) = groups[i], groups[j]
                rms = np.sqrt(np.mean((ma - mb) ** 2))
                assert rms <= 3 * cfg.noise_std * np.sqrt(1 / na + 1 / nb)


def test_shift_strength_only_changes_offsets():
    # class means, emotion sequences, and noise are shared across shift values
    a = D.generate_synthetic_corpus(small_cfg(speaker_shift_strength=0.0))
    b = D.generate_synthetic_corpus(small_cfg(speaker_shift_strength=4.0))
    for ca, cb in zip(a.conversations, b.conversations):
        assert [u.emotion for u in ca.utterances] == [u.emotion for u in cb.utterances]
        assert len(ca) == len(cb)
    # same speaker, same emotion, same position: difference is a constant offset
    diffs = {}
    for ca, cb in zip(a.conversations, b.conversations):
        sp = ca.speaker_id
        for ua, ub in zip(ca.utterances, cb.utterances):
            delta = ub.acoustic - ua.acoustic
            if sp in diffs:
                assert np.allclose(delta, diffs[sp], atol=1e-9)
            else:
                diffs[sp] = delta


def test_speaker_probe_properties():
    # speaker identity must be linearly readable at nonzero shift and
    # unreadable at zero shift; this is what makes the adversarial branch
    # meaningful. The corpus is large and weakly sticky so that per-speaker
    # emotion histograms converge: otherwise the probe reads speaker identity
    # off chance emotion-mix differences rather than the speaker offsets.
    from sklearn.linear_model import LogisticRegression

    def probe_accuracy(shift):
        cfg = small_cfg(n_sessions=5, conversations_per_session=30,
                        utterances_min=8, utterances_max=14, stickiness=0.5,
                        speaker_shift_strength=shift, noise_std=1.0, seed=3)
        corpus = D.generate_synthetic_corpus(cfg)
        X, y = [], []
        speaker_ids = {s: i for i, s in enumerate(corpus.speakers)}
        for conv in corpus.conversations:
            for u in conv.utterances:
                X.append(np.concatenate([u.acoustic, u.lexical]))
                y.append(speaker_ids[u.speaker_id])
        X, y = np.array(X), np.array(y)
        rng = np.random.default_rng(0)
        order = rng.permutation(len(X))
        cut = int(0.8 * len(X))
        tr, te = order[:cut], order[cut:]
        clf = LogisticRegression(max_iter=2000).fit(X[tr], y[tr])
        return 100.0 * clf.score(X[te], y[te])

    chance = 100.0 / 10
    assert probe_accuracy(3.0) > chance + 20
    assert probe_accuracy(0.0) <= chance + 5


def test_synth_config_validation():
    with pytest.raises(ValueError, match="utterances_min"):
        small_cfg(utterances_min=6, utterances_max=5)
    with pytest.raises(ValueError, match="positive integer"):
        small_cfg(n_sessions=0)
    with pytest.raises(ValueError, match="non-negative"):
        small_cfg(noise_std=-1.0)
    with pytest.raises(ValueError, match="stickiness"):
        small_cfg(stickiness=1.5)


# ---------------------------------------------------------------------------
# JSONL round trip


def test_roundtrip_is_bit_exact(tmp_path):
    corpus = D.generate_synthetic_corpus(small_cfg())
    path = str(tmp_path / "corpus.jsonl")
    D.save_corpus(corpus, path)
    assert corpora_equal(D.load_corpus(path), corpus)


def test_roundtrip_preserves_unlabeled(tmp_path):
    corpus = D.generate_synthetic_corpus(small_cfg(n_sessions=1))
    for conv in corpus.conversations:
        for u in conv.utterances:
            u.emotion = None
    path = str(tmp_path / "unlabeled.jsonl")
    D.save_corpus(corpus, path)
    loaded = D.load_corpus(path)
    assert all(u.emotion is None
               for c in loaded.conversations for u in c.utterances)


def test_save_twice_is_byte_identical(tmp_path):
    corpus = D.generate_synthetic_corpus(small_cfg())
    p1, p2 = str(tmp_path / "a.jsonl"), str(tmp_path / "b.jsonl")
    D.save_corpus(corpus, p1)
    D.save_corpus(corpus, p2)
    assert open(p1, "rb").read() == open(p2, "rb").read()


def write_lines(tmp_path, *lines):
    path = str(tmp_path / "bad.jsonl")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
    return path


GOOD = ('{"id":"c1","session":1,"speaker":"S1_P0","utterances":'
        '[{"acoustic":[0.1,0.2],"lexical":[0.3],"emotion":1}]}')


def test_load_errors_name_line_and_field(tmp_path):
    with pytest.raises(D.CorpusFormatError, match="line 2.*invalid JSON"):
        D.load_corpus(write_lines(tmp_path, GOOD, "{not json"))
    with pytest.raises(D.CorpusFormatError, match="line 1.*'speaker'"):
        D.load_corpus(write_lines(
            tmp_path, '{"id":"c1","session":1,"utterances":[]}'))
    with pytest.raises(D.CorpusFormatError, match="line 2.*'utterances'"):
        D.load_corpus(write_lines(
            tmp_path, GOOD, '{"id":"c2","session":1,"speaker":"s","utterances":[]}'))
    with pytest.raises(D.CorpusFormatError, match="line 1.*'emotion'"):
        D.load_corpus(write_lines(
            tmp_path, GOOD.replace('"emotion":1', '"emotion":9')), k_emotions=4)
    with pytest.raises(D.CorpusFormatError, match="'acoustic'"):
        D.load_corpus(write_lines(
            tmp_path, GOOD.replace('"acoustic":[0.1,0.2],', "")))
    with pytest.raises(D.CorpusFormatError, match="finite"):
        D.load_corpus(write_lines(
            tmp_path, GOOD.replace("[0.1,0.2]", '[0.1,"NaN"]')))


def test_emotion_nine_accepted_without_k(tmp_path):
    # range checking only applies when the caller pins k_emotions
    path = write_lines(tmp_path, GOOD.replace('"emotion":1', '"emotion":9'))
    corpus = D.load_corpus(path)
    assert corpus.conversations[0].utterances[0].emotion == 9
    with pytest.raises(D.CorpusFormatError):
        D.load_corpus(path, k_emotions=4)


# ---------------------------------------------------------------------------
# Splits


def test_reference_shaped_split_counts(reference_corpus):
    assert reference_corpus.n_conversations == 151  # 28+30+32+30+31
    assert reference_corpus.n_utterances == 5531

    sessions = reference_corpus.sessions
    train, test = D.split_by_sessions(reference_corpus, D.ts_split_spec("TS_1234", sessions))
    assert train.n_utterances == 4290 and test.n_utterances == 1241
    train, test = D.split_by_sessions(reference_corpus, D.ts_split_spec("TS_123", sessions))
    assert train.n_utterances == 3259 and test.n_utterances == 2272


def test_speaker_disjointness_all_settings(reference_corpus):
    for name in ("TS_1234", "TS_123", "TS_134", "TS_234", "TS_23"):
        train, test = D.split_by_sessions(
            reference_corpus, D.ts_split_spec(name, reference_corpus.sessions))
        assert not set(train.speakers) & set(test.speakers)
        assert train.n_conversations + test.n_conversations <= reference_corpus.n_conversations


def test_split_semantics():
    corpus = D.generate_synthetic_corpus(small_cfg(n_sessions=5))
    spec = D.ts_split_spec("TS_23", corpus.sessions)
    assert sorted(spec.train_sessions) == [2, 3]
    assert sorted(spec.test_sessions) == [1, 4, 5]
    train, test = D.split_by_sessions(corpus, spec)
    assert {c.session_id for c in train.conversations} == {2, 3}
    assert {c.session_id for c in test.conversations} == {1, 4, 5}
    # TS_23 drops nothing here: every session is on one side or the other
    assert train.n_conversations + test.n_conversations == corpus.n_conversations


def test_ts_split_spec_errors():
    with pytest.raises(ValueError, match="TS_123"):
        D.ts_split_spec("ts23", [1, 2, 3])
    with pytest.raises(ValueError, match="repeats"):
        D.ts_split_spec("TS_22", [1, 2, 3])
    with pytest.raises(ValueError, match="absent"):
        D.ts_split_spec("TS_9", [1, 2, 3])
    with pytest.raises(ValueError, match="no test"):
        D.ts_split_spec("TS_123", [1, 2, 3])


def test_split_spec_overlap_rejected():
    with pytest.raises(ValueError, match="overlap"):
        D.SplitSpec(name="x", train_sessions=frozenset({1, 2}),
                    test_sessions=frozenset({2, 3}))


def test_session_subset_and_final_session():
    corpus = D.generate_synthetic_corpus(small_cfg())
    assert D.final_session(corpus) == 3
    sub = D.session_subset(corpus, {2})
    assert {c.session_id for c in sub.conversations} == {2}
    with pytest.raises(ValueError, match="empty"):
        D.final_session(D.Corpus([]))


# ---------------------------------------------------------------------------
# Weighted accuracy


def test_weighted_accuracy_oracle():
    rng = np.random.default_rng(123)
    for _ in range(30):
        n = int(rng.integers(1, 50))
        preds = rng.integers(0, 4, size=n)
        golds = rng.integers(0, 4, size=n)
        correct = sum(int(p == g) for p, g in zip(preds, golds))
        assert D.weighted_accuracy(preds, golds) == pytest.approx(100.0 * correct / n)


def test_weighted_accuracy_edges():
    assert D.weighted_accuracy([1, 2, 3], [1, 2, 3]) == 100.0
    assert D.weighted_accuracy([0, 0, 0, 1], [1, 1, 1, 1]) == 25.0
    with pytest.raises(ValueError, match="mismatch"):
        D.weighted_accuracy([1], [1, 2])
    with pytest.raises(ValueError, match="at least one"):
        D.weighted_accuracy([], [])
