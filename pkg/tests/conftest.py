import numpy as np
import pytest

from emodann import data as D


@pytest.fixture(scope="session")
def reference_corpus():
    """Five sessions matching the reference corpus's conversation and
    utterance counts (28/30/32/30/31 dialogues, 1085/1023/1151/1031/1241
    utterances), two speakers per session."""
    session_convs = [28, 30, 32, 30, 31]
    session_utts = [1085, 1023, 1151, 1031, 1241]
    rng = np.random.default_rng(99)
    conversations = []
    for s, (n_conv, n_utt) in enumerate(zip(session_convs, session_utts), start=1):
        base = n_utt // n_conv
        extra = n_utt - base * n_conv
        for c in range(n_conv):
            length = base + (1 if c < extra else 0)
            speaker = f"S{s}_{'F' if c % 2 == 0 else 'M'}"
            utts = [D.Utterance(acoustic=rng.standard_normal(2),
                                lexical=rng.standard_normal(2),
                                speaker_id=speaker, session_id=s,
                                emotion=int(rng.integers(4)))
                    for _ in range(length)]
            conversations.append(
                D.Conversation(id=f"S{s}_C{c:03d}", session_id=s, utterances=utts))
    return D.Corpus(conversations)
