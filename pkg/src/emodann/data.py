"""Corpus data model, JSONL serialization, session-based splits, weighted
accuracy, and a synthetic multi-speaker corpus generator with controllable
speaker-dependent covariate shift.

A corpus is a list of conversations; a conversation is an ordered non-empty
list of utterances spoken by a single speaker inside one session. Sessions
group a fixed small set of speakers, so session-disjoint splits are speaker
disjoint by construction.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CorpusFormatError",
    "Utterance",
    "Conversation",
    "Corpus",
    "SynthConfig",
    "generate_synthetic_corpus",
    "load_corpus",
    "save_corpus",
    "SplitSpec",
    "ts_split_spec",
    "split_by_sessions",
    "session_subset",
    "final_session",
    "weighted_accuracy",
]


class CorpusFormatError(ValueError):
    """A corpus file or in-memory corpus violates the data contract."""


def _finite_vector(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise CorpusFormatError(f"field '{name}' must be a non-empty vector")
    if not np.all(np.isfinite(arr)):
        raise CorpusFormatError(f"field '{name}' contains non-finite values")
    return arr


@dataclass
class Utterance:
    """One conversational turn: a feature vector per modality, the speaker,
    the session, and an optional emotion class id."""

    acoustic: np.ndarray
    lexical: np.ndarray
    speaker_id: str
    session_id: int
    emotion: int | None = None

    def __post_init__(self):
        self.acoustic = _finite_vector(self.acoustic, "acoustic")
        self.lexical = _finite_vector(self.lexical, "lexical")
        if not isinstance(self.speaker_id, str) or not self.speaker_id:
            raise CorpusFormatError("field 'speaker' must be a non-empty string")
        if not isinstance(self.session_id, (int, np.integer)) or self.session_id < 1:
            raise CorpusFormatError(
                f"field 'session' must be a positive integer, got {self.session_id!r}"
            )
        if self.emotion is not None:
            if not isinstance(self.emotion, (int, np.integer)) or self.emotion < 0:
                raise CorpusFormatError(
                    f"field 'emotion' must be null or a non-negative integer, "
                    f"got {self.emotion!r}"
                )
            self.emotion = int(self.emotion)


@dataclass
class Conversation:
    id: str
    session_id: int
    utterances: list[Utterance]

    def __post_init__(self):
        if not self.utterances:
            raise CorpusFormatError(f"conversation {self.id!r} has no utterances")
        for u in self.utterances:
            if u.session_id != self.session_id:
                raise CorpusFormatError(
                    f"conversation {self.id!r}: utterance session {u.session_id} "
                    f"!= conversation session {self.session_id}"
                )
        d_a = self.utterances[0].acoustic.size
        d_t = self.utterances[0].lexical.size
        for k, u in enumerate(self.utterances):
            if u.acoustic.size != d_a or u.lexical.size != d_t:
                raise CorpusFormatError(
                    f"conversation {self.id!r}: utterance {k} feature dims "
                    f"({u.acoustic.size}, {u.lexical.size}) != ({d_a}, {d_t})"
                )

    def __len__(self) -> int:
        return len(self.utterances)

    @property
    def speaker_id(self) -> str:
        """The conversation's speaker; raises if utterances disagree."""
        speakers = {u.speaker_id for u in self.utterances}
        if len(speakers) != 1:
            raise CorpusFormatError(
                f"conversation {self.id!r} mixes speakers {sorted(speakers)}"
            )
        return self.utterances[0].speaker_id


@dataclass
class Corpus:
    conversations: list[Conversation] = field(default_factory=list)

    @property
    def n_conversations(self) -> int:
        return len(self.conversations)

    @property
    def n_utterances(self) -> int:
        return sum(len(c) for c in self.conversations)

    @property
    def sessions(self) -> list[int]:
        return sorted({c.session_id for c in self.conversations})

    @property
    def speakers(self) -> list[str]:
        return sorted({u.speaker_id for c in self.conversations for u in c.utterances})

    @property
    def d_a(self) -> int | None:
        return self.conversations[0].utterances[0].acoustic.size if self.conversations else None

    @property
    def d_t(self) -> int | None:
        return self.conversations[0].utterances[0].lexical.size if self.conversations else None

    @property
    def k_emotions_observed(self) -> int | None:
        """1 + the largest emotion label present, or None if fully unlabeled."""
        labels = [u.emotion for c in self.conversations for u in c.utterances
                  if u.emotion is not None]
        return max(labels) + 1 if labels else None


# ---------------------------------------------------------------------------
# Synthetic corpus generation


@dataclass
class SynthConfig:
    """Knobs for the synthetic multi-speaker emotion corpus.

    Each emotion class gets a fixed random mean vector per modality; each
    speaker gets a fixed random offset per modality, drawn from a shared
    low-dimensional "speaker coloration" subspace (all speakers differ along
    the same few directions, the way vocal-tract and style variation loads on
    a handful of factors). An utterance is ``signal * class_mean + shift *
    speaker_offset + noise``. Emotion labels follow a sticky Markov chain so
    conversational context is informative. The defaults produce a strong
    speaker shift, i.e. a corpus where speaker identity is easy to read off
    the raw features.
    """

    n_sessions: int = 5
    speakers_per_session: int = 2
    conversations_per_session: int = 10
    utterances_min: int = 8
    utterances_max: int = 14
    k_emotions: int = 4
    d_a: int = 64
    d_t: int = 32
    emotion_signal_strength: float = 1.5
    speaker_shift_strength: float = 5.0
    noise_std: float = 1.0
    stickiness: float = 0.85
    seed: int = 3

    def __post_init__(self):
        for name in ("n_sessions", "speakers_per_session", "conversations_per_session",
                     "utterances_min", "utterances_max", "k_emotions", "d_a", "d_t"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if self.utterances_min > self.utterances_max:
            raise ValueError(
                f"utterances_min {self.utterances_min} > utterances_max {self.utterances_max}"
            )
        for name in ("emotion_signal_strength", "speaker_shift_strength", "noise_std"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.stickiness <= 1.0:
            raise ValueError(f"stickiness must be in [0, 1], got {self.stickiness}")


# Dimension of the shared speaker-coloration subspace. Keeping it small is
# what makes speaker nuisance a learnable structure: suppressing these few
# directions on the training speakers transfers to unseen speakers, because
# their offsets lie in the same span.
_NUISANCE_RANK = 3


def generate_synthetic_corpus(cfg: SynthConfig) -> Corpus:
    """Deterministic function of the config (a fixed seed pins every draw).

    Speaker offsets are always drawn, even at shift strength zero, so
    corpora that differ only in ``speaker_shift_strength`` share their class
    means, emotion sequences, and noise draws.
    """
    rng = np.random.default_rng(cfg.seed)
    k = cfg.k_emotions
    mean_a = rng.standard_normal((k, cfg.d_a))
    mean_t = rng.standard_normal((k, cfg.d_t))
    # basis columns scaled so offsets have unit per-dimension variance
    r = _NUISANCE_RANK
    basis_a = rng.standard_normal((cfg.d_a, r)) / np.sqrt(r)
    basis_t = rng.standard_normal((cfg.d_t, r)) / np.sqrt(r)

    conversations = []
    for session in range(1, cfg.n_sessions + 1):
        speaker_ids = [f"S{session}_P{p}" for p in range(cfg.speakers_per_session)]
        off_a = {s: basis_a @ rng.standard_normal(r) for s in speaker_ids}
        off_t = {s: basis_t @ rng.standard_normal(r) for s in speaker_ids}
        for c in range(cfg.conversations_per_session):
            speaker = speaker_ids[c % cfg.speakers_per_session]
            length = int(rng.integers(cfg.utterances_min, cfg.utterances_max + 1))
            emotions = [int(rng.integers(k))]
            for _ in range(length - 1):
                if rng.random() < cfg.stickiness:
                    emotions.append(emotions[-1])
                else:
                    emotions.append(int(rng.integers(k)))
            utts = []
            for e in emotions:
                a = (cfg.emotion_signal_strength * mean_a[e]
                     + cfg.speaker_shift_strength * off_a[speaker]
                     + cfg.noise_std * rng.standard_normal(cfg.d_a))
                t = (cfg.emotion_signal_strength * mean_t[e]
                     + cfg.speaker_shift_strength * off_t[speaker]
                     + cfg.noise_std * rng.standard_normal(cfg.d_t))
                utts.append(Utterance(acoustic=a, lexical=t, speaker_id=speaker,
                                      session_id=session, emotion=e))
            conversations.append(
                Conversation(id=f"S{session}_C{c:03d}", session_id=session, utterances=utts)
            )
    return Corpus(conversations)


# ---------------------------------------------------------------------------
# JSONL serialization
#
# One conversation per line:
# {"id": str, "session": int, "speaker": str,
#  "utterances": [{"acoustic": [float], "lexical": [float], "emotion": int|null}]}


def _require(obj: dict, key: str, lineno: int):
    if key not in obj:
        raise CorpusFormatError(f"line {lineno}: missing field '{key}'")
    return obj[key]


def load_corpus(path: str, k_emotions: int | None = None) -> Corpus:
    """Read a JSONL corpus, validating per line.

    When ``k_emotions`` is given, emotion labels must lie in
    ``[0, k_emotions)``; otherwise any non-negative integer is accepted.
    """
    conversations = []
    with open(path) as f:
        for lineno, text in enumerate(f, 1):
            text = text.strip()
            if not text:
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as e:
                raise CorpusFormatError(f"line {lineno}: invalid JSON ({e.msg})") from None
            if not isinstance(obj, dict):
                raise CorpusFormatError(f"line {lineno}: expected an object")
            conv_id = _require(obj, "id", lineno)
            if not isinstance(conv_id, str) or not conv_id:
                raise CorpusFormatError(f"line {lineno}: field 'id' must be a non-empty string")
            session = _require(obj, "session", lineno)
            speaker = _require(obj, "speaker", lineno)
            raw_utts = _require(obj, "utterances", lineno)
            if not isinstance(raw_utts, list) or not raw_utts:
                raise CorpusFormatError(
                    f"line {lineno}: field 'utterances' must be a non-empty list"
                )
            try:
                utts = []
                for ru in raw_utts:
                    if not isinstance(ru, dict):
                        raise CorpusFormatError("field 'utterances' entries must be objects")
                    emotion = ru.get("emotion")
                    if emotion is not None:
                        if not isinstance(emotion, int) or isinstance(emotion, bool):
                            raise CorpusFormatError(
                                f"field 'emotion' must be null or an integer, got {emotion!r}"
                            )
                        if emotion < 0:
                            raise CorpusFormatError(
                                f"field 'emotion' must be >= 0, got {emotion}"
                            )
                        if k_emotions is not None and emotion >= k_emotions:
                            raise CorpusFormatError(
                                f"field 'emotion' out of range: {emotion} "
                                f"(expected [0, {k_emotions}))"
                            )
                    utts.append(Utterance(
                        acoustic=_require(ru, "acoustic", lineno),
                        lexical=_require(ru, "lexical", lineno),
                        speaker_id=speaker, session_id=session, emotion=emotion,
                    ))
                conversations.append(
                    Conversation(id=conv_id, session_id=session, utterances=utts)
                )
            except CorpusFormatError as e:
                msg = str(e)
                raise CorpusFormatError(
                    msg if msg.startswith("line ") else f"line {lineno}: {msg}"
                ) from None
    return Corpus(conversations)


def save_corpus(corpus: Corpus, path: str) -> None:
    """Write JSONL atomically; floats keep full round-trip precision, so
    save -> load preserves every feature bit-exactly."""
    out_dir = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=out_dir, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            for conv in corpus.conversations:
                obj = {
                    "id": conv.id,
                    "session": conv.session_id,
                    "speaker": conv.speaker_id,
                    "utterances": [
                        {"acoustic": u.acoustic.tolist(), "lexical": u.lexical.tolist(),
                         "emotion": u.emotion}
                        for u in conv.utterances
                    ],
                }
                f.write(json.dumps(obj, separators=(",", ":"), allow_nan=False))
                f.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# Splits and evaluation


@dataclass(frozen=True)
class SplitSpec:
    """Named session partition: labeled training sessions vs the rest."""

    name: str
    train_sessions: frozenset[int]
    test_sessions: frozenset[int]

    def __post_init__(self):
        train = frozenset(self.train_sessions)
        test = frozenset(self.test_sessions)
        object.__setattr__(self, "train_sessions", train)
        object.__setattr__(self, "test_sessions", test)
        if not train or not test:
            raise ValueError("train and test session sets must be non-empty")
        if train & test:
            raise ValueError(f"train and test sessions overlap: {sorted(train & test)}")


def ts_split_spec(name: str, sessions) -> SplitSpec:
    """Parse a TS_* setting name against the corpus sessions.

    The digits name the labeled training sessions; every other session goes
    to the test side (it serves as the unlabeled pool, and the final session
    is the evaluation set). E.g. over sessions 1..5, "TS_23" trains on
    sessions 2 and 3 with sessions 1, 4, 5 on the test side.
    """
    all_sessions = set(int(s) for s in sessions)
    if not name.startswith("TS_") or not name[3:].isdigit():
        raise ValueError(f"setting name must look like 'TS_123', got {name!r}")
    digits = [int(ch) for ch in name[3:]]
    if len(set(digits)) != len(digits):
        raise ValueError(f"setting {name!r} repeats a session")
    train = frozenset(digits)
    unknown = train - all_sessions
    if unknown:
        raise ValueError(f"setting {name!r} names absent sessions {sorted(unknown)}")
    test = frozenset(all_sessions - train)
    if not test:
        raise ValueError(f"setting {name!r} leaves no test sessions")
    return SplitSpec(name=name, train_sessions=train, test_sessions=test)


def split_by_sessions(corpus: Corpus, spec: SplitSpec) -> tuple[Corpus, Corpus]:
    """Partition conversations by session; sessions in neither set are
    dropped. Verifies that no speaker crosses the split."""
    train = [c for c in corpus.conversations if c.session_id in spec.train_sessions]
    test = [c for c in corpus.conversations if c.session_id in spec.test_sessions]
    train_c, test_c = Corpus(train), Corpus(test)
    shared = set(train_c.speakers) & set(test_c.speakers)
    if shared:
        raise ValueError(f"speakers appear on both sides of {spec.name}: {sorted(shared)}")
    return train_c, test_c


def session_subset(corpus: Corpus, sessions) -> Corpus:
    wanted = {int(s) for s in sessions}
    return Corpus([c for c in corpus.conversations if c.session_id in wanted])


def final_session(corpus: Corpus) -> int:
    """The largest session id: the held-out evaluation session."""
    if not corpus.conversations:
        raise ValueError("corpus is empty")
    return max(c.session_id for c in corpus.conversations)


def weighted_accuracy(predictions, golds) -> float:
    """Overall accuracy as a percentage: 100 * correct / total."""
    preds = np.asarray(predictions).ravel()
    gold = np.asarray(golds).ravel()
    if preds.size != gold.size:
        raise ValueError(f"length mismatch: {preds.size} predictions vs {gold.size} golds")
    if preds.size == 0:
        raise ValueError("weighted_accuracy needs at least one prediction")
    return 100.0 * float(np.count_nonzero(preds == gold)) / preds.size
