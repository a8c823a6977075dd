"""Training loop, evaluation, and the experiment harness.

Batches are whole conversations: the encoder runs a recurrence plus attention
over each conversation, so utterance-level batching would cut sequences
apart. Each optimizer step pairs a slice of shuffled labeled conversations
with a proportionally sized draw of unlabeled conversations whose speaker
labels feed the adversarial branch (transductive: evaluation-side inputs are
seen, their emotion labels never are).

Two independent RNG streams per epoch keep runs comparable: the labeled
shuffle stream is untouched by whether (or how much) unlabeled data is
drawn, so a lam=0 run walks exactly the same labeled batches as the plain
supervised baseline.
"""

from __future__ import annotations

import csv
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field, replace

import numpy as np

from .data import (
    Corpus,
    final_session,
    session_subset,
    split_by_sessions,
    ts_split_spec,
    weighted_accuracy,
)
from .model import DannModel, ModelConfig, combined_loss, init_model, predict
from .tensor import AdamState, Tape, adam_step, backward

__all__ = [
    "TrainConfig",
    "EpochMetrics",
    "MetricsRecord",
    "EvalResult",
    "ExperimentSpec",
    "ExperimentResult",
    "train",
    "evaluate",
    "run_experiment",
    "lambda_sweep",
]

DEFAULT_SETTINGS = ["TS_1234", "TS_123", "TS_134", "TS_234", "TS_23"]


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 20
    learning_rate: float = 1e-4
    l2_weight: float = 1e-5
    lam: float = 1.0
    seed: int = 0
    log_interval: int = 1

    def __post_init__(self):
        for name in ("epochs", "batch_size", "log_interval"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.l2_weight < 0 or self.lam < 0:
            raise ValueError("l2_weight and lam must be non-negative")


@dataclass
class EpochMetrics:
    """Per-logged-epoch snapshot; losses are means over the epoch's steps."""

    epoch: int
    l_y: float
    l_d: float
    train_wa: float
    eval_wa: float | None
    steps: int


@dataclass
class MetricsRecord:
    setting: str
    lam: float
    seed: int
    epoch: int
    l_y: float
    l_d: float
    train_wa: float
    eval_wa: float | None


@dataclass
class EvalResult:
    wa: float
    per_class_accuracy: np.ndarray
    confusion: np.ndarray
    n: int


def _corpus_wa(model: DannModel, corpus: Corpus) -> float:
    preds = []
    golds = []
    for conv in corpus.conversations:
        preds.append(predict(conv, model))
        for k, u in enumerate(conv.utterances):
            if u.emotion is None:
                raise ValueError(
                    f"utterance {k} of conversation {conv.id!r} has no emotion label"
                )
            golds.append(u.emotion)
    return weighted_accuracy(np.concatenate(preds), np.asarray(golds))


def build_domain_index(labeled: Corpus, unlabeled: Corpus | None) -> dict[str, int]:
    """Stable speaker -> class-index map over both corpora (sorted ids)."""
    speakers = set(labeled.speakers)
    if unlabeled is not None:
        speakers |= set(unlabeled.speakers)
    return {s: i for i, s in enumerate(sorted(speakers))}


def train(model: DannModel, labeled: Corpus, unlabeled: Corpus | None,
          cfg: TrainConfig, eval_corpus: Corpus | None = None,
          domain_branch: bool = True, domain_index: dict[str, int] | None = None,
          verbose: bool = False) -> tuple[DannModel, list[EpochMetrics]]:
    """Train in place; returns the model and per-logged-epoch metrics.

    ``cfg.lam`` overrides the model's reversal strength for the run. With
    ``domain_branch=False`` the speaker branch is never evaluated (the plain
    supervised baseline); that requires lam == 0.
    """
    if labeled.n_conversations == 0:
        raise ValueError("labeled corpus is empty")
    if cfg.lam > 0 and not domain_branch:
        raise ValueError("lam > 0 requires the domain branch")
    model.grl.lam = cfg.lam
    model.config.lam = cfg.lam

    if domain_index is None:
        domain_index = build_domain_index(labeled, unlabeled)
    if domain_branch and len(domain_index) > model.config.k_domains:
        raise ValueError(
            f"{len(domain_index)} speakers exceed k_domains={model.config.k_domains}"
        )

    labeled_convs = labeled.conversations
    unlabeled_convs = unlabeled.conversations if unlabeled is not None else []
    n_c = len(labeled_convs)
    m_c = len(unlabeled_convs)
    steps_per_epoch = math.ceil(n_c / cfg.batch_size)

    params = model.parameters()
    opt = AdamState.init(params, learning_rate=cfg.learning_rate)

    history: list[EpochMetrics] = []
    for epoch in range(1, cfg.epochs + 1):
        shuffle_rng = np.random.default_rng([cfg.seed, epoch])
        draw_rng = np.random.default_rng([cfg.seed, epoch, 1])
        order = shuffle_rng.permutation(n_c)
        ly_total = 0.0
        ld_total = 0.0
        for step in range(steps_per_epoch):
            chunk = order[step * cfg.batch_size:(step + 1) * cfg.batch_size]
            batch = [labeled_convs[i] for i in chunk]
            if domain_branch and cfg.lam > 0 and m_c > 0:
                want = round(len(batch) * m_c / n_c)
                size = min(max(1, want), m_c)
                drawn = draw_rng.choice(m_c, size=size, replace=False)
                ubatch = [unlabeled_convs[i] for i in drawn]
            else:
                ubatch = []
            with Tape() as tape:
                for p in params.values():
                    tape.watch(p)
                bd = combined_loss(batch, ubatch, model, domain_index,
                                   l2_weight=cfg.l2_weight, domain_branch=domain_branch)
            grads_by_tensor = backward(tape, bd.objective)
            grads = {name: grads_by_tensor[p] for name, p in params.items()}
            adam_step(params, grads, opt)
            ly_total += bd.l_y
            ld_total += bd.l_d
        if epoch % cfg.log_interval == 0 or epoch == cfg.epochs:
            metrics = EpochMetrics(
                epoch=epoch,
                l_y=ly_total / steps_per_epoch,
                l_d=ld_total / steps_per_epoch,
                train_wa=_corpus_wa(model, labeled),
                eval_wa=_corpus_wa(model, eval_corpus) if eval_corpus is not None else None,
                steps=steps_per_epoch,
            )
            history.append(metrics)
            if verbose:
                ev = "" if metrics.eval_wa is None else f" eval_wa={metrics.eval_wa:.2f}"
                print(
                    f"epoch {epoch}/{cfg.epochs} L_y={metrics.l_y:.4f} "
                    f"L_d={metrics.l_d:.4f} train_wa={metrics.train_wa:.2f}{ev}",
                    file=sys.stderr,
                )
    return model, history


def evaluate(model: DannModel, test: Corpus) -> EvalResult:
    """Weighted accuracy, per-class accuracy, and a gold-by-predicted
    confusion matrix over every utterance of the corpus."""
    k = model.config.k_emotions
    confusion = np.zeros((k, k), dtype=np.int64)
    for conv in test.conversations:
        preds = predict(conv, model)
        for u, p in zip(conv.utterances, preds):
            if u.emotion is None:
                raise ValueError(
                    f"conversation {conv.id!r} has an unlabeled utterance; "
                    "evaluation needs gold labels"
                )
            confusion[u.emotion, p] += 1
    n = int(confusion.sum())
    if n == 0:
        raise ValueError("test corpus is empty")
    gold_counts = confusion.sum(axis=1)
    with np.errstate(invalid="ignore"):
        per_class = np.where(gold_counts > 0,
                             100.0 * np.diag(confusion) / np.maximum(gold_counts, 1),
                             np.nan)
    wa = 100.0 * float(np.trace(confusion)) / n
    return EvalResult(wa=wa, per_class_accuracy=per_class, confusion=confusion, n=n)


# ---------------------------------------------------------------------------
# Experiment harness


@dataclass
class ExperimentSpec:
    """A grid of (setting, lambda, seed) runs on one corpus.

    ``model`` holds ModelConfig overrides (d, n_heads, k_emotions, ...);
    feature dims and the speaker count come from the corpus, and lam/seed
    are filled per run.
    """

    settings: list[str] = field(default_factory=lambda: list(DEFAULT_SETTINGS))
    lambdas: list[float] = field(default_factory=lambda: [0.0, 1.0])
    seeds: list[int] = field(default_factory=lambda: list(range(20)))
    train: TrainConfig = field(default_factory=TrainConfig)
    model: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.settings or not self.lambdas or not self.seeds:
            raise ValueError("settings, lambdas, and seeds must be non-empty")
        if any(lam < 0 for lam in self.lambdas):
            raise ValueError("lambda values must be non-negative")


@dataclass
class ExperimentResult:
    settings: list[str]
    lambdas: list[float]
    was: dict[tuple[str, float], list[float]]
    records: list[MetricsRecord]

    def mean_wa(self, setting: str, lam: float) -> float:
        return float(np.mean(self.was[(setting, lam)]))

    def std_wa(self, setting: str, lam: float) -> float:
        return float(np.std(self.was[(setting, lam)]))

    def gap(self, setting: str, lam_a: float = 1.0, lam_b: float = 0.0) -> float:
        """Mean WA difference between two lambda variants in one setting."""
        return self.mean_wa(setting, lam_a) - self.mean_wa(setting, lam_b)


def _atomic_write(path: str, write_fn) -> None:
    out_dir = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=out_dir, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            write_fn(f)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_runs_csv(path: str, records: list[MetricsRecord]) -> None:
    def go(f):
        w = csv.writer(f)
        w.writerow(["setting", "lambda", "seed", "epoch", "L_y", "L_d",
                    "train_wa", "eval_wa"])
        for r in records:
            w.writerow([
                r.setting, f"{r.lam:g}", r.seed, r.epoch, repr(r.l_y), repr(r.l_d),
                repr(r.train_wa), "" if r.eval_wa is None else repr(r.eval_wa),
            ])
    _atomic_write(path, go)


def _summary_cells(result: ExperimentResult) -> list[list[str]]:
    rows = [["lambda"] + list(result.settings)]
    for lam in result.lambdas:
        row = [f"{lam:g}"]
        for setting in result.settings:
            row.append(f"{result.mean_wa(setting, lam):.2f}"
                       f"±{result.std_wa(setting, lam):.2f}")
        rows.append(row)
    return rows


def _write_summary(result: ExperimentResult, csv_path: str, txt_path: str) -> None:
    cells = _summary_cells(result)

    def go_csv(f):
        csv.writer(f).writerows(cells)

    def go_txt(f):
        widths = [max(len(row[j]) for row in cells) for j in range(len(cells[0]))]
        for row in cells:
            f.write("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
            f.write("\n")

    _atomic_write(csv_path, go_csv)
    _atomic_write(txt_path, go_txt)


def run_experiment(spec: ExperimentSpec, corpus: Corpus, out_dir: str | None = None,
                   verbose: bool = True) -> ExperimentResult:
    """Run the (setting x lambda x seed) grid and aggregate eval WA.

    For each setting the named sessions are the labeled training data, every
    other session is the unlabeled pool, and evaluation is on the corpus's
    final session. Writes runs.csv, summary.csv, and summary.txt to
    ``out_dir`` when given.
    """
    if corpus.n_conversations == 0:
        raise ValueError("corpus is empty")
    sessions = corpus.sessions
    fin = final_session(corpus)
    k_emotions = spec.model.get("k_emotions", corpus.k_emotions_observed)
    if k_emotions is None:
        raise ValueError("corpus has no emotion labels and no k_emotions override")

    was: dict[tuple[str, float], list[float]] = {}
    records: list[MetricsRecord] = []
    total = len(spec.settings) * len(spec.lambdas) * len(spec.seeds)
    done = 0
    for setting in spec.settings:
        split = ts_split_spec(setting, sessions)
        train_c, rest_c = split_by_sessions(corpus, split)
        eval_c = session_subset(rest_c, {fin})
        if eval_c.n_conversations == 0:
            raise ValueError(f"setting {setting}: no conversations in session {fin}")
        domain_index = build_domain_index(train_c, rest_c)
        for lam in spec.lambdas:
            scores = []
            for seed in spec.seeds:
                base = {
                    "d_a": corpus.d_a, "d_t": corpus.d_t,
                    "k_emotions": k_emotions, "k_domains": len(domain_index),
                }
                base.update(spec.model)
                base.update(lam=lam, seed=seed)
                model = init_model(ModelConfig(**base))
                cfg = replace(spec.train, lam=lam, seed=seed)
                model, hist = train(model, train_c, rest_c, cfg, eval_corpus=eval_c,
                                    domain_index=domain_index)
                wa = _corpus_wa(model, eval_c)
                scores.append(wa)
                records.extend(
                    MetricsRecord(setting=setting, lam=lam, seed=seed, epoch=h.epoch,
                                  l_y=h.l_y, l_d=h.l_d, train_wa=h.train_wa,
                                  eval_wa=h.eval_wa)
                    for h in hist
                )
                done += 1
                if verbose:
                    print(f"[{done}/{total}] {setting} lam={lam:g} seed={seed} "
                          f"eval WA {wa:.2f}", file=sys.stderr)
            was[(setting, lam)] = scores

    result = ExperimentResult(settings=list(spec.settings), lambdas=list(spec.lambdas),
                              was=was, records=records)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _write_runs_csv(os.path.join(out_dir, "runs.csv"), records)
        _write_summary(result, os.path.join(out_dir, "summary.csv"),
                       os.path.join(out_dir, "summary.txt"))
    return result


def lambda_sweep(values, corpus: Corpus, setting: str, seeds=None,
                 train_cfg: TrainConfig | None = None, model_overrides: dict | None = None,
                 out_dir: str | None = None, verbose: bool = True) -> dict[float, tuple[float, float]]:
    """Train one model per (lambda, seed) on a single setting.

    Returns {lambda: (mean WA, std WA)} and additionally writes sweep.csv
    (plus the harness's runs/summary files) when ``out_dir`` is given.
    """
    spec = ExperimentSpec(settings=[setting], lambdas=list(values),
                          seeds=list(seeds) if seeds is not None else [0, 1, 2],
                          train=train_cfg if train_cfg is not None else TrainConfig(),
                          model=dict(model_overrides) if model_overrides else {})
    result = run_experiment(spec, corpus, out_dir=out_dir, verbose=verbose)
    table = {lam: (result.mean_wa(setting, lam), result.std_wa(setting, lam))
             for lam in spec.lambdas}
    if out_dir is not None:
        def go(f):
            w = csv.writer(f)
            w.writerow(["lambda", "mean_wa", "std_wa"])
            for lam in spec.lambdas:
                mean, std = table[lam]
                w.writerow([f"{lam:g}", f"{mean:.4f}", f"{std:.4f}"])
        _atomic_write(os.path.join(out_dir, "sweep.csv"), go)
    return table
