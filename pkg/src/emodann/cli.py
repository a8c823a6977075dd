"""Command line entry point.

Subcommands:

* ``gen --config synth.json --out corpus.jsonl`` - synthesize a corpus
* ``train --config train.json --corpus c.jsonl --out model.json`` - one run
* ``eval --model model.json --corpus c.jsonl --out result.json`` - score it
* ``experiment --config exp.json --out results/`` - the full grid
* ``sweep --config sweep.json --out results/`` - lambda sweep on one setting
* ``gradcheck`` - finite-difference check of every block

Each subcommand reads one JSON config (schemas in the README), ``--seed``
overrides the config's randomness, progress goes to standard error, and
machine artifacts are written to files atomically. Exit codes: 0 success,
1 validation error (bad flags, malformed configs or corpora), 2 runtime
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
import tempfile

from .data import (
    SynthConfig,
    final_session,
    generate_synthetic_corpus,
    load_corpus,
    save_corpus,
    session_subset,
    split_by_sessions,
    ts_split_spec,
)
from .gradcheck import GRADCHECK_TOLERANCE, layer_battery
from .model import ModelConfig, init_model, load_checkpoint, save_checkpoint
from .train import (
    ExperimentSpec,
    TrainConfig,
    build_domain_index,
    evaluate,
    lambda_sweep,
    run_experiment,
    train,
)

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    """argparse defaults to exit code 2 on usage errors; the documented
    contract is 1 for every validation problem."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _load_json(path: str):
    with open(path) as f:
        return json.load(f)


_KEY_ALIASES = {"lambda": "lam"}


def _from_dict(cls, obj, what: str):
    if not isinstance(obj, dict):
        raise ValueError(f"{what} must be a JSON object")
    obj = {_KEY_ALIASES.get(k, k): v for k, v in obj.items()}
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(obj) - known)
    if unknown:
        raise ValueError(f"{what}: unknown keys {unknown}")
    return cls(**obj)


def _atomic_json(path: str, payload) -> None:
    out_dir = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=out_dir, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _corpus_from_config(config: dict, seed: int | None, out_dir: str | None):
    """A config names either an existing corpus file or synth parameters."""
    if "corpus" in config and "synth" in config:
        raise ValueError("config must give either 'corpus' or 'synth', not both")
    if "corpus" in config:
        return load_corpus(config["corpus"])
    synth_obj = dict(config.get("synth", {}))
    if seed is not None:
        synth_obj["seed"] = seed
    synth = _from_dict(SynthConfig, synth_obj, "'synth' section")
    corpus = generate_synthetic_corpus(synth)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        save_corpus(corpus, os.path.join(out_dir, "corpus.jsonl"))
    return corpus


def _prepare_setting(corpus, setting: str):
    split = ts_split_spec(setting, corpus.sessions)
    train_c, rest_c = split_by_sessions(corpus, split)
    eval_c = session_subset(rest_c, {final_session(corpus)})
    return train_c, rest_c, eval_c


def cmd_gen(args) -> int:
    obj = _load_json(args.config)
    if args.seed is not None:
        obj["seed"] = args.seed
    cfg = _from_dict(SynthConfig, obj, "synth config")
    corpus = generate_synthetic_corpus(cfg)
    save_corpus(corpus, args.out)
    print(f"wrote {corpus.n_conversations} conversations "
          f"({corpus.n_utterances} utterances) to {args.out}", file=sys.stderr)
    return 0


def cmd_train(args) -> int:
    config = _load_json(args.config)
    if not isinstance(config, dict) or "setting" not in config:
        raise ValueError("train config needs a 'setting' key (e.g. \"TS_1234\")")
    corpus = load_corpus(args.corpus)
    train_c, rest_c, eval_c = _prepare_setting(corpus, config["setting"])

    cfg = _from_dict(TrainConfig, config.get("train", {}), "'train' section")
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    k_emotions = corpus.k_emotions_observed
    if k_emotions is None:
        raise ValueError("corpus has no emotion labels")
    domain_index = build_domain_index(train_c, rest_c)
    base = {"d_a": corpus.d_a, "d_t": corpus.d_t, "k_emotions": k_emotions,
            "k_domains": len(domain_index)}
    base.update(config.get("model", {}))
    base.update(lam=cfg.lam, seed=cfg.seed)
    model = init_model(ModelConfig(**base))

    model, history = train(model, train_c, rest_c, cfg, eval_corpus=eval_c,
                           domain_index=domain_index, verbose=args.verbose)
    save_checkpoint(model, args.out)
    result = evaluate(model, eval_c)
    print(f"final eval WA {result.wa:.2f} on session {final_session(corpus)}; "
          f"checkpoint at {args.out}", file=sys.stderr)
    if args.metrics is not None:
        rows = [dataclasses.asdict(h) for h in history]
        _atomic_json(args.metrics, rows)
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.model)
    corpus = load_corpus(args.corpus, k_emotions=model.config.k_emotions)
    if args.sessions:
        wanted = [int(tok) for tok in args.sessions.split(",")]
        corpus = session_subset(corpus, wanted)
    result = evaluate(model, corpus)
    payload = {
        "wa": result.wa,
        "n": result.n,
        "per_class_accuracy": [None if math.isnan(v) else v
                               for v in result.per_class_accuracy.tolist()],
        "confusion": result.confusion.tolist(),
    }
    _atomic_json(args.out, payload)
    print(f"WA {result.wa:.2f} over {result.n} utterances; wrote {args.out}",
          file=sys.stderr)
    return 0


def _experiment_spec(config: dict, seed: int | None) -> ExperimentSpec:
    kwargs = {}
    for key in ("settings", "lambdas", "seeds"):
        if key in config:
            kwargs[key] = config[key]
    if "train" in config:
        kwargs["train"] = _from_dict(TrainConfig, config["train"], "'train' section")
    if "model" in config:
        if not isinstance(config["model"], dict):
            raise ValueError("'model' section must be a JSON object")
        kwargs["model"] = config["model"]
    spec = ExperimentSpec(**kwargs)
    if seed is not None:
        spec.seeds = [seed + i for i in range(len(spec.seeds))]
    return spec


def cmd_experiment(args) -> int:
    config = _load_json(args.config)
    if not isinstance(config, dict):
        raise ValueError("experiment config must be a JSON object")
    corpus = _corpus_from_config(config, args.seed, args.out)
    spec = _experiment_spec(config, args.seed)
    run_experiment(spec, corpus, out_dir=args.out)
    print(f"results in {args.out}", file=sys.stderr)
    return 0


def cmd_sweep(args) -> int:
    config = _load_json(args.config)
    if not isinstance(config, dict):
        raise ValueError("sweep config must be a JSON object")
    if "values" not in config or "setting" not in config:
        raise ValueError("sweep config needs 'values' and 'setting' keys")
    corpus = _corpus_from_config(config, args.seed, args.out)
    seeds = config.get("seeds", [0, 1, 2])
    if args.seed is not None:
        seeds = [args.seed + i for i in range(len(seeds))]
    train_cfg = _from_dict(TrainConfig, config.get("train", {}), "'train' section")
    table = lambda_sweep(config["values"], corpus, config["setting"], seeds=seeds,
                         train_cfg=train_cfg, model_overrides=config.get("model"),
                         out_dir=args.out)
    for lam in sorted(table):
        mean, std = table[lam]
        print(f"lambda={lam:g}: WA {mean:.2f} +/- {std:.2f}", file=sys.stderr)
    return 0


def cmd_gradcheck(args) -> int:
    errors = layer_battery(seed=args.seed if args.seed is not None else 0,
                           trials=args.trials)
    ok = True
    for name in sorted(errors):
        err = errors[name]
        status = "ok" if err <= GRADCHECK_TOLERANCE else "FAIL"
        ok = ok and err <= GRADCHECK_TOLERANCE
        print(f"{name:20s} max rel error {err:.3e}  {status}")
    return 0 if ok else 1


def build_parser() -> _Parser:
    parser = _Parser(prog="emodann", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="subcommand", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a synthetic corpus")
    p.add_argument("--config", required=True, help="SynthConfig JSON")
    p.add_argument("--out", required=True, help="output corpus JSONL path")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train one model on one setting")
    p.add_argument("--config", required=True, help="JSON with setting/train/model")
    p.add_argument("--corpus", required=True, help="corpus JSONL path")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--metrics", default=None, help="optional metrics JSON path")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--corpus", required=True, help="corpus JSONL path")
    p.add_argument("--out", required=True, help="result JSON path")
    p.add_argument("--sessions", default=None,
                   help="comma-separated session ids to keep (default: all)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run the setting x lambda x seed grid")
    p.add_argument("--config", required=True, help="experiment JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("sweep", help="sweep lambda values on one setting")
    p.add_argument("--config", required=True, help="sweep JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference check every block")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--trials", type=int, default=10)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        code = e.code
        return code if isinstance(code, int) else 0
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - the documented exit-code contract
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
