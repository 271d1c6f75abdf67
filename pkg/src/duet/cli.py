"""Command-line entry point.

Every command writes under ``--out DIR`` and refreshes ``DIR/manifest.json``
with SHA-256 hashes of the artifacts it produced. Exit codes: 0 ok,
2 usage/config, 3 numerical, 4 environment/backend.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import os
import sys
from contextlib import contextmanager

import yaml

from . import corpus
from .ease import RatingMatrix, fit_ease, save_model
from .evaluation import (EnvironmentExhausted, EvalOptions, evaluate, policy_profiler, raw_history_profiler,
                         textrank_profiler)
from .llmgateway import (Endpoint, LLMClient, ProtocolError, RemoteEmbedder, RetryPolicy, TransportError,
                         set_max_in_flight)
from .optimizer import NumericalError, TrainConfig, load_checkpoint, save_checkpoint, train_loop
from .pipeline import GenerationError, PolicyParams, RemotePolicy, SampleArchive, SoftmaxStrategyPolicy, \
    default_vocabulary, load_vocabulary
from .recommender import BackendError, RemoteEnvironment, SyntheticEnvironment
from .simworld import SimConfig, build_world, load_world, save_world

logger = logging.getLogger("duet")

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_ENV = 0, 2, 3, 4

DEFAULTS = {
    "name": "simworld",
    "scale": [1, 5],
    "data": {"path": None, "schema": "canonical"},
    "curation": {"k_core": 5, "valid_frac": 0.1, "test_frac": 0.1},
    "history": {"user": 30, "item": 30},
    "simworld": {},
    "vocabulary": None,
    "train": {"group_size": 8, "learning_rate": 0.5, "clip_epsilon": 0.2, "kl_coefficient": 0.0,
              "iterations": 200, "epochs_per_batch": 1, "eps_std": 1e-8, "seed": 7,
              "advantage_mode": "std", "env_retries": 2, "workers": 1},
    "eval": {"k_list": [1, 5, 10], "negatives": "random", "n_negatives": 9, "seed": 0,
             "max_instances": None, "ease_lambda": 100.0, "policy": "softmax"},
    "backend": {"kind": "synthetic", "world": None, "model": "default", "max_in_flight": 8,
                "max_retries": 3, "base_delay": 0.5},
    "embedding": {"kind": "hashed", "model": "default"},
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        key = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"{key}: unknown setting")
        if isinstance(base[k], dict) and k not in ("simworld",):
            if not isinstance(v, dict):
                raise ConfigError(f"{key}: expected a mapping")
            out[k] = _merge(base[k], v, key + ".")
        else:
            out[k] = v
    return out


def load_config(path: str | None) -> dict:
    over = {}
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file {path} not found")
        with open(path, encoding="utf-8") as fh:
            over = yaml.safe_load(fh) or {}
        if not isinstance(over, dict):
            raise ConfigError("config root must be a mapping")
    cfg = _merge(DEFAULTS, over)
    cfg["_dir"] = os.path.dirname(os.path.abspath(path)) if path else os.getcwd()
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    lo, hi = cfg["scale"]
    if not (isinstance(lo, int) and isinstance(hi, int) and lo < hi):
        raise ConfigError("scale: expected two increasing integers")
    for key in ("user", "item"):
        if int(cfg["history"][key]) < 1:
            raise ConfigError(f"history.{key}: must be >= 1")
    if int(cfg["curation"]["k_core"]) < 1:
        raise ConfigError("curation.k_core: must be >= 1")
    try:
        TrainConfig(**cfg["train"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train: {exc}") from None
    ev = cfg["eval"]
    if ev["policy"] not in ("softmax", "remote"):
        raise ConfigError("eval.policy: expected softmax or remote")
    try:
        _eval_options(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"eval: {exc}") from None
    if cfg["backend"]["kind"] not in ("synthetic", "remote"):
        raise ConfigError("backend.kind: expected synthetic or remote")
    if cfg["embedding"]["kind"] not in ("hashed", "remote"):
        raise ConfigError("embedding.kind: expected hashed or remote")
    if cfg["vocabulary"] and not os.path.exists(_resolve(cfg, cfg["vocabulary"])):
        raise ConfigError(f"vocabulary: file {cfg['vocabulary']} not found")
    try:
        SimConfig.from_dict(cfg["simworld"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"simworld: {exc}") from None


def _resolve(cfg, path):
    return path if os.path.isabs(path) else os.path.join(cfg["_dir"], path)


def _eval_options(cfg) -> EvalOptions:
    ev = cfg["eval"]
    return EvalOptions(
        history_user=int(cfg["history"]["user"]), history_item=int(cfg["history"]["item"]),
        k_list=tuple(int(k) for k in ev["k_list"]), negatives=ev["negatives"],
        n_negatives=int(ev["n_negatives"]), seed=int(ev["seed"]), max_instances=ev["max_instances"],
        ease_lambda=float(ev["ease_lambda"]), env_retries=int(cfg["train"]["env_retries"]),
    )


# ------------------------------------------------------------------ helpers


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def update_manifest(out: str, paths) -> str:
    mpath = os.path.join(out, "manifest.json")
    manifest = {"artifacts": {}}
    if os.path.exists(mpath):
        with open(mpath, encoding="utf-8") as fh:
            manifest = json.load(fh)
    for p in paths:
        manifest["artifacts"][os.path.relpath(p, out).replace(os.sep, "/")] = _sha256(p)
    manifest["artifacts"] = dict(sorted(manifest["artifacts"].items()))
    with open(mpath, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return mpath


@contextmanager
def output_lock(out: str):
    os.makedirs(out, exist_ok=True)
    lock = os.path.join(out, ".lock")
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(f"{out} is locked by another run (remove {lock} if stale)") from None
    os.close(fd)
    try:
        yield
    finally:
        os.remove(lock)


def _curated_dir(out):
    return os.path.join(out, "curated")


def _load_split(out) -> corpus.SplitDataset:
    d = _curated_dir(out)
    if not os.path.exists(os.path.join(d, "train.jsonl")):
        raise ConfigError(f"no curated data in {d}; run `duet ingest` first")
    return corpus.load_split(d)


def _environment(cfg, out):
    b = cfg["backend"]
    if b["kind"] == "synthetic":
        wpath = _resolve(cfg, b["world"]) if b["world"] else os.path.join(out, "world.json")
        if not os.path.exists(wpath):
            raise ConfigError(f"backend.world: {wpath} not found; run `duet simgen` or set the path")
        return SyntheticEnvironment(load_world(wpath))
    set_max_in_flight(int(b["max_in_flight"]))
    return RemoteEnvironment(_llm_client(cfg), tuple(cfg["scale"]))


def _llm_client(cfg) -> LLMClient:
    b = cfg["backend"]
    retry = RetryPolicy(max_retries=int(b["max_retries"]), base_delay=float(b["base_delay"]))
    return LLMClient(_endpoint(b["model"], "llm"), retry=retry)


def _endpoint(model, kind) -> Endpoint:
    try:
        return Endpoint.from_env(model, kind=kind)
    except TransportError as exc:
        raise ConfigError(str(exc)) from None


def _embedder(cfg):
    e = cfg["embedding"]
    if e["kind"] == "remote":
        return RemoteEmbedder(_endpoint(e["model"], "embed"))
    return None


def _policy(cfg, params: PolicyParams | None = None) -> SoftmaxStrategyPolicy:
    vocab = load_vocabulary(_resolve(cfg, cfg["vocabulary"])) if cfg["vocabulary"] else default_vocabulary()
    return SoftmaxStrategyPolicy(vocab, params)


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


# ----------------------------------------------------------------- commands


def cmd_simgen(cfg, out, args):
    sim = SimConfig.from_dict({"scale": tuple(cfg["scale"]), **cfg["simworld"]})
    world, ds = build_world(sim)
    raw = os.path.join(out, "raw.jsonl")
    wpath = os.path.join(out, "world.json")
    corpus.save(ds, raw)
    save_world(world, wpath)
    print(f"simgen: {len(ds)} interactions, {sim.n_users} users, {sim.n_items} items -> {raw}")
    return [raw, wpath]


def cmd_ingest(cfg, out, args):
    data = cfg["data"]
    path = _resolve(cfg, data["path"]) if data["path"] else os.path.join(out, "raw.jsonl")
    if not os.path.exists(path):
        raise ConfigError(f"data.path: input {path} not found")
    schema = data["schema"]
    if isinstance(schema, dict):
        schema = corpus.FieldMapping(**schema)
    elif schema not in corpus.SCHEMAS:
        raise ConfigError(f"data.schema: unknown schema {schema!r}")
    ds = corpus.ingest(path, schema, tuple(cfg["scale"]), cfg["name"])
    cur = corpus.k_core_filter(ds, int(cfg["curation"]["k_core"]))
    split = corpus.timestamp_split(cur, float(cfg["curation"]["valid_frac"]), float(cfg["curation"]["test_frac"]))
    written = corpus.save_split(split, _curated_dir(out))
    stats = split.statistics()
    print("dataset statistics")
    for key in ("train", "valid", "test", "users", "items", "interactions"):
        print(f"  {key:<13}{stats[key]:>8d}")
    return written


def cmd_ease_fit(cfg, out, args):
    split = _load_split(out)
    X = RatingMatrix.from_dataset(split.train)
    model = fit_ease(X, float(cfg["eval"]["ease_lambda"]))
    path = os.path.join(out, "ease.bin")
    ids = save_model(model, X, path)
    print(f"ease-fit: {X.n_items} items, lambda={model.lam}")
    return [path, ids]


def cmd_train(cfg, out, args):
    split = _load_split(out)
    env = _environment(cfg, out)
    tcfg = TrainConfig(**cfg["train"])
    policy = _policy(cfg)
    hist = (int(cfg["history"]["user"]), int(cfg["history"]["item"]))
    samples_path = os.path.join(out, "samples.jsonl")
    before = env.fingerprint()
    with SampleArchive(samples_path) as archive:
        params, log = train_loop(env, split, policy, tcfg, hist, archive)
    if env.fingerprint() != before:
        raise RuntimeError("environment state changed during training")
    ckpt = os.path.join(out, "checkpoint.json")
    log_path = os.path.join(out, "training_log.jsonl")
    save_checkpoint(ckpt, params, tcfg, policy.vocabulary)
    log.save(log_path)
    rewards = log.mean_rewards()
    tail = rewards[-10:]
    if tail:
        print(f"train: final mean reward {sum(tail) / len(tail):.4f} (last {len(tail)} iterations)")
    probs = policy.probabilities()
    for s, p in zip(policy.vocabulary.entries, probs):
        print(f"  {s.strategy_id} {s.name or s.focus:<26}{p:.4f}")
    return [ckpt, log_path, samples_path]


def _eval_policy(cfg, args):
    if cfg["eval"]["policy"] == "remote":
        return RemotePolicy(_llm_client(cfg))
    params = None
    if args.checkpoint:
        if not os.path.exists(args.checkpoint):
            raise ConfigError(f"checkpoint {args.checkpoint} not found")
        params, _ = load_checkpoint(args.checkpoint)
    return _policy(cfg, params)


def cmd_eval(cfg, out, args):
    split = _load_split(out)
    env = _environment(cfg, out)
    policy = _eval_policy(cfg, args)
    opts = _eval_options(cfg)
    opts.meta = {"method": "duet", "checkpoint": os.path.basename(args.checkpoint) if args.checkpoint else None}
    if isinstance(policy, SoftmaxStrategyPolicy):
        greedy = int(max(range(len(policy.vocabulary)), key=lambda k: (policy.params.logits[k], -k)))
        opts.meta["greedy_strategy"] = policy.vocabulary[greedy].name or policy.vocabulary[greedy].focus
    report = evaluate(split, policy_profiler(policy), env, opts, _embedder(cfg))
    path = os.path.join(out, f"{args.name or 'eval'}_report.json")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.to_json())
    _print_report(report)
    return [path]


def cmd_baseline(cfg, out, args):
    split = _load_split(out)
    env = _environment(cfg, out)
    opts = _eval_options(cfg)
    opts.meta = {"method": args.which}
    profiler = raw_history_profiler() if args.which == "10H" else textrank_profiler()
    report = evaluate(split, profiler, env, opts, _embedder(cfg))
    path = os.path.join(out, f"baseline_{args.which}_report.json")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.to_json())
    _print_report(report)
    return [path]


def cmd_report(cfg, out, args):
    from .metrics import EvalReport

    names = sorted(n for n in os.listdir(out) if n.endswith("_report.json"))
    if not names:
        raise ConfigError(f"no *_report.json files in {out}")
    rows, header = [], None
    for n in names:
        with open(os.path.join(out, n), encoding="utf-8") as fh:
            rep = EvalReport.from_json(fh.read())
        header = header or rep.csv_header()
        rows.append(rep.csv_row(n[: -len("_report.json")]))
    path = os.path.join(out, "report.csv")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n" + "\n".join(rows) + "\n")
    print(header)
    print("\n".join(rows))
    return [path]


def _print_report(r):
    print(f"n={r.n} MAE={r.mae:.4f} RMSE={r.rmse:.4f} Acc={r.accuracy:.4f} F1={r.f1:.4f}")
    print("  " + " ".join(f"NDCG@{k}={v:.4f}" for k, v in sorted(r.ndcg.items())))
    if r.alignment is not None:
        print(f"  Align={r.alignment:.4f} UserCov={r.user_coverage} ItemCov={r.item_coverage}")


COMMANDS = {
    "simgen": cmd_simgen,
    "ingest": cmd_ingest,
    "ease-fit": cmd_ease_fit,
    "train": cmd_train,
    "eval": cmd_eval,
    "baseline": cmd_baseline,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="duet", description="Joint user-item profile optimization toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="YAML/JSON run configuration")
        sp.add_argument("--out", required=True, help="output directory")
        if name == "eval":
            sp.add_argument("--checkpoint", help="policy checkpoint (default: untrained uniform policy)")
            sp.add_argument("--name", default="eval", help="report name prefix")
        if name == "baseline":
            sp.add_argument("--which", required=True, help="10H or textrank")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "baseline" and args.which not in ("10H", "textrank"):
            raise ConfigError(f"unknown baseline {args.which!r}; expected 10H or textrank")
        cfg = load_config(args.config)
        out = args.out
        with output_lock(out):
            written = COMMANDS[args.command](cfg, out, args)
            update_manifest(out, written)
    except (ConfigError, corpus.CorpusFormatError, corpus.ColdStartError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        dump = os.path.join(args.out, "numerical_error.json")
        os.makedirs(args.out, exist_ok=True)
        _write_json(dump, {"error": str(exc), **exc.diagnostics})
        print(f"numerical error: {exc} (diagnostics: {dump})", file=sys.stderr)
        return EXIT_NUMERICAL
    except (BackendError, TransportError, ProtocolError, GenerationError, EnvironmentExhausted) as exc:
        print(f"environment error: {exc}", file=sys.stderr)
        return EXIT_ENV
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
