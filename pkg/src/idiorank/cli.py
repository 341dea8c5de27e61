"""Command-line pipeline orchestration.

Every subcommand reads/writes plain files, derives all randomness from one
root seed, and drops a manifest (input hashes, config, version) next to its
primary output so reruns are verifiable. Primary outputs are byte-stable:
timestamps live only in manifests.

Exit codes: 0 success, 2 validation error, 3 transport error, 4 numerical
error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

from . import __version__, corpus, embedstore, head, llmgate, metrics, ranker, triplets
from .errors import IdiorankError, NumericalError, TransportError
from .seeding import derive_seed

EXIT_VALIDATION = 2
EXIT_TRANSPORT = 3
EXIT_NUMERICAL = 4


def _hash_file(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_path: Path, command: str, config: dict,
                    inputs: list[Path]) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "config": config,
        "inputs": {str(p): _hash_file(Path(p)) for p in inputs if Path(p).exists()},
        "output": str(out_path),
        "output_sha256": _hash_file(out_path) if out_path.exists() else None,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    manifest_path = out_path.with_name(out_path.name + ".manifest.json")
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        import tomllib  # Python >= 3.11
    except ModuleNotFoundError:
        import tomli as tomllib
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _transport_from_args(args) -> llmgate.LlmTransport:
    if args.fixture:
        return llmgate.MockTransport(args.fixture, name=args.llm)
    if not args.base_url:
        raise TransportError("either --fixture or --base-url is required")
    return llmgate.HttpChatTransport(
        base_url=args.base_url, model=args.model or args.llm, name=args.llm,
    )


def _golds(samples) -> dict:
    return {
        s.sample_id: s.gold_order for s in samples if s.gold_order is not None
    }


# --- subcommand implementations -------------------------------------------

def cmd_ingest(args) -> None:
    samples = corpus.ingest_tsv(args.tsv, args.language)
    corpus.save_dataset(samples, args.out)
    _write_manifest(Path(args.out), "ingest",
                    {"language": args.language}, [Path(args.tsv)])


def cmd_classify(args) -> None:
    samples = corpus.load_dataset(args.dataset)
    transport = _transport_from_args(args)
    cache = llmgate.ResponseCache(args.cache) if args.cache else None
    votes = []
    for s in samples:
        v = llmgate.classify_compound(s, transport, t=args.t,
                                      seed=derive_seed(args.seed, f"classify/{s.sample_id}"),
                                      cache=cache)
        votes.append({"compound_id": v.compound_id, "votes": v.votes,
                      "decision": v.decision, "t": v.t})
    out = Path(args.out)
    out.write_text(json.dumps({"llm": args.llm, "votes": votes}, indent=2) + "\n",
                   encoding="utf-8")
    golds = [s.gold_type for s in samples if s.gold_type is not None]
    if len(golds) == len(samples):
        acc = sum(1 for v, s in zip(votes, samples)
                  if v["decision"] == s.gold_type) / len(samples)
        print(f"type detection accuracy: {acc:.4f}")
    _write_manifest(out, "classify", {"llm": args.llm, "t": args.t, "seed": args.seed},
                    [Path(args.dataset)])


def cmd_meanings(args) -> None:
    samples = corpus.load_dataset(args.dataset)
    votes_doc = json.loads(Path(args.votes).read_text(encoding="utf-8"))
    decisions = {v["compound_id"]: v for v in votes_doc["votes"]}
    transport = _transport_from_args(args)
    cache = llmgate.ResponseCache(args.cache) if args.cache else None
    lines = []
    for s in samples:
        v = decisions.get(s.sample_id)
        if v is None or v["decision"] != llmgate.IDIOMATIC:
            continue
        vote = llmgate.TypeVote(s.sample_id, v["votes"], v["decision"], v["t"])
        rec = llmgate.generate_meaning(s, transport, vote, cache=cache)
        lines.append(json.dumps({
            "compound_id": rec.compound_id, "llm": rec.llm_name,
            "meaning": rec.meaning_text, "prompt_hash": rec.prompt_hash,
        }))
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_manifest(Path(args.out), "meanings", {"llm": args.llm},
                    [Path(args.dataset), Path(args.votes)])


def cmd_rank(args) -> None:
    samples = corpus.load_dataset(args.dataset)
    store = embedstore.read_store(args.store)
    results = []
    for s in sorted(samples, key=lambda x: x.sample_id):
        bundle = embedstore.get_sample_bundle(store, s.sample_id, args.llm,
                                              s.candidate_ids())
        results.append(ranker.score_sample(bundle, args.mode))
    ranker.write_rank_results(results, args.out)
    _write_manifest(Path(args.out), "rank",
                    {"llm": args.llm, "mode": args.mode, "store": args.store},
                    [Path(args.dataset), Path(args.store)])


def cmd_ensemble(args) -> None:
    per_llm = [ranker.read_rank_results(p) for p in args.inputs]
    by_sample: dict[tuple, list] = {}
    for results in per_llm:
        for r in results:
            by_sample.setdefault((r.sample_id, r.mode), []).append(r)
    combined = [ranker.ensemble_scores(v) for v in by_sample.values()]
    ranker.write_rank_results(combined, args.out)
    _write_manifest(Path(args.out), "ensemble", {"inputs": args.inputs},
                    [Path(p) for p in args.inputs])


def cmd_build_triplets(args) -> None:
    samples = corpus.load_dataset(args.dataset)
    store = embedstore.read_store(args.store)
    spec = corpus.SplitSpec(seed=derive_seed(args.seed, "split"))
    train, val, test = corpus.split_dataset(samples, spec)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, subset in (("train", train), ("val", val), ("test", test)):
        tset = triplets.build_triplets(
            subset, store, k_soft=min(args.k_soft, len(subset) - 1),
            seed=derive_seed(args.seed, f"triplets/{name}"),
            llm_name=args.llm, strict=not args.lenient,
        )
        triplets.write_manifest(tset, out_dir / f"{name}.triplets.json")
    _write_manifest(out_dir / "train.triplets.json", "build-triplets",
                    {"llm": args.llm, "k_soft": args.k_soft, "seed": args.seed},
                    [Path(args.dataset), Path(args.store)])


def _train_config_from_args(args) -> head.TrainConfig:
    file_cfg = _load_config_file(args.config)
    cfg = head.TrainConfig(seed=args.seed)
    for key in ("batch_size", "learning_rate", "k_soft", "tau", "dropout_rate",
                "hidden", "max_epochs", "patience"):
        if key in file_cfg:
            setattr(cfg, key, file_cfg[key])
        flag = getattr(args, key, None)
        if flag is not None:
            setattr(cfg, key, flag)
    return cfg


def cmd_train_head(args) -> None:
    store = embedstore.read_store(args.store)
    train_set = triplets.read_manifest(args.triplets, store)
    val_set = triplets.read_manifest(args.val_triplets, store)
    test_set = triplets.read_manifest(args.test_triplets, store) if args.test_triplets else None
    cfg = _train_config_from_args(args)
    params, report = head.train(train_set, val_set, cfg, test_set)
    head.save_checkpoint(params, args.out)
    if args.curves:
        head.export_curves_csv(report, args.curves)
    print(f"best epoch {report.best_epoch}, "
          f"val loss {report.val_losses[report.best_epoch]:.6f} "
          f"({report.stopping_reason})")
    _write_manifest(Path(args.out), "train-head", vars(cfg).copy(),
                    [Path(args.triplets), Path(args.val_triplets), Path(args.store)])


def cmd_grid(args) -> None:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    configs = head.enumerate_grid()
    if args.enumerate_only:
        listing = [vars(c) for c in configs]
        (out_dir / "grid.json").write_text(json.dumps(listing, indent=2) + "\n",
                                           encoding="utf-8")
        print(f"{len(configs)} configurations")
        return
    store = embedstore.read_store(args.store)
    val_set = triplets.read_manifest(args.val_triplets, store)
    test_set = triplets.read_manifest(args.test_triplets, store) if args.test_triplets else None
    samples = corpus.load_dataset(args.dataset)
    spec = corpus.SplitSpec(seed=derive_seed(args.seed, "split"))
    train_samples, _, _ = corpus.split_dataset(samples, spec)

    def build_sets(k_soft: int):
        tset = triplets.build_triplets(
            train_samples, store, k_soft=min(k_soft, len(train_samples) - 1),
            seed=derive_seed(args.seed, f"triplets/k{k_soft}"), llm_name=args.llm,
        )
        return tset, val_set, test_set

    base = head.TrainConfig(seed=args.seed, max_epochs=args.max_epochs or 200)
    results = head.grid_search(build_sets, base=base)
    rows = [{"config": vars(r["config"]), "best_val_loss": r["best_val_loss"],
             "best_epoch": r["best_epoch"], "test_accuracy": r["test_accuracy"]}
            for r in results]
    (out_dir / "grid_results.json").write_text(
        json.dumps(rows, indent=2) + "\n", encoding="utf-8")
    _write_manifest(out_dir / "grid_results.json", "grid",
                    {"llm": args.llm, "seed": args.seed},
                    [Path(args.dataset), Path(args.store)])


def cmd_project(args) -> None:
    params = head.load_checkpoint(args.checkpoint)
    store = embedstore.read_store(args.store)
    projected = head.project_store(params, store)
    embedstore.write_store(projected, args.out)
    _write_manifest(Path(args.out), "project", {"checkpoint": args.checkpoint},
                    [Path(args.checkpoint), Path(args.store)])


def cmd_eval(args) -> None:
    samples = corpus.load_dataset(args.dataset)
    golds = _golds(samples)
    results = ranker.read_rank_results(args.rank)
    llm = results[0].llm_name if results else "-"
    mode = results[0].mode if results else "ci"
    row = metrics.evaluate_split(results, golds, llm=llm, clip=args.clip,
                                 mode=mode, split=args.split)
    report = metrics.EvalReport(rows=[row])
    out_dir = Path(args.out_dir)
    metrics.write_report(report, out_dir, stem=args.stem)
    print(metrics.report_to_text(report), end="")
    _write_manifest(out_dir / f"{args.stem}.json", "eval",
                    {"clip": args.clip, "split": args.split},
                    [Path(args.dataset), Path(args.rank)])


def cmd_report(args) -> None:
    rows = []
    for p in args.inputs:
        doc = json.loads(Path(p).read_text(encoding="utf-8"))
        rows.extend(metrics.ReportRow(**r) for r in doc["rows"])
    report = metrics.EvalReport(rows=rows)
    if args.combine:
        label, members = args.combine.split("=", 1)
        by_config: dict[tuple, dict] = {}
        for r in rows:
            by_config.setdefault((r.llm, r.clip, r.mode), {})[r.split] = r
        member_splits = tuple(members.split(","))
        for config, splits in sorted(by_config.items()):
            present = [splits[s] for s in member_splits if s in splits]
            if len(present) == len(member_splits):
                report.rows.append(metrics.combine_rows(present, label))
    out_dir = Path(args.out_dir)
    metrics.write_report(report, out_dir, stem=args.stem)
    print(metrics.report_to_text(report), end="")
    _write_manifest(out_dir / f"{args.stem}.json", "report",
                    {"combine": args.combine}, [Path(p) for p in args.inputs])


# --- argument parsing ------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="idiorank",
        description="Rank candidate images for potentially idiomatic compounds.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def llm_flags(p):
        p.add_argument("--llm", required=True, help="LLM name (labels outputs)")
        p.add_argument("--fixture", help="mock fixture JSON (offline transport)")
        p.add_argument("--base-url", help="OpenAI-compatible endpoint base URL")
        p.add_argument("--model", help="model name for the HTTP transport")
        p.add_argument("--cache", help="JSONL response cache path")

    p = sub.add_parser("ingest", help="convert a shared-task TSV to canonical JSON")
    p.add_argument("--tsv", required=True)
    p.add_argument("--language", required=True, choices=corpus.LANGUAGES)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("classify", help="LLM majority-vote compound typing")
    p.add_argument("--dataset", required=True)
    llm_flags(p)
    p.add_argument("--t", type=int, default=llmgate.DEFAULT_T)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("meanings", help="generate idiomatic meanings")
    p.add_argument("--dataset", required=True)
    p.add_argument("--votes", required=True)
    llm_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_meanings)

    p = sub.add_parser("rank", help="score and order candidates per sample")
    p.add_argument("--dataset", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--llm", required=True)
    p.add_argument("--mode", required=True, choices=ranker.MODES)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("ensemble", help="average per-LLM rank scores")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("build-triplets", help="split dataset and build triplet manifests")
    p.add_argument("--dataset", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--llm", required=True)
    p.add_argument("--k-soft", type=int, default=49, dest="k_soft")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lenient", action="store_true",
                   help="tolerate missing augmentation modalities")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_build_triplets)

    p = sub.add_parser("train-head", help="train the projection head")
    p.add_argument("--triplets", required=True)
    p.add_argument("--val-triplets", required=True)
    p.add_argument("--test-triplets")
    p.add_argument("--store", required=True)
    p.add_argument("--config", help="TOML config file (flags override)")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--tau", type=float)
    p.add_argument("--dropout-rate", type=float, dest="dropout_rate")
    p.add_argument("--hidden", type=int)
    p.add_argument("--max-epochs", type=int, dest="max_epochs")
    p.add_argument("--patience", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--curves", help="per-epoch CSV output")
    p.set_defaults(func=cmd_train_head)

    p = sub.add_parser("grid", help="hyperparameter grid search")
    p.add_argument("--dataset")
    p.add_argument("--store")
    p.add_argument("--val-triplets")
    p.add_argument("--test-triplets")
    p.add_argument("--llm")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-epochs", type=int, dest="max_epochs")
    p.add_argument("--enumerate-only", action="store_true",
                   help="write the configuration list without training")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("project", help="project a store through a trained head")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("eval", help="score rank results against gold orders")
    p.add_argument("--dataset", required=True)
    p.add_argument("--rank", required=True)
    p.add_argument("--clip", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--stem", default="report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="merge eval outputs into one table")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--combine", help='combined split, e.g. "TestAll=EN,XE"')
    p.add_argument("--out-dir", required=True)
    p.add_argument("--stem", default="report")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except IdiorankError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return 0


if __name__ == "__main__":
    sys.exit(main())
