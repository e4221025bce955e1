"""``kgrag`` command line: prep, index, run, eval, dpo-sample."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import random
import sys
from datetime import datetime
from pathlib import Path

import numpy as np

from . import dpo
from .config import ConfigError, RunConfig, load_config
from .evaluation import evaluate_files, load_dataset
from .gateway import Gateway, HTTPBackend, TranscriptBackend
from .index import EmbedClient, HashEmbedder, IndexFormatError, build_index, load_corpus
from .kgstore import KGEmptyError, KGFormatError, KGStore, filter_complete, load_raw
from .pipeline import MODES, Resources, run_batch, write_predictions, write_sessions

log = logging.getLogger("kginfused")

EXIT_OK, EXIT_ERROR, EXIT_BAD_INPUT, EXIT_NO_DATA = 0, 1, 2, 3


def _run_dir(cfg: RunConfig, command: str) -> Path:
    root = Path(cfg.out)
    root.mkdir(parents=True, exist_ok=True)
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S-%f")
    d = root / f"{command}-{stamp}"
    d.mkdir()
    latest = root / "latest"
    if latest.is_symlink() or latest.exists():
        latest.unlink()
    latest.symlink_to(d.name)
    (d / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
    log.info("effective config: %s", json.dumps(cfg.to_dict(), sort_keys=True))
    return d


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _gateway(cfg: RunConfig, mock: str | None) -> Gateway:
    gw = cfg.gateway
    transcript = mock or cfg.paths.get("transcript")
    if transcript:
        backend = TranscriptBackend.load(transcript)
    else:
        backend = HTTPBackend(gw.base_url, gw.api_key)
    return Gateway(backend, models=dict(gw.models), max_retries=gw.max_retries, max_in_flight=gw.max_in_flight)


def _embedder(cfg: RunConfig):
    gw = cfg.gateway
    fallback = HashEmbedder(gw.hash_embed_dim) if gw.hash_embed_dim else None
    cache = cfg.path("query_cache")
    if cache is not None:
        return EmbedClient.from_cache_file(cache, url=gw.embed_url, fallback=fallback)
    return EmbedClient(url=gw.embed_url, fallback=fallback)


def cmd_prep(cfg: RunConfig, args: argparse.Namespace) -> int:
    triples, entities, relations = cfg.require("triples", "entities", "relations")
    descriptions = cfg.path("descriptions")
    snapshot = cfg.path("snapshot") or Path(cfg.out) / "kg.spqkg"
    if snapshot.exists() and not args.force:
        print(f"{snapshot} exists; nothing to do (use --force to rebuild)")
        return EXIT_OK
    run_dir = _run_dir(cfg, "prep")
    raw = load_raw(triples, entities, relations, descriptions)
    store = filter_complete(raw)
    snapshot.parent.mkdir(parents=True, exist_ok=True)
    store.save(snapshot)
    report = {**store.stats.to_dict(), "dangling_triples": raw.dangling, "duplicate_triples": raw.duplicates}
    text = json.dumps(report, indent=2)
    (run_dir / "filter_stats.json").write_text(text, encoding="utf-8")
    snapshot.with_name(snapshot.name + ".stats.json").write_text(text, encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_index(cfg: RunConfig, args: argparse.Namespace) -> int:
    pairs = []
    for name in ("entity", "corpus"):
        v, i = cfg.path(f"{name}_vectors"), cfg.path(f"{name}_ids")
        if v is not None and i is not None:
            pairs.append((name, v, i))
    if not pairs:
        raise ConfigError("no embedding files configured (entity_vectors/entity_ids or corpus_vectors/corpus_ids)")
    run_dir = _run_dir(cfg, "index")
    manifest = []
    for name, vpath, ipath in pairs:
        idx = build_index(vpath, ipath)
        manifest.append({
            "name": name, "count": idx.count, "dim": idx.dim,
            "vectors": str(vpath), "vectors_sha256": _sha256(vpath),
            "ids": str(ipath), "ids_sha256": _sha256(ipath),
        })
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    print(json.dumps(manifest, indent=2))
    return EXIT_OK


def _parse_rounds(spec: str | None) -> list[int | None]:
    if spec is None:
        return [None]
    if ".." in spec:
        lo, hi = (int(x) for x in spec.split("..", 1))
        return list(range(lo, hi + 1))
    return [int(spec)]


def cmd_run(cfg: RunConfig, args: argparse.Namespace) -> int:
    from dataclasses import replace

    (dataset_path,) = cfg.require("dataset")
    examples = load_dataset(dataset_path)
    if args.limit:
        examples = examples[: args.limit]
    res = Resources(gateway=_gateway(cfg, args.mock), embedder=_embedder(cfg))
    if cfg.mode != "nor":
        corpus_path, cv, ci = cfg.require("corpus", "corpus_vectors", "corpus_ids")
        res.corpus, res.corpus_index = load_corpus(corpus_path), build_index(cv, ci)
    if cfg.mode == "kg_infused":
        snap, ev, ei = cfg.require("snapshot", "entity_vectors", "entity_ids")
        res.store, res.entity_index = KGStore.load(snap), build_index(ev, ei)
    run_dir = _run_dir(cfg, "run")
    pairs = [(ex.id, ex.question) for ex in examples]
    any_ok = not pairs
    for rounds in _parse_rounds(args.rounds):
        pcfg = cfg.pipeline
        suffix = ""
        if rounds is not None:
            pcfg = replace(pcfg, activation=replace(pcfg.activation, max_rounds=rounds))
            suffix = f"_r{rounds}"
        sessions = run_batch(pairs, cfg.mode, pcfg, res, workers=cfg.workers)
        write_sessions(sessions, run_dir / f"sessions{suffix}.jsonl", res.store)
        write_predictions(sessions, run_dir / f"predictions{suffix}.jsonl")
        with open(run_dir / f"failures{suffix}.jsonl", "w", encoding="utf-8") as fh:
            for s in sessions:
                if not s.ok:
                    fh.write(json.dumps({"id": s.id, "stage": s.failed_stage, "error": s.error}) + "\n")
        n_ok = sum(s.ok for s in sessions)
        any_ok = any_ok or n_ok > 0
        print(f"mode={cfg.mode} rounds={rounds or cfg.activation.max_rounds}: {n_ok}/{len(sessions)} sessions ok")
    (run_dir / "usage.json").write_text(json.dumps(res.gateway.usage()), encoding="utf-8")
    print(f"outputs in {run_dir}")
    return EXIT_OK if any_ok else EXIT_ERROR


def cmd_eval(cfg: RunConfig, args: argparse.Namespace) -> int:
    dataset = Path(args.dataset) if args.dataset else cfg.require("dataset")[0]
    report = evaluate_files(args.predictions, dataset)
    run_dir = _run_dir(cfg, "eval")
    (run_dir / "report.json").write_text(json.dumps(report.to_dict(), indent=2), encoding="utf-8")
    print("Acc & F1 & EM & Avg")
    print(report.row())
    if report.missing:
        print(f"missing predictions: {len(report.missing)}")
    return EXIT_OK


def cmd_dpo_sample(cfg: RunConfig, args: argparse.Namespace) -> int:
    (inputs_path,) = cfg.require("ka_inputs")
    inputs = dpo.load_ka_inputs(inputs_path)
    out_file = Path(args.output) if args.output else Path(cfg.out) / "dpo_dataset.jsonl"
    out_file.parent.mkdir(parents=True, exist_ok=True)
    _run_dir(cfg, "dpo-sample")
    result = dpo.build_dataset(inputs, dpo.DEFAULT_GRID, _gateway(cfg, args.mock), args.target,
                               out_path=out_file, resume=args.resume, workers=cfg.workers)
    print(json.dumps({"examples": len(result.examples), "consumed": result.consumed,
                      "ambiguous": result.ambiguous, "discarded": result.discarded, "status": result.status}))
    if not result.examples:
        print("no data")
        return EXIT_NO_DATA
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--mock", help="replay LLM replies from a transcript JSONL (no network)")
    common.add_argument("--seed", type=int)
    common.add_argument("--rounds", help="activation rounds: N or a sweep LO..HI")
    common.add_argument("--mode", choices=MODES)
    common.add_argument("--out", help="output root directory")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override any config setting")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="kgrag", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("prep", parents=[common], help="filter raw KG files into a snapshot")
    p.add_argument("--force", action="store_true")
    sub.add_parser("index", parents=[common], help="validate embedding files and write a manifest")
    p = sub.add_parser("run", parents=[common], help="answer a dataset")
    p.add_argument("--limit", type=int)
    p = sub.add_parser("eval", parents=[common], help="score predictions")
    p.add_argument("predictions")
    p.add_argument("--dataset")
    p = sub.add_parser("dpo-sample", parents=[common], help="build a DPO preference dataset")
    p.add_argument("--target", type=int, default=3000)
    p.add_argument("--output")
    p.add_argument("--resume", action="store_true")
    return parser


COMMANDS = {"prep": cmd_prep, "index": cmd_index, "run": cmd_run, "eval": cmd_eval, "dpo-sample": cmd_dpo_sample}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    overrides: dict[tuple[str, str], str] = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        sec, dot, name = key.partition(".")
        if not sep or not dot:
            print(f"bad --set {item!r}; expected SECTION.KEY=VALUE", file=sys.stderr)
            return EXIT_BAD_INPUT
        overrides[(sec, name)] = value
    for flag, key in (("seed", "seed"), ("mode", "mode"), ("out", "out")):
        if getattr(args, flag) is not None:
            overrides[("run", key)] = str(getattr(args, flag))
    try:
        cfg = load_config(args.config, overrides=overrides)
        random.seed(cfg.seed)
        np.random.seed(cfg.seed)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, IndexFormatError, KGFormatError, KGEmptyError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except Exception as exc:  # noqa: BLE001
        log.exception("systemic failure")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
