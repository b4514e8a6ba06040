"""Headless command-line entry points.

Subcommands: ingest (build shard cache), train (active-learning cycles),
bench (simulated protocols on synthetic or user data), score (streaming
batch inference), eval (metrics from a scores CSV), serve (HTTP API + UI).

A JSON config file (--config) mirrors all flags, one section per
subcommand; explicit flags override the file. Exit codes: 0 ok, 1 domain
error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
from pathlib import Path

from .backbone import load_checkpoint
from .catalog import DatasetCatalog
from .errors import OddsiftError, UsageError
from .metrics import ScoreTable, evaluate
from .scorer import score_stream
from .session import Session, select_candidates
from .shards import ShardReader, build_shard_cache
from .stretch import StretchSpec
from .synthetic import build_benchmark
from .trainer import TrainConfig

PROTOCOLS = {
    # seed anomalies, seed normals, pool prevalence
    "miniimagenet-like": {"seed_anomaly": 5, "seed_normal": 495, "prevalence": 0.01},
    "galaxymnist-like": {"seed_anomaly": 10, "seed_normal": 30, "prevalence": 0.25},
}


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file not found: {p}")
    return json.loads(p.read_text())


def _get(args: argparse.Namespace, config: dict, section: str, key: str, default):
    """Resolution order: explicit flag > config-file section > default."""
    value = getattr(args, key.replace("-", "_"), None)
    if value is not None:
        return value
    if section in config and key in config[section]:
        return config[section][key]
    return default


def _train_config(config: dict, seed: int, iterations: int | None = None) -> TrainConfig:
    section = dict(config.get("train_config", {}))
    section["seed"] = seed
    if iterations is not None:
        section["iterations_per_cycle"] = iterations
    return TrainConfig.from_dict({**TrainConfig().to_dict(), **section})


def _augment_policy(config: dict):
    """Config keys augment.n_ops / augment.magnitude / augment.ops."""
    section = config.get("augment")
    if not section:
        return None
    from .augment import DEFAULT_STRONG_OPS, RandAugmentPolicy

    return RandAugmentPolicy(
        n_ops=int(section.get("n_ops", 2)),
        magnitude=int(section.get("magnitude", 10)),
        ops=tuple(section.get("ops", DEFAULT_STRONG_OPS)),
    )


def cmd_ingest(args: argparse.Namespace, config: dict) -> int:
    stretch = StretchSpec(
        kind=_get(args, config, "ingest", "stretch", "linear-minmax"),
        a=float(_get(args, config, "ingest", "stretch-a", 0.1)),
        clip_lo=float(_get(args, config, "ingest", "clip-lo", 0.5)),
        clip_hi=float(_get(args, config, "ingest", "clip-hi", 99.5)),
    )
    catalog = DatasetCatalog.from_jsonl(args.catalog)
    index = build_shard_cache(
        catalog,
        stretch,
        args.out,
        shard_size=int(_get(args, config, "ingest", "shard-size", 4096)),
        size=_get(args, config, "ingest", "size", None),
        channels=_get(args, config, "ingest", "channels", None),
    )
    print(f"cache written: {index.parent} ({len(catalog)} records)")
    return 0


def _interactive_labels(session: Session, k: int) -> list[tuple[str, int]]:
    table = session.score_table or session.rank_pool()
    candidates = select_candidates(table, k=k, benchmark=False)
    print(f"top {len(candidates.anomalies)} unlabelled candidates:")
    for record_id in candidates.anomalies:
        rank = table.rank_of(record_id)
        print(f"  {record_id}  score={table.scores[rank]:.4f}")
    print("enter labels as '<id> <0|1>' lines; empty line to continue:")
    pairs: list[tuple[str, int]] = []
    for line in sys.stdin:
        line = line.strip()
        if not line:
            break
        parts = line.split()
        if len(parts) != 2 or parts[1] not in ("0", "1"):
            print(f"  ignored malformed line: {line!r}", file=sys.stderr)
            continue
        pairs.append((parts[0], int(parts[1])))
    return pairs


def cmd_train(args: argparse.Namespace, config: dict) -> int:
    session_dir = Path(args.session)
    cycles = int(_get(args, config, "train", "cycles", 3))
    iters = _get(args, config, "train", "iters", None)
    labels_per_cycle = int(_get(args, config, "train", "labels-per-cycle", 10))
    if (session_dir / "config.json").exists():
        session = Session.load(session_dir)
    else:
        if not args.catalog or not args.cache:
            raise UsageError("new session needs --catalog and --cache")
        cfg = _train_config(config, int(_get(args, config, "train", "seed", 0)), iters)
        session = Session.create(
            session_dir, args.catalog, args.cache, cfg, policy=_augment_policy(config)
        )
    if args.oracle:
        reports = session.run_simulated_protocol(cycles=cycles, per_cycle_labels=labels_per_cycle)
        for i, report in enumerate(reports, start=1):
            print(f"cycle {i}: auroc={report.auroc:.4f} auprc={report.auprc:.4f}")
    else:
        for _ in range(cycles):
            session.run_cycle(iterations=iters)
            print(f"cycle {session.cycle_index} done; labelled={len(session.catalog.labelled)}")
            pairs = _interactive_labels(session, labels_per_cycle)
            if pairs:
                session.commit_labels(pairs)
                session.save()
    print(f"session saved: {session_dir}")
    return 0


def _fmt_mean_sd(values: list[float], digits: int = 2) -> str:
    mean = statistics.mean(values)
    sd = statistics.stdev(values) if len(values) > 1 else 0.0
    return f"{mean:.{digits}f} ± {sd:.{digits}f}"


def cmd_bench(args: argparse.Namespace, config: dict) -> int:
    protocol = _get(args, config, "bench", "protocol", "miniimagenet-like")
    if protocol not in PROTOCOLS:
        raise UsageError(f"unknown protocol {protocol!r}; choose from {sorted(PROTOCOLS)}")
    params = PROTOCOLS[protocol]
    seeds = int(_get(args, config, "bench", "seeds", 1))
    cycles = int(_get(args, config, "bench", "cycles", 3))
    iters = int(_get(args, config, "bench", "iters", 100))
    labels_per_cycle = int(_get(args, config, "bench", "labels-per-cycle", 10))
    pool_size = int(_get(args, config, "bench", "pool-size", 2000))
    size = int(_get(args, config, "bench", "size", 64))
    initial_labels = _get(args, config, "bench", "initial-labels", None)
    out_dir = Path(_get(args, config, "bench", "out", "bench_out"))
    out_dir.mkdir(parents=True, exist_ok=True)

    seed_anomaly = params["seed_anomaly"]
    seed_normal = params["seed_normal"]
    if initial_labels is not None:
        total = seed_anomaly + seed_normal
        frac = seed_anomaly / total
        seed_anomaly = max(1, int(round(int(initial_labels) * frac)))
        seed_normal = int(initial_labels) - seed_anomaly

    rows: list[dict] = []
    for seed_idx in range(seeds):
        base_seed = int(_get(args, config, "bench", "seed", 0)) + seed_idx
        run_dir = out_dir / f"seed{base_seed}"
        if args.catalog and args.cache:
            catalog_path, cache_dir = Path(args.catalog), Path(args.cache)
        else:
            catalog_path, cache_dir = build_benchmark(
                run_dir,
                n_seed_anomaly=seed_anomaly,
                n_seed_normal=seed_normal,
                pool_size=pool_size,
                pool_prevalence=params["prevalence"],
                size=size,
                seed=base_seed,
            )
        cfg = _train_config(config, base_seed, iters)
        session = Session.create(
            run_dir / "session", catalog_path, cache_dir, cfg, policy=_augment_policy(config)
        )
        reports = session.run_simulated_protocol(cycles=cycles, per_cycle_labels=labels_per_cycle)
        for cycle, report in enumerate(reports, start=1):
            rows.append(
                {
                    "seed": base_seed,
                    "cycle": cycle if cycles > 0 else 0,
                    "auroc": report.auroc,
                    "auprc": report.auprc,
                    "precision_top_0.1": report.precision_at["0.1"],
                    "precision_top_1": report.precision_at["1"],
                    "efficiency_at_1": report.efficiency_at(1.0),
                }
            )

    results_csv = out_dir / "bench_results.csv"
    final_cycle = max(row["cycle"] for row in rows)
    final_rows = [row for row in rows if row["cycle"] == final_cycle]
    with open(results_csv, "w", encoding="utf-8") as fh:
        fh.write("seed,auroc,auprc,precision_top_0.1%,precision_top_1%,efficiency_at_1%\n")
        for row in final_rows:
            fh.write(
                f"{row['seed']},{row['auroc']:.4f},{row['auprc']:.4f},"
                f"{row['precision_top_0.1']:.2f},{row['precision_top_1']:.2f},"
                f"{row['efficiency_at_1']:.2f}\n"
            )
        fh.write(
            "Mean,{},{},{},{},{}\n".format(
                _fmt_mean_sd([row["auroc"] for row in final_rows]),
                _fmt_mean_sd([row["auprc"] for row in final_rows]),
                _fmt_mean_sd([row["precision_top_0.1"] for row in final_rows]),
                _fmt_mean_sd([row["precision_top_1"] for row in final_rows]),
                _fmt_mean_sd([row["efficiency_at_1"] for row in final_rows]),
            )
        )
    (out_dir / "bench_results.json").write_text(
        json.dumps(rows, sort_keys=True, separators=(",", ":")) + "\n"
    )
    print(f"bench results: {results_csv}")
    for row in final_rows:
        print(
            f"seed {row['seed']}: auroc={row['auroc']:.4f} auprc={row['auprc']:.4f} "
            f"eff@1%={row['efficiency_at_1']:.1f}"
        )
    print(f"mean auroc: {_fmt_mean_sd([row['auroc'] for row in final_rows])}")
    return 0


def cmd_score(args: argparse.Namespace, config: dict) -> int:
    state, _ = load_checkpoint(args.checkpoint)
    reader = ShardReader(args.shards)
    shard_paths = reader.shard_paths()
    k = int(_get(args, config, "score", "topk", 1000))
    batch = int(_get(args, config, "score", "batch", 256))
    out = Path(_get(args, config, "score", "out", "scores.csv"))
    topk_out = Path(_get(args, config, "score", "topk-out", "topk.csv"))
    table = score_stream(
        state,
        shard_paths,
        batch_size=batch,
        k=k,
        scores_csv=out,
        skip_corrupt=bool(args.skip_corrupt),
        progress_stream=sys.stderr,
    )
    table.save_csv(topk_out)
    print(f"scored -> {out}; top-{k} -> {topk_out}")
    return 0


def cmd_eval(args: argparse.Namespace, config: dict) -> int:
    table = ScoreTable.load_csv(args.scores)
    catalog = DatasetCatalog.from_jsonl(args.gt)
    rows = [
        (record_id, score, catalog.get(record_id).gt_label)
        for record_id, score, _ in table.rows()
    ]
    report = evaluate(ScoreTable.from_rows(rows))
    payload = report.to_json()
    out = _get(args, config, "eval", "out", None)
    if out:
        Path(out).write_text(payload + "\n")
        print(f"report -> {out}")
    else:
        print(payload)
    return 0


def cmd_serve(args: argparse.Namespace, config: dict) -> int:
    import uvicorn

    from .service import create_app

    session = Session.load(args.session)
    frontend = _get(args, config, "serve", "frontend", None)
    app = create_app(session, frontend_dir=frontend)
    host = _get(args, config, "serve", "host", "127.0.0.1")
    port = int(_get(args, config, "serve", "port", 8787))
    uvicorn.run(app, host=host, port=port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oddsift", description=__doc__)
    parser.add_argument("--config", help="JSON config file mirroring all flags")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build a shard cache from a catalog")
    p.add_argument("--catalog", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int)
    p.add_argument("--stretch")
    p.add_argument("--stretch-a", type=float, dest="stretch_a")
    p.add_argument("--clip-lo", type=float, dest="clip_lo")
    p.add_argument("--clip-hi", type=float, dest="clip_hi")
    p.add_argument("--shard-size", type=int, dest="shard_size")
    p.add_argument("--channels", type=int)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="run active-learning cycles on a session")
    p.add_argument("--session", required=True)
    p.add_argument("--catalog")
    p.add_argument("--cache")
    p.add_argument("--cycles", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--labels-per-cycle", type=int, dest="labels_per_cycle")
    p.add_argument("--seed", type=int)
    p.add_argument("--oracle", action="store_true", help="ground-truth oracle supplies labels")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="simulated benchmark protocols")
    p.add_argument("--protocol", choices=sorted(PROTOCOLS))
    p.add_argument("--seeds", type=int)
    p.add_argument("--cycles", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--labels-per-cycle", type=int, dest="labels_per_cycle")
    p.add_argument("--initial-labels", type=int, dest="initial_labels")
    p.add_argument("--pool-size", type=int, dest="pool_size")
    p.add_argument("--size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--catalog", help="use this catalog instead of synthetic data")
    p.add_argument("--cache", help="shard cache for --catalog")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("score", help="stream-score a shard cache")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--shards", required=True)
    p.add_argument("--topk", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--out")
    p.add_argument("--topk-out", dest="topk_out")
    p.add_argument("--skip-corrupt", action="store_true", dest="skip_corrupt")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="metrics report from scores + ground truth")
    p.add_argument("--scores", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="HTTP API + browser UI for a session")
    p.add_argument("--session", required=True)
    p.add_argument("--port", type=int)
    p.add_argument("--host")
    p.add_argument("--frontend")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config)
        return args.func(args, config)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except OddsiftError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
