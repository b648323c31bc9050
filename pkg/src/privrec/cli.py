"""Command-line front end.

Subcommands: publish, verify, train, eval, synth, bench.  Every run writes a
resolved-config snapshot next to its outputs so it can be reproduced from
that file alone; report paths write a figure alongside the delimited output.

Exit codes: 0 success, 1 failed check, 2 usage or I/O problem, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import figures
from .bench import bench_table
from .metrics import write_metrics_csv
from .model import (
    TrainConfig,
    TrainingDiverged,
    build_model,
    load_model,
    save_model,
    train,
)
from .pipeline import evaluate_split
from .publish import (
    NumericError,
    PublishParams,
    load_published,
    publish,
    published_to_csv,
    save_published,
)
from .ratings import RatingMatrix
from .verify import SUITES, TrialConfig, run_suite, write_reports

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


# defaults per subcommand; config files and flags override in that order
_DEFAULTS: dict[str, dict] = {
    "publish": {
        "input": None,
        "transform": "jlt",
        "epsilon": 8.0,
        "delta": 0.01,
        "eta": 0.5,
        "mu": 0.5,
        "sp": 0.5,
        "n1_prime": None,
        "w_method": "direct",
        "seed": 0,
        "csv": False,
        "binarize": False,
        "binarize_threshold": 3.0,
        "min_interactions": 0,
    },
    "verify": {
        "suite": "all",
        "trials": 1000,
        "seed": 0,
        "epsilon": 8.0,
        "delta": 0.01,
        "eta": 0.5,
        "mu": 0.5,
        "sp": 0.5,
        "n1_prime": 64,
        "transform": "jlt",
        "dims": [20, 16],
        "gamma": 0.1,
        "confidence": 0.95,
    },
    "train": {
        "published": None,
        "target": None,
        "split": None,
        "variant": "hetero",
        "alpha": 100.0,
        "lr": 1e-3,
        "batch": 128,
        "epochs": 30,
        "neg_ratio": 4,
        "h": 16,
        "hidden": [64],
        "seed": 0,
        "split_seed": 0,
        "binarize": False,
        "binarize_threshold": 3.0,
        "min_interactions": 0,
    },
    "eval": {
        "checkpoint": None,
        "target": None,
        "split": None,
        "published": None,
        "label": "run",
        "binarize": False,
        "binarize_threshold": 3.0,
        "min_interactions": 0,
        "seed": 0,
    },
    "synth": {
        "users": 500,
        "items": 200,
        "latent_dim": 8,
        "noise": 0.3,
        "source_density": 0.10,
        "target_density": 0.05,
        "seed": 0,
    },
    "bench": {
        "transforms": ["jlt", "sjlt", "fwht"],
        "sizes": [1024, 2048, 4096, 8192],
        "n1_prime": 512,
        "m": 256,
        "sp": None,  # None -> the sparse regime q = 1/m
        "reps": 5,
        "seed": 0,
    },
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="privrec",
        description="Differentially private rating publishing, verification, "
        "cross-domain training and evaluation",
    )
    parser.add_argument("--config", help="JSON config file (flags override it)")
    parser.add_argument("--out-dir", default=".", help="directory for outputs")
    parser.add_argument("--seed", type=int, default=None, help="run seed")
    parser.add_argument("--threads", type=int, default=None, help="JIT thread count")
    # the same globals are accepted after the subcommand; SUPPRESS keeps a
    # pre-subcommand value intact when the flag is absent there
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS)
    common.add_argument("--out-dir", default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("publish", help="publish a rating matrix with DP",
                       parents=[common])
    p.add_argument("--input", help="ratings CSV (user_id,item_id,rating)")
    p.add_argument("--transform", choices=["jlt", "sjlt"])
    p.add_argument("--epsilon", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--sp", "--q", dest="sp", type=float, help="sparse projection density")
    p.add_argument("--n1-prime", dest="n1_prime", type=int)
    p.add_argument("--w-method", dest="w_method", choices=["direct", "row_bound"])
    p.add_argument("--csv", action="store_true", default=None, help="also export CSV")
    _add_ingest_flags(p)

    p = sub.add_parser("verify", help="run statistical checks", parents=[common])
    p.add_argument("--suite", choices=list(SUITES))
    p.add_argument("--trials", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--sp", "--q", dest="sp", type=float)
    p.add_argument("--n1-prime", dest="n1_prime", type=int)
    p.add_argument("--transform", choices=["jlt", "sjlt"])
    p.add_argument("--dims", type=int, nargs=2, metavar=("M", "N"))
    p.add_argument("--gamma", type=float)
    p.add_argument("--confidence", type=float)

    p = sub.add_parser("train", help="train a cross-domain model", parents=[common])
    p.add_argument("--published", help="published matrix file")
    p.add_argument("--target", help="target-domain ratings CSV")
    p.add_argument("--split", help="split manifest (derived and saved if omitted)")
    p.add_argument("--variant", choices=["hetero", "sym", "target-only"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--neg-ratio", dest="neg_ratio", type=int)
    p.add_argument("--h", type=int)
    p.add_argument("--hidden", type=int, nargs="+")
    p.add_argument("--split-seed", dest="split_seed", type=int)
    _add_ingest_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split", parents=[common])
    p.add_argument("--checkpoint")
    p.add_argument("--target")
    p.add_argument("--split")
    p.add_argument("--published")
    p.add_argument("--label")
    _add_ingest_flags(p)

    p = sub.add_parser("synth", help="generate correlated two-domain data", parents=[common])
    p.add_argument("--users", type=int)
    p.add_argument("--items", type=int)
    p.add_argument("--latent-dim", dest="latent_dim", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--source-density", dest="source_density", type=float)
    p.add_argument("--target-density", dest="target_density", type=float)

    p = sub.add_parser("bench", help="time the transforms", parents=[common])
    p.add_argument("--transforms", nargs="+", choices=["jlt", "sjlt", "fwht"])
    p.add_argument("--sizes", type=int, nargs="+")
    p.add_argument("--n1-prime", dest="n1_prime", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--sp", "--q", dest="sp", type=float)
    p.add_argument("--reps", type=int)
    return parser


def _add_ingest_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--binarize",
        action="store_true",
        default=None,
        help="binarize raw ratings before use",
    )
    p.add_argument("--binarize-threshold", dest="binarize_threshold", type=float)
    p.add_argument(
        "--min-interactions",
        dest="min_interactions",
        type=int,
        help="iteratively drop users/items with fewer positives (0 = off)",
    )


def _merge_options(args: argparse.Namespace) -> dict:
    opts = dict(_DEFAULTS[args.command])
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        unknown = set(loaded) - set(opts)
        if unknown:
            raise UsageError(
                f"config keys {sorted(unknown)} not valid for '{args.command}'"
            )
        opts.update(loaded)
    for key in opts:
        value = getattr(args, key, None)
        if value is not None:
            opts[key] = value
    if args.seed is not None:
        opts["seed"] = args.seed
    return opts


def _write_snapshot(opts: dict, command: str, out_dir: Path) -> None:
    snapshot = dict(opts)
    snapshot["command"] = command
    path = out_dir / f"{command}_config.json"
    path.write_text(json.dumps(snapshot, sort_keys=True, indent=2) + "\n", "utf-8")


def _load_matrix(path: str, opts: dict) -> RatingMatrix:
    raw = data_mod.read_ratings_csv(path)
    if opts.get("binarize"):
        raw = data_mod.binarize(raw, threshold=opts["binarize_threshold"])
    if opts.get("min_interactions", 0) > 0:
        raw = data_mod.filter_min_interactions(raw, k=opts["min_interactions"])
    return data_mod.to_matrix(raw)


def _publish_params(opts: dict, transform: str | None = None) -> PublishParams:
    return PublishParams(
        epsilon=opts["epsilon"],
        delta=opts["delta"],
        eta=opts["eta"],
        mu=opts["mu"],
        q=opts["sp"],
        n1_prime_override=opts.get("n1_prime"),
        transform=transform or opts["transform"],
        seed=opts["seed"],
        w_method=opts.get("w_method", "direct"),
    )


def _cmd_publish(opts: dict, out_dir: Path) -> int:
    if not opts["input"]:
        raise UsageError("publish needs --input")
    matrix = _load_matrix(opts["input"], opts)
    pm = publish(matrix, _publish_params(opts))
    for line in pm.warnings:
        print(f"warning: {line}", file=sys.stderr)
    save_published(pm, out_dir / "published.bin")
    if opts["csv"]:
        published_to_csv(pm, out_dir / "published.csv")
    print(
        f"published {pm.source_users} users x {pm.plan.n1_prime} dims "
        f"(w={pm.plan.w:.4g}) -> {out_dir / 'published.bin'}"
    )
    return EXIT_OK


def _cmd_verify(opts: dict, out_dir: Path) -> int:
    cfg = TrialConfig(
        trials=opts["trials"],
        seed=opts["seed"],
        params=_publish_params(opts),
        matrix_dims=tuple(opts["dims"]),
        confidence=opts["confidence"],
    )
    reports = run_suite(opts["suite"], cfg, gamma=opts["gamma"])
    write_reports(reports, out_dir / "verify_report.jsonl")
    figures.render_verify_figure(reports, out_dir / "verify_report.png")
    for r in reports:
        status = "pass" if r.passed else "FAIL"
        print(f"[{status}] {r.name}: observed={r.observed:.6g} bound={r.bound:.6g}")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_CHECK_FAILED


def _cmd_train(opts: dict, out_dir: Path) -> int:
    if not opts["target"]:
        raise UsageError("train needs --target")
    target = _load_matrix(opts["target"], opts)

    published_values = None
    n1_prime = 1
    if opts["variant"] != "target-only":
        if not opts["published"]:
            raise UsageError(f"variant {opts['variant']} needs --published")
        pm = load_published(opts["published"])
        if pm.source_users != target.n_users:
            raise UsageError(
                f"published file has {pm.source_users} users but the target "
                f"matrix has {target.n_users}"
            )
        published_values = pm.values
        n1_prime = pm.plan.n1_prime

    if opts["split"]:
        split = data_mod.read_split(opts["split"], target)
        train_matrix = data_mod.apply_split_to_matrix(target, split)
    else:
        split, train_matrix = data_mod.make_leave_one_out(target, opts["split_seed"])
        data_mod.write_split(split, target, out_dir / "split.jsonl")

    cfg = TrainConfig(
        alpha=opts["alpha"],
        learning_rate=opts["lr"],
        batch_size=opts["batch"],
        epochs=opts["epochs"],
        negatives_per_positive=opts["neg_ratio"],
        seed=opts["seed"],
    )
    model = build_model(
        variant=opts["variant"],
        n1_prime=n1_prime,
        n_target_items=target.n_items,
        n_users=target.n_users,
        h=opts["h"],
        hidden=tuple(opts["hidden"]),
        seed=opts["seed"],
    )
    forbidden = {e.user: (e.val_item, e.test_item) for e in split.entries}
    trace = train(
        model, published_values, train_matrix.values, cfg, forbidden_items=forbidden
    )
    save_model(model, out_dir / "checkpoint.bin")
    with open(out_dir / "trace.csv", "w", encoding="utf-8") as fh:
        fh.write("epoch,l_rec,l_reg,l_ali,total\n")
        for row in trace:
            fh.write(
                f"{row['epoch']},{row['l_rec']!r},{row['l_reg']!r},"
                f"{row['l_ali']!r},{row['total']!r}\n"
            )
    figures.render_trace_figure(trace, out_dir / "trace.png")
    last = trace[-1] if trace else {"total": float("nan")}
    print(
        f"trained {opts['variant']} for {len(trace)} epochs "
        f"(final loss {last['total']:.6g}) -> {out_dir / 'checkpoint.bin'}"
    )
    return EXIT_OK


def _cmd_eval(opts: dict, out_dir: Path) -> int:
    for key in ("checkpoint", "target", "split"):
        if not opts[key]:
            raise UsageError(f"eval needs --{key}")
    target = _load_matrix(opts["target"], opts)
    if opts.get("published"):
        pm = load_published(opts["published"])
        if pm.source_users != target.n_users:
            raise UsageError(
                f"published file has {pm.source_users} users but the target "
                f"matrix has {target.n_users}"
            )
    model = load_model(opts["checkpoint"])
    split = data_mod.read_split(opts["split"], target)
    train_matrix = data_mod.apply_split_to_matrix(target, split)
    metrics = evaluate_split(model, train_matrix, split)
    rows = [(opts["label"], metrics)]
    write_metrics_csv(rows, out_dir / "metrics.csv")
    figures.render_metrics_figure(rows, out_dir / "metrics.png")
    printable = ", ".join(f"{k}={v:.4f}" for k, v in sorted(metrics.items()))
    print(f"{opts['label']}: {printable}")
    return EXIT_OK


def _cmd_synth(opts: dict, out_dir: Path) -> int:
    source, target = data_mod.synth_two_domain(
        users=opts["users"],
        items_per_domain=opts["items"],
        latent_dim=opts["latent_dim"],
        noise=opts["noise"],
        seed=opts["seed"],
        source_density=opts["source_density"],
        target_density=opts["target_density"],
    )
    data_mod.write_ratings_csv(data_mod.matrix_to_raw(source), out_dir / "source.csv")
    data_mod.write_ratings_csv(data_mod.matrix_to_raw(target), out_dir / "target.csv")
    print(
        f"wrote {out_dir / 'source.csv'} "
        f"({int(source.values.sum())} positives) and {out_dir / 'target.csv'} "
        f"({int(target.values.sum())} positives) for {opts['users']} users"
    )
    return EXIT_OK


def _cmd_bench(opts: dict, out_dir: Path) -> int:
    for size in opts["sizes"]:
        if ("sjlt" in opts["transforms"] or "fwht" in opts["transforms"]) and (
            size & (size - 1)
        ):
            raise UsageError(f"size {size} is not a power of two")
    rows = bench_table(
        kinds=list(opts["transforms"]),
        sizes=list(opts["sizes"]),
        n1_prime=opts["n1_prime"],
        m=opts["m"],
        q=opts["sp"],
        seed=opts["seed"],
        reps=opts["reps"],
    )
    with open(out_dir / "bench.csv", "w", encoding="utf-8") as fh:
        fh.write("transform,n1,n1_prime,m,q,seconds\n")
        for row in rows:
            fh.write(
                f"{row['transform']},{row['n1']},{row['n1_prime']},{row['m']},"
                f"{row['q']},{row['seconds']!r}\n"
            )
    figures.render_bench_figure(rows, out_dir / "bench.png")
    for row in rows:
        print(f"{row['transform']:>5} n1={row['n1']:>6}: {row['seconds']*1e3:8.2f} ms")
    return EXIT_OK


_COMMANDS = {
    "publish": _cmd_publish,
    "verify": _cmd_verify,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "synth": _cmd_synth,
    "bench": _cmd_bench,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None:
        try:
            import numba

            numba.set_num_threads(max(1, args.threads))
        except ImportError:
            pass
    try:
        opts = _merge_options(args)
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_snapshot(opts, args.command, out_dir)
        return _COMMANDS[args.command](opts, out_dir)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, TrainingDiverged) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
