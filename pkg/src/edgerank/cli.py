"""Command line: ``edgerank {certainty,eval,bench,demo-train}``.

Exit codes: 0 success, 2 I/O error, 3 data shape/content error, 4 numeric
divergence.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .bench import LOSSES, format_report, run_bench
from .certainty import MatchMode, MatchTolerance, agreement_histogram, certainty_map, format_histogram
from .demo import DemoConfig, DivergenceError, train
from .errors import (
    CertaintyCoverageError,
    ConfigError,
    DatasetError,
    FormatError,
    InvalidAnnotationSet,
    NoPositivesError,
    RangeError,
    ShapeError,
)
from .evalbench import CertaintyLevel, evaluate, evaluate_uar, format_pr_table, nms_thin
from .gridcore import CertaintyMap, load_annotation_set, read_map, write_map
from .losses import LossConfig
from .manifest import ManifestError, load_manifest, read_config

log = logging.getLogger("edgerank")

EXIT_OK, EXIT_IO, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4


def _threads(args) -> int:
    n = args.threads
    if n is None:
        env = os.environ.get("EDGERANK_THREADS")
        n = int(env) if env else 1
    return n if n > 0 else (os.cpu_count() or 1)


def _parallel_map(fn, items, threads):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _csv(kind):
    return lambda text: [kind(x) for x in text.split(",") if x.strip()]


def cmd_certainty(args) -> int:
    entries = load_manifest(args.manifest)
    if not entries:
        log.warning("manifest %s lists no entries; nothing to do", args.manifest)
        return EXIT_OK
    out = _out_dir(args)
    tol = MatchTolerance(args.d)
    threads = _threads(args)

    def work(entry):
        s = load_annotation_set(entry.annotation_paths)
        return s, certainty_map(s, tol, args.mode)

    results = _parallel_map(work, entries, threads)
    for entry, (s, cert) in zip(entries, results):
        log.info("%s: %d annotators, resolved radius %d px", entry.image_id, s.n, tol.resolve(s.shape))
        write_map(cert, out / f"{entry.image_id}.emap")
        hist = agreement_histogram(cert, s.n)
        if args.histogram:
            (out / f"{entry.image_id}.hist.tsv").write_text(format_histogram(hist, s.n))
    return EXIT_OK


def _load_eval_inputs(args, need_cert: bool):
    entries = load_manifest(args.manifest, need_prediction=True)
    tol = MatchTolerance(args.d)

    def work(entry):
        pred = np.asarray(read_map(entry.prediction_path), dtype=np.float32)
        thin = nms_thin(pred)
        gts = load_annotation_set(entry.annotation_paths)
        cert = None
        if need_cert:
            if entry.certainty_path is not None:
                cert = CertaintyMap(np.asarray(read_map(entry.certainty_path), dtype=np.float32))
            else:
                cert = certainty_map(gts, tol, args.mode)
        return thin, gts, cert

    loaded = _parallel_map(work, entries, _threads(args))
    return entries, tol, loaded


def cmd_eval(args) -> int:
    entries, tol, loaded = _load_eval_inputs(args, args.uar)
    if not entries:
        log.warning("manifest %s lists no entries; nothing to do", args.manifest)
        return EXIT_OK
    preds = [x[0] for x in loaded]
    gts = [x[1] for x in loaded]
    thresholds = np.arange(1, args.thresholds + 1) / (args.thresholds + 1)
    threads = _threads(args)
    out = _out_dir(args)
    scores = evaluate(preds, gts, tol, thresholds, args.mode, threads)
    (out / "pr_table.tsv").write_text(format_pr_table(scores))
    (out / "summary.txt").write_text(scores.summary() + "\n")
    print(scores.summary())
    if args.uar:
        certs = [x[2] for x in loaded]
        blocks = []
        for level in CertaintyLevel:
            s = evaluate_uar(preds, gts, certs, level, tol, thresholds, args.mode, threads)
            blocks.append(f"[{level.label}]\n{s.summary()}\n")
            (out / f"pr_table_{level.name.lower()}.tsv").write_text(format_pr_table(s))
        text = "\n".join(blocks)
        (out / "uar_summary.txt").write_text(text)
        print(text, end="")
    return EXIT_OK


def _loss_config(args) -> LossConfig:
    if not args.config:
        return LossConfig()
    values = read_config(args.config)
    return DemoConfig.from_mapping(values).loss


def cmd_bench(args) -> int:
    cfg = _loss_config(args)
    rows = run_bench(
        sizes=args.sizes,
        positive_fractions=args.fractions,
        strategies=args.strategies,
        losses=args.losses,
        repeats=args.repeats,
        cfg=cfg,
        seed=args.seed,
        progress=lambda r: log.info("%s %s %d %.2f done", r.strategy, r.loss, r.size, r.positive_fraction),
    )
    report = format_report(rows)
    if args.out:
        (_out_dir(args) / "bench.tsv").write_text(report)
    print(report, end="")
    return EXIT_OK


def cmd_demo_train(args) -> int:
    values = read_config(args.config) if args.config else {}
    if args.seed is not None:
        values["seed"] = str(args.seed)
    for key in ("iterations", "lr", "alpha", "size"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = str(v)
    cfg = DemoConfig.from_mapping(values)
    lines = []

    def emit(it, r, s):
        line = f"{it}\t{r:.6f}\t{s:.6f}"
        lines.append(line)
        print(line, flush=True)

    try:
        train(cfg, emit)
    finally:
        if args.out and lines:
            (_out_dir(args) / "loss_curve.tsv").write_text("\n".join(lines) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--manifest", type=Path, help="tab-separated manifest file")
    common.add_argument("--config", type=Path, help="key=value config file")
    common.add_argument("--out", type=Path, default=None, help="output directory")
    common.add_argument("--threads", type=int, default=None, help="worker threads (0 = auto; env EDGERANK_THREADS)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="edgerank", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("certainty", parents=[common], help="certainty maps from annotation sets")
    p.add_argument("--d", type=float, default=0.0075, help="match tolerance as a fraction of the image diagonal")
    p.add_argument("--mode", choices=[m.value for m in MatchMode], default="greedy")
    p.add_argument("--histogram", action="store_true", help="also write level<TAB>count<TAB>fraction reports")
    p.set_defaults(func=cmd_certainty, need_manifest=True, need_out=True)

    p = sub.add_parser("eval", parents=[common], help="ODS/OIS/AP of predictions")
    p.add_argument("--d", type=float, default=0.0075)
    p.add_argument("--thresholds", type=int, default=99, help="number of uniform thresholds k/(N+1)")
    p.add_argument("--mode", choices=[m.value for m in MatchMode], default="greedy")
    p.add_argument("--uar", action="store_true", help="also score every certainty level")
    p.set_defaults(func=cmd_eval, need_manifest=True, need_out=True)

    p = sub.add_parser("bench", parents=[common], help="time the loss kernels")
    p.add_argument("--sizes", type=_csv(int), default=[320])
    p.add_argument("--fractions", type=_csv(float), default=[0.01, 0.03, 0.07])
    p.add_argument("--strategies", type=_csv(str), default=["reference", "semi", "vectorized"])
    p.add_argument("--losses", type=_csv(str), default=["rank", "rank+sort"], help=f"subset of {','.join(LOSSES)}")
    p.add_argument("--repeats", type=int, default=100)
    p.set_defaults(func=cmd_bench, need_manifest=False, need_out=False)

    p = sub.add_parser("demo-train", parents=[common], help="toy training with error-driven gradients")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--size", type=int, default=None)
    p.set_defaults(func=cmd_demo_train, need_manifest=False, need_out=False)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    log.setLevel(logging.INFO if args.verbose else logging.WARNING)
    if args.need_manifest and args.manifest is None:
        parser.error(f"{args.command} needs --manifest")
    if args.need_out and args.out is None:
        parser.error(f"{args.command} needs --out")
    if args.seed is None and args.command == "bench":
        args.seed = 0
    try:
        return args.func(args)
    except (ManifestError, FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (
        ShapeError,
        InvalidAnnotationSet,
        RangeError,
        NoPositivesError,
        CertaintyCoverageError,
        DatasetError,
        ConfigError,
    ) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
