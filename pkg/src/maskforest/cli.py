"""Command-line entry point.

Exit codes: 0 success, 1 configuration, data or protocol error, 2 malformed
transcript given to ``audit``. ``MASKFOREST_LOG`` (error|warn|info|debug)
sets log verbosity.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import evaluation, isoforest, paillier
from .protocol import (
    OutlierPolicy,
    ProtocolAbort,
    RoundConfig,
    Transcript,
    TranscriptFormatError,
    audit_transcript,
    run_full_round,
)

log = logging.getLogger("maskforest")

EXIT_OK, EXIT_DOMAIN, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    """Bad flag value; reported with exit code 1."""


class InputError(Exception):
    """Unreadable or unwritable file; reported with exit code 1."""


class TranscriptError(Exception):
    """Audit input that is not a well-formed transcript; exit code 2."""


def _setup_logging():
    level = os.environ.get("MASKFOREST_LOG", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _csv_list(text, cast=str):
    try:
        return [cast(tok.strip()) for tok in str(text).split(",") if tok.strip()]
    except ValueError:
        raise UsageError(f"cannot parse list {text!r}") from None


def _seed(text) -> int:
    try:
        value = int(text, 0) if isinstance(text, str) else int(text)
    except ValueError:
        raise UsageError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= value < 2 ** 64:
        raise UsageError("seed must be an unsigned 64-bit integer")
    return value


def _merge_config(args, defaults: dict):
    """Fill unset flags from ``--config`` JSON, then from built-in defaults."""
    overrides = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                overrides = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(overrides, dict):
            raise InputError("config file must hold a JSON object")
    for key, default in defaults.items():
        if getattr(args, key, None) is None:
            setattr(args, key, overrides.get(key, default))


def _load(path):
    try:
        return evaluation.load_csv(path)
    except evaluation.ParseError as exc:
        raise InputError(str(exc)) from None
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def _makedirs(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create {path}: {exc.strerror}") from None


# -- run --------------------------------------------------------------------

RUN_DEFAULTS = dict(data=None, clients=None, algo="if", trees=isoforest.DEFAULT_TREES,
                    psi=isoforest.DEFAULT_PSI, T=2.0, keysize=paillier.DEFAULT_KEYSIZE,
                    contamination=None, threshold=None, seed=None, out=None)


def _policy(args) -> OutlierPolicy:
    if args.contamination is not None and args.threshold is not None:
        raise UsageError("use either --contamination or --threshold, not both")
    try:
        if args.threshold is not None:
            return OutlierPolicy(threshold=float(args.threshold))
        return OutlierPolicy(contamination=float(args.contamination if args.contamination is not None else 0.1))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_run(args) -> int:
    _merge_config(args, RUN_DEFAULTS)
    for flag in ("data", "clients", "seed", "out"):
        if getattr(args, flag) is None:
            raise UsageError(f"--{flag} is required")
    m = int(args.clients)
    if m < 2:
        raise UsageError(f"--clients must be at least 2 (the protocol requires m >= 2), got {m}")
    if args.algo not in isoforest.ALGOS:
        raise UsageError(f"--algo must be one of {', '.join(isoforest.ALGOS)}")
    if int(args.keysize) not in paillier.SUPPORTED_KEYSIZES:
        raise UsageError(f"--keysize must be one of {paillier.SUPPORTED_KEYSIZES}")
    if int(args.trees) < 1 or int(args.psi) < 1:
        raise UsageError("--trees and --psi must be positive")
    if not float(args.T) > 1:
        raise UsageError("--T must be greater than 1")
    policy = _policy(args)
    seed = _seed(args.seed)

    paths = _csv_list(args.data)
    datasets = [_load(p) for p in paths]
    if len(datasets) == 1:
        parts = evaluation.partition_uniform(datasets[0], m, seed)
    elif len(datasets) == m:
        parts = datasets
    else:
        raise UsageError(f"give one dataset to partition or exactly {m} per-client files")
    if len({p.dims for p in parts}) != 1:
        raise UsageError("all client datasets must have the same number of columns")

    config = RoundConfig(data=[p.features for p in parts], labels=[p.labels for p in parts],
                         algo=args.algo, t=int(args.trees), psi=int(args.psi), t_param=float(args.T),
                         keysize=int(args.keysize), policy=policy, seed=seed)
    result = run_full_round(config)

    _makedirs(args.out)
    try:
        for i, (x, labels) in enumerate(result.cleaned):
            evaluation.save_csv(evaluation.LabeledDataset(x, labels, f"client_{i}"),
                                os.path.join(args.out, f"client_{i}_clean.csv"))
        with open(os.path.join(args.out, "scores.csv"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write("row,score\n")
            for k, s in enumerate(result.scores):
                fh.write(f"{k},{s!r}\n")
        result.transcript.save(os.path.join(args.out, "transcript.ndjson"))
    except OSError as exc:
        raise InputError(f"cannot write outputs: {exc}") from None

    removed = [int(f.sum()) for f in result.flags]
    print(f"round complete: {len(result.scores)} rows scored by {args.algo.upper()}, "
          f"{sum(removed)} flagged ({', '.join(f'client {i}: {r}' for i, r in enumerate(removed))})")
    print(f"outputs written to {args.out}")
    return EXIT_OK


# -- bench ------------------------------------------------------------------

BENCH_DEFAULTS = dict(data=None, runs=evaluation.DEFAULT_RUNS, algos="if,eif",
                      modes="standard,multiparty", T="2,10,100,1000",
                      clients=evaluation.DEFAULT_CLIENTS, trees=isoforest.DEFAULT_TREES,
                      psi=isoforest.DEFAULT_PSI, keysize=evaluation.BENCH_KEYSIZE,
                      seed=0, out=None, workers=1)


def cmd_bench(args) -> int:
    _merge_config(args, BENCH_DEFAULTS)
    if args.data is None or args.out is None:
        raise UsageError("--data and --out are required")
    runs = int(args.runs)
    if runs < 1:
        raise UsageError("--runs must be at least 1")
    datasets = [_load(p) for p in _csv_list(args.data)]
    try:
        config = evaluation.BenchConfig(
            datasets=datasets, algos=tuple(_csv_list(args.algos)), modes=tuple(_csv_list(args.modes)),
            t_values=tuple(_csv_list(args.T, float)), runs=runs, m=int(args.clients),
            t=int(args.trees), psi=int(args.psi), keysize=int(args.keysize),
            seed=_seed(args.seed), workers=int(args.workers))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if any(not t > 1 for t in config.t_values):
        raise UsageError("every --T value must exceed 1")
    results, errors = evaluation.bench(config)
    _makedirs(args.out)
    try:
        evaluation.write_results_csv(results, os.path.join(args.out, "results.csv"))
        evaluation.write_summary_json(results, os.path.join(args.out, "summary.json"))
    except OSError as exc:
        raise InputError(f"cannot write outputs: {exc}") from None
    for group in evaluation.summarize(results):
        t = "-" if group["T"] is None else f"{group['T']:g}"
        print(f"{group['dataset']:<12} {group['algo']:<4} {group['mode']:<11} T={t:<6} "
              f"mean AUROC {group['mean']:.4f} (sd {group['std']:.4f}, n={group['runs']})")
    if errors:
        print(f"{len(errors)} cell(s) failed; see log", file=sys.stderr)
        return EXIT_DOMAIN
    return EXIT_OK


# -- synth ------------------------------------------------------------------

def cmd_synth(args) -> int:
    if args.inliers < 1 or args.outliers < 0 or args.dims < 1:
        raise UsageError("need --inliers >= 1, --outliers >= 0, --dims >= 1")
    ds = evaluation.synth(args.inliers, args.outliers, args.dims, _seed(args.seed))
    try:
        evaluation.save_csv(ds, args.out)
    except OSError as exc:
        raise InputError(f"cannot write {args.out}: {exc.strerror}") from None
    print(f"wrote {len(ds)} rows ({ds.n_outliers} outliers) to {args.out}")
    return EXIT_OK


# -- audit ------------------------------------------------------------------

def cmd_audit(args) -> int:
    try:
        transcript = Transcript.load(args.transcript)
    except OSError as exc:
        raise TranscriptError(f"cannot read {args.transcript}: {exc.strerror}") from None
    except (TranscriptFormatError, UnicodeDecodeError) as exc:
        raise TranscriptError(f"malformed transcript: {exc}") from None
    report = audit_transcript(transcript)
    print(f"audited {len(transcript)} envelopes")
    print(report)
    if not report.ok:
        print(f"privacy audit FAILED: {', '.join(report.failed_checks)}")
        return EXIT_DOMAIN
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maskforest",
                                     description="Two-server masked outlier detection for federated data.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute one protocol round")
    run.add_argument("--data", help="CSV to partition, or comma-separated per-client CSVs")
    run.add_argument("--clients", type=int)
    run.add_argument("--algo", choices=isoforest.ALGOS)
    run.add_argument("--trees", type=int)
    run.add_argument("--psi", type=int)
    run.add_argument("--T", type=float)
    run.add_argument("--keysize", type=int)
    group = run.add_mutually_exclusive_group()
    group.add_argument("--contamination", type=float)
    group.add_argument("--threshold", type=float)
    run.add_argument("--seed")
    run.add_argument("--out")
    run.add_argument("--config", help="JSON file with defaults; flags win")
    run.set_defaults(func=cmd_run)

    bench = sub.add_parser("bench", help="standard vs multiparty AUROC sweep")
    bench.add_argument("--data")
    bench.add_argument("--runs", type=int)
    bench.add_argument("--algos")
    bench.add_argument("--modes")
    bench.add_argument("--T")
    bench.add_argument("--clients", type=int)
    bench.add_argument("--trees", type=int)
    bench.add_argument("--psi", type=int)
    bench.add_argument("--keysize", type=int)
    bench.add_argument("--workers", type=int)
    bench.add_argument("--seed")
    bench.add_argument("--out")
    bench.add_argument("--config", help="JSON file with defaults; flags win")
    bench.set_defaults(func=cmd_bench)

    synth = sub.add_parser("synth", help="write a synthetic labelled dataset")
    synth.add_argument("--inliers", type=int, required=True)
    synth.add_argument("--outliers", type=int, required=True)
    synth.add_argument("--dims", type=int, required=True)
    synth.add_argument("--seed", required=True)
    synth.add_argument("--out", required=True)
    synth.set_defaults(func=cmd_synth)

    audit = sub.add_parser("audit", help="privacy-audit a transcript")
    audit.add_argument("--transcript", required=True)
    audit.set_defaults(func=cmd_audit)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse reports usage problems with status 2; they are config errors here
        return EXIT_DOMAIN if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (UsageError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except TranscriptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ProtocolAbort, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
