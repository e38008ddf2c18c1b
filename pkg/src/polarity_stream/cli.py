"""Command line entry point: run, bench, regen, snapshot, restore.

Exit codes: 0 on success, 1 for configuration errors (bad flags, unreadable
config file, invalid hyperparameters), 2 for runtime failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import threading
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .core_model import HyperParams, Polarity, ReferenceTable, StreamTuple, load_stopwords
from .embedding import EmbeddingModel
from .metrics import regen_by_length, regen_skew, write_summary_csv
from .pipeline import ALGOS, FORMATS, Clock, Pipeline, RunConfig, RunResult, SourceError, SourceStats, read_rows
from .preprocess import tokenize_and_filter
from .synthetic import write_sentiment140_csv, write_yelp_csv

log = logging.getLogger("polarity_stream")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class ConfigError(Exception):
    """Invalid command line or configuration file."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


# -- run flags ---------------------------------------------------------------

# flag dest -> (target, field) where target is "hp" or "cfg"
_FLAG_MAP = {
    "input": ("cfg", "input"),
    "format": ("cfg", "format"),
    "algo": ("cfg", "algo"),
    "workers": ("cfg", "workers"),
    "strategy": ("hp", "strategy"),
    "pooling": ("hp", "pooling"),
    "merge_period": ("hp", "merge_period"),
    "merge_every_k": ("hp", "merge_every_k"),
    "batch": ("hp", "batch_size"),
    "batch_timeout": ("hp", "batch_timeout"),
    "dim": ("hp", "dim"),
    "window": ("hp", "window"),
    "negative": ("hp", "negative"),
    "alpha": ("hp", "alpha"),
    "subsample": ("hp", "subsample"),
    "tdw": ("hp", "tdw"),
    "ttd_step": ("hp", "ttd_step"),
    "ttd_hysteresis": ("hp", "ttd_hysteresis"),
    "wc_min": ("hp", "wc_min"),
    "wc_max": ("hp", "wc_max"),
    "mwc": ("hp", "min_word_count"),
    "lru_cap": ("hp", "lru_cap"),
    "seed": ("hp", "seed"),
    "normalize_reference_sums": ("hp", "normalize_reference_sums"),
    "rate": ("cfg", "rate"),
    "out": ("cfg", "out"),
    "metrics_out": ("cfg", "metrics_out"),
    "reference": ("cfg", "reference"),
    "stopwords": ("cfg", "stopwords"),
    "lexicon": ("cfg", "lexicon"),
    "clock": ("cfg", "clock"),
    "report_interval": ("cfg", "report_interval"),
    "queue_capacity": ("cfg", "queue_capacity"),
    "restore": ("cfg", "restore"),
    "save_model": ("cfg", "save_model"),
}


def _rate(value: str):
    if value == "max":
        return "max"
    try:
        r = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"rate must be a number or 'max', got {value!r}")
    if r <= 0:
        raise argparse.ArgumentTypeError("rate must be positive")
    return r


def _lru(value: str):
    return None if value.lower() in ("none", "off", "0") else int(value)


def add_run_flags(p: argparse.ArgumentParser, input_required: bool = True) -> None:
    """Register the pipeline flags. Unset flags are left out of the namespace
    so that values from ``--config`` can be told apart from explicit ones."""
    S = argparse.SUPPRESS
    io = p.add_argument_group("input/output")
    io.add_argument("--input", default=S, help="dataset path or tcp://[host]:port" + (" (required)" if input_required else ""))
    io.add_argument("--format", choices=FORMATS, default=S, help="input layout (default yelp)")
    io.add_argument("--rate", type=_rate, default=S, help="replay rate in tuples/s, or 'max' (default)")
    io.add_argument("--out", default=S, help="labelled output, JSON Lines ('-' for stdout)")
    io.add_argument("--metrics-out", default=S, help="periodic metrics reports, JSON Lines")
    io.add_argument("--reference", default=S, help="reference word table ([positive]/[negative] sections)")
    io.add_argument("--stopwords", default=S, help="stopword file, one word per line")
    io.add_argument("--lexicon", default=S, help="lexicon for --algo lexicon (word<TAB>score or SentiWordNet)")
    io.add_argument("--restore", default=S, help="start from this model snapshot")
    io.add_argument("--save-model", default=S, help="write the final model snapshot here")
    io.add_argument("--config", default=S, help="key=value file; explicit flags take precedence")

    alg = p.add_argument_group("algorithm")
    alg.add_argument("--algo", choices=ALGOS, default=S, help="labelling algorithm (default wcd)")
    alg.add_argument("--workers", type=int, default=S, help="parallel workers (default 1)")
    alg.add_argument("--strategy", choices=("local", "global", "hybrid"), default=S, help="model management (default hybrid)")
    alg.add_argument("--pooling", choices=("mean", "min", "max"), default=S, help="merge pooling (default mean)")
    merge = alg.add_mutually_exclusive_group()
    merge.add_argument("--merge-period", type=float, default=S, help="hybrid merge period in seconds (default 30)")
    merge.add_argument("--merge-every-k", type=int, default=S, help="hybrid merge every K batches instead")
    alg.add_argument("--batch", type=int, default=S, help="tuples per training batch (default 2000)")
    alg.add_argument("--batch-timeout", type=float, default=S, help="flush a partial batch after this many seconds")
    alg.add_argument("--dim", type=int, default=S, help="vector dimension (default 20)")
    alg.add_argument("--window", type=int, default=S, help="training context window (default 5)")
    alg.add_argument("--negative", type=int, default=S, help="negative samples per pair (default 5)")
    alg.add_argument("--alpha", type=float, default=S, help="learning rate (default 0.025)")
    alg.add_argument("--subsample", type=float, default=S, help="frequent-word subsampling threshold (off by default)")
    alg.add_argument("--mwc", type=int, default=S, help="minimum word count before a word is trained (default 1)")
    alg.add_argument("--lru-cap", type=_lru, default=S, help="vocabulary cap for LRU pruning, or 'none'")
    alg.add_argument("--seed", type=int, default=S, help="random seed (default 0)")
    alg.add_argument("--normalize-reference-sums", action="store_true", default=S,
                     help="divide each similarity sum by its covered reference count")

    ttd = p.add_argument_group("trend detection")
    ttd.add_argument("--tdw", type=int, default=S, help="trend window in tuples (default 1000)")
    step = ttd.add_mutually_exclusive_group()
    step.add_argument("--ttd-step", type=float, default=S, help="coefficient step per window (default 0.01)")
    step.add_argument("--no-ttd", action="store_true", default=S, help="disable trend detection (step 0)")
    ttd.add_argument("--ttd-hysteresis", type=float, default=S, help="dead band around a 50/50 window (default 0.05)")
    ttd.add_argument("--wc-min", type=float, default=S, help="lower coefficient clamp (default 0.9)")
    ttd.add_argument("--wc-max", type=float, default=S, help="upper coefficient clamp (default 1.1)")

    rt = p.add_argument_group("runtime")
    rt.add_argument("--clock", choices=("wall", "logical"), default=S,
                    help="timestamp source; 'logical' stamps tuples with their seq for reproducible output")
    rt.add_argument("--report-interval", type=float, default=S, help="seconds between metrics reports (default 5)")
    rt.add_argument("--queue-capacity", type=int, default=S, help="batches buffered per worker queue (default 8)")


def read_config_file(path: str | Path) -> dict:
    """Parse ``key = value`` lines; '#' starts a comment. Keys use flag names
    with dashes or underscores. Values are typed by :func:`_coerce` later."""
    out: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]")):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FLAG_MAP and key != "no_ttd":
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value.strip("\"'")
    return out


_BOOL = {"true": True, "yes": True, "1": True, "on": True, "false": False, "no": False, "0": False, "off": False}


def _coerce(key: str, value):
    if not isinstance(value, str):
        return value
    if key in ("normalize_reference_sums", "no_ttd"):
        if value.lower() not in _BOOL:
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        return _BOOL[value.lower()]
    if key == "rate":
        return _rate(value)
    if key == "lru_cap":
        return _lru(value)
    if key in ("workers", "merge_every_k", "batch", "dim", "window", "negative", "tdw", "mwc", "seed", "queue_capacity"):
        return int(value)
    if key in ("merge_period", "batch_timeout", "alpha", "subsample", "ttd_step", "ttd_hysteresis",
               "wc_min", "wc_max", "report_interval"):
        return float(value)
    return value


def build_config(args: argparse.Namespace, require_input: bool = True) -> RunConfig:
    """Combine ``--config`` file values with explicit flags into a RunConfig."""
    given = {k: v for k, v in vars(args).items() if k in _FLAG_MAP or k == "no_ttd"}
    settings: dict = {}
    if getattr(args, "config", None):
        settings.update(read_config_file(args.config))
    # an explicit merge/step flag overrides the alternative from the file
    if "merge_period" in given:
        settings.pop("merge_every_k", None)
    if "merge_every_k" in given:
        settings.pop("merge_period", None)
    if "ttd_step" in given:
        settings.pop("no_ttd", None)
    settings.update(given)
    try:
        settings = {k: _coerce(k, v) for k, v in settings.items()}
    except (ValueError, argparse.ArgumentTypeError) as exc:
        raise ConfigError(str(exc)) from exc
    if settings.pop("no_ttd", False):
        settings["ttd_step"] = 0.0
    if require_input and "input" not in settings:
        raise ConfigError("--input is required")

    hp_kw, cfg_kw = {}, {}
    for key, value in settings.items():
        target, name = _FLAG_MAP[key]
        (hp_kw if target == "hp" else cfg_kw)[name] = value
    try:
        hp = HyperParams(**hp_kw)
        return RunConfig(hp=hp, **cfg_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


# -- helpers shared by bench and regen -------------------------------------


def load_rows(path: str | Path, fmt: str) -> list[tuple[str, Optional[Polarity]]]:
    stats = SourceStats()
    try:
        with open(path, encoding="utf-8", errors="replace", newline="") as fh:
            rows = list(read_rows(fh, fmt, stats))
    except OSError as exc:
        raise SourceError(f"cannot open {path}: {exc}") from exc
    if stats.malformed:
        log.info("%s: skipped %d malformed rows", path, stats.malformed)
    return rows


def write_rows(rows: Iterable[tuple[str, Optional[Polarity]]], path: str | Path, fmt: str) -> int:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if fmt == "plain":
            n = 0
            for text, _ in rows:
                fh.write(text.replace("\n", " ") + "\n")
                n += 1
            return n
        writer = write_yelp_csv if fmt == "yelp" else write_sentiment140_csv
        return writer(((label, text) for text, label in rows), fh)


def rows_source(rows: Sequence[tuple[str, Optional[Polarity]]], clock: Clock) -> Iterator[StreamTuple]:
    for seq, (text, label) in enumerate(rows):
        yield StreamTuple(seq=seq, ts=clock.ingest(seq), text=text, true_label=label)


def prepare_rows(path: str | Path, fmt: str, limit: Optional[int] = None, shuffle_seed: Optional[int] = None):
    """Rows of a dataset, optionally shuffled with a seed and truncated."""
    rows = load_rows(path, fmt)
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(rows))
        rows = [rows[i] for i in order]
    if limit is not None:
        rows = rows[:limit]
    return rows


def run_rows(rows: Sequence[tuple[str, Optional[Polarity]]], cfg: RunConfig) -> RunResult:
    pipe = Pipeline(cfg, source=rows_source(rows, Clock(cfg.clock)))
    return pipe.run()


def summary_row(result: RunResult, **params) -> dict:
    rep = result.report
    return {
        **params,
        "tuples": result.outputs,
        "elapsed_s": round(result.elapsed_s, 3),
        "throughput": round(result.throughput, 1),
        "p95_latency_ms": rep.p95_latency_ms,
        "accuracy": rep.accuracy,
        "window_accuracy": rep.window_accuracy,
        "precision": rep.precision,
        "recall": rep.recall,
        "f1": rep.f1,
    }


# -- bench -----------------------------------------------------------------

GRIDS = {
    "algo": ("algo", list(ALGOS)),
    "strategy": ("strategy", ["local", "hybrid", "global"]),
    "workers": ("workers", [1, 2, 4, 8]),
    "batch": ("batch_size", [200, 500, 1000, 2000, 5000]),
    "dim": ("dim", [10, 20, 50, 100, 500]),
    "skew": ("pos_fraction", [0.0, 0.125, 0.25, 0.5, 0.75, 0.875, 1.0]),
    "length": ("length_bucket", None),
    "ttd": ("ttd_step", [0.0, 0.01]),
}


def _with(cfg: RunConfig, **changes) -> RunConfig:
    hp = cfg.hp.to_dict()
    top = cfg.to_dict()
    top.pop("hp")
    for k, v in changes.items():
        if k in hp:
            hp[k] = v
        else:
            top[k] = v
    return RunConfig(hp=HyperParams.from_dict(hp), **top)


def bench(rows: Sequence[tuple[str, Optional[Polarity]]], base: RunConfig, grid: str,
          values: Optional[Sequence] = None, seed: int = 0,
          stopwords: Optional[frozenset] = None) -> list[dict]:
    """Run one experiment grid over ``rows`` and return one summary dict per point."""
    if grid not in GRIDS:
        raise ConfigError(f"unknown grid {grid!r}; choose from {sorted(GRIDS)}")
    name, default_values = GRIDS[grid]
    out = []
    if grid == "skew":
        for frac in values or default_values:
            subset = regen_skew(rows, float(frac), seed, label_of=lambda r: r[1])
            if not subset:
                continue
            out.append(summary_row(run_rows(subset, base), grid=grid, pos_fraction=frac))
        return out
    if grid == "length":
        sw = stopwords if stopwords is not None else load_stopwords(base.stopwords)
        bounds = tuple(values) if values else (30, 100, 300)
        buckets = regen_by_length(rows, lambda r: _token_count(r[0], sw), bounds)
        edges = [0, *bounds, None]
        for k, subset in enumerate(buckets):
            label = f"{edges[k] + (1 if k else 0)}-{edges[k + 1] if edges[k + 1] is not None else 'inf'}"
            if subset:
                out.append(summary_row(run_rows(subset, base), grid=grid, length_bucket=label))
        return out
    for v in values or default_values:
        cfg = _with(base, **{name: v})
        out.append(summary_row(run_rows(rows, cfg), grid=grid, **{name: v}))
    return out


def _token_count(text: str, stopwords) -> int:
    return len(tokenize_and_filter(StreamTuple(0, 0.0, text), stopwords).tokens)


# -- subcommands ---------------------------------------------------------------


def _echo_config(cfg: RunConfig) -> None:
    print(json.dumps({"config": cfg.to_dict()}, sort_keys=True), file=sys.stderr, flush=True)


def _install_signal_handlers(pipe: Pipeline) -> None:
    if threading.current_thread() is not threading.main_thread():
        return

    def handler(signum, frame):
        log.warning("signal %d received, draining", signum)
        pipe.stop.set()

    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, handler)


def _execute(cfg: RunConfig) -> RunResult:
    sink = sys.stdout if cfg.out == "-" else None
    if sink is not None:
        cfg = _with(cfg, out=None)
    pipe = Pipeline(cfg, sink=sink)
    _install_signal_handlers(pipe)
    return pipe.run()


def _final_summary(result: RunResult) -> dict:
    return {
        "inputs": result.inputs,
        "outputs": result.outputs,
        "malformed": result.malformed,
        "elapsed_s": round(result.elapsed_s, 3),
        "throughput": round(result.throughput, 1),
        "report": result.report.to_dict(),
    }


def cmd_run(args) -> int:
    cfg = build_config(args)
    _echo_config(cfg)
    result = _execute(cfg)
    print(json.dumps({"summary": _final_summary(result)}), file=sys.stderr)
    return EXIT_OK


def _grid_values(grid: str, raw: Optional[str]):
    if not raw:
        return None
    items = [v.strip() for v in raw.split(",") if v.strip()]
    try:
        if grid in ("workers", "batch", "dim", "length"):
            return [int(v) for v in items]
        if grid in ("skew", "ttd"):
            return [float(v) for v in items]
    except ValueError as exc:
        raise ConfigError(f"--values: {exc}") from exc
    return items


def cmd_bench(args) -> int:
    cfg = build_config(args)
    if cfg.input.startswith("tcp://"):
        raise ConfigError("bench needs a dataset file, not a socket")
    _echo_config(cfg)
    values = _grid_values(args.grid, args.values)
    rows = prepare_rows(cfg.input, cfg.format, args.limit, args.shuffle_seed)
    results = []
    for rep in range(args.repeat):
        for row in bench(rows, cfg, args.grid, values, seed=args.regen_seed):
            row["repeat"] = rep
            results.append(row)
            print(json.dumps(row), file=sys.stderr, flush=True)
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            write_summary_csv(results, fh)
    else:
        write_summary_csv(results, sys.stdout)
    return EXIT_OK


def cmd_regen(args) -> int:
    rows = load_rows(args.input, args.format)
    if args.mode == "skew":
        if args.fraction is None:
            raise ConfigError("regen skew needs --fraction")
        subset = regen_skew(rows, args.fraction, args.seed, label_of=lambda r: r[1])
        n = write_rows(subset, args.out, args.format)
        pos = sum(1 for _, l in subset if l is Polarity.POSITIVE)
        print(json.dumps({"out": args.out, "rows": n, "positive": pos,
                          "pos_fraction": pos / n if n else None}))
        return EXIT_OK
    sw = load_stopwords(args.stopwords)
    bounds = tuple(int(b) for b in args.bounds.split(","))
    if list(bounds) != sorted(set(bounds)):
        raise ConfigError("--bounds must be strictly increasing")
    buckets = regen_by_length(rows, lambda r: _token_count(r[0], sw), bounds)
    stem = Path(args.out)
    suffix = stem.suffix or ".csv"
    report = []
    for k, subset in enumerate(buckets):
        path = stem.with_name(f"{stem.stem}.len{k}{suffix}")
        write_rows(subset, path, args.format)
        report.append({"bucket": k, "path": str(path), "rows": len(subset)})
    print(json.dumps({"bounds": bounds, "buckets": report}))
    return EXIT_OK


def cmd_snapshot(args) -> int:
    """Train over an input and write the final model."""
    args.save_model = args.model
    cfg = build_config(args)
    _echo_config(cfg)
    result = _execute(cfg)
    info = _model_info(result.model, cfg)
    print(json.dumps({"summary": _final_summary(result), "model": info}), file=sys.stderr)
    return EXIT_OK


def cmd_restore(args) -> int:
    """Inspect a snapshot; with --input, continue the stream from it."""
    try:
        model = EmbeddingModel.load(args.model)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load snapshot {args.model}: {exc}") from exc
    if not hasattr(args, "input"):
        cfg = build_config(args, require_input=False)
        print(json.dumps({"model": _model_info(model, cfg)}))
        return EXIT_OK
    args.restore = args.model
    cfg = build_config(args)
    if cfg.hp.dim != model.dim:
        if "dim" in vars(args):
            raise ConfigError(f"--dim {cfg.hp.dim} does not match snapshot dim {model.dim}")
        cfg = _with(cfg, dim=model.dim)
    _echo_config(cfg)
    result = _execute(cfg)
    print(json.dumps({"summary": _final_summary(result)}), file=sys.stderr)
    return EXIT_OK


def _model_info(model: Optional[EmbeddingModel], cfg: RunConfig) -> Optional[dict]:
    if model is None:
        return None
    ref = ReferenceTable.load(cfg.reference) if cfg.reference else ReferenceTable.default()
    return {
        "dim": model.dim,
        "vocab": len(model),
        "pending": len(model.pending),
        "total_tokens": int(model.total_tokens),
        "reference_positive_covered": sum(w in model for w in ref.positive),
        "reference_negative_covered": sum(w in model for w in ref.negative),
    }


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="polarity-stream", description="Online unsupervised polarity labelling of text streams.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="label a stream")
    add_run_flags(r)
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="run an experiment grid and print a summary CSV")
    add_run_flags(b)
    b.add_argument("--grid", choices=sorted(GRIDS), required=True, help="which parameter to sweep")
    b.add_argument("--values", help="comma-separated grid values (defaults per grid)")
    b.add_argument("--limit", type=int, help="use only the first N rows (after shuffling)")
    b.add_argument("--shuffle-seed", type=int, help="shuffle rows with this seed before truncating")
    b.add_argument("--regen-seed", type=int, default=0, help="seed for skew resampling")
    b.add_argument("--repeat", type=int, default=1, help="repetitions per grid point")
    b.add_argument("--csv", help="write the summary CSV here instead of stdout")
    b.set_defaults(func=cmd_bench)

    g = sub.add_parser("regen", help="derive skewed or length-bucketed datasets")
    g.add_argument("mode", choices=("skew", "length"))
    g.add_argument("--input", required=True)
    g.add_argument("--format", choices=FORMATS, default="yelp")
    g.add_argument("--out", required=True, help="output file (length mode: name stem for the bucket files)")
    g.add_argument("--fraction", type=float, help="positive share for skew mode")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--bounds", default="30,100,300", help="token-count bucket bounds for length mode")
    g.add_argument("--stopwords", help="stopword file used when counting tokens")
    g.set_defaults(func=cmd_regen)

    s = sub.add_parser("snapshot", help="train over an input and write a model snapshot")
    s.add_argument("--model", required=True, help="snapshot path to write")
    add_run_flags(s)
    s.set_defaults(func=cmd_snapshot)

    t = sub.add_parser("restore", help="inspect a snapshot, or continue a stream from it with --input")
    t.add_argument("model", help="snapshot path")
    add_run_flags(t, input_required=False)
    t.set_defaults(func=cmd_restore)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SourceError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:  # anything else is a failure of the run itself
        log.exception("run failed")
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
