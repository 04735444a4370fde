"""Command-line front end: bench, collect, analyze, simulate, profiles.

Exit codes: 0 success, 1 usage error, 2 device or I/O error, 3 aborted,
4 quality failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import signal
import sys
import threading
from dataclasses import dataclass, fields
from typing import Sequence, TextIO

from . import __version__, wire
from .bench import (
    ABORTED,
    CollectError,
    CollectJob,
    CollectProgress,
    SweepAborted,
    SweepConfig,
    peak,
    sweep,
    write_csv,
)
from .devices import BUILTIN_PROFILES, DeviceError, SimulatedChip, load_profiles, open_device, submit_command
from .quality import (
    BIT,
    BYTE,
    DISPLAY_DECIMALS,
    FAIL,
    InsufficientData,
    QualityReport,
    analyze_file,
    assess,
    chi_square_bucket,
    split_analyze,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_ABORTED = 3
EXIT_QUALITY = 4


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    backend: str = "intel"
    seed: int = 0
    bias: float | None = None
    out: str | None = None
    request_size: int = 2048
    total: int | None = None
    min: int = 1
    max: int = 2048
    step: int = 1
    reps: int = 10
    pieces: int = 1
    format: str = "text"
    progress_every: int = 100
    workers: int = 1


_INT_KEYS = {"seed", "request_size", "total", "min", "max", "step", "reps", "pieces", "progress_every", "workers"}


def _read_run_section(path: str) -> dict:
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not parser.has_section("run"):
        return {}
    known = {f.name for f in fields(RunConfig)}
    values = {}
    for key, raw in parser.items("run"):
        name = key.replace("-", "_")
        if name not in known:
            raise UsageError(f"{path}: unknown [run] key {key!r}")
        try:
            if name in _INT_KEYS:
                values[name] = int(raw, 0)
            elif name == "bias":
                values[name] = float(raw)
            else:
                values[name] = raw
        except ValueError as exc:
            raise UsageError(f"{path}: bad value for {key}: {raw!r}") from exc
    return values


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Flags override the config file's [run] section, which overrides defaults."""
    merged = {}
    if getattr(args, "config", None):
        merged.update(_read_run_section(args.config))
    for f in fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            merged[f.name] = value
    cfg = RunConfig(**merged)
    if cfg.request_size < 1:
        raise UsageError("--request-size must be >= 1")
    if cfg.total is not None and cfg.total < 1:
        raise UsageError("--total must be >= 1")
    if not 0 <= cfg.seed < 2**64:
        raise UsageError("--seed must be a 64-bit unsigned integer")
    if cfg.pieces < 1:
        raise UsageError("--pieces must be >= 1")
    if cfg.format not in ("text", "csv"):
        raise UsageError("--format must be text or csv")
    if cfg.progress_every < 1:
        raise UsageError("--progress-every must be >= 1")
    return cfg


def _open(cfg: RunConfig, args: argparse.Namespace):
    profiles = load_profiles(args.config) if getattr(args, "config", None) else None
    try:
        device = open_device(cfg.backend, seed=cfg.seed, bias=cfg.bias, profiles=profiles)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    except OSError as exc:
        raise DeviceError(f"cannot open backend {cfg.backend}: {exc}") from exc
    if cfg.bias is not None and not isinstance(device, SimulatedChip):
        device.close()
        raise UsageError("--bias only applies to simulated chip backends")
    return device


def _err(msg: str) -> None:
    print(f"tpmrng: {msg}", file=sys.stderr)


# -- bench -------------------------------------------------------------------

def cmd_bench(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    try:
        sweep_cfg = SweepConfig(cfg.min, cfg.max, cfg.step, cfg.reps)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    with _open(cfg, args) as device:
        status = EXIT_OK
        try:
            records = sweep(device, sweep_cfg)
        except SweepAborted as exc:
            _err(str(exc))
            records = exc.records
            status = EXIT_IO
    report = sys.stdout
    if cfg.out:
        with open(cfg.out, "w", newline="", encoding="ascii") as fh:
            write_csv(records, fh)
    else:
        write_csv(records, sys.stdout)
        report = sys.stderr
    best = peak(records)
    clock = "virtual" if isinstance(device, SimulatedChip) else "wall-clock"
    print(f"backend: {device.name}", file=report)
    print(f"rows: {len(records)}", file=report)
    if best is not None:
        print(f"peak throughput: {best.throughput:.2f} B/s ({clock} time)", file=report)
        print(f"size at peak: {best.request_size}", file=report)
    return status


# -- collect -----------------------------------------------------------------

def _progress_printer(total: int, clock: str):
    def show(p: CollectProgress) -> None:
        pct = 100.0 * p.bytes_written / total
        print(
            f"[collect] {pct:5.1f}%  {p.bytes_written}/{total} bytes  "
            f"average speed {p.mean_throughput:.1f} B/s ({clock})",
            file=sys.stderr,
            flush=True,
        )
    return show


_ABORT_SIGNALS = (signal.SIGINT, signal.SIGTERM)


def _install_abort_handlers(job: CollectJob) -> dict:
    # Installed explicitly: a backgrounded process may inherit SIGINT as ignored.
    def abort(signum, frame):
        job.cancel()

    previous = {}
    if threading.current_thread() is not threading.main_thread():
        return previous
    for sig in _ABORT_SIGNALS:
        previous[sig] = signal.signal(sig, abort)
    return previous


def _restore_handlers(previous: dict) -> None:
    for sig, handler in previous.items():
        signal.signal(sig, handler)


def cmd_collect(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    if cfg.total is None:
        raise UsageError("collect needs --total")
    if not cfg.out:
        raise UsageError("collect needs --out")
    device = _open(cfg, args)
    limit = device.max_request()
    if limit is not None and cfg.request_size > limit:
        _err(
            f"warning: {device.name} returns at most {limit} bytes per call; "
            f"requests of {cfg.request_size} will be truncated (only returned bytes are written)"
        )
    clock = "virtual time" if isinstance(device, SimulatedChip) else "wall-clock"
    progress = None if args.quiet else _progress_printer(cfg.total, clock)
    try:
        sink = open(cfg.out, "wb")
    except OSError as exc:
        device.close()
        raise DeviceError(f"cannot open {cfg.out}: {exc}") from exc
    with device, sink:
        job = CollectJob(device, cfg.total, cfg.request_size, sink, progress=progress,
                         progress_every=cfg.progress_every)
        previous = _install_abort_handlers(job)
        job.start()
        try:
            summary = None
            while summary is None:
                summary = job.wait(0.1)
        except CollectError as exc:
            _err(str(exc))
            return EXIT_IO
        finally:
            _restore_handlers(previous)
    print(f"status: {summary.status}")
    print(f"bytes_written: {summary.bytes_written}")
    print(f"calls: {summary.calls}")
    print(f"mean_throughput: {summary.mean_throughput:.2f} B/s ({clock})")
    if summary.short_calls:
        print(f"truncated_calls: {summary.short_calls}")
    return EXIT_ABORTED if summary.status == ABORTED else EXIT_OK


# -- analyze -----------------------------------------------------------------

_METRIC_TEST = {
    "entropy": "entropy",
    "chi_square_stat": "chi_square",
    "chi_square_exceed_prob": "chi_square",
    "mean": "mean",
    "mc_pi_estimate": "monte_carlo_pi",
    "mc_pi_error_pct": "monte_carlo_pi",
    "serial_correlation": "serial_correlation",
}


def _fmt(metric: str, value: float | None) -> str:
    if value is None:
        return "undefined"
    return f"{value:.{DISPLAY_DECIMALS[metric]}f}"


def render_text(title: str, report: QualityReport, out: TextIO) -> None:
    print(f"== {title}: {report.input_length} bytes ==", file=out)
    for level, m in report.levels():
        labels = {v.metric: v.label for v in assess(report, level)}
        print(f"  {level} level", file=out)
        p = m.chi_square_exceed_prob
        rows = [
            ("entropy", _fmt("entropy", m.entropy), labels["entropy"]),
            (
                "chi square",
                f"{_fmt('chi_square_stat', m.chi_square_stat)} "
                f"(exceeded {100 * p:.2f}% of the time, bucket {100 * chi_square_bucket(p):g}%)",
                labels["chi_square"],
            ),
            ("arithmetic mean", _fmt("mean", m.mean), labels["mean"]),
            (
                "Monte Carlo pi",
                f"{_fmt('mc_pi_estimate', m.mc_pi_estimate)} (error {_fmt('mc_pi_error_pct', m.mc_pi_error_pct)}%)",
                labels["monte_carlo_pi"],
            ),
            ("serial correlation", _fmt("serial_correlation", m.serial_correlation), labels["serial_correlation"]),
        ]
        for name, value, label in rows:
            print(f"    {name:<20}{value:<58}{label}", file=out)


def csv_rows(piece: str, report: QualityReport):
    for level, m in report.levels():
        labels = {v.metric: v.label for v in assess(report, level)}
        for metric, value in m.as_dict().items():
            yield piece, level, metric, "undefined" if value is None else repr(float(value)), labels[_METRIC_TEST[metric]]


def cmd_analyze(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    path = args.file
    try:
        whole = analyze_file(path)
        pieces = split_analyze(path, cfg.pieces, workers=cfg.workers) if cfg.pieces > 1 else []
    except InsufficientData as exc:
        raise UsageError(str(exc)) from exc
    except OSError as exc:
        _err(f"cannot read {path}: {exc}")
        return EXIT_IO
    blocks = [("all", whole)] + [(str(i), r) for i, r in enumerate(pieces, start=1)]
    if cfg.format == "csv":
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(("piece", "level", "metric", "value", "label"))
        for piece, report in blocks:
            writer.writerows(csv_rows(piece, report))
    else:
        for piece, report in blocks:
            title = "whole file" if piece == "all" else f"piece {piece} of {len(pieces)}"
            render_text(title, report, sys.stdout)
    # exit status follows the whole-file verdicts; piece labels are informational
    failed = any(v.label == FAIL for level in (BYTE, BIT) for v in assess(whole, level))
    return EXIT_QUALITY if failed else EXIT_OK


# -- simulate ----------------------------------------------------------------

def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    text = "".join(args.hex).replace(":", "").replace("0x", "")
    try:
        raw = bytes.fromhex(text)
    except ValueError as exc:
        raise UsageError(f"invalid hex: {exc}") from exc
    try:
        req = wire.decode_request(raw)
        print(f"request: bytes_requested={req.bytes_requested}")
    except wire.WireError as exc:
        print(f"request: rejected ({type(exc).__name__}: {exc})")
    with _open(cfg, args) as device:
        reply = submit_command(device, raw)
    resp = wire.decode_response(reply)
    print(f"tag: 0x{resp.tag:04X}")
    print(f"param_size: {resp.param_size}")
    print(f"return_code: {resp.return_code}")
    print(f"random_bytes_size: {resp.random_bytes_size}")
    print(f"random_bytes: {resp.random_bytes.hex()}")
    return EXIT_OK


# -- profiles ----------------------------------------------------------------

def cmd_profiles(args: argparse.Namespace) -> int:
    profiles = load_profiles(args.config) if getattr(args, "config", None) else BUILTIN_PROFILES
    for name in sorted(profiles):
        p = profiles[name]
        size, rate = p.peak_throughput()
        reseed = "never" if p.reseed_period is None else f"every {p.reseed_period} calls (+{p.reseed_penalty:g} us)"
        print(
            f"{name}: max_request={p.max_request} chunk_size={p.chunk_size} "
            f"base={p.base_latency:g}us per_byte={p.per_byte_latency:g}us per_chunk={p.per_chunk_latency:g}us "
            f"reseed={reseed} peak={rate:.1f} B/s at {size}"
        )
    return EXIT_OK


# -- parser ------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="INI file with a [run] section and profile overrides")

    device = _Parser(add_help=False)
    device.add_argument("--backend", help="infineon | intel | atmel | sinosun | os | file:<path>")
    device.add_argument("--seed", type=int, help="seed for simulated chips (64-bit unsigned)")
    device.add_argument("--bias", type=float, help="simulated chips only: weight byte v by 1 + bias*v")

    parser = _Parser(prog="tpmrng", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("bench", parents=[common, device], help="time a sweep of request sizes, write CSV")
    p.add_argument("--min", type=int)
    p.add_argument("--max", type=int)
    p.add_argument("--step", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--out", help="CSV destination (default: standard output)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("collect", parents=[common, device], help="write random bytes to a file")
    p.add_argument("--total", type=int, help="bytes to collect")
    p.add_argument("--request-size", dest="request_size", type=int, help="bytes per device call (default 2048)")
    p.add_argument("--out", help="binary output file")
    p.add_argument("--progress-every", dest="progress_every", type=int, help="calls between progress lines")
    p.add_argument("--quiet", action="store_true", help="no progress lines")
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("analyze", parents=[common], help="Ent-style quality report for a file")
    p.add_argument("file")
    p.add_argument("--pieces", type=int, help="also analyze N contiguous pieces")
    p.add_argument("--format", choices=("text", "csv"))
    p.add_argument("--workers", type=int, help="threads for per-piece analysis")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", parents=[common, device], help="feed a raw command buffer to a backend")
    p.add_argument("hex", nargs="+", help="command bytes in hex")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("profiles", parents=[common], help="list chip profiles")
    p.set_defaults(func=cmd_profiles)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except ValueError as exc:
        # malformed profile overrides and similar configuration problems
        _err(str(exc))
        return EXIT_USAGE
    except (DeviceError, OSError) as exc:
        _err(str(exc))
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
