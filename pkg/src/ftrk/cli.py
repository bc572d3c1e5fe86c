"""Command-line entry point: ``ftrk <command> ...``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Sequence

from . import bench, cavp, channel
from .chain import ChainPolicy
from .handshake import HandshakeParty, HandshakeTimeout, Role, establish_three_party, make_rng
from .pipeline import Flow, Mode, StageTiming
from .workloads import PRESETS, UnknownPreset, WorkloadProfile, derive_timings, preset

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_TRANSPORT = 3

ADVERSARIES = {
    "flip": lambda a: channel.FlipBit(a.flip_offset),
    "swap": lambda a: channel.SwapChains(4, 7),
    "replay": lambda a: channel.Replay(),
    "drop": lambda a: channel.Drop(),
}


def _size(text: str) -> int:
    units = {"k": 1 << 10, "m": 1 << 20, "g": 1 << 30}
    t = text.strip().lower().removesuffix("ib").removesuffix("b")
    mult = units.get(t[-1:], 1)
    try:
        value = int(t[:-1] if mult > 1 else t)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad size {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError("size must be non-negative")
    return value * mult


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _emit(report: bench.BenchReport, args: argparse.Namespace) -> None:
    if args.json:
        print(report.to_json())
    elif args.csv:
        print(report.to_csv(), end="")
    else:
        print(report.to_text())


def cmd_vectors(args: argparse.Namespace) -> int:
    try:
        report = cavp.replay_file(args.file)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except cavp.VectorParseError as exc:
        print(f"{args.file}: parse error at {exc}", file=sys.stderr)
        return EXIT_FAIL
    for f in report.failures:
        print(f"FAIL {args.file}:{f.line} (Count = {f.count}): {f.reason}")
    for w in report.warnings:
        print(f"warning: {w}")
    print(f"{report.source}: {report.passed}/{report.total} passed "
          f"({report.rejected_as_expected} FAIL records rejected, {report.skipped} skipped)")
    return EXIT_OK if report.ok else EXIT_FAIL


def cmd_bench_crypto(args: argparse.Namespace) -> int:
    report = bench.bench_crypto(args.size, args.chains, args.lanes, args.repeats)
    _emit(report, args)
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    if args.timing_json:
        timing = StageTiming.from_json(Path(args.timing_json).read_text())
        profile = WorkloadProfile(Path(args.timing_json).stem, 0, None, Flow(args.flow), args.chains, timing)
    else:
        try:
            profile = preset(args.preset, args.flow, args.chains)
        except UnknownPreset as exc:
            print(f"error: {exc.args[0]}", file=sys.stderr)
            return EXIT_USAGE
        timing = derive_timings(profile)
    source = "modeled"
    if args.measured:
        try:
            timing = bench.measured_timing(profile, timing)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        source = "measured"
    modes = args.mode or [m.value for m in Mode]
    report = bench.BenchReport(
        [bench.schedule_row(profile, timing, m, args.batches, source, overlap_compute=args.overlap_compute)
         for m in modes],
        [f"timings: {source}"],
    )
    _emit(report, args)
    return EXIT_OK


def _parse_tcp(text: str) -> dict[Role, tuple[str, int]]:
    parts = text.split(",")
    if len(parts) != 3:
        raise ValueError("--tcp needs three host:port entries (user,proxy,accel)")
    out = {}
    for role, part in zip((Role.USER, Role.PROXY, Role.ACCELERATOR), parts):
        host, _, port = part.rpartition(":")
        out[role] = (host or "127.0.0.1", int(port))
    return out


def cmd_flow_demo(args: argparse.Namespace) -> int:
    rng = make_rng(args.seed)
    policy = ChainPolicy(args.chains)
    actions = []
    if args.adversary:
        actions.append(channel.AdversaryAction(ADVERSARIES[args.adversary](args), args.hop, args.target))
    try:
        channel.check_actions(actions, args.mode, policy)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    items = [rng.randbytes(args.item_bytes) for _ in range(args.items)]
    try:
        setup = establish_three_party(HandshakeParty(Role.USER), HandshakeParty(Role.PROXY),
                                      HandshakeParty(Role.ACCELERATOR), args.mode, rng)
    except HandshakeTimeout as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    transport = None
    try:
        if args.tcp:
            transport = channel.TcpTransport(_parse_tcp(args.tcp) if args.tcp != "auto" else None)
        t = channel.inject_adversary(args.mode, setup, items, actions, policy, transport, timeout=args.timeout)
    except (channel.TransportError, ValueError) as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    finally:
        if transport is not None:
            transport.close()
    print(t.dump())
    if actions:
        expected = t.outcome in ("rejected", "timeout") and not t.delivered
    else:
        expected = t.outcome == "ok" and t.delivered == items
    return EXIT_OK if expected else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ftrk", description="Secure accelerator IO testbed.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("vectors", help="replay a CAVP GCM vector file")
    p.add_argument("file")
    p.set_defaults(func=cmd_vectors)

    p = sub.add_parser("bench-crypto", help="measure seal/open/multichain throughput on this host")
    p.add_argument("--size", type=_size, action="append", help="payload size, e.g. 1MiB (repeatable)")
    p.add_argument("--chains", type=_int_list, default=[1, 16], help="comma-separated chain counts")
    p.add_argument("--lanes", type=int, default=8, help="chains verified per vector pass")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--json", action="store_true")
    p.add_argument("--csv", action="store_true")
    p.set_defaults(func=cmd_bench_crypto)

    p = sub.add_parser("simulate", help="run the pipeline model over a preset")
    p.add_argument("--preset", default="resnet50", choices=sorted(PRESETS))
    p.add_argument("--timing-json", help="use stage timings from a JSON file instead of a preset")
    p.add_argument("--flow", default="training", choices=[f.value for f in Flow])
    p.add_argument("--mode", action="append", choices=[m.value for m in Mode],
                   help="repeatable; default runs every mode")
    p.add_argument("--batches", type=int, default=64)
    p.add_argument("--chains", type=int, default=16)
    p.add_argument("--overlap-compute", action="store_true", help="double-buffer compute against the next input")
    p.add_argument("--measured", action="store_true", help="replace accelerator crypto times with host measurements")
    p.add_argument("--json", action="store_true")
    p.add_argument("--csv", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("flow-demo", help="run a baseline or direct flow, optionally under attack")
    p.add_argument("--mode", default="direct", choices=["baseline", "direct"])
    p.add_argument("--adversary", choices=sorted(ADVERSARIES))
    p.add_argument("--hop", default="proxy->accel", choices=["user->proxy", "proxy->accel"])
    p.add_argument("--target", type=int, default=0, help="index of the DATA frame to attack")
    p.add_argument("--flip-offset", type=int, default=8 * 40 + 3, help="bit offset for --adversary flip")
    p.add_argument("--items", type=int, default=8)
    p.add_argument("--item-bytes", type=_size, default=4096)
    p.add_argument("--chains", type=int, default=16)
    p.add_argument("--seed", help="fix all randomness (defaults to FTRK_SEED)")
    p.add_argument("--timeout", type=float, default=1.0)
    p.add_argument("--tcp", nargs="?", const="auto",
                   help="run over TCP; optionally user,proxy,accel listen addresses as host:port")
    p.set_defaults(func=cmd_flow_demo)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "json", False) and getattr(args, "csv", False):
        parser.error("--json and --csv are mutually exclusive")
    if args.command == "bench-crypto" and not args.size:
        args.size = [1 << 20]
    if args.command == "simulate" and args.batches < 1:
        parser.error("--batches must be positive")
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
