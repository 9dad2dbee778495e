"""Command-line harness: optimize / compress / decompress / simulate / sweep.

All structured input comes from JSON config files; stdout carries only data
(JSON or CSV) and diagnostics go to stderr.  Exit codes: 0 success, 2
usage/IO error, 3 infeasible configuration.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys

from .codelen import BudgetConfig, ScaleState, optimize_plan
from .errors import Infeasible, VlcError
from .packet_codec import HEADER_BITS, read_packets, write_packets
from .pipeline import CompressedRound, CompressionConfig, compress, decompress
from .quantizer import QuantizerKind
from .simulator import FLConfig, run_federated
from .sweep import SweepSpec, run_sweep
from .update_model import read_uvec, write_uvec

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INFEASIBLE = 3


def _load_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _read_uvec_or_die(path):
    try:
        return read_uvec(path)
    except (OSError, VlcError) as exc:
        raise _Usage(f"cannot read update vector: {path} ({exc})") from exc


class _Usage(Exception):
    """IO / config problem: reported on stderr with exit code 2."""


def _budget_from_config(cfg: dict, dim: int) -> tuple[BudgetConfig, QuantizerKind, int]:
    budget = BudgetConfig(
        bits_per_packet=int(cfg["b_bits"]),
        packets_per_round=int(cfg["R"]),
        header_bits=int(cfg.get("H_bits", HEADER_BITS)),
        dim=dim,
    )
    kind = QuantizerKind.parse(cfg.get("quantizer", "pq"))
    return budget, kind, int(cfg.get("k_stride", 1))


def _plan_json(plan) -> dict:
    return {
        "k": plan.k,
        "parts": list(plan.parts),
        "code_bits": list(plan.code_bits),
        "gamma": plan.gamma,
        "B": plan.scale.b_scale,
    }


def cmd_optimize(args) -> int:
    u = _read_uvec_or_die(args.infile)
    cfg = _load_json(args.config)
    if args.k_stride is not None:
        cfg["k_stride"] = args.k_stride
    budget, kind, k_stride = _budget_from_config(cfg, u.d)
    from .update_model import fit_power_law, rank_by_magnitude

    fit = fit_power_law(rank_by_magnitude(u), u)
    plan = optimize_plan(fit, budget, ScaleState.initial(kind, budget), kind, k_stride=k_stride)
    json.dump(_plan_json(plan), sys.stdout)
    sys.stdout.write("\n")
    return EXIT_OK


def cmd_compress(args) -> int:
    u = _read_uvec_or_die(args.infile)
    cfg = _load_json(args.config)
    budget, kind, k_stride = _budget_from_config(cfg, u.d)
    if budget.header_bits != HEADER_BITS:
        raise _Usage(f"wire packets carry a fixed {HEADER_BITS}-bit header; "
                     f"set H_bits={HEADER_BITS} to compress")
    comp_cfg = CompressionConfig(kind=kind, budget=budget, k_stride=k_stride)
    out: CompressedRound = compress(u, comp_cfg, ScaleState.initial(kind, budget),
                                    [args.seed, args.round, args.client_id])
    write_packets(args.outfile, out.packets)
    meta = {
        "client_id": args.client_id,
        "round": args.round,
        "B": out.plan.scale.b_scale,
        "gamma": out.plan.gamma,
        "bytes": out.total_bytes,
        "d": u.d,
    }
    if args.meta:
        with open(args.meta, "w", encoding="utf-8") as fh:
            json.dump(meta, fh)
    json.dump(meta, sys.stdout)
    sys.stdout.write("\n")
    return EXIT_OK


def cmd_decompress(args) -> int:
    try:
        packets = read_packets(args.infile)
    except (OSError, VlcError) as exc:
        raise _Usage(f"cannot read packets: {args.infile} ({exc})") from exc
    meta = _load_json(args.meta)
    u = decompress(packets, int(meta["d"]), float(meta["B"]))
    write_uvec(args.outfile, u)
    json.dump({"d": u.d, "nonzero": int((u.values != 0).sum())}, sys.stdout)
    sys.stdout.write("\n")
    return EXIT_OK


_METRIC_COLUMNS = ["round", "test_accuracy", "train_loss", "uplink_bytes_total",
                   "mean_gamma", "mean_measured_error"]


def cmd_simulate(args) -> int:
    cfg = FLConfig.parse(_load_json(args.config))
    metrics = run_federated(cfg)
    with open(args.outfile, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_METRIC_COLUMNS)
        for m in metrics:
            writer.writerow([getattr(m, c) for c in _METRIC_COLUMNS])
    json.dump({"rounds": len(metrics), "final_accuracy": metrics[-1].test_accuracy},
              sys.stdout)
    sys.stdout.write("\n")
    return EXIT_OK


def cmd_sweep(args) -> int:
    spec = SweepSpec.parse(_load_json(args.config))
    rows = run_sweep(spec)
    with open(args.outfile, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["compressor", "seed", "rounds_to_target", "bytes_to_target",
                         "final_accuracy"])
        for r in rows:
            writer.writerow([r.compressor, r.seed, r.rounds_to_target, r.bytes_to_target,
                             r.final_accuracy])
    json.dump({"rows": len(rows)}, sys.stdout)
    sys.stdout.write("\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vlcfed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", help="compute the optimal partition plan")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--k-stride", dest="k_stride", type=int, default=None)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("compress", help="compress an update vector into packets")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", dest="outfile", required=True)
    p.add_argument("--meta", default=None, help="also write round metadata JSON here")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--round", type=int, default=0)
    p.add_argument("--client-id", dest="client_id", type=int, default=0)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", help="rebuild a dense vector from packets")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--meta", required=True, help="round metadata JSON from compress")
    p.add_argument("--out", dest="outfile", required=True)
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("simulate", help="run one federated training simulation")
    p.add_argument("--config", required=True)
    p.add_argument("--out", dest="outfile", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="compare compressors across seeds")
    p.add_argument("--config", required=True)
    p.add_argument("--out", dest="outfile", required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _Usage as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except Infeasible as exc:
        print(f"infeasible configuration: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (OSError, json.JSONDecodeError, KeyError, ValueError, VlcError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
