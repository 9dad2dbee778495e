"""Compressor comparison sweeps: rounds and bytes to a target accuracy."""

from __future__ import annotations

import dataclasses
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput
from .simulator import CompressorSpec, FLConfig, run_federated

UNREACHED = "unreached"


@dataclass(frozen=True)
class SweepSpec:
    compressors: tuple[CompressorSpec, ...]
    seeds: tuple[int, ...]
    base: FLConfig
    target_accuracy: float | None = None
    oracle_fraction: float | None = None  # target = fraction * uncompressed final accuracy

    def __post_init__(self):
        if not self.compressors or not self.seeds:
            raise InvalidInput("sweep needs at least one compressor and one seed")
        if (self.target_accuracy is None) == (self.oracle_fraction is None):
            raise InvalidInput("give exactly one of target_accuracy / oracle_fraction")

    @classmethod
    def parse(cls, obj: dict) -> "SweepSpec":
        return cls(
            compressors=tuple(CompressorSpec.parse(c) for c in obj["compressors"]),
            seeds=tuple(int(s) for s in obj["seeds"]),
            base=FLConfig.parse(obj["base"]),
            target_accuracy=obj.get("target_accuracy"),
            oracle_fraction=obj.get("oracle_fraction"),
        )


@dataclass(frozen=True)
class SweepRow:
    compressor: str
    seed: str
    rounds_to_target: int | str
    bytes_to_target: int | str
    final_accuracy: float


def _with(cfg: FLConfig, **kw) -> FLConfig:
    return dataclasses.replace(cfg, **kw)


def _run_entry(args):
    cfg, target = args
    metrics = run_federated(cfg)
    cumulative = 0
    rounds_to = None
    bytes_to = None
    for m in metrics:
        cumulative += m.uplink_bytes_total
        if rounds_to is None and m.test_accuracy >= target:
            rounds_to = m.round + 1
            bytes_to = cumulative
    return SweepRow(
        compressor=cfg.compressor.label(),
        seed=str(cfg.seed),
        rounds_to_target=rounds_to if rounds_to is not None else UNREACHED,
        bytes_to_target=bytes_to if bytes_to is not None else UNREACHED,
        final_accuracy=metrics[-1].test_accuracy,
    )


def _oracle_final_accuracy(args):
    (cfg,) = args
    return run_federated(cfg)[-1].test_accuracy


def _thread_count(n_entries: int) -> int:
    raw = os.environ.get("VLC_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise InvalidInput(f"VLC_THREADS must be an integer, got {raw!r}") from None
    if n == 0:
        n = os.cpu_count() or 1
    return max(1, min(n, n_entries))


def _map_jobs(fn, jobs):
    workers = _thread_count(len(jobs))
    if workers == 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def run_sweep(spec: SweepSpec) -> list[SweepRow]:
    """One row per (compressor, seed), then one mean row per compressor.

    Rows are emitted in spec order regardless of execution order.  Seeds
    where the target is never reached carry the ``unreached`` sentinel and
    are excluded from the means.
    """
    if spec.oracle_fraction is not None:
        oracle_jobs = [(_with(spec.base, seed=s, compressor=CompressorSpec("none")),)
                       for s in spec.seeds]
        finals = _map_jobs(_oracle_final_accuracy, oracle_jobs)
        targets = {s: spec.oracle_fraction * acc for s, acc in zip(spec.seeds, finals)}
    else:
        targets = {s: spec.target_accuracy for s in spec.seeds}

    jobs = [(_with(spec.base, seed=s, compressor=c), targets[s])
            for c in spec.compressors for s in spec.seeds]
    rows = _map_jobs(_run_entry, jobs)

    out: list[SweepRow] = []
    per_comp: dict[str, list[SweepRow]] = {}
    for row in rows:
        out.append(row)
        per_comp.setdefault(row.compressor, []).append(row)
    for comp in (c.label() for c in spec.compressors):
        group = per_comp[comp]
        reached = [r for r in group if r.rounds_to_target != UNREACHED]
        out.append(SweepRow(
            compressor=comp,
            seed="mean",
            rounds_to_target=float(np.mean([r.rounds_to_target for r in reached]))
            if reached else UNREACHED,
            bytes_to_target=float(np.mean([r.bytes_to_target for r in reached]))
            if reached else UNREACHED,
            final_accuracy=float(np.mean([r.final_accuracy for r in group])),
        ))
    return out
