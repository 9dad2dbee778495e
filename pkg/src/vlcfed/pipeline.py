"""End-to-end compression of one update vector into wire packets, and back.

Compression applies three operations: keep the k largest-magnitude
coordinates, quantize each packet's values at its plan-assigned code length,
and scale the reconstruction down by B on the receiver side.  The centroid
IDs on the wire carry unscaled quantized values; the receiver divides by B,
which travels out-of-band as 8 bytes of round metadata (counted in traffic
accounting).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .codelen import BudgetConfig, PartitionPlan, ScaleState, optimize_plan
from .errors import CorruptPacket, InvalidInput
from .packet_codec import PacketEntry, decode_packet, encode_packet
from .quantizer import PqMeta, QsgdMeta, QuantizedBlock, QuantizerKind, dequantize, quantize
from .update_model import PowerLawFit, UpdateVector, fit_power_law, rank_by_magnitude

# Out-of-band per-round metadata: the scale factor B as one float64.
SCALE_METADATA_BYTES = 8


@dataclass(frozen=True)
class CompressionConfig:
    kind: QuantizerKind
    budget: BudgetConfig
    k_stride: int = 1
    error_feedback: bool = False

    def __post_init__(self):
        if self.k_stride < 1:
            raise InvalidInput("k_stride must be >= 1")


@dataclass
class CompressedRound:
    """One client-round of compressed traffic."""

    packets: list[bytes]
    plan: PartitionPlan
    fit: PowerLawFit
    residual: np.ndarray | None = None
    measured_rel_error: float | None = None

    @property
    def payload_bytes(self) -> int:
        return sum(len(p) for p in self.packets)

    @property
    def total_bytes(self) -> int:
        return self.payload_bytes + SCALE_METADATA_BYTES


def _wire_meta(kind: QuantizerKind, values: np.ndarray):
    """Centroid metadata pre-rounded to the binary32 values that will travel.

    Quantizing against the exact wire grid keeps the receiver's
    reconstruction unbiased.  The QSGD norm is rounded up so it never falls
    below the block's true norm.
    """
    if kind is QuantizerKind.PQ:
        return PqMeta(lo=float(np.float32(values.min())), hi=float(np.float32(values.max())))
    norm = float(np.linalg.norm(values))
    norm32 = np.float32(norm)
    if float(norm32) < norm:
        norm32 = np.nextafter(norm32, np.float32(np.inf))
    return QsgdMeta(l2_norm=float(norm32))


def compress_with_plan(u: UpdateVector, plan: PartitionPlan, budget: BudgetConfig,
                       fit: PowerLawFit, seed, residual: np.ndarray | None = None) -> CompressedRound:
    """Compress ``u`` under an already-chosen partition plan.

    ``seed`` feeds one counter-based stream per packet.  When ``residual``
    is given, it is added to ``u`` before compression and the returned round
    carries the new residual (error feedback).
    """
    if u.d != budget.dim:
        raise InvalidInput("update dimension does not match the budget config")
    values = u.values if residual is None else u.values + residual
    order = rank_by_magnitude(UpdateVector.from_array(values)).order

    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    packet_seeds = root.spawn(plan.n_packets)

    packets = []
    recon = np.zeros(u.d, dtype=np.float64) if residual is not None else None
    start = 0
    for r, (count, y) in enumerate(zip(plan.parts, plan.code_bits)):
        pids = order[start:start + count]
        start += count
        block_values = values[pids]
        meta = _wire_meta(plan.kind, block_values)
        block = quantize(plan.kind, block_values, y, packet_seeds[r], meta=meta)
        entries = [PacketEntry(pid=int(p), cid=int(c)) for p, c in zip(pids, block.cids)]
        packets.append(encode_packet(entries, y, budget.pid_bits, plan.kind, meta,
                                     max_bits=budget.bits_per_packet))
        if recon is not None:
            recon[pids] = dequantize(block)

    new_residual = values - recon if recon is not None else None
    return CompressedRound(packets=packets, plan=plan, fit=fit, residual=new_residual)


def compress(u: UpdateVector, cfg: CompressionConfig, scale: ScaleState, seed,
             residual: np.ndarray | None = None) -> CompressedRound:
    """Rank, fit, optimize the partition, then compress under it."""
    if u.d != cfg.budget.dim:
        raise InvalidInput("update dimension does not match the budget config")
    if cfg.error_feedback and residual is None:
        residual = np.zeros(u.d, dtype=np.float64)
    if not cfg.error_feedback:
        residual = None

    values = u.values if residual is None else u.values + residual
    compensated = UpdateVector.from_array(values)
    ranked = rank_by_magnitude(compensated)
    fit = fit_power_law(ranked, compensated)
    plan = optimize_plan(fit, cfg.budget, scale, cfg.kind, k_stride=cfg.k_stride)
    return compress_with_plan(u, plan, cfg.budget, fit, seed, residual=residual)


def decompress(packets: list[bytes], d: int, scale_b: float) -> UpdateVector:
    """Rebuild the dense vector: dequantized / B at transmitted positions, 0 elsewhere."""
    if d < 1:
        raise InvalidInput("dimension must be >= 1")
    if not scale_b > 0:
        raise InvalidInput("scale factor must be positive")
    out = np.zeros(d, dtype=np.float64)
    seen = np.zeros(d, dtype=bool)
    for raw in packets:
        pkt = decode_packet(raw)
        pids = np.asarray([e.pid for e in pkt.entries], dtype=np.int64)
        cids = np.asarray([e.cid for e in pkt.entries], dtype=np.uint32)
        if np.any(pids >= d):
            raise CorruptPacket("position ID beyond the model dimension")
        if np.any(seen[pids]) or np.unique(pids).size != pids.size:
            raise CorruptPacket("duplicate position ID across packets")
        seen[pids] = True
        block = QuantizedBlock(kind=pkt.kind, y=pkt.y, cids=cids, meta=pkt.meta)
        out[pids] = dequantize(block) / scale_b
    return UpdateVector.from_array(out)


def measured_error(u: UpdateVector, u_hat: UpdateVector) -> float:
    """Relative squared reconstruction error ||u - u_hat||^2 / ||u||^2."""
    if u.d != u_hat.d:
        raise InvalidInput("dimension mismatch")
    denom = float(np.dot(u.values, u.values))
    diff = u.values - u_hat.values
    num = float(np.dot(diff, diff))
    if denom == 0.0:
        if num == 0.0:
            return 0.0
        raise InvalidInput("reference vector is zero but reconstruction is not")
    return num / denom


def evaluate(u: UpdateVector, compressed: CompressedRound) -> float:
    """Fill ``measured_rel_error`` by decoding the round against ``u``."""
    u_hat = decompress(compressed.packets, u.d, compressed.plan.scale.b_scale)
    compressed.measured_rel_error = measured_error(u, u_hat)
    return compressed.measured_rel_error
