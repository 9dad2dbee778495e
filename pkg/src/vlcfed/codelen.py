"""Per-packet code-length optimization under a fixed uplink budget.

Each round a client may send ``R`` packets of at most ``b`` bits.  A packet
holds ``P_r`` (position-ID, centroid-ID) pairs, all sharing one code length
``y_r = floor((b - H) / P_r) - s``, so choosing the partition ``P_1..P_R`` of
the ``k`` transmitted updates fixes every code length.  The optimizer picks
``k`` and the partition minimizing the analytic bound ``gamma`` on the
relative compression error.

The search runs one convex "atomic" re-split of two adjacent packets at a
time, swept over all adjacent pairs until a fixed point (the SMO pattern),
inside an outer enumeration of ``k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import Infeasible, InvalidBits, InvalidInput
from .quantizer import QuantizerKind, quant_error_model
from .update_model import PowerLawFit

MAX_CODE_BITS = 32
MAX_SWEEPS = 100


@dataclass(frozen=True)
class BudgetConfig:
    """Uplink budget: R packets of b bits, each with an H-bit header.

    Position IDs take ``pid_bits = max(1, ceil(log2 dim))`` bits each.
    """

    bits_per_packet: int
    packets_per_round: int
    header_bits: int
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidInput("dim must be >= 1")
        if self.packets_per_round < 1:
            raise InvalidInput("need at least one packet per round")
        if self.bits_per_packet <= self.header_bits + self.pid_bits + 1:
            raise InvalidInput("packet too small: b must exceed H + s + 1")

    @property
    def pid_bits(self) -> int:
        return max(1, math.ceil(math.log2(self.dim)))

    @property
    def payload_bits(self) -> int:
        return self.bits_per_packet - self.header_bits

    @property
    def k_min(self) -> int:
        # One update per packet.
        return self.packets_per_round

    @property
    def k_max(self) -> int:
        # Every update squeezed to a single-bit code.
        return self.packets_per_round * self.payload_bits // (self.pid_bits + 1)

    @property
    def p_max(self) -> int:
        # Largest per-packet count that still leaves y >= 1.
        return self.payload_bits // (self.pid_bits + 1)

    def code_bits_for(self, p: int) -> int:
        """Code length implied by packing ``p`` updates into one packet.

        Can be < 1, which means ``p`` updates do not fit.
        """
        if p < 1:
            raise InvalidInput("packet must carry at least one update")
        return min(MAX_CODE_BITS, self.payload_bits // p - self.pid_bits)


@dataclass(frozen=True)
class ScaleState:
    """Scaling factor B applied to quantized updates, and its companion.

    ``b_scale`` is derived from the previous round's worst per-packet
    quantization error: ``B = prev_max_q + 1``.  The companion satisfies
    ``1/B + 1/B_c = 1``.
    """

    b_scale: float
    b_companion: float
    prev_max_q: float

    @classmethod
    def from_max_q(cls, max_q: float) -> "ScaleState":
        if not max_q > 0:
            raise InvalidInput("max quantization error must be positive")
        b = max_q + 1.0
        # B - 1 is max_q by construction; dividing by it directly avoids the
        # catastrophic cancellation of b - 1.0 when max_q is tiny.
        return cls(b_scale=b, b_companion=b / max_q, prev_max_q=max_q)

    @classmethod
    def initial(cls, kind: QuantizerKind, cfg: BudgetConfig) -> "ScaleState":
        """Conservative first-round state: worst case is a full single-bit packet."""
        worst = quant_error_model(kind, max(1, cfg.k_max // cfg.packets_per_round), 1)
        return cls.from_max_q(worst)


@dataclass(frozen=True)
class PartitionPlan:
    """Optimizer output: k top updates split into packets of P_1 <= ... <= P_R."""

    k: int
    parts: tuple[int, ...]
    code_bits: tuple[int, ...]
    gamma: float
    scale: ScaleState
    kind: QuantizerKind
    max_q: float

    @property
    def n_packets(self) -> int:
        return len(self.parts)

    def next_scale(self) -> ScaleState:
        """Scale state for the following round, per the max-Q feedback rule."""
        return ScaleState.from_max_q(self.max_q)


def _share(z_hi, z_lo, beta: float, dim: int):
    """(z_hi^beta - z_lo^beta) / (dim^beta - 1), stable for beta near 0.

    Arguments below 1 are clamped to 1: the rank sums this ratio approximates
    start at rank 1, so a zero prefix contributes ``1^beta``.
    """
    log_lo = np.log(np.maximum(z_lo, 1.0))
    log_hi = np.log(np.maximum(z_hi, 1.0))
    denom = math.expm1(beta * math.log(dim))
    return np.exp(beta * log_lo) * np.expm1(beta * (log_hi - log_lo)) / denom


def _q_model_arr(kind: QuantizerKind, z: np.ndarray, y: np.ndarray) -> np.ndarray:
    z = z.astype(np.float64)
    y = y.astype(np.float64)
    if kind is QuantizerKind.PQ:
        return z / (2.0**y - 1.0) ** 2
    return np.minimum(z / 2.0 ** (2.0 * y), np.sqrt(z) / 2.0**y)


def _coef(kind: QuantizerKind, z, y, scale: ScaleState):
    """Per-packet error coefficient Q/B^2 + 1/B_c^2."""
    q = _q_model_arr(kind, np.asarray(z), np.asarray(y))
    return q / scale.b_scale**2 + 1.0 / scale.b_companion**2


def gamma(fit: PowerLawFit, plan_parts, k: int, cfg: BudgetConfig, scale: ScaleState,
          kind: QuantizerKind, code_bits=None) -> float:
    """Analytic bound on the relative compression error of a partition.

    ``code_bits`` overrides the budget-implied code lengths (used by
    fixed-length comparison plans); by default each packet's length follows
    from its count.
    """
    parts = [int(p) for p in plan_parts]
    if any(p < 1 for p in parts):
        raise InvalidInput("every packet must carry at least one update")
    if k != sum(parts):
        raise InvalidInput("k must equal the sum of the partition")
    if k > cfg.dim:
        raise InvalidInput("cannot transmit more updates than the model has")

    beta = fit.beta
    # Dropped-tail term; the empty drop set (k = d) contributes exactly 0
    # rather than the integral-boundary artifact (d^b - (d+1)^b) / (d^b - 1).
    if k >= cfg.dim:
        total = 0.0
    else:
        total = float(_share(float(cfg.dim), float(k + 1), beta, cfg.dim))
    if not parts:
        return total

    parts_arr = np.asarray(parts, dtype=np.int64)
    if code_bits is None:
        bits = np.asarray([cfg.code_bits_for(p) for p in parts], dtype=np.int64)
        if np.any(bits < 1):
            raise Infeasible("partition implies a code length below 1 bit")
    else:
        bits = np.asarray([int(y) for y in code_bits], dtype=np.int64)
        if len(bits) != len(parts):
            raise InvalidInput("code_bits must match the partition length")
        if np.any(bits < 1) or np.any(bits > MAX_CODE_BITS):
            raise InvalidBits("code lengths must lie in [1, 32]")

    z = np.cumsum(parts_arr).astype(np.float64)
    z_prev = np.concatenate(([0.0], z[:-1]))
    shares = _share(z, z_prev, beta, cfg.dim)
    coefs = _coef(kind, parts_arr, bits, scale)
    return total + float(np.dot(coefs, shares))


@lru_cache(maxsize=16)
def _tables(beta: float, d: int, payload: int, s: int, p_max: int, z_max: int,
            b_scale: float, b_comp: float, kind: QuantizerKind):
    """Lookup tables shared by every atomic re-split of one optimization run.

    ``pow_m1[z]`` holds ``z^beta - 1`` (``z = 0`` follows the rank-sum
    convention and counts as 1); keeping the ``- 1`` inside expm1 preserves
    precision when beta sits at its clamp near 0.  ``coef[p]`` is the packet
    error coefficient for a p-update packet, inf where p is infeasible.
    """
    logz = np.log(np.arange(1, z_max + 1, dtype=np.float64))
    pow_m1 = np.zeros(z_max + 1)
    pow_m1[1:] = np.expm1(beta * logz)
    denom = math.expm1(beta * math.log(d))
    p = np.arange(1, p_max + 1, dtype=np.int64)
    y = np.minimum(MAX_CODE_BITS, payload // p - s)
    q = _q_model_arr(kind, p, np.clip(y, 1, MAX_CODE_BITS))
    coef = np.full(p_max + 1, np.inf)
    coef[1:] = np.where(y >= 1, q / b_scale**2 + 1.0 / b_comp**2, np.inf)
    return pow_m1, denom, coef


def atomic_optimize(x: int, z_left: int, fit: PowerLawFit, cfg: BudgetConfig,
                    scale: ScaleState, kind: QuantizerKind,
                    incumbent: tuple[int, int] | None = None) -> tuple[int, int]:
    """Optimal re-split of two adjacent packets carrying ``x`` updates total.

    ``z_left`` is the number of updates in all packets before the pair.
    Returns ``(p_left, p_right)`` minimizing the pair's share of gamma; the
    search is restricted to ``p_right >= ceil(x/2)`` (the minimum always lies
    in the right-heavy half).  Ties go to the ``incumbent`` split when it
    attains the minimum (so plateaus cannot make sweeps wander), otherwise
    to the smallest feasible ``p_right``.
    """
    if x < 2:
        raise InvalidInput("atomic re-split needs at least two updates")
    z_max = max(z_left + x, min(cfg.k_max, cfg.dim)) + 1
    pow_m1, denom, coef = _tables(fit.beta, cfg.dim, cfg.payload_bits, cfg.pid_bits,
                                  cfg.p_max, z_max, scale.b_scale, scale.b_companion,
                                  kind)
    p_right = np.arange((x + 1) // 2, x, dtype=np.int64)
    p_left = x - p_right
    # coef is inf at infeasible counts; counts beyond p_max are clamped into
    # the table and masked out via `valid`.
    valid = (p_right <= cfg.p_max) & (p_left <= cfg.p_max)
    valid[valid] &= np.isfinite(coef[p_left[valid]]) & np.isfinite(coef[p_right[valid]])
    if not np.any(valid):
        raise Infeasible(f"no feasible split of {x} updates across two packets")
    pl, pr = p_left[valid], p_right[valid]
    z_mid = z_left + pl
    f = coef[pl] * (pow_m1[z_mid] - pow_m1[z_left]) / denom \
        + coef[pr] * (pow_m1[z_left + x] - pow_m1[z_mid]) / denom
    i = int(np.argmin(f))  # first minimum = smallest p_right
    if incumbent is not None:
        j = np.nonzero(pr == incumbent[1])[0]
        if j.size and f[int(j[0])] <= f[i]:
            return incumbent
    return int(pl[i]), int(pr[i])


def _sweep_to_fixed_point(parts: list[int], fit: PowerLawFit, cfg: BudgetConfig,
                          scale: ScaleState, kind: QuantizerKind) -> list[int]:
    r_packets = len(parts)
    for _ in range(MAX_SWEEPS):
        changed = False
        for r in range(2, r_packets + 1):
            z_left = sum(parts[: r - 2])
            incumbent = (parts[r - 2], parts[r - 1])
            pair = atomic_optimize(sum(incumbent), z_left, fit, cfg, scale, kind,
                                   incumbent=incumbent)
            if pair != incumbent:
                parts[r - 2], parts[r - 1] = pair
                changed = True
        if not changed:
            break
    return parts


def _kick_escape(parts: list[int], fit: PowerLawFit, cfg: BudgetConfig,
                 scale: ScaleState, kind: QuantizerKind, max_rounds: int = 8) -> list[int]:
    """Escape ridges of the pairwise descent.

    A fixed point of adjacent re-splits can still be improved by moving a
    unit across a pair boundary *through* a worse intermediate state.  Try
    every single-unit pair perturbation, re-sweep from it, and keep the best
    fixed point; repeat until nothing improves.
    """
    def total(p):
        return gamma(fit, p, sum(p), cfg, scale, kind)

    best = parts
    best_g = total(parts)
    for _ in range(max_rounds):
        improved = False
        for r in range(1, len(best)):
            for delta in (1, -1):
                cand = list(best)
                cand[r - 1] -= delta
                cand[r] += delta
                if min(cand[r - 1], cand[r]) < 1 or max(cand[r - 1], cand[r]) > cfg.p_max:
                    continue
                cand = _sweep_to_fixed_point(cand, fit, cfg, scale, kind)
                g = total(cand)
                if g < best_g:
                    best, best_g = cand, g
                    improved = True
        if not improved:
            break
    return best


def smo_partition(k: int, r_packets: int, fit: PowerLawFit, cfg: BudgetConfig,
                  scale: ScaleState, kind: QuantizerKind,
                  initial: list[int] | None = None, escape: bool = True) -> list[int]:
    """Partition ``k`` updates into ``r_packets`` monotone packets.

    Starts from the near-equal split (remainder spread over the last
    packets, or an explicit ``initial``), applies atomic re-splits to every
    adjacent pair until a full sweep changes nothing, then (unless
    ``escape=False``) runs unit-kick escapes so the result is not a spurious
    integer-valued local minimum.
    """
    if not cfg.k_min <= k <= cfg.k_max:
        raise Infeasible(f"k={k} outside [{cfg.k_min}, {cfg.k_max}]")
    if k > r_packets * cfg.p_max:
        raise Infeasible(f"k={k} cannot fit {r_packets} packets at 1 bit per update")
    if r_packets == 1:
        if cfg.code_bits_for(k) < 1:
            raise Infeasible(f"{k} updates do not fit a single packet")
        return [k]

    if initial is None:
        base, rem = divmod(k, r_packets)
        parts = [base] * (r_packets - rem) + [base + 1] * rem
    else:
        if len(initial) != r_packets or sum(initial) != k or min(initial) < 1:
            raise InvalidInput("initial partition inconsistent with k and R")
        parts = list(initial)
    parts = _sweep_to_fixed_point(parts, fit, cfg, scale, kind)
    if escape:
        parts = _kick_escape(parts, fit, cfg, scale, kind)
    return parts


def _plan_from_parts(parts, cfg: BudgetConfig, fit: PowerLawFit, scale: ScaleState,
                     kind: QuantizerKind, g: float) -> PartitionPlan:
    code_bits = tuple(cfg.code_bits_for(p) for p in parts)
    max_q = max(quant_error_model(kind, p, y) for p, y in zip(parts, code_bits))
    used = scale
    if not used.b_scale > (max_q + 1.0) / 2.0:
        # Scale from the previous round is too small for this plan: fall back
        # to the exact rule B = max Q + 1 and re-evaluate the bound.
        used = ScaleState.from_max_q(max_q)
        g = gamma(fit, parts, sum(parts), cfg, used, kind)
        if not 0.0 < g < 1.0:
            raise Infeasible("no partition achieves an error bound inside (0, 1)")
    return PartitionPlan(k=sum(parts), parts=tuple(parts), code_bits=code_bits,
                         gamma=g, scale=used, kind=kind, max_q=max_q)


def _bump_last(parts: list[int], delta: int, p_max: int) -> list[int] | None:
    """Grow a partition by ``delta`` units, filling from the last packet."""
    out = list(parts)
    for i in range(len(out) - 1, -1, -1):
        take = min(p_max - out[i], delta)
        out[i] += take
        delta -= take
        if delta == 0:
            return out
    return None


def optimize_plan(fit: PowerLawFit, cfg: BudgetConfig, scale: ScaleState,
                  kind: QuantizerKind, k_stride: int = 1) -> PartitionPlan:
    """Sweep k, partition each k with SMO, return the plan of minimal gamma.

    For each k the sweep runs from two deterministic starts, the near-equal
    split and the previous k's winning partition carried forward, and keeps
    the better fixed point (the warm start escapes the rare integer local
    minima of a single cold sweep).  Ties prefer the smaller k.  Plans whose
    bound falls outside (0, 1) are rejected.  ``k_stride`` thins the k sweep
    for speed; 1 enumerates every value.
    """
    if k_stride < 1:
        raise InvalidInput("k_stride must be >= 1")
    r_packets = cfg.packets_per_round
    best_g = math.inf
    best_parts = None
    warm: list[int] | None = None
    for k in range(cfg.k_min, min(cfg.k_max, cfg.dim) + 1, k_stride):
        candidates = []
        try:
            candidates.append(
                smo_partition(k, r_packets, fit, cfg, scale, kind, escape=False))
        except Infeasible:
            pass
        if warm is not None and r_packets > 1:
            start = _bump_last(warm, k - sum(warm), cfg.p_max)
            if start is not None:
                try:
                    candidates.append(
                        smo_partition(k, r_packets, fit, cfg, scale, kind,
                                      initial=start, escape=False))
                except Infeasible:
                    pass
        k_best_g = math.inf
        k_best = None
        for parts in candidates:
            g = gamma(fit, parts, k, cfg, scale, kind)
            if 0.0 < g < 1.0 and g < k_best_g:
                k_best_g = g
                k_best = parts
        if k_best is None:
            continue
        warm = k_best
        if k_best_g < best_g:
            best_g = k_best_g
            best_parts = k_best
    if best_parts is None:
        raise Infeasible("no feasible k in the budget range")
    return _plan_from_parts(best_parts, cfg, fit, scale, kind, best_g)


def fixed_length_plan(cfg: BudgetConfig, y_fixed: int, fit: PowerLawFit, scale: ScaleState,
                      kind: QuantizerKind, k: int | None = None) -> PartitionPlan:
    """Comparison plan with one code length for every packet.

    Each packet carries ``floor((b - H) / (s + y_fixed))`` updates; ``k``
    defaults to filling all R packets (capped at the model dimension, in
    which case the first packet may be partial).  ``y_fixed = 32`` is the
    plain top-k baseline.
    """
    y_fixed = int(y_fixed)
    if not 1 <= y_fixed <= MAX_CODE_BITS:
        raise InvalidBits(f"fixed code length must be in [1, 32], got {y_fixed}")
    per_packet = cfg.payload_bits // (cfg.pid_bits + y_fixed)
    if per_packet < 1:
        raise Infeasible("not even one update fits a packet at this code length")
    k_cap = min(cfg.packets_per_round * per_packet, cfg.dim)
    if k is None:
        k = k_cap
    elif not 1 <= k <= k_cap:
        raise InvalidInput(f"k must lie in [1, {k_cap}]")

    full, partial = divmod(k, per_packet)
    parts = ([partial] if partial else []) + [per_packet] * full
    code_bits = [y_fixed] * len(parts)
    g = gamma(fit, parts, k, cfg, scale, kind, code_bits=code_bits)
    max_q = max(quant_error_model(kind, p, y_fixed) for p in parts)
    return PartitionPlan(k=k, parts=tuple(parts), code_bits=tuple(code_bits),
                         gamma=g, scale=scale, kind=kind, max_q=max_q)
