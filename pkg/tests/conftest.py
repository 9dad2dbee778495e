"""Shared oracles for the test suite.

Everything here is an independent re-derivation of the quantities under
test: plain-float formula evaluations, exhaustive enumerations, and a
synthetic generator for exactly power-law-ranked vectors.  None of it calls
back into the code paths it is used to check.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from vlcfed import BudgetConfig, PowerLawFit, QuantizerKind, ScaleState, UpdateVector


def q_model_ref(kind: QuantizerKind, z: float, y: float) -> float:
    """Quantization error coefficient, straight from the two formulas."""
    if kind is QuantizerKind.PQ:
        return z / (2.0**y - 1.0) ** 2
    return min(z / 2.0 ** (2 * y), math.sqrt(z) / 2.0**y)


def code_bits_ref(cfg: BudgetConfig, p: int) -> int:
    return min(32, (cfg.bits_per_packet - cfg.header_bits) // p - cfg.pid_bits)


def gamma_ref(fit: PowerLawFit, parts, cfg: BudgetConfig, scale: ScaleState,
              kind: QuantizerKind, code_bits=None) -> float | None:
    """Term-by-term evaluation of the error bound; None if infeasible."""
    beta = fit.beta
    d = cfg.dim
    k = sum(parts)
    denom = d**beta - 1.0
    # Empty drop set contributes no error (same convention as production).
    total = 0.0 if k >= d else (d**beta - (k + 1) ** beta) / denom
    z_prev = 0
    for i, p in enumerate(parts):
        y = code_bits[i] if code_bits is not None else code_bits_ref(cfg, p)
        if y < 1:
            return None
        q = q_model_ref(kind, p, y)
        z = z_prev + p
        coef = q / scale.b_scale**2 + 1.0 / scale.b_companion**2
        total += coef * (z**beta - max(z_prev, 1) ** beta) / denom
        z_prev = z
    return total


def monotone_compositions(k: int, r: int):
    """All non-decreasing positive integer r-tuples summing to k."""
    def rec(remaining, parts_left, minimum):
        if parts_left == 1:
            if remaining >= minimum:
                yield (remaining,)
            return
        for first in range(minimum, remaining // parts_left + 1):
            for rest in rec(remaining - first, parts_left - 1, first):
                yield (first,) + rest
    yield from rec(k, r, 1)


def brute_force_best(fit: PowerLawFit, cfg: BudgetConfig, scale: ScaleState,
                     kind: QuantizerKind):
    """Exhaustive minimum of gamma over (k, monotone compositions).

    Mirrors the production rule set: bounds outside (0, 1) are rejected and
    the winner's scale is raised to max Q + 1 when the incoming scale is too
    small for it.  Returns (gamma, parts) or (None, None).
    """
    best = None
    best_parts = None
    r = cfg.packets_per_round
    for k in range(cfg.k_min, min(cfg.k_max, cfg.dim) + 1):
        for parts in monotone_compositions(k, r):
            g = gamma_ref(fit, parts, cfg, scale, kind)
            if g is None or not 0.0 < g < 1.0:
                continue
            if best is None or g < best:
                best, best_parts = g, parts
    if best_parts is None:
        return None, None
    max_q = max(q_model_ref(kind, p, code_bits_ref(cfg, p)) for p in best_parts)
    if not scale.b_scale > (max_q + 1.0) / 2.0:
        best = gamma_ref(fit, best_parts, cfg, ScaleState.from_max_q(max_q), kind)
    return best, best_parts


def power_law_vector(d: int, alpha: float, phi: float, seed: int) -> UpdateVector:
    """Vector whose ranked magnitudes are exactly phi * l^alpha.

    Signs and coordinate placement are randomized; the decay profile is not.
    """
    rng = np.random.default_rng(seed)
    mags = phi * np.arange(1, d + 1, dtype=np.float64) ** alpha
    signs = rng.choice([-1.0, 1.0], size=d)
    values = np.empty(d)
    values[rng.permutation(d)] = mags * signs
    return UpdateVector.from_array(values)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
