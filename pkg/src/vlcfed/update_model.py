"""Model-update vectors, magnitude ranking and the power-law decay fit.

A model update is the dense difference between a client's initial and
post-training parameters in one round.  Ranking its coordinates by absolute
value and fitting ``|u_(l)| = phi * l^alpha`` on the ranked magnitudes gives
the decay model that drives the code-length optimizer.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDistribution, InvalidInput

# Ranks with magnitude at or below this floor carry no decay information and
# are excluded from the log-log fit (avoids log(0)).
MAGNITUDE_FLOOR = 1e-12

# beta = 2*alpha + 1 is kept away from 0 so that ratios of the form
# (x^beta - y^beta) / (d^beta - 1) stay well-defined without a special case.
BETA_EPSILON = 1e-6

UVEC_MAGIC = b"UVEC"


@dataclass(frozen=True)
class UpdateVector:
    """Dense model-update vector of dimension ``d``."""

    values: np.ndarray
    d: int

    @classmethod
    def from_array(cls, values) -> "UpdateVector":
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 1 or arr.size < 1:
            raise InvalidInput("update vector must be a non-empty 1-D array")
        if not np.all(np.isfinite(arr)):
            raise InvalidInput("update vector contains non-finite values")
        return cls(values=arr, d=int(arr.size))

    @property
    def norm_sq(self) -> float:
        return float(np.dot(self.values, self.values))


@dataclass(frozen=True)
class RankedUpdates:
    """Permutation ordering coordinates by descending |value|.

    Ties are broken by ascending original index.  ``source_norm_sq`` is the
    squared L2 norm of the source vector.
    """

    order: np.ndarray
    source_norm_sq: float


@dataclass(frozen=True)
class PowerLawFit:
    """Fitted ranked-magnitude decay ``|u_(l)| ~= phi * l^alpha``.

    ``beta`` is ``2*alpha + 1`` in the regular decaying regime (``alpha < 0``)
    and is nudged away from zero by ``BETA_EPSILON``.  A non-decaying fit
    (raw slope >= 0) keeps its raw ``alpha`` but carries the sentinel
    ``beta = -BETA_EPSILON`` so downstream formulas stay in the decaying
    regime.
    """

    alpha: float
    phi: float
    beta: float


def rank_by_magnitude(u: UpdateVector) -> RankedUpdates:
    """Return the descending-|value| permutation of ``u``.

    Stable sort on negated magnitudes keeps ties in ascending index order.
    """
    if not np.all(np.isfinite(u.values)):
        raise InvalidInput("update vector contains non-finite values")
    order = np.argsort(-np.abs(u.values), kind="stable").astype(np.int64)
    return RankedUpdates(order=order, source_norm_sq=float(np.dot(u.values, u.values)))


def fit_power_law(r: RankedUpdates, u: UpdateVector) -> PowerLawFit:
    """Least-squares fit of log-magnitude against log-rank.

    Uses ordinary least squares on ``(log l, log |u_(l)|)`` over ranks whose
    magnitude exceeds ``MAGNITUDE_FLOOR``.  Requires at least two usable
    ranks, otherwise raises :class:`DegenerateDistribution`.
    """
    if u.d < 2:
        raise DegenerateDistribution("need d >= 2 to fit a decay model")
    mags = np.abs(u.values[r.order])
    mask = mags > MAGNITUDE_FLOOR
    n_used = int(np.count_nonzero(mask))
    if n_used < 2:
        raise DegenerateDistribution("need at least two magnitudes above the floor")

    ranks = np.arange(1, u.d + 1, dtype=np.float64)[mask]
    log_l = np.log(ranks)
    log_m = np.log(mags[mask])

    x_mean = log_l.mean()
    y_mean = log_m.mean()
    var = float(np.dot(log_l - x_mean, log_l - x_mean))
    cov = float(np.dot(log_l - x_mean, log_m - y_mean))
    slope = cov / var
    intercept = y_mean - slope * x_mean

    alpha = slope
    phi = float(np.exp(intercept))
    if alpha >= 0.0:
        # No decay: keep the raw slope, force the just-barely-decaying sentinel.
        beta = -BETA_EPSILON
    else:
        beta = 2.0 * alpha + 1.0
        if abs(beta) < BETA_EPSILON:
            beta = -BETA_EPSILON if beta <= 0.0 else BETA_EPSILON
    return PowerLawFit(alpha=float(alpha), phi=phi, beta=float(beta))


def write_uvec(path, u: UpdateVector) -> None:
    """Write ``u`` in the binary update-vector format.

    Layout (little-endian): magic ``"UVEC"``, u64 dimension, then ``d``
    IEEE-754 binary32 values.
    """
    with open(path, "wb") as fh:
        fh.write(UVEC_MAGIC)
        fh.write(struct.pack("<Q", u.d))
        fh.write(u.values.astype("<f4").tobytes())


def read_uvec(path) -> UpdateVector:
    """Read an update vector written by :func:`write_uvec`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != UVEC_MAGIC:
        raise InvalidInput("not an update-vector file (bad magic)")
    (d,) = struct.unpack_from("<Q", blob, 4)
    expected = 12 + 4 * d
    if len(blob) != expected:
        raise InvalidInput(f"update-vector file truncated: want {expected} bytes, have {len(blob)}")
    values = np.frombuffer(blob, dtype="<f4", count=d, offset=12).astype(np.float64)
    return UpdateVector.from_array(values)
