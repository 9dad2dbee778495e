"""Deterministic FedAvg simulation with pluggable update compression.

Each round the server samples clients, every sampled client runs E local
SGD steps and returns its update (initial minus final parameters), the
update travels through the configured compressor as real packet bytes, and
the server aggregates the decoded updates.  All randomness derives from one
master seed through tagged counter-based streams, so runs are reproducible
bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .codelen import BudgetConfig, ScaleState, fixed_length_plan
from .data import SyntheticSpec, generate_synthetic, load_idx_dataset
from .errors import InvalidInput
from .models import ModelSpec, make_model
from .pipeline import (
    SCALE_METADATA_BYTES,
    CompressedRound,
    CompressionConfig,
    compress,
    compress_with_plan,
    decompress,
    measured_error,
)
from .quantizer import QuantizerKind
from .update_model import UpdateVector, fit_power_law, rank_by_magnitude

# Seed-stream tags: every source of randomness hangs off (seed, tag, ...).
TAG_DATA = 1
TAG_INIT = 2
TAG_SAMPLE = 3
TAG_TRAIN = 4
TAG_QUANT = 5


def _philox(*entropy) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(entropy))))


@dataclass(frozen=True)
class CompressorSpec:
    name: str  # "none" | "fed_cvlc" | "topk" | "fixed"
    y_bits: int | None = None

    @classmethod
    def parse(cls, obj) -> "CompressorSpec":
        if isinstance(obj, dict):
            if "fixed" in obj:
                return cls(name="fixed", y_bits=int(obj["fixed"]))
            obj = obj.get("type", "")
        text = str(obj).strip().lower()
        if text in ("none", "fed_cvlc", "topk"):
            return cls(name=text)
        if text.startswith("fixed"):
            return cls(name="fixed", y_bits=int(text[len("fixed"):].lstrip(":_")))
        raise InvalidInput(f"unknown compressor spec {obj!r}")

    def label(self) -> str:
        return f"fixed{self.y_bits}" if self.name == "fixed" else self.name


@dataclass(frozen=True)
class IdxSpec:
    images: str
    labels: str
    test_fraction: float = 0.2


@dataclass(frozen=True)
class FLConfig:
    n_clients: int
    clients_per_round: int
    local_iters: int
    batch_size: int | None
    learning_rate: float
    rounds: int
    seed: int
    data: SyntheticSpec | IdxSpec = field(default_factory=SyntheticSpec)
    model: ModelSpec = field(default_factory=lambda: ModelSpec("logistic"))
    compressor: CompressorSpec = field(default_factory=lambda: CompressorSpec("none"))
    quantizer: QuantizerKind = QuantizerKind.PQ
    packet_bits: int = 12000
    packets_per_round: int = 10
    header_bits: int = 128
    k_stride: int = 1
    error_feedback: bool = False

    def __post_init__(self):
        if self.clients_per_round > self.n_clients:
            raise InvalidInput("cannot sample more clients than exist")
        if self.local_iters < 1 or self.rounds < 1:
            raise InvalidInput("local_iters and rounds must be >= 1")

    @classmethod
    def parse(cls, obj: dict) -> "FLConfig":
        data_obj = obj.get("data", {})
        if isinstance(data_obj, dict) and data_obj.get("type") == "idx":
            data = IdxSpec(images=data_obj["images"], labels=data_obj["labels"],
                           test_fraction=float(data_obj.get("test_fraction", 0.2)))
        else:
            data = SyntheticSpec.parse(data_obj if isinstance(data_obj, dict) else {})
        budget = obj.get("budget", {})
        return cls(
            n_clients=int(obj["n_clients"]),
            clients_per_round=int(obj["clients_per_round"]),
            local_iters=int(obj.get("local_iters", 1)),
            batch_size=obj.get("batch_size"),
            learning_rate=float(obj["learning_rate"]),
            rounds=int(obj["rounds"]),
            seed=int(obj.get("seed", 0)),
            data=data,
            model=ModelSpec.parse(obj.get("model", "logistic")),
            compressor=CompressorSpec.parse(obj.get("compressor", "none")),
            quantizer=QuantizerKind.parse(obj.get("quantizer", "pq")),
            packet_bits=int(budget.get("b_bits", 12000)),
            packets_per_round=int(budget.get("R", 10)),
            header_bits=int(budget.get("H_bits", 128)),
            k_stride=int(obj.get("k_stride", 1)),
            error_feedback=bool(obj.get("error_feedback", False)),
        )


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    test_accuracy: float
    train_loss: float
    uplink_bytes_total: int
    mean_gamma: float
    mean_measured_error: float


@dataclass
class RoundDetail:
    """Per-client compression record, kept only when details are requested."""

    round: int
    client_id: int
    compressed: CompressedRound


def local_train(model, w: np.ndarray, data, e_iters: int, batch_size: int | None,
                lr: float, rng: np.random.Generator) -> UpdateVector:
    """E mini-batch SGD steps; returns initial minus final parameters."""
    x, y = data
    if x.shape[0] == 0:
        raise InvalidInput("client dataset is empty")
    if e_iters < 1:
        raise InvalidInput("need at least one local iteration")
    w_cur = w.copy()
    n = x.shape[0]
    for _ in range(e_iters):
        if batch_size is None or batch_size >= n:
            xb, yb = x, y
        else:
            idx = rng.choice(n, size=batch_size, replace=False)
            xb, yb = x[idx], y[idx]
        _, grad = model.loss_and_grad(w_cur, xb, yb)
        w_cur = w_cur - lr * grad
    return UpdateVector.from_array(w - w_cur)


def aggregate(w: np.ndarray, updates: list[UpdateVector]) -> np.ndarray:
    """FedAvg step: subtract the mean update, summing in the given order."""
    if not updates:
        raise InvalidInput("nothing to aggregate")
    total = np.zeros_like(w)
    for u in updates:
        if u.d != w.size:
            raise InvalidInput("update dimension mismatch")
        total = total + u.values
    return w - total / len(updates)


def build_datasets(cfg: FLConfig):
    if isinstance(cfg.data, IdxSpec):
        return load_idx_dataset(cfg.data.images, cfg.data.labels, cfg.n_clients,
                                cfg.data.test_fraction)
    return generate_synthetic(cfg.data, cfg.n_clients,
                              np.random.SeedSequence([cfg.seed, TAG_DATA]))


class _Compressor:
    """Per-run compression state: one scale (and residual) per client."""

    def __init__(self, cfg: FLConfig, dim: int):
        self.cfg = cfg
        self.spec = cfg.compressor
        self.kind = cfg.quantizer
        self.budget = BudgetConfig(bits_per_packet=cfg.packet_bits,
                                   packets_per_round=cfg.packets_per_round,
                                   header_bits=cfg.header_bits, dim=dim)
        self.scales: dict[int, ScaleState] = {}
        self.residuals: dict[int, np.ndarray | None] = {}
        if self.spec.name == "fed_cvlc":
            self._initial_scale = ScaleState.initial(self.kind, self.budget)
            self._fixed_y = None
        else:
            self._fixed_y = 32 if self.spec.name == "topk" else self.spec.y_bits
            # The static plan's worst packet error is known up front, so the
            # scale can start at its exact value.
            per_packet = self.budget.payload_bits // (self.budget.pid_bits + self._fixed_y)
            if per_packet < 1:
                raise InvalidInput("fixed code length does not fit a single update")
            from .quantizer import quant_error_model
            self._initial_scale = ScaleState.from_max_q(
                quant_error_model(self.kind, per_packet, self._fixed_y))

    def run_client(self, cid: int, rnd: int, u: UpdateVector) -> CompressedRound:
        scale = self.scales.get(cid, self._initial_scale)
        residual = self.residuals.get(cid) if self.cfg.error_feedback else None
        seed = np.random.SeedSequence([self.cfg.seed, TAG_QUANT, rnd, cid])
        if self.spec.name == "fed_cvlc":
            comp_cfg = CompressionConfig(kind=self.kind, budget=self.budget,
                                         k_stride=self.cfg.k_stride,
                                         error_feedback=self.cfg.error_feedback)
            out = compress(u, comp_cfg, scale, seed, residual=residual)
        else:
            values = u.values if residual is None else u.values + residual
            compensated = UpdateVector.from_array(values)
            fit = fit_power_law(rank_by_magnitude(compensated), compensated)
            plan = fixed_length_plan(self.budget, self._fixed_y, fit, scale, self.kind)
            out = compress_with_plan(u, plan, self.budget, fit, seed, residual=residual)
        self.scales[cid] = out.plan.next_scale()
        if self.cfg.error_feedback:
            self.residuals[cid] = out.residual
        return out


def run_federated(cfg: FLConfig, record_details: bool = False):
    """Run the full simulation; returns per-round metrics.

    With ``record_details=True`` returns ``(metrics, details)`` where details
    hold every client's compression record for offline analysis.
    """
    clients, test = build_datasets(cfg)
    n_features = clients[0][0].shape[1]
    n_classes = int(max(int(y.max()) for _, y in clients)) + 1
    model = make_model(cfg.model, n_features, n_classes)
    w = model.init(_philox(cfg.seed, TAG_INIT))

    compressor = None if cfg.compressor.name == "none" else _Compressor(cfg, model.dim)
    sample_rng = _philox(cfg.seed, TAG_SAMPLE)
    test_x, test_y = test

    metrics: list[RoundMetrics] = []
    details: list[RoundDetail] = []
    for rnd in range(cfg.rounds):
        sampled = np.sort(sample_rng.choice(cfg.n_clients, size=cfg.clients_per_round,
                                            replace=False))
        updates: list[UpdateVector] = []
        bytes_total = 0
        gammas: list[float] = []
        errors: list[float] = []
        losses: list[float] = []
        for cid in (int(c) for c in sampled):
            data = clients[cid]
            losses.append(model.loss(w, data[0], data[1]))
            u = local_train(model, w, data, cfg.local_iters, cfg.batch_size,
                            cfg.learning_rate, _philox(cfg.seed, TAG_TRAIN, rnd, cid))
            if compressor is None:
                updates.append(u)
                bytes_total += 4 * u.d  # raw binary32 upload
                continue
            residual_before = compressor.residuals.get(cid) if cfg.error_feedback else None
            out = compressor.run_client(cid, rnd, u)
            u_hat = decompress(out.packets, u.d, out.plan.scale.b_scale)
            reference = u if residual_before is None else \
                UpdateVector.from_array(u.values + residual_before)
            out.measured_rel_error = measured_error(reference, u_hat)
            updates.append(u_hat)
            bytes_total += out.total_bytes
            gammas.append(out.plan.gamma)
            errors.append(out.measured_rel_error)
            if record_details:
                details.append(RoundDetail(round=rnd, client_id=cid, compressed=out))
        w = aggregate(w, updates)
        acc = float(np.mean(model.predict(w, test_x) == test_y))
        metrics.append(RoundMetrics(
            round=rnd,
            test_accuracy=acc,
            train_loss=float(np.mean(losses)),
            uplink_bytes_total=bytes_total,
            mean_gamma=float(np.mean(gammas)) if gammas else 0.0,
            mean_measured_error=float(np.mean(errors)) if errors else 0.0,
        ))
    if record_details:
        return metrics, details
    return metrics
