import dataclasses

import numpy as np
import pytest

import vlcfed.simulator as sim
from vlcfed import InvalidInput, QuantizerKind, UpdateVector, aggregate, local_train
from vlcfed.data import SyntheticSpec, generate_synthetic, load_idx
from vlcfed.models import LogisticModel, MlpModel, ModelSpec, make_model
from vlcfed.simulator import CompressorSpec, FLConfig, run_federated


def fd_gradient(loss_fn, w, step=1e-5):
    grad = np.zeros_like(w)
    for i in range(w.size):
        wp, wm = w.copy(), w.copy()
        wp[i] += step
        wm[i] -= step
        grad[i] = (loss_fn(wp) - loss_fn(wm)) / (2 * step)
    return grad


class TestModels:
    @pytest.mark.parametrize("model", [
        LogisticModel(5, 3),
        MlpModel(5, 4, 3),
    ])
    def test_analytic_gradient_matches_finite_differences(self, model, rng):
        w = model.init(rng) + 0.05 * rng.normal(size=model.dim)
        x = rng.normal(size=(12, 5))
        y = rng.integers(0, 3, size=12)
        _, grad = model.loss_and_grad(w, x, y)
        fd = fd_gradient(lambda v: model.loss(v, x, y), w)
        denom = np.maximum(np.abs(fd), 1e-6)
        assert np.max(np.abs(grad - fd) / denom) < 1e-4

    def test_loss_decreases_under_gradient_steps(self, rng):
        model = MlpModel(6, 8, 2)
        w = model.init(rng)
        x = rng.normal(size=(64, 6))
        y = (x[:, 0] > 0).astype(np.int64)
        losses = []
        for _ in range(50):
            loss, grad = model.loss_and_grad(w, x, y)
            losses.append(loss)
            w = w - 0.5 * grad
        assert losses[-1] < losses[0] * 0.8

    def test_model_spec_parsing(self):
        assert ModelSpec.parse("logistic").name == "logistic"
        assert ModelSpec.parse({"type": "mlp", "hidden": 9}).hidden == 9
        with pytest.raises(InvalidInput):
            ModelSpec.parse("transformer")


class TestData:
    def test_iid_label_histogram_is_uniform(self):
        spec = SyntheticSpec(n_features=4, n_classes=5, samples_per_client=2000,
                             test_samples=50)
        clients, _ = generate_synthetic(spec, 4, seed=0)
        for _, labels in clients:
            counts = np.bincount(labels, minlength=5)
            expect = 2000 / 5
            # 3-sigma multinomial band per class
            sigma = np.sqrt(2000 * 0.2 * 0.8)
            assert np.all(np.abs(counts - expect) <= 3 * sigma)

    def test_non_iid_exact_label_subsets(self):
        spec = SyntheticSpec(n_features=4, n_classes=10, samples_per_client=50,
                             test_samples=50, labels_per_client=2)
        clients, _ = generate_synthetic(spec, 8, seed=1)
        for _, labels in clients:
            assert len(np.unique(labels)) == 2

    def test_deterministic_given_seed(self):
        spec = SyntheticSpec(n_features=3, n_classes=2, samples_per_client=20,
                             test_samples=30)
        a_clients, a_test = generate_synthetic(spec, 3, seed=7)
        b_clients, b_test = generate_synthetic(spec, 3, seed=7)
        for (xa, ya), (xb, yb) in zip(a_clients, b_clients):
            assert np.array_equal(xa, xb) and np.array_equal(ya, yb)
        assert np.array_equal(a_test[0], b_test[0])

    def test_degenerate_specs_rejected(self):
        with pytest.raises(InvalidInput):
            generate_synthetic(SyntheticSpec(n_classes=1), 2, seed=0)
        with pytest.raises(InvalidInput):
            generate_synthetic(SyntheticSpec(n_classes=4, labels_per_client=9), 2, seed=0)

    def test_idx_loader_roundtrip(self, tmp_path):
        images = np.arange(2 * 3 * 4, dtype=np.uint8).reshape(2, 3, 4)
        blob = bytes([0, 0, 0x08, 3]) + b"".join(
            d.to_bytes(4, "big") for d in images.shape) + images.tobytes()
        path = tmp_path / "imgs.idx"
        path.write_bytes(blob)
        assert np.array_equal(load_idx(path), images)

    def test_idx_loader_rejects_bad_files(self, tmp_path):
        bad = tmp_path / "bad.idx"
        bad.write_bytes(bytes([1, 2, 3, 4]) + b"\x00" * 8)
        with pytest.raises(InvalidInput):
            load_idx(bad)
        truncated = tmp_path / "short.idx"
        truncated.write_bytes(bytes([0, 0, 0x08, 1]) + (10).to_bytes(4, "big") + b"\x00" * 3)
        with pytest.raises(InvalidInput):
            load_idx(truncated)


class TestLocalTraining:
    def setup_method(self):
        self.model = LogisticModel(4, 2)
        self.rng = np.random.default_rng(3)
        self.w = self.model.init(self.rng)
        self.data = (self.rng.normal(size=(40, 4)),
                     self.rng.integers(0, 2, size=40))

    def test_zero_learning_rate_gives_zero_update(self):
        u = local_train(self.model, self.w, self.data, 3, 16, 0.0,
                        np.random.default_rng(0))
        assert np.all(u.values == 0)

    def test_full_batch_single_step_is_lr_times_gradient(self):
        lr = 0.3
        u = local_train(self.model, self.w, self.data, 1, None, lr,
                        np.random.default_rng(0))
        fd = fd_gradient(lambda v: self.model.loss(v, *self.data), self.w)
        denom = np.maximum(np.abs(lr * fd), 1e-8)
        assert np.max(np.abs(u.values - lr * fd) / denom) < 1e-4

    def test_deterministic_given_rng_stream(self):
        a = local_train(self.model, self.w, self.data, 5, 8, 0.1,
                        np.random.default_rng(42))
        b = local_train(self.model, self.w, self.data, 5, 8, 0.1,
                        np.random.default_rng(42))
        assert np.array_equal(a.values, b.values)

    def test_empty_dataset_rejected(self):
        with pytest.raises(InvalidInput):
            local_train(self.model, self.w, (np.zeros((0, 4)), np.zeros(0, int)),
                        1, None, 0.1, np.random.default_rng(0))


class TestAggregate:
    def test_single_client(self):
        w = np.array([1.0, 2.0])
        u = UpdateVector.from_array([0.5, -0.5])
        assert np.array_equal(aggregate(w, [u]), [0.5, 2.5])

    def test_zero_updates_keep_model(self):
        w = np.array([1.0, 2.0])
        z = UpdateVector.from_array([0.0, 0.0])
        assert np.array_equal(aggregate(w, [z, z]), w)

    def test_opposite_updates_cancel(self):
        w = np.array([1.0, 2.0])
        u = UpdateVector.from_array([0.7, -0.3])
        m = UpdateVector.from_array([-0.7, 0.3])
        assert np.array_equal(aggregate(w, [u, m]), w)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidInput):
            aggregate(np.zeros(3), [UpdateVector.from_array([1.0, 2.0])])


def tiny_config(compressor="none", rounds=5, seed=11, **kw) -> FLConfig:
    return FLConfig(
        n_clients=8,
        clients_per_round=3,
        local_iters=2,
        batch_size=10,
        learning_rate=0.2,
        rounds=rounds,
        seed=seed,
        data=SyntheticSpec(n_features=6, n_classes=3, samples_per_client=30,
                           test_samples=120, class_sep=3.0),
        model=ModelSpec("logistic"),
        compressor=CompressorSpec.parse(compressor),
        quantizer=QuantizerKind.PQ,
        packet_bits=kw.pop("packet_bits", 640),
        packets_per_round=kw.pop("packets_per_round", 2),
        header_bits=128,
        k_stride=kw.pop("k_stride", 1),
        **kw,
    )


def reference_fedavg(cfg: FLConfig):
    """Straight-line FedAvg: same seed streams, plain double loop."""
    clients, (test_x, test_y) = sim.build_datasets(cfg)
    n_classes = int(max(int(y.max()) for _, y in clients)) + 1
    model = make_model(cfg.model, clients[0][0].shape[1], n_classes)
    w = model.init(sim._philox(cfg.seed, sim.TAG_INIT))
    sample_rng = sim._philox(cfg.seed, sim.TAG_SAMPLE)
    accuracies = []
    weights = [w.copy()]
    for rnd in range(cfg.rounds):
        chosen = np.sort(sample_rng.choice(cfg.n_clients, size=cfg.clients_per_round,
                                           replace=False))
        updates = []
        for cid in chosen:
            x, y = clients[int(cid)]
            w_local = w.copy()
            rng = sim._philox(cfg.seed, sim.TAG_TRAIN, rnd, int(cid))
            for _ in range(cfg.local_iters):
                idx = rng.choice(x.shape[0], size=cfg.batch_size, replace=False)
                _, grad = model.loss_and_grad(w_local, x[idx], y[idx])
                w_local = w_local - cfg.learning_rate * grad
            updates.append(w - w_local)
        w = w - sum(updates) / len(updates)
        weights.append(w.copy())
        accuracies.append(float(np.mean(model.predict(w, test_x) == test_y)))
    return weights, accuracies


class TestRunFederated:
    def test_uncompressed_matches_reference_bit_for_bit(self):
        cfg = tiny_config(rounds=8)
        metrics = run_federated(cfg)
        _, ref_acc = reference_fedavg(cfg)
        assert [m.test_accuracy for m in metrics] == ref_acc

    def test_same_seed_identical_metrics(self):
        cfg = tiny_config(compressor="fed_cvlc", rounds=4)
        a = run_federated(cfg)
        b = run_federated(cfg)
        assert a == b

    def test_separable_logistic_reaches_95_percent(self):
        cfg = dataclasses.replace(
            tiny_config(rounds=60),
            n_clients=20, clients_per_round=5, learning_rate=0.5,
            data=SyntheticSpec(n_features=8, n_classes=2, samples_per_client=40,
                               test_samples=400, class_sep=6.0, noise=1.0),
        )
        metrics = run_federated(cfg)
        assert max(m.test_accuracy for m in metrics) >= 0.95

    @pytest.mark.parametrize("compressor", ["fed_cvlc", "topk", "fixed6"])
    def test_compressed_run_accounting(self, compressor):
        cfg = tiny_config(compressor=compressor, rounds=3, k_stride=2)
        metrics, details = run_federated(cfg, record_details=True)
        by_round = {}
        for det in details:
            by_round.setdefault(det.round, []).append(det)
        for m in metrics:
            recomputed = sum(d.compressed.total_bytes for d in by_round[m.round])
            assert m.uplink_bytes_total == recomputed
            per_round_cap = cfg.clients_per_round * (
                cfg.packets_per_round * cfg.packet_bits // 8 + 8)
            assert m.uplink_bytes_total <= per_round_cap
            assert 0 < m.mean_gamma < 1

    def test_gamma_dominance_over_fixed_baselines(self):
        from vlcfed import fixed_length_plan
        from vlcfed.codelen import BudgetConfig

        cfg = tiny_config(compressor="fed_cvlc", rounds=6)
        _, details = run_federated(cfg, record_details=True)
        assert details
        budget = BudgetConfig(bits_per_packet=cfg.packet_bits,
                              packets_per_round=cfg.packets_per_round,
                              header_bits=cfg.header_bits, dim=_model_dim(cfg))
        for det in details:
            plan = det.compressed.plan
            fit = det.compressed.fit
            for y_fixed in (6, 32):
                baseline = fixed_length_plan(budget, y_fixed, fit, plan.scale,
                                             plan.kind)
                assert plan.gamma <= baseline.gamma

    def test_compressor_spec_parsing(self):
        assert CompressorSpec.parse("fixed6") == CompressorSpec("fixed", 6)
        assert CompressorSpec.parse({"fixed": 8}) == CompressorSpec("fixed", 8)
        assert CompressorSpec.parse("topk").label() == "topk"
        with pytest.raises(InvalidInput):
            CompressorSpec.parse("middle-out")


def _model_dim(cfg: FLConfig) -> int:
    model = make_model(cfg.model, cfg.data.n_features, cfg.data.n_classes)
    return model.dim
