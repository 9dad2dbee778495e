"""Client dataset generation: Gaussian-mixture synthetic data and an IDX loader.

Synthetic data draws one Gaussian blob per class.  IID mode gives every
client samples from all classes; non-IID mode restricts each client to a
fixed-size label subset, mirroring label-skewed federated splits.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput


@dataclass(frozen=True)
class SyntheticSpec:
    n_features: int = 16
    n_classes: int = 4
    samples_per_client: int = 60
    test_samples: int = 1000
    labels_per_client: int | None = None  # None = IID
    class_sep: float = 4.0
    noise: float = 1.0

    @classmethod
    def parse(cls, obj: dict) -> "SyntheticSpec":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in obj.items() if k in known})


ClientData = tuple[np.ndarray, np.ndarray]


def _class_centers(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    raw = rng.normal(size=(spec.n_classes, spec.n_features))
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    return spec.class_sep * raw


def generate_synthetic(spec: SyntheticSpec, n_clients: int, seed) -> tuple[list[ClientData], ClientData]:
    """Build per-client training sets plus one balanced held-out test set."""
    if n_clients < 1:
        raise InvalidInput("need at least one client")
    if spec.n_features < 1 or spec.n_classes < 2:
        raise InvalidInput("need >= 1 feature and >= 2 classes")
    if spec.samples_per_client < 1 or spec.test_samples < 1:
        raise InvalidInput("need positive sample counts")
    if spec.labels_per_client is not None and not 1 <= spec.labels_per_client <= spec.n_classes:
        raise InvalidInput("labels_per_client must lie in [1, n_classes]")

    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    center_seq, test_seq, *client_seqs = root.spawn(n_clients + 2)
    centers = _class_centers(spec, np.random.Generator(np.random.Philox(center_seq)))

    clients = []
    for cs in client_seqs:
        rng = np.random.Generator(np.random.Philox(cs))
        m = spec.samples_per_client
        if spec.labels_per_client is None:
            labels = rng.integers(0, spec.n_classes, size=m)
        else:
            subset = rng.choice(spec.n_classes, size=spec.labels_per_client, replace=False)
            # Round-robin over the subset: every chosen label actually occurs.
            labels = subset[np.arange(m) % spec.labels_per_client]
            rng.shuffle(labels)
        x = centers[labels] + spec.noise * rng.normal(size=(m, spec.n_features))
        clients.append((x, labels.astype(np.int64)))

    rng = np.random.Generator(np.random.Philox(test_seq))
    labels = np.arange(spec.test_samples) % spec.n_classes
    rng.shuffle(labels)
    x = centers[labels] + spec.noise * rng.normal(size=(spec.test_samples, spec.n_features))
    return clients, (x, labels.astype(np.int64))


def load_idx(path) -> np.ndarray:
    """Read an unsigned-byte IDX file (images or labels)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[0] != 0 or blob[1] != 0:
        raise InvalidInput("not an IDX file")
    dtype_code, ndim = blob[2], blob[3]
    if dtype_code != 0x08:
        raise InvalidInput("only unsigned-byte IDX files are supported")
    dims = struct.unpack_from(f">{ndim}I", blob, 4)
    offset = 4 + 4 * ndim
    count = int(np.prod(dims))
    if len(blob) != offset + count:
        raise InvalidInput("IDX file size does not match its dimensions")
    return np.frombuffer(blob, dtype=np.uint8, count=count, offset=offset).reshape(dims)


def load_idx_dataset(images_path, labels_path, n_clients: int,
                     test_fraction: float = 0.2) -> tuple[list[ClientData], ClientData]:
    """Split an IDX image/label pair round-robin across clients."""
    images = load_idx(images_path)
    labels = load_idx(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise InvalidInput("image and label counts differ")
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    y = labels.astype(np.int64)
    n_test = max(1, int(test_fraction * x.shape[0]))
    test = (x[:n_test], y[:n_test])
    x, y = x[n_test:], y[n_test:]
    if x.shape[0] < n_clients:
        raise InvalidInput("not enough samples for the requested client count")
    clients = [(x[i::n_clients], y[i::n_clients]) for i in range(n_clients)]
    return clients, test
