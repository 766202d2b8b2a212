"""Datasets, client partitioning, and minority oversampling.

Benchmark images arrive as IDX files (big-endian, magic 0x803/0x801), tabular
data as CSV with a header row and a ``label`` column. Synthetic generators
stand in for datasets that cannot ship with the repository. Partitioning
supports uniform (iid), Dirichlet label-skew, and per-client positive-rate
(label_fraction) modes.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, InvalidInputError, PartitionError
from .rng import RngStream

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

_PARTITION_RETRIES = 100


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = "unnamed"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if self.features.shape[0] != self.labels.shape[0]:
            raise InvalidInputError("feature/label row counts disagree")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise InvalidInputError("labels out of range")
        if not np.all(np.isfinite(self.features)):
            raise InvalidInputError("features contain non-finite values")

    def __len__(self) -> int:
        return self.labels.shape[0]


@dataclass
class ClientShard:
    """One client's slice of a parent dataset.

    ``indices`` is the full local slice; ``train_indices``/``eval_indices``
    are a fixed 80/20 split of it made at partition time, used for local SGD
    and per-client accuracy respectively. ``p_k`` is the client's sampling
    weight (shard size over total by default).
    """

    client_id: int
    indices: np.ndarray
    p_k: float
    train_indices: np.ndarray = field(default=None)
    eval_indices: np.ndarray = field(default=None)

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.train_indices is None:
            self.train_indices = self.indices
        if self.eval_indices is None:
            self.eval_indices = np.empty(0, dtype=np.int64)
        self.train_indices = np.asarray(self.train_indices, dtype=np.int64)
        self.eval_indices = np.asarray(self.eval_indices, dtype=np.int64)

    def __len__(self) -> int:
        return self.indices.shape[0]


@dataclass
class PartitionSpec:
    mode: str  # iid | dirichlet | label_fraction
    K: int
    alpha: float = 0.5
    fractions: list[float] | None = None
    seed: int = 0
    eval_fraction: float = 0.2

    def __post_init__(self):
        if self.mode not in ("iid", "dirichlet", "label_fraction"):
            raise InvalidInputError(f"unknown partition mode {self.mode!r}")
        if self.K < 1:
            raise InvalidInputError("K must be >= 1")
        if self.mode == "dirichlet" and self.alpha <= 0:
            raise InvalidInputError("dirichlet alpha must be > 0")
        if self.mode == "label_fraction":
            if not self.fractions or len(self.fractions) != self.K:
                raise InvalidInputError("label_fraction mode needs one fraction per client")


def _read_exact(fh, count, offset, what):
    data = fh.read(count)
    if len(data) != count:
        raise FormatError(
            f"truncated IDX file: wanted {count} bytes for {what}, got {len(data)}",
            offset=offset,
        )
    return data


def load_idx(images_path, labels_path) -> Dataset:
    """Load an IDX image/label file pair, pixels scaled to [0, 1]."""
    with open(images_path, "rb") as fh:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, 0, "image header"))
        if magic != IDX_IMAGE_MAGIC:
            raise FormatError(f"bad image magic 0x{magic:08x}", offset=0)
        pixels = _read_exact(fh, count * rows * cols, 16, f"{count} images")
    images = np.frombuffer(pixels, dtype=np.uint8).reshape(count, rows * cols)

    with open(labels_path, "rb") as fh:
        magic, label_count = struct.unpack(">II", _read_exact(fh, 8, 0, "label header"))
        if magic != IDX_LABEL_MAGIC:
            raise FormatError(f"bad label magic 0x{magic:08x}", offset=0)
        raw = _read_exact(fh, label_count, 8, f"{label_count} labels")
    labels = np.frombuffer(raw, dtype=np.uint8)

    if count != label_count:
        raise FormatError(f"{count} images but {label_count} labels", offset=8)
    num_classes = int(labels.max()) + 1 if label_count else 1
    return Dataset(images.astype(np.float64) / 255.0, labels.astype(np.int64),
                   num_classes=num_classes, name="idx")


def write_idx(dataset: Dataset, images_path, labels_path, side: int | None = None):
    """Inverse of load_idx for fixtures: quantises features back to uint8."""
    n, f = dataset.features.shape
    if side is None:
        side = int(round(f ** 0.5))
    if side * side != f:
        raise InvalidInputError(f"feature width {f} is not a square image")
    pixels = np.clip(np.round(dataset.features * 255.0), 0, 255).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, n, side, side))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABEL_MAGIC, n))
        fh.write(dataset.labels.astype(np.uint8).tobytes())


def load_csv(path, label_column: str = "label", name: str = "csv") -> Dataset:
    """Load a tabular CSV with a header row; the label column holds class ids."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError("empty CSV file", offset=0) from None
        if label_column not in header:
            raise FormatError(f"CSV header has no {label_column!r} column")
        label_at = header.index(label_column)
        feats, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise FormatError(f"row {lineno} has {len(row)} fields, header has {len(header)}")
            labels.append(int(float(row[label_at])))
            feats.append([float(v) for i, v in enumerate(row) if i != label_at])
    features = np.asarray(feats, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    num_classes = int(labels.max()) + 1 if len(labels) else 1
    return Dataset(features, labels, num_classes=num_classes, name=name)


def synth_tabular(n: int, f: int, fraud_rate: float, seed: int) -> Dataset:
    """Imbalanced two-cluster tabular data, standardised features.

    Stands in for transaction-fraud style datasets: class 1 is the rare
    positive, drawn from a Gaussian cluster offset from the majority cluster.
    """
    if n < 2:
        raise InvalidInputError("need at least 2 samples")
    if not 0.0 < fraud_rate < 1.0:
        raise InvalidInputError("fraud_rate must be in (0, 1)")
    gen = RngStream(seed, "synth_tabular").generator()
    labels = (gen.random(n) < fraud_rate).astype(np.int64)
    # Guarantee both classes appear so downstream partitioning is well posed.
    if labels.sum() == 0:
        labels[0] = 1
    if labels.sum() == n:
        labels[0] = 0
    offset = gen.normal(0.0, 1.0, size=f)
    offset *= 2.0 / np.linalg.norm(offset)
    features = gen.normal(0.0, 1.0, size=(n, f))
    features[labels == 1] += offset
    features -= features.mean(axis=0)
    features /= np.maximum(features.std(axis=0), 1e-12)
    return Dataset(features, labels, num_classes=2, name="synth_tabular")


def synth_image_classes(n: int, num_classes: int, side: int, seed: int,
                        noise: float = 0.35) -> Dataset:
    """Synthetic grayscale 'digit-like' data: per-class templates plus noise.

    Desk-scale substitute for benchmark image sets; values normalised to [0,1].
    """
    if n < num_classes:
        raise InvalidInputError("need at least one sample per class")
    gen = RngStream(seed, "synth_image").generator()
    f = side * side
    templates = gen.random((num_classes, f))
    labels = gen.integers(0, num_classes, size=n)
    features = templates[labels] + gen.normal(0.0, noise, size=(n, f))
    features = np.clip(features, 0.0, 1.0)
    return Dataset(features, labels.astype(np.int64), num_classes=num_classes,
                   name="synth_image")


def _attach_eval_split(shards: list[ClientShard], spec: PartitionSpec,
                       gen: np.random.Generator) -> list[ClientShard]:
    for shard in shards:
        idx = shard.indices
        n_eval = int(len(idx) * spec.eval_fraction)
        order = gen.permutation(len(idx))
        shard.eval_indices = np.sort(idx[order[:n_eval]])
        shard.train_indices = np.sort(idx[order[n_eval:]])
    return shards


def partition(dataset: Dataset, spec: PartitionSpec) -> list[ClientShard]:
    """Split a dataset into K disjoint, nonempty client shards."""
    if len(dataset) == 0:
        raise InvalidInputError("cannot partition an empty dataset")
    if len(dataset) < spec.K:
        raise PartitionError(f"{len(dataset)} samples cannot fill {spec.K} shards")
    gen = RngStream(spec.seed, f"partition:{spec.mode}").generator()

    if spec.mode == "iid":
        order = gen.permutation(len(dataset))
        parts = np.array_split(order, spec.K)
        assignments = [np.sort(p) for p in parts]
    elif spec.mode == "dirichlet":
        assignments = _dirichlet_assign(dataset, spec, gen)
    else:
        assignments = _label_fraction_assign(dataset, spec, gen)

    total = sum(len(a) for a in assignments)
    shards = [
        ClientShard(client_id=k, indices=idx, p_k=len(idx) / total)
        for k, idx in enumerate(assignments)
    ]
    return _attach_eval_split(shards, spec, gen)


def _dirichlet_assign(dataset: Dataset, spec: PartitionSpec,
                      gen: np.random.Generator) -> list[np.ndarray]:
    # Per class: draw a K-dim Dirichlet(alpha) and route that class's samples
    # to clients with those probabilities. Redraw if any client ends up empty.
    for _ in range(_PARTITION_RETRIES):
        buckets = [[] for _ in range(spec.K)]
        for cls in range(dataset.num_classes):
            members = np.flatnonzero(dataset.labels == cls)
            if len(members) == 0:
                continue
            weights = gen.dirichlet(np.full(spec.K, spec.alpha))
            choice = gen.choice(spec.K, size=len(members), p=weights)
            for k in range(spec.K):
                buckets[k].extend(members[choice == k])
        if all(buckets):
            return [np.sort(np.asarray(b, dtype=np.int64)) for b in buckets]
    raise PartitionError(
        f"dirichlet(alpha={spec.alpha}) left an empty shard after {_PARTITION_RETRIES} retries"
    )


def _label_fraction_assign(dataset: Dataset, spec: PartitionSpec,
                           gen: np.random.Generator) -> list[np.ndarray]:
    # Per-client positive-rate targets for binary data (fraud-style skew).
    # Clients get equal total sizes; positives are drawn to hit each target
    # rate, scaled down proportionally if the positive pool runs short.
    if dataset.num_classes != 2:
        raise InvalidInputError("label_fraction mode expects binary labels")
    pos = gen.permutation(np.flatnonzero(dataset.labels == 1))
    neg = gen.permutation(np.flatnonzero(dataset.labels == 0))
    per_client = len(dataset) // spec.K
    wanted = np.array([max(1, round(fr * per_client)) for fr in spec.fractions])
    if wanted.sum() > len(pos):
        scale = len(pos) / wanted.sum()
        wanted = np.maximum(1, np.floor(wanted * scale).astype(np.int64))
        if wanted.sum() > len(pos):
            raise PartitionError("not enough positive samples for requested fractions")
    assignments, p_at, n_at = [], 0, 0
    for k in range(spec.K):
        take_pos = int(wanted[k])
        take_neg = per_client - take_pos
        if take_neg > len(neg) - n_at:
            raise PartitionError("not enough negative samples for requested fractions")
        chunk = np.concatenate([pos[p_at : p_at + take_pos], neg[n_at : n_at + take_neg]])
        p_at += take_pos
        n_at += take_neg
        assignments.append(np.sort(chunk))
    return assignments


def smote(dataset: Dataset, minority_class: int, k_neighbors: int,
          target_ratio: float, rng: np.random.Generator) -> Dataset:
    """Oversample a minority class with segment interpolation.

    Each synthetic point is x + u * (x_nn - x) for a random minority point x,
    one of its k nearest minority neighbours x_nn, and u uniform in [0, 1).
    The original dataset is preserved as a prefix of the result.
    """
    minority = np.flatnonzero(dataset.labels == minority_class)
    n_min, n = len(minority), len(dataset)
    if n_min <= k_neighbors:
        raise InvalidInputError(
            f"minority class has {n_min} samples, need more than k_neighbors={k_neighbors}"
        )
    if not 0.0 < target_ratio < 1.0:
        raise InvalidInputError("target_ratio must be in (0, 1)")
    if n_min / n >= target_ratio:
        return dataset

    needed = int(np.ceil((target_ratio * n - n_min) / (1.0 - target_ratio)))
    pts = dataset.features[minority]
    # Pairwise distances within the minority set; self excluded via +inf.
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    neighbors = np.argsort(d2, axis=1)[:, :k_neighbors]

    base = rng.integers(0, n_min, size=needed)
    pick = rng.integers(0, k_neighbors, size=needed)
    u = rng.random(needed)
    x = pts[base]
    x_nn = pts[neighbors[base, pick]]
    synthetic = x + u[:, None] * (x_nn - x)

    features = np.vstack([dataset.features, synthetic])
    labels = np.concatenate([dataset.labels, np.full(needed, minority_class, dtype=np.int64)])
    return Dataset(features, labels, num_classes=dataset.num_classes,
                   name=f"{dataset.name}+smote")


def subset(dataset: Dataset, indices: np.ndarray, name: str | None = None) -> Dataset:
    idx = np.asarray(indices, dtype=np.int64)
    return Dataset(dataset.features[idx], dataset.labels[idx],
                   num_classes=dataset.num_classes, name=name or dataset.name)
