"""Dataset ingestion, synthetic blob generation and client partitioning.

All generators and partitioners are deterministic functions of their seed;
shards are index views into an immutable parent dataset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import Batch

_BLOB_TAG = 0xB10B
_IID_TAG = 0x11D
_SHARD_TAG = 0x5A4D
_BATCH_TAG = 0xBA7C


class PartitionError(ValueError):
    """A requested client partition is infeasible."""


class DataFormatError(ValueError):
    """A data file failed to parse or validate."""


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (N, d)
    labels: np.ndarray    # (N,)
    classes: int
    source: str = "memory"

    def __post_init__(self):
        object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels))
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise DataFormatError("dataset needs at least one sample")
        if self.labels.shape != (self.features.shape[0],):
            raise DataFormatError("labels must match the number of samples")
        self.features.flags.writeable = False
        self.labels.flags.writeable = False

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class ClientShard:
    client_id: int
    indices: np.ndarray  # positions into the parent dataset

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.intp)
        idx.flags.writeable = False
        object.__setattr__(self, "indices", idx)
        if idx.size == 0:
            raise PartitionError(f"client {self.client_id} got an empty shard")

    def __len__(self) -> int:
        return self.indices.size

    def view(self, dataset: Dataset) -> Dataset:
        return Dataset(
            dataset.features[self.indices],
            dataset.labels[self.indices],
            dataset.classes,
            source=f"{dataset.source}#client{self.client_id}",
        )


def load_csv(path, d: int, k: int) -> Dataset:
    """Parse `d` comma-separated features plus one integer label per line."""
    feats, labels = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != d + 1:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {d + 1} fields, got {len(parts)}"
                )
            try:
                row = [float(p) for p in parts[:d]]
                label = int(parts[d])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
            if not 0 <= label < k:
                raise DataFormatError(
                    f"{path}:{lineno}: label {label} outside [0, {k})"
                )
            feats.append(row)
            labels.append(label)
    if not feats:
        raise DataFormatError(f"{path}: no samples")
    return Dataset(np.array(feats), np.array(labels, dtype=np.intp), k, source=str(path))


def write_csv(dataset: Dataset, path):
    """Inverse of load_csv; floats use shortest round-trip formatting."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row, label in zip(dataset.features, dataset.labels):
            fields = [repr(float(x)) for x in row] + [str(int(label))]
            fh.write(",".join(fields) + "\n")


def gen_blobs(
    k: int, d: int, per_class: int, separation: float, noise: float, seed: int
) -> Dataset:
    """Gaussian blobs with orthogonally placed class means.

    Class c's mean sits at `separation` along axis c, so d >= k is required.
    Samples are ordered class by class.
    """
    if k < 2:
        raise ValueError("need at least two classes")
    if d < k:
        raise ValueError("need d >= k for orthogonal mean placement")
    rng = np.random.default_rng([_BLOB_TAG, seed])
    feats = np.empty((k * per_class, d))
    labels = np.empty(k * per_class, dtype=np.intp)
    for c in range(k):
        block = noise * rng.standard_normal((per_class, d))
        block[:, c] += separation
        feats[c * per_class : (c + 1) * per_class] = block
        labels[c * per_class : (c + 1) * per_class] = c
    return Dataset(feats, labels, k, source=f"blobs(k={k},d={d},seed={seed})")


def partition_iid(dataset: Dataset, n: int, seed: int) -> list[ClientShard]:
    """Seed-determined permutation split into n near-equal shards."""
    if dataset.n < n:
        raise PartitionError(f"cannot split {dataset.n} samples over {n} clients")
    perm = np.random.default_rng([_IID_TAG, seed]).permutation(dataset.n)
    base, extra = divmod(dataset.n, n)
    shards, start = [], 0
    for i in range(n):
        size = base + (1 if i < extra else 0)
        shards.append(ClientShard(i, perm[start : start + size]))
        start += size
    return shards


def partition_label_shards(
    dataset: Dataset, n: int, classes_per_client: int, seed: int
) -> list[ClientShard]:
    """Class-sharded non-IID split: each client gets `classes_per_client`
    contiguous chunks drawn from that many distinct classes.

    Each class is cut into equal chunks (the last absorbs the remainder);
    chunk groups are dealt to a seed-permuted client order with stride n,
    which keeps the classes within one client distinct whenever feasible.
    """
    c = classes_per_client
    k = dataset.classes
    if c < 1:
        raise PartitionError("classes_per_client must be >= 1")
    if n * c < k:
        raise PartitionError(f"{n} clients x {c} chunks cannot cover {k} classes")
    rng = np.random.default_rng([_SHARD_TAG, seed])
    class_order = rng.permutation(k)
    client_order = rng.permutation(n)

    total_chunks = n * c
    base, extra = divmod(total_chunks, k)
    slots = []  # (class, chunk index range), grouped by class
    for pos, cls in enumerate(class_order):
        q = base + (1 if pos < extra else 0)
        idx = np.flatnonzero(dataset.labels == cls)
        if len(idx) < q:
            raise PartitionError(
                f"class {cls} has {len(idx)} samples, cannot cut {q} chunks"
            )
        size = len(idx) // q
        for j in range(q):
            lo = j * size
            hi = (j + 1) * size if j < q - 1 else len(idx)
            slots.append(idx[lo:hi])

    per_client = [[] for _ in range(n)]
    for pos, chunk in enumerate(slots):
        per_client[client_order[pos % n]].append(chunk)
    return [
        ClientShard(i, np.concatenate(chunks)) for i, chunks in enumerate(per_client)
    ]


def minibatch_stream(
    dataset: Dataset, shard: ClientShard, batch_size: int, epoch: int, seed: int
) -> list[Batch]:
    """One local epoch: a fresh seed-and-epoch-keyed permutation of the
    shard cut into batches, with a final short batch if needed."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    perm = np.random.default_rng([_BATCH_TAG, seed, epoch]).permutation(len(shard))
    order = shard.indices[perm]
    batches = []
    for start in range(0, len(order), batch_size):
        sel = order[start : start + batch_size]
        batches.append(Batch(dataset.features[sel], dataset.labels[sel]))
    return batches
