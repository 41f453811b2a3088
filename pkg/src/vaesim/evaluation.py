"""Downstream evaluation of a trained latent space.

Three protocols, all label-free at training time:

* statistical mapping: each prototype cluster inherits the most frequent
  training label among its members; test samples are then classified by
  their most-similar prototype.
* kNN over a memory bank of labeled training embeddings, Euclidean
  distance, modal label of the k nearest.
* linear probe: one affine layer trained with softmax cross-entropy on
  frozen embeddings.

Embeddings are the encoder means (mu), which keeps every number here
deterministic for a fixed model and seed.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np
import torch

from .data_io import Dataset, SplitPart
from .errors import DegenerateClustering, InvalidArgument, IoError
from .proto_bank import PrototypeBank

UNMAPPED = -1

DEFAULT_KNN_K = 5
DEFAULT_BANK_SIZE = 5000


def embed_mu(encoder, images, batch_size=1024) -> np.ndarray:
    """Encode images to their posterior means, in eval mode, without gradients."""
    encoder.eval()
    dtype = next(encoder.parameters()).dtype
    chunks = []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            x = torch.as_tensor(np.asarray(images[start : start + batch_size]), dtype=dtype)
            mu, _ = encoder(x)
            chunks.append(mu.cpu().numpy())
    return np.concatenate(chunks, axis=0)


def hard_clusters(bank: PrototypeBank, embeddings) -> np.ndarray:
    """Cluster id of the most similar prototype for each embedding row."""
    with torch.no_grad():
        sims = bank.similarity(torch.as_tensor(np.asarray(embeddings), dtype=bank.Q.dtype))
    return sims.argmax(dim=1).cpu().numpy()


@dataclass(frozen=True)
class ClusterLabelMap:
    """mapping[k] is the modal true label of cluster k (UNMAPPED if empty)."""

    mapping: np.ndarray
    support: np.ndarray


def map_from_assignments(cluster_ids, labels, n_clusters) -> ClusterLabelMap:
    """Associate each cluster with its most frequent label.

    Ties break toward the smallest label. Clusters with no members map
    to the UNMAPPED sentinel and carry support 0.
    """
    cluster_ids = np.asarray(cluster_ids)
    labels = np.asarray(labels)
    if cluster_ids.size == 0:
        raise DegenerateClustering("no samples were assigned to any cluster")
    mapping = np.full(n_clusters, UNMAPPED, dtype=np.int64)
    support = np.zeros(n_clusters, dtype=np.int64)
    for k in range(n_clusters):
        members = labels[cluster_ids == k]
        support[k] = members.size
        if members.size:
            mapping[k] = int(np.bincount(members).argmax())
    if (support == 0).all():
        raise DegenerateClustering("every cluster is empty")
    return ClusterLabelMap(mapping=mapping, support=support)


def build_cluster_label_map(encoder, bank: PrototypeBank, images, labels) -> ClusterLabelMap:
    """Map clusters (argmax prototype similarity of mu) to modal labels."""
    embeddings = embed_mu(encoder, images)
    return map_from_assignments(hard_clusters(bank, embeddings), labels, bank.n_prototypes)


def statistical_accuracy(label_map: ClusterLabelMap, encoder, bank: PrototypeBank, images, labels) -> float:
    """Fraction of samples whose mapped cluster label equals their true label.

    Samples landing in an unmapped (empty) cluster count as wrong.
    """
    clusters = hard_clusters(bank, embed_mu(encoder, images))
    predicted = label_map.mapping[clusters]
    return float((predicted == np.asarray(labels)).mean())


@dataclass(frozen=True)
class MemoryBank:
    embeddings: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return self.embeddings.shape[0]


def make_memory_bank(embeddings, labels, size=DEFAULT_BANK_SIZE, seed=0) -> MemoryBank:
    """Seeded subsample of labeled embeddings (everything if size >= N)."""
    embeddings = np.asarray(embeddings)
    labels = np.asarray(labels)
    n = embeddings.shape[0]
    if size < n:
        idx = np.sort(np.random.default_rng(seed).choice(n, size=size, replace=False))
        embeddings, labels = embeddings[idx], labels[idx]
    return MemoryBank(embeddings=embeddings, labels=labels)


def knn_predict(bank_embeddings, bank_labels, queries, k, chunk=1024) -> np.ndarray:
    """Modal label of the k nearest bank rows per query.

    Equal distances resolve toward the lower bank index; modal-label ties
    resolve toward the smaller label.
    """
    bank_embeddings = np.asarray(bank_embeddings, dtype=np.float64)
    bank_labels = np.asarray(bank_labels)
    queries = np.asarray(queries, dtype=np.float64)
    bank_sq = (bank_embeddings**2).sum(axis=1)
    preds = np.empty(queries.shape[0], dtype=np.int64)
    for start in range(0, queries.shape[0], chunk):
        q = queries[start : start + chunk]
        d2 = (q**2).sum(axis=1)[:, None] + bank_sq[None, :] - 2.0 * (q @ bank_embeddings.T)
        np.maximum(d2, 0.0, out=d2)
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        neighbor_labels = bank_labels[order]
        for i in range(q.shape[0]):
            preds[start + i] = int(np.bincount(neighbor_labels[i]).argmax())
    return preds


def knn_accuracy(memory: MemoryBank, test_embeddings, test_labels, k=DEFAULT_KNN_K) -> float:
    """Mean correctness of kNN predictions against the memory bank."""
    if k < 1 or k > len(memory):
        raise InvalidArgument(f"k must lie in [1, {len(memory)}], got {k}")
    preds = knn_predict(memory.embeddings, memory.labels, test_embeddings, k)
    return float((preds == np.asarray(test_labels)).mean())


def linear_probe(train_embeddings, train_labels, num_classes, test_embeddings, test_labels,
                 lr=3e-4, epochs=200, seed=0) -> float:
    """Test accuracy of a single affine classifier on frozen embeddings.

    Full-batch Adam with softmax cross-entropy; degenerate inputs do not
    raise, they just converge poorly.
    """
    train_embeddings = np.asarray(train_embeddings)
    train_labels = np.asarray(train_labels)
    if not np.isfinite(train_embeddings).all() or not np.isfinite(np.asarray(test_embeddings)).all():
        raise InvalidArgument("embeddings must be finite")
    if train_labels.min() < 0 or train_labels.max() >= num_classes:
        raise InvalidArgument(f"labels must lie in [0, {num_classes})")
    torch.manual_seed(seed)
    model = torch.nn.Linear(train_embeddings.shape[1], num_classes)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    x = torch.as_tensor(train_embeddings, dtype=torch.float32)
    y = torch.as_tensor(train_labels, dtype=torch.long)
    for _ in range(epochs):
        opt.zero_grad()
        loss = torch.nn.functional.cross_entropy(model(x), y)
        loss.backward()
        opt.step()
    with torch.no_grad():
        logits = model(torch.as_tensor(np.asarray(test_embeddings), dtype=torch.float32))
        preds = logits.argmax(dim=1).numpy()
    return float((preds == np.asarray(test_labels)).mean())


def export_embeddings(encoder, bank: PrototypeBank, part: SplitPart, path) -> int:
    """Write one CSV row per sample: index,label,cluster,z_0..z_{q-1}.

    Returns the number of data rows written. Values are float32-precise
    decimal strings, so parsing the file reproduces mu exactly.
    """
    embeddings = embed_mu(encoder, part.images).astype(np.float32)
    clusters = hard_clusters(bank, embeddings)
    q = embeddings.shape[1]
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "label", "cluster"] + [f"z_{d}" for d in range(q)])
            for i in range(embeddings.shape[0]):
                row = [i, int(part.labels[i]), int(clusters[i])]
                row += [repr(float(v)) for v in embeddings[i]]
                writer.writerow(row)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return int(embeddings.shape[0])


@dataclass(frozen=True)
class EvalReport:
    """The three downstream accuracies plus run metadata."""

    dataset: str
    statistical_acc: float
    knn_acc: float
    linear_acc: float
    knn_k: int
    bank_size: int
    config_digest: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def config_digest(config_dict: dict) -> str:
    """Short stable digest of a resolved configuration."""
    blob = json.dumps(config_dict, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:12]


def evaluate(encoder, bank: PrototypeBank, dataset: Dataset, knn_k=DEFAULT_KNN_K,
             bank_size=DEFAULT_BANK_SIZE, seed=0, digest="") -> EvalReport:
    """Run all three protocols on a trained model."""
    train_mu = embed_mu(encoder, dataset.train.images)
    test_mu = embed_mu(encoder, dataset.test.images)
    train_clusters = hard_clusters(bank, train_mu)
    label_map = map_from_assignments(train_clusters, dataset.train.labels, bank.n_prototypes)
    test_clusters = hard_clusters(bank, test_mu)
    stat_acc = float((label_map.mapping[test_clusters] == dataset.test.labels).mean())
    memory = make_memory_bank(train_mu, dataset.train.labels, size=bank_size, seed=seed)
    knn_acc = knn_accuracy(memory, test_mu, dataset.test.labels, k=knn_k)
    linear_acc = linear_probe(
        train_mu, dataset.train.labels, dataset.num_classes, test_mu, dataset.test.labels, seed=seed
    )
    return EvalReport(
        dataset=dataset.name,
        statistical_acc=stat_acc,
        knn_acc=knn_acc,
        linear_acc=linear_acc,
        knn_k=knn_k,
        bank_size=len(memory),
        config_digest=digest,
    )
