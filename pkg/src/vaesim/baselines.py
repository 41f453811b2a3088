"""Two-step baseline: plain VAE, then k-means on its latent space.

The VAE reuses the exact encoder/decoder stack with zero conditioning
inputs, so the comparison against the prototype-conditioned model is
structural, not approximate. Clustering is Lloyd's algorithm with
k-means++ seeding and best-of-restarts, and the cluster count comes from
the knee of the inertia curve.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from . import data_io, evaluation
from .errors import InvalidArgument, NumericError
from .trainer import TrainConfig
from .vae_core import ConvDecoder, ConvEncoder, elbo_loss, reparameterize

DEFAULT_K_RANGE = tuple(range(2, 21))


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    iterations: int
    # inertia measured after each assignment step; non-increasing
    inertia_history: list[float] = field(default_factory=list)


def _assign_points(points, centroids):
    d2 = (points**2).sum(axis=1)[:, None] + (centroids**2).sum(axis=1)[None, :]
    d2 -= 2.0 * (points @ centroids.T)
    labels = d2.argmin(axis=1)
    # recompute distances directly so inertia is free of expansion error
    dist2 = ((points - centroids[labels]) ** 2).sum(axis=1)
    return labels, dist2


def _kmeans_pp_init(points, k, rng):
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=points.dtype)
    centroids[0] = points[rng.integers(n)]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centroids[j:] = points[rng.integers(n, size=k - j)]
            break
        centroids[j] = points[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((points - centroids[j]) ** 2).sum(axis=1))
    return centroids


def _lloyd(points, centroids, max_iter, tol) -> KMeansResult:
    k = centroids.shape[0]
    centroids = centroids.copy()
    history = []
    iterations = 0
    for iterations in range(1, max_iter + 1):
        labels, dist2 = _assign_points(points, centroids)
        history.append(float(dist2.sum()))
        new_centroids = centroids.copy()
        empty = []
        for j in range(k):
            members = points[labels == j]
            if members.shape[0]:
                new_centroids[j] = members.mean(axis=0)
            else:
                empty.append(j)
        if empty:
            # reseed each empty cluster to the point currently farthest
            # from its assigned centroid
            far_order = np.argsort(-dist2, kind="stable")
            for rank, j in enumerate(empty):
                new_centroids[j] = points[far_order[rank]]
        shift = float(np.sqrt(((new_centroids - centroids) ** 2).sum()))
        centroids = new_centroids
        if shift < tol:
            break
    labels, dist2 = _assign_points(points, centroids)
    inertia = float(dist2.sum())
    history.append(inertia)
    return KMeansResult(
        centroids=centroids,
        labels=labels,
        inertia=inertia,
        iterations=iterations,
        inertia_history=history,
    )


def kmeans(points, k, seed=0, max_iter=300, tol=1e-4, n_restarts=10) -> KMeansResult:
    """Best of n_restarts Lloyd runs with k-means++ seeding."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise InvalidArgument(f"points must be a 2-D array, got shape {points.shape}")
    n = points.shape[0]
    if k < 1:
        raise InvalidArgument(f"k must be >= 1, got {k}")
    if n < k:
        raise InvalidArgument(f"need at least k={k} points, got {n}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_restarts):
        result = _lloyd(points, _kmeans_pp_init(points, k, rng), max_iter, tol)
        if best is None or result.inertia < best.inertia:
            best = result
    return best


@dataclass
class ElbowCurve:
    ks: list[int]
    inertias: list[float]
    chosen_k: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def chord_knee(ks, inertias) -> int:
    """k whose normalized (k, inertia) point is farthest from the chord
    joining the curve's endpoints. On a flat or perfectly straight curve
    this degenerates to an endpoint-adjacent k."""
    x = np.asarray(ks, dtype=np.float64)
    y = np.asarray(inertias, dtype=np.float64)
    x = (x - x[0]) / (x[-1] - x[0])
    span = y.max() - y.min()
    if span == 0.0:
        return int(ks[0])
    y = (y - y.min()) / span
    dx, dy = x[-1] - x[0], y[-1] - y[0]
    distance = np.abs(dy * x - dx * y + dx * y[0] - dy * x[0])
    return int(ks[int(distance.argmax())])


def elbow(points, k_range=DEFAULT_K_RANGE, seed=0) -> ElbowCurve:
    """Inertia per k plus the knee-rule choice of k."""
    ks = [int(k) for k in k_range]
    if len(ks) < 3:
        raise InvalidArgument(f"k_range needs at least 3 values, got {len(ks)}")
    if ks != sorted(ks) or ks[0] < 1:
        raise InvalidArgument("k_range must be sorted ascending with min >= 1")
    inertias = [kmeans(points, k, seed=seed).inertia for k in ks]
    return ElbowCurve(ks=ks, inertias=inertias, chosen_k=chord_knee(ks, inertias))


def train_plain_vae(config: TrainConfig, train_images, metrics_path=None):
    """Train the unconditional VAE (decoder takes z alone)."""
    config.validate()
    images = torch.as_tensor(np.asarray(train_images), dtype=torch.float32)
    n = images.shape[0]
    torch.manual_seed(config.seed)
    sample_gen = torch.Generator().manual_seed(config.seed + 1)
    encoder = ConvEncoder(config.latent_dim, config.in_channels, config.image_size)
    decoder = ConvDecoder(config.latent_dim, 0, config.in_channels, config.image_size)
    params = list(encoder.parameters()) + list(decoder.parameters())
    optimizer = torch.optim.Adam(params, lr=config.lr, betas=(0.9, 0.999), eps=1e-8)
    history = []
    metrics_file = open(metrics_path, "w") if metrics_path else None
    encoder.train()
    decoder.train()
    try:
        for epoch in range(config.epochs):
            sums = {"total": 0.0, "recon": 0.0, "kl": 0.0}
            for idx in data_io.make_batches(n, config.batch_size, seed=config.seed + epoch):
                x = images[idx]
                optimizer.zero_grad()
                mu, logvar = encoder(x)
                z = reparameterize(mu, logvar, generator=sample_gen)
                x_tilde = decoder(z)
                loss = elbo_loss(x, x_tilde, mu, logvar, beta=config.beta)
                if not torch.isfinite(loss.total):
                    raise NumericError(f"epoch {epoch}: non-finite loss")
                loss.total.backward()
                optimizer.step()
                w = len(idx) / n
                sums["total"] += loss.total.item() * w
                sums["recon"] += loss.recon.item() * w
                sums["kl"] += loss.kl.item() * w
            record = {"epoch": epoch, "loss_total": sums["total"],
                      "loss_recon": sums["recon"], "loss_kl": sums["kl"]}
            history.append(record)
            if metrics_file:
                metrics_file.write(json.dumps(record) + "\n")
                metrics_file.flush()
    finally:
        if metrics_file:
            metrics_file.close()
    encoder.eval()
    decoder.eval()
    return encoder, decoder, history


@dataclass
class BaselineResult:
    report: evaluation.EvalReport
    encoder: ConvEncoder
    decoder: ConvDecoder
    elbow_curve: ElbowCurve
    kmeans_result: KMeansResult
    history: list[dict]


def vae_kmeans_pipeline(config: TrainConfig, dataset: data_io.Dataset, k_range=DEFAULT_K_RANGE,
                        knn_k=evaluation.DEFAULT_KNN_K, bank_size=evaluation.DEFAULT_BANK_SIZE,
                        metrics_path=None, digest="") -> BaselineResult:
    """Plain VAE + elbow-selected k-means, scored with the same three metrics.

    KMeans cluster labels stand in for prototype clusters in the
    statistical mapping (test samples go to their nearest centroid); kNN
    and the linear probe run on the VAE latents unchanged.
    """
    encoder, decoder, history = train_plain_vae(config, dataset.train.images, metrics_path=metrics_path)
    train_mu = evaluation.embed_mu(encoder, dataset.train.images)
    test_mu = evaluation.embed_mu(encoder, dataset.test.images)

    curve = elbow(train_mu, k_range=k_range, seed=config.seed)
    km = kmeans(train_mu, curve.chosen_k, seed=config.seed)
    label_map = evaluation.map_from_assignments(km.labels, dataset.train.labels, curve.chosen_k)
    test_clusters, _ = _assign_points(np.asarray(test_mu, dtype=np.float64), km.centroids)
    stat_acc = float((label_map.mapping[test_clusters] == dataset.test.labels).mean())

    memory = evaluation.make_memory_bank(train_mu, dataset.train.labels, size=bank_size, seed=config.seed)
    knn_acc = evaluation.knn_accuracy(memory, test_mu, dataset.test.labels, k=knn_k)
    linear_acc = evaluation.linear_probe(
        train_mu, dataset.train.labels, dataset.num_classes, test_mu, dataset.test.labels, seed=config.seed
    )
    report = evaluation.EvalReport(
        dataset=dataset.name,
        statistical_acc=stat_acc,
        knn_acc=knn_acc,
        linear_acc=linear_acc,
        knn_k=knn_k,
        bank_size=len(memory),
        config_digest=digest,
    )
    return BaselineResult(
        report=report,
        encoder=encoder,
        decoder=decoder,
        elbow_curve=curve,
        kmeans_result=km,
        history=history,
    )
