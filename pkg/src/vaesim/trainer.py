"""End-to-end training loop for the prototype-conditioned VAE.

Per batch, in this order: encode, sample z, soft-assign against the
prototype bank at the current temperature, decode conditioned on the
assignment, backprop and Adam step, then (and only then) the detached
EMA update of the bank. The bank is seeded from the first batch's mu.

Training never sees labels: train() accepts an image array only.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from . import checkpoint as ckpt
from . import data_io, evaluation
from .errors import InvalidArgument, NumericError
from .proto_bank import (
    EMA_CONVENTIONS,
    HARD_ASSIGN_MODES,
    SIMILARITY_MODES,
    PrototypeBank,
    TemperatureSchedule,
    assign,
    sample_hard,
    temperature,
)
from .vae_core import ConvDecoder, ConvEncoder, elbo_loss, reparameterize

SWEEP_AXES = ("latent_dim", "n_prototypes", "batch_size")


@dataclass
class TrainConfig:
    latent_dim: int = 32
    n_prototypes: int = 10
    batch_size: int = 2048
    epochs: int = 50
    beta: float = 1.0
    lr: float = 1e-3
    eta: float = 0.95
    lambda_ortho: float = 0.0
    similarity: str = "cosine"
    ema_convention: str = "paper"
    hard_assign: str = "sample"
    seed: int = 0
    in_channels: int = 1
    image_size: int = 32

    def validate(self) -> "TrainConfig":
        if self.latent_dim < 1:
            raise InvalidArgument(f"latent_dim must be >= 1, got {self.latent_dim}")
        if self.n_prototypes < 2:
            raise InvalidArgument(f"n_prototypes must be >= 2, got {self.n_prototypes}")
        if self.batch_size < 1:
            raise InvalidArgument(f"batch_size must be >= 1, got {self.batch_size}")
        if self.batch_size < self.n_prototypes:
            raise InvalidArgument(
                f"batch_size ({self.batch_size}) must be >= n_prototypes ({self.n_prototypes}) "
                "so the first batch can seed the bank"
            )
        if self.epochs < 1:
            raise InvalidArgument(f"epochs must be >= 1, got {self.epochs}")
        if self.beta < 0:
            raise InvalidArgument(f"beta must be >= 0, got {self.beta}")
        if self.lr <= 0:
            raise InvalidArgument(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.eta <= 1.0:
            raise InvalidArgument(f"eta must lie in [0, 1], got {self.eta}")
        if self.lambda_ortho < 0:
            raise InvalidArgument(f"lambda_ortho must be >= 0, got {self.lambda_ortho}")
        if self.similarity not in SIMILARITY_MODES:
            raise InvalidArgument(f"similarity must be one of {SIMILARITY_MODES}, got {self.similarity!r}")
        if self.ema_convention not in EMA_CONVENTIONS:
            raise InvalidArgument(
                f"ema_convention must be one of {EMA_CONVENTIONS}, got {self.ema_convention!r}"
            )
        if self.hard_assign not in HARD_ASSIGN_MODES:
            raise InvalidArgument(f"hard_assign must be one of {HARD_ASSIGN_MODES}, got {self.hard_assign!r}")
        if self.in_channels < 1:
            raise InvalidArgument(f"in_channels must be >= 1, got {self.in_channels}")
        if self.image_size % 8 != 0 or self.image_size < 8:
            raise InvalidArgument(f"image_size must be a positive multiple of 8, got {self.image_size}")
        return self


@dataclass
class EpochRecord:
    epoch: int
    tau: float
    loss_total: float
    loss_recon: float
    loss_kl: float
    loss_ortho: float
    cluster_occupancy: list[int]


@dataclass
class TrainResult:
    encoder: ConvEncoder
    decoder: ConvDecoder
    bank: PrototypeBank
    history: list[EpochRecord] = field(default_factory=list)


def _as_image_tensor(images, config: TrainConfig) -> torch.Tensor:
    # The trainer accepts images only; passing (images, labels) is a bug
    # in the caller and is rejected rather than silently unpacked.
    if isinstance(images, (tuple, list)) or isinstance(images, data_io.SplitPart):
        raise InvalidArgument("train() takes a bare image array; labels must never reach the trainer")
    x = torch.as_tensor(np.asarray(images), dtype=torch.float32)
    expected = (config.in_channels, config.image_size, config.image_size)
    if x.ndim != 4 or tuple(x.shape[1:]) != expected:
        raise InvalidArgument(f"expected images of shape (N, {expected[0]}, {expected[1]}, {expected[2]}), got {tuple(x.shape)}")
    if x.numel() == 0:
        raise InvalidArgument("empty training set")
    if x.min() < 0.0 or x.max() > 1.0:
        raise InvalidArgument("image values must lie in [0, 1]")
    return x


def train(config: TrainConfig, train_images, metrics_path=None, checkpoint_path=None) -> TrainResult:
    """Run the full training loop and return the final model state.

    metrics_path, if given, receives one JSON line per epoch. When
    checkpoint_path is given, the state is rewritten after every epoch
    and referenced by the NumericError raised if the loss goes
    non-finite.
    """
    config.validate()
    images = _as_image_tensor(train_images, config)
    n = images.shape[0]

    torch.manual_seed(config.seed)  # weight initialization
    sample_gen = torch.Generator().manual_seed(config.seed + 1)

    encoder = ConvEncoder(config.latent_dim, config.in_channels, config.image_size)
    decoder = ConvDecoder(config.latent_dim, config.n_prototypes, config.in_channels, config.image_size)
    bank = PrototypeBank(
        config.n_prototypes,
        eta=config.eta,
        similarity=config.similarity,
        ema_convention=config.ema_convention,
    )
    params = list(encoder.parameters()) + list(decoder.parameters())
    optimizer = torch.optim.Adam(params, lr=config.lr, betas=(0.9, 0.999), eps=1e-8)
    schedule = TemperatureSchedule()

    history: list[EpochRecord] = []
    last_good = None
    metrics_file = open(metrics_path, "w") if metrics_path else None
    encoder.train()
    decoder.train()
    try:
        for epoch in range(config.epochs):
            tau = temperature(epoch, config.epochs, schedule)
            occupancy = np.zeros(config.n_prototypes, dtype=np.int64)
            sums = {"total": 0.0, "recon": 0.0, "kl": 0.0, "ortho": 0.0}
            for idx in data_io.make_batches(n, config.batch_size, seed=config.seed + epoch):
                x = images[idx]
                optimizer.zero_grad()
                try:
                    mu, logvar = encoder(x)
                    z = reparameterize(mu, logvar, generator=sample_gen)
                    if not bank.initialized:
                        bank.init_from_batch(mu.detach(), seed=config.seed)
                    sims = bank.similarity(z)
                    c = assign(sims, tau)
                    x_tilde = decoder(z, c)
                    ortho = bank.orthogonality_penalty() if config.lambda_ortho > 0 else None
                    loss = elbo_loss(
                        x, x_tilde, mu, logvar,
                        beta=config.beta, ortho=ortho, lambda_ortho=config.lambda_ortho,
                    )
                except NumericError as exc:
                    raise NumericError(f"epoch {epoch}: {exc}", checkpoint_path=last_good) from exc
                if not torch.isfinite(loss.total):
                    raise NumericError(f"epoch {epoch}: non-finite loss", checkpoint_path=last_good)
                loss.total.backward()
                optimizer.step()
                k = sample_hard(c.detach(), generator=sample_gen, mode=config.hard_assign)
                bank.update(z.detach(), k)
                occupancy += np.bincount(k.numpy(), minlength=config.n_prototypes)
                w = len(idx) / n
                sums["total"] += loss.total.item() * w
                sums["recon"] += loss.recon.item() * w
                sums["kl"] += loss.kl.item() * w
                sums["ortho"] += loss.ortho.item() * w
            record = EpochRecord(
                epoch=epoch,
                tau=tau,
                loss_total=sums["total"],
                loss_recon=sums["recon"],
                loss_kl=sums["kl"],
                loss_ortho=sums["ortho"],
                cluster_occupancy=occupancy.tolist(),
            )
            history.append(record)
            if metrics_file:
                metrics_file.write(json.dumps(asdict(record)) + "\n")
                metrics_file.flush()
            if checkpoint_path:
                ckpt.save_state(
                    checkpoint_path, encoder, decoder, bank,
                    schedule=schedule, extra={"epochs": epoch + 1},
                )
                last_good = checkpoint_path
    finally:
        if metrics_file:
            metrics_file.close()
    encoder.eval()
    decoder.eval()
    return TrainResult(encoder=encoder, decoder=decoder, bank=bank, history=history)


def sweep(base_config: TrainConfig, axis: str, values, dataset: data_io.Dataset,
          knn_k=evaluation.DEFAULT_KNN_K, bank_size=evaluation.DEFAULT_BANK_SIZE) -> list[dict]:
    """Train and evaluate once per value of a single hyperparameter.

    One row per value; a failed run records its error instead of killing
    the remaining runs.
    """
    if axis not in SWEEP_AXES:
        raise InvalidArgument(f"axis must be one of {SWEEP_AXES}, got {axis!r}")
    values = list(values)
    if not values:
        raise InvalidArgument("values must be non-empty")
    rows = []
    for value in values:
        row = {"axis": axis, "value": int(value), "statistical_acc": None,
               "knn_acc": None, "linear_acc": None, "error": None}
        try:
            cfg = dataclasses.replace(base_config, **{axis: int(value)}).validate()
            result = train(cfg, dataset.train.images)
            report = evaluation.evaluate(
                result.encoder, result.bank, dataset,
                knn_k=knn_k, bank_size=bank_size, seed=cfg.seed,
                digest=evaluation.config_digest(asdict(cfg)),
            )
            row.update(
                statistical_acc=report.statistical_acc,
                knn_acc=report.knn_acc,
                linear_acc=report.linear_acc,
            )
        except Exception as exc:  # recorded, not fatal to the sweep
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows
