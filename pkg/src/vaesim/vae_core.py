"""Convolutional VAE with an optional cluster-conditioned decoder.

Encoder: three stride-2 conv blocks (channels 32/64/128, kernel 4,
padding 1, batch norm + relu) feeding dense mu / logvar heads.
Decoder: a dense layer from the concatenated (z, c) vector up to the
128-channel base grid, three transposed-conv blocks mirroring the
encoder, and a 3x3 output conv with sigmoid. With n_conditions=0 the
decoder is an ordinary unconditional VAE decoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .errors import InvalidArgument, NumericError, ShapeError

ENCODER_CHANNELS = (32, 64, 128)
DECODER_CHANNELS = (128, 64, 32, 16)


def _check_image_size(image_size):
    if image_size % 8 != 0 or image_size < 8:
        raise ShapeError(f"image_size must be a positive multiple of 8, got {image_size}")


class ConvEncoder(nn.Module):
    """Maps (B, C, H, H) images to a (mu, logvar) pair of (B, q) arrays."""

    def __init__(self, latent_dim, in_channels=1, image_size=32, dtype=torch.float32):
        super().__init__()
        _check_image_size(image_size)
        self.latent_dim = latent_dim
        self.in_channels = in_channels
        self.image_size = image_size
        blocks = []
        prev = in_channels
        for ch in ENCODER_CHANNELS:
            blocks += [
                nn.Conv2d(prev, ch, kernel_size=4, stride=2, padding=1, dtype=dtype),
                nn.BatchNorm2d(ch, momentum=0.1, dtype=dtype),
                nn.ReLU(inplace=True),
            ]
            prev = ch
        self.features = nn.Sequential(*blocks)
        spatial = image_size // 8
        flat = ENCODER_CHANNELS[-1] * spatial * spatial
        self.mu_head = nn.Linear(flat, latent_dim, dtype=dtype)
        self.logvar_head = nn.Linear(flat, latent_dim, dtype=dtype)

    def forward(self, x):
        s = self.image_size
        if x.ndim != 4 or x.shape[1] != self.in_channels or tuple(x.shape[2:]) != (s, s):
            raise ShapeError(
                f"expected input of shape (B, {self.in_channels}, {s}, {s}), got {tuple(x.shape)}"
            )
        h = self.features(x).flatten(1)
        return self.mu_head(h), self.logvar_head(h)


class ConvDecoder(nn.Module):
    """Maps (z, c) back to an image batch in (0, 1).

    c is the per-sample probability vector over the n_conditions clusters;
    rows must sum to 1 within 1e-5. Built with n_conditions=0 the decoder
    takes z alone.
    """

    def __init__(self, latent_dim, n_conditions=0, out_channels=1, image_size=32, dtype=torch.float32):
        super().__init__()
        _check_image_size(image_size)
        self.latent_dim = latent_dim
        self.n_conditions = n_conditions
        self.out_channels = out_channels
        self.image_size = image_size
        spatial = image_size // 8
        self.base_spatial = spatial
        self.fc = nn.Linear(latent_dim + n_conditions, DECODER_CHANNELS[0] * spatial * spatial, dtype=dtype)
        blocks = []
        for cin, cout in zip(DECODER_CHANNELS[:-1], DECODER_CHANNELS[1:]):
            blocks += [
                nn.ConvTranspose2d(cin, cout, kernel_size=4, stride=2, padding=1, dtype=dtype),
                nn.BatchNorm2d(cout, momentum=0.1, dtype=dtype),
                nn.ReLU(inplace=True),
            ]
        self.features = nn.Sequential(*blocks)
        self.out = nn.Conv2d(DECODER_CHANNELS[-1], out_channels, kernel_size=3, stride=1, padding=1, dtype=dtype)

    def forward(self, z, c=None):
        if z.ndim != 2 or z.shape[1] != self.latent_dim:
            raise ShapeError(f"expected z of shape (B, {self.latent_dim}), got {tuple(z.shape)}")
        if self.n_conditions:
            if c is None:
                raise ShapeError(f"decoder expects a (B, {self.n_conditions}) condition vector, got None")
            if c.ndim != 2 or c.shape != (z.shape[0], self.n_conditions):
                raise ShapeError(
                    f"expected c of shape ({z.shape[0]}, {self.n_conditions}), got {tuple(c.shape)}"
                )
            row_sums = c.detach().sum(dim=1)
            if not torch.isfinite(row_sums).all():
                raise NumericError("non-finite values in the condition vector")
            if not torch.allclose(row_sums, torch.ones_like(row_sums), atol=1e-5):
                raise InvalidArgument("condition rows must sum to 1 within 1e-5")
            h = torch.cat([z, c], dim=1)
        else:
            if c is not None:
                raise ShapeError("decoder was built without conditioning but got a c vector")
            h = z
        h = self.fc(h).reshape(-1, DECODER_CHANNELS[0], self.base_spatial, self.base_spatial)
        h = self.features(h)
        return torch.sigmoid(self.out(h))


def reparameterize(mu, logvar, generator=None, eps=None):
    """z = mu + eps * exp(logvar / 2) with eps ~ N(0, 1) unless given."""
    if mu.shape != logvar.shape:
        raise ShapeError(f"mu shape {tuple(mu.shape)} != logvar shape {tuple(logvar.shape)}")
    if eps is None:
        eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype, device=mu.device)
    return mu + eps * torch.exp(0.5 * logvar)


@dataclass
class LossBreakdown:
    """total = recon + beta * kl + lambda_ortho * ortho, all finite scalars."""

    total: torch.Tensor
    recon: torch.Tensor
    kl: torch.Tensor
    ortho: torch.Tensor


def elbo_loss(x, x_tilde, mu, logvar, beta=1.0, ortho=None, lambda_ortho=0.0) -> LossBreakdown:
    """Reconstruction plus KL-to-standard-normal loss.

    recon is the squared pixel error summed per sample, averaged over the
    batch; kl is the closed-form divergence of N(mu, exp(logvar)) from
    N(0, I), also summed per sample and batch-averaged.
    """
    if beta < 0:
        raise InvalidArgument(f"beta must be >= 0, got {beta}")
    if x.shape != x_tilde.shape:
        raise ShapeError(f"x shape {tuple(x.shape)} != x_tilde shape {tuple(x_tilde.shape)}")
    for name, t in (("x", x), ("x_tilde", x_tilde), ("mu", mu), ("logvar", logvar)):
        if not torch.isfinite(t).all():
            raise NumericError(f"non-finite values in {name}")
    recon = (x_tilde - x).pow(2).flatten(1).sum(dim=1).mean()
    kl = (-0.5 * (1.0 + logvar - mu.pow(2) - logvar.exp()).sum(dim=1)).mean()
    if ortho is None:
        ortho = torch.zeros((), dtype=recon.dtype, device=recon.device)
    elif not torch.is_tensor(ortho):
        ortho = torch.as_tensor(float(ortho), dtype=recon.dtype, device=recon.device)
    total = recon + beta * kl + lambda_ortho * ortho
    return LossBreakdown(total=total, recon=recon, kl=kl, ortho=ortho)
