"""Bank of latent-space prototype vectors.

The bank holds a (K, q) matrix Q that lives outside the autograd graph:
gradients reach the encoder only through the similarity scores, never
through Q itself. Q is seeded from rows of the first batch and moves by
an exponential moving average of the embeddings assigned to each
prototype.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import InsufficientBatch, InvalidArgument, ShapeError

COSINE_EPS = 1e-8

SIMILARITY_MODES = ("cosine", "dot")
EMA_CONVENTIONS = ("paper", "standard")
HARD_ASSIGN_MODES = ("sample", "argmax")


@dataclass(frozen=True)
class TemperatureSchedule:
    """Linear decay from tau_start to tau_end over the first
    anneal_fraction of the epochs, then flat."""

    tau_start: float = 1.0
    tau_end: float = 0.01
    anneal_fraction: float = 0.5


def temperature(epoch: int, total_epochs: int, sched: TemperatureSchedule | None = None) -> float:
    """Softmax temperature for the given epoch."""
    if total_epochs <= 0:
        raise InvalidArgument(f"total_epochs must be positive, got {total_epochs}")
    if not 0 <= epoch < total_epochs:
        raise InvalidArgument(f"epoch {epoch} outside [0, {total_epochs})")
    if sched is None:
        sched = TemperatureSchedule()
    horizon = sched.anneal_fraction * total_epochs
    progress = 1.0 if horizon <= 0 else min(1.0, epoch / horizon)
    return sched.tau_start - (sched.tau_start - sched.tau_end) * progress


def assign(sims, tau) -> torch.Tensor:
    """Soft cluster assignment: row-wise softmax of sims / tau.

    torch's softmax subtracts the row max before exponentiating, so
    arbitrarily sharp temperatures stay finite.
    """
    if tau <= 0:
        raise InvalidArgument(f"tau must be positive, got {tau}")
    return torch.softmax(sims / tau, dim=-1)


def sample_hard(c, generator=None, mode="sample") -> torch.Tensor:
    """One hard cluster id per row of c.

    mode="sample" draws from each row's categorical distribution;
    mode="argmax" takes the max entry, lowest index winning ties.
    """
    if mode not in HARD_ASSIGN_MODES:
        raise InvalidArgument(f"mode must be one of {HARD_ASSIGN_MODES}, got {mode!r}")
    if mode == "argmax":
        return torch.argmax(c, dim=1)
    return torch.multinomial(c, 1, generator=generator).squeeze(1)


class PrototypeBank:
    """K prototype vectors updated by EMA, excluded from the gradient graph."""

    def __init__(self, n_prototypes, eta=0.95, similarity="cosine", ema_convention="paper"):
        if n_prototypes < 2:
            raise InvalidArgument(f"need at least 2 prototypes, got {n_prototypes}")
        if not 0.0 <= eta <= 1.0:
            raise InvalidArgument(f"eta must lie in [0, 1], got {eta}")
        if similarity not in SIMILARITY_MODES:
            raise InvalidArgument(f"similarity must be one of {SIMILARITY_MODES}, got {similarity!r}")
        if ema_convention not in EMA_CONVENTIONS:
            raise InvalidArgument(f"ema_convention must be one of {EMA_CONVENTIONS}, got {ema_convention!r}")
        self.n_prototypes = int(n_prototypes)
        self.eta = float(eta)
        self.similarity_mode = similarity
        self.ema_convention = ema_convention
        self.Q: torch.Tensor | None = None

    @property
    def initialized(self) -> bool:
        return self.Q is not None

    @property
    def latent_dim(self):
        return None if self.Q is None else self.Q.shape[1]

    def _require_initialized(self):
        if self.Q is None:
            raise InvalidArgument("prototype bank has not been initialized from a batch")

    def init_from_batch(self, z_batch, seed) -> "PrototypeBank":
        """Seed Q with K distinct rows sampled without replacement from z_batch."""
        if self.initialized:
            raise InvalidArgument("prototype bank is already initialized")
        z = torch.as_tensor(z_batch).detach()
        if z.ndim != 2:
            raise ShapeError(f"expected a (B, q) batch, got shape {tuple(z.shape)}")
        if z.shape[0] < self.n_prototypes:
            raise InsufficientBatch(
                f"batch of {z.shape[0]} rows cannot seed {self.n_prototypes} prototypes"
            )
        gen = torch.Generator().manual_seed(int(seed))
        idx = torch.randperm(z.shape[0], generator=gen)[: self.n_prototypes]
        self.Q = z[idx].clone()
        self.Q.requires_grad_(False)
        return self

    def set_state(self, Q, check=True):
        """Install a prototype matrix directly (checkpoint restore, tests)."""
        Q = torch.as_tensor(Q).detach().clone()
        if check and (Q.ndim != 2 or Q.shape[0] != self.n_prototypes):
            raise ShapeError(f"expected a ({self.n_prototypes}, q) matrix, got {tuple(Q.shape)}")
        Q.requires_grad_(False)
        self.Q = Q
        return self

    def similarity(self, z) -> torch.Tensor:
        """(B, K) similarity between embeddings and prototypes.

        Cosine mode normalizes both operands (with a 1e-8 guard against
        zero vectors); dot mode is the raw inner product Q z.
        """
        self._require_initialized()
        if z.ndim != 2 or z.shape[1] != self.latent_dim:
            raise ShapeError(f"expected z of shape (B, {self.latent_dim}), got {tuple(z.shape)}")
        Q = self.Q.to(dtype=z.dtype)
        if self.similarity_mode == "dot":
            return z @ Q.t()
        z_norm = torch.linalg.vector_norm(z, dim=1, keepdim=True)
        q_norm = torch.linalg.vector_norm(Q, dim=1, keepdim=True)
        return (z @ Q.t()) / (z_norm * q_norm.t() + COSINE_EPS)

    @torch.no_grad()
    def update(self, z_batch, k_batch) -> "PrototypeBank":
        """EMA step: blend each occupied prototype with its members' mean.

        Prototypes whose cluster received no samples are left unchanged.
        eta weights the fresh batch mean; "standard" flips it onto the
        old prototype instead.
        """
        self._require_initialized()
        z = torch.as_tensor(z_batch, dtype=self.Q.dtype).detach()
        k = torch.as_tensor(k_batch, dtype=torch.long)
        if z.ndim != 2 or z.shape[1] != self.latent_dim:
            raise ShapeError(f"expected z of shape (B, {self.latent_dim}), got {tuple(z.shape)}")
        if k.ndim != 1 or k.shape[0] != z.shape[0]:
            raise ShapeError(f"expected {z.shape[0]} cluster ids, got shape {tuple(k.shape)}")
        if k.numel() == 0:
            return self
        if k.min() < 0 or k.max() >= self.n_prototypes:
            raise InvalidArgument(f"cluster ids must lie in [0, {self.n_prototypes})")
        counts = torch.bincount(k, minlength=self.n_prototypes).to(z.dtype)
        sums = torch.zeros_like(self.Q)
        sums.index_add_(0, k, z)
        occupied = counts > 0
        means = sums[occupied] / counts[occupied].unsqueeze(1)
        if self.ema_convention == "paper":
            self.Q[occupied] = self.eta * means + (1.0 - self.eta) * self.Q[occupied]
        else:
            self.Q[occupied] = (1.0 - self.eta) * means + self.eta * self.Q[occupied]
        return self

    def orthogonality_penalty(self) -> torch.Tensor:
        """Mean squared cosine over distinct prototype pairs; 0 iff all orthogonal."""
        self._require_initialized()
        Q = self.Q
        norms = torch.linalg.vector_norm(Q, dim=1, keepdim=True)
        cos = (Q @ Q.t()) / (norms * norms.t() + COSINE_EPS)
        off_diag = ~torch.eye(self.n_prototypes, dtype=torch.bool, device=Q.device)
        return cos[off_diag].pow(2).mean()
