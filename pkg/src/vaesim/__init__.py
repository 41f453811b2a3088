"""Conditional VAE with EMA-updated latent prototypes, plus its
two-step baseline and downstream evaluation suite."""

from .baselines import ElbowCurve, KMeansResult, elbow, kmeans, vae_kmeans_pipeline
from .checkpoint import TrainedState, load_state, save_state
from .data_io import Dataset, SplitPart, load_dataset, make_batches, parse_idx, parse_npz
from .errors import VaesimError
from .evaluation import (
    ClusterLabelMap,
    EvalReport,
    MemoryBank,
    build_cluster_label_map,
    evaluate,
    export_embeddings,
    knn_accuracy,
    linear_probe,
    statistical_accuracy,
)
from .proto_bank import PrototypeBank, TemperatureSchedule, assign, sample_hard, temperature
from .trainer import TrainConfig, TrainResult, sweep, train
from .vae_core import ConvDecoder, ConvEncoder, LossBreakdown, elbo_loss, reparameterize

__version__ = "0.1.0"

__all__ = [
    "ClusterLabelMap",
    "ConvDecoder",
    "ConvEncoder",
    "Dataset",
    "ElbowCurve",
    "EvalReport",
    "KMeansResult",
    "LossBreakdown",
    "MemoryBank",
    "PrototypeBank",
    "SplitPart",
    "TemperatureSchedule",
    "TrainConfig",
    "TrainResult",
    "TrainedState",
    "VaesimError",
    "assign",
    "build_cluster_label_map",
    "elbo_loss",
    "elbow",
    "evaluate",
    "export_embeddings",
    "kmeans",
    "knn_accuracy",
    "linear_probe",
    "load_dataset",
    "load_state",
    "make_batches",
    "parse_idx",
    "parse_npz",
    "reparameterize",
    "sample_hard",
    "save_state",
    "statistical_accuracy",
    "sweep",
    "temperature",
    "train",
    "vae_kmeans_pipeline",
]
