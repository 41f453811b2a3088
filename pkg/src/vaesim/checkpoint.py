"""Checkpoint serialization.

Flat binary layout: magic "VSIM", u32 version, u32 record count, then
per record a length-prefixed UTF-8 name, a count-prefixed u32 dims list
and the raw little-endian float32 data. Round trips are bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import FormatError, InvalidArgument, IoError, UnsupportedVersion
from .proto_bank import EMA_CONVENTIONS, SIMILARITY_MODES, PrototypeBank, TemperatureSchedule
from .vae_core import ConvDecoder, ConvEncoder

MAGIC = b"VSIM"
VERSION = 1


def save_records(records: dict[str, np.ndarray], path) -> None:
    """Write named float32 arrays to path in the VSIM layout."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<II", VERSION, len(records))
    for name, arr in records.items():
        arr32 = np.asarray(arr, dtype="<f4", order="C")
        name_bytes = name.encode("utf-8")
        blob += struct.pack("<I", len(name_bytes)) + name_bytes
        blob += struct.pack("<I", arr32.ndim)
        blob += struct.pack(f"<{arr32.ndim}I", *arr32.shape)
        blob += arr32.tobytes()
    try:
        Path(path).write_bytes(bytes(blob))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"checkpoint truncated at byte {self.pos}")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_records(path) -> dict[str, np.ndarray]:
    """Read a VSIM checkpoint back into named float32 arrays."""
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    reader = _Reader(buf)
    magic = reader.take(4)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = reader.u32()
    if version > VERSION:
        raise UnsupportedVersion(f"checkpoint version {version} is newer than supported ({VERSION})")
    if version != VERSION:
        raise FormatError(f"unknown checkpoint version {version}")
    count = reader.u32()
    records: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = reader.take(reader.u32()).decode("utf-8")
        ndim = reader.u32()
        dims = struct.unpack(f"<{ndim}I", reader.take(4 * ndim))
        size = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        data = np.frombuffer(reader.take(4 * size), dtype="<f4").reshape(dims)
        records[name] = data
    if reader.pos != len(buf):
        raise FormatError(f"{len(buf) - reader.pos} trailing bytes after the last record")
    return records


@dataclass
class TrainedState:
    """Everything needed to evaluate a trained model."""

    encoder: ConvEncoder
    decoder: ConvDecoder
    bank: PrototypeBank
    meta: dict[str, float]


def _module_records(prefix: str, module: torch.nn.Module) -> dict[str, np.ndarray]:
    records = {}
    for key, tensor in module.state_dict().items():
        if key.endswith("num_batches_tracked"):
            continue  # int64 step counter, unused with a fixed momentum
        records[f"{prefix}.{key}"] = tensor.detach().cpu().numpy()
    return records


def _load_module(prefix: str, module: torch.nn.Module, records: dict[str, np.ndarray]) -> None:
    state = {}
    for name, arr in records.items():
        if name.startswith(prefix + "."):
            state[name[len(prefix) + 1 :]] = torch.from_numpy(arr.copy())
    missing, unexpected = module.load_state_dict(state, strict=False)
    if unexpected or any(not key.endswith("num_batches_tracked") for key in missing):
        raise FormatError(
            f"checkpoint does not match the {prefix} architecture "
            f"(missing={missing}, unexpected={unexpected})"
        )


def save_state(path, encoder: ConvEncoder, decoder: ConvDecoder, bank: PrototypeBank,
               schedule: TemperatureSchedule | None = None, extra: dict[str, float] | None = None) -> None:
    """Persist model weights, the prototype matrix and run scalars."""
    if not bank.initialized:
        raise InvalidArgument("refusing to checkpoint an uninitialized prototype bank")
    schedule = schedule or TemperatureSchedule()
    records = {}
    records.update(_module_records("encoder", encoder))
    records.update(_module_records("decoder", decoder))
    records["prototypes.Q"] = bank.Q.detach().cpu().numpy()
    records["prototypes.eta"] = np.float32(bank.eta)
    meta = {
        "meta.latent_dim": encoder.latent_dim,
        "meta.n_prototypes": bank.n_prototypes,
        "meta.in_channels": encoder.in_channels,
        "meta.image_size": encoder.image_size,
        "meta.similarity": SIMILARITY_MODES.index(bank.similarity_mode),
        "meta.ema_convention": EMA_CONVENTIONS.index(bank.ema_convention),
        "meta.tau_start": schedule.tau_start,
        "meta.tau_end": schedule.tau_end,
        "meta.anneal_fraction": schedule.anneal_fraction,
    }
    if extra:
        meta.update({f"meta.{key}": value for key, value in extra.items()})
    records.update({key: np.float32(value) for key, value in meta.items()})
    save_records(records, path)


def load_state(path) -> TrainedState:
    """Rebuild encoder, decoder and prototype bank from a checkpoint."""
    records = load_records(path)
    try:
        latent_dim = int(records["meta.latent_dim"])
        n_prototypes = int(records["meta.n_prototypes"])
        in_channels = int(records["meta.in_channels"])
        image_size = int(records["meta.image_size"])
        similarity = SIMILARITY_MODES[int(records["meta.similarity"])]
        ema_convention = EMA_CONVENTIONS[int(records["meta.ema_convention"])]
        eta = float(records["prototypes.eta"])
        Q = records["prototypes.Q"]
    except KeyError as exc:
        raise FormatError(f"checkpoint is missing record {exc}") from exc
    encoder = ConvEncoder(latent_dim, in_channels, image_size)
    decoder = ConvDecoder(latent_dim, n_prototypes, in_channels, image_size)
    _load_module("encoder", encoder, records)
    _load_module("decoder", decoder, records)
    bank = PrototypeBank(n_prototypes, eta=eta, similarity=similarity, ema_convention=ema_convention)
    bank.set_state(torch.from_numpy(Q.copy()))
    encoder.eval()
    decoder.eval()
    meta = {key[len("meta."):]: float(value) for key, value in records.items() if key.startswith("meta.")}
    return TrainedState(encoder=encoder, decoder=decoder, bank=bank, meta=meta)
