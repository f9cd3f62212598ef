"""Self-describing binary checkpoints for trained models.

Layout (all integers little-endian, all floats 64-bit little-endian):

    magic   4 bytes          b"DCQN"
    version u32              currently 1
    kind    string           "iqn" | "dcn"
    tcn     u32 x 4 + dils   layers, channels, kernel_size, n_dilations, dilations
    meta    u32 count        then (string key, i64 value) pairs
    stats   u32 n_features   then (string name, f64 mean, f64 std) per feature
    tensors u32 count        then (string name, u32 rank, u32 dims..., f64 data)

Strings are u32-length-prefixed UTF-8. ``load(save(p))`` is bit-exact; any
magic or version mismatch is a hard error.
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backbone import NamedParameterSet, TcnConfig
from .dataset import FeatureStats
from .errors import CheckpointFormatError
from .iqn import QuantileModel
from .dcn import CorrelationModel

MAGIC = b"DCQN"
VERSION = 1
KINDS = ("iqn", "dcn")


@dataclass(frozen=True)
class Checkpoint:
    kind: str
    tcn_config: TcnConfig
    meta: dict[str, int]
    feature_stats: FeatureStats
    tensors: NamedParameterSet


def _write_string(out: io.BufferedIOBase, text: str) -> None:
    raw = text.encode("utf-8")
    out.write(struct.pack("<I", len(raw)))
    out.write(raw)


def _read_exact(src: io.BufferedIOBase, n: int) -> bytes:
    raw = src.read(n)
    if len(raw) != n:
        raise CheckpointFormatError("unexpected end of checkpoint file")
    return raw


def _read_string(src: io.BufferedIOBase) -> str:
    (n,) = struct.unpack("<I", _read_exact(src, 4))
    return _read_exact(src, n).decode("utf-8")


def save_checkpoint(path: str | Path, checkpoint: Checkpoint) -> None:
    """Write atomically (temp file + rename in the target directory)."""
    if checkpoint.kind not in KINDS:
        raise CheckpointFormatError(f"unknown checkpoint kind {checkpoint.kind!r}")
    path = Path(path)
    buffer = io.BytesIO()
    buffer.write(MAGIC)
    buffer.write(struct.pack("<I", VERSION))
    _write_string(buffer, checkpoint.kind)

    cfg = checkpoint.tcn_config
    buffer.write(struct.pack("<IIII", cfg.layers, cfg.channels, cfg.kernel_size,
                             len(cfg.dilations)))
    buffer.write(struct.pack(f"<{len(cfg.dilations)}I", *cfg.dilations))

    buffer.write(struct.pack("<I", len(checkpoint.meta)))
    for key in checkpoint.meta:
        _write_string(buffer, key)
        buffer.write(struct.pack("<q", checkpoint.meta[key]))

    stats = checkpoint.feature_stats
    names = stats.names or tuple("" for _ in stats.mean)
    buffer.write(struct.pack("<I", stats.mean.size))
    for name, mean, std in zip(names, stats.mean, stats.std):
        _write_string(buffer, name)
        buffer.write(struct.pack("<dd", mean, std))

    buffer.write(struct.pack("<I", len(checkpoint.tensors)))
    for name, arr in checkpoint.tensors.items():
        _write_string(buffer, name)
        buffer.write(struct.pack("<I", arr.ndim))
        buffer.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buffer.write(arr.astype("<f8", copy=False).tobytes(order="C"))

    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buffer.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    with Path(path).open("rb") as src:
        if _read_exact(src, 4) != MAGIC:
            raise CheckpointFormatError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(src, 4))
        if version != VERSION:
            raise CheckpointFormatError(
                f"{path}: unsupported checkpoint version {version} (expected {VERSION})"
            )
        kind = _read_string(src)
        if kind not in KINDS:
            raise CheckpointFormatError(f"{path}: unknown model kind {kind!r}")

        layers, channels, kernel, n_dil = struct.unpack("<IIII", _read_exact(src, 16))
        dilations = struct.unpack(f"<{n_dil}I", _read_exact(src, 4 * n_dil))
        config = TcnConfig(layers, channels, kernel, tuple(dilations))

        (n_meta,) = struct.unpack("<I", _read_exact(src, 4))
        meta = {}
        for _ in range(n_meta):
            key = _read_string(src)
            (meta[key],) = struct.unpack("<q", _read_exact(src, 8))

        (n_features,) = struct.unpack("<I", _read_exact(src, 4))
        names, means, stds = [], [], []
        for _ in range(n_features):
            names.append(_read_string(src))
            mean, std = struct.unpack("<dd", _read_exact(src, 16))
            means.append(mean)
            stds.append(std)
        stats = FeatureStats(
            mean=np.array(means), std=np.array(stds),
            names=tuple(names) if any(names) else None,
        )

        (n_tensors,) = struct.unpack("<I", _read_exact(src, 4))
        tensors = {}
        for _ in range(n_tensors):
            name = _read_string(src)
            (rank,) = struct.unpack("<I", _read_exact(src, 4))
            dims = struct.unpack(f"<{rank}I", _read_exact(src, 4 * rank))
            count = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(_read_exact(src, 8 * count), dtype="<f8")
            tensors[name] = data.reshape(dims)
        if src.read(1):
            raise CheckpointFormatError(f"{path}: trailing bytes after tensor table")
    return Checkpoint(kind, config, meta, stats, NamedParameterSet(tensors))


def checkpoint_from_iqn(model: QuantileModel, stats: FeatureStats) -> Checkpoint:
    meta = {
        "horizon": model.horizon,
        "n_features": model.n_features,
        "embed_terms": model.embed_terms,
        "downscale_channels": model.downscale_channels,
    }
    return Checkpoint("iqn", model.tcn_config, meta, stats,
                      NamedParameterSet.from_module(model))


def checkpoint_from_dcn(model: CorrelationModel, stats: FeatureStats) -> Checkpoint:
    meta = {
        "horizon": model.horizon,
        "n_features": model.n_features,
        "proj_channels": model.proj_channels,
    }
    return Checkpoint("dcn", model.tcn_config, meta, stats,
                      NamedParameterSet.from_module(model))


def iqn_from_checkpoint(ckpt: Checkpoint) -> QuantileModel:
    if ckpt.kind != "iqn":
        raise CheckpointFormatError(f"expected an iqn checkpoint, got {ckpt.kind!r}")
    model = QuantileModel(ckpt.meta["n_features"], ckpt.meta["horizon"],
                          ckpt.tcn_config, ckpt.meta["embed_terms"],
                          ckpt.meta["downscale_channels"])
    ckpt.tensors.load_into(model)
    return model


def dcn_from_checkpoint(ckpt: Checkpoint) -> CorrelationModel:
    if ckpt.kind != "dcn":
        raise CheckpointFormatError(f"expected a dcn checkpoint, got {ckpt.kind!r}")
    model = CorrelationModel(ckpt.meta["n_features"], ckpt.meta["horizon"],
                             ckpt.tcn_config, ckpt.meta["proj_channels"])
    ckpt.tensors.load_into(model)
    return model
