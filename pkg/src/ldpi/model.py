"""The detection network: residual CNN encoder, projection head, scoring.

The encoder maps a flat n*l sample (seen as one channel over n*l byte
positions) to an embedding; the projection head exists only for the
contrastive pretraining stage and is ignored afterwards. The anomaly
score of a sample is its squared distance to the fitted center in
embedding space.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import CenterMissing, ConfigInvalid, CorruptCheckpoint
from .nn import checkpoint as ckpt
from .nn import layers as L
from .prep import SampleConfig, SampleVector


@dataclass(frozen=True)
class ArchConfig:
    """Encoder dimensions. Kernel sizes are fixed (7 stem; 5,3 per block;
    1x1 shortcuts); channel widths, strides and embedding size vary."""

    name: str = "default"
    stem_channels: int = 32
    block_channels: tuple = (32, 64, 128)
    block_strides: tuple = (1, 1, 1)
    embedding_dim: int = 128
    projection_hidden: int = 128
    projection_dim: int = 64

    def __post_init__(self):
        if len(self.block_channels) != len(self.block_strides):
            raise ConfigInvalid("need one stride per residual block")
        dims = (self.stem_channels, *self.block_channels, self.embedding_dim,
                self.projection_hidden, self.projection_dim)
        if any(d < 1 for d in dims):
            raise ConfigInvalid(f"non-positive dimension in {self!r}")


DEFAULT_ARCH = ArchConfig()
TINY_ARCH = ArchConfig(name="tiny", stem_channels=8, block_channels=(8, 16, 32),
                       block_strides=(2, 2, 2), embedding_dim=32,
                       projection_hidden=32, projection_dim=16)

ARCH_PRESETS = {"default": DEFAULT_ARCH, "tiny": TINY_ARCH}


@dataclass
class ModelState:
    """Everything needed to score: graphs, parameters, running stats,
    center, and the sample geometry the network was built for."""

    encoder: tuple
    head: tuple
    params: dict
    buffers: dict
    sample_cfg: SampleConfig
    arch: ArchConfig
    center: Optional[np.ndarray] = None

    @property
    def embedding_dim(self) -> int:
        return self.arch.embedding_dim


def _encoder_graph(cfg: SampleConfig, arch: ArchConfig) -> tuple:
    graph = [
        L.Conv1d("stem.conv", 1, arch.stem_channels, kernel=7, stride=1, pad=3),
        L.BatchNorm1d("stem.bn", arch.stem_channels),
        L.ReLU(),
    ]
    in_ch = arch.stem_channels
    for i, (out_ch, stride) in enumerate(zip(arch.block_channels, arch.block_strides), 1):
        body = (
            L.Conv1d(f"block{i}.conv1", in_ch, out_ch, kernel=5, stride=stride, pad=2),
            L.BatchNorm1d(f"block{i}.bn1", out_ch),
            L.ReLU(),
            L.Conv1d(f"block{i}.conv2", out_ch, out_ch, kernel=3, stride=1, pad=1),
            L.BatchNorm1d(f"block{i}.bn2", out_ch),
        )
        if out_ch != in_ch or stride != 1:
            shortcut = (L.Conv1d(f"block{i}.short", in_ch, out_ch, kernel=1,
                                 stride=stride, pad=0),)
        else:
            shortcut = ()
        graph += [L.Residual(body=body, shortcut=shortcut), L.ReLU()]
        in_ch = out_ch
    graph += [
        L.GlobalAvgPool(),
        L.Dense("embed", in_ch, arch.embedding_dim),
    ]
    return tuple(graph)


def _head_graph(arch: ArchConfig) -> tuple:
    return (
        L.Dense("head.fc1", arch.embedding_dim, arch.projection_hidden),
        L.ReLU(),
        L.Dense("head.fc2", arch.projection_hidden, arch.projection_dim),
    )


def build_rescnn(sample_cfg: SampleConfig, arch: ArchConfig | str = DEFAULT_ARCH,
                 seed: int = 0, dtype=np.float32) -> ModelState:
    """Build an initialized model for the given sample geometry.

    Parameters come from a seeded generator, so a fixed seed gives
    identical initial parameters across runs.
    """
    if isinstance(arch, str):
        try:
            arch = ARCH_PRESETS[arch]
        except KeyError:
            raise ConfigInvalid(f"unknown architecture preset {arch!r}") from None
    encoder = _encoder_graph(sample_cfg, arch)
    head = _head_graph(arch)
    try:
        out = L.output_shape(encoder, (1, sample_cfg.dim))
    except Exception as exc:
        raise ConfigInvalid(f"encoder does not fit n*l={sample_cfg.dim}: {exc}") from exc
    if out != (arch.embedding_dim,):
        raise ConfigInvalid(f"encoder output {out} != embedding {arch.embedding_dim}")
    rng = np.random.default_rng(seed)
    params, buffers = L.init_params(encoder + head, rng, dtype=dtype)
    return ModelState(encoder=encoder, head=head, params=params, buffers=buffers,
                      sample_cfg=sample_cfg, arch=arch)


def _as_batch(model: ModelState, X) -> np.ndarray:
    if isinstance(X, SampleVector):
        X = X.values
    X = np.asarray(X)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.sample_cfg.dim:
        raise ConfigInvalid(
            f"expected samples of length {model.sample_cfg.dim}, got {X.shape}")
    dtype = next(iter(model.params.values())).dtype
    return np.ascontiguousarray(X, dtype=dtype).reshape(X.shape[0], 1, -1)


def embed(model: ModelState, X) -> np.ndarray:
    """Eval-mode encoder output, one row per sample.

    Batch composition cannot change a row: eval-mode batch norm is an
    affine map using running statistics only.
    """
    batch = _as_batch(model, X)
    if batch.shape[0] == 0:
        raise ConfigInvalid("empty batch")
    out, _ = L.forward(model.encoder, model.params, model.buffers, batch, train=False)
    return out


def project(model: ModelState, emb: np.ndarray) -> np.ndarray:
    """Projection-head output (pretraining only)."""
    out, _ = L.forward(model.head, model.params, model.buffers, emb, train=False)
    return out


def score_batch(model: ModelState, X, batch_size: int = 256) -> np.ndarray:
    """Squared embedding distance to the center, per sample."""
    if model.center is None:
        raise CenterMissing("fit or load a center before scoring")
    X = np.asarray(X.values if isinstance(X, SampleVector) else X)
    if X.ndim == 1:
        X = X[None, :]
    out = np.empty(X.shape[0], dtype=np.float64)
    for lo in range(0, X.shape[0], batch_size):
        emb = embed(model, X[lo:lo + batch_size])
        diff = emb.astype(np.float64) - model.center.astype(np.float64)
        out[lo:lo + batch_size] = (diff * diff).sum(axis=1)
    return out


def score(model: ModelState, sample) -> float:
    """Anomaly score s(x) = ||embed(x) - c||^2."""
    return float(score_batch(model, sample)[0])


# --- persistence -------------------------------------------------------------

def _arch_to_obj(arch: ArchConfig) -> dict:
    return {"name": arch.name, "stem_channels": arch.stem_channels,
            "block_channels": list(arch.block_channels),
            "block_strides": list(arch.block_strides),
            "embedding_dim": arch.embedding_dim,
            "projection_hidden": arch.projection_hidden,
            "projection_dim": arch.projection_dim}


def _arch_from_obj(obj: dict) -> ArchConfig:
    return ArchConfig(name=obj["name"], stem_channels=obj["stem_channels"],
                      block_channels=tuple(obj["block_channels"]),
                      block_strides=tuple(obj["block_strides"]),
                      embedding_dim=obj["embedding_dim"],
                      projection_hidden=obj["projection_hidden"],
                      projection_dim=obj["projection_dim"])


def save_model(stream, model: ModelState, optimizer=None):
    header = {
        "encoder": L.graph_to_obj(model.encoder),
        "head": L.graph_to_obj(model.head),
        "sample_cfg": {"n": model.sample_cfg.n, "l": model.sample_cfg.l},
        "arch": _arch_to_obj(model.arch),
    }
    ckpt.save_checkpoint(stream, header, model.params, model.buffers,
                         optimizer=optimizer, center=model.center)


def load_model(stream) -> ModelState:
    header, params, buffers, _opt, center = ckpt.load_checkpoint(stream)
    try:
        encoder = L.graph_from_obj(header["encoder"])
        head = L.graph_from_obj(header["head"])
        sample_cfg = SampleConfig(**header["sample_cfg"])
        arch = _arch_from_obj(header["arch"])
    except (KeyError, TypeError) as exc:
        raise CorruptCheckpoint(f"malformed checkpoint header: {exc}") from exc
    return ModelState(encoder=encoder, head=head, params=params, buffers=buffers,
                      sample_cfg=sample_cfg, arch=arch, center=center)


def save_model_file(path, model: ModelState):
    with open(path, "wb") as fh:
        save_model(fh, model)


def load_model_file(path) -> ModelState:
    with open(path, "rb") as fh:
        return load_model(fh)


def model_digest(model: ModelState) -> str:
    """Stable content hash of a model (for determinism checks)."""
    import hashlib
    buf = io.BytesIO()
    save_model(buf, model)
    return hashlib.sha256(buf.getvalue()).hexdigest()
