"""Training: one-class contrastive pretraining, Deep SAD fine-tuning, k-fold runs.

Pretraining sees benign samples only. Each batch carries two augmented
views per sample (positives of each other) plus optional
distribution-shifted variants that act purely as extra negatives; the
normalized temperature-scaled cross entropy over cosine similarities
pulls views together and pushes everything else apart. Fine-tuning fixes
a center from the pretrained embeddings and optimizes the Deep SAD
objective: benign embeddings are drawn to the center, labeled anomalies
pushed away through an inverse-distance term.

Every routine here is a pure function of (data, config, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import (ConfigInvalid, DegenerateBatch, EmptyDataset,
                     TooFewSamples, UnknownKind)
from .metrics import auc
from .model import ModelState, build_rescnn, embed
from .nn import layers as L
from .nn.optim import (AdamState, SgdState, TwoPhase, WarmupCosine,
                       adam_step, lr_at, sgd_step)
from .prep import SampleConfig

AUGMENT_KINDS = ("zero_mask", "jitter", "dropout")
SHIFT_KINDS = (0, 1, 2, 3)

JITTER_SIGMA = 0.01
DROPOUT_P = 0.05
MASK_FRAC = 0.1

# Payload bytes (past the minimal IP header) within each packet segment;
# the region the payload-shuffle shift permutes.
_PAYLOAD_START = 20

_CENTER_FLOOR = 0.1


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 2000
    batch_size: int = 128
    temperature: float = 0.5
    schedule: Optional[WarmupCosine] = None
    shift_set: tuple = (1, 2, 3)
    augment_set: tuple = AUGMENT_KINDS
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigInvalid(f"temperature must be > 0, got {self.temperature}")
        if self.batch_size < 2:
            raise ConfigInvalid("pretraining needs batch_size >= 2")
        for k in self.shift_set:
            if k not in SHIFT_KINDS:
                raise ConfigInvalid(f"unknown shift id {k}")
        for k in self.augment_set:
            if k not in AUGMENT_KINDS:
                raise ConfigInvalid(f"unknown augmentation {k!r}")

    def resolved_schedule(self) -> WarmupCosine:
        if self.schedule is not None:
            return self.schedule
        warmup = min(100, max(1, self.epochs // 10))
        return WarmupCosine(eta0=0.1, eta_min=0.0, warmup_epochs=warmup,
                            total_epochs=self.epochs)


@dataclass(frozen=True)
class FinetuneConfig:
    epochs: int = 400
    batch_size: int = 64
    eta: float = 1.0
    eps: float = 1e-6
    schedule: Optional[TwoPhase] = None
    seed: int = 0

    def __post_init__(self):
        if self.eta <= 0:
            raise ConfigInvalid(f"eta must be > 0, got {self.eta}")
        if self.eps <= 0:
            raise ConfigInvalid(f"eps must be > 0, got {self.eps}")

    def resolved_schedule(self) -> TwoPhase:
        if self.schedule is not None:
            return self.schedule
        return TwoPhase(lr_search=1e-3, lr_finetune=1e-4,
                        switch_epoch=self.epochs // 2)


@dataclass
class FoldReport:
    fold: int
    auc: float
    f1: dict
    pretrain_losses: list = field(default_factory=list)
    finetune_losses: list = field(default_factory=list)


# --- augmentations -----------------------------------------------------------

def augment(values: np.ndarray, rng: np.random.Generator, kind: str) -> np.ndarray:
    """One stochastic view of a sample; output stays in [0, 1], same length."""
    out = _augment_batch(np.asarray(values)[None, :].copy(), rng, kind)
    return out[0]


def _augment_batch(batch: np.ndarray, rng: np.random.Generator, kind: str) -> np.ndarray:
    """In-place batched augmentation; one rng draw pattern per call."""
    n_rows, dim = batch.shape
    if kind == "zero_mask":
        span_max = max(int(MASK_FRAC * dim), 1)
        lengths = rng.integers(1, span_max + 1, size=n_rows)
        starts = rng.integers(0, dim - lengths + 1)
        idx = np.arange(dim)[None, :]
        mask = (idx >= starts[:, None]) & (idx < (starts + lengths)[:, None])
        batch[mask] = 0.0
    elif kind == "jitter":
        noise = rng.normal(0.0, JITTER_SIGMA, size=batch.shape)
        batch += noise.astype(batch.dtype)
        np.clip(batch, 0.0, 1.0, out=batch)
    elif kind == "dropout":
        keep = rng.random(size=batch.shape) >= DROPOUT_P
        batch *= keep
    else:
        raise UnknownKind(f"augmentation {kind!r}")
    return batch


def _make_view(batch: np.ndarray, rng: np.random.Generator, kinds) -> np.ndarray:
    view = batch.copy()
    for kind in kinds:
        _augment_batch(view, rng, kind)
    return view


# --- distribution shifts -----------------------------------------------------

def shift_transform(values: np.ndarray, k: int, cfg: SampleConfig) -> np.ndarray:
    """Deterministic strong transform used as an out-of-distribution negative.

    0 identity; 1 packet-order reversal; 2 circular byte rotation by l/2
    within each packet segment; 3 fixed seeded shuffle of each segment's
    payload region.
    """
    arr = np.asarray(values)
    single = arr.ndim == 1
    rows = arr.reshape(1, -1) if single else arr
    if rows.shape[1] != cfg.dim:
        raise ConfigInvalid(f"expected {cfg.dim} values, got {rows.shape[1]}")
    segs = rows.reshape(rows.shape[0], cfg.n, cfg.l)
    if k == 0:
        out = segs.copy()
    elif k == 1:
        out = segs[:, ::-1, :].copy()
    elif k == 2:
        out = np.roll(segs, cfg.l // 2, axis=2)
    elif k == 3:
        out = segs.copy()
        width = cfg.l - _PAYLOAD_START
        if width > 1:
            perm = np.random.default_rng(0x5AD).permutation(width)
            out[:, :, _PAYLOAD_START:] = out[:, :, _PAYLOAD_START + perm]
    else:
        raise UnknownKind(f"shift id {k}")
    out = out.reshape(rows.shape[0], cfg.dim)
    return out[0] if single else out


# --- losses ------------------------------------------------------------------

def _check_pairs(pair_index: np.ndarray, n_rows: int) -> np.ndarray:
    pair_index = np.asarray(pair_index, dtype=np.int64)
    if pair_index.shape != (n_rows,):
        raise ConfigInvalid("need one pair entry per projection row")
    anchors = np.flatnonzero(pair_index >= 0)
    for i in anchors:
        j = pair_index[i]
        if j >= n_rows or j == i or pair_index[j] != i:
            raise ConfigInvalid(f"pair index is not an involution at row {i}")
    if anchors.size < 4:
        raise DegenerateBatch(f"need >= 2 distinct pairs, got {anchors.size // 2}")
    return anchors


def _info_nce(projections: np.ndarray, pair_index: np.ndarray, tau: float,
              want_grad: bool):
    z = np.asarray(projections)
    n_rows = z.shape[0]
    anchors = _check_pairs(pair_index, n_rows)

    z64 = z.astype(np.float64)
    norms = np.linalg.norm(z64, axis=1)
    safe = np.maximum(norms, 1e-12)
    u = z64 / safe[:, None]
    sims = (u @ u.T) / tau
    np.fill_diagonal(sims, -np.inf)

    row_max = sims[anchors].max(axis=1)
    shifted = sims[anchors] - row_max[:, None]
    exp = np.exp(shifted)
    denom = exp.sum(axis=1)
    lse = row_max + np.log(denom)
    pos = sims[anchors, pair_index[anchors]]
    losses = lse - pos
    loss = float(losses.mean())
    if not want_grad:
        return loss, None

    # dL/dsims: softmax minus the positive indicator, per anchor row.
    g = np.zeros((n_rows, n_rows))
    g[anchors] = exp / denom[:, None]
    g[anchors, pair_index[anchors]] -= 1.0
    g /= (tau * anchors.size)
    du = (g + g.T) @ u
    # through the normalization u = z/||z||
    dz = (du - (du * u).sum(axis=1, keepdims=True) * u) / safe[:, None]
    return loss, dz.astype(z.dtype)


def info_nce_loss(projections: np.ndarray, pair_index, tau: float) -> float:
    """Mean NT-Xent loss over all rows that have a positive partner.

    Rows with pair entry -1 (shifted views) join every denominator as
    negatives but are never anchors and never anyone's positive.
    """
    loss, _ = _info_nce(projections, pair_index, tau, want_grad=False)
    return loss


def info_nce_with_grad(projections: np.ndarray, pair_index, tau: float):
    return _info_nce(projections, pair_index, tau, want_grad=True)


def _deep_sad(embeddings: np.ndarray, labels: np.ndarray, center: np.ndarray,
              eta: float, eps: float, want_grad: bool):
    if center is None:
        from .errors import CenterMissing
        raise CenterMissing("deep SAD loss needs a center")
    e = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels)
    c = np.asarray(center, dtype=np.float64)
    diff = e - c
    d2 = (diff * diff).sum(axis=1)
    anom = y != 0
    inv = 1.0 / (d2 + eps)
    terms = np.where(anom, eta * inv, d2)
    loss = float(terms.mean())
    if not want_grad:
        return loss, None
    scale = np.where(anom, -eta * inv * inv, 1.0)
    de = 2.0 * scale[:, None] * diff / e.shape[0]
    return loss, de.astype(embeddings.dtype)


def deep_sad_loss(embeddings, labels, center, eta: float, eps: float) -> float:
    """Mean of ||e-c||^2 over benign rows and eta/(||e-c||^2+eps) over anomalies."""
    loss, _ = _deep_sad(embeddings, labels, center, eta, eps, want_grad=False)
    return loss


def deep_sad_with_grad(embeddings, labels, center, eta: float, eps: float):
    return _deep_sad(embeddings, labels, center, eta, eps, want_grad=True)


# --- center ------------------------------------------------------------------

def init_center(model: ModelState, X_benign: np.ndarray,
                batch_size: int = 256) -> np.ndarray:
    """Mean eval-mode embedding of the benign set, with the usual collapse
    guard: components inside (-0.1, 0.1) are pushed to +/-0.1, keeping sign
    (exact zero goes to +0.1)."""
    X_benign = np.asarray(X_benign)
    if X_benign.shape[0] == 0:
        raise EmptyDataset("center needs at least one benign sample")
    total = np.zeros(model.embedding_dim, dtype=np.float64)
    for lo in range(0, X_benign.shape[0], batch_size):
        total += embed(model, X_benign[lo:lo + batch_size]).astype(np.float64).sum(axis=0)
    c = total / X_benign.shape[0]
    small = np.abs(c) < _CENTER_FLOOR
    signs = np.where(c >= 0, 1.0, -1.0)
    c[small] = _CENTER_FLOOR * signs[small]
    dtype = next(iter(model.params.values())).dtype
    return c.astype(dtype)


# --- loops -------------------------------------------------------------------

def _batches(n: int, batch_size: int, rng: np.random.Generator, min_size: int = 1):
    perm = rng.permutation(n)
    for lo in range(0, n, batch_size):
        idx = perm[lo:lo + batch_size]
        if idx.size >= min_size:
            yield idx


def pretrain(X_benign: np.ndarray, model: ModelState, cfg: PretrainConfig,
             on_epoch: Optional[Callable] = None) -> ModelState:
    """One-class contrastive pretraining over benign samples only.

    SGD with momentum under the warmup+cosine schedule; deterministic for
    a fixed seed. ``on_epoch(epoch, mean_loss, lr)`` observes progress.
    """
    X_benign = np.asarray(X_benign, dtype=np.float32)
    if X_benign.shape[0] == 0:
        raise EmptyDataset("pretraining needs benign samples")
    schedule = cfg.resolved_schedule()
    rng = np.random.default_rng(cfg.seed)
    state = SgdState()
    n = X_benign.shape[0]
    n_views = 2 + len(cfg.shift_set)

    for epoch in range(cfg.epochs):
        lr = lr_at(schedule, epoch)
        losses = []
        for idx in _batches(n, cfg.batch_size, rng, min_size=2):
            xb = X_benign[idx]
            b = xb.shape[0]
            rows = np.empty((n_views * b, xb.shape[1]), dtype=np.float32)
            rows[0:b] = _make_view(xb, rng, cfg.augment_set)
            rows[b:2 * b] = _make_view(xb, rng, cfg.augment_set)
            pair = np.full(n_views * b, -1, dtype=np.int64)
            pair[0:b] = np.arange(b) + b
            pair[b:2 * b] = np.arange(b)
            for si, k in enumerate(cfg.shift_set):
                lo = (2 + si) * b
                rows[lo:lo + b] = shift_transform(xb, k, model.sample_cfg)

            batch = rows.reshape(rows.shape[0], 1, -1)
            emb_out, enc_tape = L.forward(model.encoder, model.params,
                                          model.buffers, batch, train=True)
            proj, head_tape = L.forward(model.head, model.params,
                                        model.buffers, emb_out, train=True)
            loss, dproj = info_nce_with_grad(proj, pair, cfg.temperature)
            grads, demb = L.backward(head_tape, dproj, model.params)
            enc_grads, _ = L.backward(enc_tape, demb, model.params)
            grads.update(enc_grads)
            sgd_step(model.params, grads, lr, cfg.momentum, state)
            losses.append(loss)
        if on_epoch is not None:
            on_epoch(epoch, float(np.mean(losses)), lr)
    return model


def finetune(model: ModelState, X: np.ndarray, y: np.ndarray,
             cfg: FinetuneConfig, X_val: Optional[np.ndarray] = None,
             y_val: Optional[np.ndarray] = None,
             on_epoch: Optional[Callable] = None) -> ModelState:
    """Deep SAD fine-tuning on a mostly-benign labeled set.

    The center is fixed from the pretrained embeddings before any update.
    A dataset with no anomalies is legal (pure one-class training). With a
    validation set, the parameters kept are those of the best-validation-
    AUC epoch; ``on_epoch(epoch, loss, lr, val_auc)`` observes progress.
    """
    from .model import score_batch  # local import, cycle with scoring

    X = np.asarray(X, dtype=np.float32)
    y = np.asarray(y, dtype=np.uint8)
    if X.shape[0] == 0:
        raise EmptyDataset("fine-tuning needs samples")
    if not np.any(y == 0):
        raise EmptyDataset("fine-tuning needs at least one benign sample")
    model.center = init_center(model, X[y == 0])

    schedule = cfg.resolved_schedule()
    rng = np.random.default_rng(cfg.seed)
    state = AdamState()
    has_val = X_val is not None and y_val is not None and len(X_val) > 0
    best_auc = -1.0
    best = None

    for epoch in range(cfg.epochs):
        lr = lr_at(schedule, epoch)
        losses = []
        for idx in _batches(X.shape[0], cfg.batch_size, rng):
            xb = X[idx].reshape(idx.size, 1, -1)
            emb_out, tape = L.forward(model.encoder, model.params,
                                      model.buffers, xb, train=True)
            loss, demb = deep_sad_with_grad(emb_out, y[idx], model.center,
                                            cfg.eta, cfg.eps)
            grads, _ = L.backward(tape, demb, model.params)
            adam_step(model.params, grads, state, lr)
            losses.append(loss)
        val_auc = None
        if has_val:
            val_scores = score_batch(model, X_val)
            val_auc = auc(val_scores, y_val)
            if val_auc > best_auc:
                best_auc = val_auc
                best = ({k: v.copy() for k, v in model.params.items()},
                        {k: v.copy() for k, v in model.buffers.items()})
        if on_epoch is not None:
            on_epoch(epoch, float(np.mean(losses)), lr, val_auc)

    if best is not None:
        model.params, model.buffers = best
    return model


def _fold_seed(base: int, fold: int, stage: int) -> int:
    return int(np.random.SeedSequence((base, fold, stage)).generate_state(1)[0])


def kfold(X_benign: np.ndarray, X_anom: np.ndarray, k: int,
          sample_cfg: SampleConfig, arch, pre_cfg: PretrainConfig,
          ft_cfg: FinetuneConfig, seed: int = 0,
          on_fold: Optional[Callable] = None) -> list:
    """K-fold evaluation: pretrain + finetune per fold, score the held-out
    benign fold plus a fixed anomaly evaluation split.

    Benign data splits into k disjoint folds under a seeded shuffle; the
    anomaly set splits 50/50 (seeded) into a fine-tuning portion and an
    evaluation portion reused across folds. Thresholds per fold calibrate
    on that fold's benign training scores.
    """
    from .detect import OP_POINTS, calibrate
    from .metrics import prf

    X_benign = np.asarray(X_benign, dtype=np.float32)
    X_anom = np.asarray(X_anom, dtype=np.float32)
    if k < 2:
        raise TooFewSamples(f"k must be >= 2, got {k}")
    if X_benign.shape[0] < k:
        raise TooFewSamples(f"{X_benign.shape[0]} benign samples into {k} folds")
    if X_anom.shape[0] < 2:
        raise TooFewSamples("need at least 2 anomalies for the 50/50 split")

    rng = np.random.default_rng(seed)
    fold_idx = np.array_split(rng.permutation(X_benign.shape[0]), k)
    anom_perm = rng.permutation(X_anom.shape[0])
    half = X_anom.shape[0] // 2
    ft_anom = X_anom[anom_perm[:half]]
    ev_anom = X_anom[anom_perm[half:]]

    reports = []
    for f in range(k):
        held = fold_idx[f]
        train_idx = np.concatenate([fold_idx[i] for i in range(k) if i != f])
        X_train = X_benign[train_idx]
        X_val = np.concatenate([X_benign[held], ev_anom])
        y_val = np.concatenate([np.zeros(held.size, dtype=np.uint8),
                                np.ones(ev_anom.shape[0], dtype=np.uint8)])

        model = build_rescnn(sample_cfg, arch, seed=_fold_seed(seed, f, 0))
        pre_losses: list = []
        pretrain(X_train, model, replace(pre_cfg, seed=_fold_seed(seed, f, 1)),
                 on_epoch=lambda e, loss, lr: pre_losses.append(loss))
        X_ft = np.concatenate([X_train, ft_anom])
        y_ft = np.concatenate([np.zeros(X_train.shape[0], dtype=np.uint8),
                               np.ones(ft_anom.shape[0], dtype=np.uint8)])
        ft_losses: list = []
        finetune(model, X_ft, y_ft, replace(ft_cfg, seed=_fold_seed(seed, f, 2)),
                 X_val=X_val, y_val=y_val,
                 on_epoch=lambda e, loss, lr, va: ft_losses.append(loss))

        from .model import score_batch
        fold_auc = auc(score_batch(model, X_val), y_val)
        thresholds = calibrate(score_batch(model, X_train))
        val_scores = score_batch(model, X_val)
        f1 = {op: prf(val_scores, y_val, getattr(thresholds, op))[2]
              for op in OP_POINTS}
        report = FoldReport(fold=f, auc=fold_auc, f1=f1,
                            pretrain_losses=pre_losses, finetune_losses=ft_losses)
        reports.append(report)
        if on_fold is not None:
            on_fold(report)
    return reports
