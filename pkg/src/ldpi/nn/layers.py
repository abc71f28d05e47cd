"""Layer graph with exact reverse-mode gradients.

The layer set is deliberately small: Conv1d, BatchNorm1d, ReLU, residual
blocks, global average pooling, and Dense. A graph is an ordered tuple of
frozen layer specs; parameters live in a flat name->array dict so
optimizers and checkpoints stay trivial. Convolutions run on (B, C, L)
arrays through the selected kernel backend; everything else is numpy.

Train-mode forwards record a tape for backward and update batch-norm
running statistics; eval-mode forwards use running stats and record
nothing, so eval is a pure affine map per sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..errors import ShapeMismatch
from . import backends


@dataclass(frozen=True)
class Conv1d:
    name: str
    in_ch: int
    out_ch: int
    kernel: int
    stride: int = 1
    pad: int = 0


@dataclass(frozen=True)
class BatchNorm1d:
    name: str
    ch: int
    eps: float = 1e-5
    momentum: float = 0.1


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class GlobalAvgPool:
    pass


@dataclass(frozen=True)
class Dense:
    name: str
    in_dim: int
    out_dim: int


@dataclass(frozen=True)
class Residual:
    """out = body(x) + shortcut(x); empty shortcut means identity."""

    body: tuple = ()
    shortcut: tuple = ()


LayerSpec = object
GraphSpec = tuple


def _walk(graph: GraphSpec):
    for spec in graph:
        yield spec
        if isinstance(spec, Residual):
            yield from _walk(spec.body)
            yield from _walk(spec.shortcut)


def param_names(graph: GraphSpec) -> list[str]:
    names = []
    for spec in _walk(graph):
        if isinstance(spec, Conv1d) or isinstance(spec, Dense):
            names += [f"{spec.name}.w", f"{spec.name}.b"]
        elif isinstance(spec, BatchNorm1d):
            names += [f"{spec.name}.gamma", f"{spec.name}.beta"]
    return names


def output_shape(graph: GraphSpec, shape: tuple) -> tuple:
    """Per-sample output shape; raises ShapeMismatch if layers don't compose."""
    for spec in graph:
        if isinstance(spec, Conv1d):
            if len(shape) != 2 or shape[0] != spec.in_ch:
                raise ShapeMismatch(f"{spec.name}: expected ({spec.in_ch}, L), got {shape}")
            length = (shape[1] + 2 * spec.pad - spec.kernel) // spec.stride + 1
            if length < 1:
                raise ShapeMismatch(f"{spec.name}: kernel {spec.kernel} too large for length {shape[1]}")
            shape = (spec.out_ch, length)
        elif isinstance(spec, BatchNorm1d):
            if len(shape) != 2 or shape[0] != spec.ch:
                raise ShapeMismatch(f"{spec.name}: expected ({spec.ch}, L), got {shape}")
        elif isinstance(spec, ReLU):
            pass
        elif isinstance(spec, Residual):
            main = output_shape(spec.body, shape)
            side = output_shape(spec.shortcut, shape) if spec.shortcut else shape
            if main != side:
                raise ShapeMismatch(f"residual branches disagree: {main} vs {side}")
            shape = main
        elif isinstance(spec, GlobalAvgPool):
            if len(shape) != 2:
                raise ShapeMismatch(f"pool expects (C, L), got {shape}")
            shape = (shape[0],)
        elif isinstance(spec, Dense):
            if len(shape) != 1 or shape[0] != spec.in_dim:
                raise ShapeMismatch(f"{spec.name}: expected ({spec.in_dim},), got {shape}")
            shape = (spec.out_dim,)
        else:
            raise ShapeMismatch(f"unknown layer spec {spec!r}")
    return shape


def init_params(graph: GraphSpec, rng: np.random.Generator,
                dtype=np.float32) -> tuple[dict, dict]:
    """He-uniform weights, zero biases, unit batch-norm; returns (params, buffers)."""
    params: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}

    def he_uniform(shape, fan_in):
        limit = math.sqrt(6.0 / fan_in)
        return rng.uniform(-limit, limit, size=shape).astype(dtype)

    for spec in _walk(graph):
        if isinstance(spec, Conv1d):
            _claim(params, f"{spec.name}.w")
            params[f"{spec.name}.w"] = he_uniform(
                (spec.out_ch, spec.in_ch, spec.kernel), spec.in_ch * spec.kernel)
            params[f"{spec.name}.b"] = np.zeros(spec.out_ch, dtype=dtype)
        elif isinstance(spec, Dense):
            _claim(params, f"{spec.name}.w")
            params[f"{spec.name}.w"] = he_uniform(
                (spec.out_dim, spec.in_dim), spec.in_dim)
            params[f"{spec.name}.b"] = np.zeros(spec.out_dim, dtype=dtype)
        elif isinstance(spec, BatchNorm1d):
            _claim(params, f"{spec.name}.gamma")
            params[f"{spec.name}.gamma"] = np.ones(spec.ch, dtype=dtype)
            params[f"{spec.name}.beta"] = np.zeros(spec.ch, dtype=dtype)
            buffers[f"{spec.name}.mean"] = np.zeros(spec.ch, dtype=dtype)
            buffers[f"{spec.name}.var"] = np.ones(spec.ch, dtype=dtype)
    return params, buffers


def _claim(params: dict, key: str):
    if key in params:
        raise ShapeMismatch(f"duplicate layer name for parameter {key}")


# --- forward / backward ----------------------------------------------------

class Tape:
    """Execution record of one train-mode forward."""

    def __init__(self):
        self.entries: list[tuple] = []


def forward(graph: GraphSpec, params: dict, buffers: dict, x: np.ndarray,
            train: bool, check_finite: bool = False):
    """Run the graph; returns (output, tape). Tape is None in eval mode."""
    tape = Tape() if train else None
    y = _forward_into(graph, params, buffers, x, train, tape, check_finite)
    return y, tape


def _forward_into(graph, params, buffers, x, train, tape, check_finite):
    for spec in graph:
        if isinstance(spec, Conv1d):
            x = _conv_fwd(spec, params, x, tape)
        elif isinstance(spec, BatchNorm1d):
            x = _bn_fwd(spec, params, buffers, x, train, tape)
        elif isinstance(spec, ReLU):
            mask = x > 0
            x = x * mask
            if tape is not None:
                tape.entries.append((spec, mask))
        elif isinstance(spec, Residual):
            x = _residual_fwd(spec, params, buffers, x, train, tape, check_finite)
        elif isinstance(spec, GlobalAvgPool):
            if x.ndim != 3:
                raise ShapeMismatch(f"pool expects (B, C, L), got {x.shape}")
            if tape is not None:
                tape.entries.append((spec, x.shape[2]))
            x = x.mean(axis=2)
        elif isinstance(spec, Dense):
            x = _dense_fwd(spec, params, x, tape)
        else:
            raise ShapeMismatch(f"unknown layer spec {spec!r}")
        if check_finite and not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite output after {spec!r}")
    return x


def _conv_fwd(spec: Conv1d, params, x, tape):
    if x.ndim != 3 or x.shape[1] != spec.in_ch:
        raise ShapeMismatch(f"{spec.name}: expected (B, {spec.in_ch}, L), got {x.shape}")
    w = params[f"{spec.name}.w"]
    b = params[f"{spec.name}.b"]
    x = np.ascontiguousarray(x)
    y = backends.conv1d_forward(x, w, b, spec.stride, spec.pad)
    if tape is not None:
        tape.entries.append((spec, x))
    return y


def _dense_fwd(spec: Dense, params, x, tape):
    if x.ndim != 2 or x.shape[1] != spec.in_dim:
        raise ShapeMismatch(f"{spec.name}: expected (B, {spec.in_dim}), got {x.shape}")
    w = params[f"{spec.name}.w"]
    b = params[f"{spec.name}.b"]
    y = x @ w.T + b
    if tape is not None:
        tape.entries.append((spec, x))
    return y


def _bn_fwd(spec: BatchNorm1d, params, buffers, x, train, tape):
    if x.ndim != 3 or x.shape[1] != spec.ch:
        raise ShapeMismatch(f"{spec.name}: expected (B, {spec.ch}, L), got {x.shape}")
    gamma = params[f"{spec.name}.gamma"]
    beta = params[f"{spec.name}.beta"]
    if train:
        mean = x.mean(axis=(0, 2))
        var = x.var(axis=(0, 2))
        count = x.shape[0] * x.shape[2]
        inv_std = 1.0 / np.sqrt(var + np.asarray(spec.eps, dtype=x.dtype))
        xhat = (x - mean[:, None]) * inv_std[:, None]
        m = np.asarray(spec.momentum, dtype=x.dtype)
        unbiased = var * (count / max(count - 1, 1))
        buffers[f"{spec.name}.mean"] = (1 - m) * buffers[f"{spec.name}.mean"] + m * mean
        buffers[f"{spec.name}.var"] = (1 - m) * buffers[f"{spec.name}.var"] + m * unbiased
        if tape is not None:
            tape.entries.append((spec, (xhat, inv_std, gamma)))
    else:
        mean = buffers[f"{spec.name}.mean"]
        var = buffers[f"{spec.name}.var"]
        inv_std = 1.0 / np.sqrt(var + np.asarray(spec.eps, dtype=x.dtype))
        xhat = (x - mean[:, None]) * inv_std[:, None]
    return gamma[:, None] * xhat + beta[:, None]


def _residual_fwd(spec: Residual, params, buffers, x, train, tape, check_finite):
    if train:
        body_tape = Tape()
        main = _forward_into(spec.body, params, buffers, x, True, body_tape, check_finite)
        short_tape = Tape() if spec.shortcut else None
        side = (_forward_into(spec.shortcut, params, buffers, x, True, short_tape, check_finite)
                if spec.shortcut else x)
        tape.entries.append((spec, (body_tape, short_tape)))
    else:
        main = _forward_into(spec.body, params, buffers, x, False, None, check_finite)
        side = (_forward_into(spec.shortcut, params, buffers, x, False, None, check_finite)
                if spec.shortcut else x)
    if main.shape != side.shape:
        raise ShapeMismatch(f"residual branches disagree: {main.shape} vs {side.shape}")
    return main + side


def backward(tape: Tape, dy: np.ndarray, params: dict) -> tuple[dict, np.ndarray]:
    """Exact gradients for every parameter and the input.

    Requires a tape from a train-mode forward; returns (grads, dx).
    """
    grads: dict[str, np.ndarray] = {}
    dx = _backward_tape(tape, dy, params, grads)
    return grads, dx


def _accum(grads, key, value):
    if key in grads:
        grads[key] += value
    else:
        grads[key] = value


def _backward_tape(tape: Tape, dy, params, grads):
    for spec, ctx in reversed(tape.entries):
        if isinstance(spec, Conv1d):
            w = params[f"{spec.name}.w"]
            dy = np.ascontiguousarray(dy)
            dx, dw, db = backends.conv1d_backward(ctx, w, dy, spec.stride, spec.pad)
            _accum(grads, f"{spec.name}.w", dw)
            _accum(grads, f"{spec.name}.b", db)
            dy = dx
        elif isinstance(spec, BatchNorm1d):
            xhat, inv_std, gamma = ctx
            count = dy.shape[0] * dy.shape[2]
            _accum(grads, f"{spec.name}.gamma", (dy * xhat).sum(axis=(0, 2)))
            _accum(grads, f"{spec.name}.beta", dy.sum(axis=(0, 2)))
            dxhat = dy * gamma[:, None]
            s1 = dxhat.sum(axis=(0, 2), keepdims=True)
            s2 = (dxhat * xhat).sum(axis=(0, 2), keepdims=True)
            dy = (inv_std[:, None] / count) * (count * dxhat - s1 - xhat * s2)
        elif isinstance(spec, ReLU):
            dy = dy * ctx
        elif isinstance(spec, Residual):
            body_tape, short_tape = ctx
            d_main = _backward_tape(body_tape, dy, params, grads)
            d_side = (_backward_tape(short_tape, dy, params, grads)
                      if short_tape is not None else dy)
            dy = d_main + d_side
        elif isinstance(spec, GlobalAvgPool):
            length = ctx
            dy = np.repeat(dy[:, :, None], length, axis=2) / np.asarray(length, dtype=dy.dtype)
        elif isinstance(spec, Dense):
            w = params[f"{spec.name}.w"]
            _accum(grads, f"{spec.name}.w", dy.T @ ctx)
            _accum(grads, f"{spec.name}.b", dy.sum(axis=0))
            dy = dy @ w
    return dy


# --- gradient verification oracle ------------------------------------------

def grad_check(graph: GraphSpec, params: dict, buffers: dict, x: np.ndarray,
               loss_fn: Callable, eps: float = 1e-5,
               check_input: bool = False) -> float:
    """Max relative error between backward() and central finite differences.

    ``loss_fn(y) -> (loss, dLdy)``. Use float64 params/input; float32
    round-off drowns the comparison. Buffers are restored afterwards.
    """
    saved = {k: v.copy() for k, v in buffers.items()}

    def run_loss():
        y, _ = forward(graph, params, buffers, x, train=True)
        return loss_fn(y)[0]

    y, tape = forward(graph, params, buffers, x, train=True)
    _, dy = loss_fn(y)
    grads, dx = backward(tape, dy, params)

    worst = 0.0
    for name in sorted(params):
        p = params[name]
        g = grads.get(name, np.zeros_like(p))
        flat = p.reshape(-1)
        gflat = np.asarray(g).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp = run_loss()
            flat[i] = orig - eps
            lm = run_loss()
            flat[i] = orig
            numeric = (lp - lm) / (2 * eps)
            err = abs(gflat[i] - numeric) / max(abs(gflat[i]), abs(numeric), 1.0)
            worst = max(worst, err)
    if check_input:
        xflat = x.reshape(-1)
        dxflat = dx.reshape(-1)
        for i in range(xflat.size):
            orig = xflat[i]
            xflat[i] = orig + eps
            lp = run_loss()
            xflat[i] = orig - eps
            lm = run_loss()
            xflat[i] = orig
            numeric = (lp - lm) / (2 * eps)
            err = abs(dxflat[i] - numeric) / max(abs(dxflat[i]), abs(numeric), 1.0)
            worst = max(worst, err)

    buffers.clear()
    buffers.update(saved)
    return worst


# --- graph (de)serialization -------------------------------------------------

def graph_to_obj(graph: GraphSpec) -> list:
    out = []
    for spec in graph:
        if isinstance(spec, Conv1d):
            out.append({"type": "conv1d", "name": spec.name, "in_ch": spec.in_ch,
                        "out_ch": spec.out_ch, "kernel": spec.kernel,
                        "stride": spec.stride, "pad": spec.pad})
        elif isinstance(spec, BatchNorm1d):
            out.append({"type": "batchnorm1d", "name": spec.name, "ch": spec.ch,
                        "eps": spec.eps, "momentum": spec.momentum})
        elif isinstance(spec, ReLU):
            out.append({"type": "relu"})
        elif isinstance(spec, GlobalAvgPool):
            out.append({"type": "gap"})
        elif isinstance(spec, Dense):
            out.append({"type": "dense", "name": spec.name,
                        "in_dim": spec.in_dim, "out_dim": spec.out_dim})
        elif isinstance(spec, Residual):
            out.append({"type": "residual", "body": graph_to_obj(spec.body),
                        "shortcut": graph_to_obj(spec.shortcut)})
        else:
            raise ShapeMismatch(f"unknown layer spec {spec!r}")
    return out


def graph_from_obj(obj: list) -> GraphSpec:
    graph = []
    for d in obj:
        kind = d["type"]
        if kind == "conv1d":
            graph.append(Conv1d(d["name"], d["in_ch"], d["out_ch"], d["kernel"],
                                d["stride"], d["pad"]))
        elif kind == "batchnorm1d":
            graph.append(BatchNorm1d(d["name"], d["ch"], d["eps"], d["momentum"]))
        elif kind == "relu":
            graph.append(ReLU())
        elif kind == "gap":
            graph.append(GlobalAvgPool())
        elif kind == "dense":
            graph.append(Dense(d["name"], d["in_dim"], d["out_dim"]))
        elif kind == "residual":
            graph.append(Residual(graph_from_obj(d["body"]),
                                  graph_from_obj(d["shortcut"])))
        else:
            raise ShapeMismatch(f"unknown serialized layer {kind!r}")
    return tuple(graph)
