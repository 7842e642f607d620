"""Landscape Learner: a small residual network fitted to the objective.

Architecture::

    x (d) -> embedding (d->h) -> K blocks -> head (h->1)

Each block computes ``LayerNorm(inner(s) + s)``.  For the NLA block the inner
map applies all 22 activation units to ``s`` in parallel, concatenates them to
a 22h vector and fuses it back to h with one linear layer.  The concatenation
is channel-major: entry ``j * 22 + k`` holds unit ``k`` applied to channel
``j``.  MLP and SEQ_NLA are the two alternative inner maps used for
architecture ablations.

Gradients are computed by hand (reverse mode) with respect to the parameters
and with respect to the inputs.  Everything is float64.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .activations import (
    ACTIVATIONS, CONSTANTS, N_ACT, PRELU_SLOT, activation_apply, activation_bank,
    rrelu_slopes,
)

BLOCK_KINDS = ("NLA", "MLP", "SEQ_NLA")
CHECKPOINT_VERSION = 1


class NonFiniteError(FloatingPointError):
    """Raised when a forward pass or loss produces inf/nan."""


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    hidden_dim: int = 128
    depth: int = 5
    block_kind: str = "NLA"

    def __post_init__(self):
        if self.input_dim < 1 or self.hidden_dim < 1 or self.depth < 1:
            raise ValueError("input_dim, hidden_dim and depth must be >= 1")
        if self.block_kind not in BLOCK_KINDS:
            raise ValueError(f"block_kind must be one of {BLOCK_KINDS}")

    @classmethod
    def variant(cls, label: str, input_dim: int, hidden_dim: int = 128) -> "ModelConfig":
        """Ablation variants P1/P5 (NLA), M1/M5 (MLP), S1/S5 (SEQ_NLA)."""
        kind = {"P": "NLA", "M": "MLP", "S": "SEQ_NLA"}[label[0]]
        return cls(input_dim=input_dim, hidden_dim=hidden_dim, depth=int(label[1:]), block_kind=kind)


@dataclass
class Normalization:
    """Affine maps between problem units and model units.

    Inputs: box bounds map to [-1, 1].  Targets: standardized by mean/std.
    """

    x_center: np.ndarray
    x_half: np.ndarray
    y_mean: float = 0.0
    y_std: float = 1.0

    @classmethod
    def from_bounds(cls, lower, upper):
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        return cls(x_center=0.5 * (lower + upper), x_half=0.5 * (upper - lower))

    def normalize_x(self, X):
        return (np.asarray(X, dtype=float) - self.x_center) / self.x_half

    def denormalize_x(self, U):
        return np.asarray(U, dtype=float) * self.x_half + self.x_center

    def normalize_y(self, y):
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_std

    def denormalize_y(self, y):
        return np.asarray(y, dtype=float) * self.y_std + self.y_mean


@dataclass
class ModelParams:
    config: ModelConfig
    arrays: dict = field(default_factory=dict)
    norm: Normalization | None = None

    def copy(self) -> "ModelParams":
        norm = None
        if self.norm is not None:
            norm = Normalization(self.norm.x_center.copy(), self.norm.x_half.copy(),
                                 self.norm.y_mean, self.norm.y_std)
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()}, norm)

    def n_params(self) -> int:
        return sum(v.size for v in self.arrays.values())


def param_shapes(config: ModelConfig) -> dict:
    d, h = config.input_dim, config.hidden_dim
    shapes = {"embed.W": (d, h), "embed.b": (h,)}
    for k in range(config.depth):
        p = f"block{k}."
        if config.block_kind == "NLA":
            shapes.update({p + "W": (N_ACT * h, h), p + "b": (h,), p + "prelu": (1,)})
        elif config.block_kind == "MLP":
            shapes.update({p + "W1": (h, h), p + "b1": (h,), p + "W2": (h, h), p + "b2": (h,)})
        else:
            shapes.update({p + "W": (N_ACT, h, h), p + "b": (N_ACT, h), p + "prelu": (1,)})
        shapes.update({p + "ln_g": (h,), p + "ln_b": (h,)})
    shapes.update({"head.W": (h,), "head.b": (1,)})
    return shapes


def init_model(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in param_shapes(config).items():
        leaf = name.split(".")[-1]
        if leaf.startswith("W"):
            fan_in = shape[-2] if len(shape) >= 2 else shape[0]
            bound = 1.0 / np.sqrt(fan_in)
            arrays[name] = rng.uniform(-bound, bound, size=shape)
        elif leaf == "prelu":
            arrays[name] = np.full(shape, CONSTANTS["PReLU.init"])
        elif leaf == "ln_g":
            arrays[name] = np.ones(shape)
        else:
            arrays[name] = np.zeros(shape)
    return ModelParams(config, arrays, None)


# ---------------------------------------------------------------------------
# layer norm
# ---------------------------------------------------------------------------

def _ln_forward(U, g, b):
    mu = U.mean(axis=1, keepdims=True)
    c = U - mu
    var = np.mean(c * c, axis=1, keepdims=True)
    # no epsilon: the normalized vector has unit variance exactly whenever
    # the input varies; a constant feature vector maps to zero
    with np.errstate(divide="ignore"):
        rstd = np.where(var > 0.0, 1.0 / np.sqrt(var), 0.0)
    N = c * rstd
    return N * g + b, (N, rstd)


def _ln_backward(dOut, g, cache):
    N, rstd = cache
    dN = dOut * g
    dU = rstd * (dN - dN.mean(axis=1, keepdims=True) - N * np.mean(dN * N, axis=1, keepdims=True))
    return dU, np.sum(dOut * N, axis=0), dOut.sum(axis=0)


# ---------------------------------------------------------------------------
# blocks: each forward returns (out, cache); each backward returns
# (d_in, {param_name: grad}) with grads skipped when want_params is False
# ---------------------------------------------------------------------------

def _nla_forward(P, p, S, mode, rng):
    n, h = S.shape
    a = float(P[p + "prelu"][0])
    rr = rrelu_slopes(S.shape, mode, rng)
    V, D = activation_bank(S, a, rr)
    Vf = V.reshape(n, N_ACT * h)
    U = Vf @ P[p + "W"] + P[p + "b"] + S
    out, ln = _ln_forward(U, P[p + "ln_g"], P[p + "ln_b"])
    return out, (S, Vf, D, ln)


def _nla_backward(P, p, dOut, cache, want_params):
    S, Vf, D, ln = cache
    n, h = S.shape
    dU, dg, db_ln = _ln_backward(dOut, P[p + "ln_g"], ln)
    dV = (dU @ P[p + "W"].T).reshape(n, h, N_ACT)
    dS = dU + np.einsum("nhk,nhk->nh", dV, D)
    grads = {}
    if want_params:
        grads[p + "W"] = Vf.T @ dU
        grads[p + "b"] = dU.sum(axis=0)
        grads[p + "prelu"] = np.array([np.sum(dV[:, :, PRELU_SLOT] * np.minimum(S, 0.0))])
        grads[p + "ln_g"] = dg
        grads[p + "ln_b"] = db_ln
    return dS, grads


def _mlp_forward(P, p, S, mode, rng):
    Z1 = S @ P[p + "W1"] + P[p + "b1"]
    H1 = np.maximum(Z1, 0.0)
    Z2 = H1 @ P[p + "W2"] + P[p + "b2"]
    H2 = np.maximum(Z2, 0.0)
    out, ln = _ln_forward(H2 + S, P[p + "ln_g"], P[p + "ln_b"])
    return out, (S, Z1, H1, Z2, ln)


def _mlp_backward(P, p, dOut, cache, want_params):
    S, Z1, H1, Z2, ln = cache
    dU, dg, db_ln = _ln_backward(dOut, P[p + "ln_g"], ln)
    dZ2 = dU * (Z2 > 0)
    dH1 = dZ2 @ P[p + "W2"].T
    dZ1 = dH1 * (Z1 > 0)
    dS = dU + dZ1 @ P[p + "W1"].T
    grads = {}
    if want_params:
        grads.update({
            p + "W1": S.T @ dZ1, p + "b1": dZ1.sum(axis=0),
            p + "W2": H1.T @ dZ2, p + "b2": dZ2.sum(axis=0),
            p + "ln_g": dg, p + "ln_b": db_ln,
        })
    return dS, grads


def _seq_forward(P, p, S, mode, rng):
    a = float(P[p + "prelu"][0])
    W, b = P[p + "W"], P[p + "b"]
    u = S
    stages = []
    for k, kind in enumerate(ACTIVATIONS):
        rr = rrelu_slopes(u.shape, mode, rng) if kind == "RReLU" else None
        v, dv = activation_apply(kind, u, mode, rng, prelu_slope=a, rrelu_slope=rr)
        stages.append((u, v, dv))
        u = v @ W[k] + b[k]
    out, ln = _ln_forward(u + S, P[p + "ln_g"], P[p + "ln_b"])
    return out, (S, stages, ln)


def _seq_backward(P, p, dOut, cache, want_params):
    S, stages, ln = cache
    W = P[p + "W"]
    dU, dg, db_ln = _ln_backward(dOut, P[p + "ln_g"], ln)
    du = dU
    dW = np.empty_like(W) if want_params else None
    db = np.empty_like(P[p + "b"]) if want_params else None
    dprelu = 0.0
    for k in range(N_ACT - 1, -1, -1):
        u_in, v, dv = stages[k]
        if want_params:
            dW[k] = v.T @ du
            db[k] = du.sum(axis=0)
        dv_out = du @ W[k].T
        if want_params and k == PRELU_SLOT:
            dprelu = np.sum(dv_out * np.minimum(u_in, 0.0))
        du = dv_out * dv
    grads = {}
    if want_params:
        grads.update({p + "W": dW, p + "b": db, p + "prelu": np.array([dprelu]),
                      p + "ln_g": dg, p + "ln_b": db_ln})
    return dU + du, grads


_BLOCKS = {
    "NLA": (_nla_forward, _nla_backward),
    "MLP": (_mlp_forward, _mlp_backward),
    "SEQ_NLA": (_seq_forward, _seq_backward),
}


def _forward(params: ModelParams, X, mode, rng):
    P = params.arrays
    cfg = params.config
    fwd, _ = _BLOCKS[cfg.block_kind]
    X = np.asarray(X, dtype=float)
    S = X @ P["embed.W"] + P["embed.b"]
    caches = []
    for k in range(cfg.depth):
        S, c = fwd(P, f"block{k}.", S, mode, rng)
        caches.append(c)
    yhat = S @ P["head.W"] + P["head.b"][0]
    if not np.all(np.isfinite(yhat)):
        raise NonFiniteError("non-finite model output")
    return yhat, (X, S, caches)


def _backward(params: ModelParams, dy, cache, want_params):
    P = params.arrays
    cfg = params.config
    _, bwd = _BLOCKS[cfg.block_kind]
    X, S_last, caches = cache
    grads = {}
    if want_params:
        grads["head.W"] = S_last.T @ dy
        grads["head.b"] = np.array([dy.sum()])
    dS = np.outer(dy, P["head.W"])
    for k in range(cfg.depth - 1, -1, -1):
        dS, g = bwd(P, f"block{k}.", dS, caches[k], want_params)
        grads.update(g)
    if want_params:
        grads["embed.W"] = X.T @ dS
        grads["embed.b"] = dS.sum(axis=0)
    return dS @ P["embed.W"].T, grads


def forward(params: ModelParams, X, mode: str = "eval", rng=None) -> np.ndarray:
    """Predictions in standardized target units for normalized inputs ``X``."""
    return _forward(params, X, mode, rng)[0]


def loss_and_param_grads(params: ModelParams, X, y, mode: str = "train", rng=None):
    """Mean squared error and its exact gradient for every parameter."""
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise ValueError("empty batch")
    yhat, cache = _forward(params, X, mode, rng)
    r = yhat - y
    loss = float(np.mean(r * r))
    if not np.isfinite(loss):
        raise NonFiniteError("non-finite loss")
    _, grads = _backward(params, 2.0 * r / len(y), cache, want_params=True)
    return loss, grads


def forward_and_grad_input(params: ModelParams, X, chunk: int | None = None):
    """Eval-mode predictions and input gradients, optionally in row chunks."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    step = n if not chunk else chunk
    yhat = np.empty(n)
    G = np.empty_like(X)
    for lo in range(0, n, max(step, 1)):
        hi = min(lo + step, n)
        yh, cache = _forward(params, X[lo:hi], "eval", None)
        g, _ = _backward(params, np.ones(hi - lo), cache, want_params=False)
        yhat[lo:hi] = yh
        G[lo:hi] = g
    return yhat, G


def grad_input(params: ModelParams, X, chunk: int | None = None) -> np.ndarray:
    """Gradient of the (standardized) prediction with respect to each input row."""
    return forward_and_grad_input(params, X, chunk)[1]


def predict_raw(params: ModelParams, X_raw, chunk: int = 8192) -> np.ndarray:
    """Predictions in the training target's raw units for problem-space inputs."""
    U = params.norm.normalize_x(np.atleast_2d(X_raw))
    out = np.concatenate([
        forward(params, U[lo:lo + chunk]) for lo in range(0, len(U), chunk)
    ]) if len(U) else np.empty(0)
    return params.norm.denormalize_y(out)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(params: ModelParams, path: str | Path):
    """Write config, parameters and normalization metadata to an ``.npz`` file."""
    header = {
        "version": CHECKPOINT_VERSION,
        "config": {
            "input_dim": params.config.input_dim, "hidden_dim": params.config.hidden_dim,
            "depth": params.config.depth, "block_kind": params.config.block_kind,
        },
        "has_norm": params.norm is not None,
    }
    payload = {f"param/{k}": v for k, v in params.arrays.items()}
    if params.norm is not None:
        payload["norm/x_center"] = params.norm.x_center
        payload["norm/x_half"] = params.norm.x_half
        payload["norm/y"] = np.array([params.norm.y_mean, params.norm.y_std])
    payload["header"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path: str | Path) -> ModelParams:
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header['version']}")
        config = ModelConfig(**header["config"])
        arrays = {k[len("param/"):]: data[k].copy() for k in data.files if k.startswith("param/")}
        norm = None
        if header["has_norm"]:
            y = data["norm/y"]
            norm = Normalization(data["norm/x_center"].copy(), data["norm/x_half"].copy(),
                                 float(y[0]), float(y[1]))
    expected = param_shapes(config)
    if set(arrays) != set(expected):
        raise ValueError("checkpoint parameters do not match its config")
    return ModelParams(config, arrays, norm)
