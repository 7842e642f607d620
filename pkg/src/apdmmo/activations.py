"""The 22 activation units of the NLA block, with their derivatives.

Two routes compute the same numbers: :func:`activation_apply` evaluates one
unit on its own, :func:`activation_bank` evaluates all 22 at once in a compiled kernel that
shares the exponentials between units (this is the one the network uses).

Constants follow the usual library defaults and are listed in ``CONSTANTS``.
At kinks the derivative takes the value of the closed side that is flat, e.g.
ReLU'(0) = 0, Hardtanh'(+-1) = 0, Hardshrink'(+-0.5) = 0.
"""
from __future__ import annotations

import math

import numba
import numpy as np
from scipy.special import erfc

ACTIVATIONS = (
    "ELU", "Hardshrink", "Hardsigmoid", "Hardtanh", "Hardswish", "LeakyReLU",
    "LogSigmoid", "PReLU", "ReLU", "ReLU6", "RReLU", "SELU", "CELU", "GELU",
    "Sigmoid", "SiLU", "Mish", "Softplus", "Softshrink", "Softsign", "Tanh",
    "Tanhshrink",
)
N_ACT = len(ACTIVATIONS)
PRELU_SLOT = ACTIVATIONS.index("PReLU")

CONSTANTS = {
    "ELU.alpha": 1.0,
    "CELU.alpha": 1.0,
    "LeakyReLU.slope": 0.01,
    "Hardshrink.lambda": 0.5,
    "Softshrink.lambda": 0.5,
    "SELU.alpha": 1.6732632423543772848170429916717,
    "SELU.scale": 1.0507009873554804934193349852946,
    "RReLU.lower": 1.0 / 8.0,
    "RReLU.upper": 1.0 / 3.0,
    "PReLU.init": 0.25,
}
RRELU_EVAL_SLOPE = 0.5 * (CONSTANTS["RReLU.lower"] + CONSTANTS["RReLU.upper"])

_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_SELU_ALPHA = CONSTANTS["SELU.alpha"]
_SELU_SCALE = CONSTANTS["SELU.scale"]


def rrelu_slopes(shape, mode: str, rng: np.random.Generator | None):
    """Negative-side slopes for RReLU: random per element in train mode."""
    if mode == "train":
        if rng is None:
            raise ValueError("RReLU needs an rng in train mode")
        return rng.uniform(CONSTANTS["RReLU.lower"], CONSTANTS["RReLU.upper"], size=shape)
    return RRELU_EVAL_SLOPE


def _sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def activation_apply(kind: str, x, mode: str = "eval", rng=None, prelu_slope: float = 0.25,
                     rrelu_slope=None):
    """Value and derivative of one activation unit.

    ``rrelu_slope`` overrides the sampled RReLU slope (used by the network so
    forward and backward agree).
    """
    x = np.asarray(x, dtype=float)
    if kind == "ELU" or kind == "CELU":
        a = CONSTANTS[f"{kind}.alpha"]
        neg = np.minimum(x, 0.0)
        v = np.where(x > 0, x, a * np.expm1(neg / a))
        d = np.where(x > 0, 1.0, np.exp(neg / a))
    elif kind == "Hardshrink":
        m = np.abs(x) > CONSTANTS["Hardshrink.lambda"]
        v = np.where(m, x, 0.0)
        d = m.astype(float)
    elif kind == "Hardsigmoid":
        v = np.clip(x / 6.0 + 0.5, 0.0, 1.0)
        d = np.where((x > -3.0) & (x < 3.0), 1.0 / 6.0, 0.0)
    elif kind == "Hardtanh":
        v = np.clip(x, -1.0, 1.0)
        d = ((x > -1.0) & (x < 1.0)).astype(float)
    elif kind == "Hardswish":
        v = x * np.clip(x + 3.0, 0.0, 6.0) / 6.0
        d = np.where(x >= 3.0, 1.0, np.where(x > -3.0, (2.0 * x + 3.0) / 6.0, 0.0))
    elif kind == "LeakyReLU":
        s = CONSTANTS["LeakyReLU.slope"]
        v = np.where(x > 0, x, s * x)
        d = np.where(x > 0, 1.0, s)
    elif kind == "LogSigmoid":
        v = -_softplus(-x)
        d = _sigmoid(-x)
    elif kind == "PReLU":
        v = np.where(x > 0, x, prelu_slope * x)
        d = np.where(x > 0, 1.0, prelu_slope)
    elif kind == "ReLU":
        v = np.maximum(x, 0.0)
        d = (x > 0).astype(float)
    elif kind == "ReLU6":
        v = np.clip(x, 0.0, 6.0)
        d = ((x > 0) & (x < 6.0)).astype(float)
    elif kind == "RReLU":
        s = rrelu_slopes(x.shape, mode, rng) if rrelu_slope is None else rrelu_slope
        v = np.where(x > 0, x, s * x)
        d = np.where(x > 0, 1.0, s)
    elif kind == "SELU":
        a, sc = CONSTANTS["SELU.alpha"], CONSTANTS["SELU.scale"]
        neg = np.minimum(x, 0.0)
        v = sc * np.where(x > 0, x, a * np.expm1(neg))
        d = sc * np.where(x > 0, 1.0, a * np.exp(neg))
    elif kind == "GELU":
        cdf = 0.5 * erfc(-x * _SQRT1_2)
        v = x * cdf
        d = cdf + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    elif kind == "Sigmoid":
        v = _sigmoid(x)
        d = v * (1.0 - v)
    elif kind == "SiLU":
        s = _sigmoid(x)
        v = x * s
        d = s * (1.0 + x * (1.0 - s))
    elif kind == "Mish":
        t = np.tanh(_softplus(x))
        v = x * t
        d = t + x * (1.0 - t * t) * _sigmoid(x)
    elif kind == "Softplus":
        v = _softplus(x)
        d = _sigmoid(x)
    elif kind == "Softshrink":
        lam = CONSTANTS["Softshrink.lambda"]
        v = np.where(x > lam, x - lam, np.where(x < -lam, x + lam, 0.0))
        d = (np.abs(x) > lam).astype(float)
    elif kind == "Softsign":
        q = 1.0 + np.abs(x)
        v = x / q
        d = 1.0 / (q * q)
    elif kind == "Tanh":
        v = np.tanh(x)
        d = 1.0 - v * v
    elif kind == "Tanhshrink":
        t = np.tanh(x)
        v = x - t
        d = t * t
    else:
        raise KeyError(f"unknown activation {kind!r}")
    return v, d


@numba.njit(cache=True)
def _bank_kernel(x, prelu_slope, rrelu, V, D):
    n, h = x.shape
    a, sc = _SELU_ALPHA, _SELU_SCALE
    for i in range(n):
        for j in range(h):
            v = x[i, j]
            ax = abs(v)
            pos = v > 0.0
            e = math.exp(-ax)
            inv = 1.0 / (1.0 + e)
            sig = inv if pos else e * inv
            l1p = math.log1p(e)
            relu = v if pos else 0.0
            xn = 0.0 if pos else v
            en = 1.0 if pos else e
            em1 = 0.0 if pos else math.expm1(v)
            sp = relu + l1p
            # tanh(x) and tanh(softplus(x)) from e = exp(-|x|) without new calls
            e2 = e * e
            t = (1.0 - e2) / (1.0 + e2)
            if not pos:
                t = -t
            if pos:
                tsp = (1.0 + 2.0 * e) / (1.0 + 2.0 * e + 2.0 * e2)
            else:
                tsp = (2.0 * e + e2) / (2.0 + 2.0 * e + e2)
            cdf = 0.5 * math.erfc(-v * _SQRT1_2)
            pdf = _INV_SQRT_2PI * math.exp(-0.5 * v * v)
            shrink = ax > 0.5
            # ELU
            V[i, j, 0] = relu + em1
            D[i, j, 0] = en
            # Hardshrink
            V[i, j, 1] = v if shrink else 0.0
            D[i, j, 1] = 1.0 if shrink else 0.0
            # Hardsigmoid, Hardtanh, Hardswish
            V[i, j, 2] = min(max(v / 6.0 + 0.5, 0.0), 1.0)
            D[i, j, 2] = 1.0 / 6.0 if ax < 3.0 else 0.0
            V[i, j, 3] = min(max(v, -1.0), 1.0)
            D[i, j, 3] = 1.0 if ax < 1.0 else 0.0
            V[i, j, 4] = v * min(max(v + 3.0, 0.0), 6.0) / 6.0
            if v >= 3.0:
                D[i, j, 4] = 1.0
            elif v > -3.0:
                D[i, j, 4] = (2.0 * v + 3.0) / 6.0
            else:
                D[i, j, 4] = 0.0
            # LeakyReLU, LogSigmoid, PReLU, ReLU, ReLU6, RReLU
            s = 1.0 if pos else 0.01
            V[i, j, 5] = s * v
            D[i, j, 5] = s
            V[i, j, 6] = xn - l1p
            D[i, j, 6] = 1.0 - sig
            s = 1.0 if pos else prelu_slope
            V[i, j, 7] = s * v
            D[i, j, 7] = s
            V[i, j, 8] = relu
            D[i, j, 8] = 1.0 if pos else 0.0
            V[i, j, 9] = min(relu, 6.0)
            D[i, j, 9] = 1.0 if (pos and v < 6.0) else 0.0
            s = 1.0 if pos else rrelu[i, j]
            V[i, j, 10] = s * v
            D[i, j, 10] = s
            # SELU, CELU (alpha=1, same as ELU)
            V[i, j, 11] = sc * (relu + a * em1)
            D[i, j, 11] = sc if pos else sc * a * e
            V[i, j, 12] = V[i, j, 0]
            D[i, j, 12] = D[i, j, 0]
            # GELU, Sigmoid, SiLU, Mish, Softplus
            V[i, j, 13] = v * cdf
            D[i, j, 13] = cdf + v * pdf
            V[i, j, 14] = sig
            D[i, j, 14] = sig * (1.0 - sig)
            V[i, j, 15] = v * sig
            D[i, j, 15] = sig * (1.0 + v * (1.0 - sig))
            V[i, j, 16] = v * tsp
            D[i, j, 16] = tsp + v * (1.0 - tsp * tsp) * sig
            V[i, j, 17] = sp
            D[i, j, 17] = sig
            # Softshrink, Softsign, Tanh, Tanhshrink
            if v > 0.5:
                V[i, j, 18] = v - 0.5
            elif v < -0.5:
                V[i, j, 18] = v + 0.5
            else:
                V[i, j, 18] = 0.0
            D[i, j, 18] = 1.0 if shrink else 0.0
            q = 1.0 + ax
            V[i, j, 19] = v / q
            D[i, j, 19] = 1.0 / (q * q)
            V[i, j, 20] = t
            D[i, j, 20] = 1.0 - t * t
            V[i, j, 21] = v - t
            D[i, j, 21] = t * t


def activation_bank(x, prelu_slope: float, rrelu_slope):
    """All 22 units applied to ``x`` of shape (n, h) in one fused pass.

    Returns ``(values, derivs)``, each of shape (n, h, 22): the last axis runs
    over ``ACTIVATIONS``.  Flattening to (n, 22h) is therefore channel-major,
    which is the row order of the NLA fusion weight.
    """
    x = np.ascontiguousarray(x, dtype=float)
    n, h = x.shape
    # a contiguous copy keeps the kernel on its fast (C-layout) specialization
    rr = np.ascontiguousarray(np.broadcast_to(np.asarray(rrelu_slope, dtype=float), (n, h)))
    V = np.empty((n, h, N_ACT))
    D = np.empty((n, h, N_ACT))
    _bank_kernel(x, float(prelu_slope), rr, V, D)
    return V, D
