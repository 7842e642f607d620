"""Reference implementations and checks used by the tests.

The DBSCAN reference and the finite-difference checks do not share code
with the package.  The smoothness filter re-runs the forward pass only to
find where the activation kinks are.
"""
import numpy as np

from apdmmo.activations import (
    ACTIVATIONS, N_ACT, RRELU_EVAL_SLOPE, activation_apply, activation_bank,
)
from apdmmo.landscape_model import forward, grad_input, loss_and_param_grads

# points where a unit's value or first derivative jumps; smooth units and
# units whose first derivative is continuous (ELU with alpha 1, Softsign) have
# none that matter for central differences
UNIT_KINKS = {
    "Hardshrink": (-0.5, 0.5), "Softshrink": (-0.5, 0.5), "Hardsigmoid": (-3.0, 3.0),
    "Hardswish": (-3.0, 3.0), "Hardtanh": (-1.0, 1.0), "ReLU6": (0.0, 6.0),
    "LeakyReLU": (0.0,), "PReLU": (0.0,), "ReLU": (0.0,), "RReLU": (0.0,),
    "SELU": (0.0,), "CELU": (0.0,), "ELU": (0.0,),
}
KINKS = np.array(sorted({k for ks in UNIT_KINKS.values() for k in ks}))


def dbscan_reference(X, eps, min_pts):
    """Textbook DBSCAN: O(n^2) neighbour lists, sequential scan by index."""
    X = np.asarray(X, dtype=float).reshape(len(X), -1)
    n = len(X)
    close = ((X[:, None, :] - X[None, :, :]) ** 2).sum(-1) <= eps * eps
    nbrs = [np.flatnonzero(close[i]) for i in range(n)]
    UNSEEN, NOISE = -2, -1
    labels = np.full(n, UNSEEN)
    cluster = -1
    for i in range(n):
        if labels[i] != UNSEEN:
            continue
        if len(nbrs[i]) < min_pts:
            labels[i] = NOISE
            continue
        cluster += 1
        labels[i] = cluster
        queue = list(nbrs[i])
        while queue:
            j = queue.pop(0)
            if labels[j] == NOISE:
                labels[j] = cluster
            if labels[j] != UNSEEN:
                continue
            labels[j] = cluster
            if len(nbrs[j]) >= min_pts:
                queue.extend(nbrs[j])
    return labels


def same_partition(a, b):
    """True when two labelings agree up to renaming (noise must match noise)."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape or not np.array_equal(a == -1, b == -1):
        return False
    fwd, back = {}, {}
    for x, y in zip(a, b):
        if fwd.setdefault(x, y) != y or back.setdefault(y, x) != x:
            return False
    return True


def pre_activations(params, X):
    """``(tensor, kinks)`` for every tensor that reaches an activation unit."""
    P, cfg = params.arrays, params.config
    S = X @ P["embed.W"] + P["embed.b"]
    out = []
    for k in range(cfg.depth):
        p = f"block{k}."
        if cfg.block_kind == "NLA":
            out.append((S, KINKS))
            V, _ = activation_bank(S, float(P[p + "prelu"][0]), RRELU_EVAL_SLOPE)
            U = V.reshape(len(S), N_ACT * S.shape[1]) @ P[p + "W"] + P[p + "b"] + S
        elif cfg.block_kind == "MLP":
            Z1 = S @ P[p + "W1"] + P[p + "b1"]
            Z2 = np.maximum(Z1, 0) @ P[p + "W2"] + P[p + "b2"]
            out += [(Z1, UNIT_KINKS["ReLU"]), (Z2, UNIT_KINKS["ReLU"])]
            U = np.maximum(Z2, 0) + S
        else:
            u = S
            for j, kind in enumerate(ACTIVATIONS):
                out.append((u, UNIT_KINKS.get(kind, ())))
                v, _ = activation_apply(kind, u, prelu_slope=float(P[p + "prelu"][0]))
                u = v @ P[p + "W"][j] + P[p + "b"][j]
            U = u + S
        mu = U.mean(1, keepdims=True)
        N = (U - mu) / np.sqrt(((U - mu) ** 2).mean(1, keepdims=True))
        S = N * P[p + "ln_g"] + P[p + "ln_b"]
    return out


def kink_margin(params, X):
    """Per row: smallest distance from a pre-activation value to any kink."""
    margins = [np.min(np.abs(a[:, :, None] - np.asarray(k)), axis=(1, 2))
               for a, k in pre_activations(params, X) if len(k)]
    return np.min(margins, axis=0)


def perturbed_model(params, rng, scale=0.1):
    """Copy of ``params`` with noise on every entry, biases included."""
    out = params.copy()
    for name, arr in out.arrays.items():
        arr += rng.normal(0.0, scale, arr.shape)
    return out


def smooth_points(params, n, rng, margin=1e-4, max_tries=200):
    """``n`` uniform points in [-1,1]^d whose pre-activations avoid the kinks."""
    d = params.config.input_dim
    keep = []
    for _ in range(max_tries):
        X = rng.uniform(-1, 1, (4 * n, d))
        keep.extend(X[kink_margin(params, X) > margin])
        if len(keep) >= n:
            return np.array(keep[:n])
    raise RuntimeError("could not find enough smooth points")


def fd_close(fd, an, rel=1e-4, floor=1e-8):
    fd, an = np.asarray(fd), np.asarray(an)
    return np.abs(fd - an) <= rel * np.maximum(np.abs(fd), np.abs(an)) + floor


def fd_param_check(params, X, y, h=1e-5, n_probe=None, rng=None):
    """Fraction of probed parameter entries whose FD and analytic grads agree."""
    _, grads = loss_and_param_grads(params, X, y, mode="eval")
    ok = total = 0
    worst = 0.0
    for name, arr in params.arrays.items():
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if n_probe is not None and flat.size > n_probe:
            idx = rng.choice(flat.size, n_probe, replace=False)
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            lp = np.mean((forward(params, X) - y) ** 2)
            flat[i] = old - h
            lm = np.mean((forward(params, X) - y) ** 2)
            flat[i] = old
            fd = (lp - lm) / (2 * h)
            an = grads[name].reshape(-1)[i]
            good = bool(fd_close(fd, an))
            ok += good
            total += 1
            if not good:
                worst = max(worst, abs(fd - an) / max(abs(fd), abs(an)))
    return ok, total, worst


def fd_input_check(params, X, h=1e-5):
    G = grad_input(params, X)
    ok = total = 0
    for j in range(X.shape[1]):
        Xp, Xm = X.copy(), X.copy()
        Xp[:, j] += h
        Xm[:, j] -= h
        fd = (forward(params, Xp) - forward(params, Xm)) / (2 * h)
        good = fd_close(fd, G[:, j])
        ok += int(good.sum())
        total += len(good)
    return ok, total
