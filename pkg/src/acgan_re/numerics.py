"""Dense kernels with hand-written backward passes, Adam, clipping and checkpoints.

Tensors are plain float64 numpy arrays. Every forward function that is used
inside a model has a matching ``*_backward`` returning exact gradients.
"""
import struct

import numpy as np

from . import kernels

MAGIC = b"ACGRX1\n"


class DimensionError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def ensure_finite(x, what="tensor"):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite values in {what}")
    return x


# --------------------------------------------------------------------------
# affine


def affine(x, W, b):
    """y = x W + b for x of shape (n,) or (B, n)."""
    x = np.asarray(x, dtype=np.float64)
    if W.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise DimensionError(f"affine: x{tuple(x.shape)} incompatible with W{tuple(W.shape)}")
    if b.shape != (W.shape[1],):
        raise DimensionError(f"affine: b{tuple(b.shape)} incompatible with W{tuple(W.shape)}")
    return x @ W + b


def affine_backward(dy, x, W):
    """Returns (dx, dW, db)."""
    x2 = np.atleast_2d(x)
    dy2 = np.atleast_2d(dy)
    dx = dy @ W.T
    return dx, x2.T @ dy2, dy2.sum(axis=0)


# --------------------------------------------------------------------------
# LSTM cell; gate layout in W/b columns is [input, forget, output, candidate]


def lstm_step(x, h, c, W, b):
    """One LSTM step on a batch. W has shape (D + H, 4H).

    Returns ``(h2, c2, cache)``.
    """
    x = np.atleast_2d(x)
    h = np.atleast_2d(h)
    c = np.atleast_2d(c)
    H = h.shape[1]
    if c.shape != h.shape:
        raise DimensionError(f"lstm_step: h{h.shape} vs c{c.shape}")
    if W.shape != (x.shape[1] + H, 4 * H) or b.shape != (4 * H,):
        raise DimensionError(
            f"lstm_step: W{W.shape}/b{b.shape} incompatible with x{x.shape}, h{h.shape}"
        )
    xh = np.concatenate([x, h], axis=1)
    gates = np.ascontiguousarray(xh @ W + b)
    h2, c2, acts, tc2 = kernels.lstm_pointwise(gates, np.ascontiguousarray(c))
    return h2, c2, (xh, c, acts, tc2, W)


def lstm_step_backward(dh2, dc2, cache):
    """Returns (dx, dh, dc, dW, db)."""
    xh, c, acts, tc2, W = cache
    dgates, dc = kernels.lstm_pointwise_backward(
        np.ascontiguousarray(dh2), np.ascontiguousarray(dc2), c, acts, tc2
    )
    dW = xh.T @ dgates
    db = dgates.sum(axis=0)
    dxh = dgates @ W.T
    D = xh.shape[1] - c.shape[1]
    return dxh[:, :D], dxh[:, D:], dc, dW, db


# --------------------------------------------------------------------------
# softmax / cross-entropy


def softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def softmax_cross_entropy(logits, target):
    """Cross-entropy of ``softmax(logits)`` against class ``target``.

    For a 1-D ``logits`` returns ``(loss, probs)`` with a scalar loss; for a
    2-D batch ``target`` is an index array and the loss is per row. The
    gradient with respect to the logits is ``probs - onehot(target)``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    target = np.asarray(target)
    n = logits.shape[-1]
    if np.any(target < 0) or np.any(target >= n):
        raise IndexError(f"target {target} out of range for {n} classes")
    logp = log_softmax(logits)
    if logits.ndim == 1:
        return float(-logp[int(target)]), np.exp(logp)
    rows = np.arange(logits.shape[0])
    return -logp[rows, target], np.exp(logp)


def softmax_cross_entropy_backward(probs, target):
    grad = probs.copy()
    if probs.ndim == 1:
        grad[int(target)] -= 1.0
    else:
        grad[np.arange(probs.shape[0]), target] -= 1.0
    return grad


# --------------------------------------------------------------------------
# convolution and piecewise pooling


def _pads(window):
    return (window - 1) // 2, window // 2


def conv1d(x, filters, b=None):
    """Same-padded 1-D convolution.

    x: (L, D) or (B, L, D); filters: (window, D, F). Output keeps the length
    of the input. Returns the feature map; use ``conv1d_cached`` when a
    backward pass is needed.
    """
    return conv1d_cached(x, filters, b)[0]


def conv1d_cached(x, filters, b=None):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    window, D, F = filters.shape
    Bn, L, Dx = x.shape
    if Dx != D:
        raise DimensionError(f"conv1d: input dim {Dx} vs filter dim {D}")
    left, right = _pads(window)
    if L + left + right < window or L == 0:
        raise DimensionError(f"conv1d: window {window} larger than padded length {L + left + right}")
    xp = np.pad(x, ((0, 0), (left, right), (0, 0)))
    cols = np.concatenate([xp[:, k : k + L, :] for k in range(window)], axis=2)
    out = cols @ filters.reshape(window * D, F)
    if b is not None:
        out = out + b
    if single:
        out = out[0]
    return out, (cols, filters, single)


def conv1d_backward(dout, cache):
    """Returns (dx, dfilters, db) for a forward made by ``conv1d_cached``."""
    cols, filters, single = cache
    window, D, F = filters.shape
    if single:
        dout = dout[None]
    Bn, L, _ = dout.shape
    flat_dout = dout.reshape(-1, F)
    dfilters = (cols.reshape(-1, window * D).T @ flat_dout).reshape(filters.shape)
    db = flat_dout.sum(axis=0)
    dcols = dout @ filters.reshape(window * D, F).T
    left, right = _pads(window)
    dxp = np.zeros((Bn, L + left + right, D))
    for k in range(window):
        dxp[:, k : k + L, :] += dcols[:, :, k * D : (k + 1) * D]
    dx = dxp[:, left : left + L, :]
    return (dx[0] if single else dx), dfilters, db


def _check_positions(e1, e2, lengths, L):
    if np.any(e1 >= e2):
        bad = int(np.argmax(e1 >= e2))
        raise ValueError(f"entity positions must satisfy e1p < e2p (row {bad}: {e1[bad]}, {e2[bad]})")
    if np.any(e1 < 0) or np.any(e2 >= lengths) or np.any(lengths > L):
        raise ValueError("entity positions out of range")


def piecewise_max_pool_batch(features, e1, e2, lengths=None):
    """Three-segment max pooling for a batch.

    features: (B, L, F). Segments are ``[0..e1]``, ``[e1+1..e2]`` and
    ``[e2+1..len-1]``; an empty segment pools to 0. Returns
    ``(pooled (B, 3F), argmax (B, 3, F))`` with argmax -1 for empty segments.
    """
    features = np.ascontiguousarray(features, dtype=np.float64)
    B, L, F = features.shape
    e1 = np.ascontiguousarray(e1, dtype=np.int64)
    e2 = np.ascontiguousarray(e2, dtype=np.int64)
    if lengths is None:
        lengths = np.full(B, L, dtype=np.int64)
    lengths = np.ascontiguousarray(lengths, dtype=np.int64)
    _check_positions(e1, e2, lengths, L)
    pooled, arg = kernels.pool_forward(features, e1, e2, lengths)
    return pooled.reshape(B, 3 * F), arg


def piecewise_max_pool_backward(dpooled, argmax, seq_len):
    B, S, F = argmax.shape
    d = np.ascontiguousarray(dpooled, dtype=np.float64).reshape(B, S, F)
    return kernels.pool_backward(d, argmax, seq_len)


def piecewise_max_pool(features, e1p, e2p):
    """Pool a single (L, F) feature map to a flat (3F,) vector."""
    features = np.asarray(features, dtype=np.float64)
    pooled, _ = piecewise_max_pool_batch(features[None], [e1p], [e2p])
    return pooled[0]


# --------------------------------------------------------------------------
# parameters and optimisation


class ParamStore:
    """Named parameters with Adam moments and a step counter."""

    def __init__(self, params=None):
        self.params = {}
        self.m1 = {}
        self.m2 = {}
        self.t = 0
        for name, value in (params or {}).items():
            self.add(name, value)

    @classmethod
    def uniform(cls, shapes, rng, scale=0.1):
        return cls({name: rng.uniform(-scale, scale, size=shape) for name, shape in shapes.items()})

    def add(self, name, value):
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        if name == "t" or name.endswith((".m1", ".m2")):
            raise KeyError(f"reserved parameter name {name!r}")
        value = np.array(value, dtype=np.float64)
        self.params[name] = value
        self.m1[name] = np.zeros_like(value)
        self.m2[name] = np.zeros_like(value)

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def names(self):
        return list(self.params)

    def zeros(self):
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def copy(self):
        new = ParamStore()
        new.params = {k: v.copy() for k, v in self.params.items()}
        new.m1 = {k: v.copy() for k, v in self.m1.items()}
        new.m2 = {k: v.copy() for k, v in self.m2.items()}
        new.t = self.t
        return new

    def equals(self, other):
        if self.t != other.t or self.names() != other.names():
            return False
        return all(
            np.array_equal(getattr(self, a)[k], getattr(other, a)[k])
            for a in ("params", "m1", "m2")
            for k in self.params
        )


def add_grads(a, b):
    return {k: a[k] + b[k] for k in a}


def adam_step(store, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update, in place. Returns the store."""
    for name in store.params:
        if name not in grads:
            raise KeyError(f"missing gradient for parameter {name!r}")
        if grads[name].shape != store.params[name].shape:
            raise DimensionError(
                f"gradient for {name!r} has shape {grads[name].shape}, expected {store.params[name].shape}"
            )
    extra = set(grads) - set(store.params)
    if extra:
        raise KeyError(f"gradients for unknown parameters: {sorted(extra)}")
    store.t += 1
    c1 = 1.0 - beta1**store.t
    c2 = 1.0 - beta2**store.t
    for name, p in store.params.items():
        g = grads[name]
        m = store.m1[name]
        v = store.m2[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return store


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


# slack so a freshly clipped map (norm == threshold up to rounding) is left alone
_CLIP_SLACK = 1e-9


def clip_gradients(grads, threshold):
    """Rescale so the global L2 norm is at most ``threshold``."""
    if threshold <= 0:
        raise ValueError("clip threshold must be positive")
    norm = global_norm(grads)
    if norm <= threshold * (1.0 + _CLIP_SLACK):
        return dict(grads)
    scale = threshold / norm
    return {k: g * scale for k, g in grads.items()}


def check_gradients(loss_fn, store, eps=1e-5, per_param=None, rng=None, order=2):
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn(store)`` must return ``(loss, grads)`` deterministically. With
    ``per_param`` set, at most that many random entries of each parameter
    are probed. ``order=4`` uses the five-point central stencil, which
    tolerates a larger ``eps`` and so resolves very small gradients.
    """
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    loss, grads = loss_fn(store)
    if not np.isfinite(loss):
        raise NonFiniteError("loss is not finite")
    rng = rng if rng is not None else np.random.default_rng(0)
    offsets = (1,) if order == 2 else (1, 2)
    worst = 0.0
    for name, p in store.params.items():
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if per_param is not None and flat.size > per_param:
            idx = rng.choice(flat.size, size=per_param, replace=False)
        g = grads[name].reshape(-1)
        for i in idx:
            old = flat[i]
            diffs = []
            for k in offsets:
                vals = []
                for sign in (1, -1):
                    flat[i] = old + sign * k * eps
                    vals.append(loss_fn(store)[0])
                flat[i] = old
                if not np.all(np.isfinite(vals)):
                    raise NonFiniteError(f"loss not finite while probing {name}[{i}]")
                diffs.append(vals[0] - vals[1])
            if order == 2:
                num = diffs[0] / (2.0 * eps)
            else:
                num = (8.0 * diffs[0] - diffs[1]) / (12.0 * eps)
            err = abs(g[i] - num) / max(1e-8, abs(g[i]) + abs(num))
            worst = max(worst, err)
    return worst


# --------------------------------------------------------------------------
# checkpoints


def _write_tensor(fh, name, arr):
    arr = np.asarray(arr, dtype="<f8")
    raw = name.encode("utf-8")
    fh.write(struct.pack("<Q", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<Q", arr.ndim))
    for d in arr.shape:
        fh.write(struct.pack("<Q", d))
    fh.write(np.ascontiguousarray(arr).tobytes())


def save_checkpoint(path, store):
    entries = []
    for name, p in store.params.items():
        entries += [(name, p), (name + ".m1", store.m1[name]), (name + ".m2", store.m2[name])]
    entries.append(("t", np.array(float(store.t))))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(entries)))
        for name, arr in entries:
            _write_tensor(fh, name, arr)


def _read(fh, n):
    buf = fh.read(n)
    if len(buf) != n:
        raise ValueError("truncated checkpoint")
    return buf


def load_checkpoint(path):
    with open(path, "rb") as fh:
        if _read(fh, len(MAGIC)) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint (bad magic)")
        (count,) = struct.unpack("<Q", _read(fh, 8))
        tensors = {}
        for _ in range(count):
            (n,) = struct.unpack("<Q", _read(fh, 8))
            name = _read(fh, n).decode("utf-8")
            (rank,) = struct.unpack("<Q", _read(fh, 8))
            shape = struct.unpack(f"<{rank}Q", _read(fh, 8 * rank)) if rank else ()
            size = int(np.prod(shape)) if rank else 1
            data = np.frombuffer(_read(fh, 8 * size), dtype="<f8").astype(np.float64)
            tensors[name] = data.reshape(shape)
    store = ParamStore()
    for name, arr in tensors.items():
        if name == "t" or name.endswith((".m1", ".m2")):
            continue
        store.add(name, arr)
        store.m1[name] = tensors[name + ".m1"].copy()
        store.m2[name] = tensors[name + ".m2"].copy()
    store.t = int(tensors["t"])
    return store
