"""Pure numpy implementations of the hot kernels.

Mirrors ``_ckernels.pyx`` entry for entry; used when the extension is not
built or when ``ACGAN_RE_KERNELS=python``.
"""
import numpy as np
from scipy.special import expit


def pool_forward(features, e1, e2, lengths):
    B, L, F = features.shape
    idx = np.arange(L)[None, :]
    e1 = e1[:, None]
    e2 = e2[:, None]
    lengths = lengths[:, None]
    masks = np.stack([idx <= e1, (idx > e1) & (idx <= e2), (idx > e2) & (idx < lengths)], axis=1)
    masked = np.where(masks[..., None], features[:, None, :, :], -np.inf)
    arg = masked.argmax(axis=2)
    pooled = np.take_along_axis(masked, arg[:, :, None, :], axis=2)[:, :, 0, :]
    empty = ~masks.any(axis=2)
    pooled[empty] = 0.0
    arg[empty] = -1
    return pooled, arg.astype(np.int64)


def pool_backward(dpooled, argmax, seq_len):
    B, S, F = dpooled.shape
    dfeat = np.zeros((B, seq_len, F))
    b, s, f = np.nonzero(argmax >= 0)
    np.add.at(dfeat, (b, argmax[b, s, f], f), dpooled[b, s, f])
    return dfeat


def lstm_pointwise(gates, c):
    H = c.shape[1]
    acts = np.empty_like(gates)
    acts[:, : 3 * H] = expit(gates[:, : 3 * H])
    acts[:, 3 * H :] = np.tanh(gates[:, 3 * H :])
    i, f, o, g = acts[:, :H], acts[:, H : 2 * H], acts[:, 2 * H : 3 * H], acts[:, 3 * H :]
    c2 = f * c + i * g
    tc2 = np.tanh(c2)
    h2 = o * tc2
    return h2, c2, acts, tc2


def lstm_pointwise_backward(dh2, dc2, c, acts, tc2):
    H = c.shape[1]
    i, f, o, g = acts[:, :H], acts[:, H : 2 * H], acts[:, 2 * H : 3 * H], acts[:, 3 * H :]
    dct = dc2 + dh2 * o * (1.0 - tc2 * tc2)
    dgates = np.empty_like(acts)
    dgates[:, :H] = dct * g * i * (1.0 - i)
    dgates[:, H : 2 * H] = dct * c * f * (1.0 - f)
    dgates[:, 2 * H : 3 * H] = dh2 * tc2 * o * (1.0 - o)
    dgates[:, 3 * H :] = dct * i * (1.0 - g * g)
    return dgates, dct * f


def sample_categorical(probs, u):
    cdf = np.cumsum(probs, axis=1)
    target = u * cdf[:, -1]
    hit = cdf > target[:, None]
    ids = hit.argmax(axis=1)
    # u*total can round up to total; fall back to the last nonzero entry
    miss = ~hit[np.arange(len(ids)), ids]
    if miss.any():
        nz = probs[miss] > 0
        ids[miss] = probs.shape[1] - 1 - nz[:, ::-1].argmax(axis=1)
    return ids.astype(np.int64)
