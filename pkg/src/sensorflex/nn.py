"""Differentiable layer kernels.

Arrays are contiguous float64 ndarrays. Every forward returns (output, cache)
and has a matching hand-written backward that consumes the cache; there is no
autodiff graph. Reductions run through numpy with a fixed evaluation order,
so repeated calls on identical inputs are bit-identical.
"""

import numpy as np
from scipy.special import erf, expit

from .errors import DimensionError, NumericError

INV_SQRT2 = 1.0 / np.sqrt(2.0)
INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def as_f64(x) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(x, dtype=np.float64))


def check_finite(x: np.ndarray, what: str = "tensor"):
    if not np.isfinite(x).all():
        raise NumericError(f"non-finite values in {what}")


# ---------------------------------------------------------------------------
# matmul

def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with explicit shape validation."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else -1]:
        raise DimensionError(f"matmul shapes {a.shape} x {b.shape} do not agree")
    return a @ b


# ---------------------------------------------------------------------------
# linear: y = x @ w + b  (x: [..., n_in], w: [n_in, n_out], b: [n_out])

def linear_fwd(x, w, b):
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear: input dim {x.shape[-1]} != weight rows {w.shape[0]}")
    y = x @ w + b
    return y, (x, w)


def linear_bwd(grad_out, cache):
    x, w = cache
    if grad_out.shape != x.shape[:-1] + (w.shape[1],):
        raise DimensionError(f"linear backward: grad shape {grad_out.shape} mismatch")
    x2 = x.reshape(-1, x.shape[-1])
    g2 = grad_out.reshape(-1, grad_out.shape[-1])
    grad_x = (grad_out @ w.T).reshape(x.shape)
    grad_w = x2.T @ g2
    grad_b = g2.sum(axis=0)
    return grad_x, grad_w, grad_b


# ---------------------------------------------------------------------------
# layer normalization over the last axis

def layernorm_fwd(x, gamma, beta, eps=1e-5):
    if x.shape[-1] != gamma.shape[0] or gamma.shape != beta.shape:
        raise DimensionError("layernorm: gamma/beta must match the feature axis")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = gamma * xhat + beta
    return y, (xhat, inv, gamma)


def layernorm_bwd(grad_out, cache):
    xhat, inv, gamma = cache
    g = grad_out * gamma
    grad_gamma = (grad_out * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
    grad_beta = grad_out.reshape(-1, xhat.shape[-1]).sum(axis=0)
    m1 = g.mean(axis=-1, keepdims=True)
    m2 = (g * xhat).mean(axis=-1, keepdims=True)
    grad_x = inv * (g - m1 - xhat * m2)
    return grad_x, grad_gamma, grad_beta


# ---------------------------------------------------------------------------
# GELU, exact erf form

def gelu_fwd(x):
    cdf = 0.5 * (1.0 + erf(x * INV_SQRT2))
    y = x * cdf
    return y, (x, cdf)


def gelu_bwd(grad_out, cache):
    x, cdf = cache
    pdf = np.exp(-0.5 * x * x) * INV_SQRT_2PI
    return grad_out * (cdf + x * pdf)


# ---------------------------------------------------------------------------
# sigmoid

def sigmoid_fwd(x):
    s = expit(x)
    return s, (s,)


def sigmoid_bwd(grad_out, cache):
    (s,) = cache
    return grad_out * s * (1.0 - s)


# ---------------------------------------------------------------------------
# softmax over the last axis

def softmax_fwd(z):
    zmax = z.max(axis=-1, keepdims=True)
    e = np.exp(z - zmax)
    s = e / e.sum(axis=-1, keepdims=True)
    return s, (s,)


def softmax_bwd(grad_out, cache):
    (s,) = cache
    dot = (grad_out * s).sum(axis=-1, keepdims=True)
    return s * (grad_out - dot)


# ---------------------------------------------------------------------------
# multi-head self-attention over a token sequence
#
# x: [..., n, d] with any number of leading batch axes. Weights are a dict
# with wq/bq, wk, wv/bv, wo/bo. The key projection carries no bias: softmax
# rows are invariant to a constant shift, so a key bias cannot affect the
# output and its gradient would be identically zero.

def _split_heads(x, n_heads):
    *lead, n, d = x.shape
    dh = d // n_heads
    x = x.reshape(*lead, n, n_heads, dh)
    return np.moveaxis(x, -2, -3)  # [..., h, n, dh]


def _merge_heads(x):
    *lead, h, n, dh = x.shape
    x = np.moveaxis(x, -3, -2)  # [..., n, h, dh]
    return np.ascontiguousarray(x).reshape(*lead, n, h * dh)


def attention_fwd(x, weights, n_heads):
    d = x.shape[-1]
    if d % n_heads != 0:
        raise DimensionError(f"attention: d_model {d} not divisible by {n_heads} heads")
    if x.ndim < 2 or x.shape[-2] < 1:
        raise DimensionError("attention: need at least one token")
    q, cq = linear_fwd(x, weights["wq"], weights["bq"])
    k = x @ weights["wk"]
    ck = (x, weights["wk"])
    v, cv = linear_fwd(x, weights["wv"], weights["bv"])
    qh = _split_heads(q, n_heads)
    kh = _split_heads(k, n_heads)
    vh = _split_heads(v, n_heads)
    scale = 1.0 / np.sqrt(d // n_heads)
    scores = (qh @ np.swapaxes(kh, -1, -2)) * scale
    attn, cs = softmax_fwd(scores)
    ctx = attn @ vh
    merged = _merge_heads(ctx)
    y, co = linear_fwd(merged, weights["wo"], weights["bo"])
    cache = (cq, ck, cv, qh, kh, vh, attn, cs, co, scale, n_heads)
    return y, cache


def attention_bwd(grad_out, cache):
    """Returns (grad_x, grads) with grads keyed like the weight dict."""
    cq, ck, cv, qh, kh, vh, attn, cs, co, scale, n_heads = cache
    grads = {}
    g_merged, grads["wo"], grads["bo"] = linear_bwd(grad_out, co)
    g_ctx = _split_heads(g_merged, n_heads)
    g_attn = g_ctx @ np.swapaxes(vh, -1, -2)
    g_vh = np.swapaxes(attn, -1, -2) @ g_ctx
    g_scores = softmax_bwd(g_attn, cs) * scale
    g_qh = g_scores @ kh
    g_kh = np.swapaxes(g_scores, -1, -2) @ qh
    gq = _merge_heads(g_qh)
    gk = _merge_heads(g_kh)
    gv = _merge_heads(g_vh)
    gx_q, grads["wq"], grads["bq"] = linear_bwd(gq, cq)
    xk, wk = ck
    grads["wk"] = xk.reshape(-1, xk.shape[-1]).T @ gk.reshape(-1, gk.shape[-1])
    gx_k = gk @ wk.T
    gx_v, grads["wv"], grads["bv"] = linear_bwd(gv, cv)
    grad_x = gx_q + gx_k + gx_v
    return grad_x, grads
