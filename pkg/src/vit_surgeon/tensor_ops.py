"""Dense float32 tensor primitives underneath the inference engine.

Every operation is a pure function over numpy arrays: accumulation happens
in float64, results are rounded back to float32. That keeps outputs
reproducible at the cost of raw speed, which is the right trade at desk
scale.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

Array = np.ndarray

_F32 = np.float32
_F64 = np.float64


def matmul(a: Array, b: Array) -> Array:
    """Matrix product of two 2-D arrays with float64 accumulation."""
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dimensions disagree: {a.shape} x {b.shape}")
    return (a.astype(_F64) @ b.astype(_F64)).astype(_F32)


def linear(x: Array, weight: Array, bias: Array | None = None) -> Array:
    """Affine map x @ weight.T + bias, with weight in [out, in] layout."""
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"linear: input dim {x.shape[-1]} != weight in-dim {weight.shape[1]}")
    out = x.astype(_F64) @ weight.astype(_F64).T
    if bias is not None:
        out += bias.astype(_F64)
    return out.astype(_F32)


def softmax_rows(x: Array) -> Array:
    """Softmax along the last axis, stabilized by per-row max subtraction."""
    x64 = x.astype(_F64)
    x64 = x64 - x64.max(axis=-1, keepdims=True)
    e = np.exp(x64)
    return (e / e.sum(axis=-1, keepdims=True)).astype(_F32)


def layer_norm(x: Array, gamma: Array, beta: Array, eps: float = 1e-5) -> Array:
    """Per-row standardization (population variance, eps inside sqrt) then affine."""
    if eps <= 0:
        raise ValueError(f"layer_norm: eps must be positive, got {eps}")
    x64 = x.astype(_F64)
    mu = x64.mean(axis=-1, keepdims=True)
    var = x64.var(axis=-1, keepdims=True)
    y = (x64 - mu) / np.sqrt(var + eps)
    return (y * gamma.astype(_F64) + beta.astype(_F64)).astype(_F32)


def activation(x: Array, kind: str = "quick-gelu") -> Array:
    """FFN nonlinearity: quick-gelu is x*sigmoid(1.702x), exact-gelu the Gaussian CDF form."""
    x64 = np.asarray(x).astype(_F64)
    if kind == "quick-gelu":
        with np.errstate(over="ignore"):
            y = x64 / (1.0 + np.exp(-1.702 * x64))
    elif kind == "exact-gelu":
        y = 0.5 * x64 * (1.0 + erf(x64 / np.sqrt(2.0)))
    else:
        raise ValueError(f"unknown activation kind '{kind}'")
    return y.astype(_F32)


def l2_normalize_rows(x: Array) -> Array:
    """Scale each row to unit L2 norm; all-zero rows pass through unchanged."""
    x64 = x.astype(_F64)
    norms = np.linalg.norm(x64, axis=-1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return (x64 / norms).astype(_F32)


def _axis_coords(in_len: int, out_len: int) -> tuple[Array, Array, Array]:
    # half-pixel centers: src = (dst + 0.5) * in/out - 0.5, clamped to the grid
    src = (np.arange(out_len, dtype=_F64) + 0.5) * (in_len / out_len) - 0.5
    src = np.clip(src, 0.0, in_len - 1.0)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, in_len - 1)
    return lo, hi, src - lo


def bilinear_resize(x: Array, out_h: int, out_w: int) -> Array:
    """Resample an [h, w, c] array on the half-pixel-center grid."""
    if x.ndim != 3:
        raise ValueError(f"bilinear_resize expects [h, w, c], got shape {x.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bilinear_resize: output size must be >= 1, got {out_h}x{out_w}")
    r0, r1, rf = _axis_coords(x.shape[0], out_h)
    c0, c1, cf = _axis_coords(x.shape[1], out_w)
    x64 = x.astype(_F64)
    cf = cf[None, :, None]
    top = x64[r0][:, c0] * (1.0 - cf) + x64[r0][:, c1] * cf
    bot = x64[r1][:, c0] * (1.0 - cf) + x64[r1][:, c1] * cf
    rf = rf[:, None, None]
    return (top * (1.0 - rf) + bot * rf).astype(_F32)


def nearest_resize(x: Array, out_h: int, out_w: int) -> Array:
    """Nearest-neighbor resample of a 2-D array (used for label/mask grids)."""
    if x.ndim != 2:
        raise ValueError(f"nearest_resize expects a 2-D array, got shape {x.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"nearest_resize: output size must be >= 1, got {out_h}x{out_w}")

    def pick(in_len: int, out_len: int) -> Array:
        src = (np.arange(out_len, dtype=_F64) + 0.5) * (in_len / out_len) - 0.5
        return np.clip(np.floor(src + 0.5), 0, in_len - 1).astype(np.int64)

    return x[np.ix_(pick(x.shape[0], out_h), pick(x.shape[1], out_w))]
