"""Attention-map surgery: global-token detection and fusion, and FFN channel suppression.

Two mechanisms live here. The first detects "global tokens" (patch columns
that every query attends to) in per-block attention maps and averages the
maps of the blocks where they emerge into the last block's Query-Query
attention. The second finds transformer blocks whose FFN down-projection
has one output channel with an outsized weight norm and rescales that row
to the mean norm of the others.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import SurgeryError
from .model import ModelBundle, replace_tensors
from .tensor_ops import Array

# Log-space floor for the detection score: a column survives iff the product
# of its scaled attention weights stays above the smallest positive normal
# float32, i.e. iff the sum of logs stays above ln(2^-126) ~ -87.336.
DETECT_THRESHOLD = float(np.log(np.float64(np.finfo(np.float32).tiny)))


@dataclass(frozen=True)
class FusionConfig:
    """Attention-map fusion parameters.

    extra_blocks is how many blocks after the first emerging one join the
    fusion (the fused set has extra_blocks + 1 source maps). The scale
    multiplies attention weights before the product test; detect_threshold
    is the log-space survival floor.
    """

    extra_blocks: int = 1
    scale: float = 100.0
    detect_threshold: float = DETECT_THRESHOLD
    variant: str = "global-blocks"  # or "cls-duplicate"
    manual_emergence: int | None = None

    def validate(self) -> None:
        if self.extra_blocks < 0:
            raise SurgeryError(f"fusion width must be non-negative, got {self.extra_blocks}")
        if self.scale <= 0:
            raise SurgeryError(f"detection scale must be positive, got {self.scale}")
        if self.variant not in ("global-blocks", "cls-duplicate"):
            raise SurgeryError(f"unknown fusion variant '{self.variant}'")


@dataclass(frozen=True)
class SuppressionConfig:
    """Channel-suppression parameters.

    start is "auto" (first block whose fc2 norm entropy drops below
    entropy_threshold) or an explicit block index. With dual_stream the
    suppressed weights feed only the Value projections; queries, keys and
    attention maps keep seeing the unsuppressed stream.
    """

    enabled: bool = True
    start: int | str = "auto"
    entropy_threshold: float = 0.7
    dual_stream: bool = True

    def validate(self) -> None:
        if self.start != "auto" and int(self.start) < 0:
            raise SurgeryError(f"suppression start must be >= 0 or 'auto', got {self.start}")
        if not 0.0 < self.entropy_threshold < 1.0:
            raise SurgeryError(
                f"entropy threshold must lie in (0, 1), got {self.entropy_threshold}"
            )


@dataclass(frozen=True)
class SurgeryPlan:
    """Resolved surgery parameters actually used by one encode call."""

    mode: str
    emergence_block: int | None = None
    fused_blocks: tuple[int, ...] = ()
    suppress_start: int | None = None
    dual_stream: bool | None = None
    fusion_variant: str | None = None


def global_token_scores(attn: Array, scale: float = 100.0) -> Array:
    """Per-patch-column log-space survival scores.

    For patch column c, S(c) = sum over patch-query rows j of
    ln(scale * attn[j, c]). The CLS row and column (index 0) are excluded.
    Zero attention entries contribute -inf, so such a column can never win.
    """
    if attn.ndim != 2 or attn.shape[0] != attn.shape[1]:
        raise ValueError(f"attention map must be square, got shape {attn.shape}")
    patch = attn[1:, 1:].astype(np.float64)
    with np.errstate(divide="ignore"):
        logs = np.log(scale * patch)
    return logs.sum(axis=0)


def detect_global_tokens(attn: Array, cfg: FusionConfig) -> tuple[bool, list[int]]:
    """Which patch columns of one attention map are global.

    Returns (any_global, patch column indices 0..n-1); token index in the
    map is patch index + 1.
    """
    cfg.validate()
    scores = global_token_scores(attn, cfg.scale)
    columns = np.nonzero(scores > cfg.detect_threshold)[0]
    return bool(columns.size), [int(c) for c in columns]


def find_emergence_block(maps: Sequence[Array], cfg: FusionConfig) -> int:
    """Smallest block index whose map contains a global token.

    `maps` must hold the Query-Key maps of blocks 0..f-1 in order. A manual
    override in the config wins over detection.
    """
    cfg.validate()
    if cfg.manual_emergence is not None:
        g = int(cfg.manual_emergence)
        if not 0 <= g < len(maps):
            raise SurgeryError(f"manual emergence block {g} outside blocks 0..{len(maps) - 1}")
        return g
    for i, attn in enumerate(maps):
        found, _ = detect_global_tokens(attn, cfg)
        if found:
            return i
    raise SurgeryError("no global tokens detected in any block")


def fuse_attention(maps: Sequence[Array], qq_map: Array) -> Array:
    """Elementwise mean of the source maps and the Query-Query map.

    A convex combination of row-stochastic maps, so the output is
    row-stochastic too. An empty source list returns the Query-Query map.
    """
    total = qq_map.astype(np.float64)
    for m in maps:
        if m.shape != qq_map.shape:
            raise ValueError(f"fusion map shape {m.shape} != {qq_map.shape}")
        total = total + m.astype(np.float64)
    return (total / (len(maps) + 1)).astype(np.float32)


def fuse_cls_duplicate(cls_row: Array, qq_map: Array) -> Array:
    """Fusion variant that tiles a CLS attention row into a full map first."""
    cls_row = np.asarray(cls_row)
    if cls_row.ndim != 1 or cls_row.shape[0] != qq_map.shape[1]:
        raise ValueError(f"CLS row length {cls_row.shape} does not match map {qq_map.shape}")
    tiled = np.broadcast_to(cls_row, qq_map.shape).astype(np.float32)
    return fuse_attention([tiled], qq_map)


def weight_norms(weight: Array) -> Array:
    """Euclidean norm of each output channel (row) of a weight matrix."""
    if weight.ndim != 2:
        raise ValueError(f"weight_norms expects a 2-D matrix, got shape {weight.shape}")
    return np.linalg.norm(weight.astype(np.float64), axis=1).astype(np.float32)


def norm_entropy(norms: Array) -> float:
    """Entropy of the norm distribution, normalized to [0, 1] by ln(D_out)."""
    norms = np.asarray(norms, dtype=np.float64)
    if norms.ndim != 1 or norms.size < 2:
        raise ValueError(f"norm_entropy needs a 1-D vector of >= 2 norms, got shape {norms.shape}")
    if np.any(norms < 0):
        raise ValueError("norm_entropy: norms must be non-negative")
    total = norms.sum()
    if total == 0.0:
        raise ValueError("norm_entropy: all norms are zero")
    p = norms / total
    nz = p[p > 0.0]
    return float(-(nz * np.log(nz)).sum() / np.log(norms.size))


def channel_rescale_factor(weight: Array) -> tuple[int, float]:
    """Dominant channel index and the factor suppression would apply to it.

    The dominant channel is the argmax-norm row (smallest index on ties);
    the factor is mean-of-other-norms / its own norm.
    """
    if weight.ndim != 2 or weight.shape[0] < 2:
        raise ValueError(f"need a 2-D matrix with >= 2 rows, got shape {weight.shape}")
    norms = np.linalg.norm(weight.astype(np.float64), axis=1)
    top = int(np.argmax(norms))
    if norms[top] == 0.0:
        raise ValueError("cannot suppress an all-zero weight matrix")
    others_mean = (norms.sum() - norms[top]) / (norms.size - 1)
    return top, float(others_mean / norms[top])


def suppress_channel(weight: Array) -> Array:
    """Rescale the highest-norm output row to the mean norm of the others.

    Exactly one row changes; its direction is preserved. All other rows are
    returned bit-identical.
    """
    top, factor = channel_rescale_factor(weight)
    out = np.array(weight, dtype=np.float32, copy=True)
    out[top] = (weight[top].astype(np.float64) * factor).astype(np.float32)
    return out


def find_suppression_start(bundle: ModelBundle, cfg: SuppressionConfig) -> int:
    """First block whose fc2 norm entropy collapses below the threshold."""
    cfg.validate()
    last = bundle.config.last_block
    if cfg.start != "auto":
        s = int(cfg.start)
        if not 0 <= s <= last:
            raise SurgeryError(f"suppression start {s} outside blocks 0..{last}")
        return s
    for i in range(bundle.config.layers):
        entropy = norm_entropy(weight_norms(bundle.tensors[f"blocks.{i}.mlp.fc2.weight"]))
        if entropy < cfg.entropy_threshold:
            return i
    raise SurgeryError(
        "no entropy collapse detected below threshold "
        f"{cfg.entropy_threshold}; pass an explicit suppression start"
    )


def apply_channel_suppression(bundle: ModelBundle, cfg: SuppressionConfig) -> ModelBundle:
    """New bundle with fc2 weights suppressed from the start block to the last.

    The input bundle is never mutated; a disabled config returns it as-is.
    How the suppressed bundle is wired into a forward pass (dual-stream or
    not) is the encoder's contract, not this function's.
    """
    if not cfg.enabled:
        return bundle
    start = find_suppression_start(bundle, cfg)
    updates = {}
    for i in range(start, bundle.config.layers):
        name = f"blocks.{i}.mlp.fc2.weight"
        updates[name] = suppress_channel(bundle.tensors[name])
    return replace_tensors(bundle, updates)


def resolve_suppression(bundle: ModelBundle, cfg: SuppressionConfig) -> tuple[int, ModelBundle]:
    """Resolve the start block once and build the suppressed twin bundle."""
    start = find_suppression_start(bundle, cfg)
    return start, apply_channel_suppression(bundle, replace(cfg, start=start))
