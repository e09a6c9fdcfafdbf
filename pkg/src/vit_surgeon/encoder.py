"""ViT image encoder with attention capture and a configurable last-block surgery point.

Three modes:

    vanilla    the standard forward pass; features are ln_post + projection
               of the final tokens.
    clearclip  blocks 0..f-1 run normally; block f swaps Query-Key scores
               for Query-Query, keeps only the attention output (no
               residual, no FFN), then ln_post + projection.
    gclip      clearclip plus (a) the last-block map replaced by the mean of
               the global-token-emerging blocks' maps and the Query-Query
               map, and (b) optional channel suppression feeding the Value
               stream.

Per-block head-averaged attention maps and the last block's per-head Value
embeddings are always captured. Token 0 is CLS; tokens 1..n are patches in
row-major patch order.

With dual-stream suppression the forward keeps two hidden states from the
suppression start block onward: the original one (queries, keys, and all
recorded attention maps) and a suppressed one that only ever feeds Value
projections. Recorded maps are therefore bit-identical to an unsuppressed
run. With dual_stream off, the suppressed weights feed everything.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import SurgeryError
from .model import ModelBundle
from .surgery import (
    FusionConfig,
    SuppressionConfig,
    SurgeryPlan,
    find_emergence_block,
    fuse_attention,
    resolve_suppression,
)
from .tensor_ops import Array, activation, layer_norm, linear, matmul, softmax_rows

_F64 = np.float64


@dataclass(frozen=True)
class EncodeMode:
    """What to run at the last block: vanilla, clearclip, or gclip.

    fusion=None under gclip skips attention fusion (the map degenerates to
    plain Query-Query); suppression=None or disabled skips channel
    suppression. Both off makes gclip bit-identical to clearclip.
    """

    variant: str = "gclip"
    fusion: FusionConfig | None = None
    suppression: SuppressionConfig | None = None

    def validate(self) -> None:
        if self.variant not in ("vanilla", "clearclip", "gclip"):
            raise ValueError(f"unknown encode variant '{self.variant}'")
        if self.variant != "gclip" and (self.fusion is not None or self.suppression is not None):
            raise ValueError("fusion/suppression configs only apply to the gclip variant")


@dataclass
class AttentionRecord:
    """Captured per-block head-averaged maps plus last-block per-head values.

    maps[i] is the Query-Key map of block i for i < f; maps[f] is whatever
    map the mode actually used at the last block (Query-Key for vanilla,
    Query-Query for clearclip, the fused map for gclip).
    """

    maps: list[Array]
    values: Array  # [heads, 1+n, width // heads]


@dataclass
class EncodeOutput:
    patch_features: Array  # [n, embed_dim]
    cls_feature: Array  # [embed_dim]
    record: AttentionRecord
    surgery: SurgeryPlan


class _Block:
    """Weight views for one transformer block."""

    def __init__(self, bundle: ModelBundle, index: int):
        if not 0 <= index < bundle.config.layers:
            raise ValueError(f"block index {index} outside 0..{bundle.config.layers - 1}")
        t = bundle.tensors
        p = f"blocks.{index}."
        self.ln1_w, self.ln1_b = t[p + "ln1.weight"], t[p + "ln1.bias"]
        self.q_w, self.q_b = t[p + "attn.q.weight"], t[p + "attn.q.bias"]
        self.k_w, self.k_b = t[p + "attn.k.weight"], t[p + "attn.k.bias"]
        self.v_w, self.v_b = t[p + "attn.v.weight"], t[p + "attn.v.bias"]
        self.proj_w, self.proj_b = t[p + "attn.proj.weight"], t[p + "attn.proj.bias"]
        self.ln2_w, self.ln2_b = t[p + "ln2.weight"], t[p + "ln2.bias"]
        self.fc1_w, self.fc1_b = t[p + "mlp.fc1.weight"], t[p + "mlp.fc1.bias"]
        self.fc2_w, self.fc2_b = t[p + "mlp.fc2.weight"], t[p + "mlp.fc2.bias"]


def _split_heads(x: Array, heads: int) -> Array:
    tokens, width = x.shape
    return x.reshape(tokens, heads, width // heads).transpose(1, 0, 2)


def _merge_heads(x: Array) -> Array:
    heads, tokens, head_dim = x.shape
    return x.transpose(1, 0, 2).reshape(tokens, heads * head_dim)


def _bmm(a: Array, b: Array) -> Array:
    return (a.astype(_F64) @ b.astype(_F64)).astype(np.float32)


def _head_scores(q: Array, k: Array) -> Array:
    """Scaled per-head attention scores [heads, T, T] (float32 pre-softmax)."""
    scale = 1.0 / math.sqrt(q.shape[-1])
    return ((q.astype(_F64) @ k.astype(_F64).transpose(0, 2, 1)) * scale).astype(np.float32)


def _head_values(x: Array, blk: _Block, heads: int, eps: float) -> Array:
    return _split_heads(linear(layer_norm(x, blk.ln1_w, blk.ln1_b, eps), blk.v_w, blk.v_b), heads)


def _attention(x: Array, blk: _Block, heads: int, eps: float, kind: str) -> tuple[Array, Array]:
    """Per-head post-softmax maps and per-head values for one block."""
    x_ln = layer_norm(x, blk.ln1_w, blk.ln1_b, eps)
    q = _split_heads(linear(x_ln, blk.q_w, blk.q_b), heads)
    k = q if kind == "qq" else _split_heads(linear(x_ln, blk.k_w, blk.k_b), heads)
    maps = softmax_rows(_head_scores(q, k))
    v = _split_heads(linear(x_ln, blk.v_w, blk.v_b), heads)
    return maps, v


def _attn_output(maps: Array, v: Array, blk: _Block) -> Array:
    return linear(_merge_heads(_bmm(maps, v)), blk.proj_w, blk.proj_b)


def _mlp(x: Array, blk: _Block, act: str, eps: float) -> Array:
    hidden = activation(linear(layer_norm(x, blk.ln2_w, blk.ln2_b, eps), blk.fc1_w, blk.fc1_b), act)
    return linear(hidden, blk.fc2_w, blk.fc2_b)


def _head_mean(maps: Array) -> Array:
    return maps.astype(_F64).mean(axis=0).astype(np.float32)


def patch_embed(image: Array, bundle: ModelBundle) -> Array:
    """Patchify + project, prepend CLS, add positions, pre-layer-norm.

    The image must be [3, S, S] at the model's native resolution, already
    normalized to the pretraining channel statistics.
    """
    cfg = bundle.config
    if image.shape != (3, cfg.image_size, cfg.image_size):
        raise ValueError(
            f"image shape {image.shape} does not match model input "
            f"(3, {cfg.image_size}, {cfg.image_size})"
        )
    g, p = cfg.grid, cfg.patch
    patches = (
        image.reshape(3, g, p, g, p).transpose(1, 3, 0, 2, 4).reshape(cfg.patch_count, 3 * p * p)
    )
    tok = linear(patches.astype(np.float32), bundle.tensors["patch_embed.weight"])
    tokens = np.concatenate([bundle.tensors["cls_token"][None, :], tok], axis=0)
    tokens = (tokens.astype(_F64) + bundle.tensors["pos_embed"].astype(_F64)).astype(np.float32)
    return layer_norm(tokens, bundle.tensors["ln_pre.weight"], bundle.tensors["ln_pre.bias"], cfg.ln_eps)


def block_forward(
    tokens: Array,
    block_index: int,
    bundle: ModelBundle,
    attn_kind: str = "qk",
    capture: bool = False,
):
    """One pre-norm block: x + MHSA(ln1(x)), then + FFN(ln2(x)).

    attn_kind "qq" replaces keys with queries in the score computation.
    With capture, also returns (head-averaged map, per-head values).
    """
    if attn_kind not in ("qk", "qq"):
        raise ValueError(f"unknown attention kind '{attn_kind}'")
    cfg = bundle.config
    blk = _Block(bundle, block_index)
    maps, v = _attention(tokens, blk, cfg.heads, cfg.ln_eps, attn_kind)
    h = tokens + _attn_output(maps, v, blk)
    out = h + _mlp(h, blk, cfg.activation, cfg.ln_eps)
    if capture:
        return out, (_head_mean(maps), v)
    return out


def _pool(tokens: Array, bundle: ModelBundle) -> tuple[Array, Array]:
    pooled = layer_norm(
        tokens, bundle.tensors["ln_post.weight"], bundle.tensors["ln_post.bias"], bundle.config.ln_eps
    )
    proj = bundle.tensors["visual_proj"]
    return matmul(pooled[1:], proj), matmul(pooled[:1], proj)[0]


def encode(image: Array, bundle: ModelBundle, mode: EncodeMode) -> EncodeOutput:
    """Full forward pass in the requested mode; see the module docstring."""
    mode.validate()
    cfg = bundle.config
    last = cfg.last_block

    sup_cfg = None
    if mode.variant == "gclip" and mode.suppression is not None and mode.suppression.enabled:
        sup_cfg = mode.suppression
    sup_start = None
    sup_bundle = None
    if sup_cfg is not None:
        sup_start, sup_bundle = resolve_suppression(bundle, sup_cfg)

    # dual-stream: attention weights stay original, values split off at sup_start;
    # single-stream ablation: the suppressed bundle feeds everything
    base = bundle
    if sup_cfg is not None and not sup_cfg.dual_stream:
        base = sup_bundle

    x = patch_embed(image, base)
    x_val = None  # suppressed twin stream (dual only), diverges at sup_start
    maps: list[Array] = []
    for i in range(last):
        blk = _Block(base, i)
        if sup_cfg is not None and sup_cfg.dual_stream and i == sup_start:
            x_val = x
        per_head, v = _attention(x, blk, cfg.heads, cfg.ln_eps, "qk")
        maps.append(_head_mean(per_head))
        if x_val is not None:
            sup_blk = _Block(sup_bundle, i)
            v_sup = _head_values(x_val, blk, cfg.heads, cfg.ln_eps)
            h_sup = x_val + _attn_output(per_head, v_sup, blk)
            x_val = h_sup + _mlp(h_sup, sup_blk, cfg.activation, cfg.ln_eps)
        h = x + _attn_output(per_head, v, blk)
        x = h + _mlp(h, blk, cfg.activation, cfg.ln_eps)

    blk = _Block(base, last)
    if sup_cfg is not None and sup_cfg.dual_stream and sup_start == last:
        x_val = x

    if mode.variant == "vanilla":
        per_head, values = _attention(x, blk, cfg.heads, cfg.ln_eps, "qk")
        maps.append(_head_mean(per_head))
        h = x + _attn_output(per_head, values, blk)
        final = h + _mlp(h, blk, cfg.activation, cfg.ln_eps)
        patch_features, cls_feature = _pool(final, bundle)
        plan = SurgeryPlan(mode="vanilla")
        return EncodeOutput(patch_features, cls_feature, AttentionRecord(maps, values), plan)

    # clearclip / gclip: Query-Query scores, no residual, no FFN
    x_ln = layer_norm(x, blk.ln1_w, blk.ln1_b, cfg.ln_eps)
    q = _split_heads(linear(x_ln, blk.q_w, blk.q_b), cfg.heads)
    qq_map = _head_mean(softmax_rows(_head_scores(q, q)))

    if x_val is not None and x_val is not x:
        values = _head_values(x_val, blk, cfg.heads, cfg.ln_eps)
    else:
        values = _split_heads(linear(x_ln, blk.v_w, blk.v_b), cfg.heads)

    emergence = None
    fused: tuple[int, ...] = ()
    fusion_variant = None
    if mode.variant == "gclip" and mode.fusion is not None:
        fcfg = mode.fusion
        fcfg.validate()
        fusion_variant = fcfg.variant
        emergence = find_emergence_block(maps, fcfg)
        if fcfg.extra_blocks >= last - emergence:
            raise SurgeryError(
                f"fusion width {fcfg.extra_blocks} too large: emergence block {emergence}, "
                f"last block {last}"
            )
        fused = tuple(range(emergence, emergence + fcfg.extra_blocks + 1))
        if fcfg.variant == "global-blocks":
            sources = [maps[j] for j in fused]
        else:
            sources = [np.broadcast_to(maps[j][0], qq_map.shape).astype(np.float32) for j in fused]
        final_map = fuse_attention(sources, qq_map)
    else:
        final_map = qq_map

    attn_out = _bmm(np.broadcast_to(final_map, values.shape[:1] + final_map.shape), values)
    z_tokens = linear(_merge_heads(attn_out), blk.proj_w, blk.proj_b)
    patch_features, cls_feature = _pool(z_tokens, bundle)
    maps.append(final_map)
    plan = SurgeryPlan(
        mode=mode.variant,
        emergence_block=emergence,
        fused_blocks=fused,
        suppress_start=sup_start,
        dual_stream=sup_cfg.dual_stream if sup_cfg is not None else None,
        fusion_variant=fusion_variant,
    )
    return EncodeOutput(patch_features, cls_feature, AttentionRecord(maps, values), plan)
