"""Analysis utilities: entropy profiles, attention alignment, value-embedding
similarity, and global-token classification agreement.

These back the `diagnose` CLI subcommand, which writes plot-ready CSV plus a
text summary; plotting itself is left to external tools.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .encoder import AttentionRecord, EncodeMode, encode
from .errors import SurgeryError
from .model import ModelBundle
from .segmentation import TextBank
from .surgery import FusionConfig, detect_global_tokens, find_emergence_block, global_token_scores, norm_entropy, weight_norms
from .tensor_ops import Array, l2_normalize_rows, linear


def entropy_profile(bundle: ModelBundle) -> list[tuple[int, float]]:
    """Normalized fc2 weight-norm entropy per block, in block order."""
    return [
        (i, norm_entropy(weight_norms(bundle.tensors[f"blocks.{i}.mlp.fc2.weight"])))
        for i in range(bundle.config.layers)
    ]


def attention_alignment(record: AttentionRecord, token_index: int, block_index: int) -> float:
    """Cosine between one patch token's attention row and the CLS row."""
    attn = record.maps[block_index]
    if not 1 <= token_index < attn.shape[0]:
        raise ValueError(f"token index {token_index} outside patch tokens 1..{attn.shape[0] - 1}")
    a = attn[token_index].astype(np.float64)
    b = attn[0].astype(np.float64)
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    return float(a @ b / denom) if denom else 0.0


def _patch_vectors(values: Array, projection: tuple[Array, Array] | None) -> Array:
    # head-concatenated value vectors per patch token (CLS row dropped)
    heads, tokens, head_dim = values.shape
    vecs = values.transpose(1, 0, 2).reshape(tokens, heads * head_dim)[1:]
    if projection is not None:
        vecs = linear(vecs, projection[0], projection[1])
    return vecs


def value_similarity_report(
    values: Array,
    regions: Sequence[int],
    statistic: str = "pairwise",
    projection: tuple[Array, Array] | None = None,
) -> tuple[float, float]:
    """Mean cosine similarity within regions (in-in) and across regions (in-out).

    `values` are the captured last-block per-head value embeddings,
    `regions` one region id per patch token; ids < 0 exclude a token.
    The default statistic averages uniformly over token pairs; "centroid"
    compares each token against region centroids instead. Passing the
    attention output projection computes the post-projection variant.
    """
    if statistic not in ("pairwise", "centroid"):
        raise ValueError(f"unknown statistic '{statistic}'")
    vecs = _patch_vectors(values, projection)
    region_ids = np.asarray(list(regions), dtype=np.int64)
    if region_ids.shape[0] != vecs.shape[0]:
        raise ValueError(
            f"{region_ids.shape[0]} region labels for {vecs.shape[0]} patch tokens"
        )
    keep = region_ids >= 0
    vecs, region_ids = vecs[keep], region_ids[keep]
    if np.unique(region_ids).size < 2:
        raise ValueError("in-out similarity undefined: fewer than 2 regions")
    unit = l2_normalize_rows(vecs).astype(np.float64)
    if statistic == "centroid":
        labels = np.unique(region_ids)
        centroids = l2_normalize_rows(
            np.stack([unit[region_ids == r].mean(axis=0) for r in labels]).astype(np.float32)
        ).astype(np.float64)
        sims = unit @ centroids.T  # [tokens, regions]
        own = region_ids[:, None] == labels[None, :]
        return float(sims[own].mean()), float(sims[~own].mean())
    sims = unit @ unit.T
    same = region_ids[:, None] == region_ids[None, :]
    iu = np.triu_indices(len(region_ids), k=1)
    in_mask = same[iu]
    if not in_mask.any():
        raise ValueError("in-in similarity undefined: every region has a single token")
    pair_sims = sims[iu]
    return float(pair_sims[in_mask].mean()), float(pair_sims[~in_mask].mean())


def _pick_global_token(record: AttentionRecord, fusion: FusionConfig) -> tuple[int, list[int]]:
    """Emergence-block global columns; returns (strongest column, all columns)."""
    maps = record.maps[:-1]
    g = find_emergence_block(maps, fusion)
    _, columns = detect_global_tokens(maps[g], fusion)
    scores = global_token_scores(maps[g], fusion.scale)
    best = max(columns, key=lambda c: scores[c])
    return best, columns


def token_cls_agreement(
    bundle: ModelBundle,
    bank: TextBank,
    images: Sequence[Array],
    token_choice: str = "global",
    seed: int = 0,
    fusion: FusionConfig | None = None,
) -> tuple[float, list[dict]]:
    """How often a chosen patch token classifies like the CLS token.

    Each image runs through the vanilla encoder; the CLS feature's nearest
    bank class serves as reference. token_choice "global" takes the
    strongest global token (surgery error when none exists), "random" a
    seeded draw from the non-global patch tokens.
    """
    if token_choice not in ("global", "random"):
        raise ValueError(f"unknown token choice '{token_choice}'")
    fusion = fusion if fusion is not None else FusionConfig()
    rng = np.random.default_rng(seed)
    rows: list[dict] = []
    hits = 0
    for index, image in enumerate(images):
        out = encode(image, bundle, EncodeMode(variant="vanilla"))
        cls_class = int(np.argmax(l2_normalize_rows(out.cls_feature[None, :]) @ bank.embeddings.T))
        if token_choice == "global":
            token, _ = _pick_global_token(out.record, fusion)
        else:
            try:
                _, columns = _pick_global_token(out.record, fusion)
            except SurgeryError:
                columns = []
            pool = np.setdiff1d(np.arange(out.patch_features.shape[0]), np.asarray(columns, dtype=np.int64))
            if pool.size == 0:  # tiny-model degeneracy: every patch is "global"
                pool = np.arange(out.patch_features.shape[0])
            token = int(rng.choice(pool))
        token_class = int(
            np.argmax(l2_normalize_rows(out.patch_features[token][None, :]) @ bank.embeddings.T)
        )
        agree = cls_class == token_class
        hits += agree
        rows.append(
            {"image": index, "token": int(token), "cls_class": cls_class,
             "token_class": token_class, "agree": bool(agree)}
        )
    if not rows:
        raise ValueError("token_cls_agreement needs at least one image")
    return hits / len(rows), rows
