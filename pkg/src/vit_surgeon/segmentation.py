"""End-to-end open-vocabulary segmentation.

Pipeline: read a P6 image, resize its short side, normalize with the
checkpoint's channel statistics, slide model-native windows across it,
encode each window, score patches against the text bank by cosine
similarity, upsample window logits to pixels, average overlaps, argmax.
The mask goes back to the original resolution by nearest neighbor.

Windows may be encoded concurrently (VIT_SURGEON_THREADS caps the pool);
accumulation always happens in a fixed window order so results are
independent of scheduling.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .encoder import EncodeMode, encode
from .errors import DataError
from .gtf import read_gtf_file
from .model import ModelBundle
from .netpbm import read_ppm
from .surgery import SurgeryPlan, find_suppression_start
from .tensor_ops import Array, bilinear_resize, l2_normalize_rows, matmul, nearest_resize

# P5 masks store the class index in a byte and 255 is reserved for ignore
MAX_CLASSES = 255


@dataclass(frozen=True)
class TextBank:
    """L2-normalized class embeddings; row order defines label indices."""

    embeddings: Array  # [C, embed_dim], unit rows
    class_names: tuple[str, ...]
    source: str = ""

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


@dataclass(frozen=True)
class InferenceConfig:
    mode: EncodeMode
    resize_short_side: int = 336
    window: int = 224
    stride: int = 112
    # None means "use the checkpoint's stats from model.cfg"
    image_mean: tuple[float, float, float] | None = None
    image_std: tuple[float, float, float] | None = None

    def validate(self) -> None:
        if self.window < 1 or self.stride < 1 or self.resize_short_side < 1:
            raise DataError("inference config: sizes must be >= 1")
        if self.stride > self.window:
            raise DataError(
                f"inference config: stride {self.stride} exceeds window {self.window}"
            )


@dataclass
class SegmentationResult:
    logits: Array  # [H_resized, W_resized, C] averaged class scores
    mask: Array  # [H_original, W_original] uint8 argmax labels
    plans: list[SurgeryPlan] = field(repr=False)
    original_size: tuple[int, int] = (0, 0)
    resized_size: tuple[int, int] = (0, 0)


def build_text_bank(gtf_path: str | Path, classes_path: str | Path, source: str = "") -> TextBank:
    """Load "text_embeddings" from a GTF file and attach class names.

    Rows are re-normalized defensively; the class file contributes one name
    per non-empty line, in label-index order.
    """
    tensors = read_gtf_file(gtf_path)
    if "text_embeddings" not in tensors:
        raise DataError(f"no 'text_embeddings' tensor in {gtf_path}")
    emb = tensors["text_embeddings"]
    if emb.ndim != 2:
        raise DataError(f"text_embeddings must be 2-D, got shape {emb.shape}")
    names = [line.strip() for line in Path(classes_path).read_text().splitlines() if line.strip()]
    if len(names) != emb.shape[0]:
        raise DataError(
            f"class count mismatch: {len(names)} names but {emb.shape[0]} embedding rows"
        )
    if not names:
        raise DataError("class list is empty")
    if len(names) > MAX_CLASSES:
        raise DataError(f"too many classes ({len(names)}); masks store indices 0..254")
    if np.any(np.linalg.norm(emb.astype(np.float64), axis=1) == 0.0):
        raise DataError("text_embeddings contains an all-zero row")
    return TextBank(
        embeddings=l2_normalize_rows(emb), class_names=tuple(names), source=source
    )


def compute_logits(patch_features: Array, bank: TextBank, grid: tuple[int, int]) -> Array:
    """Cosine similarity of patch features against the bank, on the patch grid."""
    hp, wp = grid
    if patch_features.shape[0] != hp * wp:
        raise ValueError(
            f"{patch_features.shape[0]} patch features do not fill a {hp}x{wp} grid"
        )
    if patch_features.shape[1] != bank.embeddings.shape[1]:
        raise ValueError(
            f"embedding dim mismatch: features {patch_features.shape[1]}, "
            f"bank {bank.embeddings.shape[1]}"
        )
    sims = matmul(l2_normalize_rows(patch_features), bank.embeddings.T)
    return sims.reshape(hp, wp, bank.num_classes)


def window_starts(length: int, window: int, stride: int) -> list[int]:
    """Window offsets covering [0, length); the last one sits flush at the border."""
    if window > length:
        raise DataError(f"window {window} larger than image extent {length}")
    starts = list(range(0, length - window + 1, stride))
    if starts[-1] != length - window:
        starts.append(length - window)
    return starts


def resize_short_side(image: Array, target: int) -> Array:
    """Bilinear resize of an [h, w, c] float image so min(h, w) == target."""
    h, w = image.shape[:2]
    scale = target / min(h, w)
    out_h = max(1, round(h * scale))
    out_w = max(1, round(w * scale))
    return bilinear_resize(image, out_h, out_w)


def normalize_image(image: Array, mean, std) -> Array:
    """[h, w, 3] float image in 0..1 -> [3, h, w] standardized float32."""
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    chw = image.astype(np.float64).transpose(2, 0, 1)
    return ((chw - mean[:, None, None]) / std[:, None, None]).astype(np.float32)


def _worker_count(n_tasks: int) -> int:
    cap = os.environ.get("VIT_SURGEON_THREADS")
    if cap is None:
        workers = os.cpu_count() or 1
    else:
        try:
            workers = int(cap)
        except ValueError:
            raise DataError(f"VIT_SURGEON_THREADS must be an integer, got '{cap}'") from None
        if workers < 1:
            raise DataError(f"VIT_SURGEON_THREADS must be >= 1, got {workers}")
    return max(1, min(workers, n_tasks))


def _resolve_mode(bundle: ModelBundle, mode: EncodeMode) -> EncodeMode:
    # pin auto suppression once so every window shares the resolved plan
    sup = mode.suppression
    if mode.variant == "gclip" and sup is not None and sup.enabled and sup.start == "auto":
        start = find_suppression_start(bundle, sup)
        return replace(mode, suppression=replace(sup, start=start))
    return mode


def segment_array(image_u8: Array, bundle: ModelBundle, bank: TextBank,
                  cfg: InferenceConfig) -> SegmentationResult:
    """Sliding-window segmentation of an [h, w, 3] uint8 image."""
    cfg.validate()
    model_cfg = bundle.config
    if cfg.window != model_cfg.image_size:
        raise DataError(
            f"window {cfg.window} must equal the model input size {model_cfg.image_size}"
        )
    if bank.embeddings.shape[1] != model_cfg.embed_dim:
        raise ValueError(
            f"text bank dim {bank.embeddings.shape[1]} != model embed_dim {model_cfg.embed_dim}"
        )
    orig_h, orig_w = image_u8.shape[:2]
    resized = resize_short_side(image_u8.astype(np.float32) / 255.0, cfg.resize_short_side)
    res_h, res_w = resized.shape[:2]
    if min(res_h, res_w) < cfg.window:
        raise DataError(
            f"window {cfg.window} larger than resized image {res_h}x{res_w}"
        )
    mean = cfg.image_mean if cfg.image_mean is not None else model_cfg.image_mean
    std = cfg.image_std if cfg.image_std is not None else model_cfg.image_std
    chw = normalize_image(resized, mean, std)

    mode = _resolve_mode(bundle, cfg.mode)
    grid = (model_cfg.grid, model_cfg.grid)
    offsets = [(y, x) for y in window_starts(res_h, cfg.window, cfg.stride)
               for x in window_starts(res_w, cfg.window, cfg.stride)]

    def run_window(offset: tuple[int, int]) -> tuple[Array, SurgeryPlan]:
        y, x = offset
        out = encode(chw[:, y:y + cfg.window, x:x + cfg.window], bundle, mode)
        logits = compute_logits(out.patch_features, bank, grid)
        return bilinear_resize(logits, cfg.window, cfg.window), out.surgery

    workers = _worker_count(len(offsets))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_window, offsets))
    else:
        results = [run_window(o) for o in offsets]

    total = np.zeros((res_h, res_w, bank.num_classes), dtype=np.float64)
    count = np.zeros((res_h, res_w, 1), dtype=np.float64)
    for (y, x), (win_logits, _) in zip(offsets, results):
        total[y:y + cfg.window, x:x + cfg.window] += win_logits.astype(np.float64)
        count[y:y + cfg.window, x:x + cfg.window] += 1.0
    logits = (total / count).astype(np.float32)

    mask_resized = np.argmax(logits, axis=2).astype(np.uint8)
    mask = nearest_resize(mask_resized, orig_h, orig_w)
    return SegmentationResult(
        logits=logits,
        mask=mask,
        plans=[plan for _, plan in results],
        original_size=(orig_h, orig_w),
        resized_size=(res_h, res_w),
    )


def sliding_window_segment(image_path: str | Path, bundle: ModelBundle, bank: TextBank,
                           cfg: InferenceConfig) -> SegmentationResult:
    """Segment a P6 image file; see segment_array."""
    return segment_array(read_ppm(image_path), bundle, bank, cfg)


def prepare_classification_input(image_u8: Array, bundle: ModelBundle) -> Array:
    """Classification-style prep: short side to the model size, center crop, normalize."""
    size = bundle.config.image_size
    resized = resize_short_side(image_u8.astype(np.float32) / 255.0, size)
    h, w = resized.shape[:2]
    top, left = (h - size) // 2, (w - size) // 2
    crop = resized[top:top + size, left:left + size]
    return normalize_image(crop, bundle.config.image_mean, bundle.config.image_std)
