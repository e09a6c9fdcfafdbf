"""Training-free open-vocabulary segmentation with ViT attention surgery."""

from .encoder import AttentionRecord, EncodeMode, EncodeOutput, block_forward, encode, patch_embed
from .errors import DataError, FormatError, ModelError, SurgeryError, TruncationError, UnsupportedError
from .gtf import read_gtf, read_gtf_file, write_gtf, write_gtf_file
from .model import (
    ModelBundle,
    ModelConfig,
    generate_synthetic,
    load_model,
    load_model_dir,
    save_model_dir,
)
from .segmentation import (
    InferenceConfig,
    SegmentationResult,
    TextBank,
    build_text_bank,
    compute_logits,
    segment_array,
    sliding_window_segment,
)
from .surgery import (
    FusionConfig,
    SuppressionConfig,
    SurgeryPlan,
    apply_channel_suppression,
    detect_global_tokens,
    find_emergence_block,
    find_suppression_start,
    fuse_attention,
    fuse_cls_duplicate,
    norm_entropy,
    suppress_channel,
    weight_norms,
)

__version__ = "0.1.0"

__all__ = [
    "AttentionRecord", "EncodeMode", "EncodeOutput", "block_forward", "encode", "patch_embed",
    "DataError", "FormatError", "ModelError", "SurgeryError", "TruncationError", "UnsupportedError",
    "read_gtf", "read_gtf_file", "write_gtf", "write_gtf_file",
    "ModelBundle", "ModelConfig", "generate_synthetic", "load_model", "load_model_dir",
    "save_model_dir",
    "InferenceConfig", "SegmentationResult", "TextBank", "build_text_bank", "compute_logits",
    "segment_array", "sliding_window_segment",
    "FusionConfig", "SuppressionConfig", "SurgeryPlan", "apply_channel_suppression",
    "detect_global_tokens", "find_emergence_block", "find_suppression_start", "fuse_attention",
    "fuse_cls_duplicate", "norm_entropy", "suppress_channel", "weight_norms",
    "__version__",
]
