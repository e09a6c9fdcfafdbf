"""Offline exporters feeding the vit-surgeon engine's file formats."""

from .datasets import convert_generic, convert_voc
from .text import build_text_bank, export_text_bank
from .visual import VisualConfig, convert_hf_model, convert_state_dict, export_visual

__version__ = "0.1.0"

__all__ = [
    "VisualConfig", "convert_hf_model", "convert_state_dict", "export_visual",
    "build_text_bank", "export_text_bank",
    "convert_generic", "convert_voc",
    "__version__",
]
