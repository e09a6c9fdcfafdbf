"""Class text-embedding banks from a CLIP text tower.

Per class: instantiate every template with the class name, encode each
prompt, mean-pool the (L2-normalized) prompt embeddings, and L2-normalize
the pooled vector. The bank ships as a GTF file with one [C, embed_dim]
tensor named "text_embeddings".

Text encoding goes through the transformers ecosystem; state-dict-only
checkpoints have no tokenizer, so point this at the matching Hugging Face
model (e.g. the official hub mirror of the OpenAI release).
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .gtf import write_gtf_file
from .templates import ENSEMBLE_TEMPLATES, SINGLE_TEMPLATE


def read_class_names(path: str | Path) -> list[str]:
    names = [line.strip() for line in Path(path).read_text().splitlines() if line.strip()]
    if not names:
        raise ValueError(f"class list {path} is empty")
    return names


def _encode_prompts(model, tokenizer, prompts: Sequence[str]) -> np.ndarray:
    import torch

    max_length = getattr(model.config.text_config, "max_position_embeddings", 77)
    enc = tokenizer(list(prompts), padding="max_length", truncation=True,
                    max_length=max_length, return_tensors="pt")
    with torch.no_grad():
        out = model.get_text_features(input_ids=enc.input_ids,
                                      attention_mask=enc.attention_mask)
    if not isinstance(out, torch.Tensor):  # transformers >= 5 returns a ModelOutput
        out = out.pooler_output
    return out.to(torch.float64).cpu().numpy()


def build_text_bank(model, tokenizer, class_names: Sequence[str],
                    templates: Sequence[str]) -> np.ndarray:
    """[C, embed_dim] float32 matrix of unit-norm class embeddings."""
    rows = []
    for name in class_names:
        if not name.strip():
            raise ValueError("empty class name")
        prompts = [template.format(name) for template in templates]
        emb = _encode_prompts(model, tokenizer, prompts)
        emb = emb / np.linalg.norm(emb, axis=1, keepdims=True)
        pooled = emb.mean(axis=0)
        rows.append(pooled / np.linalg.norm(pooled))
    return np.stack(rows).astype(np.float32)


def export_text_bank(source: str, classes_path: str | Path, out_path: str | Path,
                     template_set: str = "ensemble") -> np.ndarray:
    """Encode a class list with a checkpoint's text tower and write the bank GTF."""
    from transformers import AutoTokenizer, CLIPModel

    if template_set == "ensemble":
        templates = ENSEMBLE_TEMPLATES
    elif template_set == "single":
        templates = SINGLE_TEMPLATE
    else:
        raise ValueError(f"unknown template set '{template_set}'")
    model = CLIPModel.from_pretrained(source)
    model.eval()
    tokenizer = AutoTokenizer.from_pretrained(source)
    bank = build_text_bank(model, tokenizer, read_class_names(classes_path), templates)
    write_gtf_file(out_path, {"text_embeddings": bank})
    return bank
