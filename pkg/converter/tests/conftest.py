import os
import string

import pytest

os.environ.setdefault("HF_HUB_OFFLINE", "1")
os.environ.setdefault("TRANSFORMERS_OFFLINE", "1")

import torch
from transformers import CLIPConfig, CLIPModel, CLIPTokenizer


def build_char_tokenizer() -> CLIPTokenizer:
    """Character-level CLIP BPE tokenizer (no merges), built offline."""
    chars = [c for c in string.printable if not c.isspace()]
    vocab, idx = {}, 0
    for c in chars:
        vocab[c] = idx
        idx += 1
    for c in chars:
        vocab[c + "</w>"] = idx
        idx += 1
    vocab["<|startoftext|>"] = idx
    vocab["<|endoftext|>"] = idx + 1
    return CLIPTokenizer(vocab=vocab, merges=[])


def build_tiny_clip(tokenizer: CLIPTokenizer) -> CLIPModel:
    config = CLIPConfig(
        text_config=dict(
            vocab_size=len(tokenizer),
            hidden_size=16,
            intermediate_size=32,
            num_hidden_layers=2,
            num_attention_heads=2,
            max_position_embeddings=16,
            bos_token_id=tokenizer.bos_token_id,
            eos_token_id=tokenizer.eos_token_id,
        ),
        vision_config=dict(
            hidden_size=16,
            intermediate_size=64,
            num_hidden_layers=2,
            num_attention_heads=2,
            image_size=8,
            patch_size=4,
        ),
        projection_dim=6,
    )
    torch.manual_seed(1234)
    return CLIPModel(config).eval()


@pytest.fixture(scope="session")
def tiny_clip_dir(tmp_path_factory):
    """A saved tiny CLIP checkpoint directory (model + tokenizer)."""
    path = tmp_path_factory.mktemp("tiny-clip")
    tokenizer = build_char_tokenizer()
    model = build_tiny_clip(tokenizer)
    model.save_pretrained(path)
    tokenizer.save_pretrained(path)
    return str(path)


@pytest.fixture(scope="session")
def tiny_clip_model(tiny_clip_dir):
    return CLIPModel.from_pretrained(tiny_clip_dir).eval()
