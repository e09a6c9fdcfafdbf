"""Export CLIP-family visual towers to the engine's GTF + model.cfg layout.

Two checkpoint families are understood:

- Hugging Face `transformers` CLIP models (a local directory or hub id);
  architecture and activation come from the config.
- Plain torch state dicts with OpenAI-style `visual.*` names, which covers
  the original OpenAI releases (including TorchScript archives) as well as
  OpenCLIP and MetaCLIP distributions. Head count and activation are not
  recorded in these files: heads default to width/64 and the activation to
  quick-gelu, both overridable.

All weights are downcast to float32. Exports are deterministic: re-running
produces byte-identical files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .gtf import write_gtf_file

CLIP_IMAGE_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_IMAGE_STD = (0.26862954, 0.26130258, 0.27577711)


@dataclass(frozen=True)
class VisualConfig:
    layers: int
    width: int
    heads: int
    patch: int
    image_size: int
    embed_dim: int
    activation: str
    ln_eps: float = 1e-5
    image_mean: tuple = CLIP_IMAGE_MEAN
    image_std: tuple = CLIP_IMAGE_STD


def canonical_order(layers: int) -> list[str]:
    names = ["patch_embed.weight", "cls_token", "pos_embed", "ln_pre.weight", "ln_pre.bias"]
    for i in range(layers):
        b = f"blocks.{i}."
        names += [b + "ln1.weight", b + "ln1.bias"]
        for proj in ("q", "k", "v", "proj"):
            names += [f"{b}attn.{proj}.weight", f"{b}attn.{proj}.bias"]
        names += [b + "ln2.weight", b + "ln2.bias",
                  b + "mlp.fc1.weight", b + "mlp.fc1.bias",
                  b + "mlp.fc2.weight", b + "mlp.fc2.bias"]
    names += ["ln_post.weight", "ln_post.bias", "visual_proj"]
    return names


def format_config(cfg: VisualConfig) -> str:
    lines = [
        f"layers = {cfg.layers}",
        f"width = {cfg.width}",
        f"heads = {cfg.heads}",
        f"patch = {cfg.patch}",
        f"image_size = {cfg.image_size}",
        f"embed_dim = {cfg.embed_dim}",
        f"activation = {cfg.activation}",
        f"ln_eps = {cfg.ln_eps!r}",
        "image_mean = " + ",".join(repr(float(v)) for v in cfg.image_mean),
        "image_std = " + ",".join(repr(float(v)) for v in cfg.image_std),
    ]
    return "\n".join(lines) + "\n"


def _f32(tensor) -> np.ndarray:
    import torch

    if isinstance(tensor, torch.Tensor):
        return tensor.detach().cpu().to(torch.float32).numpy()
    return np.asarray(tensor, dtype=np.float32)


def _activation_name(hidden_act: str) -> str:
    if hidden_act in ("quick_gelu", "quick-gelu"):
        return "quick-gelu"
    if hidden_act in ("gelu", "gelu_new", "gelu_pytorch_tanh", "exact-gelu"):
        return "exact-gelu"
    raise ValueError(f"unsupported activation '{hidden_act}'")


def convert_hf_model(model) -> tuple[dict[str, np.ndarray], VisualConfig]:
    """Map a transformers CLIPModel's vision tower onto canonical tensors."""
    vision_cfg = model.config.vision_config
    cfg = VisualConfig(
        layers=vision_cfg.num_hidden_layers,
        width=vision_cfg.hidden_size,
        heads=vision_cfg.num_attention_heads,
        patch=vision_cfg.patch_size,
        image_size=vision_cfg.image_size,
        embed_dim=model.config.projection_dim,
        activation=_activation_name(vision_cfg.hidden_act),
        ln_eps=float(getattr(vision_cfg, "layer_norm_eps", 1e-5)),
    )
    sd = {k: v for k, v in model.state_dict().items()}
    tensors: dict[str, np.ndarray] = {}
    tensors["patch_embed.weight"] = _f32(
        sd["vision_model.embeddings.patch_embedding.weight"]
    ).reshape(cfg.width, -1)
    tensors["cls_token"] = _f32(sd["vision_model.embeddings.class_embedding"])
    tensors["pos_embed"] = _f32(sd["vision_model.embeddings.position_embedding.weight"])
    tensors["ln_pre.weight"] = _f32(sd["vision_model.pre_layrnorm.weight"])
    tensors["ln_pre.bias"] = _f32(sd["vision_model.pre_layrnorm.bias"])
    for i in range(cfg.layers):
        src = f"vision_model.encoder.layers.{i}."
        dst = f"blocks.{i}."
        tensors[dst + "ln1.weight"] = _f32(sd[src + "layer_norm1.weight"])
        tensors[dst + "ln1.bias"] = _f32(sd[src + "layer_norm1.bias"])
        for ours, theirs in (("q", "q_proj"), ("k", "k_proj"), ("v", "v_proj"),
                             ("proj", "out_proj")):
            tensors[f"{dst}attn.{ours}.weight"] = _f32(sd[f"{src}self_attn.{theirs}.weight"])
            tensors[f"{dst}attn.{ours}.bias"] = _f32(sd[f"{src}self_attn.{theirs}.bias"])
        tensors[dst + "ln2.weight"] = _f32(sd[src + "layer_norm2.weight"])
        tensors[dst + "ln2.bias"] = _f32(sd[src + "layer_norm2.bias"])
        tensors[dst + "mlp.fc1.weight"] = _f32(sd[src + "mlp.fc1.weight"])
        tensors[dst + "mlp.fc1.bias"] = _f32(sd[src + "mlp.fc1.bias"])
        tensors[dst + "mlp.fc2.weight"] = _f32(sd[src + "mlp.fc2.weight"])
        tensors[dst + "mlp.fc2.bias"] = _f32(sd[src + "mlp.fc2.bias"])
    tensors["ln_post.weight"] = _f32(sd["vision_model.post_layernorm.weight"])
    tensors["ln_post.bias"] = _f32(sd["vision_model.post_layernorm.bias"])
    tensors["visual_proj"] = _f32(sd["visual_projection.weight"]).T.copy()
    return tensors, cfg


def convert_state_dict(sd: dict, heads: int | None = None,
                       activation: str = "quick-gelu") -> tuple[dict[str, np.ndarray], VisualConfig]:
    """Map an OpenAI/OpenCLIP-style `visual.*` state dict onto canonical tensors."""
    if "visual.conv1.weight" not in sd:
        raise ValueError("state dict has no 'visual.conv1.weight'; not a CLIP visual tower")
    conv = _f32(sd["visual.conv1.weight"])
    width, _, patch, _ = conv.shape
    pos = _f32(sd["visual.positional_embedding"])
    grid = int(round(math.sqrt(pos.shape[0] - 1)))
    if grid * grid + 1 != pos.shape[0]:
        raise ValueError(f"positional embedding rows {pos.shape[0]} do not form a square grid")
    layer_ids = set()
    for key in sd:
        if key.startswith("visual.transformer.resblocks."):
            layer_ids.add(int(key.split(".")[3]))
    layers = max(layer_ids) + 1
    proj = _f32(sd["visual.proj"])
    cfg = VisualConfig(
        layers=layers,
        width=width,
        heads=heads if heads is not None else max(1, width // 64),
        patch=patch,
        image_size=grid * patch,
        embed_dim=proj.shape[1],
        activation=_activation_name(activation),
    )
    tensors: dict[str, np.ndarray] = {}
    tensors["patch_embed.weight"] = conv.reshape(width, -1)
    tensors["cls_token"] = _f32(sd["visual.class_embedding"])
    tensors["pos_embed"] = pos
    tensors["ln_pre.weight"] = _f32(sd["visual.ln_pre.weight"])
    tensors["ln_pre.bias"] = _f32(sd["visual.ln_pre.bias"])
    for i in range(layers):
        src = f"visual.transformer.resblocks.{i}."
        dst = f"blocks.{i}."
        tensors[dst + "ln1.weight"] = _f32(sd[src + "ln_1.weight"])
        tensors[dst + "ln1.bias"] = _f32(sd[src + "ln_1.bias"])
        in_w = _f32(sd[src + "attn.in_proj_weight"])
        in_b = _f32(sd[src + "attn.in_proj_bias"])
        for j, name in enumerate(("q", "k", "v")):
            tensors[f"{dst}attn.{name}.weight"] = in_w[j * width:(j + 1) * width].copy()
            tensors[f"{dst}attn.{name}.bias"] = in_b[j * width:(j + 1) * width].copy()
        tensors[dst + "attn.proj.weight"] = _f32(sd[src + "attn.out_proj.weight"])
        tensors[dst + "attn.proj.bias"] = _f32(sd[src + "attn.out_proj.bias"])
        tensors[dst + "ln2.weight"] = _f32(sd[src + "ln_2.weight"])
        tensors[dst + "ln2.bias"] = _f32(sd[src + "ln_2.bias"])
        tensors[dst + "mlp.fc1.weight"] = _f32(sd[src + "mlp.c_fc.weight"])
        tensors[dst + "mlp.fc1.bias"] = _f32(sd[src + "mlp.c_fc.bias"])
        tensors[dst + "mlp.fc2.weight"] = _f32(sd[src + "mlp.c_proj.weight"])
        tensors[dst + "mlp.fc2.bias"] = _f32(sd[src + "mlp.c_proj.bias"])
    tensors["ln_post.weight"] = _f32(sd["visual.ln_post.weight"])
    tensors["ln_post.bias"] = _f32(sd["visual.ln_post.bias"])
    tensors["visual_proj"] = proj
    return tensors, cfg


def _load_torch_checkpoint(path: Path) -> dict:
    import torch

    try:
        obj = torch.load(path, map_location="cpu", weights_only=True)
    except Exception:
        obj = torch.jit.load(str(path), map_location="cpu").state_dict()
    if hasattr(obj, "state_dict"):
        obj = obj.state_dict()
    if isinstance(obj, dict) and "state_dict" in obj and isinstance(obj["state_dict"], dict):
        obj = obj["state_dict"]
    return obj


def load_checkpoint(source: str, heads: int | None = None,
                    activation: str = "quick-gelu") -> tuple[dict[str, np.ndarray], VisualConfig]:
    """Resolve a checkpoint source (HF dir/hub id or state-dict file) to tensors."""
    path = Path(source)
    if path.is_file():
        return convert_state_dict(_load_torch_checkpoint(path), heads, activation)
    from transformers import CLIPModel

    model = CLIPModel.from_pretrained(source)
    return convert_hf_model(model)


def export_visual(source: str, out_dir: str | Path, heads: int | None = None,
                  activation: str = "quick-gelu") -> VisualConfig:
    """Write model.gtf + model.cfg for the engine; returns the derived config."""
    tensors, cfg = load_checkpoint(source, heads, activation)
    ordered = {name: tensors[name] for name in canonical_order(cfg.layers)}
    missing = set(tensors) - set(ordered)
    if missing:
        raise ValueError(f"converted tensors outside the canonical set: {sorted(missing)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_gtf_file(out / "model.gtf", ordered)
    (out / "model.cfg").write_text(format_config(cfg))
    return cfg
