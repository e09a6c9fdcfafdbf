"""Model configuration, canonical checkpoint layout, loading, and synthetic fixtures.

A model on disk is a directory with two files:

    model.gtf   all weights in the GTF container, canonical names below
    model.cfg   `key = value` text, one pair per line, '#' comments

Canonical tensor names (torch-Linear [out, in] layout for weight matrices):

    patch_embed.weight                      [width, 3*patch*patch]
    cls_token                               [width]
    pos_embed                               [1+n, width]
    ln_pre.{weight,bias}                    [width]
    blocks.{i}.ln1.{weight,bias}            [width]
    blocks.{i}.attn.{q,k,v,proj}.weight     [width, width]
    blocks.{i}.attn.{q,k,v,proj}.bias       [width]
    blocks.{i}.ln2.{weight,bias}            [width]
    blocks.{i}.mlp.fc1.{weight,bias}        [4*width, width], [4*width]
    blocks.{i}.mlp.fc2.{weight,bias}        [width, 4*width], [width]
    ln_post.{weight,bias}                   [width]
    visual_proj                             [width, embed_dim]   (applied as x @ visual_proj)

patch_embed flattens each patch channel-major (c, y, x), matching a conv
kernel reshaped to [width, -1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ModelError
from .gtf import read_gtf_file, write_gtf_file

# channel statistics of the CLIP pretraining pipeline; stored in model.cfg so
# the engine itself stays checkpoint-agnostic
CLIP_IMAGE_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_IMAGE_STD = (0.26862954, 0.26130258, 0.27577711)

ACTIVATIONS = ("quick-gelu", "exact-gelu")

_REQUIRED_KEYS = ("layers", "width", "heads", "patch", "image_size", "embed_dim")
_OPTIONAL_KEYS = ("activation", "ln_eps", "image_mean", "image_std")


@dataclass(frozen=True)
class ModelConfig:
    layers: int
    width: int
    heads: int
    patch: int
    image_size: int
    embed_dim: int
    activation: str = "quick-gelu"
    ln_eps: float = 1e-5
    image_mean: tuple[float, float, float] = CLIP_IMAGE_MEAN
    image_std: tuple[float, float, float] = CLIP_IMAGE_STD

    @property
    def grid(self) -> int:
        return self.image_size // self.patch

    @property
    def patch_count(self) -> int:
        return self.grid * self.grid

    @property
    def last_block(self) -> int:
        return self.layers - 1

    def validate(self) -> None:
        for name in _REQUIRED_KEYS:
            if int(getattr(self, name)) < 1:
                raise ModelError(f"config: {name} must be >= 1, got {getattr(self, name)}")
        if self.width % self.heads != 0:
            raise ModelError(f"config: width {self.width} not divisible by heads {self.heads}")
        if self.image_size % self.patch != 0:
            raise ModelError(f"config: image_size {self.image_size} not divisible by patch {self.patch}")
        if self.activation not in ACTIVATIONS:
            raise ModelError(f"config: unknown activation '{self.activation}'")
        if self.ln_eps <= 0:
            raise ModelError(f"config: ln_eps must be positive, got {self.ln_eps}")
        for name in ("image_mean", "image_std"):
            vals = getattr(self, name)
            if len(vals) != 3:
                raise ModelError(f"config: {name} needs 3 comma-separated values")
        if any(s == 0 for s in self.image_std):
            raise ModelError("config: image_std entries must be nonzero")


@dataclass(frozen=True)
class ModelBundle:
    """A validated checkpoint: immutable config plus frozen weight arrays."""

    config: ModelConfig
    tensors: dict[str, np.ndarray] = field(repr=False)


def parse_model_config(text: str) -> ModelConfig:
    """Parse `key = value` lines (with '#' comments) into a validated ModelConfig."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ModelError(f"config line {lineno}: expected key=value, got '{stripped}'")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key not in _REQUIRED_KEYS + _OPTIONAL_KEYS:
            raise ModelError(f"config line {lineno}: unknown key '{key}'")
        if key in raw:
            raise ModelError(f"config line {lineno}: duplicate key '{key}'")
        raw[key] = value
    for key in _REQUIRED_KEYS:
        if key not in raw:
            raise ModelError(f"config: missing required key '{key}'")

    def parse_triple(value: str, key: str) -> tuple[float, ...]:
        try:
            vals = tuple(float(v) for v in value.split(","))
        except ValueError:
            raise ModelError(f"config: {key} must be comma-separated floats") from None
        return vals

    try:
        cfg = ModelConfig(
            layers=int(raw["layers"]),
            width=int(raw["width"]),
            heads=int(raw["heads"]),
            patch=int(raw["patch"]),
            image_size=int(raw["image_size"]),
            embed_dim=int(raw["embed_dim"]),
            activation=raw.get("activation", "quick-gelu"),
            ln_eps=float(raw.get("ln_eps", 1e-5)),
            image_mean=parse_triple(raw["image_mean"], "image_mean") if "image_mean" in raw else CLIP_IMAGE_MEAN,
            image_std=parse_triple(raw["image_std"], "image_std") if "image_std" in raw else CLIP_IMAGE_STD,
        )
    except ValueError as exc:
        raise ModelError(f"config: {exc}") from None
    cfg.validate()
    return cfg


def format_model_config(cfg: ModelConfig) -> str:
    lines = [f"{key} = {getattr(cfg, key)}" for key in _REQUIRED_KEYS]
    lines.append(f"activation = {cfg.activation}")
    lines.append(f"ln_eps = {cfg.ln_eps!r}")
    lines.append("image_mean = " + ",".join(repr(v) for v in cfg.image_mean))
    lines.append("image_std = " + ",".join(repr(v) for v in cfg.image_std))
    return "\n".join(lines) + "\n"


def expected_tensor_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical name -> shape map for a given configuration."""
    w, hidden = cfg.width, 4 * cfg.width
    shapes: dict[str, tuple[int, ...]] = {
        "patch_embed.weight": (w, 3 * cfg.patch * cfg.patch),
        "cls_token": (w,),
        "pos_embed": (1 + cfg.patch_count, w),
        "ln_pre.weight": (w,),
        "ln_pre.bias": (w,),
    }
    for i in range(cfg.layers):
        b = f"blocks.{i}."
        shapes[b + "ln1.weight"] = (w,)
        shapes[b + "ln1.bias"] = (w,)
        for proj in ("q", "k", "v", "proj"):
            shapes[f"{b}attn.{proj}.weight"] = (w, w)
            shapes[f"{b}attn.{proj}.bias"] = (w,)
        shapes[b + "ln2.weight"] = (w,)
        shapes[b + "ln2.bias"] = (w,)
        shapes[b + "mlp.fc1.weight"] = (hidden, w)
        shapes[b + "mlp.fc1.bias"] = (hidden,)
        shapes[b + "mlp.fc2.weight"] = (w, hidden)
        shapes[b + "mlp.fc2.bias"] = (w,)
    shapes["ln_post.weight"] = (w,)
    shapes["ln_post.bias"] = (w,)
    shapes["visual_proj"] = (w, cfg.embed_dim)
    return shapes


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    arr.flags.writeable = False
    return arr


def load_model(gtf_path: str | Path, config_path: str | Path) -> ModelBundle:
    """Load and cross-validate a checkpoint against its configuration."""
    cfg = parse_model_config(Path(config_path).read_text())
    tensors = read_gtf_file(gtf_path)
    expected = expected_tensor_shapes(cfg)
    for name, shape in expected.items():
        if name not in tensors:
            raise ModelError(f"missing weight tensor '{name}'")
        if tensors[name].shape != shape:
            raise ModelError(
                f"tensor '{name}' has shape {tensors[name].shape}, config implies {shape}"
            )
    for name in tensors:
        if name not in expected:
            raise ModelError(f"unexpected tensor '{name}' in checkpoint")
    return ModelBundle(config=cfg, tensors={k: _freeze(v) for k, v in tensors.items()})


def load_model_dir(path: str | Path) -> ModelBundle:
    root = Path(path)
    return load_model(root / "model.gtf", root / "model.cfg")


def save_model_dir(path: str | Path, bundle: ModelBundle) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    write_gtf_file(root / "model.gtf", bundle.tensors)
    (root / "model.cfg").write_text(format_model_config(bundle.config))


def replace_tensors(bundle: ModelBundle, updates: dict[str, np.ndarray]) -> ModelBundle:
    """New bundle with some tensors swapped out (shapes must match)."""
    tensors = dict(bundle.tensors)
    for name, arr in updates.items():
        if name not in tensors:
            raise ModelError(f"cannot replace unknown tensor '{name}'")
        if tensors[name].shape != np.asarray(arr).shape:
            raise ModelError(f"replacement for '{name}' changes shape")
        tensors[name] = _freeze(arr)
    return replace(bundle, tensors=tensors)


def generate_synthetic(cfg: ModelConfig, seed: int = 0) -> ModelBundle:
    """Deterministic pseudo-random checkpoint for tests and demos.

    Same seed, same bundle, bit for bit. Weight scales follow 1/sqrt(fan_in)
    so tiny models still produce well-behaved activations.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in expected_tensor_shapes(cfg).items():
        noise = rng.standard_normal(shape, dtype=np.float32)
        is_ln = any(part.startswith("ln") for part in name.split("."))
        if is_ln and name.endswith(".weight"):
            arr = 1.0 + 0.05 * noise
        elif name.endswith(".bias"):
            arr = 0.02 * noise
        elif name in ("cls_token", "pos_embed"):
            arr = 0.5 * noise
        elif name == "visual_proj":
            arr = noise / math.sqrt(shape[0])
        else:
            arr = noise / math.sqrt(shape[-1])
        tensors[name] = _freeze(arr)
    return ModelBundle(config=cfg, tensors=tensors)
