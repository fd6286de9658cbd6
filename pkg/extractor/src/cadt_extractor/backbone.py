"""Frozen ViT backbone that turns images into patch-embedding grids.

The backbone is ViT-Base with 8x8 patches at 224x224 input, so the
token sequence is one class token plus a 28x28 grid of patch tokens at
768 dims. Embeddings are read from the chosen encoder layer's output
(the raw residual stream as the layer emits it); --apply-layernorm
additionally passes them through the encoder's final LayerNorm for the
normalized variant. The class token is always dropped: the downstream
format is a spatial grid and the global token has no cell in it.

Everything runs in eval mode under no_grad, and preprocessing is fixed
(resize to 224x224 bilinear, scale to [0, 1], normalize (x - 0.5) / 0.5
per channel), so extraction is deterministic for fixed weights.
"""

from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image

DEFAULT_MODEL_ID = "google/vit-base-patch8-224-in21k"
INPUT_SIZE = 224
GRID_SIDE = 28
EMBED_DIM = 768
N_LAYERS = 12


class ExtractError(Exception):
    pass


@dataclass
class ExtractorConfig:
    model_id: str = DEFAULT_MODEL_ID
    layer_index: int = 9
    apply_layernorm: bool = False
    include_class_token: bool = False
    random_weights: bool = False
    weights_path: str | None = None
    init_seed: int = 0
    batch_size: int = 8

    def __post_init__(self):
        if not 1 <= self.layer_index <= N_LAYERS:
            raise ExtractError(
                f"layer_index must be in 1..{N_LAYERS}, got {self.layer_index}"
            )
        if self.include_class_token:
            raise ExtractError(
                "the class token has no cell in the 28x28 patch grid; "
                "include_class_token must stay off"
            )
        if self.batch_size < 1:
            raise ExtractError(f"batch_size must be >= 1, got {self.batch_size}")


def load_backbone(cfg: ExtractorConfig):
    """Build the frozen model per config: pretrained, random, or from a file."""
    from transformers import ViTConfig, ViTModel

    arch = ViTConfig(image_size=INPUT_SIZE, patch_size=INPUT_SIZE // GRID_SIDE)
    if cfg.random_weights:
        torch.manual_seed(cfg.init_seed)
        model = ViTModel(arch, add_pooling_layer=False)
    elif cfg.weights_path:
        model = ViTModel(arch, add_pooling_layer=False)
        try:
            state = torch.load(cfg.weights_path, map_location="cpu",
                               weights_only=True)
            model.load_state_dict(state)
        except Exception as exc:
            raise ExtractError(f"could not load weights from {cfg.weights_path}: {exc}") from exc
    else:
        try:
            model = ViTModel.from_pretrained(cfg.model_id, add_pooling_layer=False)
        except Exception as exc:
            raise ExtractError(
                f"could not load pretrained weights for {cfg.model_id!r}: {exc}; "
                "pass --weights <file> or --random-weights when offline"
            ) from exc
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model


def preprocess(image: Image.Image) -> torch.Tensor:
    """Fixed inference transform; returns a [3, 224, 224] float tensor."""
    image = image.convert("RGB").resize((INPUT_SIZE, INPUT_SIZE), Image.BILINEAR)
    x = np.asarray(image, dtype=np.float32) / 255.0
    x = (x - 0.5) / 0.5
    return torch.from_numpy(x.transpose(2, 0, 1))


def embed_batch(model, pixels: torch.Tensor, layer_index: int,
                apply_layernorm: bool = False) -> np.ndarray:
    """Run one pixel batch, return float32 [B, 28, 28, 768] patch grids."""
    with torch.no_grad():
        out = model(pixels, output_hidden_states=True)
    feats = out.hidden_states[layer_index]
    if apply_layernorm:
        feats = model.layernorm(feats)
    b, tokens, dim = feats.shape
    if tokens != GRID_SIDE * GRID_SIDE + 1 or dim != EMBED_DIM:
        raise ExtractError(
            f"backbone produced {tokens} tokens x {dim} dims, expected "
            f"{GRID_SIDE * GRID_SIDE + 1} x {EMBED_DIM}"
        )
    grids = feats[:, 1:, :].reshape(b, GRID_SIDE, GRID_SIDE, EMBED_DIM)
    arr = grids.numpy().astype(np.float32, copy=False)
    if not np.isfinite(arr).all():
        raise ExtractError("backbone emitted non-finite values")
    return arr
