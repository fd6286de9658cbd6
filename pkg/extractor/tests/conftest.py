import numpy as np
import pytest
import torch
from PIL import Image

from cadt_extractor import ExtractorConfig, extract_dataset, load_backbone


@pytest.fixture(scope="session")
def backbone_model():
    return load_backbone(ExtractorConfig(random_weights=True, init_seed=0))


@pytest.fixture(scope="session")
def weights_file(backbone_model, tmp_path_factory):
    path = tmp_path_factory.mktemp("weights") / "vit_random.pt"
    torch.save(backbone_model.state_dict(), path)
    return path


def _save_image(path, rng, size=(48, 64)):
    arr = rng.integers(0, 256, size=(*size, 3), dtype=np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def _save_mask(path, rng, size=(48, 64)):
    mask = np.zeros(size, dtype=np.uint8)
    mask[8:20, 10:30] = 255
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(mask, mode="L").save(path)


@pytest.fixture(scope="session")
def mvtec_tree(tmp_path_factory):
    """Two-category MVTec-style image tree with 48x64 images."""
    root = tmp_path_factory.mktemp("images")
    rng = np.random.default_rng(11)
    widget = root / "widget"
    for i in range(3):
        _save_image(widget / "train" / "good" / f"{i:03d}.png", rng)
    _save_image(widget / "test" / "good" / "000.png", rng)
    for i in range(2):
        _save_image(widget / "test" / "scratch" / f"{i:03d}.png", rng)
        _save_mask(widget / "ground_truth" / "scratch" / f"{i:03d}_mask.png", rng)
    gadget = root / "gadget"
    _save_image(gadget / "train" / "good" / "000.png", rng)
    _save_image(gadget / "test" / "good" / "000.png", rng)
    return root


@pytest.fixture(scope="session")
def extracted(mvtec_tree, backbone_model, tmp_path_factory):
    out = tmp_path_factory.mktemp("tensors")
    cfg = ExtractorConfig(random_weights=True, init_seed=0)
    extract_dataset(mvtec_tree, out, cfg, model=backbone_model)
    return out
