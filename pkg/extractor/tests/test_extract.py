import numpy as np
import pytest

from cadt_extractor import ExtractError, ExtractorConfig, extract_dataset, find_categories
from cadt_extractor.cli import main
from cadt_extractor.tensor_file import read_tensor


def test_find_categories(mvtec_tree):
    assert find_categories(mvtec_tree) == ["gadget", "widget"]
    with pytest.raises(ExtractError, match="not found"):
        extract_dataset(mvtec_tree, "/tmp/unused", ExtractorConfig(),
                        categories=["widget", "sprocket"])


def test_output_layout_and_shapes(extracted):
    widget = extracted / "widget"
    for i in range(3):
        grid = read_tensor(widget / "train" / f"train_{i:04d}.cadt")
        assert grid.shape == (28, 28, 768)
        assert grid.dtype == np.float32
        assert np.isfinite(grid).all()
    labels = (widget / "test" / "labels.txt").read_text(encoding="utf-8")
    assert labels == "0\n1\n1\n"
    assert not (widget / "masks" / "test_0000.cadt").exists()
    for i in (1, 2):
        mask = read_tensor(widget / "masks" / f"test_{i:04d}.cadt")
        assert mask.shape == (48, 64)
        assert mask.dtype == np.uint8
        assert set(np.unique(mask)) == {0, 255}
    meta = (widget / "meta.txt").read_text(encoding="utf-8")
    assert meta == "image_size = 48 64\n"


def test_loads_into_primary_package(extracted):
    tensor_io = pytest.importorskip("corebank.tensor_io")
    ds = tensor_io.load_task(extracted, "widget")
    assert len(ds.train) == 3 and len(ds.test) == 3
    assert ds.image_size == (48, 64)
    assert ds.train[0].grid == (28, 28)
    assert ds.train[0].dim == 768
    assert [s.label for s in ds.test] == [0, 1, 1]
    assert ds.test[0].mask is None
    assert ds.test[1].mask.shape == (48, 64)

    from corebank import MemoryBank, score_patches

    bank = MemoryBank(capacity=300)
    for batch in ds.train:
        bank.update(batch)
    assert len(bank) == 300
    patches = score_patches(bank, ds.test[1].batch)
    assert patches.scores.shape == (28, 28)


def test_re_extraction_is_bit_identical(mvtec_tree, backbone_model, extracted,
                                        tmp_path):
    cfg = ExtractorConfig(random_weights=True, init_seed=0)
    extract_dataset(mvtec_tree, tmp_path / "again", cfg,
                    categories=["widget"], model=backbone_model)
    for rel in sorted(p.relative_to(extracted / "widget")
                      for p in (extracted / "widget").rglob("*.cadt")):
        a = (extracted / "widget" / rel).read_bytes()
        b = (tmp_path / "again" / "widget" / rel).read_bytes()
        assert a == b, rel


def test_seeded_init_reproduces_extraction(mvtec_tree, extracted, tmp_path):
    cfg = ExtractorConfig(random_weights=True, init_seed=0)
    extract_dataset(mvtec_tree, tmp_path / "fresh", cfg, categories=["gadget"])
    a = (extracted / "gadget" / "train" / "train_0000.cadt").read_bytes()
    b = (tmp_path / "fresh" / "gadget" / "train" / "train_0000.cadt").read_bytes()
    assert a == b


def test_unreadable_image_is_reported(tmp_path, backbone_model):
    root = tmp_path / "imgs"
    bad = root / "thing" / "train" / "good" / "000.png"
    bad.parent.mkdir(parents=True)
    bad.write_bytes(b"this is not a png")
    cfg = ExtractorConfig(random_weights=True)
    with pytest.raises(ExtractError, match="unreadable image"):
        extract_dataset(root, tmp_path / "out", cfg, model=backbone_model)


def test_anomalous_image_without_mask_is_reported(tmp_path, backbone_model):
    from PIL import Image

    root = tmp_path / "imgs"
    for rel in ("train/good/000.png", "test/dent/000.png"):
        p = root / "thing" / rel
        p.parent.mkdir(parents=True)
        Image.new("RGB", (32, 32), (128, 0, 0)).save(p)
    cfg = ExtractorConfig(random_weights=True)
    with pytest.raises(ExtractError, match="no ground-truth mask"):
        extract_dataset(root, tmp_path / "out", cfg, model=backbone_model)


def test_cli_extract_with_saved_weights(mvtec_tree, tmp_path, capsys):
    weights = tmp_path / "w.pt"
    rc = main(["extract", "--images", str(mvtec_tree),
               "--out", str(tmp_path / "run1"), "--categories", "gadget",
               "--random-weights", "--init-seed", "2",
               "--save-weights", str(weights), "--batch-size", "4"])
    assert rc == 0
    chatter = capsys.readouterr().out
    assert "weights saved" in chatter and "extracted 1 categories" in chatter

    rc = main(["extract", "--images", str(mvtec_tree),
               "--out", str(tmp_path / "run2"), "--categories", "gadget",
               "--weights", str(weights)])
    assert rc == 0
    a = (tmp_path / "run1" / "gadget" / "test" / "test_0000.cadt").read_bytes()
    b = (tmp_path / "run2" / "gadget" / "test" / "test_0000.cadt").read_bytes()
    assert a == b


def test_cli_rejects_bad_layer(mvtec_tree, tmp_path, capsys):
    rc = main(["extract", "--images", str(mvtec_tree),
               "--out", str(tmp_path / "x"), "--layer", "15",
               "--random-weights"])
    assert rc == 1
    assert capsys.readouterr().err.startswith("error: layer_index")
