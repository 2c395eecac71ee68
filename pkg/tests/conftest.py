from __future__ import annotations

import numpy as np
import pytest
from PIL import Image

from zseval import manifest as mf
from zseval.mockserver import MockEmbeddingService, MockVlmService


@pytest.fixture
def embed_server():
    service = MockEmbeddingService(dimension=16).start()
    yield service
    service.stop()


@pytest.fixture
def vlm_server():
    service = MockVlmService().start()
    yield service
    service.stop()


def make_category_set(n=3, modality="image", name="toy"):
    names = [f"class {i}" for i in range(n)]
    return mf.CategorySet(name, tuple(names), modality)


def write_toy_images(directory, count=10, size=24, seed=7):
    """Small deterministic RGB PNGs; returns the file paths."""
    rng = np.random.default_rng(seed)
    paths = []
    directory.mkdir(parents=True, exist_ok=True)
    for i in range(count):
        arr = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
        path = directory / f"img_{i:03d}.png"
        Image.fromarray(arr, "RGB").save(path)
        paths.append(path)
    return paths


def write_toy_manifest(tmp_path, n_classes=3, n_samples=10, modality="image", name="toy"):
    """Toy dataset on disk: images plus a matching manifest file."""
    image_dir = tmp_path / "imgs"
    paths = write_toy_images(image_dir, count=n_samples)
    lines = [f"#dataset {name} {modality} {n_classes} {n_samples}"]
    for i in range(n_classes):
        lines.append(f"#cat {i} kind {i} object")
    for i, path in enumerate(paths):
        lines.append(f"{path}\t{i % n_classes}")
    manifest_path = tmp_path / "toy.manifest"
    manifest_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest_path
