import time

import numpy as np
import pytest
import torch
from hypothesis import settings

from latentfuse.config import TrainConfig
from latentfuse.datasets import ImagePair, PairedDataset
from latentfuse.metrics import psnr
from latentfuse.pipeline import train_stage1

settings.register_profile("suite", deadline=None, max_examples=25)
settings.load_profile("suite")


def blob_image(rng: np.random.Generator, size: int = 16, n_blobs: int = 3) -> np.ndarray:
    """Smooth synthetic image: a few Gaussian bumps, normalized to [0, 1]."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.zeros((size, size))
    for _ in range(n_blobs):
        cy, cx = rng.random(2)
        s = 0.15 + 0.2 * rng.random()
        img += rng.random() * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
    return (img - img.min()) / (img.max() - img.min() + 1e-12)


def textured_image(rng: np.random.Generator, size: int = 32) -> np.ndarray:
    """Structured image with edges and texture, for the metric tests."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = 0.5 + 0.3 * np.sin(8 * np.pi * xx) * np.cos(6 * np.pi * yy)
    img[size // 4: size // 2, size // 4: size // 2] += 0.3
    img += 0.05 * rng.standard_normal((size, size))
    return np.clip(img, 0.0, 1.0)


def make_pair_dataset(n_pairs: int = 4, size: int = 16, seed: int = 7,
                      color_b: bool = False) -> PairedDataset:
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n_pairs):
        a = blob_image(rng, size)
        b = blob_image(rng, size)
        if color_b:
            tint = 0.3 + 0.7 * rng.random(3)
            b = np.clip(b[..., None] * tint[None, None, :], 0.0, 1.0)
        pairs.append(ImagePair(f"pair{i:03d}", a, b))
    return PairedDataset(pairs, modality_tags=("mod_a", "mod_b"))


def smoke_train_config(**overrides) -> TrainConfig:
    """200-step overfit recipe validated during development."""
    base = dict(epochs=100, initial_lr=2e-3, final_lr=2e-3, lr_schedule="constant",
                batch_size=4, seed=0, validation_fraction=0.0)
    base.update(overrides)
    return TrainConfig(**base)


def reconstruction_psnrs(model, dataset: PairedDataset) -> list[float]:
    model.eval()
    values = []
    for pair in dataset:
        for img in (pair.image_a, pair.image_b):
            x = torch.from_numpy(np.ascontiguousarray(img, dtype=np.float32))[None, None]
            with torch.no_grad():
                out = model(x)[0, 0].numpy().astype(np.float64)
            values.append(psnr(img, out))
    return values


@pytest.fixture(scope="session")
def smoke_run():
    """Overfit 8 synthetic 16x16 images for 200 steps; shared across tests.

    Returns the trained model together with the wall time and per-image
    reconstruction PSNRs so the acceptance tests can assert on them without
    retraining.
    """
    data = make_pair_dataset(n_pairs=4, size=16, seed=7)
    cfg = smoke_train_config()
    t0 = time.perf_counter()
    result = train_stage1(cfg, data, single_threaded=True, max_steps=200)
    elapsed = time.perf_counter() - t0
    psnrs = reconstruction_psnrs(result.model, data)
    return {
        "model": result.model,
        "result": result,
        "data": data,
        "elapsed_seconds": elapsed,
        "psnrs": psnrs,
        "steps": result.manifest.timings["steps"],
    }
