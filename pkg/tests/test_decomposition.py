import asyncio
from functools import partial

import numpy as np
import pytest
import torch

from config import DecompositionTrainConfig
from corpus import decomposition_item, write_dataset
from decomposition import (
    DecompositionModel,
    DecompositionNet,
    decompose,
    decomposition_loss,
    evaluate_decomposition,
    train_decomposition,
)
from errors import CheckpointError, InvalidFieldError
from imaging import form_image
from synth import MondrianSpec, PerlinSpec, make_decomposition_sample


def _samples(n, size=16):
    return [
        make_decomposition_sample(
            MondrianSpec(height=size, width=size, n_patches=4, rng_seed=100 + i),
            PerlinSpec(height=size, width=size, rng_seed=200 + i),
        )
        for i in range(n)
    ]


def test_decompose_shapes_and_ranges(tiny_decomposition, rng):
    image = rng.uniform(0, 1, (20, 28, 3)).astype(np.float32)
    albedo, shading = decompose(tiny_decomposition, image)
    assert albedo.shape == (20, 28, 3)
    assert shading.shape == (20, 28)
    assert albedo.min() >= 0 and albedo.max() <= 1
    assert shading.min() >= 0 and shading.max() <= 1


def test_decompose_is_deterministic(tiny_decomposition, rng):
    image = rng.uniform(0, 1, (16, 16, 3)).astype(np.float32)
    a = decompose(tiny_decomposition, image)
    b = decompose(tiny_decomposition, image)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_untrained_model_is_rejected(rng):
    model = DecompositionModel(net=DecompositionNet(depth=2, base_width=4), architecture={"depth": 2, "base_width": 4})
    with pytest.raises(CheckpointError):
        decompose(model, rng.uniform(0, 1, (8, 8, 3)).astype(np.float32))


def test_decompose_validates_input(tiny_decomposition):
    with pytest.raises(InvalidFieldError):
        decompose(tiny_decomposition, np.full((8, 8, 3), 2.0, np.float32))


def test_loss_is_zero_for_exact_prediction():
    sample = _samples(1)[0]
    image = torch.from_numpy(sample.image.transpose(2, 0, 1))[None]
    albedo = torch.from_numpy(sample.albedo.transpose(2, 0, 1))[None]
    shading = torch.from_numpy(sample.shading)[None, None]
    assert decomposition_loss(image, albedo, shading, albedo, shading).item() == pytest.approx(0.0, abs=1e-10)


def test_checkpoint_round_trip(tmp_path, tiny_decomposition, rng):
    path = tiny_decomposition.save(tmp_path / "decomposition.pt")
    assert (tmp_path / "decomposition.pt.meta").exists()
    loaded = DecompositionModel.load(path)
    image = rng.uniform(0, 1, (16, 16, 3)).astype(np.float32)
    assert np.array_equal(decompose(loaded, image)[1], decompose(tiny_decomposition, image)[1])


def test_corrupted_checkpoint(tmp_path, tiny_decomposition):
    path = tiny_decomposition.save(tmp_path / "decomposition.pt")
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 3])
    with pytest.raises(CheckpointError):
        DecompositionModel.load(path)
    with pytest.raises(CheckpointError):
        DecompositionModel.load(tmp_path / "missing.pt")


def test_checkpoint_kind_is_checked(tmp_path, tiny_discriminator):
    path = tiny_discriminator.save(tmp_path / "discriminator.pt")
    with pytest.raises(CheckpointError):
        DecompositionModel.load(path)


def test_short_training_run(tmp_path):
    make_item = partial(decomposition_item, seed=0, height=16, width=16, n_patches=3, frequency=2)
    asyncio.run(write_dataset(tmp_path / "data", 12, make_item, workers=2))
    config = DecompositionTrainConfig(
        dataset_dir=str(tmp_path / "data"), epochs=2, batch_size=4, depth=2, base_width=4, seed=3,
        validation_fraction=0.25,
    )
    model = train_decomposition(config, out_path=tmp_path / "decomposition.pt")
    assert model.trained and model.epochs == 2
    assert len(model.train_losses) == 2 and len(model.val_losses) == 2
    metrics = evaluate_decomposition(DecompositionModel.load(tmp_path / "decomposition.pt"), _samples(3))
    assert set(metrics) == {"reconstruction_mse", "albedo_mse", "shading_mse"}
    assert all(np.isfinite(v) for v in metrics.values())


def test_training_is_reproducible_with_the_same_seed(tmp_path):
    make_item = partial(decomposition_item, seed=0, height=16, width=16, n_patches=3, frequency=2)
    asyncio.run(write_dataset(tmp_path / "data", 12, make_item, workers=2))
    config = DecompositionTrainConfig(
        dataset_dir=str(tmp_path / "data"), epochs=2, batch_size=4, depth=2, base_width=4, seed=3,
        validation_fraction=0.25,
    )
    first = train_decomposition(config)
    second = train_decomposition(config)
    assert first.train_losses[-1] == pytest.approx(second.train_losses[-1], abs=1e-6)
    assert first.val_losses[-1] == pytest.approx(second.val_losses[-1], abs=1e-6)


@pytest.mark.slow
def test_reconstruction_oracle(tmp_path):
    make_item = partial(decomposition_item, seed=0, height=64, width=64, n_patches=10, frequency=2)
    asyncio.run(write_dataset(tmp_path / "data", 2000, make_item, workers=4))
    config = DecompositionTrainConfig(dataset_dir=str(tmp_path / "data"), epochs=15, batch_size=32, seed=0)
    model = train_decomposition(config)
    metrics = evaluate_decomposition(model, _samples(64, size=64))
    assert metrics["reconstruction_mse"] < 0.01
    assert model.val_losses[-1] <= model.val_losses[0]

    errors = []
    for sample in _samples(16, size=64):
        albedo, shading = decompose(model, form_image(sample.albedo, sample.shading))
        errors.append(np.mean((albedo - sample.albedo) ** 2))
        errors.append(np.mean((shading - sample.shading) ** 2))
    assert float(np.mean(errors)) < 0.02
