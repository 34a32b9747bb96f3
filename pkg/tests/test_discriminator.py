import asyncio
from functools import partial

import numpy as np
import pytest
import torch

from config import DiscriminatorTrainConfig
from corpus import distortion_item, write_dataset
from datasets import load_distortion_records
from discriminator import (
    FAKE,
    REAL,
    DiscriminatorModel,
    DiscTrainSample,
    ShadingDiscriminator,
    cutmix_augment,
    cutmix_box,
    discriminator_losses,
    evaluate_discriminator,
    fake_sample,
    real_sample,
    samples_from_records,
    score,
    stack_samples,
    train_discriminator,
)
from errors import CheckpointError, DatasetError, InvalidFieldError, ShapeMismatchError
from normals import sphere_normals
from synth import PerlinSpec, distort_shading, gen_perlin


def _pair(size=16, seed=0):
    normals = sphere_normals(size, size, [(size / 2, size / 2, size / 3)])
    clean = gen_perlin(PerlinSpec(height=size, width=size, rng_seed=seed))
    distortion = distort_shading(clean, seed + 1)
    return (
        real_sample(normals, clean),
        fake_sample(normals, distortion.distorted_shading, distortion.distortion_mask),
    )


def _records(tmp_path, count, size=16):
    make_item = partial(distortion_item, seed=0, height=size, width=size)
    asyncio.run(write_dataset(tmp_path, count, make_item, workers=2))
    return load_distortion_records(tmp_path)


def test_forward_shapes():
    net = ShadingDiscriminator(depth=2, base_width=4)
    global_logit, map_logits = net(torch.rand(3, 4, 20, 12))
    assert global_logit.shape == (3,)
    assert map_logits.shape == (3, 20, 12)


def test_score_ranges(tiny_discriminator):
    real, _ = _pair()
    global_score, pixel_map = score(tiny_discriminator, real.normals, real.shading)
    assert 0.0 <= global_score <= 1.0
    assert pixel_map.shape == (16, 16)
    assert pixel_map.min() >= 0 and pixel_map.max() <= 1


def test_score_shape_mismatch(tiny_discriminator):
    real, _ = _pair()
    with pytest.raises(ShapeMismatchError):
        score(tiny_discriminator, real.normals, np.zeros((8, 8), np.float32))


def test_untrained_discriminator_is_rejected():
    model = DiscriminatorModel(net=ShadingDiscriminator(2, 4), architecture={"depth": 2, "base_width": 4})
    real, _ = _pair()
    with pytest.raises(CheckpointError):
        score(model, real.normals, real.shading)


def test_sample_labels():
    real, fake = _pair()
    assert real.label == REAL and np.all(real.pixel_labels == 1)
    assert fake.label == FAKE and np.any(fake.pixel_labels == 0)


def test_inconsistent_labels_rejected():
    real, _ = _pair()
    with pytest.raises(InvalidFieldError):
        DiscTrainSample(real.normals, real.shading, FAKE, real.pixel_labels)


def test_cutmix_box_fraction():
    box = cutmix_box(20, 20, rng_seed=3, box_fraction=0.25)
    assert box.sum() == 100
    assert cutmix_box(20, 20, rng_seed=3, box_fraction=0.0).sum() == 0
    with pytest.raises(InvalidFieldError):
        cutmix_box(8, 8, rng_seed=0, box_fraction=1.5)


def test_cutmix_full_box_copies_partner():
    real, fake = _pair()
    mixed = cutmix_augment(real, fake, rng_seed=0, box_fraction=1.0)
    assert np.array_equal(mixed.shading, fake.shading)
    assert mixed.label == FAKE


def test_cutmix_of_two_real_samples_is_real():
    a, _ = _pair(seed=0)
    b, _ = _pair(seed=5)
    mixed = cutmix_augment(a, b, rng_seed=1, box_fraction=0.5)
    assert mixed.label == REAL


def test_losses_sum_pixels_and_average_batch():
    inputs, labels, pixels = stack_samples(list(_pair()))
    global_logits = torch.zeros(2)
    map_logits = torch.zeros(2, 16, 16)
    l_enc, l_dec = discriminator_losses(global_logits, map_logits, labels, pixels)
    assert l_enc.item() == pytest.approx(np.log(2.0), rel=1e-6)
    assert l_dec.item() == pytest.approx(16 * 16 * np.log(2.0), rel=1e-6)


def test_stack_samples_shading_only_zeroes_normals():
    inputs, _, _ = stack_samples(list(_pair()), shading_only=True)
    assert inputs.shape == (2, 4, 16, 16)
    assert torch.all(inputs[:, :3] == 0)


def test_training_needs_both_classes():
    real, _ = _pair()
    config = DiscriminatorTrainConfig(epochs=1, batch_size=2, depth=2, base_width=4)
    with pytest.raises(DatasetError):
        train_discriminator([real, real], config)


def test_training_rejects_mixed_shapes():
    real, fake = _pair(16)
    _, other = _pair(24)
    config = DiscriminatorTrainConfig(epochs=1, batch_size=2, depth=2, base_width=4)
    with pytest.raises(ShapeMismatchError):
        train_discriminator([real, fake, other], config)


def test_short_training_and_evaluation(tmp_path):
    records = _records(tmp_path / "data", 8)
    config = DiscriminatorTrainConfig(
        epochs=2, batch_size=4, depth=2, base_width=4, seed=1, cutmix_probability=0.5, validation_fraction=0.25
    )
    model = train_discriminator(samples_from_records(records[:6]), config, out_path=tmp_path / "disc.pt")
    assert model.epochs == 2 and len(model.enc_losses) == 2

    loaded = DiscriminatorModel.load(tmp_path / "disc.pt")
    metrics = evaluate_discriminator(loaded, samples_from_records(records[6:]))
    assert 0.0 <= metrics["auc"] <= 1.0
    assert 0.0 <= metrics["iou"] <= 1.0


def test_checkpoint_preserves_shading_only(tmp_path):
    model = DiscriminatorModel(
        net=ShadingDiscriminator(2, 4), architecture={"depth": 2, "base_width": 4}, shading_only=True, epochs=1
    )
    loaded = DiscriminatorModel.load(model.save(tmp_path / "disc.pt"))
    assert loaded.shading_only


@pytest.mark.slow
def test_separation_oracle(tmp_path):
    records = _records(tmp_path / "data", 1000, size=64)
    config = DiscriminatorTrainConfig(epochs=20, batch_size=32, seed=0, cutmix_probability=0.3)
    model = train_discriminator(samples_from_records(records[:900]), config)
    metrics = evaluate_discriminator(model, samples_from_records(records[900:]))
    assert metrics["auc"] > 0.9
    assert metrics["iou"] > 0.3
