import asyncio
from functools import partial

import numpy as np
import pytest
import torch

from config import FeaturesTrainConfig
from corpus import illumination_item, write_dataset
from datasets import IlluminationGroup, load_illumination_groups
from errors import DatasetError
from features import (
    FEATURE_DIM,
    FeatureExtractor,
    build_classifier,
    classification_accuracy,
    consistency_loss,
    extract_features,
    feature_distance,
    finetune_features,
    mean_group_distance,
    split_groups,
)


@pytest.fixture
def groups(tmp_path):
    make_item = partial(illumination_item, seed=0, height=16, width=16, n_patches=3, n_scenes=2, n_lights=2)
    asyncio.run(write_dataset(tmp_path / "illumination", 4, make_item, workers=2))
    return load_illumination_groups(tmp_path / "illumination")


def test_extract_features_dimension(tiny_features, rng):
    vector = extract_features(tiny_features, rng.uniform(0, 1, (20, 30, 3)).astype(np.float32))
    assert vector.shape == (FEATURE_DIM,)
    assert np.all(np.isfinite(vector))


def test_embedding_is_differentiable_wrt_input(tiny_features):
    images = torch.rand(2, 3, 16, 16, requires_grad=True)
    tiny_features.embed(images).sum().backward()
    assert images.grad is not None
    assert torch.any(images.grad != 0)


def test_distances():
    a = torch.tensor([[0.0, 0.0], [3.0, 4.0]])
    assert feature_distance(a[0], a[1]).item() == pytest.approx(25.0)
    assert consistency_loss(a).item() == pytest.approx(25.0)
    assert consistency_loss(torch.ones(3, 5)).item() == 0.0


def test_group_needs_two_images(tmp_path):
    with pytest.raises(DatasetError):
        IlluminationGroup(scene_id="scene_000", label="class_00", image_paths=[tmp_path / "a.png"])


def test_split_groups_is_stratified(groups):
    train, held_out = split_groups(groups, 0.5, seed=0)
    assert len(train) == 2 and len(held_out) == 2
    assert {g.label for g in held_out} == {"class_00", "class_01"}


def test_finetune_rejects_unknown_labels(groups):
    extractor = build_classifier(["other"], pretrained=False, image_size=64)
    config = FeaturesTrainConfig(epochs=1, batch_size=2, pretrained=False, image_size=64)
    with pytest.raises(DatasetError):
        finetune_features(extractor, groups, config)


def test_finetune_returns_new_frozen_extractor(tmp_path, groups):
    base = build_classifier(["class_00", "class_01"], pretrained=False, image_size=64)
    before = {k: v.clone() for k, v in base.classifier.state_dict().items()}
    config = FeaturesTrainConfig(
        epochs=2, batch_size=2, pretrained=False, image_size=64, consistency_weight=1.0, seed=0,
        learning_rate=1e-4,
    )
    tuned = finetune_features(base, groups, config, out_path=tmp_path / "features.pt")

    for key, value in base.classifier.state_dict().items():
        assert torch.equal(value, before[key])
    assert tuned.epochs == 2
    assert len(tuned.classification_losses) == 2 and len(tuned.consistency_losses) == 2
    assert not any(p.requires_grad for p in tuned.classifier.parameters())

    distance = mean_group_distance(tuned, groups)
    accuracy = classification_accuracy(tuned, groups)
    assert distance >= 0.0 and np.isfinite(distance)
    assert 0.0 <= accuracy <= 1.0


def test_checkpoint_round_trip(tmp_path, tiny_features, rng):
    loaded = FeatureExtractor.load(tiny_features.save(tmp_path / "features.pt"))
    image = rng.uniform(0, 1, (16, 16, 3)).astype(np.float32)
    assert loaded.class_names == tiny_features.class_names
    assert loaded.image_size == 64
    assert np.allclose(extract_features(loaded, image), extract_features(tiny_features, image), atol=1e-6)


@pytest.mark.slow
def test_robustness_oracle(tmp_path):
    make_item = partial(illumination_item, seed=0, height=64, width=64, n_patches=10, n_scenes=16, n_lights=3)
    asyncio.run(write_dataset(tmp_path / "illumination", 64, make_item, workers=4))
    groups = load_illumination_groups(tmp_path / "illumination")
    train, held_out = split_groups(groups, 0.25, seed=0)
    class_names = sorted({g.label for g in groups})

    base = build_classifier(class_names, pretrained=True)
    config = FeaturesTrainConfig(epochs=5, batch_size=4, learning_rate=1e-4, consistency_weight=1.0, seed=0)
    tuned = finetune_features(base, train, config)
    baseline = finetune_features(base, train, FeaturesTrainConfig(
        epochs=5, batch_size=4, learning_rate=1e-4, consistency_weight=0.0, seed=0,
    ))

    assert mean_group_distance(tuned, held_out) < mean_group_distance(base, held_out)
    assert classification_accuracy(baseline, held_out) - classification_accuracy(tuned, held_out) <= 0.10
