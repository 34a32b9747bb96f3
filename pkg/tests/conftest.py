"""
Fixtures compartilhadas: ambiente isolado, modelos minúsculos e jobs sintéticos
"""

import numpy as np
import pytest

from config import Config, DIPConfig
from decomposition import DecompositionModel, DecompositionNet
from dip import AuxiliaryModels, assemble_job
from discriminator import DiscriminatorModel, ShadingDiscriminator
from features import build_classifier
from imaging import FIELD_DTYPE, LightSpec
from networks import seed_everything
from normals import SyntheticNormalEstimator, scene_silhouette, synth_scene
from synth import MondrianSpec, gen_mondrian

SIZE = 32


@pytest.fixture
def env(tmp_path, monkeypatch) -> Config:
    monkeypatch.setenv("RESHADE_CACHE_DIR", str(tmp_path / "cache"))
    monkeypatch.setenv("TORCH_DEVICE", "cpu")
    monkeypatch.delenv("LOG_FILE", raising=False)
    return Config()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_decomposition() -> DecompositionModel:
    seed_everything(0)
    architecture = {"depth": 2, "base_width": 4}
    return DecompositionModel(net=DecompositionNet(**architecture).eval(), architecture=architecture, epochs=1)


@pytest.fixture
def tiny_discriminator() -> DiscriminatorModel:
    seed_everything(0)
    architecture = {"depth": 2, "base_width": 4}
    model = DiscriminatorModel(net=ShadingDiscriminator(**architecture), architecture=architecture, epochs=1)
    return model.freeze()


@pytest.fixture
def tiny_features():
    seed_everything(0)
    extractor = build_classifier(["class_00", "class_01"], pretrained=False, image_size=64)
    extractor.epochs = 1
    return extractor.freeze()


@pytest.fixture
def tiny_models(tiny_decomposition) -> AuxiliaryModels:
    return AuxiliaryModels(decomposition=tiny_decomposition, normals=SyntheticNormalEstimator())


@pytest.fixture
def prepared_job():
    """Esfera de albedo constante colada num plano sob outra luz, com campos exatos"""
    mask = scene_silhouette("sphere", SIZE, SIZE)
    albedo_source = np.full((SIZE, SIZE, 3), 0.6, dtype=FIELD_DTYPE)
    source = synth_scene("sphere", SIZE, SIZE, LightSpec.from_vector((0.4, 0.4, 0.8)), albedo_source)
    albedo_target = np.full((SIZE, SIZE, 3), 0.7, dtype=FIELD_DTYPE)
    target = synth_scene("plane", SIZE, SIZE, LightSpec.from_vector((-0.3, 0.2, 0.9)), albedo_target)
    return assemble_job(
        target=target.image,
        mask=mask,
        source_placed=source.image,
        albedo_source_placed=albedo_source,
        shading_source_placed=source.shading,
        albedo_target=albedo_target,
        shading_target=target.shading,
        normals_source_placed=source.normals,
        normals_target=target.normals,
    )


@pytest.fixture
def dip_config() -> DIPConfig:
    return DIPConfig(
        iterations=5, noise_channels=4, depth=2, base_width=4,
        loss_weights=(1.0, 0.0, 0.0), seed=7, log_every=0,
    )


@pytest.fixture
def textured_plane():
    albedo = gen_mondrian(MondrianSpec(height=64, width=64, n_patches=8, rng_seed=3))
    return synth_scene("plane", 64, 64, LightSpec.from_vector((0.3, -0.2, 0.9)), albedo)
