import httpx
import numpy as np
import pytest
import torch

from errors import EstimatorError, InvalidFieldError
from imaging import LightSpec, validate_normals
from normals import (
    FACING,
    PretrainedNormalEstimator,
    SyntheticNormalEstimator,
    build_estimator,
    composite_normals,
    download_checkpoint,
    estimate_normals,
    renormalize,
    scene_silhouette,
    synth_scene,
)

LIGHT = LightSpec.from_vector((0.3, 0.4, 0.85))


def _angular_error(a, b):
    cos = np.clip((a * b).sum(axis=-1), -1.0, 1.0)
    return np.degrees(np.arccos(cos))


def test_renormalize_handles_degenerate_vectors():
    raw = np.array([[[0.0, 0.0, 0.0], [0.0, 0.0, -2.0], [3.0, 0.0, 4.0]]])
    out = renormalize(raw)
    assert np.allclose(out[0, 0], FACING)
    assert np.allclose(out[0, 1], [0.0, 0.0, 1.0])
    assert np.allclose(out[0, 2], [0.6, 0.0, 0.8])


def test_synth_scene_normals_are_unit():
    for kind in ("sphere", "plane", "two_spheres"):
        render = synth_scene(kind, 48, 48, LIGHT)
        validate_normals(render.normals)
        assert render.image.shape == (48, 48, 3)


def test_synth_scene_rejects_unknown_kind():
    with pytest.raises(ValueError):
        synth_scene("cube", 16, 16, LIGHT)


def test_synthetic_estimator_on_plane():
    render = synth_scene("plane", 64, 64, LIGHT)
    normals = estimate_normals(SyntheticNormalEstimator(), render.image)
    assert np.allclose(normals, FACING)


def test_synthetic_estimator_on_textured_plane(textured_plane):
    normals = estimate_normals(SyntheticNormalEstimator(), textured_plane.image)
    assert _angular_error(normals, textured_plane.normals).mean() < 2.0


@pytest.mark.parametrize("kind", ["sphere", "two_spheres"])
def test_synthetic_estimator_recovers_spheres(kind):
    render = synth_scene(kind, 64, 64, LIGHT)
    normals = estimate_normals(SyntheticNormalEstimator(), render.image)
    validate_normals(normals)
    silhouette = scene_silhouette(kind, 64, 64) > 0
    assert _angular_error(normals, render.normals)[silhouette].mean() < 15.0


def test_estimator_validates_input():
    with pytest.raises(InvalidFieldError):
        estimate_normals(SyntheticNormalEstimator(), np.zeros((8, 8), np.float32))


def test_composite_normals_selects_by_mask():
    a = synth_scene("sphere", 32, 32, LIGHT).normals
    b = synth_scene("plane", 32, 32, LIGHT).normals
    mask = scene_silhouette("sphere", 32, 32)
    out = composite_normals(a, b, mask)
    assert np.array_equal(out[mask == 1], a[mask == 1])
    assert np.array_equal(out[mask == 0], b[mask == 0])


class _TiltedNormals(torch.nn.Module):
    def forward(self, x):
        out = torch.zeros_like(x)
        out[:, 0] = 1.0
        out[:, 2] = 1.0
        return out


def test_pretrained_estimator_from_torchscript(tmp_path, rng):
    path = tmp_path / "normals.ts"
    torch.jit.script(_TiltedNormals()).save(str(path))
    estimator = build_estimator("pretrained", path)
    normals = estimator.estimate(rng.uniform(0, 1, (8, 8, 3)).astype(np.float32))
    assert np.allclose(normals, [np.sqrt(0.5), 0.0, np.sqrt(0.5)], atol=1e-6)


def test_pretrained_estimator_missing_checkpoint(tmp_path):
    with pytest.raises(EstimatorError):
        PretrainedNormalEstimator(tmp_path / "missing.ts")
    with pytest.raises(EstimatorError):
        build_estimator("pretrained", None)
    with pytest.raises(EstimatorError):
        build_estimator("midas")


def test_download_failure_leaves_no_partial_file(tmp_path, monkeypatch):
    def refuse(*args, **kwargs):
        raise httpx.ConnectError("sem rede")

    monkeypatch.setattr(httpx, "stream", refuse)
    destination = tmp_path / "normals.ts"
    with pytest.raises(EstimatorError):
        download_checkpoint("https://example.invalid/normals.ts", destination)
    assert not destination.exists()
    assert not list(tmp_path.glob("*.part"))
