from dataclasses import replace

import numpy as np
import pytest
import torch

from config import DIPConfig
from dip import (
    AuxiliaryModels,
    ReshadeJob,
    assemble_job,
    benchmark_batched_noise,
    compute_losses,
    dip_forward,
    init_state,
    prepare_job,
    reshade_prepared,
    run_reshade,
    shading_loss,
    total_variation,
)
from errors import CheckpointError, NonFiniteLossError
from imaging import LightSpec, Placement, cut_and_paste
from networks import image_to_tensor
from normals import scene_silhouette, synth_scene
from synth import MondrianSpec, PerlinSpec, gen_mondrian, gen_perlin


def _relative_error(a, b):
    return float(np.abs(a - b).max() / max(np.abs(a).max(), np.abs(b).max(), 1e-12))


def test_shading_loss_gradient_matches_finite_differences():
    gen = torch.Generator().manual_seed(0)
    s_star = torch.rand(1, 1, 8, 8, generator=gen, dtype=torch.float64, requires_grad=True)
    target = torch.rand(1, 1, 8, 8, generator=gen, dtype=torch.float64)
    mask = torch.zeros(1, 1, 8, 8, dtype=torch.float64)
    mask[..., 2:5, 3:6] = 1.0

    shading_loss(s_star, target, mask).sum().backward()
    analytic = s_star.grad.numpy().copy()

    eps = 1e-6
    numeric = np.zeros_like(analytic)
    base = s_star.detach().clone()
    for idx in np.ndindex(base.shape):
        plus, minus = base.clone(), base.clone()
        plus[idx] += eps
        minus[idx] -= eps
        numeric[idx] = (
            shading_loss(plus, target, mask).item() - shading_loss(minus, target, mask).item()
        ) / (2 * eps)
    assert _relative_error(analytic, numeric) < 1e-3
    # Sem gradiente dentro da máscara
    assert np.all(analytic[..., 2:5, 3:6] == 0)


def test_shading_loss_ignores_masked_region():
    target = torch.rand(1, 1, 8, 8)
    mask = torch.zeros(1, 1, 8, 8)
    mask[..., :4, :] = 1.0
    s_star = target.clone()
    s_star[..., :4, :] = 0.0
    assert shading_loss(s_star, target, mask).item() == 0.0


def test_total_variation_of_constant_is_zero():
    assert total_variation(torch.full((2, 1, 8, 8), 0.3)).tolist() == [0.0, 0.0]


def test_reshade_keeps_surroundings(prepared_job, tiny_models, dip_config):
    result = reshade_prepared(prepared_job, tiny_models, dip_config)
    outside = prepared_job.mask == 0
    assert np.array_equal(result.output[outside], prepared_job.target[outside])
    checks = result.check_invariants()
    assert all(checks.values()), checks


def test_result_contents(prepared_job, tiny_models, dip_config):
    result = reshade_prepared(prepared_job, tiny_models, dip_config)
    assert len(result.loss_history) == dip_config.iterations
    totals = [r.total for r in result.loss_history]
    assert result.best_iteration == int(np.argmin(totals))
    assert result.generated_shading.shape == (32, 32)
    assert result.generated_shading.min() >= 0 and result.generated_shading.max() <= 1
    assert np.array_equal(result.naive_composite, prepared_job.naive_composite)
    assert np.array_equal(
        result.composite_albedo, cut_and_paste(prepared_job.albedo_object, prepared_job.albedo_target, prepared_job.mask)
    )
    assert all(r.l_n == 0.0 and r.l_f == 0.0 for r in result.loss_history)
    assert result.pixel_map is None


def test_reshade_is_deterministic(prepared_job, tiny_models, dip_config):
    a = reshade_prepared(prepared_job, tiny_models, dip_config)
    b = reshade_prepared(prepared_job, tiny_models, dip_config)
    assert np.array_equal(a.output, b.output)
    assert [r.total for r in a.loss_history] == [r.total for r in b.loss_history]


def test_unperturbed_batch_matches_single_noise(prepared_job, tiny_models, dip_config):
    single = reshade_prepared(prepared_job, tiny_models, dip_config)
    batched = reshade_prepared(prepared_job, tiny_models, replace(dip_config, noise_batch=4, noise_perturb_sigma=0.0))
    assert np.allclose(
        [r.total for r in single.loss_history], [r.total for r in batched.loss_history], rtol=1e-4, atol=1e-7
    )


def test_perturbed_batch_has_distinct_candidates(prepared_job, tiny_models, dip_config):
    state = init_state(prepared_job, tiny_models, replace(dip_config, noise_batch=3, noise_perturb_sigma=0.5))
    s_star = dip_forward(state, 0)
    assert s_star.shape == (3, 1, 32, 32)
    assert not torch.equal(s_star[0], s_star[1])
    assert torch.equal(dip_forward(state, 0), s_star)


def test_missing_auxiliary_models_are_rejected(prepared_job, tiny_models, dip_config):
    with pytest.raises(CheckpointError):
        init_state(prepared_job, tiny_models, replace(dip_config, loss_weights=(1.0, 1.0, 0.0)))
    with pytest.raises(CheckpointError):
        init_state(prepared_job, tiny_models, replace(dip_config, loss_weights=(1.0, 0.0, 1.0)))


def test_non_finite_loss_is_reported(prepared_job, tiny_models, dip_config):
    state = init_state(prepared_job, tiny_models, dip_config)
    s_star = torch.full((1, 1, 32, 32), float("nan"))
    with pytest.raises(NonFiniteLossError) as info:
        compute_losses(state, s_star, iteration=3)
    assert info.value.component == "L_s"
    assert info.value.iteration == 3


def test_all_loss_terms(prepared_job, tiny_models, tiny_discriminator, tiny_features, dip_config):
    models = AuxiliaryModels(
        decomposition=tiny_models.decomposition,
        discriminator=tiny_discriminator,
        features=tiny_features,
        normals=tiny_models.normals,
    )
    config = replace(dip_config, iterations=2, loss_weights=(1.0, 0.1, 0.01), pixel_map_loss=True, tv_weight=0.1)
    result = reshade_prepared(prepared_job, models, config)
    for record in result.loss_history:
        assert record.l_n > 0 and np.isfinite(record.l_n)
        assert record.l_f >= 0 and np.isfinite(record.l_f)
        assert record.total == pytest.approx(
            record.l_s + 0.1 * record.l_n + 0.01 * record.l_f + 0.1 * record.tv, rel=1e-5
        )
    assert result.pixel_map.shape == (32, 32)
    assert all(result.check_invariants().values())


class _UndecidedDiscriminator:
    def probabilities(self, normals, shading):
        batch, _, height, width = shading.shape
        return torch.full((batch,), 0.5), torch.full((batch, height, width), 0.5)


def test_undecided_discriminator_gives_log_two(prepared_job, tiny_models, dip_config):
    models = replace(tiny_models, discriminator=_UndecidedDiscriminator())
    state = init_state(prepared_job, models, replace(dip_config, loss_weights=(1.0, 1.0, 0.0)))
    terms = compute_losses(state, dip_forward(state, 0))
    assert terms.l_n.item() == pytest.approx(np.log(2), abs=1e-6)


def test_feature_loss_vanishes_when_output_is_naive_composite(prepared_job, tiny_models, tiny_features, dip_config):
    models = replace(tiny_models, features=tiny_features)
    state = init_state(prepared_job, models, replace(dip_config, loss_weights=(1.0, 0.0, 1.0)))
    terms = compute_losses(state, image_to_tensor(prepared_job.shading_source))
    assert torch.allclose(terms.output, image_to_tensor(prepared_job.naive_composite), atol=1e-6)
    assert terms.l_f.item() == pytest.approx(0.0, abs=1e-6)


def test_best_total_is_the_loss_of_the_returned_candidate(prepared_job, tiny_models, dip_config):
    config = replace(dip_config, noise_batch=3, noise_perturb_sigma=0.5)
    result = reshade_prepared(prepared_job, tiny_models, config)
    returned = shading_loss(
        image_to_tensor(result.generated_shading),
        image_to_tensor(prepared_job.shading_target),
        image_to_tensor(prepared_job.mask),
    )
    assert result.best_total == pytest.approx(returned.item(), rel=1e-5, abs=1e-8)
    # O lote devolve seu melhor elemento, nunca pior que a média registrada
    assert result.best_total <= result.loss_history[result.best_iteration].total + 1e-8


def _job(models, size=32):
    albedo = gen_mondrian(MondrianSpec(height=size, width=size, n_patches=4, rng_seed=1))
    source = synth_scene("sphere", size, size, LightSpec.from_vector((0.4, 0.4, 0.8)), albedo)
    target_albedo = gen_mondrian(MondrianSpec(height=size, width=size, n_patches=4, rng_seed=2))
    target = synth_scene("plane", size, size, LightSpec.from_vector((-0.3, 0.2, 0.9)), target_albedo)
    mask = np.zeros((size, size), np.float32)
    mask[8:20, 8:20] = 1.0
    return ReshadeJob(source=source.image, source_mask=mask, target=target.image, models=models)


def test_prepare_job_fields(tiny_models):
    job = replace(_job(tiny_models), placement=Placement(dx=4, dy=2))
    prepared = prepare_job(job)
    assert prepared.mask.sum() == job.source_mask.sum()
    assert np.all(prepared.mask[10:22, 12:24] == 1)
    inside = prepared.mask == 1
    assert np.all(prepared.degraded_shading[inside] == 0)
    assert np.array_equal(prepared.naive_composite[~inside], prepared.target[~inside])
    assert np.array_equal(prepared.normals_composite[~inside], prepared.normals_target[~inside])
    assert np.all(prepared.albedo_object[~inside] == 0)


def test_prepare_job_requires_models():
    with pytest.raises(CheckpointError):
        prepare_job(_job(AuxiliaryModels()))


def test_run_reshade_with_placement(tiny_models, dip_config):
    job = replace(_job(tiny_models), placement=Placement(dx=-4, dy=6))
    result = run_reshade(job, dip_config)
    outside = result.mask == 0
    assert np.array_equal(result.output[outside], job.target[outside])


def test_benchmark_rows(prepared_job, tiny_models, dip_config):
    job = _job(tiny_models)
    rows = benchmark_batched_noise(job, replace(dip_config, iterations=3), [1, 2], prepared=prepared_job)
    assert [r.noise_batch for r in rows] == [1, 2]
    assert all(r.iterations == 3 for r in rows)
    assert rows[0].speedup == 1.0
    assert all(r.iterations_per_second > 0 for r in rows)


def test_benchmark_time_budget(prepared_job, tiny_models, dip_config):
    rows = benchmark_batched_noise(
        _job(tiny_models), replace(dip_config, iterations=10_000), [1], time_budget=0.5, prepared=prepared_job
    )
    assert 1 <= rows[0].iterations < 10_000


@pytest.mark.slow
def test_inpainting_sanity(tiny_models):
    size = 64
    shading = gen_perlin(PerlinSpec(height=size, width=size, rng_seed=5))
    mask = scene_silhouette("sphere", size, size)
    albedo = np.full((size, size, 3), 0.5, np.float32)
    prepared = assemble_job(
        target=albedo * shading[..., None],
        mask=mask,
        source_placed=albedo * shading[..., None],
        albedo_source_placed=albedo,
        shading_source_placed=shading,
        albedo_target=albedo,
        shading_target=shading,
        normals_source_placed=synth_scene("plane", size, size, LightSpec()).normals,
        normals_target=synth_scene("plane", size, size, LightSpec()).normals,
    )
    config = DIPConfig(iterations=2000, loss_weights=(1.0, 0.0, 0.0), seed=0, log_every=0)
    result = reshade_prepared(prepared, tiny_models, config)
    assert result.loss_history[result.best_iteration].l_s < 1e-3


@pytest.mark.slow
def test_batched_noise_speedup(prepared_job, tiny_models):
    config = DIPConfig(iterations=100_000, loss_weights=(1.0, 0.0, 0.0), seed=0, log_every=0)
    rows = benchmark_batched_noise(_job(tiny_models), config, [1, 4], time_budget=60.0, prepared=prepared_job)
    assert rows[1].speedup >= 1.5


@pytest.mark.slow
def test_trailing_window_minimum_does_not_increase(prepared_job, tiny_models):
    config = DIPConfig(
        iterations=400, noise_channels=8, depth=2, base_width=8, loss_weights=(1.0, 0.0, 0.0), seed=0, log_every=0,
    )
    totals = [r.total for r in reshade_prepared(prepared_job, tiny_models, config).loss_history]
    minima = [min(totals[i:i + 50]) for i in range(0, len(totals), 50)]
    assert all(later <= earlier for earlier, later in zip(minima, minima[1:]))
