"""
Reshading por Deep Image Prior: a rede mapeia um ruído fixo para o shading S* do
fragmento colado, otimizada por par objeto-cena com modelos auxiliares congelados
"""

import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
from loguru import logger

from config import Config, DIPConfig, PipelineConfig
from decomposition import DecompositionModel, decompose
from discriminator import DiscriminatorModel
from errors import CheckpointError, InvalidFieldError, NonFiniteLossError, ShapeMismatchError
from features import FeatureExtractor, feature_distance
from imaging import (
    FIELD_DTYPE,
    Placement,
    cut_and_paste,
    extract_object,
    place_field,
    place_mask,
    validate_image,
    validate_mask,
)
from networks import UNet, image_to_tensor, seed_everything, tensor_to_image
from normals import NormalEstimator, build_estimator, composite_normals, estimate_normals
from synth import sample_seed

# Ganho reportado para o ruído em lote com B = 4
REFERENCE_SPEEDUP = 4.0


@dataclass
class AuxiliaryModels:
    """Modelos congelados consultados pelo reshading"""

    decomposition: Optional[DecompositionModel] = None
    discriminator: Optional[DiscriminatorModel] = None
    features: Optional[FeatureExtractor] = None
    normals: Optional[NormalEstimator] = None

    @classmethod
    def from_checkpoints(
        cls, config: PipelineConfig, env: Config, device: torch.device = torch.device("cpu")
    ) -> "AuxiliaryModels":
        """Discriminador e features só são carregados quando o peso correspondente é > 0"""
        _, w_n, w_f = config.dip.loss_weights
        discriminator = features = None
        if w_n > 0:
            discriminator = DiscriminatorModel.load(config.checkpoint_path("discriminator", env), device).freeze()
        if w_f > 0:
            features = FeatureExtractor.load(config.checkpoint_path("features", env), device).freeze()
        return cls(
            decomposition=DecompositionModel.load(config.checkpoint_path("decomposition", env), device),
            discriminator=discriminator,
            features=features,
            normals=build_estimator(
                config.normals.backend,
                config.checkpoint_path("normals", env),
                device,
                env.normals_checkpoint_url,
                env.download_timeout_seconds,
            ),
        )


@dataclass
class ReshadeJob:
    source: np.ndarray
    source_mask: np.ndarray
    target: np.ndarray
    placement: Placement = field(default_factory=Placement)
    models: AuxiliaryModels = field(default_factory=AuxiliaryModels)


@dataclass
class PreparedJob:
    """Campos calculados uma única vez, no quadro do alvo"""

    target: np.ndarray
    mask: np.ndarray
    source_placed: np.ndarray
    shading_source: np.ndarray
    albedo_object: np.ndarray
    albedo_target: np.ndarray
    shading_target: np.ndarray
    albedo_composite: np.ndarray
    degraded_shading: np.ndarray
    normals_source: np.ndarray
    normals_target: np.ndarray
    normals_composite: np.ndarray
    naive_composite: np.ndarray


def assemble_job(
    target: np.ndarray,
    mask: np.ndarray,
    source_placed: np.ndarray,
    albedo_source_placed: np.ndarray,
    shading_source_placed: np.ndarray,
    albedo_target: np.ndarray,
    shading_target: np.ndarray,
    normals_source_placed: np.ndarray,
    normals_target: np.ndarray,
) -> PreparedJob:
    """Composições CP a partir de campos já posicionados no quadro do alvo"""
    albedo_object = extract_object(albedo_source_placed, mask)
    return PreparedJob(
        target=target,
        mask=mask,
        source_placed=source_placed,
        shading_source=shading_source_placed,
        albedo_object=albedo_object,
        albedo_target=albedo_target,
        shading_target=shading_target,
        albedo_composite=cut_and_paste(albedo_object, albedo_target, mask),
        degraded_shading=((1.0 - mask) * shading_target).astype(FIELD_DTYPE),
        normals_source=normals_source_placed,
        normals_target=normals_target,
        normals_composite=composite_normals(normals_source_placed, normals_target, mask),
        naive_composite=cut_and_paste(source_placed, target, mask),
    )


def prepare_job(job: ReshadeJob) -> PreparedJob:
    """Decompõe fonte e alvo, estima normais e posiciona o objeto no alvo"""
    models = job.models
    if models.decomposition is None or models.normals is None:
        raise CheckpointError("Reshading exige os modelos de decomposição e de normais")
    validate_image(job.source, "fonte")
    validate_image(job.target, "alvo")
    validate_mask(job.source_mask)
    if job.source_mask.shape != job.source.shape[:2]:
        raise ShapeMismatchError(f"Máscara {job.source_mask.shape} não corresponde à fonte {job.source.shape[:2]}")

    h, w = job.target.shape[:2]
    mask = place_mask(job.source_mask, job.placement, h, w)

    def place(f: np.ndarray) -> np.ndarray:
        return place_field(f, job.placement, h, w)

    albedo_source, shading_source = decompose(models.decomposition, job.source)
    albedo_target, shading_target = decompose(models.decomposition, job.target)
    normals_source = estimate_normals(models.normals, job.source)
    normals_target = estimate_normals(models.normals, job.target)
    return assemble_job(
        target=job.target.astype(FIELD_DTYPE),
        mask=mask,
        source_placed=place(job.source.astype(FIELD_DTYPE)),
        albedo_source_placed=place(albedo_source),
        shading_source_placed=place(shading_source),
        albedo_target=albedo_target,
        shading_target=shading_target,
        normals_source_placed=place(normals_source),
        normals_target=normals_target,
    )


class DIPReshader(nn.Module):
    """U-Net de 5 níveis: ruído (B,C,H,W) → S* (B,1,H,W) em [0,1]"""

    def __init__(self, noise_channels: int = 32, depth: int = 5, base_width: int = 32):
        super().__init__()
        self.unet = UNet(noise_channels, 1, depth=depth, base_width=base_width)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.unet(z))


@dataclass
class DIPState:
    """Estado de uma otimização; pertence a um único job"""

    config: DIPConfig
    models: AuxiliaryModels
    net: DIPReshader
    noise: torch.Tensor
    seed: int
    target: torch.Tensor
    mask: torch.Tensor
    shading_target: torch.Tensor
    albedo_object: torch.Tensor
    normals_composite: torch.Tensor
    naive_features: Optional[torch.Tensor]

    @property
    def device(self) -> torch.device:
        return self.noise.device


def init_state(
    prepared: PreparedJob,
    models: AuxiliaryModels,
    config: DIPConfig,
    device: torch.device = torch.device("cpu"),
) -> DIPState:
    """Sorteia o ruído fixo z e inicializa θ a partir da seed"""
    _, w_n, w_f = config.loss_weights
    if w_n > 0 and models.discriminator is None:
        raise CheckpointError("Peso w_n > 0 exige o discriminador")
    if w_f > 0 and models.features is None:
        raise CheckpointError("Peso w_f > 0 exige o extrator de features")

    seed = config.seed or 0
    seed_everything(seed)
    h, w = prepared.target.shape[:2]
    noise = torch.randn((1, config.noise_channels, h, w), generator=torch.Generator().manual_seed(seed)).to(device)
    net = DIPReshader(config.noise_channels, config.depth, config.base_width).to(device)

    naive_features = None
    if models.features is not None:
        with torch.no_grad():
            naive_features = models.features.embed(image_to_tensor(prepared.naive_composite, device))

    return DIPState(
        config=config,
        models=models,
        net=net,
        noise=noise,
        seed=seed,
        target=image_to_tensor(prepared.target, device),
        mask=image_to_tensor(prepared.mask, device),
        shading_target=image_to_tensor(prepared.shading_target, device),
        albedo_object=image_to_tensor(prepared.albedo_object, device),
        normals_composite=image_to_tensor(prepared.normals_composite, device),
        naive_features=naive_features,
    )


def dip_forward(state: DIPState, iteration: int) -> torch.Tensor:
    """S* candidato (B,1,H,W); com B > 1, B cópias z + ε_b perturbadas por iteração"""
    batch = state.config.noise_batch
    z = state.noise
    if batch > 1:
        z = z.repeat(batch, 1, 1, 1)
        sigma = state.config.noise_perturb_sigma
        if sigma > 0:
            generator = torch.Generator().manual_seed(sample_seed(state.seed, iteration))
            z = z + (sigma * torch.randn(z.shape, generator=generator)).to(state.device)
    return state.net(z)


def shading_loss(s_star: torch.Tensor, shading_target: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Média por pixel de ((S* − S_T) ⊙ (1 − M))², um valor por elemento do lote

    Atua sobre a saída bruta da rede no quadro inteiro (termo de dados do inpainting).
    """
    residual = (s_star - shading_target) * (1.0 - mask)
    return residual.pow(2).mean(dim=(1, 2, 3))


def total_variation(s_star: torch.Tensor) -> torch.Tensor:
    dy = (s_star[..., 1:, :] - s_star[..., :-1, :]).abs().mean(dim=(1, 2, 3))
    dx = (s_star[..., :, 1:] - s_star[..., :, :-1]).abs().mean(dim=(1, 2, 3))
    return dx + dy


@dataclass
class LossRecord:
    iteration: int
    l_s: float
    l_n: float
    l_f: float
    total: float
    tv: float = 0.0


@dataclass
class LossTerms:
    """Componentes por elemento do lote (B,) e os campos que os produziram"""

    l_s: torch.Tensor
    l_n: torch.Tensor
    l_f: torch.Tensor
    tv: torch.Tensor
    total: torch.Tensor
    output: torch.Tensor
    composite_shading: torch.Tensor
    pixel_map: Optional[torch.Tensor]

    def record(self, iteration: int) -> LossRecord:
        return LossRecord(
            iteration=iteration,
            l_s=self.l_s.mean().item(),
            l_n=self.l_n.mean().item(),
            l_f=self.l_f.mean().item(),
            total=self.total.mean().item(),
            tv=self.tv.mean().item(),
        )


def compute_losses(state: DIPState, s_star: torch.Tensor, iteration: int = -1) -> LossTerms:
    """total = w_s·L_s + w_n·L_n + w_f·L_f (+ tv_weight·TV)

    Componentes sem modelo auxiliar (peso zero) valem 0.
    """
    config = state.config
    w_s, w_n, w_f = config.loss_weights
    zeros = torch.zeros(s_star.shape[0], device=s_star.device)

    s_y = cut_and_paste(s_star, state.shading_target, state.mask)
    output = cut_and_paste(state.albedo_object * s_star, state.target, state.mask)

    l_s = shading_loss(s_star, state.shading_target, state.mask)

    l_n, pixel_map = zeros, None
    if state.models.discriminator is not None:
        global_score, pixel_map = state.models.discriminator.probabilities(state.normals_composite, s_y)
        l_n = -torch.log(global_score.clamp(config.log_epsilon, 1.0))
        if config.pixel_map_loss:
            l_n = l_n + (-torch.log(pixel_map.clamp(config.log_epsilon, 1.0))).mean(dim=(1, 2))

    l_f = zeros
    if state.models.features is not None:
        l_f = feature_distance(state.models.features.embed(output), state.naive_features)

    tv = total_variation(s_star) if config.tv_weight > 0 else zeros
    total = w_s * l_s + w_n * l_n + w_f * l_f + config.tv_weight * tv

    for name, value in (("L_s", l_s), ("L_n", l_n), ("L_f", l_f), ("TV", tv)):
        if not bool(torch.isfinite(value).all()):
            raise NonFiniteLossError(name, float(value.detach().mean().item()), iteration)

    return LossTerms(
        l_s=l_s, l_n=l_n, l_f=l_f, tv=tv, total=total,
        output=output, composite_shading=s_y, pixel_map=pixel_map,
    )


def _check_surroundings(state: DIPState, output: torch.Tensor, iteration: int) -> None:
    outside = state.mask <= 0.5
    kept = torch.where(outside, output, torch.zeros_like(output))
    expected = torch.where(outside, state.target.expand_as(output), torch.zeros_like(output))
    if not torch.equal(kept, expected):
        raise InvalidFieldError(f"Saída alterou o entorno do objeto na iteração {iteration}")


@dataclass
class _BestIterate:
    iteration: int
    total: float
    element_total: float
    shading: torch.Tensor
    output: torch.Tensor
    composite_shading: torch.Tensor
    pixel_map: Optional[torch.Tensor]


def _optimize(state: DIPState, time_budget: Optional[float] = None) -> Tuple[List[LossRecord], _BestIterate]:
    """Descida de gradiente só em θ; guarda a melhor iteração pela perda total"""
    config = state.config
    optimizer = torch.optim.Adam(state.net.parameters(), lr=config.learning_rate)
    history: List[LossRecord] = []
    best: Optional[_BestIterate] = None
    start = time.perf_counter()

    for iteration in range(config.iterations):
        if time_budget is not None and history and time.perf_counter() - start >= time_budget:
            break
        state.net.train()
        optimizer.zero_grad()
        s_star = dip_forward(state, iteration)
        terms = compute_losses(state, s_star, iteration)
        _check_surroundings(state, terms.output, iteration)
        terms.total.mean().backward()
        optimizer.step()

        record = terms.record(iteration)
        history.append(record)
        if best is None or record.total < best.total:
            k = int(terms.total.argmin().item())
            best = _BestIterate(
                iteration=iteration,
                total=record.total,
                element_total=float(terms.total[k].item()),
                shading=s_star[k:k + 1].detach().clone(),
                output=terms.output[k:k + 1].detach().clone(),
                composite_shading=terms.composite_shading[k:k + 1].detach().clone(),
                pixel_map=None if terms.pixel_map is None else terms.pixel_map[k].detach().clone(),
            )
        if config.log_every and iteration % config.log_every == 0:
            logger.info(
                f"🔁 Iteração {iteration}/{config.iterations}: L_s={record.l_s:.6f} "
                f"L_n={record.l_n:.4f} L_f={record.l_f:.4f} total={record.total:.6f}"
            )
    return history, best


@dataclass
class ReshadeResult:
    output: np.ndarray
    generated_shading: np.ndarray
    composite_albedo: np.ndarray
    composite_shading: np.ndarray
    loss_history: List[LossRecord]
    best_iteration: int
    best_total: float
    naive_composite: np.ndarray
    target: np.ndarray
    mask: np.ndarray
    albedo_object: np.ndarray
    albedo_target: np.ndarray
    shading_target: np.ndarray
    pixel_map: Optional[np.ndarray] = None

    def check_invariants(self) -> Dict[str, bool]:
        """Entorno intacto e equações CP de ρ_y e S_y"""
        outside = self.mask < 0.5
        inside = ~outside
        formed = self.albedo_object * self.generated_shading[..., None]
        return {
            "surroundings_untouched": bool(np.array_equal(self.output[outside], self.target[outside])),
            "albedo_composite": bool(
                np.array_equal(self.composite_albedo, cut_and_paste(self.albedo_object, self.albedo_target, self.mask))
            ),
            "shading_composite": bool(
                np.array_equal(
                    self.composite_shading,
                    cut_and_paste(self.generated_shading, self.shading_target, self.mask),
                )
            ),
            "output_formation": bool(np.allclose(self.output[inside], formed[inside], atol=1e-6)),
        }


def reshade_prepared(
    prepared: PreparedJob,
    models: AuxiliaryModels,
    config: DIPConfig,
    device: torch.device = torch.device("cpu"),
) -> ReshadeResult:
    """Otimiza θ para um job já preparado e devolve a melhor iteração"""
    state = init_state(prepared, models, config, device)
    logger.info(f"🚀 Reshading: {config.iterations} iterações, B={config.noise_batch}, seed={state.seed}")
    history, best = _optimize(state)
    logger.info(f"✅ Melhor iteração {best.iteration} (total={best.element_total:.6f})")
    return ReshadeResult(
        output=tensor_to_image(best.output).astype(FIELD_DTYPE),
        generated_shading=tensor_to_image(best.shading).astype(FIELD_DTYPE),
        composite_albedo=prepared.albedo_composite,
        composite_shading=tensor_to_image(best.composite_shading).astype(FIELD_DTYPE),
        loss_history=history,
        best_iteration=best.iteration,
        best_total=best.element_total,
        naive_composite=prepared.naive_composite,
        target=prepared.target,
        mask=prepared.mask,
        albedo_object=prepared.albedo_object,
        albedo_target=prepared.albedo_target,
        shading_target=prepared.shading_target,
        pixel_map=None if best.pixel_map is None else best.pixel_map.cpu().numpy().astype(FIELD_DTYPE),
    )


def run_reshade(job: ReshadeJob, config: DIPConfig, device: torch.device = torch.device("cpu")) -> ReshadeResult:
    return reshade_prepared(prepare_job(job), job.models, config, device)


@dataclass
class BenchmarkRow:
    noise_batch: int
    iterations: int
    seconds: float
    iterations_per_second: float
    initial_loss: float
    best_loss: float
    loss_decrease_rate: float
    speedup: float = 1.0


def benchmark_batched_noise(
    job: ReshadeJob,
    config: DIPConfig,
    b_values: Sequence[int],
    time_budget: Optional[float] = None,
    device: torch.device = torch.device("cpu"),
    prepared: Optional[PreparedJob] = None,
) -> List[BenchmarkRow]:
    """Iterações/s e queda de perda por segundo para cada tamanho de lote B

    `speedup` é a razão entre a taxa de queda da perda e a da linha B = 1
    (ou da primeira linha, se B = 1 não for medido).
    """
    if prepared is None:
        prepared = prepare_job(job)
    rows = []
    for batch in b_values:
        state = init_state(prepared, job.models, replace(config, noise_batch=int(batch)), device)
        start = time.perf_counter()
        history, best = _optimize(state, time_budget)
        seconds = time.perf_counter() - start
        initial = history[0].total
        rows.append(
            BenchmarkRow(
                noise_batch=int(batch),
                iterations=len(history),
                seconds=seconds,
                iterations_per_second=len(history) / seconds,
                initial_loss=initial,
                best_loss=best.total,
                loss_decrease_rate=(initial - best.total) / seconds,
            )
        )
        logger.info(f"⏱️ B={batch}: {len(history) / seconds:.1f} it/s, perda {initial:.5f} → {best.total:.5f}")

    reference = next((r for r in rows if r.noise_batch == 1), rows[0] if rows else None)
    for row in rows:
        if reference is not None and reference.loss_decrease_rate > 0:
            row.speedup = row.loss_decrease_rate / reference.loss_decrease_rate
    return rows
