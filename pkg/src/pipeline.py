"""
Orquestração das etapas: despacho de tarefas, demo ponta a ponta e validação de artefatos
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List

import numpy as np
from loguru import logger

from config import Config, PipelineConfig
from datasets import DECOMPOSITION_DIRS, DISTORTION_DIRS, check_layout, load_illumination_groups
from decomposition import DecompositionModel, decompose
from discriminator import DiscriminatorModel, score
from errors import CheckpointError, ConfigError, StageError
from features import FeatureExtractor, extract_features
from image_io import save_image, save_mask
from imaging import FIELD_DTYPE, LightSpec, cut_and_paste
from networks import resolve_device
from normals import build_estimator, estimate_normals, scene_silhouette, synth_scene
from processors import (
    DataProcessor,
    DecompositionProcessor,
    DiscriminatorProcessor,
    FeaturesProcessor,
    NormalsProcessor,
    ReshadeProcessor,
)
from processors.data_processor import GEN_DATA
from processors.decomposition_processor import DECOMPOSE, TRAIN_DECOMPOSITION
from processors.discriminator_processor import TRAIN_DISCRIMINATOR
from processors.features_processor import FINETUNE_FEATURES
from processors.normals_processor import ESTIMATE_NORMALS
from processors.reshade_processor import BENCHMARK_DIP, RESHADE
from report import write_report
from synth import MondrianSpec, gen_mondrian, sample_seed

DEMO = "demo"
VALIDATE = "validate"

DEMO_SOURCE_LIGHT = (0.5, 0.5, 0.7)
DEMO_TARGET_LIGHT = (-0.4, 0.3, 0.85)
DEMO_BACKDROP = 0.5
SMOKE_SIZE = 32


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str = ""


def demo_assets(out_dir: Path, height: int, width: int, seed: int, n_patches: int = 10) -> Dict[str, Path]:
    """Esfera texturizada sobre fundo constante (fonte) e plano texturizado sob outra luz (alvo)"""
    out_dir = Path(out_dir)
    mask = scene_silhouette("sphere", height, width)
    sphere_albedo = gen_mondrian(MondrianSpec(height=height, width=width, n_patches=n_patches, rng_seed=sample_seed(seed, 0)))
    backdrop = np.full((height, width, 3), DEMO_BACKDROP, dtype=FIELD_DTYPE)
    source = synth_scene(
        "sphere", height, width, LightSpec.from_vector(DEMO_SOURCE_LIGHT), cut_and_paste(sphere_albedo, backdrop, mask)
    )
    plane_albedo = gen_mondrian(MondrianSpec(height=height, width=width, n_patches=n_patches, rng_seed=sample_seed(seed, 1)))
    target = synth_scene("plane", height, width, LightSpec.from_vector(DEMO_TARGET_LIGHT), plane_albedo)

    paths = {"source": out_dir / "source.png", "mask": out_dir / "mask.png", "target": out_dir / "target.png"}
    save_image(paths["source"], source.image)
    save_mask(paths["mask"], mask)
    save_image(paths["target"], target.image)
    logger.info(f"🎨 Assets da demo gravados em {out_dir}")
    return paths


def _dataset_ready(root: Path) -> bool:
    return (Path(root) / "manifest.env").exists()


class PipelineClient:
    """Despacha cada subcomando para o processador da etapa"""

    def __init__(self, config: Config, pipeline: PipelineConfig):
        self.config = config
        self.pipeline = pipeline

        data = DataProcessor(config, pipeline)
        decomposition = DecompositionProcessor(config, pipeline)
        reshade = ReshadeProcessor(config, pipeline)
        self.processors = {
            GEN_DATA: data,
            TRAIN_DECOMPOSITION: decomposition,
            DECOMPOSE: decomposition,
            TRAIN_DISCRIMINATOR: DiscriminatorProcessor(config, pipeline),
            FINETUNE_FEATURES: FeaturesProcessor(config, pipeline),
            ESTIMATE_NORMALS: NormalsProcessor(config, pipeline),
            RESHADE: reshade,
            BENCHMARK_DIP: reshade,
        }

    async def run(self, task: Dict[str, Any]) -> Dict[str, Any]:
        """Executa uma tarefa; qualquer falha sai como StageError com o nome da etapa"""
        action = task.get("action", "")
        processor = self.processors.get(action)
        if not processor:
            raise StageError(action, ConfigError(f"Processador não encontrado para a etapa: {action}"))
        logger.info(f"⚙️  Executando etapa: {action}")
        try:
            return await processor.process(task)
        except Exception as e:
            raise StageError(action, e) from e

    def required_checkpoints(self) -> List[str]:
        _, w_n, w_f = self.pipeline.dip.loss_weights
        names = ["decomposition"]
        if w_n > 0:
            names.append("discriminator")
        if w_f > 0:
            names.append("features")
        return names

    async def train_missing(self, missing: List[str]) -> None:
        """Treina, em ordem de dependência, as etapas cujos checkpoints faltam"""
        pipeline = self.pipeline
        plan = [
            ("decomposition", "decomposition", TRAIN_DECOMPOSITION, pipeline.decomposition.dataset_dir),
            ("discriminator", "distortion", TRAIN_DISCRIMINATOR, pipeline.discriminator.dataset_dir),
            ("features", "illumination", FINETUNE_FEATURES, pipeline.features.dataset_dir),
        ]
        for name, kind, action, dataset_dir in plan:
            if name not in missing:
                continue
            if not _dataset_ready(Path(dataset_dir)):
                await self.run({"action": GEN_DATA, "kind": kind, "out_dir": dataset_dir})
            await self.run({"action": action})

    async def run_end_to_end(
        self, out_dir: Path, train_missing: bool = False, benchmark: bool = False
    ) -> Dict[str, Any]:
        """Demo sintética completa: checkpoints, job, reshading e relatório"""
        out_dir = Path(out_dir)
        required = self.required_checkpoints()
        missing = [n for n in required if not self.pipeline.checkpoint_path(n, self.config).exists()]
        if missing:
            if not train_missing:
                raise StageError(
                    DEMO,
                    CheckpointError(f"Checkpoints ausentes: {', '.join(missing)} (use --train-missing)"),
                )
            logger.info(f"🏋️ Treinando etapas ausentes: {', '.join(missing)}")
            await self.train_missing(missing)

        data = self.pipeline.data
        try:
            inputs = demo_assets(out_dir / "inputs", data.height, data.width, self.pipeline.seed, data.n_patches)
        except Exception as e:
            raise StageError(DEMO, e) from e

        job = {"source": inputs["source"], "mask": inputs["mask"], "target": inputs["target"]}
        reshaded = await self.run({"action": RESHADE, **job, "out_dir": out_dir / "reshade"})
        result = reshaded["result"]

        rows = None
        if benchmark:
            bench = await self.run({"action": BENCHMARK_DIP, **job, "out_dir": out_dir / "benchmark"})
            rows = bench["rows"]

        extra = {}
        try:
            model = DecompositionModel.load(
                self.pipeline.checkpoint_path("decomposition", self.config), resolve_device(self.config.torch_device)
            )
            albedo_y, _ = decompose(model, result.output)
            inside = result.mask > 0.5
            extra["albedo_invariance_mse"] = float(np.mean((albedo_y[inside] - result.albedo_object[inside]) ** 2))
        except Exception as e:
            raise StageError(DEMO, e) from e

        report = write_report(out_dir, result, inputs, reshaded["outputs"], reshaded["checks"], rows, extra)
        return {**reshaded, "report": report, "extra": extra, "benchmark": rows}

    def validate_artifacts(self) -> List[CheckResult]:
        """Carrega cada checkpoint com inferência de fumaça e confere os datasets; nunca para na primeira falha"""
        device = resolve_device(self.config.torch_device)
        checks = [
            self._check("checkpoint:decomposition", self._smoke_decomposition, device),
            self._check("checkpoint:discriminator", self._smoke_discriminator, device),
            self._check("checkpoint:features", self._smoke_features, device),
            self._check("checkpoint:normals", self._smoke_normals, device),
        ]
        datasets = [
            ("dataset:decomposition", self.pipeline.decomposition.dataset_dir, lambda p: check_layout(p, DECOMPOSITION_DIRS)),
            ("dataset:distortion", self.pipeline.discriminator.dataset_dir, lambda p: check_layout(p, DISTORTION_DIRS)),
            ("dataset:illumination", self.pipeline.features.dataset_dir, load_illumination_groups),
        ]
        for name, root, checker in datasets:
            root = Path(root)
            if not root.exists():
                checks.append(CheckResult(name, True, f"ausente ({root}), ignorado"))
                continue
            checks.append(self._check(name, lambda: f"{len(checker(root))} itens em {root}"))

        for check in checks:
            mark = "✅" if check.ok else "❌"
            logger.info(f"{mark} {check.name}: {check.detail}")
        return checks

    def _check(self, name: str, fn, *args) -> CheckResult:
        try:
            return CheckResult(name, True, fn(*args))
        except Exception as e:
            return CheckResult(name, False, str(e))

    def _smoke_image(self) -> np.ndarray:
        rng = np.random.default_rng(0)
        return rng.uniform(0.0, 1.0, (SMOKE_SIZE, SMOKE_SIZE, 3)).astype(FIELD_DTYPE)

    def _smoke_decomposition(self, device) -> str:
        path = self.pipeline.checkpoint_path("decomposition", self.config)
        albedo, shading = decompose(DecompositionModel.load(path, device), self._smoke_image())
        if albedo.shape != (SMOKE_SIZE, SMOKE_SIZE, 3) or shading.shape != (SMOKE_SIZE, SMOKE_SIZE):
            raise CheckpointError(f"Formatos inesperados: {albedo.shape}, {shading.shape}")
        if albedo.min() < 0 or albedo.max() > 1 or shading.min() < 0 or shading.max() > 1:
            raise CheckpointError("Saída fora de [0,1]")
        return str(path)

    def _smoke_discriminator(self, device) -> str:
        path = self.pipeline.checkpoint_path("discriminator", self.config)
        normals = np.zeros((SMOKE_SIZE, SMOKE_SIZE, 3), dtype=FIELD_DTYPE)
        normals[..., 2] = 1.0
        shading = np.full((SMOKE_SIZE, SMOKE_SIZE), 0.5, dtype=FIELD_DTYPE)
        global_score, pixel_map = score(DiscriminatorModel.load(path, device), normals, shading)
        if not 0.0 <= global_score <= 1.0 or pixel_map.shape != shading.shape:
            raise CheckpointError(f"Saída inválida: escore {global_score}, mapa {pixel_map.shape}")
        return str(path)

    def _smoke_features(self, device) -> str:
        path = self.pipeline.checkpoint_path("features", self.config)
        extractor = FeatureExtractor.load(path, device)
        vector = extract_features(extractor, self._smoke_image())
        if vector.shape != (extractor.feature_dim,) or not np.all(np.isfinite(vector)):
            raise CheckpointError(f"Vetor de features inválido: {vector.shape}")
        return str(path)

    def _smoke_normals(self, device) -> str:
        path = self.pipeline.checkpoint_path("normals", self.config)
        # Validação não baixa nada
        estimator = build_estimator(self.pipeline.normals.backend, path, device)
        normals = estimate_normals(estimator, self._smoke_image())
        if not np.allclose(np.linalg.norm(normals, axis=-1), 1.0, atol=1e-3):
            raise CheckpointError("Normais não unitárias")
        return f"backend {self.pipeline.normals.backend}"
