"""
Processador de geração dos datasets sintéticos
"""

from functools import partial
from pathlib import Path
from typing import Any, Dict

from loguru import logger

from checkpoints import write_key_values
from corpus import (
    CORPUS_KINDS,
    LandscapeSource,
    decomposition_item,
    distortion_item,
    illumination_item,
    write_dataset,
)
from decomposition import DecompositionModel, decompose
from errors import ConfigError
from normals import build_estimator, estimate_normals
from .base_processor import BaseProcessor

GEN_DATA = "gen-data"


class DataProcessor(BaseProcessor):
    """Gera os corpora de decomposição, distorção e multi-iluminação"""

    def default_root(self, kind: str) -> Path:
        stage = {"decomposition": "decomposition", "distortion": "discriminator", "illumination": "features"}[kind]
        return Path(getattr(self.pipeline, stage).dataset_dir)

    def _landscape_source(self, directory: str, checkpoint: Path) -> LandscapeSource:
        data = self.pipeline.data
        model = DecompositionModel.load(checkpoint, self.device)
        estimator = build_estimator(
            self.pipeline.normals.backend,
            self.checkpoint("normals"),
            self.device,
            self.config.normals_checkpoint_url,
            self.config.download_timeout_seconds,
        )
        return LandscapeSource(
            Path(directory),
            partial(decompose, model),
            partial(estimate_normals, estimator),
            data.height,
            data.width,
        )

    async def process(self, task: Dict[str, Any]) -> Dict[str, Any]:
        """Gera um corpus e grava o manifesto do dataset"""
        try:
            kind = task.get("kind", "decomposition")
            if kind not in CORPUS_KINDS:
                raise ConfigError(f"Tipo de dataset desconhecido: {kind}. Tipos: {', '.join(CORPUS_KINDS)}")
            data = self.pipeline.data
            seed = int(task["seed"]) if task.get("seed") is not None else self.pipeline.seed
            root = Path(task.get("out_dir") or self.default_root(kind))
            workers = int(task.get("workers") or data.workers)

            if kind == "decomposition":
                count = int(task.get("count") or data.decomposition_count)
                make_item = partial(
                    decomposition_item, seed=seed, height=data.height, width=data.width,
                    n_patches=data.n_patches, frequency=data.perlin_frequency,
                )
            elif kind == "distortion":
                count = int(task.get("count") or data.distortion_count)
                landscapes = task.get("landscapes") or data.landscapes
                if landscapes:
                    source = self._landscape_source(landscapes, self.checkpoint("decomposition", task.get("decomposition_ckpt")))
                    make_item = partial(source.item, seed=seed)
                else:
                    make_item = partial(distortion_item, seed=seed, height=data.height, width=data.width)
            else:
                count = data.illumination_classes * data.illumination_scenes
                make_item = partial(
                    illumination_item, seed=seed, height=data.height, width=data.width,
                    n_patches=data.n_patches, n_scenes=data.illumination_scenes, n_lights=data.illumination_lights,
                )

            logger.info(f"🏭 Gerando dataset '{kind}': {count} itens em {root} (seed={seed})")
            files = await write_dataset(root, count, make_item, workers)
            write_key_values(
                root / "manifest.env",
                {"kind": kind, "count": count, "seed": seed, "height": data.height, "width": data.width},
            )
            result = {"kind": kind, "root": str(root), "items": count, "files": files}
            self.log_result(GEN_DATA, result)
            return result

        except Exception as e:
            logger.error(f"❌ Erro na geração de dados: {e}")
            raise
