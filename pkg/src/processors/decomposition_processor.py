"""
Processador da Albedo-Shading Net: treino e decomposição de imagens
"""

from pathlib import Path
from typing import Any, Dict

from loguru import logger

from decomposition import DecompositionModel, decompose, evaluate_decomposition, train_decomposition
from image_io import save_image, save_shading16
from synth import MondrianSpec, PerlinSpec, make_decomposition_sample, sample_seed
from .base_processor import BaseProcessor

TRAIN_DECOMPOSITION = "train-decomposition"
DECOMPOSE = "decompose"

# Índices das amostras de avaliação ficam fora do intervalo usado pelo gen-data
HELD_OUT_OFFSET = 10_000_000


class DecompositionProcessor(BaseProcessor):
    """Treina a rede de decomposição ou decompõe uma imagem"""

    def held_out_samples(self, count: int, seed: int):
        data = self.pipeline.data
        samples = []
        for i in range(count):
            item_seed = sample_seed(seed, HELD_OUT_OFFSET + i)
            samples.append(
                make_decomposition_sample(
                    MondrianSpec(height=data.height, width=data.width, n_patches=data.n_patches, rng_seed=item_seed),
                    PerlinSpec(
                        height=data.height, width=data.width,
                        frequency=data.perlin_frequency, rng_seed=sample_seed(item_seed, 1),
                    ),
                )
            )
        return samples

    async def train(self, task: Dict[str, Any]) -> Dict[str, Any]:
        config = self.pipeline.decomposition
        out_path = self.checkpoint("decomposition", task.get("out"))
        logger.info(f"🚀 Treinando decomposição a partir de {config.dataset_dir}")
        model = await self.run_blocking(train_decomposition, config, self.device, out_path)

        held_out = int(task.get("held_out", 64))
        metrics = {}
        if held_out > 0:
            samples = self.held_out_samples(held_out, config.seed or 0)
            metrics = await self.run_blocking(evaluate_decomposition, model, samples)
            logger.info(f"📊 Avaliação separada ({held_out} amostras): {metrics}")
        return {
            "checkpoint": str(out_path),
            "epochs": model.epochs,
            "final_train_loss": model.train_losses[-1],
            "final_val_loss": model.val_losses[-1],
            **metrics,
        }

    async def decompose_image(self, task: Dict[str, Any]) -> Dict[str, Any]:
        image = self.load_input_image(Path(task["image"]))
        model = DecompositionModel.load(self.checkpoint("decomposition", task.get("ckpt")), self.device)
        albedo, shading = await self.run_blocking(decompose, model, image)
        out_albedo = Path(task["out_albedo"])
        out_shading = Path(task["out_shading"])
        save_image(out_albedo, albedo)
        save_shading16(out_shading, shading)
        logger.info(f"💾 Albedo em {out_albedo}, shading em {out_shading}")
        return {"albedo": str(out_albedo), "shading": str(out_shading)}

    async def process(self, task: Dict[str, Any]) -> Dict[str, Any]:
        try:
            action = task.get("action", TRAIN_DECOMPOSITION)
            if action == DECOMPOSE:
                result = await self.decompose_image(task)
            else:
                result = await self.train(task)
            self.log_result(action, result)
            return result

        except Exception as e:
            logger.error(f"❌ Erro na decomposição: {e}")
            raise
