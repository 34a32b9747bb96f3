"""
Processador do discriminador normal-shading
"""

from pathlib import Path
from typing import Any, Dict

import numpy as np
from loguru import logger

from datasets import load_distortion_records
from discriminator import evaluate_discriminator, samples_from_records, train_discriminator
from errors import DatasetError
from .base_processor import BaseProcessor

TRAIN_DISCRIMINATOR = "train-discriminator"


class DiscriminatorProcessor(BaseProcessor):
    """Treina o discriminador e avalia AUC/IoU em registros separados"""

    async def process(self, task: Dict[str, Any]) -> Dict[str, Any]:
        try:
            config = self.pipeline.discriminator
            root = Path(task.get("data") or config.dataset_dir)
            out_path = self.checkpoint("discriminator", task.get("out"))

            records = await self.run_blocking(load_distortion_records, root)
            if len(records) < 2:
                raise DatasetError(f"Dataset do discriminador com {len(records)} registro(s) em {root}")

            # Separação por registro: o par real/falso de uma cena fica do mesmo lado
            order = np.random.default_rng(config.seed or 0).permutation(len(records))
            n_held_out = max(1, int(round(len(records) * config.validation_fraction)))
            held_out = [records[i] for i in order[:n_held_out]]
            train_records = [records[i] for i in order[n_held_out:]]
            logger.info(f"🚀 Treinando discriminador: {len(train_records)} registros, {n_held_out} separados")

            model = await self.run_blocking(
                train_discriminator, samples_from_records(train_records), config, self.device, out_path
            )
            metrics = await self.run_blocking(evaluate_discriminator, model, samples_from_records(held_out))
            result = {"checkpoint": str(out_path), "epochs": model.epochs, **metrics}
            self.log_result(TRAIN_DISCRIMINATOR, result)
            return result

        except Exception as e:
            logger.error(f"❌ Erro no treino do discriminador: {e}")
            raise
