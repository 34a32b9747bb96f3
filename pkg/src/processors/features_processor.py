"""
Processador do fine-tuning de features robustas à iluminação
"""

from dataclasses import replace
from pathlib import Path
from typing import Any, Dict

from loguru import logger

from datasets import load_illumination_groups
from features import build_classifier, classification_accuracy, finetune_features, mean_group_distance, split_groups
from .base_processor import BaseProcessor

FINETUNE_FEATURES = "finetune-features"


class FeaturesProcessor(BaseProcessor):
    """Ajusta o classificador com perda de consistência entre iluminações"""

    async def process(self, task: Dict[str, Any]) -> Dict[str, Any]:
        try:
            config = self.pipeline.features
            root = Path(task.get("data") or config.dataset_dir)
            out_path = self.checkpoint("features", task.get("out"))

            groups = await self.run_blocking(load_illumination_groups, root)
            train, held_out = split_groups(groups, config.validation_fraction, config.seed or 0)
            class_names = sorted({g.label for g in groups})
            logger.info(f"🚀 Fine-tuning de features: {len(train)} grupos de treino, {len(held_out)} separados")

            base = build_classifier(class_names, config.pretrained, config.image_size, self.device)
            result: Dict[str, Any] = {"checkpoint": str(out_path)}
            if held_out:
                result["pretrained_distance"] = await self.run_blocking(mean_group_distance, base, held_out)

            tuned = await self.run_blocking(finetune_features, base, train, config, self.device, out_path)
            result["epochs"] = tuned.epochs
            if held_out:
                result["tuned_distance"] = await self.run_blocking(mean_group_distance, tuned, held_out)
                result["tuned_accuracy"] = await self.run_blocking(classification_accuracy, tuned, held_out)

            if task.get("compare_baseline") and held_out:
                # Mesmo classificador ajustado só com classificação (λ_c = 0)
                baseline = await self.run_blocking(
                    finetune_features, base, train, replace(config, consistency_weight=0.0), self.device
                )
                result["baseline_distance"] = await self.run_blocking(mean_group_distance, baseline, held_out)
                result["baseline_accuracy"] = await self.run_blocking(classification_accuracy, baseline, held_out)
                result["accuracy_drop"] = result["baseline_accuracy"] - result["tuned_accuracy"]

            self.log_result(FINETUNE_FEATURES, result)
            return result

        except Exception as e:
            logger.error(f"❌ Erro no fine-tuning de features: {e}")
            raise
