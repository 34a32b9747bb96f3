"""
Processador de estimativa de normais
"""

from pathlib import Path
from typing import Any, Dict

from loguru import logger

from image_io import save_normals16
from normals import build_estimator, estimate_normals
from .base_processor import BaseProcessor

ESTIMATE_NORMALS = "estimate-normals"


class NormalsProcessor(BaseProcessor):
    """Estima o campo de normais de uma imagem e grava o PNG de 16 bits"""

    async def process(self, task: Dict[str, Any]) -> Dict[str, Any]:
        try:
            backend = task.get("backend") or self.pipeline.normals.backend
            image = self.load_input_image(Path(task["image"]))
            estimator = await self.run_blocking(
                build_estimator,
                backend,
                self.checkpoint("normals", task.get("ckpt")),
                self.device,
                self.config.normals_checkpoint_url,
                self.config.download_timeout_seconds,
            )
            normals = await self.run_blocking(estimate_normals, estimator, image)
            out_path = Path(task["out"])
            save_normals16(out_path, normals)
            result = {"backend": backend, "normals": str(out_path)}
            self.log_result(ESTIMATE_NORMALS, result)
            return result

        except Exception as e:
            logger.error(f"❌ Erro na estimativa de normais: {e}")
            raise
