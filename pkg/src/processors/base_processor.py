"""
Processador base para as etapas do pipeline
"""

import asyncio
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Callable, Dict, Optional

import numpy as np
import torch
from loguru import logger

from config import Config, PipelineConfig
from errors import InvalidFieldError
from image_io import load_image, load_mask
from networks import resolve_device


class BaseProcessor(ABC):
    """Classe base para processadores que executam uma etapa do pipeline"""

    def __init__(self, config: Config, pipeline: PipelineConfig):
        self.config = config
        self.pipeline = pipeline
        self._device: Optional[torch.device] = None

    @property
    def device(self) -> torch.device:
        if self._device is None:
            self._device = resolve_device(self.config.torch_device)
        return self._device

    def validate_file_size(self, path: Path) -> None:
        """Valida o tamanho do arquivo"""
        path = Path(path)
        if not path.exists():
            raise InvalidFieldError(f"Arquivo não encontrado: {path}")
        file_size = path.stat().st_size
        max_size_bytes = self.config.max_image_size_bytes
        if file_size > max_size_bytes:
            max_size_mb = max_size_bytes / (1024 * 1024)
            file_size_mb = file_size / (1024 * 1024)
            raise InvalidFieldError(f"Arquivo muito grande: {file_size_mb:.2f}MB (máximo: {max_size_mb:.2f}MB)")

    def validate_pixels(self, field: np.ndarray, path: Path) -> None:
        pixels = field.shape[0] * field.shape[1]
        if pixels > self.config.max_image_pixels:
            raise InvalidFieldError(f"Imagem {path} com {pixels} pixels (máximo: {self.config.max_image_pixels})")

    def load_input_image(self, path: Path) -> np.ndarray:
        self.validate_file_size(path)
        image = load_image(path)
        self.validate_pixels(image, path)
        return image

    def load_input_mask(self, path: Path) -> np.ndarray:
        self.validate_file_size(path)
        mask = load_mask(path)
        self.validate_pixels(mask, path)
        return mask

    def checkpoint(self, name: str, override: Optional[str] = None) -> Path:
        """Checkpoint da etapa: argumento da tarefa, configuração ou cache"""
        return Path(override) if override else self.pipeline.checkpoint_path(name, self.config)

    async def run_blocking(self, fn: Callable, *args, **kwargs) -> Any:
        """Executa treino/inferência fora do loop de eventos"""
        return await asyncio.to_thread(fn, *args, **kwargs)

    def log_result(self, action: str, result: Dict[str, Any]) -> None:
        summary = {k: v for k, v in result.items() if isinstance(v, (int, float, str, bool))}
        logger.info(f"✅ {action} concluído: {summary}")

    @abstractmethod
    async def process(self, task: Dict[str, Any]) -> Dict[str, Any]:
        """Processa a tarefa e retorna o resultado"""
        pass
