"""
Persistência de checkpoints com metadados legíveis (arquivo .meta no formato chave=valor)
"""

import json
from pathlib import Path
from typing import Any, Dict, Tuple

import torch
from dotenv import dotenv_values, set_key
from loguru import logger

from errors import CheckpointError


def sidecar_path(path: Path) -> Path:
    return Path(f"{path}.meta")


def write_key_values(path: Path, values: Dict[str, Any]) -> None:
    """Grava pares chave-valor com python-dotenv; valores não escalares em JSON"""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("")
    for key, value in values.items():
        if isinstance(value, (dict, list, tuple)):
            value = json.dumps(value)
        set_key(str(path), key.upper(), "" if value is None else str(value), quote_mode="always")


def read_key_values(path: Path) -> Dict[str, str]:
    if not path.exists():
        raise CheckpointError(f"Arquivo de metadados não encontrado: {path}")
    return {k: v for k, v in dotenv_values(path).items() if v is not None}


def save_checkpoint(path: Path, state_dict: Dict[str, torch.Tensor], metadata: Dict[str, Any]) -> Path:
    """Salva parâmetros + metadados (embutidos e no arquivo .meta)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"state_dict": state_dict, "metadata": metadata}, path)
    write_key_values(sidecar_path(path), metadata)
    logger.info(f"💾 Checkpoint salvo: {path}")
    return path


def load_checkpoint(path: Path, device: torch.device = torch.device("cpu")) -> Tuple[Dict[str, torch.Tensor], Dict[str, Any]]:
    """Carrega um checkpoint, falhando com CheckpointError se ausente ou corrompido"""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Checkpoint não encontrado: {path}")
    try:
        payload = torch.load(path, map_location=device, weights_only=True)
    except Exception as e:
        raise CheckpointError(f"Checkpoint corrompido {path}: {e}")
    if not isinstance(payload, dict) or "state_dict" not in payload:
        raise CheckpointError(f"Checkpoint sem 'state_dict': {path}")
    return payload["state_dict"], payload.get("metadata", {})
