"""
Leitura e escrita de imagens, máscaras e campos em PNG
"""

import io
from pathlib import Path
from typing import Union

import cv2
import numpy as np
from PIL import Image

from errors import InvalidFieldError
from imaging import FIELD_DTYPE

PathLike = Union[str, Path]
MASK_THRESHOLD = 128
UINT16_MAX = 65535.0


def load_image(path: PathLike) -> np.ndarray:
    """Carrega PNG/JPEG 8-bit como (H,W,3) em [0,1]"""
    try:
        with Image.open(path) as img:
            # Convert to RGB if necessary
            if img.mode != "RGB":
                img = img.convert("RGB")
            data = np.asarray(img, dtype=np.uint8)
    except (OSError, ValueError) as e:
        raise InvalidFieldError(f"Erro ao carregar imagem {path}: {e}")
    return (data.astype(FIELD_DTYPE) / 255.0).astype(FIELD_DTYPE)


def _to_uint8(field: np.ndarray) -> np.ndarray:
    return np.round(np.clip(field, 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_image(image: np.ndarray) -> bytes:
    """Codifica uma imagem (H,W,3) ou (H,W) em PNG 8-bit"""
    buffer = io.BytesIO()
    Image.fromarray(_to_uint8(image)).save(buffer, format="PNG")
    return buffer.getvalue()


def save_image(path: PathLike, image: np.ndarray) -> None:
    """Salva imagem em PNG 8-bit"""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(encode_image(image))


def load_mask(path: PathLike) -> np.ndarray:
    """Carrega máscara em tons de cinza, limiar >= 128 → 1"""
    try:
        with Image.open(path) as img:
            data = np.asarray(img.convert("L"), dtype=np.uint8)
    except (OSError, ValueError) as e:
        raise InvalidFieldError(f"Erro ao carregar máscara {path}: {e}")
    return (data >= MASK_THRESHOLD).astype(FIELD_DTYPE)


def encode_mask(mask: np.ndarray) -> bytes:
    buffer = io.BytesIO()
    Image.fromarray((mask > 0.5).astype(np.uint8) * 255, mode="L").save(buffer, format="PNG")
    return buffer.getvalue()


def save_mask(path: PathLike, mask: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(encode_mask(mask))


def encode_shading16(shading: np.ndarray) -> bytes:
    """Shading (H,W) em PNG 16-bit de um canal, escala valor/65535"""
    data = np.round(np.clip(shading, 0.0, 1.0) * UINT16_MAX).astype(np.uint16)
    ok, buffer = cv2.imencode(".png", data)
    if not ok:
        raise InvalidFieldError("Falha ao codificar shading em PNG 16-bit")
    return buffer.tobytes()


def save_shading16(path: PathLike, shading: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(encode_shading16(shading))


def _read_unchanged(path: PathLike) -> np.ndarray:
    data = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if data is None:
        raise InvalidFieldError(f"Erro ao carregar campo 16-bit {path}")
    return data


def load_shading16(path: PathLike) -> np.ndarray:
    """Carrega shading 16-bit (ou 8-bit) como (H,W) em [0,1]"""
    data = _read_unchanged(path)
    if data.ndim == 3:
        data = data[..., 0]
    scale = UINT16_MAX if data.dtype == np.uint16 else 255.0
    return (data.astype(np.float64) / scale).astype(FIELD_DTYPE)


def encode_normals16(normals: np.ndarray) -> bytes:
    """Normais (H,W,3) em PNG 16-bit de 3 canais, codificadas como (n+1)/2"""
    data = np.round(np.clip((normals + 1.0) / 2.0, 0.0, 1.0) * UINT16_MAX).astype(np.uint16)
    ok, buffer = cv2.imencode(".png", cv2.cvtColor(data, cv2.COLOR_RGB2BGR))
    if not ok:
        raise InvalidFieldError("Falha ao codificar normais em PNG 16-bit")
    return buffer.tobytes()


def save_normals16(path: PathLike, normals: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(encode_normals16(normals))


def load_normals16(path: PathLike) -> np.ndarray:
    """Carrega normais 16-bit e re-normaliza para vetores unitários"""
    data = _read_unchanged(path)
    if data.ndim != 3 or data.shape[2] != 3:
        raise InvalidFieldError(f"Normais devem ter 3 canais: {path}")
    data = cv2.cvtColor(data, cv2.COLOR_BGR2RGB)
    normals = data.astype(np.float64) / UINT16_MAX * 2.0 - 1.0
    norms = np.linalg.norm(normals, axis=-1, keepdims=True)
    normals = np.where(norms > 1e-8, normals / np.maximum(norms, 1e-8), np.array([0.0, 0.0, 1.0]))
    return normals.astype(FIELD_DTYPE)
