"""
Álgebra de imagens: composição, formação de imagem, shading Lambertiano e posicionamento de máscaras
"""

from dataclasses import dataclass
from typing import Tuple, Union

import cv2
import numpy as np
import torch

from errors import InvalidFieldError, PlacementError, ShapeMismatchError

FIELD_DTYPE = np.float32
NORMAL_TOLERANCE = 1e-4
DEFAULT_ALBEDO_EPSILON = 1e-3

# Image / AlbedoField: (H, W, 3); ShadingField / Mask: (H, W); NormalField: (H, W, 3)
Field = Union[np.ndarray, torch.Tensor]


@dataclass(frozen=True)
class LightSpec:
    """Luz direcional de cor única"""

    direction: Tuple[float, float, float] = (0.0, 0.0, 1.0)
    intensity: float = 1.0

    def __post_init__(self):
        norm = float(np.linalg.norm(self.direction))
        if abs(norm - 1.0) > 1e-6:
            raise InvalidFieldError(f"Direção da luz deve ser unitária (norma {norm:.8f})")
        if not 0.0 <= self.intensity <= 1.0:
            raise InvalidFieldError(f"Intensidade da luz fora de [0,1]: {self.intensity}")

    @classmethod
    def from_vector(cls, direction, intensity: float = 1.0) -> "LightSpec":
        """Normaliza um vetor qualquer antes de construir a luz"""
        v = np.asarray(direction, dtype=np.float64)
        v = v / np.linalg.norm(v)
        return cls(direction=(float(v[0]), float(v[1]), float(v[2])), intensity=intensity)


@dataclass(frozen=True)
class Placement:
    """Deslocamento e escala do objeto no quadro de destino"""

    dx: int = 0
    dy: int = 0
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise PlacementError(f"Escala deve ser positiva: {self.scale}")

    @property
    def is_identity(self) -> bool:
        return self.dx == 0 and self.dy == 0 and self.scale == 1.0


def _spatial(field: Field) -> Tuple[int, int]:
    return tuple(field.shape[:2]) if isinstance(field, np.ndarray) else tuple(field.shape[-2:])


def _check_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape[:2] != b.shape[:2]:
        raise ShapeMismatchError(f"{what}: {a.shape[:2]} != {b.shape[:2]}")


def validate_image(image: np.ndarray, name: str = "imagem") -> np.ndarray:
    """Valida uma imagem (H,W,3) finita em [0,1]"""
    if image.ndim != 3 or image.shape[2] != 3:
        raise InvalidFieldError(f"{name} deve ter formato (H,W,3), recebido {image.shape}")
    if not np.all(np.isfinite(image)):
        raise InvalidFieldError(f"{name} contém valores não finitos")
    if image.min() < 0.0 or image.max() > 1.0:
        raise InvalidFieldError(f"{name} fora de [0,1]")
    return image


def validate_mask(mask: np.ndarray, name: str = "máscara") -> np.ndarray:
    """Valida uma máscara binária (H,W)"""
    if mask.ndim != 2:
        raise InvalidFieldError(f"{name} deve ter formato (H,W), recebido {mask.shape}")
    if not np.all((mask == 0) | (mask == 1)):
        raise InvalidFieldError(f"{name} deve conter apenas 0 e 1")
    return mask


def validate_shading(shading: np.ndarray, name: str = "shading") -> np.ndarray:
    """Valida um campo de shading (H,W) finito em [0,1]"""
    if shading.ndim != 2:
        raise InvalidFieldError(f"{name} deve ter formato (H,W), recebido {shading.shape}")
    if not np.all(np.isfinite(shading)):
        raise InvalidFieldError(f"{name} contém valores não finitos")
    if shading.min() < 0.0 or shading.max() > 1.0:
        raise InvalidFieldError(f"{name} fora de [0,1]")
    return shading


def validate_normals(normals: np.ndarray, tolerance: float = NORMAL_TOLERANCE) -> np.ndarray:
    """Valida um campo de normais unitárias (H,W,3)"""
    if normals.ndim != 3 or normals.shape[2] != 3:
        raise InvalidFieldError(f"Normais devem ter formato (H,W,3), recebido {normals.shape}")
    norms = np.linalg.norm(normals.astype(np.float64), axis=-1)
    worst = float(np.max(np.abs(norms - 1.0))) if norms.size else 0.0
    if not np.isfinite(worst) or worst > tolerance:
        raise InvalidFieldError(f"Normais não unitárias (desvio máximo {worst:.2e})")
    return normals


def cut_and_paste(fg: Field, bg: Field, mask: Field) -> Field:
    """CP(fg, bg, M): fg onde M=1, bg onde M=0

    Aceita arrays numpy (H,W) / (H,W,C) ou tensores (..., C, H, W); a máscara
    de um canal é propagada para todos os canais.
    """
    if isinstance(fg, torch.Tensor):
        if fg.shape[-2:] != bg.shape[-2:] or fg.shape[-3:] != bg.shape[-3:]:
            raise ShapeMismatchError(f"cut_and_paste: {tuple(fg.shape)} != {tuple(bg.shape)}")
        if tuple(mask.shape[-2:]) != tuple(fg.shape[-2:]):
            raise ShapeMismatchError(f"cut_and_paste: máscara {tuple(mask.shape)} vs campo {tuple(fg.shape)}")
        return torch.where(mask > 0.5, fg, bg)

    if fg.shape != bg.shape:
        raise ShapeMismatchError(f"cut_and_paste: {fg.shape} != {bg.shape}")
    if mask.shape != fg.shape[:2]:
        raise ShapeMismatchError(f"cut_and_paste: máscara {mask.shape} vs campo {fg.shape}")
    selector = mask.astype(bool)
    if fg.ndim == 3:
        selector = selector[..., None]
    return np.where(selector, fg, bg)


def extract_object(source: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """X_o = M ⊙ S"""
    _check_same_shape(source, mask, "extract_object")
    m = mask.astype(source.dtype)
    return source * (m[..., None] if source.ndim == 3 else m)


def form_image(albedo: Field, shading: Field) -> Field:
    """I = ρ ⊙ S, com o shading propagado para os 3 canais"""
    if isinstance(albedo, torch.Tensor):
        if albedo.shape[-2:] != shading.shape[-2:]:
            raise ShapeMismatchError(f"form_image: {tuple(albedo.shape)} vs {tuple(shading.shape)}")
        return albedo * shading
    if albedo.shape[:2] != shading.shape:
        raise ShapeMismatchError(f"form_image: {albedo.shape} vs {shading.shape}")
    return albedo * shading[..., None]


def recover_albedo(image: np.ndarray, shading: np.ndarray, epsilon: float = DEFAULT_ALBEDO_EPSILON) -> np.ndarray:
    """ρ = I / max(S, ε), limitado a [0,1]"""
    if epsilon <= 0:
        raise InvalidFieldError(f"epsilon deve ser positivo: {epsilon}")
    if image.shape[:2] != shading.shape:
        raise ShapeMismatchError(f"recover_albedo: {image.shape} vs {shading.shape}")
    denom = np.maximum(shading, epsilon)[..., None]
    return np.clip(image / denom, 0.0, 1.0).astype(image.dtype)


def lambertian_shading(normals: np.ndarray, light: LightSpec) -> np.ndarray:
    """S(p) = intensidade · max(0, N(p)·S_u)"""
    validate_normals(normals)
    direction = np.asarray(light.direction, dtype=normals.dtype)
    cosine = np.einsum("hwc,c->hw", normals, direction)
    return (light.intensity * np.clip(cosine, 0.0, 1.0)).astype(FIELD_DTYPE)


def _scaled(field: np.ndarray, scale: float) -> np.ndarray:
    if scale == 1.0:
        return field
    h, w = field.shape[:2]
    new_h, new_w = max(1, int(round(h * scale))), max(1, int(round(w * scale)))
    resized = cv2.resize(field, (new_w, new_h), interpolation=cv2.INTER_NEAREST)
    if field.ndim == 3 and resized.ndim == 2:
        resized = resized[..., None]
    return resized


def place_field(field: np.ndarray, placement: Placement, target_height: int, target_width: int) -> np.ndarray:
    """Transla/escala (vizinho mais próximo) um campo para o quadro de destino

    Pixels que saem do quadro são descartados; o restante do quadro fica zerado.
    """
    if placement.is_identity and field.shape[:2] == (target_height, target_width):
        return field.copy()

    scaled = _scaled(field, placement.scale)
    sh, sw = scaled.shape[:2]
    out = np.zeros((target_height, target_width) + field.shape[2:], dtype=field.dtype)

    # Interseção entre o campo deslocado e o quadro
    y0, x0 = max(0, placement.dy), max(0, placement.dx)
    y1, x1 = min(target_height, placement.dy + sh), min(target_width, placement.dx + sw)
    if y1 <= y0 or x1 <= x0:
        return out
    out[y0:y1, x0:x1] = scaled[y0 - placement.dy:y1 - placement.dy, x0 - placement.dx:x1 - placement.dx]
    return out


def place_mask(mask: np.ndarray, placement: Placement, target_height: int, target_width: int) -> np.ndarray:
    """Posiciona a máscara no quadro de destino, rejeitando pixels fora dos limites"""
    validate_mask(mask)
    scaled = _scaled(mask.astype(np.uint8), placement.scale)
    placed = place_field(mask.astype(np.uint8), placement, target_height, target_width)
    if int(placed.sum()) != int(scaled.sum()):
        raise PlacementError(
            f"Posicionamento (dx={placement.dx}, dy={placement.dy}, escala={placement.scale}) "
            f"empurra a máscara para fora do quadro {target_height}x{target_width}"
        )
    return placed.astype(mask.dtype)
