"""
Campos de normais: estimadores plugáveis, cenas sintéticas analíticas e composição
"""

from abc import ABC, abstractmethod
from pathlib import Path
from typing import NamedTuple, Optional

import cv2
import httpx
import numpy as np
import torch
from loguru import logger

from errors import EstimatorError
from imaging import FIELD_DTYPE, LightSpec, cut_and_paste, form_image, lambertian_shading, validate_image
from networks import image_to_tensor

SCENE_KINDS = ("sphere", "plane", "two_spheres")
SCENE_ALBEDO = 0.8
FACING = np.array([0.0, 0.0, 1.0], dtype=FIELD_DTYPE)


class SceneRender(NamedTuple):
    image: np.ndarray
    normals: np.ndarray
    shading: np.ndarray


def renormalize(normals: np.ndarray) -> np.ndarray:
    """Re-normaliza para vetores unitários com z >= 0 (voltados para a câmera)"""
    normals = np.asarray(normals, dtype=np.float64)
    norms = np.linalg.norm(normals, axis=-1, keepdims=True)
    unit = np.where(norms > 1e-8, normals / np.maximum(norms, 1e-8), FACING)
    unit = np.where(unit[..., 2:3] < 0, -unit, unit)
    return unit.astype(FIELD_DTYPE)


def _spheres(kind: str, height: int, width: int):
    """(cy, cx, raio) de cada esfera da cena"""
    if kind == "sphere":
        return [((height - 1) / 2.0, (width - 1) / 2.0, 0.4 * min(height, width))]
    if kind == "two_spheres":
        radius = 0.18 * min(height, width)
        return [
            ((height - 1) / 2.0, 0.25 * (width - 1), radius),
            ((height - 1) / 2.0, 0.75 * (width - 1), radius),
        ]
    if kind == "plane":
        return []
    raise ValueError(f"Tipo de cena desconhecido: {kind}")


def sphere_normals(height: int, width: int, spheres) -> np.ndarray:
    """Normais analíticas de esferas sobre um fundo fronto-paralelo"""
    normals = np.zeros((height, width, 3), dtype=np.float64)
    normals[...] = FACING
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    for cy, cx, radius in spheres:
        nx = (xs - cx) / radius
        ny = -(ys - cy) / radius
        r2 = nx**2 + ny**2
        inside = r2 <= 1.0
        nz = np.sqrt(np.clip(1.0 - r2, 0.0, 1.0))
        normals[inside] = np.stack([nx, ny, nz], axis=-1)[inside]
    return renormalize(normals)


def scene_silhouette(kind: str, height: int, width: int) -> np.ndarray:
    """Máscara do objeto (esferas) de uma cena sintética"""
    mask = np.zeros((height, width), dtype=FIELD_DTYPE)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    for cy, cx, radius in _spheres(kind, height, width):
        mask[((xs - cx) ** 2 + (ys - cy) ** 2) <= radius**2] = 1.0
    return mask


def synth_scene(kind: str, height: int, width: int, light: LightSpec, albedo: Optional[np.ndarray] = None) -> SceneRender:
    """Cena analítica: normais exatas, shading Lambertiano e imagem com albedo constante"""
    if kind not in SCENE_KINDS:
        raise ValueError(f"Tipo de cena desconhecido: {kind}")
    normals = sphere_normals(height, width, _spheres(kind, height, width))
    shading = lambertian_shading(normals, light)
    if albedo is None:
        albedo = np.full((height, width, 3), SCENE_ALBEDO, dtype=FIELD_DTYPE)
    return SceneRender(image=form_image(albedo, shading), normals=normals, shading=shading)


def composite_normals(n_source: np.ndarray, n_target: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """N_y = CP(N_s, N_t, M)"""
    return cut_and_paste(n_source, n_target, mask)


class NormalEstimator(ABC):
    """Estimador de normais; a saída sempre passa por `renormalize`"""

    backend = ""

    def estimate(self, image: np.ndarray) -> np.ndarray:
        validate_image(image)
        try:
            raw = self._estimate(image)
        except EstimatorError:
            raise
        except Exception as e:
            raise EstimatorError(f"Falha no backend '{self.backend}': {e}")
        if raw.shape != image.shape:
            raise EstimatorError(f"Backend '{self.backend}' retornou formato {raw.shape}, esperado {image.shape}")
        if not np.all(np.isfinite(raw)):
            raise EstimatorError(f"Backend '{self.backend}' retornou valores não finitos")
        return renormalize(raw)

    @abstractmethod
    def _estimate(self, image: np.ndarray) -> np.ndarray:
        pass


class SyntheticNormalEstimator(NormalEstimator):
    """Estimador analítico para cenas de esferas sobre um plano fronto-paralelo

    O plano (com ou sem textura de retalhos) é constante por partes sob luz
    direcional; a esfera tem shading que varia suavemente. Regiões não planas
    sobrevivem a uma abertura morfológica, têm os buracos preenchidos e recebem
    o círculo envolvente mínimo com normais de hemisfério.
    """

    backend = "synthetic"

    def __init__(self, flat_levels: int = 1):
        self.flat_levels = flat_levels

    def sphere_mask(self, image: np.ndarray) -> np.ndarray:
        h, w = image.shape[:2]
        gray = np.round(image.mean(axis=-1) * 255.0).astype(np.uint8)
        square = np.ones((3, 3), dtype=np.uint8)
        local_range = cv2.dilate(gray, square).astype(np.int16) - cv2.erode(gray, square).astype(np.int16)
        varying = (local_range > self.flat_levels).astype(np.uint8)

        size = max(3, (min(h, w) // 16) | 1)
        kernel = cv2.getStructuringElement(cv2.MORPH_ELLIPSE, (size, size))
        varying = cv2.morphologyEx(varying, cv2.MORPH_OPEN, kernel)

        filled = np.zeros_like(varying)
        contours, _ = cv2.findContours(varying, cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_NONE)
        min_area = 4 * size * size
        for contour in contours:
            if cv2.contourArea(contour) >= min_area:
                cv2.drawContours(filled, [contour], -1, 1, thickness=cv2.FILLED)
        return filled

    def _estimate(self, image: np.ndarray) -> np.ndarray:
        h, w = image.shape[:2]
        n_labels, labels = cv2.connectedComponents(self.sphere_mask(image), connectivity=8)
        spheres = []
        for label in range(1, n_labels):
            ys, xs = np.nonzero(labels == label)
            points = np.stack([xs, ys], axis=-1).astype(np.float32)
            (cx, cy), radius = cv2.minEnclosingCircle(points)
            spheres.append((float(cy), float(cx), max(float(radius), 1.0)))
        return sphere_normals(h, w, spheres)


class PretrainedNormalEstimator(NormalEstimator):
    """Rede pré-treinada (TorchScript) consumida como caixa-preta

    Entrada (1,3,H,W) em [0,1]; saída (1,3,H,W) com componentes em [-1,1].
    """

    backend = "pretrained"

    def __init__(self, checkpoint: Path, device: torch.device = torch.device("cpu")):
        self.checkpoint = Path(checkpoint)
        self.device = device
        if not self.checkpoint.exists():
            raise EstimatorError(f"Checkpoint do estimador de normais não encontrado: {self.checkpoint}")
        try:
            self.model = torch.jit.load(str(self.checkpoint), map_location=device)
        except Exception as e:
            raise EstimatorError(f"Erro ao carregar estimador de normais {self.checkpoint}: {e}")
        self.model.eval()

    @torch.no_grad()
    def _estimate(self, image: np.ndarray) -> np.ndarray:
        output = self.model(image_to_tensor(image, self.device))
        if isinstance(output, (tuple, list)):
            output = output[0]
        return output[0].detach().cpu().float().numpy().transpose(1, 2, 0)


def download_checkpoint(url: str, destination: Path, timeout: float = 120.0) -> Path:
    """Baixa o checkpoint do estimador para o cache, se ainda não existir"""
    destination = Path(destination)
    if destination.exists():
        return destination
    destination.parent.mkdir(parents=True, exist_ok=True)
    logger.info(f"📥 Baixando estimador de normais: {url}")
    partial = destination.with_suffix(destination.suffix + ".part")
    try:
        with httpx.stream("GET", url, timeout=timeout, follow_redirects=True) as response:
            response.raise_for_status()
            with open(partial, "wb") as f:
                for chunk in response.iter_bytes():
                    f.write(chunk)
    except httpx.HTTPError as e:
        partial.unlink(missing_ok=True)
        raise EstimatorError(f"Erro ao baixar estimador de normais: {e}")
    partial.rename(destination)
    logger.info(f"✅ Estimador salvo em {destination}")
    return destination


def build_estimator(
    backend: str,
    checkpoint: Optional[Path] = None,
    device: torch.device = torch.device("cpu"),
    url: str = "",
    timeout: float = 120.0,
) -> NormalEstimator:
    """Cria o estimador do backend pedido"""
    if backend == "synthetic":
        return SyntheticNormalEstimator()
    if backend == "pretrained":
        if checkpoint is None:
            raise EstimatorError("Backend 'pretrained' exige um checkpoint")
        if not Path(checkpoint).exists() and url:
            download_checkpoint(url, Path(checkpoint), timeout)
        return PretrainedNormalEstimator(Path(checkpoint), device)
    raise EstimatorError(f"Backend de normais desconhecido: {backend}")


def estimate_normals(estimator: NormalEstimator, image: np.ndarray) -> np.ndarray:
    return estimator.estimate(image)
