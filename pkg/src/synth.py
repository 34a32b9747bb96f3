"""
Geração procedural dos dados sintéticos: Mondrian, Perlin, amostras de decomposição e distorções
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import cv2
import numpy as np

from errors import InvalidFieldError, ShapeMismatchError
from imaging import FIELD_DTYPE, form_image, validate_shading
from noise import perlin_2d, periodic_noise_1d, remap_unit

COLOR_RANGE = (0.1, 0.95)
MIN_MASK_SIZE = 8
MASK_AREA_RANGE = (0.02, 0.40)


def sample_seed(seed: int, index: int) -> int:
    """Seed derivada e estável para a amostra `index`"""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


@dataclass(frozen=True)
class MondrianSpec:
    """Parâmetros de um campo de albedo Mondrian"""

    height: int = 64
    width: int = 64
    n_patches: int = 10
    rotation_range: Tuple[float, float] = (0.0, 45.0)
    scale_range: Tuple[float, float] = (0.8, 1.2)
    rng_seed: int = 0
    palette: Optional[Tuple[Tuple[float, float, float], ...]] = None

    def __post_init__(self):
        if self.n_patches < 0:
            raise InvalidFieldError(f"n_patches deve ser >= 0: {self.n_patches}")
        if self.scale_range[0] <= 0 or self.scale_range[1] < self.scale_range[0]:
            raise InvalidFieldError(f"scale_range inválido: {self.scale_range}")


@dataclass(frozen=True)
class PerlinSpec:
    """Parâmetros de um campo de shading Perlin"""

    height: int = 64
    width: int = 64
    frequency: int = 2
    rng_seed: int = 0

    def __post_init__(self):
        if self.frequency < 1:
            raise InvalidFieldError(f"frequency deve ser >= 1: {self.frequency}")


@dataclass
class DecompositionSample:
    image: np.ndarray
    albedo: np.ndarray
    shading: np.ndarray


@dataclass
class DistortionSample:
    clean_shading: np.ndarray
    distorted_shading: np.ndarray
    distortion_mask: np.ndarray


def gen_perlin(spec: PerlinSpec) -> np.ndarray:
    """Campo de shading Perlin remapeado para [0,1]"""
    rng = np.random.default_rng(spec.rng_seed)
    raw = perlin_2d(spec.height, spec.width, spec.frequency, rng)
    return remap_unit(raw).astype(FIELD_DTYPE)


def _patch_color(rng: np.random.Generator, palette) -> np.ndarray:
    if palette:
        return np.asarray(palette[rng.integers(len(palette))], dtype=FIELD_DTYPE)
    return rng.uniform(*COLOR_RANGE, size=3).astype(FIELD_DTYPE)


def gen_mondrian(spec: MondrianSpec) -> np.ndarray:
    """Albedo Mondrian: fundo + retângulos de cor uniforme, rotacionado e escalado

    A reamostragem é por vizinho mais próximo e a borda é refletida, então
    nenhuma cor nova aparece: no máximo n_patches + 1 cores distintas.
    """
    rng = np.random.default_rng(spec.rng_seed)
    h, w = spec.height, spec.width
    albedo = np.empty((h, w, 3), dtype=FIELD_DTYPE)
    albedo[...] = _patch_color(rng, spec.palette)

    for _ in range(spec.n_patches):
        ph = int(rng.integers(max(1, h // 8), max(2, h // 2) + 1))
        pw = int(rng.integers(max(1, w // 8), max(2, w // 2) + 1))
        y0 = int(rng.integers(0, max(1, h - ph + 1)))
        x0 = int(rng.integers(0, max(1, w - pw + 1)))
        albedo[y0:y0 + ph, x0:x0 + pw] = _patch_color(rng, spec.palette)

    angle = float(rng.uniform(*spec.rotation_range))
    scale = float(rng.uniform(*spec.scale_range))
    if angle == 0.0 and scale == 1.0:
        return albedo
    matrix = cv2.getRotationMatrix2D(((w - 1) / 2.0, (h - 1) / 2.0), angle, scale)
    return cv2.warpAffine(
        albedo, matrix, (w, h), flags=cv2.INTER_NEAREST, borderMode=cv2.BORDER_REFLECT_101
    ).astype(FIELD_DTYPE)


def make_decomposition_sample(mspec: MondrianSpec, pspec: PerlinSpec) -> DecompositionSample:
    """Amostra (I, ρ, S) com I = ρ ⊙ S exatamente"""
    if (mspec.height, mspec.width) != (pspec.height, pspec.width):
        raise ShapeMismatchError(
            f"Specs com dimensões diferentes: {(mspec.height, mspec.width)} vs {(pspec.height, pspec.width)}"
        )
    albedo = gen_mondrian(mspec)
    shading = gen_perlin(pspec)
    return DecompositionSample(image=form_image(albedo, shading), albedo=albedo, shading=shading)


def _wobbly_disc(height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    cy, cx = rng.uniform(0, height), rng.uniform(0, width)
    base_radius = rng.uniform(0.1, 0.35) * min(height, width)
    wobble = periodic_noise_1d(360, int(rng.integers(3, 7)), rng)
    radii = base_radius * (1.0 + 0.6 * wobble)

    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    theta = np.arctan2(ys - cy, xs - cx) % (2.0 * np.pi)
    bins = np.minimum((theta / (2.0 * np.pi) * radii.size).astype(int), radii.size - 1)
    return (np.hypot(ys - cy, xs - cx) <= radii[bins]).astype(FIELD_DTYPE)


def perlin_circle_mask(height: int, width: int, rng_seed: int, max_attempts: int = 1000) -> np.ndarray:
    """Disco com raio modulado por ruído de gradiente, área entre 2% e 40% do quadro"""
    if height < MIN_MASK_SIZE or width < MIN_MASK_SIZE:
        raise InvalidFieldError(f"Dimensões mínimas {MIN_MASK_SIZE}x{MIN_MASK_SIZE}: {height}x{width}")
    rng = np.random.default_rng(rng_seed)
    lo, hi = MASK_AREA_RANGE
    for _ in range(max_attempts):
        mask = _wobbly_disc(height, width, rng)
        if lo <= mask.mean() <= hi:
            return mask

    # Centered disc covering ~10% of the frame
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    radius = np.sqrt(0.1 * height * width / np.pi)
    return (np.hypot(ys - (height - 1) / 2.0, xs - (width - 1) / 2.0) <= radius).astype(FIELD_DTYPE)


def distort_shading(clean: np.ndarray, rng_seed: int) -> DistortionSample:
    """Substitui uma região de disco ondulado por um Perlin novo"""
    validate_shading(clean)
    h, w = clean.shape
    rng = np.random.default_rng(rng_seed)
    mask = perlin_circle_mask(h, w, int(rng.integers(2**31)))
    fresh = gen_perlin(PerlinSpec(h, w, frequency=int(rng.integers(2, 5)), rng_seed=int(rng.integers(2**31))))
    distorted = np.where(mask > 0.5, fresh, clean).astype(FIELD_DTYPE)
    return DistortionSample(clean_shading=clean.astype(FIELD_DTYPE), distorted_shading=distorted, distortion_mask=mask)


def class_palette(class_index: int, seed: int, n_colors: int = 3) -> Tuple[Tuple[float, float, float], ...]:
    """Paleta fixa de uma classe do corpus de multi-iluminação"""
    rng = np.random.default_rng(sample_seed(seed, 10_000 + class_index))
    colors = rng.uniform(*COLOR_RANGE, size=(n_colors, 3))
    return tuple(tuple(float(c) for c in row) for row in colors)


def random_light(rng: np.random.Generator, min_elevation: float = 0.3) -> Sequence[float]:
    """Direção aleatória no hemisfério voltado para a câmera"""
    while True:
        v = rng.normal(size=3)
        v /= np.linalg.norm(v)
        v[2] = abs(v[2])
        if v[2] >= min_elevation:
            return v
