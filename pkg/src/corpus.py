"""
Geração dos datasets em disco: itens determinísticos por índice e escrita assíncrona
"""

import asyncio
from pathlib import Path
from typing import Callable, Dict, Optional

import aiofiles
import cv2
import numpy as np
from loguru import logger

from datasets import sample_name
from errors import DatasetError
from image_io import encode_image, encode_mask, encode_normals16, encode_shading16, load_image
from imaging import FIELD_DTYPE, LightSpec, form_image, lambertian_shading
from normals import sphere_normals
from synth import (
    MondrianSpec,
    PerlinSpec,
    class_palette,
    distort_shading,
    gen_mondrian,
    make_decomposition_sample,
    random_light,
    sample_seed,
)

CORPUS_KINDS = ("decomposition", "distortion", "illumination")
AMBIENT = 0.15

ItemFiles = Dict[str, bytes]


def random_scene_normals(height: int, width: int, rng: np.random.Generator, max_spheres: int = 3) -> np.ndarray:
    """Entre 1 e `max_spheres` esferas aleatórias sobre um fundo fronto-paralelo"""
    spheres = []
    for _ in range(int(rng.integers(1, max_spheres + 1))):
        radius = float(rng.uniform(0.15, 0.4)) * min(height, width)
        spheres.append((float(rng.uniform(0, height - 1)), float(rng.uniform(0, width - 1)), radius))
    return sphere_normals(height, width, spheres)


def decomposition_item(index: int, seed: int, height: int, width: int, n_patches: int, frequency: int) -> ItemFiles:
    item_seed = sample_seed(seed, index)
    sample = make_decomposition_sample(
        MondrianSpec(height=height, width=width, n_patches=n_patches, rng_seed=item_seed),
        PerlinSpec(height=height, width=width, frequency=frequency, rng_seed=sample_seed(item_seed, 1)),
    )
    name = sample_name(index)
    return {
        f"images/{name}": encode_image(sample.image),
        f"albedo/{name}": encode_image(sample.albedo),
        f"shading/{name}": encode_shading16(sample.shading),
    }


def distortion_item(index: int, seed: int, height: int, width: int) -> ItemFiles:
    """Shading consistente de uma cena de esferas e sua versão distorcida"""
    rng = np.random.default_rng(sample_seed(seed, index))
    normals = random_scene_normals(height, width, rng)
    light = LightSpec.from_vector(random_light(rng), intensity=float(rng.uniform(0.7, 1.0)))
    clean = lambertian_shading(normals, light)
    return _distortion_files(index, clean, normals, int(rng.integers(2**31)))


def _distortion_files(index: int, clean: np.ndarray, normals: np.ndarray, rng_seed: int) -> ItemFiles:
    sample = distort_shading(clean, rng_seed)
    name = sample_name(index)
    return {
        f"clean/{name}": encode_shading16(sample.clean_shading),
        f"distorted/{name}": encode_shading16(sample.distorted_shading),
        f"masks/{name}": encode_mask(sample.distortion_mask),
        f"normals/{name}": encode_normals16(normals),
    }


class LandscapeSource:
    """Shadings limpos obtidos decompondo fotos de paisagens do usuário"""

    def __init__(self, directory: Path, decompose_fn: Callable, estimate_fn: Callable, height: int, width: int):
        self.paths = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
        if not self.paths:
            raise DatasetError(f"Nenhuma imagem de paisagem em {directory}")
        self.decompose_fn = decompose_fn
        self.estimate_fn = estimate_fn
        self.height = height
        self.width = width

    def item(self, index: int, seed: int) -> ItemFiles:
        image = load_image(self.paths[index % len(self.paths)])
        image = np.clip(cv2.resize(image, (self.width, self.height), interpolation=cv2.INTER_AREA), 0.0, 1.0)
        _, shading = self.decompose_fn(image)
        normals = self.estimate_fn(image)
        return _distortion_files(index, shading, normals, sample_seed(seed, index))


def illumination_item(
    index: int,
    seed: int,
    height: int,
    width: int,
    n_patches: int,
    n_scenes: int,
    n_lights: int,
) -> ItemFiles:
    """Uma cena (classe, cena) renderizada sob `n_lights` luzes aleatórias"""
    class_index, scene_index = divmod(index, n_scenes)
    rng = np.random.default_rng(sample_seed(seed, 1_000_000 + index))
    albedo = gen_mondrian(
        MondrianSpec(
            height=height,
            width=width,
            n_patches=n_patches,
            rng_seed=int(rng.integers(2**31)),
            palette=class_palette(class_index, seed),
        )
    )
    normals = random_scene_normals(height, width, rng)
    files = {}
    for k in range(n_lights):
        light = LightSpec.from_vector(random_light(rng))
        shading = (AMBIENT + (1.0 - AMBIENT) * lambertian_shading(normals, light)).astype(FIELD_DTYPE)
        files[f"class_{class_index:02d}/scene_{scene_index:03d}/light_{k}.png"] = encode_image(form_image(albedo, shading))
    return files


async def write_dataset(root: Path, count: int, make_item: Callable[[int], ItemFiles], workers: int = 4) -> int:
    """Produtores geram itens em threads; um único consumidor grava os PNGs com aiofiles

    Retorna o número de arquivos gravados.
    """
    root = Path(root)
    workers = max(1, workers)
    queue: asyncio.Queue = asyncio.Queue(maxsize=workers * 4)
    written = 0

    async def producer(indices: range) -> None:
        for index in indices:
            files = await asyncio.to_thread(make_item, index)
            await queue.put(files)

    async def consumer() -> None:
        nonlocal written
        created = set()
        while True:
            files: Optional[ItemFiles] = await queue.get()
            if files is None:
                break
            for relative, data in files.items():
                path = root / relative
                if path.parent not in created:
                    path.parent.mkdir(parents=True, exist_ok=True)
                    created.add(path.parent)
                async with aiofiles.open(path, "wb") as f:
                    await f.write(data)
                written += 1

    consumer_task = asyncio.create_task(consumer())
    producing = asyncio.gather(*(producer(range(k, count, workers)) for k in range(workers)))
    closing: Optional[asyncio.Task] = None
    try:
        await asyncio.wait({producing, consumer_task}, return_when=asyncio.FIRST_COMPLETED)
        if consumer_task.done():
            # Antes do sentinela o consumidor só termina por falha
            consumer_task.result()
        await producing
        closing = asyncio.create_task(queue.put(None))
        await asyncio.wait({closing, consumer_task}, return_when=asyncio.FIRST_COMPLETED)
        await consumer_task
    except BaseException:
        for task in (producing, consumer_task, closing):
            if task is not None:
                task.cancel()
        raise
    logger.info(f"💾 {written} arquivos gravados em {root}")
    return written
