"""
Leitura dos datasets gerados em disco
"""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence

import numpy as np
import torch
from torch.utils.data import Dataset

from errors import DatasetError
from image_io import load_image, load_mask, load_normals16, load_shading16

DECOMPOSITION_DIRS = ("images", "albedo", "shading")
DISTORTION_DIRS = ("clean", "distorted", "masks", "normals")


def sample_name(index: int) -> str:
    return f"{index:06d}.png"


def check_layout(root: Path, subdirs: Sequence[str]) -> List[str]:
    """Valida que todos os subdiretórios existem e contêm os mesmos arquivos"""
    if not root.is_dir():
        raise DatasetError(f"Diretório de dataset não encontrado: {root}")
    missing = [d for d in subdirs if not (root / d).is_dir()]
    if missing:
        raise DatasetError(f"Layout inválido em {root}: faltam {', '.join(missing)}")
    names = sorted(p.name for p in (root / subdirs[0]).glob("*.png"))
    if not names:
        raise DatasetError(f"Dataset vazio: {root}")
    for d in subdirs[1:]:
        other = sorted(p.name for p in (root / d).glob("*.png"))
        if other != names:
            raise DatasetError(f"Layout inválido em {root}: '{d}' não corresponde a '{subdirs[0]}'")
    return names


class DecompositionDataset(Dataset):
    """Triplas (imagem, albedo, shading) no layout images/albedo/shading"""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.names = check_layout(self.root, DECOMPOSITION_DIRS)

    def __len__(self):
        return len(self.names)

    def __getitem__(self, index):
        name = self.names[index]
        image = load_image(self.root / "images" / name)
        albedo = load_image(self.root / "albedo" / name)
        shading = load_shading16(self.root / "shading" / name)
        return (
            torch.from_numpy(image.transpose(2, 0, 1).copy()),
            torch.from_numpy(albedo.transpose(2, 0, 1).copy()),
            torch.from_numpy(shading[None].copy()),
        )


@dataclass
class DistortionRecord:
    clean: np.ndarray
    distorted: np.ndarray
    mask: np.ndarray
    normals: np.ndarray


def load_distortion_records(root: Path) -> List[DistortionRecord]:
    """Carrega o layout clean/distorted/masks/normals inteiro em memória"""
    root = Path(root)
    names = check_layout(root, DISTORTION_DIRS)
    return [
        DistortionRecord(
            clean=load_shading16(root / "clean" / name),
            distorted=load_shading16(root / "distorted" / name),
            mask=load_mask(root / "masks" / name),
            normals=load_normals16(root / "normals" / name),
        )
        for name in names
    ]


@dataclass
class IlluminationGroup:
    """Mesma cena sob iluminações diferentes"""

    scene_id: str
    label: str
    image_paths: List[Path]

    def __post_init__(self):
        if len(self.image_paths) < 2:
            raise DatasetError(f"Grupo {self.label}/{self.scene_id} precisa de >= 2 imagens")


def load_illumination_groups(root: Path) -> List[IlluminationGroup]:
    """Lê root/<classe>/<cena>/<iluminação_k>.png"""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"Diretório de dataset não encontrado: {root}")
    groups = []
    for class_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for scene_dir in sorted(p for p in class_dir.iterdir() if p.is_dir()):
            paths = sorted(scene_dir.glob("*.png"))
            groups.append(IlluminationGroup(scene_id=scene_dir.name, label=class_dir.name, image_paths=paths))
    if not groups:
        raise DatasetError(f"Nenhum grupo de iluminação em {root}")
    return groups
