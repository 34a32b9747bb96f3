"""
Albedo-Shading Net: U-Net que separa uma imagem em albedo (3 canais) e shading (1 canal)
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from loguru import logger
from torch.utils.data import DataLoader, Subset

from checkpoints import load_checkpoint, save_checkpoint
from config import DecompositionTrainConfig
from datasets import DecompositionDataset
from errors import CheckpointError, DatasetError
from imaging import FIELD_DTYPE, validate_image
from networks import UNet, image_to_tensor, seed_everything, tensor_to_image
from synth import DecompositionSample

KIND = "decomposition"


class DecompositionNet(nn.Module):
    """Imagem (3) → albedo (3) + shading (1), ambos em [0,1] via sigmoide"""

    def __init__(self, depth: int = 4, base_width: int = 32):
        super().__init__()
        self.unet = UNet(3, 4, depth=depth, base_width=base_width)

    def forward(self, image: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        out = torch.sigmoid(self.unet(image))
        return out[:, :3], out[:, 3:]


@dataclass
class DecompositionModel:
    net: DecompositionNet
    architecture: Dict[str, int]
    seed: int = 0
    epochs: int = 0
    train_losses: List[float] = field(default_factory=list)
    val_losses: List[float] = field(default_factory=list)

    @property
    def trained(self) -> bool:
        return self.epochs > 0

    def metadata(self) -> Dict:
        return {
            "kind": KIND,
            "architecture": self.architecture,
            "seed": self.seed,
            "epochs": self.epochs,
            "train_loss": self.train_losses,
            "val_loss": self.val_losses,
        }

    def save(self, path: Path) -> Path:
        return save_checkpoint(path, self.net.state_dict(), self.metadata())

    @classmethod
    def load(cls, path: Path, device: torch.device = torch.device("cpu")) -> "DecompositionModel":
        state, meta = load_checkpoint(path, device)
        if meta.get("kind") != KIND:
            raise CheckpointError(f"Checkpoint {path} não é de decomposição ({meta.get('kind')})")
        architecture = dict(meta["architecture"])
        net = DecompositionNet(**architecture).to(device)
        try:
            net.load_state_dict(state)
        except RuntimeError as e:
            raise CheckpointError(f"Parâmetros incompatíveis em {path}: {e}")
        net.eval()
        return cls(
            net=net,
            architecture=architecture,
            seed=int(meta.get("seed", 0)),
            epochs=int(meta.get("epochs", 0)),
            train_losses=list(meta.get("train_loss", [])),
            val_losses=list(meta.get("val_loss", [])),
        )


def decomposition_loss(image, albedo_true, shading_true, albedo_pred, shading_pred) -> torch.Tensor:
    """MSE do albedo + MSE do shading + MSE da reconstrução ρ̂⊙Ŝ"""
    return (
        F.mse_loss(albedo_pred, albedo_true)
        + F.mse_loss(shading_pred, shading_true)
        + F.mse_loss(albedo_pred * shading_pred, image)
    )


def _split(dataset, validation_fraction: float, seed: int) -> Tuple[Subset, Subset]:
    n = len(dataset)
    n_val = max(1, int(round(n * validation_fraction)))
    if n - n_val < 1:
        raise DatasetError(f"Dataset pequeno demais para validação: {n} amostras")
    order = torch.randperm(n, generator=torch.Generator().manual_seed(seed)).tolist()
    return Subset(dataset, order[n_val:]), Subset(dataset, order[:n_val])


def train_decomposition(
    config: DecompositionTrainConfig,
    device: torch.device = torch.device("cpu"),
    out_path: Optional[Path] = None,
) -> DecompositionModel:
    """Treina a rede nas amostras Mondrian/Perlin de `config.dataset_dir`"""
    seed = config.seed or 0
    dataset = DecompositionDataset(Path(config.dataset_dir))
    train_set, val_set = _split(dataset, config.validation_fraction, seed)
    logger.info(f"🧪 Decomposição: {len(train_set)} amostras de treino, {len(val_set)} de validação")

    seed_everything(seed)
    architecture = {"depth": config.depth, "base_width": config.base_width}
    net = DecompositionNet(**architecture).to(device)
    optimizer = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    loader = DataLoader(
        train_set,
        batch_size=config.batch_size,
        shuffle=True,
        num_workers=config.num_workers,
        generator=torch.Generator().manual_seed(seed),
    )
    val_loader = DataLoader(val_set, batch_size=config.batch_size, shuffle=False, num_workers=config.num_workers)
    model = DecompositionModel(net=net, architecture=architecture, seed=seed)

    for epoch in range(1, config.epochs + 1):
        net.train()
        running, count = 0.0, 0
        for image, albedo, shading in loader:
            image, albedo, shading = image.to(device), albedo.to(device), shading.to(device)
            optimizer.zero_grad()
            albedo_pred, shading_pred = net(image)
            loss = decomposition_loss(image, albedo, shading, albedo_pred, shading_pred)
            loss.backward()
            optimizer.step()
            running += loss.item() * image.shape[0]
            count += image.shape[0]

        val_loss = _evaluate_loader(net, val_loader, device)
        model.train_losses.append(running / count)
        model.val_losses.append(val_loss)
        model.epochs = epoch
        logger.info(f"📉 Época {epoch}/{config.epochs}: treino={running / count:.6f} validação={val_loss:.6f}")

    net.eval()
    if out_path is not None:
        model.save(out_path)
    return model


@torch.no_grad()
def _evaluate_loader(net: DecompositionNet, loader: DataLoader, device: torch.device) -> float:
    net.eval()
    total, count = 0.0, 0
    for image, albedo, shading in loader:
        image, albedo, shading = image.to(device), albedo.to(device), shading.to(device)
        albedo_pred, shading_pred = net(image)
        total += decomposition_loss(image, albedo, shading, albedo_pred, shading_pred).item() * image.shape[0]
        count += image.shape[0]
    return total / max(count, 1)


@torch.no_grad()
def decompose(model: DecompositionModel, image: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Imagem (H,W,3) → (albedo (H,W,3), shading (H,W))"""
    if not model.trained:
        raise CheckpointError("Modelo de decomposição não treinado")
    validate_image(image)
    model.net.eval()
    device = next(model.net.parameters()).device
    albedo, shading = model.net(image_to_tensor(image, device))
    return tensor_to_image(albedo).astype(FIELD_DTYPE), tensor_to_image(shading).astype(FIELD_DTYPE)


def evaluate_decomposition(model: DecompositionModel, samples: Sequence[DecompositionSample]) -> Dict[str, float]:
    """MSE de reconstrução, albedo e shading num conjunto separado"""
    recon, albedo_err, shading_err = [], [], []
    for sample in samples:
        albedo, shading = decompose(model, sample.image)
        recon.append(float(np.mean((albedo * shading[..., None] - sample.image) ** 2)))
        albedo_err.append(float(np.mean((albedo - sample.albedo) ** 2)))
        shading_err.append(float(np.mean((shading - sample.shading) ** 2)))
    return {
        "reconstruction_mse": float(np.mean(recon)),
        "albedo_mse": float(np.mean(albedo_err)),
        "shading_mse": float(np.mean(shading_err)),
    }
