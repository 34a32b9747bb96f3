"""
Discriminador normal-shading: U-Net sobre (normais, shading) com um escore global de
realismo e um mapa de realismo por pixel
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from loguru import logger
from sklearn.metrics import jaccard_score, roc_auc_score

from checkpoints import load_checkpoint, save_checkpoint
from config import DiscriminatorTrainConfig
from datasets import DistortionRecord
from errors import CheckpointError, DatasetError, InvalidFieldError, ShapeMismatchError
from imaging import FIELD_DTYPE, cut_and_paste
from networks import UNet, image_to_tensor, pad_to_multiple, seed_everything

KIND = "discriminator"
REAL, FAKE = 1, 0


class ShadingDiscriminator(nn.Module):
    """Entrada (B,4,H,W) = normais ‖ shading → (logit global (B,), logits por pixel (B,H,W))"""

    def __init__(self, depth: int = 4, base_width: int = 32):
        super().__init__()
        self.unet = UNet(4, 1, depth=depth, base_width=base_width)
        self.global_head = nn.Linear(self.unet.widths[-1], 1)

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        padded, (h, w) = pad_to_multiple(x, self.unet.multiple, minimum=2 * self.unet.multiple)
        bottleneck, skips = self.unet.encode(padded)
        global_logit = self.global_head(bottleneck.mean(dim=(2, 3)))[:, 0]
        map_logits = self.unet.decode(bottleneck, skips)[:, 0, :h, :w]
        return global_logit, map_logits


@dataclass
class DiscTrainSample:
    normals: np.ndarray
    shading: np.ndarray
    label: int
    pixel_labels: np.ndarray

    def __post_init__(self):
        if self.normals.shape[:2] != self.shading.shape or self.shading.shape != self.pixel_labels.shape:
            raise ShapeMismatchError(
                f"Amostra inconsistente: normais {self.normals.shape}, shading {self.shading.shape}, "
                f"rótulos {self.pixel_labels.shape}"
            )
        all_real = bool(np.all(self.pixel_labels == 1))
        if (self.label == REAL) != all_real:
            raise InvalidFieldError("Rótulo global inconsistente com o mapa de rótulos por pixel")


def real_sample(normals: np.ndarray, shading: np.ndarray) -> DiscTrainSample:
    return DiscTrainSample(
        normals=normals.astype(FIELD_DTYPE),
        shading=shading.astype(FIELD_DTYPE),
        label=REAL,
        pixel_labels=np.ones(shading.shape, dtype=FIELD_DTYPE),
    )


def fake_sample(normals: np.ndarray, distorted_shading: np.ndarray, mask: np.ndarray) -> DiscTrainSample:
    """Pixels distorcidos recebem rótulo 0, os demais 1"""
    return DiscTrainSample(
        normals=normals.astype(FIELD_DTYPE),
        shading=distorted_shading.astype(FIELD_DTYPE),
        label=FAKE,
        pixel_labels=(1.0 - mask).astype(FIELD_DTYPE),
    )


def samples_from_records(records: Sequence[DistortionRecord]) -> List[DiscTrainSample]:
    """Um par real (shading limpo) e um falso (distorcido) por registro"""
    samples = []
    for record in records:
        samples.append(real_sample(record.normals, record.clean))
        samples.append(fake_sample(record.normals, record.distorted, record.mask))
    return samples


def cutmix_box(height: int, width: int, rng_seed: int, box_fraction: Optional[float] = None) -> np.ndarray:
    """Máscara retangular cobrindo `box_fraction` do quadro (sorteada se None)"""
    rng = np.random.default_rng(rng_seed)
    fraction = float(rng.uniform(0.0, 1.0)) if box_fraction is None else box_fraction
    if not 0.0 <= fraction <= 1.0:
        raise InvalidFieldError(f"box_fraction deve estar em [0,1]: {fraction}")
    bh = int(round(height * np.sqrt(fraction)))
    bw = int(round(width * np.sqrt(fraction)))
    y0 = int(rng.integers(0, height - bh + 1))
    x0 = int(rng.integers(0, width - bw + 1))
    box = np.zeros((height, width), dtype=FIELD_DTYPE)
    box[y0:y0 + bh, x0:x0 + bw] = 1.0
    return box


def cutmix_augment(
    a: DiscTrainSample, b: DiscTrainSample, rng_seed: int, box_fraction: Optional[float] = None
) -> DiscTrainSample:
    """Cola uma caixa de `b` em `a` (normais, shading e rótulos); qualquer pixel falso torna a amostra falsa"""
    if a.shading.shape != b.shading.shape:
        raise ShapeMismatchError(f"cutmix_augment: {a.shading.shape} != {b.shading.shape}")
    box = cutmix_box(*a.shading.shape, rng_seed=rng_seed, box_fraction=box_fraction)
    pixel_labels = cut_and_paste(b.pixel_labels, a.pixel_labels, box)
    return DiscTrainSample(
        normals=cut_and_paste(b.normals, a.normals, box),
        shading=cut_and_paste(b.shading, a.shading, box),
        label=REAL if np.all(pixel_labels == 1) else FAKE,
        pixel_labels=pixel_labels,
    )


def stack_samples(
    samples: Sequence[DiscTrainSample], shading_only: bool = False
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """→ entradas (N,4,H,W), rótulos globais (N,), rótulos por pixel (N,H,W)"""
    shapes = {s.shading.shape for s in samples}
    if len(shapes) != 1:
        raise ShapeMismatchError(f"Amostras com formatos diferentes: {sorted(shapes)}")
    normals = np.stack([s.normals for s in samples]).transpose(0, 3, 1, 2)
    if shading_only:
        normals = np.zeros_like(normals)
    shading = np.stack([s.shading for s in samples])[:, None]
    inputs = torch.from_numpy(np.concatenate([normals, shading], axis=1).astype(FIELD_DTYPE))
    labels = torch.tensor([float(s.label) for s in samples])
    pixel_labels = torch.from_numpy(np.stack([s.pixel_labels for s in samples]).astype(FIELD_DTYPE))
    return inputs, labels, pixel_labels


def discriminator_losses(
    global_logits: torch.Tensor,
    map_logits: torch.Tensor,
    labels: torch.Tensor,
    pixel_labels: torch.Tensor,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """(L_enc, L_dec): BCE global e soma das BCE por pixel, ambas com média no lote"""
    l_enc = F.binary_cross_entropy_with_logits(global_logits, labels)
    l_dec = F.binary_cross_entropy_with_logits(map_logits, pixel_labels, reduction="none").sum(dim=(1, 2)).mean()
    return l_enc, l_dec


@dataclass
class DiscriminatorModel:
    net: ShadingDiscriminator
    architecture: Dict[str, int]
    shading_only: bool = False
    seed: int = 0
    epochs: int = 0
    enc_losses: List[float] = field(default_factory=list)
    dec_losses: List[float] = field(default_factory=list)
    val_losses: List[float] = field(default_factory=list)

    @property
    def trained(self) -> bool:
        return self.epochs > 0

    @property
    def device(self) -> torch.device:
        return next(self.net.parameters()).device

    def freeze(self) -> "DiscriminatorModel":
        self.net.eval()
        for param in self.net.parameters():
            param.requires_grad_(False)
        return self

    def probabilities(self, normals: torch.Tensor, shading: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Normais (1|B,3,H,W), shading (B,1,H,W) → (global (B,), mapa (B,H,W)) em [0,1]"""
        normals = normals.expand(shading.shape[0], -1, -1, -1)
        if self.shading_only:
            normals = torch.zeros_like(normals)
        global_logit, map_logits = self.net(torch.cat([normals, shading], dim=1))
        return torch.sigmoid(global_logit), torch.sigmoid(map_logits)

    def metadata(self) -> Dict:
        return {
            "kind": KIND,
            "architecture": self.architecture,
            "shading_only": self.shading_only,
            "seed": self.seed,
            "epochs": self.epochs,
            "enc_loss": self.enc_losses,
            "dec_loss": self.dec_losses,
            "val_loss": self.val_losses,
        }

    def save(self, path: Path) -> Path:
        return save_checkpoint(path, self.net.state_dict(), self.metadata())

    @classmethod
    def load(cls, path: Path, device: torch.device = torch.device("cpu")) -> "DiscriminatorModel":
        state, meta = load_checkpoint(path, device)
        if meta.get("kind") != KIND:
            raise CheckpointError(f"Checkpoint {path} não é de discriminador ({meta.get('kind')})")
        architecture = dict(meta["architecture"])
        net = ShadingDiscriminator(**architecture).to(device)
        try:
            net.load_state_dict(state)
        except RuntimeError as e:
            raise CheckpointError(f"Parâmetros incompatíveis em {path}: {e}")
        net.eval()
        return cls(
            net=net,
            architecture=architecture,
            shading_only=bool(meta.get("shading_only", False)),
            seed=int(meta.get("seed", 0)),
            epochs=int(meta.get("epochs", 0)),
            enc_losses=list(meta.get("enc_loss", [])),
            dec_losses=list(meta.get("dec_loss", [])),
            val_losses=list(meta.get("val_loss", [])),
        )


def _augment(samples: Sequence[DiscTrainSample], probability: float, rng: np.random.Generator) -> List[DiscTrainSample]:
    if probability <= 0.0:
        return list(samples)
    out = []
    for sample in samples:
        if rng.random() < probability:
            partner = samples[int(rng.integers(len(samples)))]
            sample = cutmix_augment(sample, partner, int(rng.integers(2**31)))
        out.append(sample)
    return out


def train_discriminator(
    samples: Sequence[DiscTrainSample],
    config: DiscriminatorTrainConfig,
    device: torch.device = torch.device("cpu"),
    out_path: Optional[Path] = None,
) -> DiscriminatorModel:
    """Treina como detector sobre corpora fixos real/falso (L = L_enc + L_dec)"""
    if len({s.label for s in samples}) < 2:
        raise DatasetError("Dataset do discriminador precisa de amostras reais e falsas")
    shapes = {s.shading.shape for s in samples}
    if len(shapes) != 1:
        raise ShapeMismatchError(f"Amostras com formatos diferentes: {sorted(shapes)}")

    seed = config.seed or 0
    seed_everything(seed)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(samples))
    n_val = max(1, int(round(len(samples) * config.validation_fraction)))
    train_set = [samples[i] for i in order[n_val:]]
    val_inputs, val_labels, val_pixels = stack_samples([samples[i] for i in order[:n_val]], config.shading_only)
    logger.info(f"🧪 Discriminador: {len(train_set)} amostras de treino, {n_val} de validação")

    architecture = {"depth": config.depth, "base_width": config.base_width}
    net = ShadingDiscriminator(**architecture).to(device)
    optimizer = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    model = DiscriminatorModel(net=net, architecture=architecture, shading_only=config.shading_only, seed=seed)

    for epoch in range(1, config.epochs + 1):
        net.train()
        inputs, labels, pixels = stack_samples(_augment(train_set, config.cutmix_probability, rng), config.shading_only)
        batches = torch.randperm(len(train_set), generator=torch.Generator().manual_seed(seed + epoch))
        enc_total, dec_total, count = 0.0, 0.0, 0
        for start in range(0, len(train_set), config.batch_size):
            idx = batches[start:start + config.batch_size]
            x, y, p = inputs[idx].to(device), labels[idx].to(device), pixels[idx].to(device)
            optimizer.zero_grad()
            l_enc, l_dec = discriminator_losses(*net(x), y, p)
            (l_enc + l_dec).backward()
            optimizer.step()
            enc_total += l_enc.item() * len(idx)
            dec_total += l_dec.item() * len(idx)
            count += len(idx)

        net.eval()
        with torch.no_grad():
            v_enc, v_dec = discriminator_losses(*net(val_inputs.to(device)), val_labels.to(device), val_pixels.to(device))
        model.enc_losses.append(enc_total / count)
        model.dec_losses.append(dec_total / count)
        model.val_losses.append(v_enc.item() + v_dec.item())
        model.epochs = epoch
        logger.info(
            f"📉 Época {epoch}/{config.epochs}: L_enc={enc_total / count:.4f} "
            f"L_dec={dec_total / count:.2f} validação={model.val_losses[-1]:.2f}"
        )

    net.eval()
    if out_path is not None:
        model.save(out_path)
    return model


@torch.no_grad()
def score(model: DiscriminatorModel, normals: np.ndarray, shading: np.ndarray) -> Tuple[float, np.ndarray]:
    """(escore global, mapa (H,W)), ambos em [0,1]"""
    if not model.trained:
        raise CheckpointError("Discriminador não treinado")
    if normals.shape[:2] != shading.shape:
        raise ShapeMismatchError(f"score: normais {normals.shape} vs shading {shading.shape}")
    model.net.eval()
    device = model.device
    global_score, pixel_map = model.probabilities(image_to_tensor(normals, device), image_to_tensor(shading, device))
    return float(global_score[0].item()), pixel_map[0].cpu().numpy().astype(FIELD_DTYPE)


def evaluate_discriminator(model: DiscriminatorModel, samples: Sequence[DiscTrainSample]) -> Dict[str, float]:
    """AUC global (real vs falso) e IoU da região inconsistente prevista nas amostras falsas"""
    scores, labels, truth, predicted = [], [], [], []
    for sample in samples:
        global_score, pixel_map = score(model, sample.normals, sample.shading)
        scores.append(global_score)
        labels.append(sample.label)
        if sample.label == FAKE:
            truth.append((sample.pixel_labels < 0.5).ravel())
            predicted.append((pixel_map < 0.5).ravel())

    scores_arr, labels_arr = np.asarray(scores), np.asarray(labels)
    metrics = {
        "auc": float(roc_auc_score(labels_arr, scores_arr)) if len(set(labels)) == 2 else float("nan"),
        "mean_real_score": float(scores_arr[labels_arr == REAL].mean()) if np.any(labels_arr == REAL) else float("nan"),
        "mean_fake_score": float(scores_arr[labels_arr == FAKE].mean()) if np.any(labels_arr == FAKE) else float("nan"),
    }
    if truth:
        metrics["iou"] = float(jaccard_score(np.concatenate(truth), np.concatenate(predicted), zero_division=0.0))
    else:
        metrics["iou"] = float("nan")
    return metrics
