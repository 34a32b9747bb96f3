"""
Rede de percepção robusta: classificador AlexNet ajustado para que uma camada interna
produza features invariantes à iluminação (usadas na perda perceptual do reshading)
"""

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from loguru import logger
from torchvision.models import AlexNet_Weights, alexnet

from checkpoints import load_checkpoint, save_checkpoint
from config import FeaturesTrainConfig
from datasets import IlluminationGroup
from errors import CheckpointError, DatasetError
from image_io import load_image
from imaging import FIELD_DTYPE, validate_image
from networks import image_to_tensor, seed_everything

KIND = "features"
# features[:12] termina no ReLU da última convolução (256 canais)
FEATURE_LAYER = "features.11"
FEATURE_DIM = 256
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class RobustClassifier(nn.Module):
    """AlexNet com cabeça nova; expõe a camada L_i média-agrupada"""

    def __init__(self, n_classes: int, pretrained: bool = True):
        super().__init__()
        weights = AlexNet_Weights.DEFAULT if pretrained else None
        net = alexnet(weights=weights)
        self.backbone = net.features[:12]
        self.pool = net.features[12]
        self.avgpool = net.avgpool
        self.classifier = net.classifier
        self.classifier[6] = nn.Linear(self.classifier[6].in_features, n_classes)
        self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1))

    def layer_map(self, images: torch.Tensor) -> torch.Tensor:
        return self.backbone((images - self.mean) / self.std)

    def forward(self, images: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Imagens normalizadas em [0,1] → (features (B,256), logits (B,classes))"""
        fmap = self.layer_map(images)
        features = fmap.mean(dim=(2, 3))
        logits = self.classifier(torch.flatten(self.avgpool(self.pool(fmap)), 1))
        return features, logits


@dataclass
class FeatureExtractor:
    classifier: RobustClassifier
    class_names: List[str]
    layer: str = FEATURE_LAYER
    feature_dim: int = FEATURE_DIM
    image_size: int = 224
    pretrained: bool = True
    consistency_weight: float = 0.0
    seed: int = 0
    epochs: int = 0
    classification_losses: List[float] = field(default_factory=list)
    consistency_losses: List[float] = field(default_factory=list)

    def resize(self, images: torch.Tensor) -> torch.Tensor:
        if images.shape[-2:] == (self.image_size, self.image_size):
            return images
        return F.interpolate(images, size=(self.image_size, self.image_size), mode="bilinear", align_corners=False)

    def embed(self, images: torch.Tensor) -> torch.Tensor:
        """(B,3,H,W) em [0,1] → (B, feature_dim); diferenciável em relação à entrada"""
        return self.classifier(self.resize(images))[0]

    def freeze(self) -> "FeatureExtractor":
        self.classifier.eval()
        for param in self.classifier.parameters():
            param.requires_grad_(False)
        return self

    def metadata(self) -> Dict:
        return {
            "kind": KIND,
            "class_names": self.class_names,
            "layer": self.layer,
            "feature_dim": self.feature_dim,
            "image_size": self.image_size,
            "pretrained": self.pretrained,
            "consistency_weight": self.consistency_weight,
            "seed": self.seed,
            "epochs": self.epochs,
            "classification_loss": self.classification_losses,
            "consistency_loss": self.consistency_losses,
        }

    def save(self, path: Path) -> Path:
        return save_checkpoint(path, self.classifier.state_dict(), self.metadata())

    @classmethod
    def load(cls, path: Path, device: torch.device = torch.device("cpu")) -> "FeatureExtractor":
        state, meta = load_checkpoint(path, device)
        if meta.get("kind") != KIND:
            raise CheckpointError(f"Checkpoint {path} não é de features ({meta.get('kind')})")
        class_names = list(meta["class_names"])
        classifier = RobustClassifier(len(class_names), pretrained=False).to(device)
        try:
            classifier.load_state_dict(state)
        except RuntimeError as e:
            raise CheckpointError(f"Parâmetros incompatíveis em {path}: {e}")
        classifier.eval()
        return cls(
            classifier=classifier,
            class_names=class_names,
            layer=str(meta.get("layer", FEATURE_LAYER)),
            feature_dim=int(meta.get("feature_dim", FEATURE_DIM)),
            image_size=int(meta.get("image_size", 224)),
            pretrained=bool(meta.get("pretrained", True)),
            consistency_weight=float(meta.get("consistency_weight", 0.0)),
            seed=int(meta.get("seed", 0)),
            epochs=int(meta.get("epochs", 0)),
            classification_losses=list(meta.get("classification_loss", [])),
            consistency_losses=list(meta.get("consistency_loss", [])),
        )


def build_classifier(
    class_names: Sequence[str],
    pretrained: bool = True,
    image_size: int = 224,
    device: torch.device = torch.device("cpu"),
) -> FeatureExtractor:
    """AlexNet (pesos ImageNet do torchvision) com cabeça do tamanho do vocabulário"""
    if not class_names:
        raise DatasetError("Vocabulário de classes vazio")
    classifier = RobustClassifier(len(class_names), pretrained=pretrained).to(device)
    classifier.eval()
    return FeatureExtractor(
        classifier=classifier,
        class_names=list(class_names),
        image_size=image_size,
        pretrained=pretrained,
    )


def feature_distance(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """‖a − b‖² ao longo da última dimensão"""
    return ((a - b) ** 2).sum(dim=-1)


def consistency_loss(features: torch.Tensor) -> torch.Tensor:
    """Média das distâncias quadráticas entre todos os pares do grupo"""
    return torch.pdist(features).pow(2).mean()


def _check_groups(groups: Sequence[IlluminationGroup], class_names: Sequence[str]) -> None:
    if not groups:
        raise DatasetError("Nenhum grupo de iluminação para treinar")
    vocabulary = set(class_names)
    for group in groups:
        if len(group.image_paths) < 2:
            raise DatasetError(f"Grupo {group.label}/{group.scene_id} precisa de >= 2 imagens")
        if group.label not in vocabulary:
            raise DatasetError(f"Rótulo '{group.label}' fora do vocabulário do classificador")


def _load_group(group: IlluminationGroup, device: torch.device) -> List[torch.Tensor]:
    return [image_to_tensor(load_image(p), device) for p in group.image_paths]


def split_groups(
    groups: Sequence[IlluminationGroup], fraction: float, seed: int
) -> Tuple[List[IlluminationGroup], List[IlluminationGroup]]:
    """Separação estratificada por classe: (treino, validação)"""
    rng = np.random.default_rng(seed)
    train, held_out = [], []
    for label in sorted({g.label for g in groups}):
        members = [g for g in groups if g.label == label]
        order = rng.permutation(len(members))
        n_held = min(len(members) - 1, max(1, int(round(len(members) * fraction)))) if len(members) > 1 else 0
        held_out.extend(members[i] for i in order[:n_held])
        train.extend(members[i] for i in order[n_held:])
    return train, held_out


def finetune_features(
    extractor: FeatureExtractor,
    groups: Sequence[IlluminationGroup],
    config: FeaturesTrainConfig,
    device: torch.device = torch.device("cpu"),
    out_path: Optional[Path] = None,
) -> FeatureExtractor:
    """Perda total = entropia cruzada + λ_c · distância média intra-grupo na camada L_i

    O extrator recebido não é alterado; o resultado é uma cópia ajustada.
    """
    _check_groups(groups, extractor.class_names)
    seed = config.seed or 0
    seed_everything(seed)

    tuned = copy.deepcopy(extractor)
    tuned.classifier.to(device)
    tuned.image_size = config.image_size
    tuned.consistency_weight = config.consistency_weight
    tuned.seed = seed
    for param in tuned.classifier.parameters():
        param.requires_grad_(True)

    label_index = {name: i for i, name in enumerate(tuned.class_names)}
    cache = [(_load_group(g, device), label_index[g.label]) for g in groups]
    optimizer = torch.optim.Adam(tuned.classifier.parameters(), lr=config.learning_rate)
    generator = torch.Generator().manual_seed(seed)
    logger.info(f"🧪 Features: {len(groups)} grupos, λ_c={config.consistency_weight}")

    for epoch in range(1, config.epochs + 1):
        tuned.classifier.train()
        order = torch.randperm(len(cache), generator=generator).tolist()
        cls_total, cons_total, steps = 0.0, 0.0, 0
        for start in range(0, len(order), config.batch_size):
            optimizer.zero_grad()
            cls_terms, cons_terms = [], []
            for idx in order[start:start + config.batch_size]:
                images, label = cache[idx]
                batch = torch.cat([tuned.resize(t) for t in images])
                features, logits = tuned.classifier(batch)
                targets = torch.full((batch.shape[0],), label, dtype=torch.long, device=device)
                cls_terms.append(F.cross_entropy(logits, targets))
                cons_terms.append(consistency_loss(features))
            cls_loss = torch.stack(cls_terms).mean()
            cons_loss = torch.stack(cons_terms).mean()
            loss = cls_loss + config.consistency_weight * cons_loss
            loss.backward()
            optimizer.step()
            cls_total += cls_loss.item()
            cons_total += cons_loss.item()
            steps += 1

        tuned.classification_losses.append(cls_total / steps)
        tuned.consistency_losses.append(cons_total / steps)
        tuned.epochs = epoch
        logger.info(
            f"📉 Época {epoch}/{config.epochs}: classificação={cls_total / steps:.4f} "
            f"consistência={cons_total / steps:.4f}"
        )

    tuned.freeze()
    if out_path is not None:
        tuned.save(out_path)
    return tuned


@torch.no_grad()
def extract_features(extractor: FeatureExtractor, image: np.ndarray) -> np.ndarray:
    """Imagem (H,W,3) → vetor de dimensão `feature_dim` (redimensionamento incluso)"""
    validate_image(image)
    extractor.classifier.eval()
    device = next(extractor.classifier.parameters()).device
    return extractor.embed(image_to_tensor(image, device))[0].cpu().numpy().astype(FIELD_DTYPE)


def mean_group_distance(extractor: FeatureExtractor, groups: Sequence[IlluminationGroup]) -> float:
    """Média, sobre os grupos, da distância quadrática média entre pares do grupo"""
    distances = []
    for group in groups:
        feats = torch.from_numpy(np.stack([extract_features(extractor, load_image(p)) for p in group.image_paths]))
        distances.append(consistency_loss(feats.double()).item())
    return float(np.mean(distances))


@torch.no_grad()
def classification_accuracy(extractor: FeatureExtractor, groups: Sequence[IlluminationGroup]) -> float:
    """Fração de imagens classificadas com o rótulo do grupo"""
    extractor.classifier.eval()
    device = next(extractor.classifier.parameters()).device
    label_index = {name: i for i, name in enumerate(extractor.class_names)}
    correct, total = 0, 0
    for group in groups:
        for path in group.image_paths:
            logits = extractor.classifier(extractor.resize(image_to_tensor(load_image(path), device)))[1]
            correct += int(logits.argmax(dim=1).item() == label_index[group.label])
            total += 1
    return correct / max(total, 1)
