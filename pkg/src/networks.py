"""
Blocos encoder-decoder com skip connections (U-Net) compartilhados pelas redes
"""

import random
from typing import List, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from loguru import logger


def seed_everything(seed: int) -> None:
    """Fixa todas as fontes de aleatoriedade para execuções reprodutíveis"""
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)
    if torch.backends.cudnn.is_available():
        torch.backends.cudnn.benchmark = False
        torch.backends.cudnn.deterministic = True


def resolve_device(name: str) -> torch.device:
    """Usa o dispositivo pedido, caindo para CPU quando CUDA não existe"""
    if name.startswith("cuda") and not torch.cuda.is_available():
        logger.warning("⚠️ CUDA indisponível, usando CPU")
        return torch.device("cpu")
    return torch.device(name)


def image_to_tensor(field: np.ndarray, device: torch.device = torch.device("cpu")) -> torch.Tensor:
    """(H,W) ou (H,W,C) → (1,C,H,W)"""
    array = field[..., None] if field.ndim == 2 else field
    return torch.from_numpy(np.ascontiguousarray(array.transpose(2, 0, 1))).float().unsqueeze(0).to(device)


def tensor_to_image(tensor: torch.Tensor) -> np.ndarray:
    """(1,C,H,W) → (H,W) se C=1, senão (H,W,C)"""
    array = tensor.detach().cpu().float().numpy()[0].transpose(1, 2, 0)
    return array[..., 0] if array.shape[2] == 1 else array


def pad_to_multiple(x: torch.Tensor, multiple: int, minimum: int = 0) -> Tuple[torch.Tensor, Tuple[int, int]]:
    """Padding por replicação até as dimensões serem múltiplas de `multiple` (e >= `minimum`)"""
    h, w = x.shape[-2:]
    pad_h = max((multiple - h % multiple) % multiple, minimum - h)
    pad_w = max((multiple - w % multiple) % multiple, minimum - w)
    if pad_h == 0 and pad_w == 0:
        return x, (h, w)
    return F.pad(x, (0, pad_w, 0, pad_h), mode="replicate"), (h, w)


class ConvBlock(nn.Module):
    """Duas convoluções 3x3 com BatchNorm e LeakyReLU"""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(in_channels, out_channels, kernel_size=3, padding=1),
            nn.BatchNorm2d(out_channels),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(out_channels, out_channels, kernel_size=3, padding=1),
            nn.BatchNorm2d(out_channels),
            nn.LeakyReLU(0.2, inplace=True),
        )

    def forward(self, x):
        return self.block(x)


class UNet(nn.Module):
    """U-Net genérica com `depth` reduções e skip connection em todos os níveis

    `forward` devolve logits; o chamador escolhe a ativação de saída.
    """

    def __init__(self, in_channels: int, out_channels: int, depth: int = 4, base_width: int = 32, max_width: int = 256):
        super().__init__()
        self.depth = depth
        widths = [min(base_width * 2**i, max_width) for i in range(depth + 1)]
        self.widths = widths

        self.encoders = nn.ModuleList()
        previous = in_channels
        for width in widths[:-1]:
            self.encoders.append(ConvBlock(previous, width))
            previous = width
        self.bottleneck = ConvBlock(widths[-2], widths[-1])

        self.decoders = nn.ModuleList()
        previous = widths[-1]
        for width in reversed(widths[:-1]):
            self.decoders.append(ConvBlock(previous + width, width))
            previous = width

        self.pool = nn.MaxPool2d(2)
        self.upsample = nn.Upsample(scale_factor=2, mode="nearest")
        self.head = nn.Conv2d(widths[0], out_channels, kernel_size=1)

    @property
    def multiple(self) -> int:
        return 2**self.depth

    def encode(self, x: torch.Tensor) -> Tuple[torch.Tensor, List[torch.Tensor]]:
        skips = []
        for encoder in self.encoders:
            x = encoder(x)
            skips.append(x)
            x = self.pool(x)
        return self.bottleneck(x), skips

    def decode(self, x: torch.Tensor, skips: List[torch.Tensor]) -> torch.Tensor:
        for decoder, skip in zip(self.decoders, reversed(skips)):
            x = self.upsample(x)
            x = decoder(torch.cat([x, skip], dim=1))
        return self.head(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # Bottleneck keeps at least 2x2 so BatchNorm sees more than one value
        padded, (h, w) = pad_to_multiple(x, self.multiple, minimum=2 * self.multiple)
        bottleneck, skips = self.encode(padded)
        return self.decode(bottleneck, skips)[..., :h, :w]
