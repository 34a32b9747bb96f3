"""
Configurações do pipeline de reshading
"""

import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from errors import ConfigError


@dataclass
class Config:
    """Configurações de ambiente (variáveis de ambiente / .env)"""

    # Storage
    cache_dir: Path

    # Logging
    log_level: str
    log_file: str

    # GPU Configuration
    cuda_visible_devices: str
    torch_device: str

    # Input limits
    max_image_size_mb: int
    max_image_pixels: int

    # Pretrained normal estimator
    normals_checkpoint_url: str
    download_timeout_seconds: int

    def __init__(self):
        """Inicializa configurações a partir das variáveis de ambiente"""
        self.cache_dir = Path(os.getenv("RESHADE_CACHE_DIR", str(Path.home() / ".cache" / "reshade")))

        self.log_level = os.getenv("LOG_LEVEL", "INFO")
        self.log_file = os.getenv("LOG_FILE", "")

        self.cuda_visible_devices = os.getenv("CUDA_VISIBLE_DEVICES", "0")
        self.torch_device = os.getenv("TORCH_DEVICE", "cuda")

        self.max_image_size_mb = int(os.getenv("MAX_IMAGE_SIZE_MB", "20"))
        self.max_image_pixels = int(os.getenv("MAX_IMAGE_PIXELS", str(4096 * 4096)))

        self.normals_checkpoint_url = os.getenv("NORMALS_CHECKPOINT_URL", "")
        self.download_timeout_seconds = int(os.getenv("DOWNLOAD_TIMEOUT_SECONDS", "120"))

    @property
    def max_image_size_bytes(self) -> int:
        """Retorna o tamanho máximo de imagem em bytes"""
        return self.max_image_size_mb * 1024 * 1024


@dataclass
class TrainConfig:
    """Parâmetros comuns de treino"""

    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-3
    dataset_dir: str = ""
    seed: Optional[int] = None
    validation_fraction: float = 0.1
    num_workers: int = 0

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ConfigError(f"epochs e batch_size devem ser positivos ({self.epochs}, {self.batch_size})")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate deve ser positivo: {self.learning_rate}")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigError(f"validation_fraction deve estar em (0,1): {self.validation_fraction}")
        if self.num_workers < 0:
            raise ConfigError(f"num_workers inválido: {self.num_workers}")


@dataclass
class FeaturesTrainConfig(TrainConfig):
    """Fine-tuning da rede de features robustas"""

    consistency_weight: float = 1.0
    pretrained: bool = True
    image_size: int = 224

    def __post_init__(self):
        super().__post_init__()
        if self.consistency_weight < 0:
            raise ConfigError(f"consistency_weight deve ser >= 0: {self.consistency_weight}")


@dataclass
class DiscriminatorTrainConfig(TrainConfig):
    """Treino do discriminador normal-shading"""

    shading_only: bool = False
    cutmix_probability: float = 0.0
    depth: int = 4
    base_width: int = 32

    def __post_init__(self):
        super().__post_init__()
        if not 0.0 <= self.cutmix_probability <= 1.0:
            raise ConfigError(f"cutmix_probability deve estar em [0,1]: {self.cutmix_probability}")


@dataclass
class DecompositionTrainConfig(TrainConfig):
    """Treino da Albedo-Shading Net"""

    depth: int = 4
    base_width: int = 32


@dataclass
class DIPConfig:
    """Parâmetros da otimização Deep Image Prior"""

    iterations: int = 3000
    learning_rate: float = 1e-2
    noise_channels: int = 32
    noise_batch: int = 1
    noise_perturb_sigma: float = 0.03
    seed: Optional[int] = None
    loss_weights: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    depth: int = 5
    base_width: int = 32
    tv_weight: float = 0.0
    pixel_map_loss: bool = False
    log_epsilon: float = 1e-6
    log_every: int = 100

    def __post_init__(self):
        self.loss_weights = tuple(float(w) for w in self.loss_weights)
        if self.iterations < 1:
            raise ConfigError(f"iterations deve ser >= 1: {self.iterations}")
        if self.noise_batch < 1:
            raise ConfigError(f"noise_batch deve ser >= 1: {self.noise_batch}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate deve ser positivo: {self.learning_rate}")
        if self.noise_perturb_sigma < 0:
            raise ConfigError(f"noise_perturb_sigma deve ser >= 0: {self.noise_perturb_sigma}")
        if len(self.loss_weights) != 3 or any(w < 0 for w in self.loss_weights):
            raise ConfigError(f"loss_weights deve ter 3 pesos não negativos: {self.loss_weights}")
        if self.tv_weight < 0:
            raise ConfigError(f"tv_weight deve ser >= 0: {self.tv_weight}")


@dataclass
class PathsConfig:
    """Caminhos de checkpoints e diretórios"""

    decomposition: str = ""
    discriminator: str = ""
    features: str = ""
    output_dir: str = "outputs"


@dataclass
class NormalsConfig:
    """Backend do estimador de normais"""

    backend: str = "synthetic"
    checkpoint: str = ""

    def __post_init__(self):
        if self.backend not in ("synthetic", "pretrained"):
            raise ConfigError(f"Backend de normais desconhecido: {self.backend}")


@dataclass
class DataConfig:
    """Geração dos datasets sintéticos"""

    height: int = 64
    width: int = 64
    n_patches: int = 10
    perlin_frequency: int = 2
    decomposition_count: int = 2000
    distortion_count: int = 1000
    illumination_classes: int = 4
    illumination_scenes: int = 16
    illumination_lights: int = 3
    landscapes: str = ""
    workers: int = 4


@dataclass
class PipelineConfig:
    """Configuração única compartilhada por todos os subcomandos"""

    seed: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)
    data: DataConfig = field(default_factory=DataConfig)
    normals: NormalsConfig = field(default_factory=NormalsConfig)
    decomposition: DecompositionTrainConfig = field(
        default_factory=lambda: DecompositionTrainConfig(dataset_dir="data/decomposition")
    )
    discriminator: DiscriminatorTrainConfig = field(
        default_factory=lambda: DiscriminatorTrainConfig(dataset_dir="data/distortion")
    )
    features: FeaturesTrainConfig = field(
        default_factory=lambda: FeaturesTrainConfig(dataset_dir="data/illumination", epochs=5, batch_size=4)
    )
    dip: DIPConfig = field(default_factory=DIPConfig)

    def __post_init__(self):
        # Propaga a seed global para as etapas sem seed própria
        for name in ("decomposition", "discriminator", "features", "dip"):
            stage = getattr(self, name)
            if stage.seed is None:
                setattr(self, name, replace(stage, seed=self.seed))

    @classmethod
    def load(cls, path: Optional[Path]) -> "PipelineConfig":
        """Carrega o arquivo TOML; chaves desconhecidas são erro"""
        if path is None:
            return cls()
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Arquivo de configuração não encontrado: {path}")
        try:
            with open(path, "rb") as f:
                raw = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"Configuração inválida em {path}: {e}")
        return _build(cls, raw, "")

    def checkpoint_path(self, name: str, env: Config) -> Path:
        """Resolve o checkpoint de uma etapa (padrão: cache de checkpoints)"""
        if name == "normals":
            configured = self.normals.checkpoint
            default = env.cache_dir / "normals.ts"
        else:
            configured = getattr(self.paths, name)
            default = env.cache_dir / f"{name}.pt"
        return Path(configured) if configured else default

    def to_flat_dict(self) -> Dict[str, str]:
        """Achata a configuração em pares chave-valor (manifesto de execução)"""
        return _flatten(self, "")

    @classmethod
    def from_flat_dict(cls, values: Dict[str, str]) -> "PipelineConfig":
        """Inverso de `to_flat_dict` (releitura de um manifesto); chaves ausentes usam o padrão"""
        return _unflatten(cls, values, "")


def _build(cls, raw: Dict[str, Any], section: str):
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        where = f"[{section}]" if section else "raiz"
        raise ConfigError(f"Chaves desconhecidas em {where}: {', '.join(unknown)}")

    kwargs: Dict[str, Any] = {}
    defaults = cls()
    for name, value in raw.items():
        current = getattr(defaults, name)
        if is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"[{name}] deve ser uma seção")
            # Mantém os defaults específicos da seção (ex.: dataset_dir)
            merged = {f.name: getattr(current, f.name) for f in fields(current)}
            merged_raw = _build(type(current), value, name)
            merged.update({k: getattr(merged_raw, k) for k in value})
            if "seed" in merged and "seed" not in value:
                merged["seed"] = None
            kwargs[name] = type(current)(**merged)
        else:
            kwargs[name] = tuple(value) if isinstance(value, list) else value
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"Configuração inválida em [{section or 'raiz'}]: {e}")


def _flatten(obj, prefix: str) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for f in fields(obj):
        value = getattr(obj, f.name)
        key = f"{prefix}{f.name}".upper()
        if is_dataclass(value):
            out.update(_flatten(value, f"{key}_"))
        elif isinstance(value, tuple):
            out[key] = ",".join(str(v) for v in value)
        else:
            out[key] = "" if value is None else str(value)
    return out


def _parse_flat(raw: str, current: Any) -> Any:
    if isinstance(current, bool):
        return raw == "True"
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        return tuple(float(v) for v in raw.split(",")) if raw else ()
    if current is None:
        # Seeds opcionais
        return int(raw) if raw else None
    return raw


def _unflatten(cls, values: Dict[str, str], prefix: str, defaults: Any = None):
    defaults = cls() if defaults is None else defaults
    kwargs: Dict[str, Any] = {}
    for f in fields(cls):
        key = f"{prefix}{f.name}".upper()
        current = getattr(defaults, f.name)
        if is_dataclass(current):
            # Mantém os defaults específicos da seção (ex.: dataset_dir)
            kwargs[f.name] = _unflatten(type(current), values, f"{key}_", current)
        elif key in values:
            try:
                kwargs[f.name] = _parse_flat(values[key], current)
            except ValueError as e:
                raise ConfigError(f"Valor inválido para {key}: {e}")
        else:
            kwargs[f.name] = current
    return cls(**kwargs)
