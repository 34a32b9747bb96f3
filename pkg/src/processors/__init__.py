"""
Processadores das etapas do pipeline de reshading
"""

from processors.base_processor import BaseProcessor
from processors.data_processor import DataProcessor
from processors.decomposition_processor import DecompositionProcessor
from processors.discriminator_processor import DiscriminatorProcessor
from processors.features_processor import FeaturesProcessor
from processors.normals_processor import NormalsProcessor
from processors.reshade_processor import ReshadeProcessor

__all__ = [
    "BaseProcessor",
    "DataProcessor",
    "DecompositionProcessor",
    "DiscriminatorProcessor",
    "FeaturesProcessor",
    "NormalsProcessor",
    "ReshadeProcessor",
]
