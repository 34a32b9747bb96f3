"""
Exceções do pipeline de reshading
"""

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_STAGE_FAILURE = 2
EXIT_VALIDATION_FAILURE = 3


class ReshadeError(Exception):
    """Erro base do pipeline"""

    exit_code = EXIT_STAGE_FAILURE


class ShapeMismatchError(ReshadeError, ValueError):
    """Campos com formatos incompatíveis"""


class InvalidFieldError(ReshadeError, ValueError):
    """Campo fora do intervalo ou com valores inválidos"""


class PlacementError(ReshadeError, ValueError):
    """Posicionamento que empurra a máscara para fora do quadro"""


class DatasetError(ReshadeError):
    """Dataset vazio ou com layout fora do padrão"""


class CheckpointError(ReshadeError):
    """Checkpoint ausente, corrompido ou incompatível"""


class EstimatorError(ReshadeError):
    """Falha no estimador de normais"""


class NonFiniteLossError(ReshadeError):
    """Perda não finita durante a otimização"""

    def __init__(self, component: str, value: float, iteration: int = -1):
        self.component = component
        self.value = value
        self.iteration = iteration
        super().__init__(f"Perda {component} não finita ({value}) na iteração {iteration}")


class ConfigError(ReshadeError, ValueError):
    """Configuração inválida"""

    exit_code = EXIT_USAGE


class StageError(ReshadeError):
    """Falha em uma etapa do pipeline"""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"Etapa '{stage}' falhou: {cause}")

    @property
    def exit_code(self) -> int:
        # Erro de configuração dentro de uma etapa continua sendo erro de uso
        return EXIT_USAGE if isinstance(self.cause, ConfigError) else EXIT_STAGE_FAILURE


class ValidationError(ReshadeError):
    """Falha na validação de artefatos"""

    exit_code = EXIT_VALIDATION_FAILURE
