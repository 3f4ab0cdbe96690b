"""Configuración del proceso usando pydantic-settings."""

import logging

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

logger = logging.getLogger(__name__)

SUPPORTED_DTYPES = ("float32", "float64")


class Settings(BaseSettings):
    """Configuración de la aplicación cargada desde variables de entorno."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="JPDVT_",
        case_sensitive=False,
        extra="ignore",
    )

    # Ejecución
    deterministic: bool = Field(
        default=False, description="Modo determinista (sin reducciones paralelas)"
    )
    debug: bool = Field(
        default=False,
        description=(
            "Modo debug: comprueba tras cada operación de tensorlab que la salida es finita "
            "(NumericError). Sin él, los NaN/Inf solo se detectan en la pérdida y en Adam"
        ),
    )
    log_level: str = Field(default="INFO", description="Nivel de logging")

    # Numérico
    dtype: str = Field(default="float32", description="Precisión por defecto de tensorlab")

    # Paralelismo de solve/eval
    jobs: int = Field(default=1, ge=1, description="Trabajadores por defecto para solve/eval")

    # Entrenamiento
    checkpoint_every: int = Field(
        default=1000, ge=1, description="Pasos entre checkpoints periódicos"
    )
    eval_every: int = Field(
        default=0, ge=0, description="Pasos entre evaluaciones (0 desactiva)"
    )
    eval_stride: int = Field(
        default=20, ge=1, description="Salto de timesteps en la evaluación periódica"
    )
    eval_limit: int = Field(
        default=32, ge=1, description="Puzzles evaluados en la evaluación periódica"
    )

    @field_validator("dtype")
    @classmethod
    def validate_dtype(cls, v: str) -> str:
        """Valida que la precisión sea soportada."""
        if v not in SUPPORTED_DTYPES:
            raise ValueError(f"dtype no soportado: {v} (usa {', '.join(SUPPORTED_DTYPES)})")
        return v

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        """Normaliza el nivel de logging."""
        level = v.upper()
        if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"Nivel de logging inválido: {v}")
        return level

    def model_post_init(self, __context) -> None:
        """Avisa si el modo determinista anula el paralelismo configurado."""
        if self.deterministic and self.jobs != 1:
            logger.warning(f"JPDVT_DETERMINISTIC activo: se ignora jobs={self.jobs}")

    def effective_jobs(self, requested: int | None = None) -> int:
        """
        Número de trabajadores a usar.

        En modo determinista se fuerza un único trabajador.

        Args:
            requested: Valor pedido por flag, si lo hay.

        Returns:
            int: Trabajadores efectivos.
        """
        if self.deterministic:
            return 1
        return max(1, requested if requested is not None else self.jobs)


# Instancia global de configuración
settings = Settings()
