"""Esquemas Pydantic para el modelo, el calendario de ruido y el entrenamiento."""

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

CONFIG_VERSION = 1

Modality = Literal["spatial", "temporal"]


class DenoiserConfig(BaseModel):
    """Hiperparámetros del transformer de eliminación de ruido."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    modality: Modality = Field(..., description="Puzzle espacial (rejilla) o temporal (secuencia)")
    layers: int = Field(default=4, ge=1, description="Número de bloques")
    hidden: int = Field(default=128, ge=1, description="Ancho del transformer")
    mlp: int | None = Field(default=None, ge=1, description="Ancho del MLP (4× hidden por defecto)")
    heads: int = Field(default=4, ge=1, description="Cabezas de atención")
    token_width: int | None = Field(
        default=None, ge=1, description="Ancho de los tokens de contenido (hidden por defecto)"
    )
    pe_dim: int | None = Field(default=None, description="Dimensión del código posicional")
    piece_shape: tuple[int, int, int, int] = Field(
        ..., description="Forma de una pieza: (frames, alto, ancho, canales)"
    )
    time_freq_dim: int = Field(default=64, ge=2, description="Frecuencias del embedding de t")
    timesteps: int = Field(default=1000, ge=1, description="T del calendario de ruido")
    masked: bool = Field(default=False, description="Predice ruido de contenido para piezas ausentes")
    decoder: bool = Field(default=False, description="Incluye el decodificador token → píxeles")
    anchor: bool | None = Field(
        default=None, description="Ancla la primera pieza (por defecto: sí en temporal)"
    )
    dtype: Literal["float32", "float64"] = Field(default="float32", description="Precisión")

    @model_validator(mode="after")
    def validate_shapes(self) -> "DenoiserConfig":
        """Valida la coherencia entre anchos, cabezas y dimensión posicional."""
        if self.hidden % self.heads != 0:
            raise ValueError(
                f"hidden ({self.hidden}) debe ser divisible por heads ({self.heads})"
            )
        expected_pe = 32 if self.modality == "spatial" else 16
        if self.pe_dim is not None and self.pe_dim != expected_pe:
            raise ValueError(
                f"pe_dim={self.pe_dim} no corresponde a la modalidad {self.modality} ({expected_pe})"
            )
        if self.time_freq_dim % 2 != 0:
            raise ValueError("time_freq_dim debe ser par")
        if self.modality == "spatial" and self.piece_shape[0] != 1:
            raise ValueError("Las piezas espaciales tienen un único frame")
        return self

    @property
    def mlp_width(self) -> int:
        return self.mlp if self.mlp is not None else 4 * self.hidden

    @property
    def token_dim(self) -> int:
        return self.token_width if self.token_width is not None else self.hidden

    @property
    def position_dim(self) -> int:
        return 32 if self.modality == "spatial" else 16

    @property
    def piece_pixels(self) -> int:
        frames, height, width, channels = self.piece_shape
        return frames * height * width * channels

    @property
    def anchored(self) -> bool:
        if self.anchor is None:
            return self.modality == "temporal"
        return self.anchor


class ScheduleConfig(BaseModel):
    """Parámetros del calendario lineal de ruido."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    timesteps: int = Field(default=1000, ge=1)
    beta_start: float = Field(default=1e-4, gt=0.0, lt=1.0)
    beta_end: float = Field(default=2e-2, gt=0.0, lt=1.0)

    @model_validator(mode="after")
    def validate_endpoints(self) -> "ScheduleConfig":
        if not self.beta_start < self.beta_end:
            raise ValueError(
                f"beta_start ({self.beta_start}) debe ser menor que beta_end ({self.beta_end})"
            )
        return self


class TrainConfig(BaseModel):
    """Parámetros del bucle de entrenamiento."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    batch_size: int = Field(default=32, ge=1)
    steps: int | None = Field(default=None, ge=0, description="Pasos totales (temporal)")
    epochs: int | None = Field(default=None, ge=0, description="Épocas totales (espacial)")
    lr: float = Field(default=1e-4, gt=0.0)
    masked: bool = Field(default=False, description="Entrena con piezas ausentes")
    content_weight: float = Field(default=0.8, ge=0.0, le=1.0)
    position_weight: float = Field(default=0.2, ge=0.0, le=1.0)
    decoder_weight: float = Field(default=0.05, ge=0.0)
    mask_fraction_max: float = Field(default=0.25, ge=0.0, lt=1.0)
    flip: bool = Field(default=True, description="Volteo horizontal (solo espacial)")
    seed: int = Field(default=0, ge=0)
    eval_every: int = Field(default=0, ge=0)
    checkpoint_every: int = Field(default=1000, ge=1)

    @model_validator(mode="after")
    def validate_budget(self) -> "TrainConfig":
        if self.steps is not None and self.epochs is not None:
            raise ValueError("Define steps o epochs, no ambos")
        if self.masked and abs(self.content_weight + self.position_weight - 1.0) > 1e-9:
            raise ValueError(
                "content_weight + position_weight debe sumar 1 en modo enmascarado "
                f"({self.content_weight} + {self.position_weight})"
            )
        return self


class ExperimentConfig(BaseModel):
    """
    Archivo de configuración de un experimento (JSON plano y versionado).

    La forma de las piezas no se declara aquí: se toma del corpus.
    """

    model_config = ConfigDict(extra="forbid")

    version: int = Field(default=CONFIG_VERSION)
    modality: Modality = Field(default="spatial")
    layers: int = 4
    hidden: int = 128
    mlp: int | None = None
    heads: int = 4
    token_width: int | None = None
    time_freq_dim: int = 64
    masked: bool = False
    decoder: bool | None = None
    anchor: bool | None = None
    dtype: Literal["float32", "float64"] = "float32"
    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    batch_size: int = 32
    steps: int | None = None
    epochs: int | None = None
    lr: float = 1e-4
    content_weight: float = 0.8
    position_weight: float = 0.2
    decoder_weight: float = 0.05
    mask_fraction_max: float = 0.25
    flip: bool = True
    seed: int = 0
    eval_every: int = 0
    checkpoint_every: int = 1000

    @model_validator(mode="after")
    def validate_version(self) -> "ExperimentConfig":
        if self.version != CONFIG_VERSION:
            raise ValueError(
                f"Versión de configuración {self.version} no soportada (se espera {CONFIG_VERSION})"
            )
        return self

    def denoiser_config(self, piece_shape: tuple[int, int, int, int]) -> DenoiserConfig:
        """Configuración del modelo para piezas de la forma dada."""
        return DenoiserConfig(
            modality=self.modality,
            layers=self.layers,
            hidden=self.hidden,
            mlp=self.mlp,
            heads=self.heads,
            token_width=self.token_width,
            piece_shape=tuple(piece_shape),
            time_freq_dim=self.time_freq_dim,
            timesteps=self.timesteps,
            masked=self.masked,
            decoder=self.masked if self.decoder is None else self.decoder,
            anchor=self.anchor,
            dtype=self.dtype,
        )

    def schedule_config(self) -> ScheduleConfig:
        return ScheduleConfig(
            timesteps=self.timesteps, beta_start=self.beta_start, beta_end=self.beta_end
        )

    def train_config(self) -> TrainConfig:
        steps, epochs = self.steps, self.epochs
        if steps is None and epochs is None:
            # Espacial por épocas, temporal por pasos
            if self.modality == "spatial":
                epochs = 10
            else:
                steps = 5000
        return TrainConfig(
            batch_size=self.batch_size,
            steps=steps,
            epochs=epochs,
            lr=self.lr,
            masked=self.masked,
            content_weight=self.content_weight,
            position_weight=self.position_weight,
            decoder_weight=self.decoder_weight,
            mask_fraction_max=self.mask_fraction_max,
            flip=self.flip,
            seed=self.seed,
            eval_every=self.eval_every,
            checkpoint_every=self.checkpoint_every,
        )
