"""Esquemas Pydantic del manifiesto de corpus y de los puzzles en disco."""

from typing import Literal

from pydantic import BaseModel, Field, model_validator

MANIFEST_VERSION = 1
PUZZLE_VERSION = 1


class SampleRecord(BaseModel):
    """Una fuente del corpus (imagen o directorio de frames)."""

    path: str = Field(..., description="Ruta relativa al directorio del corpus")
    type: Literal["image", "frames"] = Field(..., description="Tipo de fuente")
    split: Literal["train", "test"] = Field(..., description="Partición")
    puzzle: str | None = Field(None, description="Directorio del puzzle construido, si existe")


class CorpusParams(BaseModel):
    """Parámetros de construcción de los puzzles del corpus."""

    mode: Literal["spatial", "temporal"]
    source: Literal["synth", "dir"] = "synth"
    grid: int | None = Field(None, ge=2)
    gap: bool = False
    piece_size: int = Field(default=64, ge=1)
    cell_size: int | None = Field(None, ge=1)
    image_size: int | None = Field(None, ge=1)
    piece_len: int | None = Field(None, ge=1)
    frames: int | None = Field(None, ge=1)
    frame_size: int | None = Field(None, ge=1)
    stride: int = Field(default=1, ge=1)
    anchor: bool = False
    mask_max: float = Field(default=0.0, ge=0.0, lt=1.0)
    count: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def validate_mode(self) -> "CorpusParams":
        if self.mode == "spatial" and self.grid is None:
            raise ValueError("El modo spatial requiere grid")
        if self.mode == "temporal" and self.piece_len is None:
            raise ValueError("El modo temporal requiere piece_len")
        return self


class CorpusManifest(BaseModel):
    """Manifiesto JSON del corpus."""

    version: int = Field(default=MANIFEST_VERSION)
    samples: list[SampleRecord] = Field(default_factory=list)
    params: CorpusParams
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def validate_splits(self) -> "CorpusManifest":
        """Valida versión y que las particiones sean disjuntas."""
        if self.version != MANIFEST_VERSION:
            raise ValueError(
                f"Versión de manifiesto {self.version} no soportada (se espera {MANIFEST_VERSION})"
            )
        seen: dict[str, str] = {}
        for sample in self.samples:
            previous = seen.setdefault(sample.path, sample.split)
            if previous != sample.split:
                raise ValueError(f"La muestra {sample.path} aparece en train y test")
        return self


class Provenance(BaseModel):
    source: str
    params: dict = Field(default_factory=dict)
    seed: int = 0


class PuzzleRecord(BaseModel):
    """Descripción JSON de un puzzle en disco (``puzzle.json``)."""

    version: int = Field(default=PUZZLE_VERSION)
    kind: Literal["spatial", "temporal"]
    rows: int = 1
    cols: int = 1
    length: int = 0
    piece_shape: tuple[int, int, int, int]
    truth: list[int] = Field(..., description="Hueco verdadero de cada índice de presentación")
    missing: list[int] = Field(default_factory=list)
    anchor: bool = False
    pieces: list[str | None] = Field(..., description="Archivo de cada pieza (None si ausente)")
    provenance: Provenance

    @model_validator(mode="after")
    def validate_truth(self) -> "PuzzleRecord":
        n = len(self.truth)
        if sorted(self.truth) != list(range(n)):
            raise ValueError("truth no es una biyección")
        if len(self.pieces) != n:
            raise ValueError(f"Se esperaban {n} piezas, hay {len(self.pieces)}")
        if any(not 0 <= m < n for m in self.missing):
            raise ValueError("Índice ausente fuera de rango")
        return self
