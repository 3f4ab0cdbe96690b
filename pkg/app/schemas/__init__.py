"""Esquemas Pydantic para configuración, corpus y resultados."""

from app.schemas.corpus import (
    CorpusManifest,
    CorpusParams,
    Provenance,
    PuzzleRecord,
    SampleRecord,
)
from app.schemas.results import EVAL_CSV_HEADER, LOSS_CSV_HEADER, EvalRow, SolveReport
from app.schemas.training import (
    DenoiserConfig,
    ExperimentConfig,
    ScheduleConfig,
    TrainConfig,
)

__all__ = [
    "CorpusManifest",
    "CorpusParams",
    "Provenance",
    "PuzzleRecord",
    "SampleRecord",
    "EVAL_CSV_HEADER",
    "LOSS_CSV_HEADER",
    "EvalRow",
    "SolveReport",
    "DenoiserConfig",
    "ExperimentConfig",
    "ScheduleConfig",
    "TrainConfig",
]
