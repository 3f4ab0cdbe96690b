"""Esquemas de los resultados publicados por la CLI (JSON y CSV)."""

from pydantic import BaseModel, Field, model_validator

LOSS_CSV_HEADER = ("step", "loss", "lr", "wallclock_s")
EVAL_CSV_HEADER = ("missing", "puzzle_acc", "piece_acc", "kendall_mean", "kendall_std", "n")


class SolveReport(BaseModel):
    """Resultado JSON de resolver un puzzle."""

    permutation: list[int] = Field(..., description="Hueco asignado a cada pieza")
    distances: list[float] = Field(..., description="Distancia de emparejamiento por pieza")
    missing_generated: list[str] = Field(
        default_factory=list, description="Archivos PGM de las piezas generadas"
    )
    kendall: float = Field(..., ge=0.0, le=1.0)
    correct_pieces: int = Field(..., ge=0)

    @model_validator(mode="after")
    def validate_permutation(self) -> "SolveReport":
        n = len(self.permutation)
        if sorted(self.permutation) != list(range(n)):
            raise ValueError("permutation no es una biyección")
        if len(self.distances) != n:
            raise ValueError("distances debe tener una entrada por pieza")
        if self.correct_pieces > n:
            raise ValueError("correct_pieces supera el número de piezas")
        return self


class EvalRow(BaseModel):
    """Fila del CSV de evaluación."""

    missing: int = Field(..., ge=0)
    puzzle_acc: float = Field(..., ge=0.0, le=1.0)
    piece_acc: float = Field(..., ge=0.0, le=1.0)
    kendall_mean: float = Field(..., ge=0.0, le=1.0)
    kendall_std: float = Field(..., ge=0.0)
    n: int = Field(..., ge=0)

    def as_csv_row(self) -> list[str]:
        return [
            str(self.missing),
            f"{self.puzzle_acc:.6f}",
            f"{self.piece_acc:.6f}",
            f"{self.kendall_mean:.6f}",
            f"{self.kendall_std:.6f}",
            str(self.n),
        ]
