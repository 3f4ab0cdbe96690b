"""Excepciones del dominio con su código de salida para la CLI."""


class PuzzleDiffusionError(Exception):
    """
    Error base de la aplicación.

    Cada subclase fija el código de salida con el que la CLI termina cuando
    la excepción no se captura antes.
    """

    exit_code: int = 1

    def __init__(self, detail: str) -> None:
        super().__init__(detail)
        self.detail = detail


class UsageError(PuzzleDiffusionError, ValueError):
    """Flags o configuración inválidos."""

    exit_code = 2


class ShapeError(PuzzleDiffusionError, ValueError):
    """Formas de tensores o matrices incompatibles."""

    exit_code = 2


class NumericError(PuzzleDiffusionError, RuntimeError):
    """Valores NaN/Inf durante el entrenamiento o la inferencia."""

    exit_code = 3

    def __init__(self, detail: str, last_checkpoint=None) -> None:
        super().__init__(detail)
        self.last_checkpoint = last_checkpoint


class StorageError(PuzzleDiffusionError, OSError):
    """Fallo de lectura o escritura en disco."""

    exit_code = 4


class CorpusError(StorageError):
    """Archivo del corpus ausente o mal formado."""

    def __init__(self, detail: str, path: str | None = None, offset: int | None = None) -> None:
        location = ""
        if path is not None:
            location = f" [{path}"
            if offset is not None:
                location += f" @ byte {offset}"
            location += "]"
        super().__init__(f"{detail}{location}")
        self.path = path
        self.offset = offset


class CheckpointError(StorageError):
    """Checkpoint ilegible o incompatible."""


class BadMagicError(CheckpointError):
    """La cabecera no empieza por la firma esperada."""


class VersionMismatchError(CheckpointError):
    """Versión de formato no soportada."""


class TruncatedCheckpointError(CheckpointError):
    """El archivo termina antes de lo que declara su cabecera."""


class ChecksumError(CheckpointError):
    """El CRC32 final no coincide con el contenido."""


class ShapeHeaderError(CheckpointError):
    """Las dimensiones declaradas no cuadran con el contenido."""


class ConfigMismatchError(CheckpointError):
    """La configuración del checkpoint no es la esperada."""
