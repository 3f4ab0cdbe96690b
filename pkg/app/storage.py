"""Escritura atómica de archivos (temporal en el mismo directorio y ``os.replace``)."""

import contextlib
import csv
import io
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import IO, Iterator, Sequence

from pydantic import BaseModel

from app.exceptions import StorageError

logger = logging.getLogger(__name__)


class AtomicWriter:
    """
    Gestor de escrituras que confirma el archivo solo si el bloque termina bien.

    Dentro del bloque se escribe en un temporal del directorio destino; al
    salir sin error se sustituye el destino con ``os.replace`` y, si hay un
    error, el temporal se elimina y el destino queda intacto.
    """

    def __init__(self, path: str | os.PathLike, binary: bool = True):
        """
        Inicializa el gestor.

        Args:
            path: Archivo destino.
            binary: Abre el temporal en modo binario.
        """
        self.path = Path(path)
        self.binary = binary

    @contextlib.contextmanager
    def open(self) -> Iterator[IO]:
        """
        Context manager que proporciona el archivo temporal.

        Yields:
            IO: Archivo abierto para escritura.

        Raises:
            StorageError: Si no se puede crear, escribir o renombrar el archivo.
        """
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp_name = tempfile.mkstemp(
                dir=self.path.parent, prefix=f".{self.path.name}.", suffix=".tmp"
            )
        except OSError as e:
            raise StorageError(f"No se puede escribir en {self.path.parent}: {e}") from e

        mode = "wb" if self.binary else "w"
        kwargs = {} if self.binary else {"encoding": "utf-8", "newline": ""}
        try:
            with os.fdopen(fd, mode, **kwargs) as handle:
                yield handle
                handle.flush()
                os.fsync(handle.fileno())
            os.replace(tmp_name, self.path)
        except Exception as e:
            with contextlib.suppress(OSError):
                os.unlink(tmp_name)
            if isinstance(e, OSError) and not isinstance(e, StorageError):
                raise StorageError(f"Error escribiendo {self.path}: {e}") from e
            raise


def atomic_write(path: str | os.PathLike, binary: bool = True):
    return AtomicWriter(path, binary=binary).open()


def write_bytes(path: str | os.PathLike, data: bytes) -> None:
    with atomic_write(path) as handle:
        handle.write(data)


def write_text(path: str | os.PathLike, text: str) -> None:
    with atomic_write(path, binary=False) as handle:
        handle.write(text)


def write_json(path: str | os.PathLike, payload: BaseModel | dict | list) -> None:
    """Escribe JSON con sangría; acepta modelos Pydantic."""
    if isinstance(payload, BaseModel):
        text = payload.model_dump_json(indent=2)
    else:
        text = json.dumps(payload, indent=2, ensure_ascii=False)
    write_text(path, text + "\n")


def write_csv(path: str | os.PathLike, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    write_text(path, buffer.getvalue())


def read_csv(path: str | os.PathLike, header: Sequence[str]) -> list[list[str]]:
    """
    Lee un CSV y comprueba su cabecera.

    Raises:
        StorageError: Si el archivo no existe o la cabecera no coincide.
    """
    try:
        with open(path, encoding="utf-8", newline="") as handle:
            rows = list(csv.reader(handle))
    except OSError as e:
        raise StorageError(f"No se puede leer {path}: {e}") from e
    if not rows or tuple(rows[0]) != tuple(header):
        raise StorageError(f"Cabecera inesperada en {path}: se esperaba {','.join(header)}")
    return rows[1:]


class CsvLog:
    """
    Registro CSV que se reescribe de forma atómica en cada ``flush``.

    Si el archivo ya existe con la misma cabecera, se conservan sus filas.
    """

    def __init__(self, path: str | os.PathLike, header: Sequence[str]):
        self.path = Path(path)
        self.header = tuple(header)
        self.rows: list[list[str]] = []
        if self.path.exists():
            self.rows = read_csv(self.path, self.header)

    def truncate(self, keep) -> None:
        """Conserva solo las filas para las que ``keep(row)`` es verdadero."""
        self.rows = [row for row in self.rows if keep(row)]

    def append(self, row: Sequence) -> None:
        self.rows.append([str(v) for v in row])

    def flush(self) -> None:
        write_csv(self.path, self.header, self.rows)
