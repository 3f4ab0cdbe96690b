"""Codificaciones posicionales sinusoidales 1D/2D y su proyección a tokens."""

from dataclasses import dataclass

import numpy as np

from app import tensorlab as tl
from app.exceptions import ShapeError

PE_BASE = 1000.0
PE_DIM_1D = 16
PE_DIM_2D = 2 * PE_DIM_1D


@dataclass(frozen=True)
class Layout:
    """
    Disposición de un puzzle: rejilla ``rows × cols`` o secuencia de ``length``.

    Los huecos de la rejilla se numeran en orden row-major.
    """

    kind: str
    rows: int = 1
    cols: int = 1
    length: int = 0

    @classmethod
    def grid(cls, rows: int, cols: int | None = None) -> "Layout":
        cols = rows if cols is None else cols
        if rows < 1 or cols < 1:
            raise ValueError(f"Rejilla inválida {rows}x{cols}")
        return cls(kind="spatial", rows=rows, cols=cols)

    @classmethod
    def sequence(cls, length: int) -> "Layout":
        if length < 1:
            raise ValueError(f"Longitud de secuencia inválida: {length}")
        return cls(kind="temporal", length=length)

    @property
    def size(self) -> int:
        """Número de huecos N."""
        return self.rows * self.cols if self.kind == "spatial" else self.length

    @property
    def pe_dim(self) -> int:
        return PE_DIM_2D if self.kind == "spatial" else PE_DIM_1D

    def coordinates(self, slot: int) -> tuple[int, int]:
        """Coordenadas ``(x, y)`` del hueco ``slot`` (x = columna)."""
        return slot % self.cols, slot // self.cols

    def describe(self) -> str:
        if self.kind == "spatial":
            return f"{self.rows}x{self.cols}"
        return f"seq{self.length}"


def encode_1d(l: int) -> np.ndarray:
    """
    Código sinusoidal de dimensión 16 para la posición ``l``.

    La entrada ``2i`` es ``sin(l / 1000^(2i/16))`` y la ``2i+1`` el coseno
    correspondiente, ``i = 0..7``.

    Args:
        l: Posición entera no negativa.

    Returns:
        np.ndarray: Vector float64 de 16 componentes en ``[-1, 1]``.
    """
    if l < 0:
        raise ValueError(f"La posición debe ser no negativa: {l}")
    i = np.arange(PE_DIM_1D // 2, dtype=np.float64)
    angles = l / np.power(PE_BASE, 2.0 * i / PE_DIM_1D)
    code = np.empty(PE_DIM_1D, dtype=np.float64)
    code[0::2] = np.sin(angles)
    code[1::2] = np.cos(angles)
    return code


def encode_2d(x: int, y: int) -> np.ndarray:
    """Concatenación ``[encode_1d(x), encode_1d(y)]`` (32 componentes)."""
    return np.concatenate([encode_1d(x), encode_1d(y)])


@dataclass(frozen=True)
class PETable:
    """Códigos verdaderos de todos los huecos de una disposición, fila ``k`` = hueco ``k``."""

    layout: Layout
    codes: np.ndarray

    @property
    def size(self) -> int:
        return self.codes.shape[0]

    @property
    def dim(self) -> int:
        return self.codes.shape[1]

    def rows_for(self, slots: np.ndarray) -> np.ndarray:
        """Códigos de los huecos indicados, en el orden dado (matriz L0)."""
        return self.codes[np.asarray(slots, dtype=np.int64)]


def pe_table(layout: Layout) -> PETable:
    """
    Construye la tabla de códigos verdaderos de una disposición.

    Args:
        layout: Rejilla o secuencia con N ≥ 1.

    Returns:
        PETable: Tabla ``N × d``.
    """
    if layout.size < 1:
        raise ValueError("La disposición debe tener al menos un hueco")
    if layout.kind == "spatial":
        codes = [encode_2d(*layout.coordinates(k)) for k in range(layout.size)]
    else:
        codes = [encode_1d(k) for k in range(layout.size)]
    return PETable(layout=layout, codes=np.stack(codes))


def project(
    code: tl.Tensor,
    w1: tl.Tensor,
    b1: tl.Tensor,
    w2: tl.Tensor,
    b2: tl.Tensor,
) -> tl.Tensor:
    """
    Proyecta códigos posicionales al ancho de token con un MLP de dos capas.

    ``linear → GELU → linear``; acepta cualquier número de ejes de lote.

    Raises:
        ShapeError: Si los pesos no encajan con la dimensión del código.
    """
    if w1.shape[0] != code.shape[-1] or w2.shape[0] != w1.shape[1]:
        raise ShapeError(
            f"Pesos de proyección {w1.shape}/{w2.shape} incompatibles con código {code.shape}"
        )
    if code.ndim == 1:
        return tl.reshape(project(tl.reshape(code, (1, -1)), w1, b1, w2, b2), (-1,))
    hidden = tl.gelu(tl.add(tl.matmul(code, w1), b1))
    return tl.add(tl.matmul(hidden, w2), b2)
