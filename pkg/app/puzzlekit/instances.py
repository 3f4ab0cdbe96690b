"""
Construcción de instancias de puzzle a partir de imágenes y secuencias de frames.

Las piezas se guardan en orden de presentación (barajado). ``truth[i]`` es el
hueco verdadero de la pieza presentada en la posición ``i``.
"""

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from app.posenc import Layout, PETable
from app.schemas.corpus import Provenance

logger = logging.getLogger(__name__)

PIECE_SIZE = 64
CELL_SIZE = 85
MASK_FRACTION_MAX = 0.25
FILL_VALUE = 128


def normalize_pixels(pixels: np.ndarray) -> np.ndarray:
    """uint8 ``[0, 255]`` → float64 ``[-1, 1]``."""
    return np.asarray(pixels, dtype=np.float64) / 127.5 - 1.0


def denormalize_pixels(values: np.ndarray) -> np.ndarray:
    """float ``[-1, 1]`` → uint8, recortando fuera de rango."""
    return np.clip(np.rint((np.asarray(values) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def cell_size_for(piece_size: int) -> int:
    """Celda con la misma proporción que 64/85 para otros tamaños de pieza."""
    return int(round(piece_size * CELL_SIZE / PIECE_SIZE))


def _as_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.dtype != np.uint8:
        raise ValueError(f"Formato de píxel no soportado: {image.dtype} (se espera uint8)")
    if image.ndim == 2:
        image = image[:, :, None]
    if image.ndim != 3 or image.shape[2] not in (1, 3):
        raise ValueError(f"Formato de píxel no soportado: forma {image.shape}")
    return image


def _resize(image: np.ndarray, size: int) -> np.ndarray:
    if image.shape[0] == size and image.shape[1] == size:
        return image
    mode_image = Image.fromarray(image[:, :, 0] if image.shape[2] == 1 else image)
    resized = np.asarray(mode_image.resize((size, size), Image.BILINEAR), dtype=np.uint8)
    return resized[:, :, None] if resized.ndim == 2 else resized


def _shuffle(n: int, rng: np.random.Generator, anchor: bool) -> np.ndarray:
    if anchor:
        return np.concatenate([[0], 1 + rng.permutation(n - 1)]).astype(np.int64)
    return rng.permutation(n).astype(np.int64)


@dataclass
class PuzzleInstance:
    """
    Puzzle barajado, opcionalmente con piezas retenidas.

    Attributes:
        pieces: ``N × F × h × w × C`` uint8 en orden de presentación.
        layout: Rejilla o secuencia.
        truth: Hueco verdadero de cada índice de presentación.
        missing: Índices de presentación retenidos (ordenados).
        anchor: La pieza 0 está fija en el hueco 0.
        provenance: Origen y parámetros de construcción.
    """

    pieces: np.ndarray
    layout: Layout
    truth: np.ndarray
    missing: tuple[int, ...] = ()
    anchor: bool = False
    provenance: Provenance = field(default_factory=lambda: Provenance(source="memory"))

    def __post_init__(self) -> None:
        self.truth = np.asarray(self.truth, dtype=np.int64)
        self.missing = tuple(sorted(int(m) for m in self.missing))
        n = self.layout.size
        if self.pieces.shape[0] != n or self.truth.size != n:
            raise ValueError(
                f"{self.pieces.shape[0]} piezas y {self.truth.size} etiquetas para N={n}"
            )
        if not np.array_equal(np.sort(self.truth), np.arange(n)):
            raise ValueError("truth no es una biyección")

    @property
    def n(self) -> int:
        return self.layout.size

    @property
    def piece_shape(self) -> tuple[int, int, int, int]:
        return tuple(int(d) for d in self.pieces.shape[1:])

    @property
    def piece_pixels(self) -> int:
        return int(np.prod(self.piece_shape))

    @property
    def given(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.n), np.asarray(self.missing, dtype=np.int64))

    @property
    def missing_mask(self) -> np.ndarray:
        mask = np.zeros(self.n, dtype=bool)
        mask[list(self.missing)] = True
        return mask

    @property
    def anchor_rows(self) -> np.ndarray:
        return np.array([0] if self.anchor else [], dtype=np.int64)

    def solver_view(self) -> np.ndarray:
        """Piezas normalizadas ``N × P`` con las filas retenidas a cero."""
        flat = normalize_pixels(self.pieces.reshape(self.n, -1))
        flat[list(self.missing)] = 0.0
        return flat

    def given_pieces(self) -> np.ndarray:
        """Piezas dadas normalizadas, en orden de presentación (``(N - M) × P``)."""
        return normalize_pixels(self.pieces[self.given].reshape(len(self.given), -1))

    def target_codes(self, table: PETable) -> np.ndarray:
        """Matriz ``L0``: código verdadero de cada pieza en orden de presentación."""
        return table.rows_for(self.truth)

    def with_missing(self, missing) -> "PuzzleInstance":
        return dataclasses.replace(self, missing=tuple(missing))


def make_spatial(
    image: np.ndarray,
    grid_n: int,
    rng: np.random.Generator,
    *,
    gap: bool = True,
    crop: str = "center",
    piece_size: int = PIECE_SIZE,
    cell_size: int | None = None,
    flip: bool = False,
    anchor: bool = False,
    provenance: Provenance | None = None,
) -> PuzzleInstance:
    """
    Corta una imagen en una rejilla ``grid_n × grid_n`` y baraja las piezas.

    Con hueco se redimensiona a ``grid_n·85`` y de cada celda de 85 se recorta
    una pieza de 64 (centrada con desplazamiento 10, o aleatoria). Sin hueco
    se redimensiona a ``grid_n·64`` y se tesela exactamente.

    Args:
        image: uint8 ``H × W`` o ``H × W × {1,3}``.
        grid_n: Piezas por lado (≥ 2).
        rng: Generador para recortes y barajado.
        gap: Modo con hueco erosionado entre piezas.
        crop: ``center`` o ``random``.
        piece_size: Lado de la pieza.
        cell_size: Lado de la celda en modo con hueco (proporción 85/64 por defecto).
        flip: Volteo horizontal previo.
        anchor: Mantiene la pieza del hueco 0 en la posición de presentación 0.
        provenance: Origen registrado en la instancia.

    Returns:
        PuzzleInstance: Instancia sin piezas retenidas.

    Raises:
        ValueError: Si la imagen es demasiado pequeña, el formato no está
            soportado o los parámetros son inválidos.
    """
    if grid_n < 2:
        raise ValueError(f"grid_n debe ser ≥ 2: {grid_n}")
    if crop not in ("center", "random"):
        raise ValueError(f"Modo de recorte desconocido: {crop}")
    image = _as_image(image)
    cell = (cell_size or cell_size_for(piece_size)) if gap else piece_size
    if cell < piece_size:
        raise ValueError(f"La celda ({cell}) no puede ser menor que la pieza ({piece_size})")
    target = grid_n * cell
    if min(image.shape[:2]) < target:
        raise ValueError(
            f"Imagen demasiado pequeña: {image.shape[1]}x{image.shape[0]} < {target}x{target}"
        )
    image = _resize(image, target)
    if flip:
        image = image[:, ::-1]

    n = grid_n * grid_n
    margin = cell - piece_size
    tiles = []
    for slot in range(n):
        row, col = divmod(slot, grid_n)
        if crop == "random" and margin > 0:
            dy, dx = (int(v) for v in rng.integers(0, margin + 1, size=2))
        else:
            dy = dx = margin // 2
        y0, x0 = row * cell + dy, col * cell + dx
        tiles.append(image[y0 : y0 + piece_size, x0 : x0 + piece_size])
    tiles = np.stack(tiles)[:, None]

    truth = _shuffle(n, rng, anchor)
    return PuzzleInstance(
        pieces=np.ascontiguousarray(tiles[truth]),
        layout=Layout.grid(grid_n),
        truth=truth,
        anchor=anchor,
        provenance=provenance or Provenance(source="memory"),
    )


def make_temporal(
    frames: np.ndarray,
    piece_len: int,
    rng: np.random.Generator,
    *,
    anchor_first: bool = True,
    stride: int = 1,
    provenance: Provenance | None = None,
) -> PuzzleInstance:
    """
    Agrupa frames consecutivos en clips y los baraja.

    Args:
        frames: uint8 ``T × H × W`` o ``T × H × W × C``.
        piece_len: Frames por clip.
        rng: Generador del barajado.
        anchor_first: El clip 0 permanece en la posición de presentación 0.
        stride: Submuestreo temporal previo.
        provenance: Origen registrado en la instancia.

    Raises:
        ValueError: Si el número de frames no es divisible por ``piece_len``.
    """
    frames = np.asarray(frames)
    if frames.ndim == 3:
        frames = frames[..., None]
    if frames.dtype != np.uint8 or frames.ndim != 4:
        raise ValueError(f"Secuencia no soportada: {frames.dtype} {frames.shape}")
    if stride < 1:
        raise ValueError(f"stride debe ser ≥ 1: {stride}")
    frames = frames[::stride]
    if piece_len < 1 or frames.shape[0] % piece_len != 0:
        raise ValueError(
            f"{frames.shape[0]} frames no son divisibles en clips de {piece_len}"
        )
    n = frames.shape[0] // piece_len
    clips = frames.reshape((n, piece_len) + frames.shape[1:])
    truth = _shuffle(n, rng, anchor_first) if n > 1 else np.zeros(1, dtype=np.int64)
    return PuzzleInstance(
        pieces=np.ascontiguousarray(clips[truth]),
        layout=Layout.sequence(n),
        truth=truth,
        anchor=anchor_first,
        provenance=provenance or Provenance(source="memory"),
    )


def max_missing(n: int, fraction: float = MASK_FRACTION_MAX) -> int:
    return int(np.floor(fraction * n + 1e-9))


def apply_mask(
    instance: PuzzleInstance,
    k: int,
    rng: np.random.Generator,
    *,
    allow_over: bool = False,
) -> PuzzleInstance:
    """
    Retiene ``k`` piezas elegidas al azar (nunca el ancla).

    Raises:
        ValueError: Si ``k`` supera ``floor(0.25·N)`` sin ``allow_over`` o no
            deja al menos una pieza dada.
    """
    if k < 0:
        raise ValueError(f"k debe ser no negativo: {k}")
    if k == 0:
        return instance
    limit = max_missing(instance.n)
    if k > limit and not allow_over:
        raise ValueError(f"k={k} supera el máximo de {limit} piezas ausentes para N={instance.n}")
    candidates = np.arange(1 if instance.anchor else 0, instance.n)
    if k >= instance.n or k > candidates.size:
        raise ValueError(f"k={k} no deja piezas dadas suficientes para N={instance.n}")
    chosen = rng.choice(candidates, size=k, replace=False)
    return instance.with_missing(sorted(int(c) for c in chosen))


def reassemble(
    instance: PuzzleInstance,
    permutation: np.ndarray,
    generated: dict[int, np.ndarray] | None = None,
) -> np.ndarray:
    """
    Coloca cada pieza en su hueco asignado.

    Las piezas retenidas usan su contenido generado (píxeles uint8 con la
    forma de la pieza) si existe; si no, se rellenan con gris medio.

    Returns:
        np.ndarray: Imagen ``H × W × C`` (espacial) o frames ``T × H × W × C`` (temporal).
    """
    generated = generated or {}
    permutation = np.asarray(permutation, dtype=np.int64)
    slots = np.empty_like(instance.pieces)
    for i, slot in enumerate(permutation):
        if i in instance.missing:
            piece = generated.get(i)
            if piece is None:
                slots[slot] = FILL_VALUE
            else:
                slots[slot] = np.asarray(piece, dtype=np.uint8).reshape(instance.piece_shape)
        else:
            slots[slot] = instance.pieces[i]

    layout = instance.layout
    if layout.kind == "temporal":
        return slots.reshape((-1,) + slots.shape[2:])
    _, h, w, c = instance.piece_shape
    grid = slots[:, 0].reshape(layout.rows, layout.cols, h, w, c)
    return grid.transpose(0, 2, 1, 3, 4).reshape(layout.rows * h, layout.cols * w, c)
