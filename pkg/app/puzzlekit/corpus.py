"""
Corpus en disco: manifiesto, fuentes y puzzles construidos.

Estructura::

    DIR/manifest.json
    DIR/sources/00000.pgm            (espacial)
    DIR/sources/00000/000.pgm ...    (temporal, un archivo por frame)
    DIR/puzzles/00000/puzzle.json
    DIR/puzzles/00000/pieces/000.pgm (frames de la pieza apilados en vertical)
"""

import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
from pydantic import ValidationError
from tqdm import tqdm

from app.exceptions import CorpusError
from app.posenc import Layout
from app.puzzlekit.instances import (
    PuzzleInstance,
    apply_mask,
    cell_size_for,
    make_spatial,
    make_temporal,
    max_missing,
)
from app.puzzlekit.synth import TEMPORAL_FRAMES, TEMPORAL_SIZE, synth_spatial, synth_temporal
from app.schemas.corpus import (
    CorpusManifest,
    CorpusParams,
    Provenance,
    PuzzleRecord,
    SampleRecord,
)
from app.storage import write_json
from app.utils.pnm import read_pnm, write_pnm

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
PUZZLE_NAME = "puzzle.json"
_IMAGE_SUFFIXES = (".pgm", ".ppm")


@dataclass(frozen=True)
class Source:
    """Fuente decodificada: imagen ``H × W × C`` o frames ``T × H × W × C``."""

    record: SampleRecord
    data: np.ndarray


def _manifest_path(path: str | os.PathLike) -> Path:
    path = Path(path)
    return path / MANIFEST_NAME if path.is_dir() else path


def _load_json(path: Path, model):
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise CorpusError(f"No se puede leer: {e.strerror or e}", path=path) from e
    try:
        return model.model_validate(json.loads(text))
    except json.JSONDecodeError as e:
        raise CorpusError(
            f"JSON inválido (línea {e.lineno}, columna {e.colno}): {e.msg}", path=path
        ) from e
    except ValidationError as e:
        raise CorpusError(f"Documento inválido: {e}", path=path) from e


def read_manifest(path: str | os.PathLike) -> CorpusManifest:
    """Lee y valida ``manifest.json`` (se admite la ruta del directorio)."""
    return _load_json(_manifest_path(path), CorpusManifest)


def load_frames(directory: str | os.PathLike) -> np.ndarray:
    """
    Lee un directorio de frames ordenados por su nombre numérico.

    Raises:
        CorpusError: Si no hay frames, algún nombre no es numérico o los
            tamaños no coinciden.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise CorpusError("No existe el directorio de frames", path=directory)
    files = [p for p in directory.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES]
    if not files:
        raise CorpusError("Directorio de frames vacío", path=directory)
    for f in files:
        if not f.stem.isdigit():
            raise CorpusError("Nombre de frame no numérico", path=f)
    files.sort(key=lambda p: int(p.stem))
    frames = []
    for f in files:
        frame = read_pnm(f)
        if frames and frame.shape != frames[0].shape:
            raise CorpusError(
                f"Tamaño de frame {frame.shape} distinto del primero {frames[0].shape}", path=f
            )
        frames.append(frame)
    return np.stack(frames)


def load_corpus(path: str | os.PathLike, split: str | None = None) -> Iterator[Source]:
    """
    Recorre las fuentes del corpus decodificándolas bajo demanda.

    Args:
        path: ``manifest.json`` o el directorio que lo contiene.
        split: ``train``, ``test`` o todas.

    Yields:
        Source: Imagen o secuencia de cada muestra.
    """
    manifest_path = _manifest_path(path)
    manifest = read_manifest(manifest_path)
    root = manifest_path.parent
    for record in manifest.samples:
        if split is not None and record.split != split:
            continue
        target = root / record.path
        if record.type == "image":
            data = read_pnm(target)
        else:
            data = load_frames(target)
        yield Source(record=record, data=data)


def save_puzzle(instance: PuzzleInstance, directory: str | os.PathLike) -> PuzzleRecord:
    """Escribe las piezas dadas y ``puzzle.json``; las retenidas no se escriben."""
    directory = Path(directory)
    names: list[str | None] = []
    for i in range(instance.n):
        if i in instance.missing:
            names.append(None)
            continue
        name = f"pieces/{i:03d}.pgm" if instance.pieces.shape[-1] == 1 else f"pieces/{i:03d}.ppm"
        piece = instance.pieces[i]
        write_pnm(directory / name, piece.reshape((-1,) + piece.shape[2:]))
        names.append(name)
    layout = instance.layout
    record = PuzzleRecord(
        kind=layout.kind,
        rows=layout.rows,
        cols=layout.cols,
        length=layout.length,
        piece_shape=instance.piece_shape,
        truth=instance.truth.tolist(),
        missing=list(instance.missing),
        anchor=instance.anchor,
        pieces=names,
        provenance=instance.provenance,
    )
    write_json(directory / PUZZLE_NAME, record)
    return record


def load_puzzle(directory: str | os.PathLike) -> PuzzleInstance:
    """
    Lee un puzzle guardado con ``save_puzzle``.

    Raises:
        CorpusError: Si falta algún archivo o una pieza no tiene la forma declarada.
    """
    directory = Path(directory)
    if directory.is_file():
        directory = directory.parent
    record = _load_json(directory / PUZZLE_NAME, PuzzleRecord)
    layout = (
        Layout.grid(record.rows, record.cols)
        if record.kind == "spatial"
        else Layout.sequence(record.length)
    )
    frames, h, w, c = record.piece_shape
    pieces = np.zeros((layout.size, frames, h, w, c), dtype=np.uint8)
    for i, name in enumerate(record.pieces):
        if name is None:
            continue
        path = directory / name
        image = read_pnm(path)
        if image.shape != (frames * h, w, c):
            raise CorpusError(
                f"Pieza con forma {image.shape}, se esperaba {(frames * h, w, c)}", path=path
            )
        pieces[i] = image.reshape(frames, h, w, c)
    missing = set(record.missing) | {i for i, name in enumerate(record.pieces) if name is None}
    try:
        return PuzzleInstance(
            pieces=pieces,
            layout=layout,
            truth=np.asarray(record.truth),
            missing=tuple(sorted(missing)),
            anchor=record.anchor,
            provenance=record.provenance,
        )
    except ValueError as e:
        raise CorpusError(str(e), path=directory / PUZZLE_NAME) from e


def iter_puzzles(
    corpus: str | os.PathLike, split: str | None = "test"
) -> Iterator[tuple[SampleRecord, PuzzleInstance]]:
    """Puzzles construidos del corpus, en el orden del manifiesto."""
    manifest_path = _manifest_path(corpus)
    manifest = read_manifest(manifest_path)
    for record in manifest.samples:
        if record.puzzle is None or (split is not None and record.split != split):
            continue
        yield record, load_puzzle(manifest_path.parent / record.puzzle)


# ---------------------------------------------------------------------------
# Construcción
# ---------------------------------------------------------------------------


def spatial_image_size(params: CorpusParams) -> int:
    """Lado de la imagen fuente necesario para los parámetros dados."""
    if params.image_size is not None:
        return params.image_size
    cell = (params.cell_size or cell_size_for(params.piece_size)) if params.gap else params.piece_size
    return params.grid * cell


def _collect_sources(params: CorpusParams, seed: int, input_dir: Path | None) -> list[np.ndarray]:
    if params.source == "synth":
        if params.count < 1:
            raise ValueError("count debe ser ≥ 1 para corpus sintéticos")
        if params.mode == "spatial":
            return list(synth_spatial(seed, params.count, size=spatial_image_size(params)))
        return list(
            synth_temporal(
                seed,
                params.count,
                frames=params.frames or TEMPORAL_FRAMES,
                size=params.frame_size or TEMPORAL_SIZE,
            )
        )

    if input_dir is None or not input_dir.is_dir():
        raise CorpusError("Se requiere un directorio de entrada para --source dir", path=input_dir)
    if params.mode == "spatial":
        entries = sorted(p for p in input_dir.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES)
        loader = read_pnm
    else:
        entries = sorted(p for p in input_dir.iterdir() if p.is_dir())
        loader = load_frames
    if params.count:
        entries = entries[: params.count]
    if not entries:
        raise CorpusError("No hay muestras en el directorio de entrada", path=input_dir)
    return [loader(p) for p in entries]


def split_indices(count: int, seed: int, test_fraction: float) -> set[int]:
    """Índices de la partición de test (elegidos de forma determinista)."""
    if count < 2 or test_fraction <= 0:
        return set()
    n_test = min(count - 1, max(1, int(round(test_fraction * count))))
    order = np.random.default_rng([int(seed), count]).permutation(count)
    return {int(i) for i in order[:n_test]}


def puzzle_rng(seed: int, index: int) -> np.random.Generator:
    """Flujo de construcción del puzzle ``index`` (independiente del de su fuente)."""
    return np.random.default_rng([int(seed), int(index), 1])


def build_instance(
    data: np.ndarray,
    params: CorpusParams,
    rng: np.random.Generator,
    *,
    crop: str = "center",
    flip: bool = False,
    provenance: Provenance | None = None,
) -> PuzzleInstance:
    """Construye el puzzle de una fuente según los parámetros del corpus."""
    if params.mode == "spatial":
        return make_spatial(
            data,
            params.grid,
            rng,
            gap=params.gap,
            crop=crop,
            piece_size=params.piece_size,
            cell_size=params.cell_size,
            flip=flip,
            anchor=params.anchor,
            provenance=provenance,
        )
    return make_temporal(
        data,
        params.piece_len,
        rng,
        anchor_first=params.anchor,
        stride=params.stride,
        provenance=provenance,
    )


def build_corpus(
    params: CorpusParams,
    out_dir: str | os.PathLike,
    seed: int = 0,
    *,
    input_dir: str | os.PathLike | None = None,
    test_fraction: float = 0.1,
) -> CorpusManifest:
    """
    Genera o importa las fuentes, construye un puzzle por muestra y escribe el manifiesto.

    Args:
        params: Parámetros de construcción.
        out_dir: Directorio de salida.
        seed: Semilla global.
        input_dir: Directorio de imágenes o de secuencias (``source=dir``).
        test_fraction: Fracción de muestras reservadas para test.

    Returns:
        CorpusManifest: Manifiesto escrito.

    Raises:
        CorpusError: Si las fuentes no se pueden leer.
        ValueError: Si los parámetros no son compatibles con las fuentes.
        StorageError: Si no se puede escribir la salida.
    """
    out_dir = Path(out_dir)
    input_dir = Path(input_dir) if input_dir is not None else None
    sources = _collect_sources(params, seed, input_dir)
    test = split_indices(len(sources), seed, test_fraction)
    samples = []

    progress = tqdm(
        enumerate(sources),
        total=len(sources),
        desc="make-puzzles",
        disable=not sys.stderr.isatty(),
    )
    for index, data in progress:
        name = f"{index:05d}"
        if params.mode == "spatial":
            source_path = f"sources/{name}.pgm" if data.shape[-1] == 1 else f"sources/{name}.ppm"
            write_pnm(out_dir / source_path, data)
            kind = "image"
        else:
            source_path = f"sources/{name}"
            for t, frame in enumerate(data):
                write_pnm(out_dir / source_path / f"{t:03d}.pgm", frame)
            kind = "frames"

        rng = puzzle_rng(seed, index)
        provenance = Provenance(
            source=source_path, params=params.model_dump(exclude_none=True), seed=seed
        )
        instance = build_instance(data, params, rng, provenance=provenance)
        if params.mask_max > 0:
            k = int(rng.integers(0, max_missing(instance.n, params.mask_max) + 1))
            instance = apply_mask(instance, k, rng, allow_over=True)
        puzzle_path = f"puzzles/{name}"
        save_puzzle(instance, out_dir / puzzle_path)
        samples.append(
            SampleRecord(
                path=source_path,
                type=kind,
                split="test" if index in test else "train",
                puzzle=puzzle_path,
            )
        )

    manifest = CorpusManifest(samples=samples, params=params, seed=seed)
    write_json(out_dir / MANIFEST_NAME, manifest)
    logger.info(
        f"Corpus {params.mode} escrito en {out_dir}: {len(samples)} muestras "
        f"({len(samples) - len(test)} train / {len(test)} test)"
    )
    return manifest
