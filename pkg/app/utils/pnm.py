"""Lectura y escritura de imágenes PGM (P5) y PPM (P6) binarias de 8 bits."""

import io
import os
from pathlib import Path

import numpy as np
from PIL import Image

from app.exceptions import CorpusError
from app.storage import write_bytes

_CHANNELS = {b"P5": 1, b"P6": 3}
_WHITESPACE = b" \t\r\n"


def _next_token(data: bytes, pos: int, path) -> tuple[bytes, int]:
    while pos < len(data):
        if data[pos] in _WHITESPACE:
            pos += 1
        elif data[pos : pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
        else:
            break
    start = pos
    while pos < len(data) and data[pos] not in _WHITESPACE and data[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise CorpusError("Cabecera PNM incompleta", path=path, offset=start)
    return data[start:pos], pos


def decode_pnm(data: bytes, path: str | os.PathLike | None = None) -> np.ndarray:
    """
    Decodifica una imagen PNM binaria.

    Args:
        data: Contenido del archivo.
        path: Ruta usada en los mensajes de error.

    Returns:
        np.ndarray: Arreglo uint8 ``alto × ancho × canales`` (1 o 3 canales).

    Raises:
        CorpusError: Si la cabecera es inválida o la carga útil está truncada,
            indicando el desplazamiento en bytes.
    """
    magic, pos = _next_token(data, 0, path)
    if magic not in _CHANNELS:
        raise CorpusError(f"Formato PNM no soportado: {magic!r}", path=path, offset=0)
    fields = []
    for _ in range(3):
        start = pos
        token, pos = _next_token(data, pos, path)
        if not token.isdigit():
            raise CorpusError(f"Campo de cabecera no numérico: {token!r}", path=path, offset=start)
        fields.append(int(token))
    width, height, maxval = fields
    if maxval != 255:
        raise CorpusError(f"Solo se admite maxval 255, encontrado {maxval}", path=path, offset=pos)
    if width < 1 or height < 1:
        raise CorpusError(f"Dimensiones inválidas {width}x{height}", path=path, offset=pos)
    # Un único espacio separa la cabecera de los píxeles
    pos += 1
    channels = _CHANNELS[magic]
    expected = width * height * channels
    available = len(data) - pos
    if available < expected:
        raise CorpusError(
            f"Datos truncados: se esperaban {expected} bytes y hay {max(available, 0)}",
            path=path,
            offset=len(data),
        )
    pixels = np.frombuffer(data, dtype=np.uint8, count=expected, offset=pos)
    return pixels.reshape(height, width, channels).copy()


def read_pnm(path: str | os.PathLike) -> np.ndarray:
    """Lee un archivo PGM/PPM; los errores nombran el archivo."""
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise CorpusError(f"No se puede leer la imagen: {e.strerror or e}", path=path) from e
    return decode_pnm(data, path)


def encode_pnm(image: np.ndarray) -> bytes:
    """Codifica un arreglo uint8 ``H × W`` o ``H × W × {1,3}`` como PGM o PPM binario."""
    image = np.asarray(image)
    if image.dtype != np.uint8:
        raise ValueError(f"Se esperaba uint8, recibido {image.dtype}")
    if image.ndim == 3 and image.shape[2] == 1:
        image = image[:, :, 0]
    if image.ndim == 3 and image.shape[2] != 3:
        raise ValueError(f"Formato de píxel no soportado: {image.shape[2]} canales")
    buffer = io.BytesIO()
    Image.fromarray(image).save(buffer, format="PPM")
    return buffer.getvalue()


def write_pnm(path: str | os.PathLike, image: np.ndarray) -> None:
    """Escribe la imagen de forma atómica."""
    write_bytes(path, encode_pnm(image))


def suffix_for(image: np.ndarray) -> str:
    """Extensión convencional según el número de canales."""
    image = np.asarray(image)
    return ".ppm" if image.ndim == 3 and image.shape[2] == 3 else ".pgm"
