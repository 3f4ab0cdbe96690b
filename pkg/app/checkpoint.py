"""
Formato binario de checkpoints.

Diseño (little-endian)::

    "JPDVT1"            6 bytes de firma
    version             u16
    record_count        u32
    registros:
        name_len        u16
        name            name_len bytes UTF-8
        rank            u8
        dims            rank × u32
        payload         prod(dims) × float32
    crc32               u32 de todos los bytes anteriores

El registro ``meta`` guarda la configuración como JSON UTF-8 empaquetado en
palabras de 32 bits (relleno con espacios); sus bits se copian sin
interpretarlos como números.
"""

import json
import logging
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from app import tensorlab as tl
from app.exceptions import (
    BadMagicError,
    ChecksumError,
    ConfigMismatchError,
    ShapeHeaderError,
    StorageError,
    TruncatedCheckpointError,
    VersionMismatchError,
)
from app.models.denoiser import Denoiser
from app.schemas.training import DenoiserConfig, ScheduleConfig, TrainConfig
from app.storage import write_bytes

logger = logging.getLogger(__name__)

MAGIC = b"JPDVT1"
FORMAT_VERSION = 1
META_RECORD = "meta"
PARAM_PREFIX = "param."
ADAM_M_PREFIX = "adam.m."
ADAM_V_PREFIX = "adam.v."


@dataclass
class Checkpoint:
    """
    Estado completo de un entrenamiento.

    Attributes:
        config: Configuración del modelo.
        schedule: Parámetros del calendario de ruido.
        params: Pesos por nombre.
        adam: Estado del optimizador (momentos y contador).
        step: Pasos de entrenamiento completados.
        seed: Semilla; junto con ``step`` determina el generador de cada paso.
        train: Configuración de entrenamiento, si la hay.
    """

    config: DenoiserConfig
    schedule: ScheduleConfig
    params: dict[str, np.ndarray]
    adam: tl.AdamState = field(default_factory=tl.AdamState)
    step: int = 0
    seed: int = 0
    train: TrainConfig | None = None

    @classmethod
    def capture(
        cls,
        model: Denoiser,
        schedule: ScheduleConfig,
        adam: tl.AdamState,
        step: int,
        seed: int,
        train: TrainConfig | None = None,
    ) -> "Checkpoint":
        """Copia el estado actual (los arreglos no se comparten con el modelo)."""
        return cls(
            config=model.config,
            schedule=schedule,
            params=model.state(),
            adam=tl.AdamState(
                lr=adam.lr,
                beta1=adam.beta1,
                beta2=adam.beta2,
                eps=adam.eps,
                step=adam.step,
                m={k: v.copy() for k, v in adam.m.items()},
                v={k: v.copy() for k, v in adam.v.items()},
            ),
            step=step,
            seed=seed,
            train=train,
        )

    def build_model(self) -> Denoiser:
        """
        Reconstruye el modelo con los pesos guardados.

        Raises:
            ShapeHeaderError: Si los registros no encajan con la configuración.
        """
        model = Denoiser(self.config, seed=self.seed)
        try:
            model.load_state(self.params)
        except (KeyError, ValueError) as e:
            raise ShapeHeaderError(f"Pesos incompatibles con la configuración: {e}") from e
        return model

    def meta(self) -> dict:
        return {
            "format": FORMAT_VERSION,
            "config": self.config.model_dump(mode="json"),
            "schedule": self.schedule.model_dump(mode="json"),
            "train": self.train.model_dump(mode="json") if self.train else None,
            "step": self.step,
            "seed": self.seed,
            "adam": {
                "lr": self.adam.lr,
                "beta1": self.adam.beta1,
                "beta2": self.adam.beta2,
                "eps": self.adam.eps,
                "step": self.adam.step,
            },
            "rng": {"seed": self.seed, "step": self.step},
        }


# ---------------------------------------------------------------------------
# Codificación
# ---------------------------------------------------------------------------


def _pack_record(name: str, payload: np.ndarray) -> bytes:
    encoded = name.encode("utf-8")
    header = struct.pack("<H", len(encoded)) + encoded + struct.pack("<B", payload.ndim)
    header += struct.pack(f"<{payload.ndim}I", *payload.shape)
    return header + payload.tobytes()


def _meta_words(meta: dict) -> np.ndarray:
    raw = json.dumps(meta, sort_keys=True).encode("utf-8")
    raw += b" " * (-len(raw) % 4)
    return np.frombuffer(raw, dtype="<f4")


def encode(ckpt: Checkpoint) -> bytes:
    """Serializa el checkpoint al formato binario."""
    records = [_pack_record(META_RECORD, _meta_words(ckpt.meta()))]
    for name, value in ckpt.params.items():
        records.append(_pack_record(PARAM_PREFIX + name, np.asarray(value, dtype="<f4")))
    for name, value in ckpt.adam.m.items():
        records.append(_pack_record(ADAM_M_PREFIX + name, np.asarray(value, dtype="<f4")))
    for name, value in ckpt.adam.v.items():
        records.append(_pack_record(ADAM_V_PREFIX + name, np.asarray(value, dtype="<f4")))
    body = MAGIC + struct.pack("<HI", FORMAT_VERSION, len(records)) + b"".join(records)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def save(ckpt: Checkpoint, path: str | os.PathLike) -> Path:
    """Escribe el checkpoint de forma atómica."""
    path = Path(path)
    write_bytes(path, encode(ckpt))
    logger.info(f"Checkpoint del paso {ckpt.step} guardado en {path}")
    return path


# ---------------------------------------------------------------------------
# Decodificación
# ---------------------------------------------------------------------------


class _Reader:
    def __init__(self, data: bytes, end: int, path) -> None:
        self.data = data
        self.end = end
        self.pos = 0
        self.path = path

    def take(self, size: int, what: str) -> bytes:
        if self.pos + size > self.end:
            raise TruncatedCheckpointError(
                f"{self.path}: archivo truncado leyendo {what} en el byte {self.pos} "
                f"(faltan {self.pos + size - self.end} bytes)"
            )
        chunk = self.data[self.pos : self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode(data: bytes, path: str | os.PathLike = "<memoria>") -> Checkpoint:
    """
    Interpreta el contenido binario de un checkpoint.

    Raises:
        BadMagicError: Firma incorrecta.
        VersionMismatchError: Versión de formato no soportada.
        TruncatedCheckpointError: El archivo termina antes de tiempo.
        ShapeHeaderError: Cabecera de registro inconsistente.
        ChecksumError: El CRC32 no coincide.
    """
    if data[: len(MAGIC)] != MAGIC:
        raise BadMagicError(
            f"{path}: firma {data[:len(MAGIC)]!r}, se esperaba {MAGIC!r}"
        )
    reader = _Reader(data, max(len(data) - 4, len(MAGIC)), path)
    reader.pos = len(MAGIC)
    (version,) = reader.unpack("<H", "la versión")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"{path}: versión de formato {version}, se esperaba {FORMAT_VERSION}"
        )
    (count,) = reader.unpack("<I", "el número de registros")

    records: dict[str, np.ndarray] = {}
    for index in range(count):
        (name_len,) = reader.unpack("<H", f"el registro {index}")
        if name_len == 0:
            raise ShapeHeaderError(f"{path}: registro {index} sin nombre (byte {reader.pos})")
        name = reader.take(name_len, f"el nombre del registro {index}").decode("utf-8", "replace")
        (rank,) = reader.unpack("<B", f"el rango de '{name}'")
        dims = reader.unpack(f"<{rank}I", f"las dimensiones de '{name}'")
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        payload = reader.take(4 * size, f"los datos de '{name}'")
        if name in records:
            raise ShapeHeaderError(f"{path}: registro duplicado '{name}'")
        records[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()

    if len(data) < reader.pos + 4:
        raise TruncatedCheckpointError(f"{path}: falta el CRC32 final (byte {reader.pos})")
    if len(data) > reader.pos + 4:
        raise ShapeHeaderError(
            f"{path}: {len(data) - reader.pos - 4} bytes sobrantes tras {count} registros"
        )
    (stored_crc,) = struct.unpack("<I", data[reader.pos : reader.pos + 4])
    actual_crc = zlib.crc32(data[: reader.pos]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise ChecksumError(
            f"{path}: CRC32 {stored_crc:08x} no coincide con el contenido ({actual_crc:08x})"
        )
    return _from_records(records, path)


def _from_records(records: dict[str, np.ndarray], path) -> Checkpoint:
    meta_words = records.pop(META_RECORD, None)
    if meta_words is None or meta_words.ndim != 1:
        raise ShapeHeaderError(f"{path}: falta el registro '{META_RECORD}' o no es un vector")
    try:
        meta = json.loads(meta_words.astype("<f4").tobytes().decode("utf-8"))
        config = DenoiserConfig.model_validate(meta["config"])
        schedule = ScheduleConfig.model_validate(meta["schedule"])
        train = TrainConfig.model_validate(meta["train"]) if meta.get("train") else None
    except (ValueError, KeyError, UnicodeDecodeError) as e:
        raise ShapeHeaderError(f"{path}: metadatos ilegibles: {e}") from e

    dtype = np.dtype(config.dtype)
    params, m, v = {}, {}, {}
    for name, value in records.items():
        for prefix, target in ((PARAM_PREFIX, params), (ADAM_M_PREFIX, m), (ADAM_V_PREFIX, v)):
            if name.startswith(prefix):
                target[name[len(prefix):]] = value.astype(dtype)
                break
        else:
            raise ShapeHeaderError(f"{path}: registro desconocido '{name}'")

    adam_meta = meta.get("adam", {})
    adam = tl.AdamState(
        lr=adam_meta.get("lr", 1e-4),
        beta1=adam_meta.get("beta1", 0.9),
        beta2=adam_meta.get("beta2", 0.999),
        eps=adam_meta.get("eps", 1e-8),
        step=adam_meta.get("step", 0),
        m=m,
        v=v,
    )
    ckpt = Checkpoint(
        config=config,
        schedule=schedule,
        params=params,
        adam=adam,
        step=int(meta.get("step", 0)),
        seed=int(meta.get("seed", 0)),
        train=train,
    )
    expected = {n: p.shape for n, p in Denoiser(config).named_parameters().items()}
    for name, shape in expected.items():
        if name not in params:
            raise ShapeHeaderError(f"{path}: falta el parámetro '{name}'")
        if params[name].shape != shape:
            raise ShapeHeaderError(
                f"{path}: '{name}' declara forma {params[name].shape}, la configuración exige {shape}"
            )
    unknown = sorted(set(params) - set(expected))
    if unknown:
        raise ShapeHeaderError(f"{path}: parámetros que la configuración no define: {unknown}")
    return ckpt


def load(path: str | os.PathLike, expected: DenoiserConfig | None = None) -> Checkpoint:
    """
    Lee un checkpoint.

    Args:
        path: Archivo a leer.
        expected: Configuración exigida; si no coincide se rechaza.

    Raises:
        StorageError: Si el archivo no se puede leer.
        ConfigMismatchError: Si la configuración no es la esperada.
        CheckpointError: Cualquiera de los errores de formato de ``decode``.
    """
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise StorageError(f"No se puede leer el checkpoint {path}: {e.strerror or e}") from e
    ckpt = decode(data, path)
    if expected is not None and expected != ckpt.config:
        raise ConfigMismatchError(
            f"{path}: configuración incompatible.\n"
            f"  checkpoint: {ckpt.config.model_dump_json()}\n"
            f"  esperada:   {expected.model_dump_json()}"
        )
    return ckpt
