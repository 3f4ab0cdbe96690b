"""Tests para app.checkpoint."""

import struct
import zlib

import numpy as np
import pytest

from app import tensorlab as tl
from app.checkpoint import MAGIC, Checkpoint, decode, encode, load, save
from app.exceptions import (
    BadMagicError,
    ChecksumError,
    ConfigMismatchError,
    ShapeHeaderError,
    StorageError,
    TruncatedCheckpointError,
    VersionMismatchError,
)
from app.schemas.training import ScheduleConfig, TrainConfig


@pytest.fixture
def trained_checkpoint(tiny_model, randomize):
    """Checkpoint con pesos aleatorios y momentos de Adam no nulos."""
    randomize(tiny_model, seed=4)
    params = tiny_model.named_parameters()
    rng = np.random.default_rng(9)
    adam = tl.AdamState(lr=1e-3)
    tl.adam_step(adam, params, {name: rng.normal(size=p.shape) for name, p in params.items()})
    return Checkpoint.capture(
        tiny_model,
        ScheduleConfig(timesteps=20),
        adam,
        step=7,
        seed=3,
        train=TrainConfig(batch_size=3, steps=10, seed=3),
    )


def _with_crc(body: bytes) -> bytes:
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


class TestFormato:
    """Tests de codificación y decodificación."""

    def test_reescritura_identica_byte_a_byte(self, trained_checkpoint):
        """Test que decode seguido de encode reproduce los mismos bytes."""
        data = encode(trained_checkpoint)

        again = encode(decode(data))

        assert again == data

    def test_cabecera_y_crc(self, trained_checkpoint):
        """Test de la firma, la versión y el CRC32 final."""
        data = encode(trained_checkpoint)

        assert data[:6] == MAGIC
        assert struct.unpack("<H", data[6:8]) == (1,)
        assert struct.unpack("<I", data[-4:])[0] == zlib.crc32(data[:-4]) & 0xFFFFFFFF

    def test_conserva_estado_completo(self, trained_checkpoint):
        """Test que configuración, paso, semilla y Adam sobreviven al formato."""
        restored = decode(encode(trained_checkpoint))

        assert restored.config == trained_checkpoint.config
        assert restored.schedule == trained_checkpoint.schedule
        assert restored.train == trained_checkpoint.train
        assert (restored.step, restored.seed) == (7, 3)
        assert restored.adam.step == 1
        assert restored.adam.lr == pytest.approx(1e-3)
        for name, value in trained_checkpoint.params.items():
            assert np.array_equal(restored.params[name], value.astype(np.float32))
        assert set(restored.adam.m) == set(trained_checkpoint.adam.m)

    def test_modelo_reconstruido_predice_igual(self, trained_checkpoint):
        """Test que build_model carga los pesos guardados."""
        model = decode(encode(trained_checkpoint)).build_model()

        for name, param in model.named_parameters().items():
            assert np.array_equal(param.data, trained_checkpoint.params[name].astype(np.float32))

    def test_guardar_y_cargar(self, trained_checkpoint, tmp_path):
        """Test que save y load producen el mismo estado."""
        path = save(trained_checkpoint, tmp_path / "runs" / "ckpt.bin")

        assert path.read_bytes() == encode(trained_checkpoint)
        assert load(path, expected=trained_checkpoint.config).step == 7


class TestErrores:
    """Tests de cada error de formato."""

    def test_firma_incorrecta(self, trained_checkpoint):
        """Test que otra firma produce BadMagicError."""
        data = b"XXXXXX" + encode(trained_checkpoint)[6:]

        with pytest.raises(BadMagicError):
            decode(data)

    def test_version_desconocida(self, trained_checkpoint):
        """Test que otra versión produce VersionMismatchError."""
        data = encode(trained_checkpoint)
        body = data[:6] + struct.pack("<H", 2) + data[8:-4]

        with pytest.raises(VersionMismatchError):
            decode(_with_crc(body))

    @pytest.mark.parametrize("cut", [1, 10, 200])
    def test_archivo_truncado(self, trained_checkpoint, cut):
        """Test que un archivo cortado produce TruncatedCheckpointError."""
        data = encode(trained_checkpoint)

        with pytest.raises(TruncatedCheckpointError):
            decode(data[:-cut])

    def test_solo_la_cabecera(self):
        """Test que la firma sola no basta."""
        with pytest.raises(TruncatedCheckpointError):
            decode(MAGIC)

    def test_byte_alterado_falla_el_crc(self, trained_checkpoint):
        """Test que alterar un byte de los datos produce ChecksumError."""
        data = bytearray(encode(trained_checkpoint))
        data[-8] ^= 0xFF

        with pytest.raises(ChecksumError):
            decode(bytes(data))

    def test_bytes_sobrantes(self, trained_checkpoint):
        """Test que datos tras el último registro producen ShapeHeaderError."""
        data = encode(trained_checkpoint)

        with pytest.raises(ShapeHeaderError):
            decode(_with_crc(data[:-4] + b"\x00" * 8))

    def test_forma_que_no_encaja_con_la_configuracion(self, trained_checkpoint):
        """Test que un parámetro con otra forma produce ShapeHeaderError."""
        name = next(iter(trained_checkpoint.params))
        trained_checkpoint.params[name] = np.zeros((1, 1))

        with pytest.raises(ShapeHeaderError) as exc_info:
            decode(encode(trained_checkpoint))

        assert name in str(exc_info.value)

    def test_parametro_ausente(self, trained_checkpoint):
        """Test que un parámetro que falta produce ShapeHeaderError."""
        trained_checkpoint.params.popitem()

        with pytest.raises(ShapeHeaderError):
            decode(encode(trained_checkpoint))

    def test_configuracion_distinta(self, trained_checkpoint, tmp_path):
        """Test que load con otra configuración informa de ambas."""
        path = save(trained_checkpoint, tmp_path / "ckpt.bin")
        other = trained_checkpoint.config.model_copy(update={"hidden": 4})

        with pytest.raises(ConfigMismatchError) as exc_info:
            load(path, expected=other)

        message = str(exc_info.value)
        assert '"hidden":8' in message
        assert '"hidden":4' in message

    def test_archivo_inexistente(self, tmp_path):
        """Test que un archivo ausente produce StorageError."""
        with pytest.raises(StorageError):
            load(tmp_path / "nada.bin")
