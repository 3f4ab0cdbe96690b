"""Tests para app.storage y app.utils.pnm."""

import numpy as np
import pytest

from app.exceptions import CorpusError, StorageError
from app.schemas.results import LOSS_CSV_HEADER
from app.storage import CsvLog, atomic_write, read_csv, write_csv, write_json
from app.utils.pnm import decode_pnm, encode_pnm, read_pnm, suffix_for, write_pnm


class TestAtomicWrite:
    """Tests de la escritura atómica."""

    def test_error_deja_el_destino_intacto(self, tmp_path):
        """Test que un fallo dentro del bloque no toca el archivo previo."""
        target = tmp_path / "data.bin"
        target.write_bytes(b"original")

        with pytest.raises(RuntimeError):
            with atomic_write(target) as handle:
                handle.write(b"parcial")
                raise RuntimeError("fallo")

        assert target.read_bytes() == b"original"
        assert [p.name for p in tmp_path.iterdir()] == ["data.bin"]

    def test_crea_directorios_intermedios(self, tmp_path):
        """Test que se crean los directorios del destino."""
        write_json(tmp_path / "a" / "b" / "x.json", {"k": 1})

        assert (tmp_path / "a" / "b" / "x.json").read_text().strip() == '{\n  "k": 1\n}'

    def test_directorio_no_escribible(self, tmp_path):
        """Test que un destino imposible produce StorageError."""
        blocker = tmp_path / "file"
        blocker.write_text("x")

        with pytest.raises(StorageError):
            write_json(blocker / "child.json", {})


class TestCsv:
    """Tests de los registros CSV."""

    def test_cabecera_incorrecta_falla(self, tmp_path):
        """Test que read_csv valida la cabecera."""
        write_csv(tmp_path / "x.csv", ("a", "b"), [[1, 2]])

        assert read_csv(tmp_path / "x.csv", ("a", "b")) == [["1", "2"]]
        with pytest.raises(StorageError):
            read_csv(tmp_path / "x.csv", LOSS_CSV_HEADER)

    def test_csv_log_conserva_y_trunca(self, tmp_path):
        """Test que CsvLog retoma filas previas y puede truncarlas."""
        path = tmp_path / "loss.csv"
        log = CsvLog(path, LOSS_CSV_HEADER)
        for step in range(1, 5):
            log.append([step, 0.5, 1e-4, 0.1])
        log.flush()

        resumed = CsvLog(path, LOSS_CSV_HEADER)
        resumed.truncate(lambda row: int(row[0]) <= 2)
        resumed.flush()

        assert [row[0] for row in read_csv(path, LOSS_CSV_HEADER)] == ["1", "2"]


class TestPnm:
    """Tests del códec PGM/PPM."""

    def test_cabecera_p5_y_carga(self):
        """Test que 'P5 64 64 255' + 4096 bytes es una imagen gris 64×64."""
        payload = bytes(range(256)) * 16

        image = decode_pnm(b"P5 64 64 255\n" + payload)

        assert image.shape == (64, 64, 1)
        assert image[0, :4, 0].tolist() == [0, 1, 2, 3]

    def test_comentarios_en_cabecera(self):
        """Test que los comentarios de la cabecera se ignoran."""
        image = decode_pnm(b"P6\n# hola\n1 1\n255\n" + bytes([1, 2, 3]))

        assert image.tolist() == [[[1, 2, 3]]]

    def test_escritura_y_lectura(self, tmp_path):
        """Test que una imagen RGB escrita se lee igual."""
        image = np.random.default_rng(0).integers(0, 256, size=(5, 7, 3), dtype=np.uint8)

        write_pnm(tmp_path / "x.ppm", image)

        assert np.array_equal(read_pnm(tmp_path / "x.ppm"), image)

    def test_carga_truncada_indica_desplazamiento(self):
        """Test que los datos truncados informan del byte final."""
        data = b"P5 4 4 255\n" + bytes(10)

        with pytest.raises(CorpusError) as exc_info:
            decode_pnm(data, path="x.pgm")

        assert exc_info.value.offset == len(data)
        assert "x.pgm" in str(exc_info.value)

    @pytest.mark.parametrize(
        "data",
        [b"P3 1 1 255\n\x00", b"P5 a 1 255\n\x00", b"P5 1 1 65535\n\x00\x00", b"P5 1"],
    )
    def test_cabeceras_invalidas(self, data):
        """Test que formatos o cabeceras no soportadas se rechazan."""
        with pytest.raises(CorpusError):
            decode_pnm(data)

    def test_archivo_inexistente(self, tmp_path):
        """Test que un archivo ausente produce CorpusError con su ruta."""
        with pytest.raises(CorpusError) as exc_info:
            read_pnm(tmp_path / "nada.pgm")

        assert "nada.pgm" in str(exc_info.value)

    def test_solo_uint8(self):
        """Test que encode_pnm exige uint8."""
        with pytest.raises(ValueError):
            encode_pnm(np.zeros((2, 2), dtype=np.float64))

    def test_sufijo_segun_canales(self):
        """Test de la extensión convencional."""
        assert suffix_for(np.zeros((2, 2, 3), dtype=np.uint8)) == ".ppm"
        assert suffix_for(np.zeros((2, 2, 1), dtype=np.uint8)) == ".pgm"
        assert suffix_for(np.zeros((2, 2), dtype=np.uint8)) == ".pgm"
