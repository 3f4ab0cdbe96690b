"""Tests para app.puzzlekit (instancias, sintéticos y corpus en disco)."""

import json
from collections import Counter

import numpy as np
import pytest
from scipy.ndimage import maximum_filter

from app.exceptions import CorpusError
from app.puzzlekit.corpus import (
    MANIFEST_NAME,
    build_corpus,
    iter_puzzles,
    load_corpus,
    load_frames,
    load_puzzle,
    read_manifest,
    save_puzzle,
    split_indices,
)
from app.puzzlekit.instances import (
    apply_mask,
    denormalize_pixels,
    make_spatial,
    make_temporal,
    max_missing,
    normalize_pixels,
    reassemble,
)
from app.puzzlekit.synth import moving_squares, synth_spatial, texture
from app.schemas.corpus import CorpusParams
from app.utils.pnm import write_pnm


def _ramp(size: int) -> np.ndarray:
    y, x = np.mgrid[0:size, 0:size]
    return ((7 * y + 3 * x) % 256).astype(np.uint8)


class TestMakeSpatial:
    """Tests de la construcción de puzzles espaciales."""

    def test_recorte_central_con_hueco(self):
        """Test que la pieza de la celda (0, 0) son las filas/columnas 10..73."""
        image = _ramp(255)

        instance = make_spatial(image, 3, np.random.default_rng(0), gap=True)

        first = int(np.flatnonzero(instance.truth == 0)[0])
        assert instance.piece_shape == (1, 64, 64, 1)
        assert np.array_equal(instance.pieces[first, 0, :, :, 0], image[10:74, 10:74])

    def test_sin_hueco_tesela_exactamente(self):
        """Test que sin hueco la reconstrucción con la solución es idéntica a la imagen."""
        image = _ramp(192)

        instance = make_spatial(image, 3, np.random.default_rng(1), gap=False)
        rebuilt = reassemble(instance, instance.truth)

        assert rebuilt.shape == (192, 192, 1)
        assert np.array_equal(rebuilt[:, :, 0], image)

    def test_misma_semilla_misma_instancia(self):
        """Test que (imagen, semilla) determina la instancia."""
        image = texture(np.random.default_rng(2), size=96)

        first = make_spatial(image, 3, np.random.default_rng(5), gap=False, piece_size=32)
        second = make_spatial(image, 3, np.random.default_rng(5), gap=False, piece_size=32)

        assert np.array_equal(first.pieces, second.pieces)
        assert np.array_equal(first.truth, second.truth)

    def test_imagen_pequena_falla(self):
        """Test que una imagen menor que el tamaño objetivo se rechaza."""
        with pytest.raises(ValueError):
            make_spatial(_ramp(100), 3, np.random.default_rng(0), gap=False)

    def test_formato_no_soportado_falla(self):
        """Test que imágenes no uint8 se rechazan."""
        with pytest.raises(ValueError):
            make_spatial(np.zeros((192, 192), dtype=np.float32), 3, np.random.default_rng(0))

    def test_rejilla_de_uno_falla(self):
        """Test que grid_n debe ser ≥ 2."""
        with pytest.raises(ValueError):
            make_spatial(_ramp(192), 1, np.random.default_rng(0))

    def test_volteo_horizontal(self):
        """Test que flip refleja la imagen antes de cortar."""
        image = _ramp(128)

        flipped = make_spatial(image, 2, np.random.default_rng(0), gap=False, flip=True)

        rebuilt = reassemble(flipped, flipped.truth)[:, :, 0]
        assert np.array_equal(rebuilt, image[:, ::-1])

    def test_barajado_uniforme(self):
        """Test que las 24 permutaciones de N=4 aparecen con frecuencia 1/24."""
        rng = np.random.default_rng(3)
        frames = np.zeros((4, 1, 1, 1), dtype=np.uint8)
        draws = 10_000
        counts = Counter(
            tuple(make_temporal(frames, 1, rng, anchor_first=False).truth.tolist())
            for _ in range(draws)
        )

        expected = draws / 24
        sigma = np.sqrt(draws * (1 / 24) * (23 / 24))
        assert len(counts) == 24
        assert all(abs(c - expected) <= 4 * sigma for c in counts.values())


class TestMakeTemporal:
    """Tests de la construcción de puzzles temporales."""

    def test_veinte_frames_de_uno(self):
        """Test que 20 frames con clips de 1 dan 20 piezas."""
        frames = moving_squares(np.random.default_rng(0), frames=20, size=8)

        instance = make_temporal(frames, 1, np.random.default_rng(1))

        assert instance.n == 20
        assert instance.truth[0] == 0

    def test_treinta_y_dos_frames_de_ocho(self):
        """Test que 32 frames con clips de 8 dan 4 piezas en orden interno."""
        frames = moving_squares(np.random.default_rng(0), frames=32, size=8)

        instance = make_temporal(frames, 8, np.random.default_rng(2), anchor_first=False)

        assert instance.n == 4
        for i, slot in enumerate(instance.truth):
            assert np.array_equal(instance.pieces[i], frames[slot * 8 : slot * 8 + 8])

    def test_ancla_siempre_en_el_hueco_cero(self):
        """Test que con ancla la presentación 0 corresponde al hueco 0."""
        frames = np.zeros((6, 2, 2), dtype=np.uint8)
        rng = np.random.default_rng(4)

        for _ in range(50):
            assert make_temporal(frames, 1, rng).truth[0] == 0

    def test_frames_no_divisibles_falla(self):
        """Test que el número de frames debe ser múltiplo de piece_len."""
        with pytest.raises(ValueError):
            make_temporal(np.zeros((10, 2, 2), dtype=np.uint8), 3, np.random.default_rng(0))

    def test_submuestreo_temporal(self):
        """Test que stride toma uno de cada k frames antes de agrupar."""
        frames = np.arange(8, dtype=np.uint8).reshape(8, 1, 1)

        instance = make_temporal(frames, 1, np.random.default_rng(0), stride=2)

        assert instance.n == 4
        assert sorted(int(p.reshape(-1)[0]) for p in instance.pieces) == [0, 2, 4, 6]


class TestMask:
    """Tests de la retención de piezas."""

    def test_k_cero_no_cambia(self):
        """Test que k = 0 devuelve la misma instancia."""
        instance = make_spatial(_ramp(128), 2, np.random.default_rng(0), gap=False)

        assert apply_mask(instance, 0, np.random.default_rng(1)) is instance

    def test_k_por_encima_del_limite_requiere_permiso(self):
        """Test que 3 de 9 ausentes exige allow_over."""
        instance = make_spatial(_ramp(192), 3, np.random.default_rng(0), gap=False)

        assert max_missing(9) == 2
        with pytest.raises(ValueError):
            apply_mask(instance, 3, np.random.default_rng(1))
        masked = apply_mask(instance, 3, np.random.default_rng(1), allow_over=True)
        assert len(masked.missing) == 3

    def test_nunca_retiene_el_ancla(self):
        """Test que la pieza anclada nunca queda ausente."""
        frames = np.zeros((8, 2, 2), dtype=np.uint8)
        instance = make_temporal(frames, 1, np.random.default_rng(0))
        rng = np.random.default_rng(1)

        for _ in range(50):
            assert 0 not in apply_mask(instance, 2, rng).missing

    def test_mascara_reproducible(self):
        """Test que la misma semilla elige las mismas piezas."""
        instance = make_spatial(_ramp(192), 3, np.random.default_rng(0), gap=False)

        first = apply_mask(instance, 2, np.random.default_rng(9))
        second = apply_mask(instance, 2, np.random.default_rng(9))

        assert first.missing == second.missing

    def test_vista_del_solucionador_no_filtra_pixeles(self, tmp_path):
        """Test que las piezas retenidas no llegan al solucionador ni al disco."""
        instance = make_spatial(_ramp(192), 3, np.random.default_rng(0), gap=False)
        masked = apply_mask(instance, 2, np.random.default_rng(3))

        view = masked.solver_view()
        save_puzzle(masked, tmp_path / "p")
        loaded = load_puzzle(tmp_path / "p")

        assert np.all(view[list(masked.missing)] == 0.0)
        assert masked.given_pieces().shape == (7, 64 * 64)
        assert loaded.missing == masked.missing
        assert np.all(loaded.pieces[list(masked.missing)] == 0)
        assert len(list((tmp_path / "p" / "pieces").iterdir())) == 7

    def test_reconstruccion_rellena_las_ausentes(self):
        """Test que las piezas ausentes sin contenido generado se rellenan de gris."""
        instance = make_spatial(_ramp(128), 2, np.random.default_rng(0), gap=False)
        masked = instance.with_missing([1])

        rebuilt = reassemble(masked, masked.truth)

        slot = int(masked.truth[1])
        row, col = divmod(slot, 2)
        assert np.all(rebuilt[row * 64 : row * 64 + 64, col * 64 : col * 64 + 64] == 128)


class TestPixeles:
    """Tests de la normalización de píxeles."""

    def test_normalizacion_ida_y_vuelta(self):
        """Test que los extremos van a ±1 y vuelven a uint8."""
        values = np.array([0, 128, 255], dtype=np.uint8)

        normalized = normalize_pixels(values)

        assert normalized[0] == -1.0 and normalized[2] == 1.0
        assert np.array_equal(denormalize_pixels(normalized), values)
        assert denormalize_pixels(np.array([-3.0, 3.0])).tolist() == [0, 255]


class TestSynth:
    """Tests de los generadores sintéticos."""

    def test_misma_semilla_corpus_identico(self, tmp_path):
        """Test que la misma semilla produce un corpus idéntico byte a byte."""
        params = CorpusParams(mode="spatial", grid=2, piece_size=8, count=3)
        build_corpus(params, tmp_path / "a", seed=4)
        build_corpus(params, tmp_path / "b", seed=4)

        files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())

        assert files_a == files_b
        for rel in files_a:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_bordes_adyacentes_correlacionan(self):
        """Test que las piezas vecinas encajan mejor que parejas al azar."""
        rng = np.random.default_rng(0)
        adjacent, random_pairs = [], []
        for image in synth_spatial(seed=1, count=20, size=48):
            tiles = image[:, :, 0].astype(np.float64).reshape(3, 16, 3, 16).transpose(0, 2, 1, 3)
            for r in range(3):
                for c in range(2):
                    adjacent.append(np.abs(tiles[r, c][:, -1] - tiles[r, c + 1][:, 0]).mean())
                    a, b = rng.choice(9, size=2, replace=False)
                    ta, tb = tiles[divmod(int(a), 3)], tiles[divmod(int(b), 3)]
                    random_pairs.append(np.abs(ta[:, -1] - tb[:, 0]).mean())

        assert np.mean(adjacent) < np.mean(random_pairs)

    def test_desplazamiento_acotado_entre_frames(self):
        """Test que cada frame está contenido en el anterior dilatado por la velocidad máxima."""
        for seed in range(10):
            video = moving_squares(np.random.default_rng(seed), frames=12, size=16)[..., 0] > 0
            for t in range(video.shape[0] - 1):
                grown = maximum_filter(video[t].astype(np.uint8), size=7) > 0
                assert not np.any(video[t + 1] & ~grown)


class TestCorpus:
    """Tests del corpus en disco."""

    def test_construir_y_recorrer(self, spatial_corpus):
        """Test que el manifiesto, las fuentes y los puzzles se leen de vuelta."""
        manifest = read_manifest(spatial_corpus)
        sources = list(load_corpus(spatial_corpus))
        test = list(iter_puzzles(spatial_corpus, "test"))

        assert len(manifest.samples) == 8
        assert len(sources) == 8
        assert sources[0].data.shape == (8, 8, 1)
        assert len(test) == 2
        assert all(inst.n == 4 for _, inst in test)

    def test_particiones_disjuntas_y_deterministas(self):
        """Test que el conjunto de test es determinista y deja muestras de train."""
        assert split_indices(10, 3, 0.2) == split_indices(10, 3, 0.2)
        assert len(split_indices(10, 3, 0.2)) == 2
        assert split_indices(1, 3, 0.5) == set()

    def test_corpus_temporal_con_ancla(self, temporal_corpus):
        """Test que el corpus temporal conserva el ancla en cada puzzle."""
        puzzles = list(iter_puzzles(temporal_corpus, None))

        assert len(puzzles) == 8
        for _, instance in puzzles:
            assert instance.anchor is True
            assert instance.truth[0] == 0
            assert instance.piece_shape == (1, 6, 6, 1)

    def test_corpus_con_mascara(self, tmp_path):
        """Test que mask_max retiene como mucho la fracción pedida."""
        params = CorpusParams(mode="spatial", grid=3, piece_size=4, count=6, mask_max=0.25)
        build_corpus(params, tmp_path / "m", seed=2)

        for _, instance in iter_puzzles(tmp_path / "m", None):
            assert len(instance.missing) <= 2

    def test_importar_directorio(self, tmp_path):
        """Test que --source dir importa las imágenes de un directorio."""
        source = tmp_path / "in"
        for k in range(3):
            write_pnm(source / f"img{k}.pgm", _ramp(32))
        params = CorpusParams(mode="spatial", source="dir", grid=2, piece_size=16)

        manifest = build_corpus(params, tmp_path / "out", input_dir=source)

        assert len(manifest.samples) == 3

    def test_frames_en_orden_numerico(self, tmp_path):
        """Test que los frames se ordenan por su número, no alfabéticamente."""
        for t in (2, 10, 1):
            write_pnm(tmp_path / f"{t}.pgm", np.full((2, 2), t, dtype=np.uint8))

        frames = load_frames(tmp_path)

        assert frames[:, 0, 0, 0].tolist() == [1, 2, 10]

    def test_frames_de_tamanos_distintos_falla(self, tmp_path):
        """Test que un frame de otro tamaño se rechaza nombrando el archivo."""
        write_pnm(tmp_path / "000.pgm", np.zeros((2, 2), dtype=np.uint8))
        write_pnm(tmp_path / "001.pgm", np.zeros((3, 2), dtype=np.uint8))

        with pytest.raises(CorpusError) as exc_info:
            load_frames(tmp_path)

        assert "001.pgm" in str(exc_info.value)

    def test_fuente_truncada_nombra_el_archivo(self, spatial_corpus):
        """Test que una fuente truncada produce un error con su ruta."""
        record = read_manifest(spatial_corpus).samples[0]
        path = spatial_corpus / record.path
        path.write_bytes(path.read_bytes()[:-5])

        with pytest.raises(CorpusError) as exc_info:
            list(load_corpus(spatial_corpus))

        assert record.path.split("/")[-1] in str(exc_info.value)
        assert exc_info.value.offset is not None

    def test_manifiesto_json_invalido(self, tmp_path):
        """Test que un manifiesto mal formado indica línea y columna."""
        (tmp_path / MANIFEST_NAME).write_text('{"samples": [\n  oops\n]}')

        with pytest.raises(CorpusError) as exc_info:
            read_manifest(tmp_path)

        assert "línea 2" in str(exc_info.value)

    def test_manifiesto_con_particiones_solapadas(self, tmp_path):
        """Test que una muestra en train y test a la vez se rechaza."""
        payload = {
            "params": {"mode": "spatial", "grid": 2},
            "samples": [
                {"path": "sources/a.pgm", "type": "image", "split": "train"},
                {"path": "sources/a.pgm", "type": "image", "split": "test"},
            ],
        }
        (tmp_path / MANIFEST_NAME).write_text(json.dumps(payload))

        with pytest.raises(CorpusError):
            read_manifest(tmp_path)
