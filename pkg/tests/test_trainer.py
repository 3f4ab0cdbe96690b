"""Tests para app.trainer."""

import logging

import numpy as np
import pytest

from app import tensorlab as tl
from app.checkpoint import load
from app.exceptions import ConfigMismatchError, CorpusError, NumericError, UsageError
from app.models.denoiser import Denoiser, DenoiserOutput
from app.schemas.results import LOSS_CSV_HEADER
from app.schemas.training import ExperimentConfig
from app.storage import read_csv
from app.trainer import PuzzleBatch, Trainer, combine_masked, loss_masked, loss_plain, train


class _EchoModel:
    """Predictor que devuelve siempre el tensor fijado en ``output``."""

    def __init__(self, output: np.ndarray) -> None:
        self.output = output

    def forward(self, pieces, noisy_pe, t, missing=None, content=None, **kwargs):
        return DenoiserOutput(positions=tl.as_tensor(self.output))


def _batch(rng, batch=2, n=4, pixels=4, dim=32, missing=None):
    return PuzzleBatch(
        pieces=rng.uniform(-1, 1, size=(batch, n, pixels)),
        targets=rng.standard_normal((batch, n, dim)),
        missing=np.zeros((batch, n), dtype=bool) if missing is None else missing,
        anchors=np.zeros((batch, n), dtype=bool),
    )


class TestPerdidas:
    """Tests de las funciones de pérdida."""

    def test_predictor_perfecto_da_cero(self, short_schedule):
        """Test que predecir exactamente ε da pérdida 0."""
        rng = np.random.default_rng(0)
        batch = _batch(rng)
        eps = rng.standard_normal(batch.targets.shape)

        loss = loss_plain(batch, _EchoModel(eps), short_schedule, rng, t=[4, 9], eps=eps)

        assert loss.item() == 0.0

    def test_predictor_nulo_da_uno(self, short_schedule):
        """Test que predecir cero da una pérdida ≈ 1 (varianza de ε)."""
        rng = np.random.default_rng(1)
        batch = _batch(rng, batch=64, n=9)

        loss = loss_plain(batch, _EchoModel(np.zeros((64, 9, 32))), short_schedule, rng)

        assert loss.item() == pytest.approx(1.0, abs=0.05)

    def test_filas_ancladas_no_cuentan(self, short_schedule):
        """Test que un error solo en filas ancladas no aporta pérdida."""
        rng = np.random.default_rng(2)
        batch = _batch(rng)
        batch.anchors[:, 0] = True
        eps = rng.standard_normal(batch.targets.shape)
        wrong = eps.copy()
        wrong[:, 0] += 10.0

        loss = loss_plain(batch, _EchoModel(wrong), short_schedule, rng, t=[1, 2], eps=eps)

        assert loss.item() == 0.0

    def test_invariante_a_la_permutacion_de_piezas(self, tiny_model, randomize, short_schedule):
        """Test que permutar piezas, objetivos y ruido no cambia la pérdida."""
        randomize(tiny_model, seed=6)
        rng = np.random.default_rng(3)
        batch = _batch(rng)
        eps = rng.standard_normal(batch.targets.shape)
        sigma = rng.permutation(4)
        permuted = PuzzleBatch(
            pieces=batch.pieces[:, sigma],
            targets=batch.targets[:, sigma],
            missing=batch.missing[:, sigma],
            anchors=batch.anchors[:, sigma],
        )

        base = loss_plain(batch, tiny_model, short_schedule, rng, t=[5, 11], eps=eps)
        moved = loss_plain(permuted, tiny_model, short_schedule, rng, t=[5, 11], eps=eps[:, sigma])

        assert moved.item() == pytest.approx(base.item(), rel=1e-10)

    def test_combinacion_ponderada(self):
        """Test de la combinación 0.8 · contenido + 0.2 · posición."""
        assert combine_masked(1.0, 1.0) == pytest.approx(1.0)
        assert combine_masked(2.0, 0.5) == pytest.approx(1.7)

    def test_sin_piezas_ausentes_usa_solo_posicion(self, tiny_masked_config, short_schedule, caplog):
        """Test que un lote enmascarado sin ausentes equivale a la pérdida simple y avisa."""
        model = Denoiser(tiny_masked_config, seed=2)
        rng = np.random.default_rng(4)
        batch = _batch(rng, pixels=9, dim=16)
        eps = rng.standard_normal(batch.targets.shape)

        with caplog.at_level(logging.WARNING, logger="app.trainer"):
            masked = loss_masked(batch, model, short_schedule, rng, t=[3, 8], eps=eps)
        plain = loss_plain(batch, model, short_schedule, rng, t=[3, 8], eps=eps)

        assert masked.item() == plain.item()
        assert "sin piezas ausentes" in caplog.text

    def test_lote_vacio_falla(self, short_schedule):
        """Test que un lote vacío se rechaza."""
        rng = np.random.default_rng(5)
        batch = _batch(rng, batch=0)

        with pytest.raises(ValueError):
            loss_plain(batch, _EchoModel(np.zeros((0, 4, 32))), short_schedule, rng)


class TestTrainer:
    """Tests del bucle de entrenamiento."""

    def test_cero_pasos_devuelve_la_inicializacion(self, tiny_experiment, spatial_corpus):
        """Test que un presupuesto cero emite el estado inicial."""
        experiment = tiny_experiment.model_copy(update={"steps": 0})

        checkpoints = list(train(experiment, spatial_corpus))

        assert len(checkpoints) == 1
        initial = Denoiser(checkpoints[0].config, seed=experiment.seed).state()
        assert checkpoints[0].step == 0
        for name, value in initial.items():
            assert np.array_equal(checkpoints[0].params[name], value)

    def test_misma_semilla_mismos_pesos(self, tiny_experiment, spatial_corpus):
        """Test que dos ejecuciones con la misma semilla coinciden exactamente."""
        first = list(train(tiny_experiment, spatial_corpus))[-1]
        second = list(train(tiny_experiment, spatial_corpus))[-1]

        assert first.step == second.step == 4
        for name, value in first.params.items():
            assert np.array_equal(second.params[name], value)

    def test_los_pesos_cambian(self, tiny_experiment, spatial_corpus):
        """Test que entrenar modifica los pesos iniciales."""
        checkpoints = list(train(tiny_experiment, spatial_corpus))

        initial = Denoiser(checkpoints[-1].config, seed=tiny_experiment.seed).state()
        assert any(
            not np.array_equal(initial[name], value)
            for name, value in checkpoints[-1].params.items()
        )

    def test_checkpoints_y_registro_de_perdida(self, tiny_experiment, spatial_corpus, tmp_path):
        """Test que se escriben los checkpoints periódicos y loss.csv."""
        out = tmp_path / "run"

        checkpoints = list(train(tiny_experiment, spatial_corpus, out))

        assert [c.step for c in checkpoints] == [2, 4]
        assert (out / "ckpt_000002.bin").exists()
        assert (out / "ckpt_000004.bin").exists()
        rows = read_csv(out / "loss.csv", LOSS_CSV_HEADER)
        assert [row[0] for row in rows] == ["1", "2", "3", "4"]
        assert all(np.isfinite(float(row[1])) for row in rows)

    def test_reanudar_equivale_a_no_interrumpir(self, tiny_experiment, spatial_corpus, tmp_path):
        """Test que reanudar desde el paso 2 reproduce bit a bit el paso 4."""
        # Los checkpoints guardan float32: solo esa precisión se reanuda sin pérdidas
        experiment = tiny_experiment.model_copy(update={"dtype": "float32"})
        full = list(train(experiment, spatial_corpus, tmp_path / "full"))[-1]

        resume = load(tmp_path / "full" / "ckpt_000002.bin")
        resumed = list(train(experiment, spatial_corpus, tmp_path / "resumed", resume))[-1]

        assert resumed.step == full.step == 4
        assert resumed.adam.step == full.adam.step
        for name, value in full.params.items():
            assert np.array_equal(resumed.params[name], value)
        for name, value in full.adam.m.items():
            assert np.array_equal(resumed.adam.m[name], value)
        full_rows = read_csv(tmp_path / "full" / "loss.csv", LOSS_CSV_HEADER)
        resumed_rows = read_csv(tmp_path / "resumed" / "loss.csv", LOSS_CSV_HEADER)
        assert [r[:2] for r in resumed_rows] == [r[:2] for r in full_rows[2:]]

    def test_reanudar_con_otra_configuracion_falla(self, tiny_experiment, spatial_corpus):
        """Test que un checkpoint de otro modelo se rechaza."""
        resume = list(train(tiny_experiment.model_copy(update={"steps": 0}), spatial_corpus))[0]
        other = tiny_experiment.model_copy(update={"hidden": 4})

        with pytest.raises(ConfigMismatchError):
            Trainer(other, spatial_corpus, resume=resume)

    def test_perdida_no_finita_guarda_el_ultimo_estado(
        self, tiny_experiment, spatial_corpus, tmp_path, mocker
    ):
        """Test que una pérdida NaN detiene el entrenamiento conservando el último checkpoint."""
        original = Trainer.loss

        def diverge(self, batch, rng):
            if self.step >= 3:
                return tl.as_tensor(np.array(np.nan))
            return original(self, batch, rng)

        mocker.patch.object(Trainer, "loss", new=diverge)
        out = tmp_path / "run"

        with pytest.raises(NumericError) as exc_info:
            list(train(tiny_experiment, spatial_corpus, out))

        assert exc_info.value.exit_code == 3
        assert exc_info.value.last_checkpoint == out / "ckpt_000003.bin"
        assert load(out / "ckpt_000003.bin").step == 3
        rows = read_csv(out / "loss.csv", LOSS_CSV_HEADER)
        assert [row[0] for row in rows] == ["1", "2", "3"]

    def test_temporal_enmascarado(self, temporal_corpus):
        """Test de un entrenamiento temporal enmascarado corto."""
        experiment = ExperimentConfig(
            modality="temporal",
            layers=1,
            hidden=8,
            heads=2,
            time_freq_dim=4,
            timesteps=20,
            masked=True,
            dtype="float64",
            batch_size=2,
            steps=2,
            checkpoint_every=2,
            seed=4,
        )

        final = list(train(experiment, temporal_corpus))[-1]

        assert final.config.masked and final.config.decoder
        assert final.config.anchored
        assert final.step == 2

    def test_modalidad_distinta_del_corpus_falla(self, tiny_experiment, temporal_corpus):
        """Test que un experimento espacial sobre un corpus temporal se rechaza al crear el Trainer."""
        with pytest.raises(UsageError) as exc_info:
            Trainer(tiny_experiment, temporal_corpus)

        assert exc_info.value.exit_code == 2
        assert "experimento es spatial" in str(exc_info.value)
        assert str(exc_info.value).endswith("es temporal")

    def test_corpus_inexistente_falla(self, tiny_experiment, tmp_path):
        """Test que un corpus inexistente produce CorpusError."""
        with pytest.raises(CorpusError):
            Trainer(tiny_experiment, tmp_path / "nada")
