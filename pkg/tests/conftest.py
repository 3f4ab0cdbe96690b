"""Configuración compartida para tests."""

import os

import numpy as np
import pytest

from app.diffusion import linear_schedule
from app.models.denoiser import Denoiser
from app.puzzlekit.corpus import build_corpus
from app.schemas.corpus import CorpusParams
from app.schemas.training import DenoiserConfig, ExperimentConfig

TINY_T = 20


def pytest_collection_modifyitems(config, items):
    """Omite los benchmarks de escritorio salvo con JPDVT_RUN_BENCHMARKS=1."""
    if os.environ.get("JPDVT_RUN_BENCHMARKS") == "1":
        return
    skip = pytest.mark.skip(reason="Benchmark de escritorio: exporta JPDVT_RUN_BENCHMARKS=1")
    for item in items:
        if "benchmark" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rel_error():
    """Error relativo máximo entre dos arreglos."""

    def compute(a, b) -> float:
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-8)
        return float(np.abs(a - b).max(initial=0.0) / scale)

    return compute


@pytest.fixture
def randomize():
    """Sustituye todos los pesos (incluidos los inicializados a cero) por valores aleatorios."""

    def apply(model, seed: int = 0, std: float = 0.3):
        rng = np.random.default_rng(seed)
        for param in model.parameters():
            param.data[...] = rng.normal(0.0, std, size=param.shape)
        return model

    return apply


@pytest.fixture
def short_schedule():
    """Calendario lineal corto para cadenas rápidas."""
    return linear_schedule(TINY_T)


@pytest.fixture
def tiny_spatial_config() -> DenoiserConfig:
    """Modelo espacial de 4 tokens (rejilla 2×2 de piezas 2×2) en doble precisión."""
    return DenoiserConfig(
        modality="spatial",
        layers=1,
        hidden=8,
        heads=2,
        piece_shape=(1, 2, 2, 1),
        time_freq_dim=4,
        timesteps=TINY_T,
        dtype="float64",
    )


@pytest.fixture
def tiny_masked_config() -> DenoiserConfig:
    """Modelo temporal enmascarado con decodificador, clips de 1 frame de 3×3."""
    return DenoiserConfig(
        modality="temporal",
        layers=1,
        hidden=8,
        heads=2,
        token_width=6,
        piece_shape=(1, 3, 3, 1),
        time_freq_dim=4,
        timesteps=TINY_T,
        masked=True,
        decoder=True,
        dtype="float64",
    )


@pytest.fixture
def tiny_model(tiny_spatial_config) -> Denoiser:
    return Denoiser(tiny_spatial_config, seed=3)


@pytest.fixture
def spatial_corpus(tmp_path):
    """Corpus espacial 2×2 sin hueco con piezas de 4 píxeles."""
    out = tmp_path / "spatial"
    build_corpus(
        CorpusParams(mode="spatial", grid=2, piece_size=4, count=8), out, seed=5, test_fraction=0.25
    )
    return out


@pytest.fixture
def temporal_corpus(tmp_path):
    """Corpus temporal de 6 frames de 6×6 con la primera pieza anclada."""
    out = tmp_path / "temporal"
    build_corpus(
        CorpusParams(
            mode="temporal", piece_len=1, frames=6, frame_size=6, anchor=True, count=8
        ),
        out,
        seed=5,
        test_fraction=0.25,
    )
    return out


@pytest.fixture
def tiny_experiment() -> ExperimentConfig:
    """Experimento espacial mínimo (pocos pasos, doble precisión)."""
    return ExperimentConfig(
        modality="spatial",
        layers=1,
        hidden=8,
        heads=2,
        time_freq_dim=4,
        timesteps=TINY_T,
        dtype="float64",
        batch_size=3,
        steps=4,
        lr=1e-3,
        checkpoint_every=2,
        seed=1,
    )
