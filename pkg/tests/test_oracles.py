"""Tests para app.oracles (las referencias también se verifican)."""

import numpy as np
import pytest

from app.oracles import (
    OracleDenoiser,
    alpha_bar_reference,
    assignment_bruteforce,
    finite_diff,
    forward_noise_stats,
    kendall_bruteforce,
)


class TestReferencias:
    """Tests de las referencias de fuerza bruta."""

    def test_finite_diff_de_un_cuadrado(self):
        """Test que d/dx Σx² = 2x y que los arreglos quedan intactos."""
        x = np.array([1.0, -2.0, 0.5])

        grads = finite_diff(lambda: float(np.sum(x**2)), {"x": x})

        assert np.allclose(grads["x"], 2 * x, atol=1e-8)
        assert x.tolist() == [1.0, -2.0, 0.5]

    def test_enumeracion_limitada(self):
        """Test que la enumeración exhaustiva rechaza N > 7."""
        with pytest.raises(ValueError):
            assignment_bruteforce(np.zeros((8, 2)), np.zeros((8, 2)))

    def test_enumeracion_elige_la_menor_lexicografica(self):
        """Test que con costes iguales gana la permutación lexicográficamente menor."""
        cost, perm = assignment_bruteforce(np.zeros((3, 1)), np.zeros((3, 1)))

        assert cost == 0.0
        assert perm == (0, 1, 2)

    def test_kendall_limitado(self):
        """Test que el oráculo de Kendall rechaza N > 64."""
        with pytest.raises(ValueError):
            kendall_bruteforce(range(65), range(65))

    def test_alpha_bar_producto(self):
        """Test del producto explícito."""
        assert alpha_bar_reference([0.5, 0.5], 2) == 0.25
        assert alpha_bar_reference([0.5, 0.5], 0) == 1.0

    def test_estadisticas_exigen_muestras(self, short_schedule):
        """Test que se exigen al menos 10⁴ muestras."""
        with pytest.raises(ValueError):
            forward_noise_stats(np.zeros(2), 1, short_schedule, draws=100)


class TestOracleDenoiser:
    """Tests del sustituto exacto del modelo."""

    def test_devuelve_el_ruido_restante(self, short_schedule):
        """Test que la predicción coincide con el ε usado para ensuciar."""
        rng = np.random.default_rng(0)
        pieces = rng.uniform(-1, 1, size=(3, 4))
        L0 = rng.standard_normal((3, 16))
        eps = rng.standard_normal((3, 16))
        ab = short_schedule.alpha_bar(7)
        noisy = np.sqrt(ab) * L0 + np.sqrt(1 - ab) * eps
        oracle = OracleDenoiser(short_schedule, position_dim=16)
        oracle.register(pieces, L0)

        pair = oracle.predict_noise(pieces[None], noisy[None], np.array([7]), None, None)

        assert np.allclose(pair.positions[0], eps, atol=1e-10)
        assert pair.content is None

    def test_puzzle_no_registrado(self, short_schedule):
        """Test que un puzzle desconocido produce KeyError."""
        oracle = OracleDenoiser(short_schedule, position_dim=16)

        with pytest.raises(KeyError):
            oracle.predict_noise(np.zeros((1, 2, 4)), np.zeros((1, 2, 16)), np.array([1]), None, None)
