"""Tests para app.assignment."""

import numpy as np
import pytest

from app.assignment import (
    MATCHERS,
    greedy_match,
    hungarian_match,
    match,
    noise_tolerance_radius,
)
from app.exceptions import ShapeError
from app.oracles import assignment_bruteforce, greedy_bruteforce
from app.posenc import Layout, pe_table


@pytest.fixture
def grid_table():
    return pe_table(Layout.grid(3))


class TestGreedy:
    """Tests del emparejamiento voraz."""

    def test_tabla_exacta_da_identidad(self, grid_table):
        """Test que L̂ = tabla da la identidad con distancias nulas."""
        result = greedy_match(grid_table.codes, grid_table)

        assert np.array_equal(result.permutation, np.arange(9))
        assert np.all(result.costs == 0.0)

    def test_tabla_permutada_devuelve_la_permutacion(self, grid_table):
        """Test que filas permutadas por π devuelven exactamente π."""
        perm = np.random.default_rng(0).permutation(9)

        result = greedy_match(grid_table.rows_for(perm), grid_table)

        assert np.array_equal(result.permutation, perm)

    def test_empate_se_resuelve_por_hueco_menor(self):
        """Test que una pieza equidistante de dos huecos toma el de menor índice."""
        table = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 5.0]])
        L_hat = np.array([[0.0, 0.0], [0.0, 0.0], [0.0, 5.0]])

        result = greedy_match(L_hat, table)

        assert result.permutation.tolist() == [0, 1, 2]
        assert result.permutation.tolist() == list(greedy_bruteforce(L_hat, table))

    def test_coincide_con_la_traza_de_referencia(self):
        """Test que el voraz global coincide con la traza explícita en instancias aleatorias."""
        rng = np.random.default_rng(1)
        for _ in range(50):
            n = int(rng.integers(1, 8))
            table = rng.normal(size=(n, 4))
            L_hat = table[rng.permutation(n)] + rng.normal(0, 0.8, size=(n, 4))

            result = greedy_match(L_hat, table)

            assert tuple(result.permutation.tolist()) == greedy_bruteforce(L_hat, table)

    def test_variante_en_orden_de_piezas(self):
        """Test que la variante por orden de piezas puede diferir de la global."""
        table = np.array([[0.0], [1.0]])
        L_hat = np.array([[0.6], [0.9]])

        ordered = greedy_match(L_hat, table, piece_order=True)
        best_first = greedy_match(L_hat, table)

        assert ordered.permutation.tolist() == [1, 0]
        assert best_first.permutation.tolist() == [0, 1]

    def test_filas_distintas_falla(self, grid_table):
        """Test que el número de filas debe coincidir."""
        with pytest.raises(ShapeError):
            greedy_match(grid_table.codes[:5], grid_table)


class TestHungarian:
    """Tests del emparejamiento óptimo."""

    def test_coste_igual_al_minimo_exhaustivo(self):
        """Test que el coste coincide con enumerar las N! permutaciones (N ≤ 7)."""
        rng = np.random.default_rng(2)
        for _ in range(1000):
            n = int(rng.integers(1, 8))
            table = rng.normal(size=(n, 3))
            L_hat = rng.normal(size=(n, 3))

            result = hungarian_match(L_hat, table)
            best_cost, _ = assignment_bruteforce(L_hat, table)

            assert result.total_cost == pytest.approx(best_cost, rel=1e-12, abs=1e-12)

    def test_tabla_exacta_da_identidad(self, grid_table):
        """Test que L̂ = tabla da la identidad."""
        assert np.array_equal(hungarian_match(grid_table.codes, grid_table).permutation, np.arange(9))

    def test_voraz_nunca_mejora_al_optimo(self):
        """Test que el coste voraz es siempre ≥ el coste óptimo."""
        rng = np.random.default_rng(3)
        for _ in range(100):
            n = int(rng.integers(2, 10))
            table, L_hat = rng.normal(size=(2, n, 5))

            assert greedy_match(L_hat, table).total_cost >= hungarian_match(L_hat, table).total_cost - 1e-12


class TestPropiedades:
    """Propiedades comunes a ambos emparejadores."""

    @pytest.mark.parametrize("matcher", sorted(MATCHERS))
    def test_siempre_biyeccion(self, matcher):
        """Test que todos los emparejadores devuelven biyecciones."""
        rng = np.random.default_rng(4)
        for _ in range(50):
            n = int(rng.integers(1, 12))
            result = match(rng.normal(size=(n, 3)), rng.normal(size=(n, 3)), matcher)

            assert result.is_bijection()

    @pytest.mark.parametrize("matcher", ["greedy", "hungarian"])
    def test_equivariancia_del_emparejador(self, matcher):
        """Test que permutar las filas de L̂ permuta el resultado igual."""
        rng = np.random.default_rng(5)
        table = pe_table(Layout.sequence(6)).codes
        L_hat = table[rng.permutation(6)] + rng.normal(0, 0.05, size=table.shape)
        sigma = rng.permutation(6)

        base = match(L_hat, table, matcher).permutation
        permuted = match(L_hat[sigma], table, matcher).permutation

        assert np.array_equal(permuted, base[sigma])

    @pytest.mark.parametrize("matcher", sorted(MATCHERS))
    def test_perturbacion_bajo_el_radio_recupera_la_solucion(self, matcher, grid_table):
        """Test que perturbar cada fila menos del radio conserva la solución."""
        rng = np.random.default_rng(6)
        radius = noise_tolerance_radius(grid_table)
        for _ in range(20):
            perm = rng.permutation(9)
            direction = rng.normal(size=(9, 32))
            direction /= np.linalg.norm(direction, axis=1, keepdims=True)
            L_hat = grid_table.rows_for(perm) + 0.9 * radius * direction

            assert np.array_equal(match(L_hat, grid_table, matcher).permutation, perm)

    def test_emparejador_desconocido_falla(self, grid_table):
        """Test que un nombre de emparejador desconocido se rechaza."""
        with pytest.raises(ValueError):
            match(grid_table.codes, grid_table, "simplex")


class TestRadio:
    """Tests del radio de tolerancia."""

    def test_dos_filas_a_distancia_dos(self):
        """Test que dos filas a distancia 2 dan radio 1."""
        assert noise_tolerance_radius(np.array([[0.0, 0.0], [2.0, 0.0]])) == pytest.approx(1.0)

    def test_rejilla_tiene_radio_positivo(self, grid_table):
        """Test que la tabla 3×3 tiene radio positivo."""
        assert noise_tolerance_radius(grid_table) > 0.0

    def test_una_fila_es_infinito(self):
        """Test que N = 1 devuelve infinito."""
        assert noise_tolerance_radius(np.zeros((1, 16))) == float("inf")


class TestRegistro:
    """Tests del registro de emparejadores por nombre."""

    def test_variante_ordenada_registrada(self):
        """Test que 'greedy-ordered' aplica la variante por orden de piezas."""
        table = np.array([[0.0], [1.0]])
        L_hat = np.array([[0.6], [0.9]])

        assert match(L_hat, table, "greedy-ordered").permutation.tolist() == [1, 0]
        assert sorted(MATCHERS) == ["greedy", "greedy-ordered", "hungarian"]
