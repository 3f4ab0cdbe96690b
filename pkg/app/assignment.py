"""Emparejamiento de códigos posicionales generados con la tabla de códigos verdaderos."""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist, pdist

from app.exceptions import ShapeError


@dataclass(frozen=True)
class Assignment:
    """
    Asignación pieza → hueco.

    Attributes:
        permutation: ``permutation[i]`` es el hueco asignado a la pieza ``i``.
        costs: Distancia L2 al cuadrado entre el código generado y el del hueco.
    """

    permutation: np.ndarray
    costs: np.ndarray

    @property
    def distances(self) -> np.ndarray:
        return np.sqrt(self.costs)

    @property
    def total_cost(self) -> float:
        return float(np.sum(self.costs))

    def is_bijection(self) -> bool:
        return bool(np.array_equal(np.sort(self.permutation), np.arange(self.permutation.size)))


def _cost_matrix(L_hat: np.ndarray, table: np.ndarray) -> np.ndarray:
    L_hat = np.asarray(L_hat, dtype=np.float64)
    table = np.asarray(table, dtype=np.float64)
    if L_hat.ndim != 2 or table.ndim != 2 or L_hat.shape[0] != table.shape[0]:
        raise ShapeError(
            f"Se requieren N códigos estimados y N verdaderos: {L_hat.shape} vs {table.shape}"
        )
    if L_hat.shape[1] != table.shape[1]:
        raise ShapeError(f"Dimensión de código distinta: {L_hat.shape[1]} vs {table.shape[1]}")
    return cdist(L_hat, table, metric="sqeuclidean")


def _table_codes(table) -> np.ndarray:
    return getattr(table, "codes", table)


def greedy_match(L_hat: np.ndarray, table, *, piece_order: bool = False) -> Assignment:
    """
    Emparejamiento voraz por distancia L2.

    Por defecto es global: se fija repetidamente el par (pieza, hueco) libre
    de menor distancia, con empates resueltos por índice de pieza y después
    de hueco. Con ``piece_order`` cada pieza, en orden de índice, toma su
    hueco libre más cercano.

    Args:
        L_hat: Códigos estimados ``N × d``.
        table: ``PETable`` o matriz ``N × d`` de códigos verdaderos.
        piece_order: Variante voraz en orden fijo de piezas.

    Returns:
        Assignment: Biyección pieza → hueco.

    Raises:
        ShapeError: Si el número de filas no coincide.
    """
    costs = _cost_matrix(L_hat, _table_codes(table))
    n = costs.shape[0]
    permutation = np.full(n, -1, dtype=np.int64)
    slot_used = np.zeros(n, dtype=bool)

    if piece_order:
        for piece in range(n):
            row = np.where(slot_used, np.inf, costs[piece])
            slot = int(np.argmin(row))
            permutation[piece] = slot
            slot_used[slot] = True
    else:
        pieces, slots = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        order = np.lexsort((slots.ravel(), pieces.ravel(), costs.ravel()))
        remaining = n
        for flat in order:
            piece, slot = divmod(int(flat), n)
            if permutation[piece] >= 0 or slot_used[slot]:
                continue
            permutation[piece] = slot
            slot_used[slot] = True
            remaining -= 1
            if remaining == 0:
                break

    return Assignment(permutation=permutation, costs=costs[np.arange(n), permutation])


def hungarian_match(L_hat: np.ndarray, table) -> Assignment:
    """Biyección de coste total (distancia al cuadrado) mínimo."""
    costs = _cost_matrix(L_hat, _table_codes(table))
    rows, cols = linear_sum_assignment(costs)
    permutation = np.empty(costs.shape[0], dtype=np.int64)
    permutation[rows] = cols
    return Assignment(
        permutation=permutation, costs=costs[np.arange(costs.shape[0]), permutation]
    )


def greedy_ordered_match(L_hat: np.ndarray, table) -> Assignment:
    return greedy_match(L_hat, table, piece_order=True)


MATCHERS = {
    "greedy": greedy_match,
    "greedy-ordered": greedy_ordered_match,
    "hungarian": hungarian_match,
}


def match(L_hat: np.ndarray, table, matcher: str = "greedy") -> Assignment:
    """
    Empareja con el método indicado por nombre.

    Raises:
        ValueError: Si el nombre no está en ``MATCHERS``.
    """
    if matcher not in MATCHERS:
        raise ValueError(f"Emparejador desconocido: {matcher} (usa {', '.join(MATCHERS)})")
    return MATCHERS[matcher](L_hat, table)


def noise_tolerance_radius(table) -> float:
    """
    Mitad de la distancia L2 mínima entre filas de la tabla.

    Si cada estimación queda a menos de este radio de su fila verdadera,
    los emparejadores recuperan la permutación. Para N = 1 devuelve ``inf``.
    """
    codes = np.asarray(_table_codes(table), dtype=np.float64)
    if codes.shape[0] < 2:
        return float("inf")
    return float(pdist(codes).min() / 2.0)
