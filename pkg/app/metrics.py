"""Métricas de evaluación: distancia de Kendall normalizada y precisiones por pieza y puzzle."""

from typing import Sequence

import numpy as np


def _as_permutation(values, label: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.int64).reshape(-1)
    if not np.array_equal(np.sort(arr), np.arange(arr.size)):
        raise ValueError(f"{label} no es una biyección sobre 0..{arr.size - 1}: {arr.tolist()}")
    return arr


def count_inversions(sequence: Sequence[int]) -> int:
    """Número de pares ``i < j`` con ``sequence[i] > sequence[j]`` (merge sort, O(N log N))."""
    values = list(sequence)
    inversions = 0
    width = 1
    while width < len(values):
        merged: list[int] = []
        for start in range(0, len(values), 2 * width):
            left = values[start : start + width]
            right = values[start + width : start + 2 * width]
            i = j = 0
            while i < len(left) and j < len(right):
                if right[j] < left[i]:
                    # Todo lo que queda a la izquierda es mayor que right[j]
                    inversions += len(left) - i
                    merged.append(right[j])
                    j += 1
                else:
                    merged.append(left[i])
                    i += 1
            merged.extend(left[i:])
            merged.extend(right[j:])
        values = merged
        width *= 2
    return inversions


def kendall_normalized(predicted: Sequence[int], truth: Sequence[int]) -> float:
    """
    Distancia de Kendall (burbuja) normalizada entre dos ordenaciones.

    Cuenta los pares no ordenados ``{i, j}`` cuyo orden relativo difiere y lo
    divide entre ``N(N-1)/2``. 0 es coincidencia total y 1 orden inverso.

    Args:
        predicted: Ordenación predicha (biyección sobre ``0..N-1``).
        truth: Ordenación verdadera.

    Returns:
        float: Valor en ``[0, 1]``; 0.0 si N < 2.

    Raises:
        ValueError: Si alguna entrada no es una biyección o las longitudes difieren.
    """
    sigma1 = _as_permutation(predicted, "predicted")
    sigma2 = _as_permutation(truth, "truth")
    if sigma1.size != sigma2.size:
        raise ValueError(f"Longitudes distintas: {sigma1.size} y {sigma2.size}")
    n = sigma1.size
    if n < 2:
        return 0.0
    discordant = count_inversions(sigma1[np.argsort(sigma2)].tolist())
    return discordant / (n * (n - 1) / 2)


def _check_lengths(assignments: Sequence, truths: Sequence) -> None:
    if len(assignments) != len(truths):
        raise ValueError(
            f"Número de asignaciones ({len(assignments)}) y de soluciones ({len(truths)}) distinto"
        )


def _correct(assignment, truth) -> np.ndarray:
    pred = np.asarray(getattr(assignment, "permutation", assignment)).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    if pred.size != truth.size:
        raise ValueError(f"Puzzle con {pred.size} piezas asignadas y {truth.size} en la solución")
    return pred == truth


def piece_accuracy(
    assignments: Sequence,
    truths: Sequence,
    include: Sequence[np.ndarray] | None = None,
) -> float:
    """
    Proporción de piezas colocadas en su hueco correcto.

    Args:
        assignments: Permutaciones (o ``Assignment``) por puzzle.
        truths: Permutación verdadera por puzzle.
        include: Máscara booleana opcional por puzzle; solo cuentan las
            piezas marcadas (p. ej. únicamente las piezas dadas).

    Returns:
        float: ``Σ correctas / Σ piezas``.

    Raises:
        ValueError: Si las longitudes no coinciden o no hay piezas.
    """
    _check_lengths(assignments, truths)
    correct = total = 0
    for k, (assignment, truth) in enumerate(zip(assignments, truths)):
        hits = _correct(assignment, truth)
        if include is not None:
            hits = hits[np.asarray(include[k], dtype=bool)]
        correct += int(hits.sum())
        total += hits.size
    if total == 0:
        raise ValueError("No hay piezas que evaluar")
    return correct / total


def puzzle_accuracy(assignments: Sequence, truths: Sequence) -> float:
    """Proporción de puzzles con todas las piezas en su hueco correcto."""
    _check_lengths(assignments, truths)
    if not assignments:
        raise ValueError("No hay puzzles que evaluar")
    perfect = sum(bool(_correct(a, t).all()) for a, t in zip(assignments, truths))
    return perfect / len(assignments)
