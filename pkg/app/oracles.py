"""
Referencias de fuerza bruta para verificar las implementaciones.

Este módulo no importa ``app.metrics`` ni ``app.assignment``: cada referencia
se calcula con bucles explícitos. La lista de revisión está en
``docs/ORACLES.md``.
"""

import itertools
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from app.diffusion import NoisePair, NoiseSchedule, q_sample

MAX_ENUMERATION_N = 7
MAX_KENDALL_N = 64


def kendall_bruteforce(sigma1, sigma2) -> float:
    """Pares no ordenados en desacuerdo entre dos ordenaciones, normalizado."""
    a = [int(v) for v in sigma1]
    b = [int(v) for v in sigma2]
    n = len(a)
    if n != len(b) or n > MAX_KENDALL_N:
        raise ValueError(f"Entradas no válidas para el oráculo de Kendall (N={n})")
    if n < 2:
        return 0.0
    disagreements = 0
    for i in range(n):
        for j in range(i + 1, n):
            if (a[i] - a[j]) * (b[i] - b[j]) < 0:
                disagreements += 1
    return disagreements / (n * (n - 1) / 2)


def _squared_distance(u, v) -> float:
    total = 0.0
    for x, y in zip(u, v):
        total += (float(x) - float(y)) ** 2
    return total


def assignment_bruteforce(L_hat, table) -> tuple[float, tuple[int, ...]]:
    """
    Recorre las N! permutaciones y devuelve la de menor coste total.

    En caso de empate gana la permutación lexicográficamente menor.

    Raises:
        ValueError: Si N supera el límite de enumeración.
    """
    L_hat = np.asarray(L_hat, dtype=np.float64)
    table = np.asarray(getattr(table, "codes", table), dtype=np.float64)
    n = L_hat.shape[0]
    if n > MAX_ENUMERATION_N:
        raise ValueError(f"N={n} supera el límite de enumeración ({MAX_ENUMERATION_N})")
    pair = [[_squared_distance(L_hat[i], table[j]) for j in range(n)] for i in range(n)]
    best_cost = float("inf")
    best: tuple[int, ...] = ()
    for perm in itertools.permutations(range(n)):
        cost = 0.0
        for i, j in enumerate(perm):
            cost += pair[i][j]
        if cost < best_cost:
            best_cost, best = cost, perm
    return best_cost, best


def greedy_bruteforce(L_hat, table) -> tuple[int, ...]:
    """Traza voraz global recalculando el mínimo sobre todos los pares libres en cada paso."""
    L_hat = np.asarray(L_hat, dtype=np.float64)
    table = np.asarray(getattr(table, "codes", table), dtype=np.float64)
    n = L_hat.shape[0]
    result = [-1] * n
    free_pieces = set(range(n))
    free_slots = set(range(n))
    while free_pieces:
        candidates = [
            (_squared_distance(L_hat[i], table[j]), i, j)
            for i in sorted(free_pieces)
            for j in sorted(free_slots)
        ]
        _, piece, slot = min(candidates)
        result[piece] = slot
        free_pieces.remove(piece)
        free_slots.remove(slot)
    return tuple(result)


def finite_diff(
    fn: Callable[[], float],
    params: Mapping[str, np.ndarray],
    h: float = 1e-5,
) -> dict[str, np.ndarray]:
    """
    Gradiente numérico por diferencias centrales.

    ``fn`` se evalúa sin argumentos y lee los arreglos de ``params``, que se
    perturban en sitio coordenada a coordenada y se restauran al terminar.
    """
    grads = {}
    for name, array in params.items():
        grad = np.zeros_like(array, dtype=np.float64)
        flat = array.reshape(-1)
        for k in range(flat.size):
            original = flat[k]
            flat[k] = original + h
            upper = float(fn())
            flat[k] = original - h
            lower = float(fn())
            flat[k] = original
            grad.reshape(-1)[k] = (upper - lower) / (2.0 * h)
        grads[name] = grad
    return grads


def alpha_bar_reference(betas, t: int) -> float:
    """Producto explícito ``Π_{s≤t} (1 - β_s)``."""
    product = 1.0
    for s in range(t):
        product *= 1.0 - float(betas[s])
    return product


@dataclass(frozen=True)
class NoiseStats:
    mean: np.ndarray
    std: np.ndarray


def forward_noise_stats(
    L0: np.ndarray, t: int, sched: NoiseSchedule, draws: int = 100_000, seed: int = 0
) -> NoiseStats:
    """Media y desviación empíricas de ``q_sample`` sobre ``draws`` muestras."""
    if draws < 10_000:
        raise ValueError(f"Se requieren al menos 10⁴ muestras: {draws}")
    rng = np.random.default_rng(seed)
    L0 = np.asarray(L0, dtype=np.float64)
    batch = np.broadcast_to(L0, (draws,) + L0.shape)
    samples = q_sample(batch, t, rng.standard_normal(batch.shape), sched)
    return NoiseStats(mean=samples.mean(axis=0), std=samples.std(axis=0))


def forward_chain_stats(
    L0: np.ndarray, t: int, sched: NoiseSchedule, draws: int = 100_000, seed: int = 0
) -> NoiseStats:
    """Estadísticas tras aplicar ``t`` transiciones ``q(L_s | L_{s-1})`` una a una."""
    rng = np.random.default_rng(seed)
    x = np.broadcast_to(np.asarray(L0, dtype=np.float64), (draws,) + np.shape(L0)).copy()
    for s in range(t):
        beta = float(sched.betas[s])
        x = np.sqrt(1.0 - beta) * x + np.sqrt(beta) * rng.standard_normal(x.shape)
    return NoiseStats(mean=x.mean(axis=0), std=x.std(axis=0))


@dataclass(frozen=True)
class OracleConfig:
    position_dim: int
    token_dim: int
    timesteps: int
    masked: bool = False


class OracleDenoiser:
    """
    Sustituto del modelo que devuelve el ruido restante exacto de puzzles conocidos.

    Los puzzles se identifican por los bytes de su contenido tal como lo ve el
    solucionador.
    """

    def __init__(self, sched: NoiseSchedule, position_dim: int, token_dim: int = 1) -> None:
        self.sched = sched
        self.config = OracleConfig(position_dim, token_dim, sched.T, masked=True)
        self._known: dict[bytes, tuple[np.ndarray, np.ndarray | None]] = {}

    def register(
        self, pieces: np.ndarray, L0: np.ndarray, content: np.ndarray | None = None
    ) -> None:
        key = np.ascontiguousarray(pieces, dtype=np.float64).tobytes()
        self._known[key] = (np.asarray(L0, dtype=np.float64), content)

    def _remaining(self, x_t: np.ndarray, x0: np.ndarray, t: int) -> np.ndarray:
        ab = self.sched.alpha_bar(t)
        return (x_t - np.sqrt(ab) * x0) / np.sqrt(1.0 - ab)

    def predict_noise(self, pieces, positions, t, missing, content) -> NoisePair:
        eps_pos = np.zeros_like(positions, dtype=np.float64)
        eps_content = None if content is None else np.zeros_like(content, dtype=np.float64)
        for b in range(positions.shape[0]):
            key = np.ascontiguousarray(pieces[b], dtype=np.float64).tobytes()
            if key not in self._known:
                raise KeyError("Puzzle no registrado en el oráculo")
            L0, clean_content = self._known[key]
            eps_pos[b] = self._remaining(positions[b], L0, int(t[b]))
            if eps_content is not None and clean_content is not None:
                eps_content[b] = self._remaining(content[b], clean_content, int(t[b]))
        return NoisePair(eps_pos, eps_content)
