"""
Calendario de ruido, corrupción hacia delante y muestreador DDPM inverso.

Las matrices de códigos posicionales (L) y de tokens de contenido ausentes
(E^m) se corrompen con ``sqrt(ᾱ_t)·x0 + sqrt(1-ᾱ_t)·ε`` y se reconstruyen con
pasos ancestrales de varianza fija ``β̃_t``. Las filas ancladas se reponen a
su código limpio tras cada paso.
"""

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Protocol, Sequence

import numpy as np

from app.exceptions import ShapeError
from app.posenc import Layout
from app.schemas.training import ScheduleConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseSchedule:
    """
    Calendario de ruido. ``betas[t-1]`` y ``alpha_bars[t-1]`` corresponden al paso ``t``.
    """

    T: int
    betas: np.ndarray
    alpha_bars: np.ndarray

    def _check(self, t: int) -> int:
        t = int(t)
        if not 1 <= t <= self.T:
            raise ValueError(f"t={t} fuera de rango [1, {self.T}]")
        return t

    def beta(self, t: int) -> float:
        return float(self.betas[self._check(t) - 1])

    def alpha_bar(self, t: int) -> float:
        """``ᾱ_t``, con ``ᾱ_0 = 1``."""
        if int(t) == 0:
            return 1.0
        return float(self.alpha_bars[self._check(t) - 1])

    def alpha_bar_batch(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=np.int64)
        if t.size and (t.min() < 1 or t.max() > self.T):
            raise ValueError(f"t fuera de rango [1, {self.T}]: {t.min()}..{t.max()}")
        return self.alpha_bars[t - 1]


def linear_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 2e-2) -> NoiseSchedule:
    """
    Calendario lineal con extremos incluidos.

    Args:
        T: Número de pasos (≥ 1).
        beta_start: Primer β, ``0 < beta_start < beta_end``.
        beta_end: Último β, ``< 1``.

    Returns:
        NoiseSchedule: Con ``ᾱ`` precalculado.

    Raises:
        ValueError: Si los extremos o T son inválidos.
    """
    if T < 1:
        raise ValueError(f"T debe ser ≥ 1: {T}")
    if not 0.0 < beta_start < beta_end < 1.0:
        raise ValueError(
            f"Extremos inválidos: se requiere 0 < beta_start ({beta_start}) "
            f"< beta_end ({beta_end}) < 1"
        )
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha_bars = np.cumprod(1.0 - betas)
    return NoiseSchedule(T=T, betas=betas, alpha_bars=alpha_bars)


def schedule_from_config(config: ScheduleConfig) -> NoiseSchedule:
    return linear_schedule(config.timesteps, config.beta_start, config.beta_end)


def _coefficients(t, sched: NoiseSchedule, ndim: int) -> tuple[np.ndarray, np.ndarray]:
    if np.ndim(t) == 0:
        ab = np.asarray(sched.alpha_bar(sched._check(t)))
    else:
        ab = sched.alpha_bar_batch(t).reshape((-1,) + (1,) * (ndim - 1))
    return np.sqrt(ab), np.sqrt(1.0 - ab)


def q_sample(L0: np.ndarray, t, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """
    Corrupción en forma cerrada ``sqrt(ᾱ_t)·L0 + sqrt(1-ᾱ_t)·ε``.

    ``t`` puede ser un entero o un arreglo con un paso por elemento del eje 0.
    """
    if L0.shape != eps.shape:
        raise ShapeError(f"q_sample: L0 {L0.shape} y eps {eps.shape} no coinciden")
    signal, noise = _coefficients(t, sched, L0.ndim)
    return (signal * L0 + noise * eps).astype(L0.dtype, copy=False)


class NoisePair(NamedTuple):
    """Ruido (o su estimación) para posiciones y contenido ausente."""

    positions: np.ndarray
    content: np.ndarray | None = None


@dataclass
class DiffusionState:
    """
    Estado de la cadena para un puzzle.

    Attributes:
        positions: ``L_t`` (N × d).
        content: ``E^m_t`` (M × D), una fila por pieza ausente.
        t: Paso actual.
        missing: Filas (índices de presentación) de las piezas ausentes.
        anchor_rows: Filas ancladas.
        anchor_codes: Código limpio de cada fila anclada.
    """

    positions: np.ndarray
    content: np.ndarray
    t: int
    missing: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    anchor_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    anchor_codes: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.missing = np.asarray(self.missing, dtype=np.int64)
        self.anchor_rows = np.asarray(self.anchor_rows, dtype=np.int64)
        if self.content.shape[0] != self.missing.size:
            raise ShapeError(
                f"E^m tiene {self.content.shape[0]} filas para {self.missing.size} piezas ausentes"
            )
        if self.anchor_rows.size:
            if self.anchor_codes is None or self.anchor_codes.shape != (
                self.anchor_rows.size,
                self.positions.shape[1],
            ):
                raise ShapeError("anchor_codes no coincide con anchor_rows")

    def apply_anchors(self) -> None:
        if self.anchor_rows.size:
            self.positions[self.anchor_rows] = self.anchor_codes


@dataclass(frozen=True)
class ReverseStepParams:
    """Media predicha y desviación fija de un paso inverso."""

    mean: np.ndarray
    std: float


def q_sample_masked(
    L0: np.ndarray,
    Em0: np.ndarray,
    t: int,
    eps: NoisePair,
    sched: NoiseSchedule,
    *,
    missing: Sequence[int],
    given: Sequence[int] | None = None,
) -> DiffusionState:
    """
    Corrompe a la vez los códigos posicionales y el contenido ausente.

    Los tokens de las piezas dadas (E^g) no forman parte del estado y quedan
    intactos.

    Raises:
        ValueError: Si los conjuntos de piezas dadas y ausentes se solapan.
        ShapeError: Si las formas no coinciden.
    """
    missing = np.asarray(missing, dtype=np.int64)
    if given is not None:
        overlap = set(np.asarray(given).tolist()) & set(missing.tolist())
        if overlap:
            raise ValueError(f"Índices a la vez dados y ausentes: {sorted(overlap)}")
    if Em0.shape[0] != missing.size:
        raise ShapeError(f"E^m0 tiene {Em0.shape[0]} filas para {missing.size} piezas ausentes")
    content_eps = eps.content if eps.content is not None else np.zeros_like(Em0)
    positions = q_sample(L0, t, eps.positions, sched)
    content = q_sample(Em0, t, content_eps, sched) if missing.size else Em0.copy()
    return DiffusionState(positions=positions, content=content, t=int(t), missing=missing)


def reverse_params(
    x_t: np.ndarray,
    eps_hat: np.ndarray,
    t: int,
    t_prev: int,
    sched: NoiseSchedule,
    clip: float | None = None,
) -> ReverseStepParams:
    """
    Media y desviación de ``p(x_{t_prev} | x_t)`` a partir del ruido estimado.

    Con ``t_prev = t - 1`` es el paso DDPM estándar; con saltos mayores usa
    ``1 - ᾱ_t/ᾱ_{t_prev}`` como β efectivo. Solo lee ``ᾱ`` en ``t`` y ``t_prev``.
    """
    if not 0 <= t_prev < t:
        raise ValueError(f"t_prev={t_prev} debe cumplir 0 ≤ t_prev < t={t}")
    ab_t = sched.alpha_bar(t)
    ab_prev = sched.alpha_bar(t_prev)
    beta_eff = 1.0 - ab_t / ab_prev
    x0 = (x_t - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t)
    if clip is not None:
        x0 = np.clip(x0, -clip, clip)
    coef_x0 = np.sqrt(ab_prev) * beta_eff / (1.0 - ab_t)
    coef_xt = np.sqrt(ab_t / ab_prev) * (1.0 - ab_prev) / (1.0 - ab_t)
    mean = coef_x0 * x0 + coef_xt * x_t
    std = 0.0 if t_prev == 0 else float(np.sqrt(beta_eff * (1.0 - ab_prev) / (1.0 - ab_t)))
    return ReverseStepParams(mean=mean.astype(x_t.dtype, copy=False), std=std)


def ddpm_step(
    state: DiffusionState,
    eps_hat: NoisePair,
    sched: NoiseSchedule,
    rng: np.random.Generator,
    *,
    t_prev: int | None = None,
    clip_positions: bool = False,
) -> DiffusionState:
    """
    Paso ancestral de ``t`` a ``t_prev`` (por defecto ``t - 1``).

    No se inyecta ruido al llegar a 0. Las filas ancladas se reponen a su
    código limpio.

    Args:
        state: Estado en el paso ``t``.
        eps_hat: Ruido estimado para posiciones y contenido ausente.
        sched: Calendario de ruido.
        rng: Generador del puzzle.
        t_prev: Paso destino (muestreo con salto).
        clip_positions: Recorta la estimación de ``L0`` a ``[-1, 1]``. Desactivado
            por defecto: el paso es el ancestral estándar.

    Returns:
        DiffusionState: Nuevo estado en ``t_prev``.
    """
    t = state.t
    t_prev = t - 1 if t_prev is None else t_prev
    if eps_hat.positions.shape != state.positions.shape:
        raise ShapeError(
            f"eps_hat {eps_hat.positions.shape} no coincide con L_t {state.positions.shape}"
        )
    has_content = state.missing.size > 0
    if has_content and (eps_hat.content is None or eps_hat.content.shape != state.content.shape):
        raise ShapeError(f"eps_hat de contenido no coincide con E^m_t {state.content.shape}")

    params = reverse_params(
        state.positions, eps_hat.positions, t, t_prev, sched, clip=1.0 if clip_positions else None
    )
    positions = params.mean
    if params.std > 0:
        positions = positions + params.std * rng.standard_normal(positions.shape).astype(
            positions.dtype
        )
    content = state.content
    if has_content:
        content_params = reverse_params(state.content, eps_hat.content, t, t_prev, sched)
        content = content_params.mean
        if content_params.std > 0:
            content = content + content_params.std * rng.standard_normal(content.shape).astype(
                content.dtype
            )

    new_state = DiffusionState(
        positions=np.array(positions),
        content=np.array(content),
        t=t_prev,
        missing=state.missing,
        anchor_rows=state.anchor_rows,
        anchor_codes=state.anchor_codes,
    )
    new_state.apply_anchors()
    return new_state


# ---------------------------------------------------------------------------
# Inferencia
# ---------------------------------------------------------------------------


class NoisePredictor(Protocol):
    """Interfaz mínima del modelo usada por el muestreador."""

    config: object

    def predict_noise(
        self,
        pieces: np.ndarray,
        positions: np.ndarray,
        t: np.ndarray,
        missing: np.ndarray,
        content: np.ndarray | None,
    ) -> NoisePair: ...


@dataclass
class SolveRequest:
    """Un puzzle a resolver dentro de un lote."""

    pieces: np.ndarray
    missing: np.ndarray
    rng: np.random.Generator
    anchor_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    anchor_codes: np.ndarray | None = None


def puzzle_rng(seed: int, puzzle_id: int = 0) -> np.random.Generator:
    """Flujo aleatorio privado de un puzzle derivado de ``(seed, puzzle_id)``."""
    return np.random.default_rng([int(seed), int(puzzle_id)])


def timestep_sequence(T: int, stride: int = 1) -> list[int]:
    """Pasos visitados por la cadena inversa, de ``T`` hacia 1."""
    if stride < 1:
        raise ValueError(f"stride debe ser ≥ 1: {stride}")
    return list(range(T, 0, -stride))


def run_reverse_chain(
    model: NoisePredictor,
    sched: NoiseSchedule,
    requests: Sequence[SolveRequest],
    stride: int = 1,
    *,
    clip_positions: bool = False,
) -> list[DiffusionState]:
    """
    Ejecuta la cadena inversa completa para un lote de puzzles del mismo tamaño.

    Cada puzzle usa su propio generador, así que el resultado de un puzzle no
    depende de los demás del lote.

    Returns:
        list[DiffusionState]: Estados finales (``t = 0``) en el orden de entrada.
    """
    if not requests:
        return []
    config = model.config
    if getattr(config, "timesteps", sched.T) != sched.T:
        raise ValueError(
            f"El modelo se entrenó con T={config.timesteps} y el calendario tiene T={sched.T}"
        )
    n = requests[0].pieces.shape[0]
    if any(r.pieces.shape != requests[0].pieces.shape for r in requests):
        raise ShapeError("Todos los puzzles del lote deben tener la misma forma")
    pe_dim = config.position_dim
    token_dim = config.token_dim
    if stride > 1:
        logger.warning(f"Muestreo con salto {stride}: {len(timestep_sequence(sched.T, stride))} pasos")

    states = []
    for r in requests:
        missing = np.asarray(r.missing, dtype=np.int64)
        positions = r.rng.standard_normal((n, pe_dim))
        content = (
            r.rng.standard_normal((missing.size, token_dim))
            if missing.size
            else np.zeros((0, token_dim))
        )
        state = DiffusionState(
            positions=positions,
            content=content,
            t=sched.T,
            missing=missing,
            anchor_rows=r.anchor_rows,
            anchor_codes=r.anchor_codes,
        )
        state.apply_anchors()
        states.append(state)

    pieces = np.stack([r.pieces for r in requests])
    missing_mask = np.zeros((len(requests), n), dtype=bool)
    for b, state in enumerate(states):
        missing_mask[b, state.missing] = True
    any_missing = bool(missing_mask.any())

    steps = timestep_sequence(sched.T, stride)
    for i, t in enumerate(steps):
        t_prev = steps[i + 1] if i + 1 < len(steps) else 0
        positions = np.stack([s.positions for s in states])
        content = None
        if any_missing:
            content = np.zeros((len(states), n, token_dim))
            for b, state in enumerate(states):
                content[b, state.missing] = state.content
        estimate = model.predict_noise(
            pieces, positions, np.full(len(states), t, dtype=np.int64), missing_mask, content
        )
        for b, state in enumerate(states):
            content_eps = None
            if state.missing.size:
                content_eps = np.asarray(estimate.content[b][state.missing], dtype=np.float64)
            states[b] = ddpm_step(
                state,
                NoisePair(np.asarray(estimate.positions[b], dtype=np.float64), content_eps),
                sched,
                requests[b].rng,
                t_prev=t_prev,
                clip_positions=clip_positions,
            )
    return states


def solve_positions(
    pieces: np.ndarray,
    layout: Layout,
    model: NoisePredictor,
    sched: NoiseSchedule,
    seed: int,
    stride: int = 1,
    *,
    anchor_rows: Sequence[int] = (),
    anchor_codes: np.ndarray | None = None,
    puzzle_id: int = 0,
    clip_positions: bool = False,
) -> np.ndarray:
    """
    Genera los códigos posicionales de un puzzle completo.

    Args:
        pieces: Contenido de las piezas normalizado a ``[-1, 1]``, ``N × P``.
        layout: Disposición del puzzle.
        model: Modelo entrenado.
        sched: Calendario de ruido.
        seed: Semilla; junto con ``puzzle_id`` fija el flujo aleatorio.
        stride: Salto entre pasos evaluados.
        anchor_rows: Filas con código conocido.
        anchor_codes: Código limpio de cada fila anclada.
        puzzle_id: Identificador del puzzle dentro de la ejecución.
        clip_positions: Recorta ``L̂0`` a ``[-1, 1]`` en cada paso.

    Returns:
        np.ndarray: Estimación ``L̂0`` (N × d).

    Raises:
        ShapeError: Si N no coincide con la disposición.
    """
    estimate, _ = solve_masked(
        pieces,
        0,
        layout,
        model,
        sched,
        seed,
        stride,
        anchor_rows=anchor_rows,
        anchor_codes=anchor_codes,
        puzzle_id=puzzle_id,
        clip_positions=clip_positions,
    )
    return estimate


def solve_masked(
    given_pieces: np.ndarray,
    missing_count: int,
    layout: Layout,
    model: NoisePredictor,
    sched: NoiseSchedule,
    seed: int,
    stride: int = 1,
    *,
    missing_rows: Sequence[int] | None = None,
    anchor_rows: Sequence[int] = (),
    anchor_codes: np.ndarray | None = None,
    puzzle_id: int = 0,
    clip_positions: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Genera a la vez los códigos de todas las piezas y el contenido de las ausentes.

    Las piezas dadas ocupan, en orden, las filas que no están en
    ``missing_rows`` (por defecto, las ausentes son las últimas filas).

    Returns:
        tuple: ``(L̂0 (N × d), tokens generados (M × D))``.

    Raises:
        ValueError: Si ``missing_count`` es negativo o ≥ N.
        ShapeError: Si ``|E^g| + missing_count ≠ N``.
    """
    n = layout.size
    if missing_count < 0 or missing_count >= n:
        raise ValueError(f"missing_count={missing_count} fuera de rango para N={n}")
    if given_pieces.shape[0] + missing_count != n:
        raise ShapeError(
            f"{given_pieces.shape[0]} piezas dadas + {missing_count} ausentes ≠ N={n}"
        )
    if missing_rows is None:
        missing_rows = np.arange(n - missing_count, n)
    missing_rows = np.asarray(missing_rows, dtype=np.int64)
    if missing_rows.size != missing_count:
        raise ShapeError("missing_rows no coincide con missing_count")
    given_rows = np.setdiff1d(np.arange(n), missing_rows)

    pieces = np.zeros((n, given_pieces.shape[1]), dtype=np.float64)
    pieces[given_rows] = given_pieces
    request = SolveRequest(
        pieces=pieces,
        missing=missing_rows,
        rng=puzzle_rng(seed, puzzle_id),
        anchor_rows=np.asarray(anchor_rows, dtype=np.int64),
        anchor_codes=anchor_codes,
    )
    (state,) = run_reverse_chain(
        model, sched, [request], stride, clip_positions=clip_positions
    )
    return state.positions, state.content
