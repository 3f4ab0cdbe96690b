"""
Canal de inferencia: resolver puzzles, emparejar códigos y medir resultados.

Comparte el muestreador de ``app.diffusion`` entre ``solve``, ``eval``,
``superres`` y la evaluación periódica del entrenamiento.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from app.assignment import Assignment, hungarian_match, match
from app.config import settings
from app.diffusion import NoiseSchedule, SolveRequest, puzzle_rng, run_reverse_chain
from app.exceptions import ShapeError, UsageError
from app.metrics import kendall_normalized, piece_accuracy, puzzle_accuracy
from app.posenc import Layout, pe_table
from app.puzzlekit.instances import PuzzleInstance, apply_mask, denormalize_pixels
from app.schemas.results import EvalRow, SolveReport

logger = logging.getLogger(__name__)

DEFAULT_CHUNK = 16


@dataclass
class SolveResult:
    """
    Resultado de resolver un puzzle.

    Attributes:
        assignment: Asignación pieza → hueco.
        positions: Códigos generados ``L̂0``.
        generated_tokens: Tokens de contenido generados por fila ausente.
        generated_pixels: Píxeles decodificados por índice de presentación ausente.
        kendall: Distancia de Kendall normalizada frente a la solución.
        correct: Máscara de piezas bien colocadas.
    """

    assignment: Assignment
    positions: np.ndarray
    generated_tokens: dict[int, np.ndarray] = field(default_factory=dict)
    generated_pixels: dict[int, np.ndarray] = field(default_factory=dict)
    kendall: float = 0.0
    correct: np.ndarray | None = None

    def report(self, missing_files: Sequence[str] = ()) -> SolveReport:
        return SolveReport(
            permutation=self.assignment.permutation.tolist(),
            distances=[float(d) for d in self.assignment.distances],
            missing_generated=list(missing_files),
            kendall=self.kendall,
            correct_pieces=int(self.correct.sum()) if self.correct is not None else 0,
        )


def _request(instance: PuzzleInstance, seed: int, puzzle_id: int, model) -> SolveRequest:
    if instance.missing and not getattr(model.config, "masked", False):
        raise UsageError("El puzzle tiene piezas ausentes y el modelo no es enmascarado")
    anchor_rows = instance.anchor_rows
    anchor_codes = None
    if anchor_rows.size:
        # El ancla ocupa el hueco 0 por construcción
        anchor_codes = pe_table(instance.layout).codes[:1]
    return SolveRequest(
        pieces=instance.solver_view(),
        missing=np.asarray(instance.missing, dtype=np.int64),
        rng=puzzle_rng(seed, puzzle_id),
        anchor_rows=anchor_rows,
        anchor_codes=anchor_codes,
    )


def _finish(instance: PuzzleInstance, state, model, matcher: str) -> SolveResult:
    table = pe_table(instance.layout)
    assignment = match(state.positions, table, matcher)
    tokens = {int(row): state.content[k] for k, row in enumerate(state.missing)}
    pixels = {}
    decoder = getattr(model, "decoder", None)
    if tokens and decoder is not None:
        stacked = np.stack(list(tokens.values()))
        decoded = model.decode_content(stacked).numpy()
        for k, row in enumerate(tokens):
            pixels[row] = denormalize_pixels(decoded[k]).reshape(instance.piece_shape)
    correct = assignment.permutation == instance.truth
    return SolveResult(
        assignment=assignment,
        positions=state.positions,
        generated_tokens=tokens,
        generated_pixels=pixels,
        kendall=kendall_normalized(assignment.permutation, instance.truth),
        correct=correct,
    )


def solve_instances(
    model,
    sched: NoiseSchedule,
    instances: Sequence[PuzzleInstance],
    seed: int,
    *,
    stride: int = 1,
    matcher: str = "greedy",
    jobs: int | None = None,
    puzzle_ids: Sequence[int] | None = None,
    chunk: int = DEFAULT_CHUNK,
    clip_positions: bool = False,
) -> list[SolveResult]:
    """
    Resuelve puzzles por lotes; el resultado sale en el orden de entrada.

    Cada puzzle usa el generador derivado de ``(seed, puzzle_id)``, por lo que
    el resultado no depende del tamaño de lote ni del número de trabajadores.

    Args:
        model: Modelo entrenado (o sustituto con ``predict_noise``).
        sched: Calendario de ruido.
        instances: Puzzles a resolver.
        seed: Semilla de la ejecución.
        stride: Salto de timesteps.
        matcher: ``greedy`` o ``hungarian``.
        jobs: Trabajadores en paralelo (por defecto, ``settings.jobs``).
        puzzle_ids: Identificador de cada puzzle (por defecto, su índice).
        chunk: Puzzles por lote del modelo.
        clip_positions: Recorta ``L̂0`` a ``[-1, 1]`` en cada paso inverso.

    Returns:
        list[SolveResult]: Un resultado por puzzle.
    """
    if not instances:
        return []
    ids = list(puzzle_ids) if puzzle_ids is not None else list(range(len(instances)))
    if len(ids) != len(instances):
        raise ShapeError("puzzle_ids no coincide con el número de puzzles")
    groups: dict[tuple, list[int]] = {}
    for index, instance in enumerate(instances):
        groups.setdefault((instance.n, instance.piece_pixels), []).append(index)
    batches = [
        members[start : start + chunk]
        for members in groups.values()
        for start in range(0, len(members), chunk)
    ]

    def run(batch: list[int]) -> list[tuple[int, SolveResult]]:
        requests = [_request(instances[i], seed, ids[i], model) for i in batch]
        states = run_reverse_chain(
            model, sched, requests, stride, clip_positions=clip_positions
        )
        return [
            (i, _finish(instances[i], state, model, matcher)) for i, state in zip(batch, states)
        ]

    workers = settings.effective_jobs(jobs)
    results: list[SolveResult | None] = [None] * len(instances)
    if workers > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for chunk_results in pool.map(run, batches):
                for i, result in chunk_results:
                    results[i] = result
    else:
        for batch in batches:
            for i, result in run(batch):
                results[i] = result
    return results


def mask_for_sweep(
    instance: PuzzleInstance, k: int, seed: int, puzzle_id: int
) -> PuzzleInstance | None:
    """
    Completa el conjunto de piezas ausentes hasta ``k``.

    Devuelve ``None`` si el puzzle ya tiene más de ``k`` piezas ausentes.
    """
    have = len(instance.missing)
    if have > k:
        return None
    if have == k:
        return instance
    rng = np.random.default_rng([int(seed), int(puzzle_id), int(k)])
    base = instance.with_missing(())
    for _ in range(64):
        candidate = apply_mask(base, k, rng, allow_over=True)
        if set(instance.missing) <= set(candidate.missing):
            return candidate
    extra = [i for i in range(1 if instance.anchor else 0, instance.n) if i not in instance.missing]
    chosen = rng.choice(extra, size=k - have, replace=False)
    return instance.with_missing(sorted(set(instance.missing) | {int(c) for c in chosen}))


@dataclass
class SweepResult:
    """Filas del CSV principal (todas las piezas) y de la variante con solo piezas dadas."""

    rows: list[EvalRow]
    given_rows: list[EvalRow]


def _row(k: int, instances, results, include=None) -> EvalRow:
    truths = [inst.truth for inst in instances]
    assignments = [r.assignment for r in results]
    kendalls = np.array([r.kendall for r in results], dtype=np.float64)
    return EvalRow(
        missing=k,
        puzzle_acc=puzzle_accuracy(assignments, truths),
        piece_acc=piece_accuracy(assignments, truths, include),
        kendall_mean=float(kendalls.mean()),
        kendall_std=float(kendalls.std()),
        n=len(results),
    )


def evaluate_sweep(
    model,
    sched: NoiseSchedule,
    instances: Sequence[PuzzleInstance],
    sweep: Sequence[int],
    seed: int,
    *,
    stride: int = 1,
    matcher: str = "greedy",
    jobs: int | None = None,
) -> SweepResult:
    """
    Evalúa los puzzles para cada número de piezas ausentes del barrido.

    Raises:
        ValueError: Si no hay puzzles que evaluar.
    """
    if not instances:
        raise ValueError("Corpus vacío: no hay puzzles que evaluar")
    rows, given_rows = [], []
    for k in sweep:
        masked, ids = [], []
        for pid, instance in enumerate(instances):
            candidate = mask_for_sweep(instance, k, seed, pid)
            if candidate is None:
                logger.warning(f"Puzzle {pid} omitido en k={k}: ya tiene más piezas ausentes")
                continue
            masked.append(candidate)
            ids.append(pid)
        if not masked:
            raise ValueError(f"Ningún puzzle admite {k} piezas ausentes")
        results = solve_instances(
            model, sched, masked, seed, stride=stride, matcher=matcher, jobs=jobs, puzzle_ids=ids
        )
        rows.append(_row(k, masked, results))
        given_rows.append(_row(k, masked, results, [~inst.missing_mask for inst in masked]))
        logger.info(
            f"k={k}: puzzle_acc={rows[-1].puzzle_acc:.4f} piece_acc={rows[-1].piece_acc:.4f} "
            f"kendall={rows[-1].kendall_mean:.4f} (n={rows[-1].n})"
        )
    return SweepResult(rows=rows, given_rows=given_rows)


def superresolve(
    model,
    sched: NoiseSchedule,
    frames: np.ndarray,
    factor: int,
    seed: int,
    *,
    stride: int = 1,
) -> tuple[np.ndarray, list[int]]:
    """
    Inserta ``factor - 1`` frames generados entre cada par de frames de entrada.

    Los frames de entrada quedan anclados a los huecos múltiplos de ``factor``
    y los intermedios se tratan como piezas ausentes. No se extrapola tras el
    último frame: la salida tiene ``(n - 1)·factor + 1`` frames.

    Args:
        model: Modelo temporal enmascarado con decodificador y clips de 1 frame.
        sched: Calendario de ruido.
        frames: uint8 ``n × H × W × C``.
        factor: Factor entero ≥ 2.
        seed: Semilla.
        stride: Salto de timesteps.

    Returns:
        tuple: Frames de salida y lista de huecos generados.

    Raises:
        UsageError: Si el modelo o el factor no son compatibles.
    """
    config = model.config
    if factor < 2:
        raise UsageError(f"El factor debe ser ≥ 2: {factor}")
    if config.modality != "temporal" or not config.masked or model.decoder is None:
        raise UsageError("superres requiere un modelo temporal enmascarado con decodificador")
    if config.piece_shape[0] != 1:
        raise UsageError(
            f"Factor incompatible con piezas de {config.piece_shape[0]} frames (se requiere 1)"
        )
    frames = np.asarray(frames)
    if frames.ndim == 3:
        frames = frames[..., None]
    if frames.shape[1:] != tuple(config.piece_shape[1:]):
        raise UsageError(
            f"Frames de forma {frames.shape[1:]}, el modelo espera {tuple(config.piece_shape[1:])}"
        )
    n_in = frames.shape[0]
    if n_in < 2:
        raise UsageError("Se necesitan al menos 2 frames de entrada")

    length = (n_in - 1) * factor + 1
    layout = Layout.sequence(length)
    table = pe_table(layout)
    known = np.arange(n_in) * factor
    generated_slots = np.setdiff1d(np.arange(length), known)

    pieces = np.zeros((length, int(np.prod(config.piece_shape))), dtype=np.float64)
    pieces[known] = frames.reshape(n_in, -1).astype(np.float64) / 127.5 - 1.0
    request = SolveRequest(
        pieces=pieces,
        missing=generated_slots,
        rng=puzzle_rng(seed, 0),
        anchor_rows=known,
        anchor_codes=table.codes[known],
    )
    (state,) = run_reverse_chain(model, sched, [request], stride)

    # Ubica cada token generado en uno de los huecos intermedios
    placement = hungarian_match(state.positions[generated_slots], table.codes[generated_slots])
    decoded = model.decode_content(state.content).numpy()
    output = np.zeros((length,) + frames.shape[1:], dtype=np.uint8)
    output[known] = frames
    for k, slot_index in enumerate(placement.permutation):
        output[generated_slots[slot_index]] = denormalize_pixels(decoded[k]).reshape(
            frames.shape[1:]
        )
    logger.info(f"Superresolución ×{factor}: {n_in} → {length} frames")
    return output, generated_slots.tolist()
