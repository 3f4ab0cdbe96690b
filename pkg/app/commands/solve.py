"""Subcomando ``solve``: resuelve puzzles guardados con un checkpoint."""

import argparse
import json
import logging
import sys
from pathlib import Path

from app import checkpoint
from app.assignment import MATCHERS
from app.diffusion import schedule_from_config
from app.exceptions import ConfigMismatchError, UsageError
from app.puzzlekit.corpus import MANIFEST_NAME, PUZZLE_NAME, iter_puzzles, load_puzzle
from app.puzzlekit.instances import PuzzleInstance, reassemble
from app.solver import SolveResult, solve_instances
from app.storage import write_text
from app.utils.pnm import suffix_for, write_pnm

logger = logging.getLogger(__name__)


def add_parser(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("solve", help="Resuelve puzzles")
    parser.add_argument("--ckpt", required=True, help="Checkpoint entrenado")
    parser.add_argument("--puzzle", required=True, help="Directorio de puzzle o de corpus")
    parser.add_argument("--split", choices=("train", "test"), default="test")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--stride", type=int, default=1)
    parser.add_argument("--matcher", choices=tuple(MATCHERS), default="greedy")
    parser.add_argument("--jobs", type=int)
    parser.add_argument("--out", help="JSON de salida (un puzzle) o directorio (corpus)")
    parser.add_argument("--export", help="Directorio para la reconstrucción y las piezas generadas")
    parser.set_defaults(run=run)
    return parser


def check_compatible(instance: PuzzleInstance, config) -> None:
    """
    Rechaza puzzles que el checkpoint no puede resolver.

    Raises:
        ConfigMismatchError: Si la modalidad o la forma de pieza difieren.
    """
    if instance.layout.kind != config.modality:
        raise ConfigMismatchError(
            f"Puzzle {instance.layout.kind} con un checkpoint {config.modality}"
        )
    if tuple(instance.piece_shape) != tuple(config.piece_shape):
        raise ConfigMismatchError(
            f"Piezas {instance.piece_shape}, el checkpoint espera {tuple(config.piece_shape)}"
        )


def is_corpus(path: Path) -> bool:
    return (path / MANIFEST_NAME).exists() or path.name == MANIFEST_NAME


def _load_targets(path: Path, split: str) -> list[tuple[str, PuzzleInstance]]:
    if is_corpus(path):
        return [(Path(record.puzzle).name, inst) for record, inst in iter_puzzles(path, split)]
    if path.is_dir() and not (path / PUZZLE_NAME).exists():
        raise UsageError(f"{path} no es un puzzle ni un corpus")
    return [(path.name if path.is_dir() else path.parent.name, load_puzzle(path))]


def export(instance: PuzzleInstance, result: SolveResult, directory: Path) -> list[str]:
    """Escribe las piezas generadas y la reconstrucción; devuelve los archivos generados."""
    files = []
    for row, pixels in sorted(result.generated_pixels.items()):
        flat = pixels.reshape((-1,) + pixels.shape[2:])
        target = directory / f"missing_{row:03d}{suffix_for(flat)}"
        write_pnm(target, flat)
        files.append(str(target))
    image = reassemble(instance, result.assignment.permutation, result.generated_pixels)
    if instance.layout.kind == "temporal":
        for t, frame in enumerate(image):
            write_pnm(directory / "reassembled" / f"{t:03d}{suffix_for(frame)}", frame)
    else:
        write_pnm(directory / f"reassembled{suffix_for(image)}", image)
    return files


def run(args: argparse.Namespace) -> int:
    if args.stride < 1:
        raise UsageError(f"--stride debe ser ≥ 1: {args.stride}")
    ckpt = checkpoint.load(args.ckpt)
    model = ckpt.build_model()
    sched = schedule_from_config(ckpt.schedule)
    targets = _load_targets(Path(args.puzzle), args.split)
    if not targets:
        raise UsageError(f"No hay puzzles que resolver en {args.puzzle}")
    for _, instance in targets:
        check_compatible(instance, ckpt.config)

    instances = [inst for _, inst in targets]
    results = solve_instances(
        model, sched, instances, args.seed, stride=args.stride, matcher=args.matcher, jobs=args.jobs
    )

    single = not is_corpus(Path(args.puzzle))
    for (name, instance), result in zip(targets, results):
        export_dir = None
        if args.export:
            export_dir = Path(args.export) if single else Path(args.export) / name
        elif args.out and result.generated_pixels:
            export_dir = Path(args.out).with_suffix(".export") if single else Path(args.out) / name
        files = export(instance, result, export_dir) if export_dir else []
        if result.generated_pixels and export_dir is None:
            logger.warning("Piezas generadas no exportadas: usa --out o --export")
        payload = json.dumps(result.report(files).model_dump(mode="json"), sort_keys=True)
        if args.out is None:
            sys.stdout.write(payload + "\n")
        elif single:
            write_text(args.out, payload + "\n")
        else:
            write_text(Path(args.out) / f"{name}.json", payload + "\n")
    logger.info(f"{len(results)} puzzles resueltos con {args.matcher} (stride {args.stride})")
    return 0
