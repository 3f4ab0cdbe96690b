"""Subcomando ``make-puzzles``: genera o importa un corpus de puzzles."""

import argparse
import logging

from pydantic import ValidationError

from app.exceptions import UsageError
from app.puzzlekit.corpus import build_corpus
from app.schemas.corpus import CorpusParams

logger = logging.getLogger(__name__)


def add_parser(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("make-puzzles", help="Construye un corpus de puzzles")
    parser.add_argument("--mode", choices=("spatial", "temporal"), required=True)
    parser.add_argument("--source", choices=("synth", "dir"), default="synth")
    parser.add_argument("--input", help="Directorio de imágenes o secuencias (--source dir)")
    parser.add_argument("--grid", type=int, help="Piezas por lado (espacial)")
    parser.add_argument("--piece-len", type=int, help="Frames por pieza (temporal)")
    parser.add_argument("--gap", action=argparse.BooleanOptionalAction, default=None)
    parser.add_argument("--mask-max", type=float, default=0.0, help="Fracción máxima ausente")
    parser.add_argument("--count", type=int, default=0, help="Número de muestras")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", required=True, help="Directorio de salida")
    parser.add_argument("--image-size", type=int, help="Lado de las imágenes sintéticas")
    parser.add_argument("--frames", type=int, help="Frames por secuencia sintética")
    parser.add_argument("--frame-size", type=int, help="Lado de los frames sintéticos")
    parser.add_argument("--stride", type=int, default=1, help="Submuestreo temporal")
    parser.add_argument("--anchor", action=argparse.BooleanOptionalAction, default=None)
    parser.add_argument("--test-fraction", type=float, default=0.1)
    parser.set_defaults(run=run)
    return parser


def params_from_args(args: argparse.Namespace) -> CorpusParams:
    """
    Traduce los flags a parámetros de corpus.

    Raises:
        UsageError: Si hay flags en conflicto o valores inválidos.
    """
    spatial = args.mode == "spatial"
    if spatial and (args.piece_len is not None or args.frames is not None):
        raise UsageError("--piece-len y --frames solo aplican a --mode temporal")
    if not spatial and (args.grid is not None or args.gap is not None or args.image_size):
        raise UsageError("--grid, --gap e --image-size solo aplican a --mode spatial")
    if args.source == "dir" and args.input is None:
        raise UsageError("--source dir requiere --input")
    if args.source == "synth" and args.input is not None:
        raise UsageError("--input solo aplica a --source dir")
    if args.source == "synth" and args.count < 1:
        raise UsageError("--count debe ser ≥ 1 para corpus sintéticos")
    if not 0.0 <= args.test_fraction < 1.0:
        raise UsageError(f"--test-fraction fuera de [0, 1): {args.test_fraction}")
    try:
        return CorpusParams(
            mode=args.mode,
            source=args.source,
            grid=args.grid,
            gap=bool(args.gap),
            image_size=args.image_size,
            piece_len=args.piece_len,
            frames=args.frames,
            frame_size=args.frame_size,
            stride=args.stride,
            anchor=(not spatial) if args.anchor is None else args.anchor,
            mask_max=args.mask_max,
            count=args.count,
        )
    except ValidationError as e:
        raise UsageError(f"Parámetros de corpus inválidos: {e}") from e


def run(args: argparse.Namespace) -> int:
    params = params_from_args(args)
    try:
        manifest = build_corpus(
            params, args.out, args.seed, input_dir=args.input, test_fraction=args.test_fraction
        )
    except ValueError as e:
        raise UsageError(str(e)) from e
    test = sum(1 for s in manifest.samples if s.split == "test")
    print(
        f"{params.mode}: {len(manifest.samples)} puzzles en {args.out} "
        f"({len(manifest.samples) - test} train / {test} test, seed={args.seed})"
    )
    return 0
