"""Subcomando ``eval``: barrido de métricas sobre el número de piezas ausentes."""

import argparse
import logging
import sys
from pathlib import Path

from app import checkpoint
from app.assignment import MATCHERS
from app.commands.solve import check_compatible
from app.diffusion import schedule_from_config
from app.exceptions import UsageError
from app.puzzlekit.corpus import iter_puzzles
from app.schemas.results import EVAL_CSV_HEADER
from app.solver import evaluate_sweep
from app.storage import write_csv

logger = logging.getLogger(__name__)


def add_parser(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("eval", help="Evalúa un checkpoint sobre un corpus")
    parser.add_argument("--ckpt", required=True)
    parser.add_argument("--corpus", required=True)
    parser.add_argument("--mask-sweep", default="0..0", help="Rango a..b o lista a,b,c")
    parser.add_argument("--split", choices=("train", "test"), default="test")
    parser.add_argument("--limit", type=int, help="Máximo de puzzles evaluados")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--stride", type=int, default=1)
    parser.add_argument("--matcher", choices=tuple(MATCHERS), default="greedy")
    parser.add_argument("--jobs", type=int)
    parser.add_argument("--out", help="CSV de salida (por defecto, stdout)")
    parser.set_defaults(run=run)
    return parser


def parse_sweep(text: str) -> list[int]:
    """
    Interpreta ``a..b`` (inclusivo) o ``a,b,c``.

    Raises:
        UsageError: Si el texto no es un barrido válido.
    """
    try:
        if ".." in text:
            start, stop = (int(part) for part in text.split("..", 1))
            values = list(range(start, stop + 1))
        else:
            values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise UsageError(f"--mask-sweep inválido: {text!r}") from e
    if not values or any(v < 0 for v in values):
        raise UsageError(f"--mask-sweep vacío o negativo: {text!r}")
    return values


def given_path(path: Path) -> Path:
    """Ruta del CSV hermano con solo las piezas dadas (``x.csv`` → ``x.given.csv``)."""
    return path.with_name(f"{path.stem}.given{path.suffix or '.csv'}")


def run(args: argparse.Namespace) -> int:
    sweep = parse_sweep(args.mask_sweep)
    if args.stride < 1:
        raise UsageError(f"--stride debe ser ≥ 1: {args.stride}")
    ckpt = checkpoint.load(args.ckpt)
    model = ckpt.build_model()
    sched = schedule_from_config(ckpt.schedule)

    instances = []
    for _, instance in iter_puzzles(args.corpus, args.split):
        check_compatible(instance, ckpt.config)
        instances.append(instance)
        if args.limit is not None and len(instances) >= args.limit:
            break
    if not instances:
        raise UsageError(f"Corpus vacío: {args.corpus} no tiene puzzles en '{args.split}'")
    if any(k > 0 for k in sweep) and not ckpt.config.masked:
        raise UsageError("El barrido con piezas ausentes requiere un modelo enmascarado")

    try:
        result = evaluate_sweep(
            model,
            sched,
            instances,
            sweep,
            args.seed,
            stride=args.stride,
            matcher=args.matcher,
            jobs=args.jobs,
        )
    except ValueError as e:
        raise UsageError(str(e)) from e

    rows = [row.as_csv_row() for row in result.rows]
    if args.out is None:
        sys.stdout.write(",".join(EVAL_CSV_HEADER) + "\n")
        for row in rows:
            sys.stdout.write(",".join(row) + "\n")
    else:
        out = Path(args.out)
        write_csv(out, EVAL_CSV_HEADER, rows)
        write_csv(given_path(out), EVAL_CSV_HEADER, [r.as_csv_row() for r in result.given_rows])
        logger.info(f"Métricas escritas en {out} y {given_path(out)}")
    return 0
