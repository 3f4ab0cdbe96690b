"""Subcomando ``superres``: superresolución temporal con un modelo enmascarado."""

import argparse
import logging
from pathlib import Path

from app import checkpoint
from app.diffusion import schedule_from_config
from app.exceptions import UsageError
from app.puzzlekit.corpus import load_frames
from app.solver import superresolve
from app.utils.pnm import suffix_for, write_pnm

logger = logging.getLogger(__name__)


def add_parser(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("superres", help="Intercala frames generados")
    parser.add_argument("--ckpt", required=True)
    parser.add_argument("--frames", required=True, help="Directorio de frames PGM/PPM")
    parser.add_argument("--factor", type=int, default=2)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--stride", type=int, default=1)
    parser.add_argument("--out", required=True, help="Directorio de salida")
    parser.set_defaults(run=run)
    return parser


def run(args: argparse.Namespace) -> int:
    if args.stride < 1:
        raise UsageError(f"--stride debe ser ≥ 1: {args.stride}")
    ckpt = checkpoint.load(args.ckpt)
    model = ckpt.build_model()
    frames = load_frames(args.frames)
    output, generated = superresolve(
        model, schedule_from_config(ckpt.schedule), frames, args.factor, args.seed, stride=args.stride
    )
    out = Path(args.out)
    for t, frame in enumerate(output):
        write_pnm(out / f"{t:03d}{suffix_for(frame)}", frame)
    print(
        f"superres ×{args.factor}: {frames.shape[0]} → {output.shape[0]} frames "
        f"({len(generated)} generados) en {out}"
    )
    return 0
