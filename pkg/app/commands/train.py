"""Subcomando ``train``: entrena un denoiser sobre un corpus."""

import argparse
import json
import logging
import os
from pathlib import Path

from pydantic import ValidationError

from app import checkpoint
from app.exceptions import StorageError, UsageError
from app.schemas.training import ExperimentConfig
from app.trainer import Trainer

logger = logging.getLogger(__name__)


def add_parser(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("train", help="Entrena un denoiser")
    parser.add_argument("--corpus", required=True, help="Directorio del corpus")
    parser.add_argument("--config", required=True, help="Experimento JSON")
    parser.add_argument("--out", required=True, help="Directorio de la ejecución")
    parser.add_argument("--resume", help="Checkpoint desde el que continuar")
    parser.set_defaults(run=run)
    return parser


def load_experiment(path: str | os.PathLike) -> ExperimentConfig:
    """
    Lee y valida un archivo de experimento.

    Raises:
        StorageError: Si el archivo no se puede leer.
        UsageError: Con línea y columna para JSON mal formado, o con el
            nombre del campo para valores inválidos.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise StorageError(f"No se puede leer la configuración {path}: {e.strerror or e}") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}: JSON inválido en la línea {e.lineno}, columna {e.colno}: {e.msg}") from e
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        fields = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or '(raíz)'}: {err['msg']}" for err in e.errors()
        )
        raise UsageError(f"{path}: configuración inválida: {fields}") from e


def run(args: argparse.Namespace) -> int:
    experiment = load_experiment(args.config)
    resume = checkpoint.load(args.resume) if args.resume else None
    trainer = Trainer(experiment, args.corpus, args.out, resume)
    emitted = 0
    for ckpt in trainer.run():
        emitted += 1
        logger.debug(f"Checkpoint emitido en el paso {ckpt.step}")
    print(f"train: {trainer.step} pasos, {emitted} checkpoints en {args.out}")
    return 0
