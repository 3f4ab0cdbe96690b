"""Punto de entrada de la CLI ``jpdvt``."""

import argparse
import logging
import sys

from app.commands import COMMANDS
from app.config import settings
from app.exceptions import NumericError, PuzzleDiffusionError

logger = logging.getLogger(__name__)


def configure_logging() -> None:
    """Configura el logging del proceso a partir de ``settings``."""
    logging.basicConfig(
        level=logging.DEBUG if settings.debug else settings.log_level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jpdvt",
        description="Resolución de puzzles espaciales y temporales por difusión de códigos posicionales",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for module in COMMANDS.values():
        module.add_parser(subparsers)
    return parser


def main(argv: list[str] | None = None) -> int:
    """
    Ejecuta un subcomando y traduce las excepciones a códigos de salida.

    Returns:
        int: 0 si todo fue bien, 2 uso, 3 fallo numérico, 4 E/S, 1 inesperado.
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging()
    try:
        return args.run(args)
    except NumericError as e:
        logger.error(f"Fallo numérico: {e.detail}")
        last = e.last_checkpoint
        if last is not None:
            where = f"paso {last.step}" if hasattr(last, "step") else str(last)
            print(f"error: {e.detail} (último checkpoint: {where})", file=sys.stderr)
        else:
            print(f"error: {e.detail}", file=sys.stderr)
        return e.exit_code
    except PuzzleDiffusionError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.error(f"Error inesperado en '{args.command}': {e}", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
