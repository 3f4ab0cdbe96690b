"""Subcomandos de la CLI."""

from app.commands import evaluate, make_puzzles, solve, superres, train

COMMANDS = {
    "make-puzzles": make_puzzles,
    "train": train,
    "solve": solve,
    "eval": evaluate,
    "superres": superres,
}

__all__ = ["COMMANDS", "evaluate", "make_puzzles", "solve", "superres", "train"]
