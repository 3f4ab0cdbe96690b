"""Construcción, enmascarado, síntesis y persistencia de puzzles."""

from app.puzzlekit.corpus import (
    Source,
    build_corpus,
    build_instance,
    iter_puzzles,
    load_corpus,
    load_frames,
    load_puzzle,
    read_manifest,
    save_puzzle,
)
from app.puzzlekit.instances import (
    PuzzleInstance,
    apply_mask,
    denormalize_pixels,
    make_spatial,
    make_temporal,
    max_missing,
    normalize_pixels,
    reassemble,
)
from app.puzzlekit.synth import moving_squares, synth_spatial, synth_temporal, texture

__all__ = [
    "Source",
    "build_corpus",
    "build_instance",
    "iter_puzzles",
    "load_corpus",
    "load_frames",
    "load_puzzle",
    "read_manifest",
    "save_puzzle",
    "PuzzleInstance",
    "apply_mask",
    "denormalize_pixels",
    "make_spatial",
    "make_temporal",
    "max_missing",
    "normalize_pixels",
    "reassemble",
    "moving_squares",
    "synth_spatial",
    "synth_temporal",
    "texture",
]
