"""Modelos: contenedor de parámetros, capas y transformer de eliminación de ruido."""

from app.models.base import Module
from app.models.denoiser import Denoiser, DenoiserOutput
from app.models.layers import (
    AdaLNBlock,
    FinalLayer,
    Linear,
    MultiHeadAttention,
    TimestepEmbedder,
    attention,
)

__all__ = [
    "Module",
    "Denoiser",
    "DenoiserOutput",
    "AdaLNBlock",
    "FinalLayer",
    "Linear",
    "MultiHeadAttention",
    "TimestepEmbedder",
    "attention",
]
