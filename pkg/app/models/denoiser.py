"""
Transformer de eliminación de ruido condicionado al contenido de las piezas.

Cada pieza es un token. El token de contenido se fusiona con el código
posicional ruidoso proyectado (suma en espacial, concatenación y fusión lineal
en temporal), se condiciona al paso ``t`` con bloques adaLN-Zero y se predice
el ruido de cada código posicional y, en modo enmascarado, el ruido del token
de contenido de las piezas ausentes.
"""

import logging
from dataclasses import dataclass

import numpy as np

from app import posenc
from app import tensorlab as tl
from app.diffusion import NoisePair
from app.exceptions import ShapeError, UsageError
from app.models.base import Module
from app.models.layers import AdaLNBlock, FinalLayer, Linear, TimestepEmbedder
from app.schemas.training import DenoiserConfig

logger = logging.getLogger(__name__)


@dataclass
class DenoiserOutput:
    """Predicciones de ruido: posiciones (B × N × d) y contenido (B × N × D) si aplica."""

    positions: tl.Tensor
    content: tl.Tensor | None = None


class Denoiser(Module):
    """
    Red ``ε_θ`` del solucionador de puzzles.

    Args:
        config: Hiperparámetros del modelo.
        seed: Semilla de la inicialización de pesos.
    """

    def __init__(self, config: DenoiserConfig, seed: int = 0) -> None:
        super().__init__(config.dtype)
        self.config = config
        rng = np.random.default_rng(seed)
        dtype = config.dtype
        hidden = config.hidden
        token_dim = config.token_dim
        pe_dim = config.position_dim

        self.patch = self.add_module(
            "patch_embed", Linear(config.piece_pixels, token_dim, rng, dtype=dtype)
        )
        self.token_in = None
        if token_dim != hidden:
            self.token_in = self.add_module("token_in", Linear(token_dim, hidden, rng, dtype=dtype))
        self.pe_fc1 = self.add_module("pe_proj.fc1", Linear(pe_dim, hidden, rng, dtype=dtype))
        self.pe_fc2 = self.add_module("pe_proj.fc2", Linear(hidden, hidden, rng, dtype=dtype))
        self.fuse = None
        if config.modality == "temporal":
            self.fuse = self.add_module("fuse", Linear(2 * hidden, hidden, rng, dtype=dtype))
        self.missing_embed = None
        if config.masked:
            self.missing_embed = self.add_parameter(
                "missing_embed", rng.normal(0.0, 0.02, size=hidden)
            )
        self.t_embed = self.add_module(
            "t_embed",
            TimestepEmbedder(config.time_freq_dim, hidden, config.timesteps, rng, dtype=dtype),
        )
        self.blocks = [
            self.add_module(
                f"blocks.{i}",
                AdaLNBlock(hidden, config.heads, config.mlp_width, rng, dtype=dtype),
            )
            for i in range(config.layers)
        ]
        self.position_head = self.add_module(
            "position_head", FinalLayer(hidden, pe_dim, rng, dtype=dtype)
        )
        self.content_head = None
        if config.masked:
            self.content_head = self.add_module(
                "content_head", FinalLayer(hidden, token_dim, rng, dtype=dtype)
            )
        self.decoder = None
        if config.decoder:
            self.decoder = self.add_module(
                "decoder", Linear(token_dim, config.piece_pixels, rng, dtype=dtype)
            )
        logger.debug(f"Denoiser {config.modality} con {self.num_parameters} parámetros")

    # ------------------------------------------------------------------
    # Componentes
    # ------------------------------------------------------------------

    def _flatten_pieces(self, pieces) -> tl.Tensor:
        pieces = self.as_tensor(pieces)
        pixels = self.config.piece_pixels
        if pieces.shape[-1] != pixels:
            if int(np.prod(pieces.shape[-4:])) == pixels and pieces.ndim >= 4:
                pieces = tl.reshape(pieces, pieces.shape[:-4] + (pixels,))
            else:
                raise ShapeError(
                    f"Piezas con forma {pieces.shape}, se esperaban {pixels} píxeles por pieza"
                )
        return pieces

    def patch_embed(self, pieces) -> tl.Tensor:
        """
        Aplana cada pieza y la proyecta linealmente al ancho de token.

        Args:
            pieces: ``[..., P]`` o ``[..., F, H, W, C]`` normalizado a ``[-1, 1]``.

        Returns:
            Tensor: Tokens ``[..., D_token]``.

        Raises:
            ShapeError: Si el número de píxeles no coincide con la configuración.
        """
        return self.patch(self._flatten_pieces(pieces))

    def timestep_embed(self, t) -> tl.Tensor:
        """Vector de condición (``B × hidden``) para los pasos ``t``."""
        return self.t_embed(t)

    def project_positions(self, noisy_pe) -> tl.Tensor:
        return posenc.project(
            self.as_tensor(noisy_pe),
            self.pe_fc1.weight,
            self.pe_fc1.bias,
            self.pe_fc2.weight,
            self.pe_fc2.bias,
        )

    def decode_content(self, tokens):
        """
        Convierte tokens de contenido generados en bloques de píxeles.

        Raises:
            UsageError: Si el modelo no incluye decodificador.
        """
        if self.decoder is None:
            raise UsageError("El checkpoint no incluye decodificador de contenido")
        return self.decoder(self.as_tensor(tokens))

    # ------------------------------------------------------------------
    # Paso hacia delante
    # ------------------------------------------------------------------

    def forward(
        self,
        pieces,
        noisy_pe,
        t,
        missing: np.ndarray | None = None,
        content=None,
        *,
        clean_tokens: tl.Tensor | None = None,
    ) -> DenoiserOutput:
        """
        Predice el ruido de los códigos posicionales (y del contenido ausente).

        Args:
            pieces: Contenido ``B × N × P`` (las filas ausentes se ignoran).
            noisy_pe: Códigos ruidosos ``B × N × d``.
            t: Paso de cada puzzle (``B``).
            missing: Máscara booleana ``B × N`` de filas con contenido ruidoso.
            content: Tokens de contenido ruidosos ``B × N × D_token`` (se leen
                solo en las filas ausentes).
            clean_tokens: Tokens ya calculados con ``patch_embed`` (entrenamiento).

        Returns:
            DenoiserOutput: Predicciones por token.

        Raises:
            ShapeError: Si el número de filas o las dimensiones no coinciden.
            ValueError: Si algún ``t`` está fuera de rango.
        """
        noisy_pe = self.as_tensor(noisy_pe)
        tokens = clean_tokens if clean_tokens is not None else self.patch_embed(pieces)
        if tokens.ndim != 3 or noisy_pe.ndim != 3:
            raise ShapeError(
                f"Se esperaban lotes B × N × ·; tokens {tokens.shape}, códigos {noisy_pe.shape}"
            )
        if tokens.shape[:2] != noisy_pe.shape[:2]:
            raise ShapeError(
                f"Filas de tokens {tokens.shape[:2]} y de códigos {noisy_pe.shape[:2]} no coinciden"
            )
        if noisy_pe.shape[-1] != self.config.position_dim:
            raise ShapeError(
                f"Códigos de dimensión {noisy_pe.shape[-1]}, se esperaba {self.config.position_dim}"
            )

        mask = None
        if missing is not None and np.any(missing):
            if not self.config.masked:
                raise UsageError("El modelo no se entrenó en modo enmascarado")
            if content is None:
                raise ShapeError("Faltan los tokens de contenido de las piezas ausentes")
            mask = self.as_tensor(np.asarray(missing, dtype=self.dtype)[..., None])
            content = self.as_tensor(content)
            if content.shape != tokens.shape:
                raise ShapeError(f"Contenido {content.shape} no coincide con tokens {tokens.shape}")
            keep = self.as_tensor(1.0 - mask.data)
            tokens = tl.add(tl.mul(tokens, keep), tl.mul(content, mask))

        h = self.token_in(tokens) if self.token_in is not None else tokens
        pe = self.project_positions(noisy_pe)
        if self.fuse is None:
            h = tl.add(h, pe)
        else:
            h = self.fuse(tl.concat([h, pe], axis=-1))
        if mask is not None:
            h = tl.add(h, tl.mul(mask, tl.reshape(self.missing_embed, (1, 1, -1))))

        c = self.timestep_embed(t)
        if c.shape[0] != h.shape[0]:
            raise ShapeError(f"{c.shape[0]} pasos para un lote de {h.shape[0]} puzzles")
        for block in self.blocks:
            h = block(h, c)

        positions = self.position_head(h, c)
        content_eps = self.content_head(h, c) if self.content_head is not None else None
        return DenoiserOutput(positions=positions, content=content_eps)

    __call__ = forward

    def predict_noise(
        self,
        pieces: np.ndarray,
        positions: np.ndarray,
        t: np.ndarray,
        missing: np.ndarray | None,
        content: np.ndarray | None,
    ) -> NoisePair:
        """Inferencia sin cinta: devuelve las predicciones como arreglos numpy."""
        if missing is not None and not np.any(missing):
            missing, content = None, None
        out = self.forward(pieces, positions, t, missing, content)
        return NoisePair(
            positions=out.positions.numpy(),
            content=out.content.numpy() if out.content is not None else None,
        )
