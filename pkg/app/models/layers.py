"""Capas del transformer: lineal, atención multi-cabeza y bloques con adaLN-Zero."""

import math

import numpy as np

from app import tensorlab as tl
from app.exceptions import ShapeError
from app.models.base import Module, xavier_uniform

TIMESTEP_MAX_PERIOD = 10000.0


class Linear(Module):
    """``y = x·W + b`` sobre el último eje; ``W`` tiene forma ``in × out``."""

    def __init__(
        self,
        in_features: int,
        out_features: int,
        rng: np.random.Generator,
        *,
        zero: bool = False,
        std: float | None = None,
        dtype="float32",
    ) -> None:
        super().__init__(dtype)
        self.in_features = in_features
        self.out_features = out_features
        if zero:
            weight = np.zeros((in_features, out_features))
        elif std is not None:
            weight = rng.normal(0.0, std, size=(in_features, out_features))
        else:
            weight = xavier_uniform(rng, in_features, out_features, self.dtype)
        self.weight = self.add_parameter("weight", weight)
        self.bias = self.add_parameter("bias", np.zeros(out_features))

    def __call__(self, x: tl.Tensor) -> tl.Tensor:
        if x.shape[-1] != self.in_features:
            raise ShapeError(
                f"Linear: entrada con ancho {x.shape[-1]}, se esperaba {self.in_features}"
            )
        if x.ndim == 2:
            return tl.add(tl.matmul(x, self.weight), self.bias)
        lead = x.shape[:-1]
        flat = tl.reshape(x, (-1, self.in_features))
        out = tl.add(tl.matmul(flat, self.weight), self.bias)
        return tl.reshape(out, lead + (self.out_features,))


def modulate(x: tl.Tensor, shift: tl.Tensor, scale: tl.Tensor) -> tl.Tensor:
    """``x·(1 + scale) + shift`` con ``shift``/``scale`` de forma ``B × 1 × D``."""
    return tl.add(tl.add(x, tl.mul(x, scale)), shift)


def attention(q: tl.Tensor, k: tl.Tensor, v: tl.Tensor) -> tl.Tensor:
    """
    Atención de producto escalado ``softmax(Q·Kᵀ/√d)·V`` por cabeza.

    Args:
        q: Consultas ``[..., N, d]``.
        k: Claves ``[..., M, d]``.
        v: Valores ``[..., M, dv]``.

    Returns:
        Tensor: ``[..., N, dv]``.

    Raises:
        ShapeError: Si las dimensiones de cabeza no coinciden.
    """
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention: formas {q.shape}, {k.shape}, {v.shape} incompatibles")
    axes = tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)
    logits = tl.scale(tl.matmul(q, tl.transpose(k, axes)), 1.0 / math.sqrt(q.shape[-1]))
    return tl.matmul(tl.softmax(logits, axis=-1), v)


class MultiHeadAttention(Module):
    """Autoatención multi-cabeza sin máscara ni posiciones propias."""

    def __init__(self, hidden: int, heads: int, rng: np.random.Generator, dtype="float32") -> None:
        super().__init__(dtype)
        if hidden % heads != 0:
            raise ShapeError(f"hidden ({hidden}) no es divisible por heads ({heads})")
        self.hidden = hidden
        self.heads = heads
        self.head_dim = hidden // heads
        self.qkv = self.add_module("qkv", Linear(hidden, 3 * hidden, rng, dtype=dtype))
        self.proj = self.add_module("proj", Linear(hidden, hidden, rng, dtype=dtype))

    def _split_heads(self, x: tl.Tensor, index: int) -> tl.Tensor:
        batch, n, _ = x.shape
        part = tl.take(x, index * self.hidden, (index + 1) * self.hidden, axis=-1)
        part = tl.reshape(part, (batch, n, self.heads, self.head_dim))
        return tl.transpose(part, (0, 2, 1, 3))

    def __call__(self, x: tl.Tensor) -> tl.Tensor:
        batch, n, _ = x.shape
        qkv = self.qkv(x)
        q, k, v = (self._split_heads(qkv, i) for i in range(3))
        out = attention(q, k, v)
        out = tl.reshape(tl.transpose(out, (0, 2, 1, 3)), (batch, n, self.hidden))
        return self.proj(out)


def timestep_frequencies(t: np.ndarray, dim: int) -> np.ndarray:
    """Embedding sinusoidal ``[cos, sin]`` de los pasos ``t`` (``B × dim``)."""
    half = dim // 2
    freqs = np.exp(-math.log(TIMESTEP_MAX_PERIOD) * np.arange(half, dtype=np.float64) / half)
    args = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.cos(args), np.sin(args)], axis=-1)


class TimestepEmbedder(Module):
    """Sinusoide de ``t`` seguida de ``linear → SiLU → linear``."""

    def __init__(
        self,
        freq_dim: int,
        hidden: int,
        timesteps: int,
        rng: np.random.Generator,
        dtype="float32",
    ) -> None:
        super().__init__(dtype)
        self.freq_dim = freq_dim
        self.timesteps = timesteps
        self.fc1 = self.add_module("fc1", Linear(freq_dim, hidden, rng, std=0.02, dtype=dtype))
        self.fc2 = self.add_module("fc2", Linear(hidden, hidden, rng, std=0.02, dtype=dtype))

    def __call__(self, t: np.ndarray) -> tl.Tensor:
        t = np.atleast_1d(np.asarray(t, dtype=np.int64))
        if t.size and (t.min() < 1 or t.max() > self.timesteps):
            raise ValueError(f"t fuera de rango [1, {self.timesteps}]: {t.tolist()}")
        freqs = self.as_tensor(timestep_frequencies(t, self.freq_dim))
        return self.fc2(tl.silu(self.fc1(freqs)))


class AdaLNBlock(Module):
    """
    Bloque transformer con normalización adaptativa (adaLN-Zero).

    El embedding de condición produce ``(shift, scale, gate)`` para la
    atención y para el MLP. La modulación se inicializa a cero, así que cada
    bloque empieza siendo la identidad.
    """

    def __init__(
        self,
        hidden: int,
        heads: int,
        mlp_width: int,
        rng: np.random.Generator,
        dtype="float32",
    ) -> None:
        super().__init__(dtype)
        self.hidden = hidden
        self.attn = self.add_module("attn", MultiHeadAttention(hidden, heads, rng, dtype=dtype))
        self.fc1 = self.add_module("fc1", Linear(hidden, mlp_width, rng, dtype=dtype))
        self.fc2 = self.add_module("fc2", Linear(mlp_width, hidden, rng, dtype=dtype))
        self.ada = self.add_module("ada", Linear(hidden, 6 * hidden, rng, zero=True, dtype=dtype))

    def _chunk(self, mod: tl.Tensor, i: int) -> tl.Tensor:
        return tl.take(mod, i * self.hidden, (i + 1) * self.hidden, axis=-1)

    def __call__(self, x: tl.Tensor, c: tl.Tensor) -> tl.Tensor:
        batch = x.shape[0]
        mod = tl.reshape(self.ada(tl.silu(c)), (batch, 1, 6 * self.hidden))
        shift_msa, scale_msa, gate_msa, shift_mlp, scale_mlp, gate_mlp = (
            self._chunk(mod, i) for i in range(6)
        )
        h = modulate(tl.layer_norm(x), shift_msa, scale_msa)
        x = tl.add(x, tl.mul(gate_msa, self.attn(h)))
        h = modulate(tl.layer_norm(x), shift_mlp, scale_mlp)
        h = self.fc2(tl.gelu(self.fc1(h)))
        return tl.add(x, tl.mul(gate_mlp, h))


class FinalLayer(Module):
    """Normalización adaptativa y proyección lineal (inicializada a cero) a la salida."""

    def __init__(
        self, hidden: int, out_features: int, rng: np.random.Generator, dtype="float32"
    ) -> None:
        super().__init__(dtype)
        self.hidden = hidden
        self.ada = self.add_module("ada", Linear(hidden, 2 * hidden, rng, zero=True, dtype=dtype))
        self.linear = self.add_module(
            "linear", Linear(hidden, out_features, rng, zero=True, dtype=dtype)
        )

    def __call__(self, x: tl.Tensor, c: tl.Tensor) -> tl.Tensor:
        batch = x.shape[0]
        mod = tl.reshape(self.ada(tl.silu(c)), (batch, 1, 2 * self.hidden))
        shift = tl.take(mod, 0, self.hidden, axis=-1)
        scale = tl.take(mod, self.hidden, 2 * self.hidden, axis=-1)
        return self.linear(modulate(tl.layer_norm(x), shift, scale))
