"""Corpus sintéticos: texturas de baja frecuencia y cuadrados en movimiento."""

from typing import Iterator

import numpy as np

SPATIAL_SIZE = 192
TEMPORAL_FRAMES = 32
TEMPORAL_SIZE = 32
_TEXTURE_WAVES = 6
_MAX_FREQUENCY = 4
_MAX_SPEED = 3


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Flujo aleatorio de la muestra ``index`` dentro de un corpus con semilla ``seed``."""
    return np.random.default_rng([int(seed), int(index)])


def texture(rng: np.random.Generator, size: int = SPATIAL_SIZE, channels: int = 1) -> np.ndarray:
    """
    Textura de Fourier de baja frecuencia con un gradiente global.

    Returns:
        np.ndarray: uint8 ``size × size × channels``.
    """
    y, x = np.mgrid[0:size, 0:size].astype(np.float64) / size
    planes = []
    for _ in range(channels):
        field = np.zeros((size, size))
        for _ in range(_TEXTURE_WAVES):
            fx, fy = rng.integers(-_MAX_FREQUENCY, _MAX_FREQUENCY + 1, size=2)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            amplitude = rng.uniform(0.3, 1.0)
            field += amplitude * np.cos(2.0 * np.pi * (fx * x + fy * y) + phase)
        gx, gy = rng.uniform(-1.5, 1.5, size=2)
        field += gx * x + gy * y
        field -= field.min()
        peak = field.max()
        planes.append(field / peak if peak > 0 else field)
    image = np.stack(planes, axis=-1)
    return np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)


def moving_squares(
    rng: np.random.Generator,
    frames: int = TEMPORAL_FRAMES,
    size: int = TEMPORAL_SIZE,
) -> np.ndarray:
    """
    Uno o dos cuadrados con velocidad constante que rebotan en los bordes.

    Returns:
        np.ndarray: uint8 ``frames × size × size × 1``.
    """
    count = int(rng.integers(1, 3))
    video = np.zeros((frames, size, size, 1), dtype=np.uint8)
    for _ in range(count):
        side = int(rng.integers(max(2, size // 6), max(3, size // 3) + 1))
        limit = size - side
        pos = rng.integers(0, limit + 1, size=2).astype(np.int64)
        vel = rng.integers(1, _MAX_SPEED + 1, size=2) * rng.choice([-1, 1], size=2)
        brightness = int(rng.integers(160, 256))
        for t in range(frames):
            y, x = pos
            block = video[t, y : y + side, x : x + side, 0]
            np.maximum(block, brightness, out=block)
            pos = pos + vel
            for axis in range(2):
                if pos[axis] < 0:
                    pos[axis] = -pos[axis]
                    vel[axis] = -vel[axis]
                elif pos[axis] > limit:
                    pos[axis] = 2 * limit - pos[axis]
                    vel[axis] = -vel[axis]
    return video


def synth_spatial(
    seed: int, count: int, size: int = SPATIAL_SIZE, channels: int = 1
) -> Iterator[np.ndarray]:
    """Genera ``count`` texturas; la muestra ``k`` solo depende de ``(seed, k)``."""
    for index in range(count):
        yield texture(sample_rng(seed, index), size=size, channels=channels)


def synth_temporal(
    seed: int, count: int, frames: int = TEMPORAL_FRAMES, size: int = TEMPORAL_SIZE
) -> Iterator[np.ndarray]:
    """Genera ``count`` secuencias de cuadrados en movimiento."""
    for index in range(count):
        yield moving_squares(sample_rng(seed, index), frames=frames, size=size)
