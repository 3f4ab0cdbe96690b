"""Contenedor base de parámetros con nombres jerárquicos."""

from typing import Iterator, Mapping

import numpy as np

from app import tensorlab as tl
from app.exceptions import ShapeError


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    """Inicialización Glorot uniforme para una matriz ``fan_in × fan_out``."""
    limit = np.sqrt(6.0 / max(fan_in + fan_out, 1))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


class Module:
    """
    Clase base abstracta para componentes con parámetros entrenables.

    Cada subclase registra sus parámetros con ``add_parameter`` y sus
    submódulos con ``add_module``. Los nombres completos se forman con puntos
    (``blocks.0.attn.qkv.weight``) y son las claves de los checkpoints y del
    estado de Adam.
    """

    def __init__(self, dtype="float32") -> None:
        self.dtype = np.dtype(dtype)
        self._parameters: dict[str, tl.Tensor] = {}
        self._modules: dict[str, "Module"] = {}

    def add_parameter(self, name: str, data: np.ndarray) -> tl.Tensor:
        param = tl.parameter(np.asarray(data), name=name, dtype=self.dtype)
        self._parameters[name] = param
        return param

    def add_module(self, name: str, module: "Module") -> "Module":
        self._modules[name] = module
        return module

    def _walk(self, prefix: str) -> Iterator[tuple[str, tl.Tensor]]:
        for name, param in self._parameters.items():
            yield f"{prefix}{name}", param
        for name, module in self._modules.items():
            yield from module._walk(f"{prefix}{name}.")

    def named_parameters(self) -> dict[str, tl.Tensor]:
        """Parámetros por nombre completo, en orden de registro."""
        return dict(self._walk(""))

    def parameters(self) -> list[tl.Tensor]:
        return list(self.named_parameters().values())

    @property
    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def state(self) -> dict[str, np.ndarray]:
        """Copia de los valores de todos los parámetros."""
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state(self, arrays: Mapping[str, np.ndarray]) -> None:
        """
        Sustituye los valores de los parámetros.

        Args:
            arrays: Valores por nombre completo; deben estar todos y con su forma.

        Raises:
            KeyError: Si falta algún parámetro o sobra alguno.
            ShapeError: Si alguna forma no coincide.
        """
        params = self.named_parameters()
        missing = sorted(set(params) - set(arrays))
        extra = sorted(set(arrays) - set(params))
        if missing or extra:
            raise KeyError(f"Parámetros ausentes: {missing}; desconocidos: {extra}")
        for name, param in params.items():
            value = np.asarray(arrays[name])
            if value.shape != param.shape:
                raise ShapeError(
                    f"Parámetro '{name}' con forma {value.shape}, se esperaba {param.shape}"
                )
            param.data[...] = value.astype(param.dtype, copy=False)

    def as_tensor(self, value) -> tl.Tensor:
        """Convierte una entrada constante a la precisión del módulo."""
        if isinstance(value, tl.Tensor):
            return value
        return tl.Tensor(np.asarray(value), dtype=self.dtype)
