"""
Sustrato numérico denso sobre numpy con diferenciación en modo reverso.

Las operaciones se registran en la cinta (``GradTape``) activa del contexto
actual. Fuera de una cinta las operaciones solo calculan valores, que es el
modo usado durante la inferencia.

Regla de broadcasting: los operandos deben tener la misma forma, o bien uno
de ellos coincide con los ejes finales del otro (ejes de lote iniciales), o
bien ambos tienen el mismo rango y las diferencias son ejes de extensión 1
introducidos explícitamente con ``reshape``.
"""

import contextvars
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import erf, expit

from app.config import settings
from app.exceptions import NumericError, ShapeError

logger = logging.getLogger(__name__)

LAYER_NORM_EPS = 1e-6
_SQRT_2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

_current_tape: contextvars.ContextVar["GradTape | None"] = contextvars.ContextVar(
    "tensorlab_tape", default=None
)


def default_dtype() -> np.dtype:
    """Precisión configurada para tensores nuevos."""
    return np.dtype(settings.dtype)


class Tensor:
    """
    Arreglo denso en orden row-major con metadatos para el cálculo de gradientes.

    Attributes:
        data: Valores (``numpy.ndarray`` float32 o float64).
        requires_grad: Si el tensor participa en la cinta.
        name: Nombre opcional (parámetros).
        tape: Cinta que produjo el tensor, si fue registrado.
    """

    __slots__ = ("data", "requires_grad", "name", "tape")

    def __init__(
        self,
        data,
        *,
        requires_grad: bool = False,
        name: str | None = None,
        dtype=None,
    ) -> None:
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
                dtype = data.dtype
            else:
                dtype = default_dtype()
        self.data = np.array(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.name = name
        self.tape: GradTape | None = None

    @classmethod
    def _wrap(cls, array: np.ndarray, requires_grad: bool = False) -> "Tensor":
        tensor = cls.__new__(cls)
        tensor.data = array
        tensor.requires_grad = requires_grad
        tensor.name = None
        tensor.tape = None
        return tensor

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"<Tensor shape={self.shape} dtype={self.dtype}{label}>"

    def __add__(self, other) -> "Tensor":
        return add(self, as_tensor(other, like=self))

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        return sub(self, as_tensor(other, like=self))

    def __rsub__(self, other) -> "Tensor":
        return sub(as_tensor(other, like=self), self)

    def __mul__(self, other) -> "Tensor":
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, as_tensor(other, like=self))

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        if not np.isscalar(other):
            raise ShapeError("Solo se admite división por escalares")
        return scale(self, 1.0 / float(other))

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)


def parameter(data, name: str, dtype=None) -> Tensor:
    """Crea un tensor entrenable con nombre."""
    return Tensor(data, requires_grad=True, name=name, dtype=dtype)


def as_tensor(value, like: Tensor | None = None) -> Tensor:
    """Convierte escalares o arreglos en tensores constantes."""
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(value, dtype=dtype)


@dataclass
class TapeEntry:
    """Operación primitiva registrada en la cinta."""

    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    forward: Callable[..., np.ndarray]
    vjp: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]


class GradTape:
    """
    Registro ordenado de operaciones primitivas.

    Se usa como context manager; las operaciones ejecutadas dentro del bloque
    cuyos operandos requieren gradiente quedan registradas. Cada contexto
    (hilo) tiene su propia cinta activa.
    """

    def __init__(self) -> None:
        self.entries: list[TapeEntry] = []
        self._token: contextvars.Token | None = None

    def __enter__(self) -> "GradTape":
        self._token = _current_tape.set(self)
        return self

    def __exit__(self, *exc_info) -> bool:
        _current_tape.reset(self._token)
        self._token = None
        return False

    def __len__(self) -> int:
        return len(self.entries)

    def replay(self) -> list[np.ndarray]:
        """
        Vuelve a ejecutar las operaciones registradas a partir de las hojas.

        Returns:
            list[np.ndarray]: Salida recalculada de cada entrada de la cinta.
        """
        values: dict[int, np.ndarray] = {}
        outputs = []
        for entry in self.entries:
            arrays = [values.get(id(t), t.data) for t in entry.inputs]
            result = entry.forward(*arrays)
            values[id(entry.output)] = result
            outputs.append(result)
        return outputs


def _apply(
    op: str,
    inputs: Sequence[Tensor],
    forward: Callable[..., np.ndarray],
    vjp_factory: Callable[..., Callable[[np.ndarray], tuple]],
) -> Tensor:
    arrays = [t.data for t in inputs]
    out = forward(*arrays)
    if settings.debug and out.size and not np.all(np.isfinite(out)):
        raise NumericError(f"Valores no finitos tras '{op}' con forma {out.shape}")
    tape = _current_tape.get()
    tracked = tape is not None and any(t.requires_grad for t in inputs)
    result = Tensor._wrap(out, requires_grad=tracked)
    if tracked:
        vjp = vjp_factory(*arrays, out)
        tape.entries.append(TapeEntry(op, tuple(inputs), result, forward, vjp))
        result.tape = tape
    return result


def _broadcast_shape(a: tuple[int, ...], b: tuple[int, ...], op: str) -> tuple[int, ...]:
    """
    Forma resultante de una operación elemento a elemento.

    Con rangos distintos, el menor debe coincidir con la cola del mayor (ejes de
    lote iniciales). Con el mismo rango se admiten ejes de tamaño 1, que usan las
    máscaras ``B × N × 1`` y la modulación ``B × 1 × H``.
    """
    if a == b:
        return a
    if len(a) != len(b):
        long, short = (a, b) if len(a) > len(b) else (b, a)
        if long[len(long) - len(short):] == short:
            return long
        raise ShapeError(f"{op}: formas incompatibles {a} y {b}")
    out = []
    for x, y in zip(a, b):
        if x == y or y == 1:
            out.append(x)
        elif x == 1:
            out.append(y)
        else:
            raise ShapeError(f"{op}: formas incompatibles {a} y {b}")
    return tuple(out)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Operaciones elementales
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape, "add")
    return _apply(
        "add",
        (a, b),
        np.add,
        lambda x, y, out: lambda g: (_unbroadcast(g, x.shape), _unbroadcast(g, y.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape, "sub")
    return _apply(
        "sub",
        (a, b),
        np.subtract,
        lambda x, y, out: lambda g: (_unbroadcast(g, x.shape), _unbroadcast(-g, y.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape, "mul")
    return _apply(
        "mul",
        (a, b),
        np.multiply,
        lambda x, y, out: lambda g: (
            _unbroadcast(g * y, x.shape),
            _unbroadcast(g * x, y.shape),
        ),
    )


def scale(a: Tensor, factor: float) -> Tensor:
    return _apply(
        "scale",
        (a,),
        lambda x: x * x.dtype.type(factor),
        lambda x, out: lambda g: (g * g.dtype.type(factor),),
    )


def square(a: Tensor) -> Tensor:
    return _apply("square", (a,), np.square, lambda x, out: lambda g: (2 * g * x,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Producto matricial sobre los dos últimos ejes.

    Args:
        a: Tensor ``[..., m, k]``.
        b: Tensor ``[k, n]`` o ``[..., k, n]`` con los mismos ejes de lote.

    Returns:
        Tensor: ``[..., m, n]``.

    Raises:
        ShapeError: Si las extensiones internas o los ejes de lote no coinciden.
    """
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: formas incompatibles {a.shape} y {b.shape}")
    _broadcast_shape(a.shape[:-2], b.shape[:-2], "matmul")

    def vjp_factory(x, y, out):
        def vjp(g):
            ga = np.matmul(g, np.swapaxes(y, -1, -2))
            gb = np.matmul(np.swapaxes(x, -1, -2), g)
            return _unbroadcast(ga, x.shape), _unbroadcast(gb, y.shape)

        return vjp

    return _apply("matmul", (a, b), np.matmul, vjp_factory)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    return _apply(
        "reshape",
        (a,),
        lambda x: x.reshape(shape),
        lambda x, out: lambda g: (g.reshape(x.shape),),
    )


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _apply(
        "transpose",
        (a,),
        lambda x: np.transpose(x, axes),
        lambda x, out: lambda g: (np.transpose(g, inverse),),
    )


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(tensors)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref):
            raise ShapeError(f"concat: rangos distintos {ref} y {t.shape}")
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def vjp_factory(*arrays):
        return lambda g: tuple(np.split(g, cuts, axis=axis))

    return _apply(
        "concat",
        tensors,
        lambda *xs: np.concatenate(xs, axis=axis),
        vjp_factory,
    )


def take(a: Tensor, start: int, stop: int, axis: int = -1) -> Tensor:
    """Corte contiguo ``[start:stop]`` a lo largo de un eje."""
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def vjp_factory(x, out):
        def vjp(g):
            full = np.zeros_like(x)
            full[index] = g
            return (full,)

        return vjp

    return _apply("take", (a,), lambda x: x[index], vjp_factory)


def sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    def vjp_factory(x, out):
        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, x.shape),)

        return vjp

    return _apply(
        "sum",
        (a,),
        lambda x: np.asarray(np.sum(x, axis=axis, keepdims=keepdims)),
        vjp_factory,
    )


def mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else a.shape[axis]
    total = sum(a, axis=axis, keepdims=keepdims)
    if count == 0:
        return total
    return scale(total, 1.0 / count)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Error cuadrático medio sobre todos los elementos."""
    return mean(square(sub(a, b)))


# ---------------------------------------------------------------------------
# Funciones no lineales
# ---------------------------------------------------------------------------


def softmax(v: Tensor, axis: int = -1) -> Tensor:
    """Softmax estable (resta del máximo) a lo largo de ``axis``."""

    def forward(x):
        shifted = x - np.max(x, axis=axis, keepdims=True)
        e = np.exp(shifted)
        return e / np.sum(e, axis=axis, keepdims=True)

    def vjp_factory(x, y):
        return lambda g: (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _apply("softmax", (v,), forward, vjp_factory)


def _normalize(v: Tensor, axis: int, eps: float) -> Tensor:
    def forward(x):
        centered = x - np.mean(x, axis=axis, keepdims=True)
        var = np.mean(centered * centered, axis=axis, keepdims=True)
        return centered / np.sqrt(var + x.dtype.type(eps))

    def vjp_factory(x, xhat):
        centered = x - np.mean(x, axis=axis, keepdims=True)
        inv_std = 1.0 / np.sqrt(np.mean(centered * centered, axis=axis, keepdims=True) + eps)
        inv_std = inv_std.astype(x.dtype)

        def vjp(g):
            g_mean = np.mean(g, axis=axis, keepdims=True)
            gx_mean = np.mean(g * xhat, axis=axis, keepdims=True)
            return (inv_std * (g - g_mean - xhat * gx_mean),)

        return vjp

    return _apply("normalize", (v,), forward, vjp_factory)


def layer_norm(
    v: Tensor,
    scale: Tensor | float | None = None,
    shift: Tensor | float | None = None,
    axis: int = -1,
    eps: float = LAYER_NORM_EPS,
) -> Tensor:
    """
    Normalización a media cero y varianza unitaria seguida de una afinidad.

    Args:
        v: Tensor de entrada.
        scale: Factor multiplicativo (tensor o escalar); ``None`` equivale a 1.
        shift: Desplazamiento (tensor o escalar); ``None`` equivale a 0.
        axis: Eje normalizado.
        eps: Estabilizador de la varianza.

    Returns:
        Tensor: Misma forma que ``v``.
    """
    if v.shape[axis] < 1:
        raise ShapeError(f"layer_norm: eje {axis} vacío en forma {v.shape}")
    out = _normalize(v, axis, eps)
    if scale is not None:
        out = out * scale if np.isscalar(scale) else mul(out, scale)
    if shift is not None:
        out = add(out, as_tensor(shift, like=out))
    return out


def gelu(v: Tensor) -> Tensor:
    """GELU exacta, ``0.5·x·(1 + erf(x/√2))``."""

    def forward(x):
        return (0.5 * x * (1.0 + erf(x / _SQRT_2))).astype(x.dtype)

    def vjp_factory(x, out):
        cdf = 0.5 * (1.0 + erf(x / _SQRT_2))
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        deriv = (cdf + x * pdf).astype(x.dtype)
        return lambda g: (g * deriv,)

    return _apply("gelu", (v,), forward, vjp_factory)


def silu(v: Tensor) -> Tensor:
    def forward(x):
        return (x * expit(x)).astype(x.dtype)

    def vjp_factory(x, out):
        s = expit(x)
        deriv = (s * (1.0 + x * (1.0 - s))).astype(x.dtype)
        return lambda g: (g * deriv,)

    return _apply("silu", (v,), forward, vjp_factory)


# ---------------------------------------------------------------------------
# Gradientes
# ---------------------------------------------------------------------------


@dataclass
class Gradients:
    """Gradientes por nombre de parámetro con diagnóstico de desconexión."""

    values: dict[str, np.ndarray]
    disconnected: tuple[str, ...] = ()

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __iter__(self):
        return iter(self.values)

    def items(self):
        return self.values.items()


def _named(params: Mapping[str, Tensor] | Iterable[Tensor]) -> list[tuple[str, Tensor]]:
    if isinstance(params, Mapping):
        return list(params.items())
    return [(p.name or f"param{i}", p) for i, p in enumerate(params)]


def backward(
    loss: Tensor,
    params: Mapping[str, Tensor] | Iterable[Tensor],
    tape: GradTape | None = None,
) -> Gradients:
    """
    Calcula los gradientes de una pérdida escalar respecto a los parámetros.

    Args:
        loss: Tensor escalar registrado en una cinta.
        params: Parámetros (por nombre o en secuencia).
        tape: Cinta a recorrer; por defecto la que produjo ``loss``.

    Returns:
        Gradients: Gradientes con la forma de cada parámetro. Los parámetros
        sin conexión con la pérdida reciben cero y se listan en
        ``disconnected``.

    Raises:
        ShapeError: Si la pérdida no es escalar.
    """
    if loss.size != 1:
        raise ShapeError(f"backward requiere una pérdida escalar, forma {loss.shape}")
    tape = tape or loss.tape
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    if tape is not None:
        for entry in reversed(tape.entries):
            g = grads.pop(id(entry.output), None)
            if g is None:
                continue
            for tensor, gi in zip(entry.inputs, entry.vjp(g)):
                if gi is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                grads[key] = grads[key] + gi if key in grads else gi

    values: dict[str, np.ndarray] = {}
    disconnected = []
    for name, param in _named(params):
        g = grads.get(id(param))
        if g is None:
            disconnected.append(name)
            g = np.zeros_like(param.data)
        values[name] = np.asarray(g, dtype=param.dtype).reshape(param.shape)
    if disconnected:
        logger.warning(f"Parámetros sin conexión con la pérdida: {', '.join(disconnected)}")
    return Gradients(values=values, disconnected=tuple(disconnected))


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Estado del optimizador Adam con corrección de sesgo."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    state: AdamState,
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray] | Gradients,
) -> AdamState:
    """
    Aplica un paso de Adam actualizando los parámetros en sitio.

    Un parámetro cuyo gradiente es nulo en todos sus elementos no se mueve en
    ese paso; sus momentos sí decaen.

    Args:
        state: Estado del optimizador (se actualiza en sitio).
        params: Parámetros por nombre.
        grads: Gradientes por nombre.

    Returns:
        AdamState: El mismo estado, con el contador incrementado.

    Raises:
        ShapeError: Si algún gradiente no tiene la forma de su parámetro.
        NumericError: Si algún gradiente contiene NaN/Inf; no se aplica el paso.
    """
    values = grads.values if isinstance(grads, Gradients) else grads
    for name, param in params.items():
        g = values[name]
        if g.shape != param.shape:
            raise ShapeError(
                f"Gradiente de '{name}' con forma {g.shape}, se esperaba {param.shape}"
            )
        if not np.all(np.isfinite(g)):
            raise NumericError(f"Gradiente no finito en el parámetro '{name}'")

    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for name, param in params.items():
        g = values[name].astype(param.dtype, copy=False)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(param.data)
            v = np.zeros_like(param.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        if np.any(g):
            m_hat = m / bc1
            v_hat = v / bc2
            update = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
            param.data -= update.astype(param.dtype, copy=False)
        state.m[name] = m.astype(param.dtype, copy=False)
        state.v[name] = v.astype(param.dtype, copy=False)
    return state
