"""Dense tensors and a reverse-mode gradient tape.

Every differentiable computation in the package is expressed through the
primitives in this module (or through :func:`primitive`, which other modules
use to register their own adjoint rules). Operations record themselves on the
innermost active :class:`GradTape`; :meth:`GradTape.backward` replays the
recorded adjoints in exact reverse order.

Shapes are checked strictly. The only implicit broadcast is adding a length-D
bias vector to every row of an N x D matrix.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "NonFiniteError",
    "ShapeError",
    "Tensor",
    "GradTape",
    "as_tensor",
    "primitive",
    "backward",
    "grad_check",
    "grad_check_params",
    "matmul",
    "add",
    "sub",
    "mul",
    "mul_rows",
    "scale",
    "add_scalar",
    "neg",
    "sum_all",
    "mean_all",
    "abs_",
    "exp",
    "tanh",
    "gelu",
    "silu",
    "softmax_rows",
    "layernorm",
    "transpose",
    "reshape",
    "slice_cols",
    "concat_cols",
]

DEFAULT_DTYPE = np.float64


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class Tensor:
    """An immutable n-d array, optionally tracked for gradients.

    ``requires_grad`` marks leaves whose gradients are wanted; results of
    operations inherit it from their inputs.
    """

    __slots__ = ("_data", "requires_grad", "name", "_recorded")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=DEFAULT_DTYPE if not _is_float(data) else None, copy=True)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        arr.setflags(write=False)
        self._data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._recorded = False

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    def numpy(self) -> np.ndarray:
        return self._data.copy()

    def item(self) -> float:
        return float(self._data.reshape(-1)[0]) if self._data.size == 1 else _not_scalar(self)

    def __array__(self, dtype=None, copy=None):
        return self._data if dtype is None else self._data.astype(dtype)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar; all routes go through the checked primitives
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_scalar(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_scalar(self, -other)

    def __rsub__(self, other):
        return add_scalar(neg(self), other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self) -> "Tensor":
        return sum_all(self)

    def mean(self) -> "Tensor":
        return mean_all(self)


def _is_float(data) -> bool:
    return isinstance(data, np.ndarray) and data.dtype.kind == "f"


def _not_scalar(t: Tensor):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------

_ACTIVE: list["GradTape"] = []


class GradTape:
    """Ordered record of executed primitives.

    Use as a context manager; every primitive whose output requires a
    gradient is appended in execution order. One tape per step, never shared
    across threads.
    """

    def __init__(self):
        # (output, inputs, vjp, op name)
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable, str]] = []

    def __enter__(self) -> "GradTape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor, wrt: Iterable[Tensor] | None = None):
        return backward(loss, self, wrt)


def primitive(
    op: str,
    out: np.ndarray,
    inputs: Sequence[Tensor],
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]],
) -> Tensor:
    """Wrap ``out`` as a Tensor produced by ``op`` and record its adjoint.

    ``vjp(g)`` receives the output cotangent and returns one cotangent (or
    None) per input, in order.
    """
    out = np.asarray(out)
    if out.dtype.kind != "f":
        out = out.astype(DEFAULT_DTYPE)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{op} produced non-finite values")
    needs = any(t.requires_grad for t in inputs)
    result = Tensor.__new__(Tensor)
    out.setflags(write=False)
    result._data = out
    result.requires_grad = needs
    result.name = None
    result._recorded = False
    if needs and _ACTIVE:
        _ACTIVE[-1].records.append((result, tuple(inputs), vjp, op))
        result._recorded = True
    return result


def backward(loss: Tensor, tape: GradTape, wrt: Iterable[Tensor] | None = None):
    """Reverse-mode adjoints of a scalar ``loss``.

    Returns a dict keyed by tensor. With ``wrt`` given, exactly those tensors
    are keys and tensors the loss never touched get exact zeros; otherwise
    every leaf that received a gradient is returned.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for out, inputs, vjp, _ in reversed(tape.records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for t, gt in zip(inputs, vjp(g)):
            if gt is None or not t.requires_grad:
                continue
            if gt.shape != t.shape:
                gt = gt.reshape(t.shape)
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gt
            else:
                grads[key] = gt
            if not t._recorded:
                leaves[key] = t
    if wrt is None:
        return {t: grads[k] for k, t in leaves.items()}
    return {t: grads.get(id(t), np.zeros_like(t.data)) for t in wrt}


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    A, B = a.data, b.data
    ra, rb = a.requires_grad, b.requires_grad

    def vjp(g):
        return (g @ B.T if ra else None, A.T @ g if rb else None)

    return primitive("matmul", A @ B, (a, b), vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape == b.shape:
        return primitive("add", a.data + b.data, (a, b), lambda g: (g, g))
    if a.ndim == 2 and b.ndim == 1 and b.shape[0] == a.shape[1]:
        return primitive("add_bias", a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0)))
    raise ShapeError(f"add shape mismatch: {a.shape} + {b.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub shape mismatch: {a.shape} - {b.shape}")
    return primitive("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul shape mismatch: {a.shape} * {b.shape}")
    A, B = a.data, b.data
    ra, rb = a.requires_grad, b.requires_grad
    return primitive("mul", A * B, (a, b), lambda g: (g * B if ra else None, g * A if rb else None))


def mul_rows(x: Tensor, v: Tensor) -> Tensor:
    """Multiply every row of an N x D matrix elementwise by a D-vector."""
    if x.ndim != 2 or v.shape != (x.shape[1],):
        raise ShapeError(f"mul_rows shape mismatch: {x.shape} * {v.shape}")
    X, Vv = x.data, v.data
    return primitive("mul_rows", X * Vv, (x, v), lambda g: (g * Vv, (g * X).sum(axis=0)))


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return primitive("scale", x.data * c, (x,), lambda g: (g * c,))


def add_scalar(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return primitive("add_scalar", x.data + c, (x,), lambda g: (g,))


def neg(x: Tensor) -> Tensor:
    return primitive("neg", -x.data, (x,), lambda g: (-g,))


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return primitive("sum", np.sum(x.data), (x,), lambda g: (np.full(shape, g),))


def mean_all(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return primitive("mean", np.sum(x.data) / n, (x,), lambda g: (np.full(shape, g / n),))


def abs_(x: Tensor) -> Tensor:
    sign = np.sign(x.data)
    return primitive("abs", np.abs(x.data), (x,), lambda g: (g * sign,))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return primitive("exp", y, (x,), lambda g: (g * y,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return primitive("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    X = x.data
    X2 = X * X
    t = np.tanh(_GELU_C * X * (1.0 + 0.044715 * X2))
    y = 0.5 * X * (1.0 + t)

    def vjp(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * X2)
        return (g * (0.5 * (1.0 + t) + 0.5 * X * (1.0 - t * t) * du),)

    return primitive("gelu", y, (x,), vjp)


def silu(x: Tensor) -> Tensor:
    X = x.data
    s = 1.0 / (1.0 + np.exp(-X))
    return primitive("silu", X * s, (x,), lambda g: (g * (s * (1.0 + X * (1.0 - s))),))


def softmax_rows(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"softmax_rows expects a matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x.data)):
        raise NonFiniteError("softmax_rows received non-finite input")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return primitive("softmax_rows", y, (x,), vjp)


def layernorm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise normalization to zero mean and unit variance (no affine)."""
    if x.ndim != 2 or x.shape[1] < 2:
        raise ShapeError(f"layernorm expects N x D with D >= 2, got {x.shape}")
    X = x.data
    mu = X.mean(axis=1, keepdims=True)
    xc = X - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv

    def vjp(g):
        gm = g.mean(axis=1, keepdims=True)
        gy = (g * y).mean(axis=1, keepdims=True)
        return (inv * (g - gm - y * gy),)

    return primitive("layernorm", y, (x,), vjp)


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {x.shape}")
    return primitive("transpose", x.data.T.copy(), (x,), lambda g: (g.T,))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")
    old = x.shape
    return primitive("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    if x.ndim != 2 or not 0 <= start < stop <= x.shape[1]:
        raise ShapeError(f"bad column slice [{start}:{stop}] of {x.shape}")
    shape = x.shape

    def vjp(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return primitive("slice_cols", x.data[:, start:stop].copy(), (x,), vjp)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1 or any(p.ndim != 2 for p in parts):
        raise ShapeError(f"concat_cols needs matrices with equal row counts: {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def vjp(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return primitive("concat_cols", np.concatenate([p.data for p in parts], axis=1), tuple(parts), vjp)


# ---------------------------------------------------------------------------
# finite-difference checks
# ---------------------------------------------------------------------------


# Round-off alone perturbs a central difference by about eps*|f|/step. The
# denominator floor sits 1e5 above that, so a gradient that is zero by
# structure (e.g. a shift every softmax row cancels) is not scored on noise.
_NOISE_MARGIN = 1e5


def _floor(f0: float, step: float) -> float:
    return max(1e-8, _NOISE_MARGIN * np.finfo(np.float64).eps * max(1.0, abs(f0)) / step)


def _rel_err(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def grad_check(
    f: Callable[[Tensor], Tensor],
    x,
    step: float = 1e-5,
    max_components: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` maps a tensor to a scalar tensor. With ``max_components`` set, only
    that many randomly chosen coordinates are differenced.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x0 = np.array(x, dtype=DEFAULT_DTYPE)
    leaf = Tensor(x0, requires_grad=True)
    with GradTape() as tape:
        loss = f(leaf)
    analytic = backward(loss, tape, [leaf])[leaf]
    idx = _pick(x0.size, max_components, seed)
    floor = _floor(float(loss.data), step)
    worst = 0.0
    flat = x0.reshape(-1)
    for i in idx:
        fd = _central(lambda v: float(f(Tensor(v.reshape(x0.shape))).data), flat, i, step)
        worst = max(worst, _rel_err(float(analytic.reshape(-1)[i]), fd, floor))
    return worst


def grad_check_params(
    loss_fn: Callable[[Mapping[str, Tensor]], Tensor],
    params: Mapping[str, np.ndarray],
    step: float = 1e-5,
    per_param: int | None = None,
    seed: int = 0,
) -> tuple[float, str]:
    """Finite-difference check over a named parameter set.

    Returns the worst relative error and the name of the parameter it came
    from. ``per_param`` caps the number of coordinates sampled per array.
    """
    leaves = {k: Tensor(np.asarray(v, dtype=DEFAULT_DTYPE), requires_grad=True) for k, v in params.items()}
    with GradTape() as tape:
        loss = loss_fn(leaves)
    grads = backward(loss, tape, leaves.values())
    floor = _floor(float(loss.data), step)
    worst, worst_name = 0.0, ""
    for j, (name, leaf) in enumerate(leaves.items()):
        base = np.array(params[name], dtype=DEFAULT_DTYPE)
        flat = base.reshape(-1)
        analytic = grads[leaf].reshape(-1)

        def f_at(v, name=name, shape=base.shape):
            trial = {k: (Tensor(v.reshape(shape)) if k == name else Tensor(leaves[k].data)) for k in leaves}
            return float(loss_fn(trial).data)

        for i in _pick(flat.size, per_param, seed + j):
            err = _rel_err(float(analytic[i]), _central(f_at, flat, i, step), floor)
            if err > worst:
                worst, worst_name = err, name
    return worst, worst_name


def _pick(n: int, limit: int | None, seed: int) -> np.ndarray:
    if limit is None or limit >= n:
        return np.arange(n)
    return np.sort(np.random.default_rng(seed).choice(n, size=limit, replace=False))


def _central(f: Callable[[np.ndarray], float], flat: np.ndarray, i: int, step: float) -> float:
    v = flat.copy()
    v[i] = flat[i] + step
    fp = f(v)
    v[i] = flat[i] - step
    fm = f(v)
    return (fp - fm) / (2 * step)
