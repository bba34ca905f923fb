# hargnn/numerics.py
"""
Dense tensor arithmetic with reverse-mode gradients.

`TensorValue` wraps a float64 numpy array. Operations executed while a
`ComputationTape` is active (and with at least one input requiring grad)
append a record holding the adjoint rule; `ComputationTape.backward` replays
those records in exact reverse order. Outside a tape the same functions run
as plain inference.
"""

import logging
import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DataError, DimensionError, TapeError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, Sequence, float, int]


class TensorValue:
    """Dense float64 array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        self.data: np.ndarray = np.ascontiguousarray(np.array(data, dtype=np.float64))
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @classmethod
    def _from_op(cls, data: np.ndarray) -> "TensorValue":
        out = cls.__new__(cls)
        out.data = np.ascontiguousarray(data, dtype=np.float64)
        out.data.flags.writeable = False
        out.requires_grad = False
        out.grad = None
        out.name = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return np.array(self.data, copy=True)

    def zero_grad(self):
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"TensorValue(shape={self.shape}{label}, requires_grad={self.requires_grad})"


def as_tensor(value: Union[TensorValue, ArrayLike]) -> TensorValue:
    """Wraps arrays and scalars as constant tensors; tensors pass through."""
    if isinstance(value, TensorValue):
        return value
    return TensorValue(value)


# --- Tape ---

_tape_state = threading.local()


def active_tape() -> Optional["ComputationTape"]:
    return getattr(_tape_state, "tape", None)


@dataclass
class TapeRecord:
    op: str
    inputs: Tuple[TensorValue, ...]
    output: TensorValue
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class ComputationTape:
    """
    Ordered record of executed operations.

    Use as a context manager; the tape is thread-local so independent
    threads may record their own forward passes. A tape may be replayed by
    `backward` exactly once; a second call raises `TapeError`.
    """

    records: List[TapeRecord] = field(default_factory=list)
    consumed: bool = False
    _previous: Optional["ComputationTape"] = field(default=None, repr=False)

    def __enter__(self) -> "ComputationTape":
        self._previous = active_tape()
        _tape_state.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_state.tape = self._previous
        self._previous = None
        return False

    def record(self, rec: TapeRecord):
        if self.consumed:
            raise TapeError("cannot record onto a tape that was already replayed")
        self.records.append(rec)

    def clear(self):
        """Drops every recorded intermediate; leaf tensors are untouched."""
        self.records.clear()

    def backward(self, output: TensorValue, seed: Optional[ArrayLike] = None):
        """
        Propagates adjoints from `output` to every leaf tensor requiring grad.

        Leaf gradients are accumulated into `.grad`. Afterwards the tape is
        cleared and marked consumed.
        """
        if self.consumed:
            raise TapeError("backward already executed on this tape; re-run the forward pass")
        if seed is None:
            if output.size != 1:
                raise DimensionError("backward", output.shape, detail="non-scalar output needs an explicit seed")
            seed_arr = np.ones(output.shape)
        else:
            seed_arr = np.broadcast_to(np.asarray(seed, dtype=np.float64), output.shape).copy()

        pending: Dict[int, Tuple[TensorValue, np.ndarray]] = {id(output): (output, seed_arr)}
        for rec in reversed(self.records):
            entry = pending.pop(id(rec.output), None)
            if entry is None:
                continue
            upstream = entry[1]
            for inp, g in zip(rec.inputs, rec.backward(upstream)):
                if g is None or not inp.requires_grad:
                    continue
                prev = pending.get(id(inp))
                pending[id(inp)] = (inp, g if prev is None else prev[1] + g)

        for tensor, g in pending.values():
            if not tensor.requires_grad:
                continue
            tensor.grad = g.copy() if tensor.grad is None else tensor.grad + g

        self.clear()
        self.consumed = True


def _emit(op: str, data: np.ndarray, inputs: Tuple[TensorValue, ...],
          backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> TensorValue:
    out = TensorValue._from_op(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(TapeRecord(op, inputs, out, backward))
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sums `grad` down to `shape` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: TensorValue, b: TensorValue) -> Tuple[int, ...]:
    try:
        return tuple(np.broadcast_shapes(a.shape, b.shape))
    except ValueError:
        raise DimensionError(op, a.shape, b.shape) from None


# --- Linear algebra ---

def matmul(a: TensorValue, b: TensorValue) -> TensorValue:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError("matmul", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError("matmul", a.shape, b.shape, detail="batch dimensions") from None
    a_data, b_data = a.data, b.data
    need_a, need_b = a.requires_grad, b.requires_grad

    def backward(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b_data, -1, -2)), a_data.shape) if need_a else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a_data, -1, -2), g), b_data.shape) if need_b else None
        return ga, gb

    return _emit("matmul", np.matmul(a_data, b_data), (a, b), backward)


def add(a: TensorValue, b: TensorValue) -> TensorValue:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _emit("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: TensorValue, b: TensorValue) -> TensorValue:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _emit("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a: TensorValue, b: TensorValue) -> TensorValue:
    """Elementwise product with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    a_data, b_data = a.data, b.data
    return _emit("mul", a_data * b_data, (a, b),
                 lambda g: (_unbroadcast(g * b_data, a_data.shape), _unbroadcast(g * a_data, b_data.shape)))


def scale(a: TensorValue, factor: float) -> TensorValue:
    a = as_tensor(a)
    factor = float(factor)
    return _emit("scale", a.data * factor, (a,), lambda g: (g * factor,))


def sum_all(a: TensorValue) -> TensorValue:
    a = as_tensor(a)
    shape = a.shape
    return _emit("sum_all", np.array(a.data.sum()), (a,),
                 lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_axis(x: TensorValue, axis: int) -> TensorValue:
    """Arithmetic mean along `axis`; the axis is removed."""
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError("mean_axis", x.shape, detail=f"axis {axis} out of range for rank {x.ndim}")
    axis = axis % x.ndim
    n = x.shape[axis]
    shape = x.shape

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / n, shape).copy(),)

    return _emit("mean_axis", x.data.mean(axis=axis), (x,), backward)


# --- Shape manipulation ---

def reshape(x: TensorValue, shape: Sequence[int]) -> TensorValue:
    x = as_tensor(x)
    old = x.shape
    try:
        data = x.data.reshape(tuple(shape))
    except ValueError:
        raise DimensionError("reshape", old, tuple(shape)) from None
    return _emit("reshape", data, (x,), lambda g: (g.reshape(old),))


def transpose(x: TensorValue, axes: Optional[Sequence[int]] = None) -> TensorValue:
    """Permutes axes; the default swaps the last two."""
    x = as_tensor(x)
    if axes is None:
        if x.ndim < 2:
            raise DimensionError("transpose", x.shape, detail="rank < 2")
        axes = list(range(x.ndim - 2)) + [x.ndim - 1, x.ndim - 2]
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError("transpose", x.shape, detail=f"bad permutation {axes}")
    inverse = tuple(np.argsort(axes))
    return _emit("transpose", np.transpose(x.data, axes), (x,),
                 lambda g: (np.transpose(g, inverse),))


def stack(tensors: Sequence[TensorValue], axis: int = 0) -> TensorValue:
    tensors = tuple(as_tensor(t) for t in tensors)
    if not tensors:
        raise DimensionError("stack", (), detail="no tensors")
    first = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != first:
            raise DimensionError("stack", first, t.shape)
    out_axis = axis % (len(first) + 1)

    def backward(g):
        return tuple(np.take(g, i, axis=out_axis) for i in range(len(tensors)))

    return _emit("stack", np.stack([t.data for t in tensors], axis=out_axis), tensors, backward)


def concat(tensors: Sequence[TensorValue], axis: int = -1) -> TensorValue:
    tensors = tuple(as_tensor(t) for t in tensors)
    if not tensors:
        raise DimensionError("concat", (), detail="no tensors")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError("concat", *[t.shape for t in tensors]) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _emit("concat", data, tensors, backward)


def take(x: TensorValue, index: int, axis: int) -> TensorValue:
    """Selects one position along `axis`, removing that axis."""
    x = as_tensor(x)
    axis = axis % x.ndim
    if not -x.shape[axis] <= index < x.shape[axis]:
        raise DimensionError("take", x.shape, detail=f"index {index} on axis {axis}")
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        sl = [slice(None)] * len(shape)
        sl[axis] = index
        full[tuple(sl)] = g
        return (full,)

    return _emit("take", np.take(x.data, index, axis=axis), (x,), backward)


def slice_axis(x: TensorValue, start: int, stop: int, axis: int) -> TensorValue:
    x = as_tensor(x)
    axis = axis % x.ndim
    shape = x.shape
    sl = [slice(None)] * len(shape)
    sl[axis] = slice(start, stop)
    sl_t = tuple(sl)

    def backward(g):
        full = np.zeros(shape)
        full[sl_t] = g
        return (full,)

    return _emit("slice_axis", x.data[sl_t], (x,), backward)


# --- Nonlinearities ---

def relu(x: TensorValue) -> TensorValue:
    """max(0, x); the subgradient at 0 is 0."""
    x = as_tensor(x)
    mask = x.data > 0
    return _emit("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def leaky_relu(x: TensorValue, slope: float = 0.2) -> TensorValue:
    """x for x > 0, slope*x otherwise; the subgradient at 0 is `slope`."""
    x = as_tensor(x)
    mask = x.data > 0
    factor = np.where(mask, 1.0, slope)
    return _emit("leaky_relu", x.data * factor, (x,), lambda g: (g * factor,))


def sigmoid(x: TensorValue) -> TensorValue:
    x = as_tensor(x)
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _emit("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x: TensorValue) -> TensorValue:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _emit("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def _softmax_backward(y: np.ndarray, axis: int):
    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)
    return backward


def softmax(x: TensorValue, axis: int = -1) -> TensorValue:
    """Softmax along `axis`, stabilised by subtracting the axis maximum."""
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return _emit("softmax", y, (x,), _softmax_backward(y, axis))


def softmax_rows(x: TensorValue) -> TensorValue:
    x = as_tensor(x)
    if x.ndim != 2:
        raise DimensionError("softmax_rows", x.shape, detail="expected a matrix")
    return softmax(x, axis=-1)


def masked_softmax(x: TensorValue, mask: np.ndarray) -> TensorValue:
    """
    Softmax over the last axis restricted to entries where `mask` is true.

    Masked-out entries get probability 0; rows with no admissible entry are
    all zero.
    """
    x = as_tensor(x)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    z = np.where(mask, x.data, -np.inf)
    m = z.max(axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.where(mask, np.exp(np.where(mask, x.data - m, 0.0)), 0.0)
    s = e.sum(axis=-1, keepdims=True)
    y = e / np.where(s > 0, s, 1.0)
    return _emit("masked_softmax", y, (x,), _softmax_backward(y, -1))


# --- Loss ---

def cross_entropy_loss(logits: TensorValue, labels: Sequence[int],
                       class_weights: Optional[np.ndarray] = None) -> TensorValue:
    """
    Mean over the batch of -log softmax(logits)[label].

    With `class_weights` the mean is weighted by the weight of each sample's
    true class.
    """
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise DimensionError("cross_entropy_loss", logits.shape, detail="expected batch x classes")
    b, c = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (b,):
        raise DimensionError("cross_entropy_loss", logits.shape, labels.shape)
    bad = np.flatnonzero((labels < 0) | (labels >= c))
    if bad.size:
        raise DataError(f"label {int(labels[bad[0]])} out of range [0, {c}) at batch position {int(bad[0])}")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(b)
    nll = -log_p[rows, labels]
    if class_weights is None:
        w = np.ones(b)
    else:
        w = np.asarray(class_weights, dtype=np.float64)[labels]
    total = w.sum()
    loss = float((w * nll).sum() / total)

    def backward(g):
        grad = np.exp(log_p)
        grad[rows, labels] -= 1.0
        return (grad * (w / total)[:, None] * g,)

    return _emit("cross_entropy", np.array(loss), (logits,), backward)


# --- Optimisation ---

@dataclass
class AdamState:
    step: int
    m: List[np.ndarray]
    v: List[np.ndarray]

    @classmethod
    def initial(cls, params: Sequence[TensorValue]) -> "AdamState":
        return cls(0, [np.zeros(p.shape) for p in params], [np.zeros(p.shape) for p in params])


def adam_step(params: Sequence[TensorValue], grads: Sequence[Optional[np.ndarray]], state: AdamState,
              lr: float, betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> AdamState:
    """
    One bias-corrected Adam update.

    Parameters are updated in place (their data arrays are replaced); the
    returned state carries the new moments and step counter. A missing
    gradient counts as zero.
    """
    b1, b2 = betas
    t = state.step + 1
    new_m, new_v = [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.zeros(p.shape) if g is None else g
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m.append(m)
        new_v.append(v)
    return AdamState(t, new_m, new_v)


class Adam:
    """Adam optimizer over a fixed parameter list."""

    def __init__(self, params: Iterable[TensorValue], lr: float = 0.01,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = AdamState.initial(self.params)

    def step(self):
        self.state = adam_step(self.params, [p.grad for p in self.params], self.state,
                               self.lr, self.betas, self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


# --- Verification ---

def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    if analytic.size == 0:
        return 0.0
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(err.max())


def gradient_check(f: Callable[[TensorValue], TensorValue], x: TensorValue, eps: float = 1e-5) -> float:
    """
    Max over coordinates of |analytic - central difference| / max(1, |analytic|).

    Input coordinates within 10*eps of zero are nudged away so relu kinks are
    not straddled by the finite difference.
    """
    base = np.array(as_tensor(x).data, dtype=np.float64)
    near_zero = np.abs(base) < 10 * eps
    base[near_zero] = np.where(base[near_zero] >= 0, 10 * eps, -10 * eps)

    probe = TensorValue(base, requires_grad=True)
    with ComputationTape() as tape:
        out = f(probe)
        tape.backward(out)
    analytic = probe.grad if probe.grad is not None else np.zeros(base.shape)

    numeric = np.zeros(base.shape)
    flat = numeric.reshape(-1)
    for i in range(base.size):
        plus = base.copy().reshape(-1)
        minus = base.copy().reshape(-1)
        plus[i] += eps
        minus[i] -= eps
        f_plus = f(TensorValue(plus.reshape(base.shape))).item()
        f_minus = f(TensorValue(minus.reshape(base.shape))).item()
        flat[i] = (f_plus - f_minus) / (2 * eps)
    return _relative_error(analytic, numeric)


def gradient_check_params(loss_fn: Callable[[], TensorValue], params: Sequence[TensorValue],
                          eps: float = 1e-5, max_coords: Optional[int] = None,
                          rng: Optional[np.random.Generator] = None) -> float:
    """
    Gradient check of a closure against every (or a sampled subset of) parameter coordinates.

    Parameters are perturbed in place and restored afterwards.
    """
    for p in params:
        p.zero_grad()
    with ComputationTape() as tape:
        loss = loss_fn()
        tape.backward(loss)
    analytic = [p.grad if p.grad is not None else np.zeros(p.shape) for p in params]

    coords = [(pi, ci) for pi, p in enumerate(params) for ci in range(p.size)]
    if max_coords is not None and len(coords) > max_coords:
        rng = rng or np.random.default_rng(0)
        picked = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sorted(picked)]

    worst = 0.0
    for pi, ci in coords:
        p = params[pi]
        original = p.data
        flat = original.reshape(-1).copy()
        flat[ci] += eps
        p.data = flat.reshape(original.shape)
        f_plus = loss_fn().item()
        flat[ci] -= 2 * eps
        p.data = flat.reshape(original.shape)
        f_minus = loss_fn().item()
        p.data = original
        numeric = (f_plus - f_minus) / (2 * eps)
        a = float(analytic[pi].reshape(-1)[ci])
        worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    for p in params:
        p.zero_grad()
    return worst
