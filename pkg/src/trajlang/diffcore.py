"""Minimal reverse-mode autodiff on numpy arrays.

Dense layers, pointwise nonlinearities, reductions and an Adam optimizer --
just enough substrate for the encoders and reward nets in this package.
Everything is float64 and single-threaded; graphs are recorded dynamically
per forward pass.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_FORMAT_VERSION = 1


class Tensor:
    """A numpy array plus the tape bookkeeping needed for backward()."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph construction helpers --

    @staticmethod
    def _make(data, parents, backward_fn):
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward_fn
        return out

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- arithmetic --

    def __add__(self, other):
        other = as_tensor(other)
        out_data = self.data + other.data

        def bwd(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.data.shape))

        return Tensor._make(out_data, (self, other), bwd)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (as_tensor(other) * -1.0)

    def __rsub__(self, other):
        return as_tensor(other) + (self * -1.0)

    def __mul__(self, other):
        other = as_tensor(other)
        out_data = self.data * other.data

        def bwd(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.data.shape))

        return Tensor._make(out_data, (self, other), bwd)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __matmul__(self, other):
        other = as_tensor(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ValueError(
                f"matmul expects 2-d operands, got {self.data.shape} @ {other.data.shape}"
            )
        if self.data.shape[1] != other.data.shape[0]:
            raise ValueError(
                f"matmul shape mismatch: {self.data.shape} @ {other.data.shape}"
            )
        out_data = self.data @ other.data

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g @ other.data.T)
            if other.requires_grad:
                other._accumulate(self.data.T @ g)

        return Tensor._make(out_data, (self, other), bwd)

    # -- pointwise nonlinearities --

    def tanh(self):
        out_data = np.tanh(self.data)

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g * (1.0 - out_data**2))

        return Tensor._make(out_data, (self,), bwd)

    def sigmoid(self):
        out_data = _sigmoid(self.data)

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g * out_data * (1.0 - out_data))

        return Tensor._make(out_data, (self,), bwd)

    def softplus(self):
        # log(1 + exp(x)), overflow-safe
        x = self.data
        out_data = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g * _sigmoid(x))

        return Tensor._make(out_data, (self,), bwd)

    def exp(self):
        out_data = np.exp(self.data)

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g * out_data)

        return Tensor._make(out_data, (self,), bwd)

    def log(self):
        out_data = np.log(self.data)

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g / self.data)

        return Tensor._make(out_data, (self,), bwd)

    def square(self):
        out_data = self.data**2

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g * 2.0 * self.data)

        return Tensor._make(out_data, (self,), bwd)

    def sqrt(self):
        out_data = np.sqrt(self.data)

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g * 0.5 / out_data)

        return Tensor._make(out_data, (self,), bwd)

    def relu(self):
        out_data = np.maximum(self.data, 0.0)

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g * (self.data > 0.0))

        return Tensor._make(out_data, (self,), bwd)

    # -- reductions / shaping --

    def sum(self, axis=None):
        out_data = self.data.sum(axis=axis)
        in_shape = self.data.shape

        def bwd(g):
            if self.requires_grad:
                if axis is None:
                    self._accumulate(np.full(in_shape, g))
                else:
                    self._accumulate(np.broadcast_to(np.expand_dims(g, axis), in_shape).copy())

        return Tensor._make(out_data, (self,), bwd)

    def mean(self, axis=None):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)

    def reshape(self, *shape):
        in_shape = self.data.shape
        out_data = self.data.reshape(*shape)

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g.reshape(in_shape))

        return Tensor._make(out_data, (self,), bwd)

    def norm(self, axis=None, eps: float = 1e-12):
        """Euclidean norm, smoothed at zero so the gradient stays finite."""
        return (self.square().sum(axis=axis) + eps).sqrt() if eps else self.square().sum(axis=axis).sqrt()

    # -- backward --

    def backward(self):
        if self.data.ndim != 0:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.data.shape}")
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def gather_rows(table: Tensor, ids) -> Tensor:
    """Embedding lookup: rows of `table` at integer `ids` (gradient scatter-adds)."""
    ids = np.asarray(ids, dtype=np.int64)
    out_data = table.data[ids]

    def bwd(g):
        if table.requires_grad:
            acc = np.zeros_like(table.data)
            np.add.at(acc, ids, g)
            table._accumulate(acc)

    return Tensor._make(out_data, (table,), bwd)


def logsigmoid(x: Tensor) -> Tensor:
    return -((-x).softplus())


# -- parameters and optimizer --


@dataclass
class OptimizerConfig:
    """Adam hyperparameters."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1/beta2 must be in [0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


class ParamSet:
    """Named parameter tensors with per-parameter Adam moment state."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.opt_m: dict[str, np.ndarray] = {}
        self.opt_v: dict[str, np.ndarray] = {}
        self.step: int = 0

    def add(self, name: str, values: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(values, dtype=np.float64), requires_grad=True)
        self.params[name] = t
        self.opt_m[name] = np.zeros_like(t.data)
        self.opt_v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grads(self):
        for t in self.params.values():
            t.grad = None

    def copy(self) -> "ParamSet":
        out = ParamSet()
        for name, t in self.params.items():
            out.add(name, t.data.copy())
            out.opt_m[name] = self.opt_m[name].copy()
            out.opt_v[name] = self.opt_v[name].copy()
        out.step = self.step
        return out

    # -- checkpoint document --

    def to_doc(self) -> dict:
        def pack(arrs):
            return {
                name: {"shape": list(a.shape), "values": a.ravel().tolist()}
                for name, a in arrs.items()
            }

        return {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "step": self.step,
            "params": pack({n: t.data for n, t in self.params.items()}),
            "opt_m": pack(self.opt_m),
            "opt_v": pack(self.opt_v),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "ParamSet":
        if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format_version {doc.get('format_version')!r}")

        def unpack(entry):
            return np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])

        out = cls()
        for name, entry in doc["params"].items():
            out.add(name, unpack(entry))
        for name, entry in doc["opt_m"].items():
            out.opt_m[name] = unpack(entry)
        for name, entry in doc["opt_v"].items():
            out.opt_v[name] = unpack(entry)
        out.step = int(doc["step"])
        return out

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_doc(), sort_keys=True))

    @classmethod
    def load(cls, path) -> "ParamSet":
        return cls.from_doc(json.loads(Path(path).read_text()))


def init_mlp(paramset: ParamSet, arch: list[int], rng: np.random.Generator, prefix: str = ""):
    """Add MLP weights/biases for layer sizes `arch` under `prefix`.

    Weights are scaled by 1/sqrt(fan_in); biases start at zero.
    """
    for i in range(len(arch) - 1):
        fan_in, fan_out = arch[i], arch[i + 1]
        w = rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)
        paramset.add(f"{prefix}W{i}", w)
        paramset.add(f"{prefix}b{i}", np.zeros(fan_out))


def mlp_forward(paramset: ParamSet, x: Tensor, arch: list[int], prefix: str = "") -> Tensor:
    """Dense stack: tanh on hidden layers, linear output.

    `x` is (batch, arch[0]) or (arch[0],); a 1-d input comes back 1-d.
    """
    squeeze = False
    if x.data.ndim == 1:
        x = x.reshape(1, -1)
        squeeze = True
    if x.data.shape[1] != arch[0]:
        raise ValueError(
            f"input width {x.data.shape[1]} does not match layer 0 width {arch[0]}"
        )
    n_layers = len(arch) - 1
    h = x
    for i in range(n_layers):
        wname, bname = f"{prefix}W{i}", f"{prefix}b{i}"
        if wname not in paramset or bname not in paramset:
            raise ValueError(f"missing parameters for layer {i} ({wname}/{bname})")
        w, b = paramset[wname], paramset[bname]
        if w.data.shape != (arch[i], arch[i + 1]):
            raise ValueError(
                f"layer {i} weight shape {w.data.shape} inconsistent with arch {arch}"
            )
        h = h @ w + b
        if i < n_layers - 1:
            h = h.tanh()
    return h.reshape(-1) if squeeze else h


def backward(loss: Tensor, paramset: ParamSet) -> dict[str, np.ndarray]:
    """Gradient of a scalar loss for every parameter (zeros when unreachable)."""
    paramset.zero_grads()
    loss.backward()
    grads = {}
    for name, t in paramset.params.items():
        grads[name] = t.grad if t.grad is not None else np.zeros_like(t.data)
    return grads


def optimizer_step(paramset: ParamSet, grads: dict[str, np.ndarray], cfg: OptimizerConfig):
    """One Adam update, in place. Step count increments by one."""
    paramset.step += 1
    t = paramset.step
    for name, p in paramset.params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match parameter {name!r} shape {p.data.shape}"
            )
        m = paramset.opt_m[name]
        v = paramset.opt_v[name]
        m *= cfg.beta1
        m += (1 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1 - cfg.beta2) * g**2
        m_hat = m / (1 - cfg.beta1**t)
        v_hat = v / (1 - cfg.beta2**t)
        p.data -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)


# -- gradient verification --


@dataclass
class GradCheckReport:
    """Outcome of comparing analytic gradients against central differences."""

    per_param_error: dict[str, float] = field(default_factory=dict)
    max_relative_error: float = 0.0
    passed: bool = True
    failure: str | None = None


def finite_diff_check(
    fn, paramset: ParamSet, h: float = 1e-5, tolerance: float = 1e-4
) -> GradCheckReport:
    """Check d(fn)/d(params) against central finite differences.

    `fn` maps the ParamSet to a scalar Tensor and must be deterministic.
    Relative error per coordinate is |a - n| / max(|a| + |n|, 1e-8).
    """
    if h <= 0:
        raise ValueError("perturbation h must be positive")
    report = GradCheckReport()

    loss = fn(paramset)
    if not np.isfinite(loss.data):
        report.passed = False
        report.failure = "non-finite loss at the unperturbed point"
        return report
    analytic = backward(loss, paramset)

    for name, p in paramset.params.items():
        flat = p.data.ravel()
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(fn(paramset).data)
            flat[i] = orig - h
            f_minus = float(fn(paramset).data)
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                report.passed = False
                report.failure = f"non-finite value while perturbing {name}[{i}]"
                return report
            numeric = (f_plus - f_minus) / (2 * h)
            a = analytic[name].ravel()[i]
            err = abs(a - numeric) / max(abs(a) + abs(numeric), 1e-8)
            worst = max(worst, err)
        report.per_param_error[name] = worst
        report.max_relative_error = max(report.max_relative_error, worst)
    report.passed = report.max_relative_error < tolerance
    return report
