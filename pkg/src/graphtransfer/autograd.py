"""Scalar reverse-mode autodiff with a gradient reversal op and small MLPs.

Every ``Value`` holds one float.  Linear layers use the fused n-ary
:func:`linear` node so a neuron costs one graph node instead of ``2 * fan_in``.
"""

from __future__ import annotations

import base64
import math
import random
import struct
from typing import Iterable, Sequence

import numpy as np


class Value:
    __slots__ = ("data", "grad", "_prev", "_backward", "_op")

    def __init__(self, data: float, _prev: tuple = (), _op: str = ""):
        self.data = float(data)
        self.grad = 0.0
        self._prev = _prev
        self._backward = None
        self._op = _op

    def __repr__(self) -> str:
        return f"Value(data={self.data:.6g}, grad={self.grad:.6g})"

    def __add__(self, other):
        other = other if isinstance(other, Value) else Value(other)
        out = Value(self.data + other.data, (self, other), "+")

        def _backward():
            self.grad += out.grad
            other.grad += out.grad
        out._backward = _backward
        return out

    def __mul__(self, other):
        other = other if isinstance(other, Value) else Value(other)
        out = Value(self.data * other.data, (self, other), "*")

        def _backward():
            self.grad += other.data * out.grad
            other.grad += self.data * out.grad
        out._backward = _backward
        return out

    def __pow__(self, k: float):
        if isinstance(k, Value):
            raise TypeError("only constant exponents are supported")
        out = Value(self.data ** k, (self,), f"**{k}")

        def _backward():
            self.grad += k * self.data ** (k - 1) * out.grad
        out._backward = _backward
        return out

    def __neg__(self):
        out = Value(-self.data, (self,), "neg")

        def _backward():
            self.grad -= out.grad
        out._backward = _backward
        return out

    def __sub__(self, other):
        return self + (-other if isinstance(other, Value) else Value(-other))

    def __rsub__(self, other):
        return (-self) + other

    def __truediv__(self, other):
        if isinstance(other, Value):
            return self * other ** -1
        return self * (1.0 / other)

    def __rtruediv__(self, other):
        return Value(other) * self ** -1

    __radd__ = __add__
    __rmul__ = __mul__

    def exp(self):
        out = Value(math.exp(self.data), (self,), "exp")

        def _backward():
            self.grad += out.data * out.grad
        out._backward = _backward
        return out

    def log(self):
        if self.data <= 0:
            raise ValueError(f"log domain error: input {self.data!r} is not positive")
        out = Value(math.log(self.data), (self,), "log")

        def _backward():
            self.grad += out.grad / self.data
        out._backward = _backward
        return out

    def relu(self):
        out = Value(self.data if self.data > 0 else 0.0, (self,), "relu")

        def _backward():
            if self.data > 0:
                self.grad += out.grad
        out._backward = _backward
        return out

    def abs(self):
        out = Value(abs(self.data), (self,), "abs")

        def _backward():
            if self.data > 0:
                self.grad += out.grad
            elif self.data < 0:
                self.grad -= out.grad
        out._backward = _backward
        return out

    def sigmoid(self):
        x = self.data
        if x >= 0:
            s = 1.0 / (1.0 + math.exp(-x))
        else:
            z = math.exp(x)
            s = z / (1.0 + z)
        out = Value(s, (self,), "sigmoid")

        def _backward():
            self.grad += s * (1.0 - s) * out.grad
        out._backward = _backward
        return out

    def tanh(self):
        t = math.tanh(self.data)
        out = Value(t, (self,), "tanh")

        def _backward():
            self.grad += (1.0 - t * t) * out.grad
        out._backward = _backward
        return out

    def clamp(self, lo: float, hi: float):
        """Clip to ``[lo, hi]``; the gradient is zero where clipping is active."""
        x = self.data
        out = Value(min(max(x, lo), hi), (self,), "clamp")

        def _backward():
            if lo < x < hi:
                self.grad += out.grad
        out._backward = _backward
        return out

    def backward(self) -> None:
        topo: list[Value] = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for child in node._prev:
                if id(child) not in visited:
                    stack.append((child, False))
        self.grad = 1.0
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()


def as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def vmax(a, b) -> Value:
    """Binary max; on ties the gradient goes to the first argument."""
    a, b = as_value(a), as_value(b)
    pick_a = a.data >= b.data
    out = Value(a.data if pick_a else b.data, (a, b), "max")

    def _backward():
        if pick_a:
            a.grad += out.grad
        else:
            b.grad += out.grad
    out._backward = _backward
    return out


def vmin(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    pick_a = a.data <= b.data
    out = Value(a.data if pick_a else b.data, (a, b), "min")

    def _backward():
        if pick_a:
            a.grad += out.grad
        else:
            b.grad += out.grad
    out._backward = _backward
    return out


def vsum(values: Iterable) -> Value:
    vals = tuple(as_value(v) for v in values)
    out = Value(math.fsum(v.data for v in vals), vals, "sum")

    def _backward():
        g = out.grad
        for v in vals:
            v.grad += g
    out._backward = _backward
    return out


def linear(weights: Sequence[Value], inputs: Sequence, bias: Value | None = None) -> Value:
    """Fused ``sum_k w_k * x_k + b``.  Inputs may be plain floats."""
    ws = tuple(weights)
    xs = tuple(inputs)
    if len(ws) != len(xs):
        raise ValueError(f"shape mismatch: {len(ws)} weights vs {len(xs)} inputs")
    xv = [x.data if isinstance(x, Value) else float(x) for x in xs]
    acc = 0.0
    for w, x in zip(ws, xv):
        acc += w.data * x
    prev = ws + tuple(x for x in xs if isinstance(x, Value))
    if bias is not None:
        acc += bias.data
        prev = prev + (bias,)
    out = Value(acc, prev, "linear")

    def _backward():
        g = out.grad
        for w, x, xd in zip(ws, xs, xv):
            w.grad += xd * g
            if isinstance(x, Value):
                x.grad += w.data * g
        if bias is not None:
            bias.grad += g
    out._backward = _backward
    return out


def matvec(rows: Sequence[Sequence[Value]], x: Sequence, bias: Sequence[Value] | None = None) -> list[Value]:
    if bias is None:
        return [linear(r, x) for r in rows]
    return [linear(r, x, b) for r, b in zip(rows, bias)]


def grl(x: Value, alpha: float) -> Value:
    """Gradient reversal: identity forward, ``-alpha * upstream`` backward."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    out = Value(x.data, (x,), "grl")

    def _backward():
        x.grad += -alpha * out.grad
    out._backward = _backward
    return out


def softmax(logits: Sequence[Value]) -> list[Value]:
    m = max(v.data for v in logits)
    exps = [(v - m).exp() for v in logits]
    total = vsum(exps)
    return [e / total for e in exps]


def alpha_schedule(progress: float, alpha_max: float = 1.0, gamma: float = 10.0) -> float:
    """Adversarial coefficient ramp ``alpha_max * (2 / (1 + exp(-gamma p)) - 1)``."""
    if not 0.0 <= progress <= 1.0:
        raise ValueError(f"progress must be in [0, 1], got {progress}")
    return alpha_max * (2.0 / (1.0 + math.exp(-gamma * progress)) - 1.0)


class Mlp:
    """Fully connected network, ReLU on hidden layers.

    Args:
        sizes: layer widths including input and output, e.g. ``[16, 8, 1]``.
        head: output activation, one of ``identity``, ``sigmoid``, ``softmax``.
        seed: weight init seed (He-uniform).
    """

    HEADS = ("identity", "sigmoid", "softmax")

    def __init__(self, sizes: Sequence[int], head: str = "identity", seed: int = 0):
        if len(sizes) < 2:
            raise ValueError("an Mlp needs at least input and output sizes")
        if head not in self.HEADS:
            raise ValueError(f"unknown head {head!r}")
        self.sizes = [int(s) for s in sizes]
        self.head = head
        rng = random.Random(seed)
        self.weights: list[list[list[Value]]] = []
        self.biases: list[list[Value]] = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = math.sqrt(6.0 / fan_in) / 2
            self.weights.append([[Value(rng.uniform(-bound, bound)) for _ in range(fan_in)]
                                 for _ in range(fan_out)])
            self.biases.append([Value(0.0) for _ in range(fan_out)])

    def parameters(self) -> list[Value]:
        out = []
        for W, b in zip(self.weights, self.biases):
            for row in W:
                out.extend(row)
            out.extend(b)
        return out

    def num_parameters(self) -> int:
        return sum((a + 1) * b for a, b in zip(self.sizes[:-1], self.sizes[1:]))

    def trace(self, x: Sequence) -> list[list[Value]]:
        """Activations of every layer after its nonlinearity (head excluded)."""
        if len(x) != self.sizes[0]:
            raise ValueError(f"shape mismatch: expected {self.sizes[0]} inputs, got {len(x)}")
        acts = []
        h = list(x)
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = matvec(W, h, b)
            if k < last:
                h = [v.relu() for v in h]
            acts.append(h)
        return acts

    def __call__(self, x: Sequence) -> list[Value]:
        out = self.trace(x)[-1]
        if self.head == "sigmoid":
            return [v.sigmoid() for v in out]
        if self.head == "softmax":
            return softmax(out)
        return out

    def state(self) -> dict:
        blob = struct.pack(f"<{self.num_parameters()}f", *(p.data for p in self.parameters()))
        return {"sizes": self.sizes, "head": self.head,
                "params": base64.b64encode(blob).decode("ascii")}

    @classmethod
    def from_state(cls, state: dict) -> "Mlp":
        net = cls(state["sizes"], state.get("head", "identity"))
        raw = base64.b64decode(state["params"])
        params = net.parameters()
        if len(raw) != 4 * len(params):
            raise ValueError(f"parameter blob has {len(raw) // 4} values, expected {len(params)}")
        for p, v in zip(params, struct.unpack(f"<{len(params)}f", raw)):
            p.data = v
        return net


def zero_grad(params: Iterable[Value]) -> None:
    for p in params:
        p.grad = 0.0


def sgd_step(params: Sequence[Value], lr: float) -> None:
    for p in params:
        p.data -= lr * p.grad
        p.grad = 0.0


class Adam:
    def __init__(self, params: Sequence[Value], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(len(self.params))
        self.v = np.zeros(len(self.params))
        self.t = 0

    def step(self) -> None:
        self.t += 1
        g = np.fromiter((p.grad for p in self.params), float, len(self.params))
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        upd = self.lr * mhat / (np.sqrt(vhat) + self.eps)
        for p, u in zip(self.params, upd.tolist()):
            p.data -= u
            p.grad = 0.0


def adam_step(opt: Adam) -> None:
    opt.step()
