"""Dense float64 tensors and a reverse-mode differentiable expression graph.

Graphs are built once from `var` leaves and the op constructors below, then
executed many times against different bindings:

    x, w = var("x"), var("w")
    y = relu(matmul(x, w))
    out = evaluate(y, {"x": Tensor(...), "w": Tensor(...)})
    grads = gradient(sum_all(y), bindings, wrt={"w"})

Conventions fixed here (callers rely on them):
  * everything is float64; inputs are converted, outputs stay float64;
  * relu's subgradient at 0 is 0;
  * maxpool2 drops a trailing odd row/column and routes its gradient to the
    first row-major maximum of each window;
  * log_softmax normalizes the last axis and subtracts the row max first;
  * conv2d is valid-mode cross-correlation, stride 1.

Each node is evaluated exactly once per pass (results are memoized), so
identical bindings give bit-identical outputs.
"""

from __future__ import annotations

import numpy as np

from . import kernels


class TensorError(ValueError):
    """Base class for graph construction and execution errors."""


class ShapeError(TensorError):
    pass


class UnboundLeafError(TensorError):
    pass


class Tensor:
    """Immutable dense array of 64-bit reals, row-major.

    The underlying numpy array is exposed as `.a` for numeric code; treat it
    as read-only once the Tensor is constructed.
    """

    __slots__ = ("a",)

    def __init__(self, values, *, copy: bool = True):
        arr = np.array(values, dtype=np.float64, order="C", copy=copy)
        if not np.all(np.isfinite(arr)):
            raise TensorError("tensor contains non-finite values")
        self.a = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # internal fast path: arr is trusted float64 output of a graph op.
        # np.ascontiguousarray would promote 0-d arrays to 1-d, so guard it.
        t = object.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        t.a = arr
        return t

    @classmethod
    def zeros(cls, *dims: int) -> "Tensor":
        return cls._wrap(np.zeros(dims))

    @property
    def dims(self) -> tuple[int, ...]:
        return self.a.shape

    @property
    def size(self) -> int:
        return self.a.size

    def item(self) -> float:
        if self.a.size != 1:
            raise ShapeError(f"item() on tensor of {self.a.size} elements")
        return float(self.a.reshape(-1)[0])

    def copy(self) -> "Tensor":
        return Tensor._wrap(self.a.copy())

    def __repr__(self) -> str:
        return f"Tensor(dims={self.a.shape})"


class Expr:
    """One node of an acyclic expression graph.

    `op` names the operation, `inputs` are upstream Expr nodes, `extra`
    carries op-specific constants (leaf name, reshape target, custom hooks).
    Nodes are immutable; all pass-local state lives in the evaluation caches.
    """

    __slots__ = ("op", "inputs", "extra")

    def __init__(self, op: str, inputs: tuple["Expr", ...] = (), extra=None):
        self.op = op
        self.inputs = inputs
        self.extra = extra

    def label(self) -> str:
        if self.op == "var":
            return f"var({self.extra!r})"
        return self.op

    def __repr__(self) -> str:
        return f"Expr<{self.label()}>"

    # sugar for scalar-graph tests and small expressions
    def __add__(self, other):
        return add(self, _lift(other))

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _lift(other))


def _lift(value) -> Expr:
    return value if isinstance(value, Expr) else const(value)


def var(name: str) -> Expr:
    return Expr("var", extra=name)


def const(value) -> Expr:
    return Expr("const", extra=np.asarray(value, dtype=np.float64))


def add(a: Expr, b: Expr) -> Expr:
    return Expr("add", (a, b))


def sub(a: Expr, b: Expr) -> Expr:
    return Expr("sub", (a, b))


def neg(a: Expr) -> Expr:
    return Expr("neg", (a,))


def mul(a: Expr, b: Expr) -> Expr:
    return Expr("mul", (a, b))


def scale(a: Expr, k: float) -> Expr:
    return Expr("scale", (a,), extra=float(k))


def matmul(a: Expr, b: Expr) -> Expr:
    return Expr("matmul", (a, b))


def conv2d(x: Expr, w: Expr, b: Expr) -> Expr:
    return Expr("conv2d", (x, w, b))


def maxpool2(x: Expr) -> Expr:
    return Expr("maxpool2", (x,))


def relu(x: Expr) -> Expr:
    return Expr("relu", (x,))


def log_softmax(x: Expr) -> Expr:
    return Expr("log_softmax", (x,))


def concat(a: Expr, b: Expr) -> Expr:
    """Concatenate two matrices along axis 1."""
    return Expr("concat", (a, b))


def reshape(x: Expr, shape: tuple[int, ...]) -> Expr:
    return Expr("reshape", (x,), extra=tuple(shape))


def sum_all(x: Expr) -> Expr:
    """Reduce every element to one scalar."""
    return Expr("sum_all", (x,))


def custom(fwd, bwd, inputs: tuple[Expr, ...], name: str = "custom") -> Expr:
    """Custom-gradient hook node.

    fwd(*arrays) -> array computes the value; bwd(g, arrays, y, need) returns
    one gradient array (or None where need[i] is False) per input. Used by
    the quantum layer to inject parameter-shift gradients.
    """
    return Expr("custom", tuple(inputs), extra=(fwd, bwd, name))


# ---------------------------------------------------------------------------
# forward


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to `shape`, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _forward(node: Expr, xs: list[np.ndarray], aux: dict) -> np.ndarray:
    op = node.op
    if op == "const":
        return node.extra
    if op == "add":
        return xs[0] + xs[1]
    if op == "sub":
        return xs[0] - xs[1]
    if op == "neg":
        return -xs[0]
    if op == "mul":
        return xs[0] * xs[1]
    if op == "scale":
        return xs[0] * node.extra
    if op == "matmul":
        a, b = xs
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul shapes {a.shape} x {b.shape} at node {node.label()}")
        return a @ b
    if op == "conv2d":
        x, w, b = xs
        if x.ndim != 4 or w.ndim != 4:
            raise ShapeError(f"conv2d expects 4-d input and kernels at node {node.label()}")
        if x.shape[1] != w.shape[1]:
            raise ShapeError(
                f"conv2d channel mismatch: input {x.shape} vs kernels {w.shape}"
            )
        if w.shape[2] > x.shape[2] or w.shape[3] > x.shape[3]:
            raise ShapeError(f"conv2d kernel {w.shape[2:]} larger than input {x.shape[2:]}")
        if b.shape != (w.shape[0],):
            raise ShapeError(f"conv2d bias shape {b.shape}, expected ({w.shape[0]},)")
        return kernels.conv2d_forward(x, w, b)
    if op == "maxpool2":
        x = xs[0]
        if x.ndim != 4 or x.shape[2] < 2 or x.shape[3] < 2:
            raise ShapeError(f"maxpool2 needs [B,C,H>=2,W>=2], got {x.shape}")
        y, arg = kernels.maxpool2_forward(x)
        aux[id(node)] = arg
        return y
    if op == "relu":
        return np.maximum(xs[0], 0.0)
    if op == "log_softmax":
        x = xs[0]
        if x.ndim < 1:
            raise ShapeError("log_softmax needs at least one axis")
        shifted = x - x.max(axis=-1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    if op == "concat":
        a, b = xs
        if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
            raise ShapeError(f"concat rows mismatch: {a.shape} vs {b.shape}")
        return np.concatenate([a, b], axis=1)
    if op == "reshape":
        try:
            return xs[0].reshape(node.extra)
        except ValueError as exc:
            raise ShapeError(f"reshape {xs[0].shape} -> {node.extra}: {exc}") from exc
    if op == "sum_all":
        return np.asarray(xs[0].sum())
    if op == "custom":
        fwd, _, _ = node.extra
        return np.asarray(fwd(*xs), dtype=np.float64)
    raise TensorError(f"unknown op {op!r}")


def _backward(node: Expr, xs, y, g, need, aux):
    op = node.op
    if op == "add":
        return (
            _unbroadcast(g, xs[0].shape) if need[0] else None,
            _unbroadcast(g, xs[1].shape) if need[1] else None,
        )
    if op == "sub":
        return (
            _unbroadcast(g, xs[0].shape) if need[0] else None,
            _unbroadcast(-g, xs[1].shape) if need[1] else None,
        )
    if op == "neg":
        return (-g,)
    if op == "mul":
        return (
            _unbroadcast(g * xs[1], xs[0].shape) if need[0] else None,
            _unbroadcast(g * xs[0], xs[1].shape) if need[1] else None,
        )
    if op == "scale":
        return (g * node.extra,)
    if op == "matmul":
        a, b = xs
        return (
            g @ b.T if need[0] else None,
            a.T @ g if need[1] else None,
        )
    if op == "conv2d":
        x, w, _ = xs
        gx = kernels.conv2d_backward_input(w, g) if need[0] else None
        gw = (
            kernels.conv2d_backward_kernels(x, g, w.shape[2], w.shape[3])
            if need[1]
            else None
        )
        gb = g.sum(axis=(0, 2, 3)) if need[2] else None
        return (gx, gw, gb)
    if op == "maxpool2":
        arg = aux[id(node)]
        return (kernels.maxpool2_backward(g, arg, xs[0].shape[2], xs[0].shape[3]),)
    if op == "relu":
        return (g * (xs[0] > 0.0),)
    if op == "log_softmax":
        return (g - np.exp(y) * g.sum(axis=-1, keepdims=True),)
    if op == "concat":
        split = xs[0].shape[1]
        return (
            np.ascontiguousarray(g[:, :split]) if need[0] else None,
            np.ascontiguousarray(g[:, split:]) if need[1] else None,
        )
    if op == "reshape":
        return (g.reshape(xs[0].shape),)
    if op == "sum_all":
        return (np.broadcast_to(g, xs[0].shape),)
    if op == "custom":
        _, bwd, _ = node.extra
        return bwd(g, xs, y, need)
    raise TensorError(f"op {op!r} is not differentiable")


def _topo_order(root: Expr) -> list[Expr]:
    """Post-order over the DAG; every node appears once."""
    order: list[Expr] = []
    seen: set[int] = set()
    stack: list[tuple[Expr, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for child in node.inputs:
            if id(child) not in seen:
                stack.append((child, False))
    return order


def _run_forward(root: Expr, bindings: dict[str, Tensor]):
    order = _topo_order(root)
    values: dict[int, np.ndarray] = {}
    aux: dict[int, np.ndarray] = {}
    for node in order:
        if node.op == "var":
            name = node.extra
            if name not in bindings:
                raise UnboundLeafError(f"leaf {name!r} is not bound")
            values[id(node)] = bindings[name].a
        else:
            xs = [values[id(child)] for child in node.inputs]
            values[id(node)] = _forward(node, xs, aux)
    return order, values, aux


def evaluate(root: Expr, bindings: dict[str, Tensor]) -> Tensor:
    """Run the graph forward and return the root value."""
    _, values, _ = _run_forward(root, bindings)
    out = Tensor._wrap(values[id(root)])
    if not np.all(np.isfinite(out.a)):
        raise TensorError(f"non-finite result at node {root.label()}")
    return out


def gradient(
    root: Expr, bindings: dict[str, Tensor], wrt: set[str] | frozenset[str]
) -> dict[str, Tensor]:
    """Reverse-mode gradients of a scalar root for the requested leaves.

    Only subgraphs that can reach a requested leaf are differentiated, so
    e.g. input-only gradients skip the weight-gradient kernels entirely.
    """
    _, grads = value_and_gradient(root, bindings, wrt)
    return grads


def value_and_gradient(
    root: Expr, bindings: dict[str, Tensor], wrt: set[str] | frozenset[str]
) -> tuple[Tensor, dict[str, Tensor]]:
    """One forward pass shared by the root value and its leaf gradients."""
    order, values, aux = _run_forward(root, bindings)
    if values[id(root)].size != 1:
        raise ShapeError(
            f"gradient needs a scalar root, got shape {values[id(root)].shape}"
        )
    seed = np.ones_like(values[id(root)])
    grads = _run_backward(root, order, values, aux, seed, wrt)
    return Tensor._wrap(values[id(root)]), grads


def value_and_seeded_gradient(
    root: Expr,
    bindings: dict[str, Tensor],
    wrt: set[str] | frozenset[str],
    seed_fn,
) -> tuple[Tensor, dict[str, Tensor]]:
    """Backpropagate an arbitrary upstream gradient from `root`.

    `seed_fn(value)` receives the root's value and returns the upstream
    gradient array (root-shaped). This shares one forward pass between the
    value and the pullback, e.g. d(sum(lp * W))/dx with W chosen from lp.
    """
    order, values, aux = _run_forward(root, bindings)
    value = values[id(root)]
    seed = np.asarray(seed_fn(Tensor._wrap(value)), dtype=np.float64)
    if seed.shape != value.shape:
        raise ShapeError(f"seed gradient shape {seed.shape} != root shape {value.shape}")
    grads = _run_backward(root, order, values, aux, seed, wrt)
    return Tensor._wrap(value), grads


def _run_backward(root, order, values, aux, seed, wrt) -> dict[str, Tensor]:
    # a named leaf is one variable even if several nodes mention it
    leaf_nodes: dict[str, list[Expr]] = {}
    for node in order:
        if node.op == "var" and node.extra in wrt:
            leaf_nodes.setdefault(node.extra, []).append(node)
    missing = set(wrt) - set(leaf_nodes)
    if missing:
        raise UnboundLeafError(f"wrt names not in graph: {sorted(missing)}")

    # nodes whose subtree contains a requested leaf
    needed: set[int] = set()
    for node in order:  # children precede parents
        if node.op == "var" and node.extra in wrt:
            needed.add(id(node))
        elif any(id(child) in needed for child in node.inputs):
            needed.add(id(node))

    grads: dict[int, np.ndarray] = {id(root): seed}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or not node.inputs:
            continue
        xs = [values[id(child)] for child in node.inputs]
        need = tuple(id(child) in needed for child in node.inputs)
        if not any(need):
            continue
        input_grads = _backward(node, xs, values[id(node)], g, need, aux)
        for child, child_grad, wanted in zip(node.inputs, input_grads, need):
            if not wanted or child_grad is None:
                continue
            if id(child) in grads:
                grads[id(child)] = grads[id(child)] + child_grad
            else:
                grads[id(child)] = child_grad

    out: dict[str, Tensor] = {}
    for name, nodes in leaf_nodes.items():
        total = np.zeros_like(values[id(nodes[0])])
        for node in nodes:
            g = grads.get(id(node))
            if g is not None:
                total = total + g
        out[name] = Tensor._wrap(np.broadcast_to(total, values[id(nodes[0])].shape).copy())
    return out
