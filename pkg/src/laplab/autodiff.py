"""Reverse-mode automatic differentiation over dense float64 tensors.

A ``CompGraph`` is a static operation graph: leaves are declared once with
fixed shapes and tagged INPUT or PARAM, ops are appended in topological
order, and the graph is evaluated repeatedly under different leaf bindings.
A single backward pass produces a gradient for every leaf, so input-space
and weight-space gradients come out of the same traversal.

All arithmetic is float64. Forward caches every node value; any non-finite
intermediate aborts the pass with the offending node id.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# The universal value carrier: a dense row-major float64 ndarray.
Tensor = np.ndarray

INPUT = "input"
PARAM = "param"


class GraphError(Exception):
    """Base class for graph construction and evaluation failures."""


class ShapeMismatchError(GraphError):
    def __init__(self, node_id: int, message: str):
        super().__init__(f"node {node_id}: {message}")
        self.node_id = node_id


class NonFiniteError(GraphError):
    def __init__(self, node_id: int, message: str):
        super().__init__(f"node {node_id}: {message}")
        self.node_id = node_id


class BackwardBeforeForwardError(GraphError):
    pass


def as_tensor(x) -> Tensor:
    return np.asarray(x, dtype=np.float64)


@dataclass
class _Node:
    nid: int
    op: str                 # leaf tag or op kind
    inputs: tuple           # ids of input nodes
    shape: tuple            # output shape, fixed at construction
    attrs: dict
    name: str | None = None  # leaf name, None for interior nodes


class CompGraph:
    """Static computation graph with rebindable INPUT/PARAM leaves.

    Nodes are created in topological order; the last node added is the
    output and must be scalar when ``forward`` is called.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.leaves: dict[str, int] = {}
        self._values: list | None = None
        self._aux: list | None = None
        self._label_bindings: dict[str, np.ndarray] = {}
        self._forward_ok = False

    # ------------------------------------------------------------------
    # construction

    def _add(self, op, inputs, shape, attrs=None, name=None) -> int:
        nid = len(self.nodes)
        self.nodes.append(_Node(nid, op, tuple(inputs), tuple(shape), attrs or {}, name))
        return nid

    def _leaf(self, tag, name, shape) -> int:
        if name in self.leaves:
            raise GraphError(f"duplicate leaf name {name!r}")
        nid = self._add(tag, (), shape, name=name)
        self.leaves[name] = nid
        return nid

    def input(self, name: str, shape) -> int:
        return self._leaf(INPUT, name, shape)

    def param(self, name: str, shape) -> int:
        return self._leaf(PARAM, name, shape)

    def _shape(self, nid) -> tuple:
        return self.nodes[nid].shape

    def affine(self, x: int, w: int, b: int) -> int:
        """y = x @ w.T + b with x (N, in), w (out, in), b (out,)."""
        xs, ws, bs = self._shape(x), self._shape(w), self._shape(b)
        nid = len(self.nodes)
        if len(xs) != 2 or len(ws) != 2 or len(bs) != 1:
            raise ShapeMismatchError(nid, f"affine expects 2-D x, 2-D w, 1-D b, got {xs}, {ws}, {bs}")
        if xs[1] != ws[1] or bs[0] != ws[0]:
            raise ShapeMismatchError(nid, f"affine shapes do not chain: x {xs}, w {ws}, b {bs}")
        return self._add("affine", (x, w, b), (xs[0], ws[0]))

    def conv2d(self, x: int, w: int, b: int, stride: int = 1, padding: int = 0) -> int:
        """2-D convolution, zero padding, x (N,C,H,W), w (O,C,kH,kW), b (O,)."""
        xs, ws, bs = self._shape(x), self._shape(w), self._shape(b)
        nid = len(self.nodes)
        if len(xs) != 4 or len(ws) != 4 or len(bs) != 1:
            raise ShapeMismatchError(nid, f"conv2d expects 4-D x, 4-D w, 1-D b, got {xs}, {ws}, {bs}")
        if xs[1] != ws[1] or bs[0] != ws[0]:
            raise ShapeMismatchError(nid, f"conv2d channels do not chain: x {xs}, w {ws}, b {bs}")
        if stride < 1 or padding < 0:
            raise ShapeMismatchError(nid, f"bad stride/padding {stride}/{padding}")
        hout = (xs[2] + 2 * padding - ws[2]) // stride + 1
        wout = (xs[3] + 2 * padding - ws[3]) // stride + 1
        if hout < 1 or wout < 1:
            raise ShapeMismatchError(nid, f"kernel {ws[2:]} too large for input {xs[2:]} with padding {padding}")
        return self._add("conv2d", (x, w, b), (xs[0], ws[0], hout, wout),
                         {"stride": stride, "padding": padding})

    def relu(self, x: int) -> int:
        return self._add("relu", (x,), self._shape(x))

    def avgpool2(self, x: int) -> int:
        """2x2 average pooling with stride 2; spatial dims must be even."""
        xs = self._shape(x)
        nid = len(self.nodes)
        if len(xs) != 4 or xs[2] % 2 or xs[3] % 2:
            raise ShapeMismatchError(nid, f"avgpool2 needs 4-D input with even H, W, got {xs}")
        return self._add("avgpool2", (x,), (xs[0], xs[1], xs[2] // 2, xs[3] // 2))

    def flatten(self, x: int) -> int:
        xs = self._shape(x)
        return self._add("flatten", (x,), (xs[0], int(np.prod(xs[1:]))))

    def add(self, a: int, b: int) -> int:
        sa, sb = self._shape(a), self._shape(b)
        nid = len(self.nodes)
        if sa != sb:
            raise ShapeMismatchError(nid, f"add operands differ: {sa} vs {sb}")
        return self._add("add", (a, b), sa)

    def mul(self, a: int, b: int) -> int:
        sa, sb = self._shape(a), self._shape(b)
        nid = len(self.nodes)
        if sa != sb:
            raise ShapeMismatchError(nid, f"mul operands differ: {sa} vs {sb}")
        return self._add("mul", (a, b), sa)

    def scale(self, x: int, c: float) -> int:
        return self._add("scale", (x,), self._shape(x), {"c": float(c)})

    def softmax_cross_entropy(self, logits: int, labels_key: str) -> int:
        """Mean softmax cross-entropy against integer labels bound under labels_key."""
        ls = self._shape(logits)
        nid = len(self.nodes)
        if len(ls) != 2:
            raise ShapeMismatchError(nid, f"cross-entropy expects 2-D logits, got {ls}")
        return self._add("softmax_ce", (logits,), (), {"labels_key": labels_key})

    # ------------------------------------------------------------------
    # evaluation

    def forward(self, bindings: dict) -> float:
        """Evaluate the graph under leaf bindings; returns the scalar output.

        Integer-label arrays referenced by cross-entropy nodes ride in the
        same bindings dict under their labels_key and are not leaves.
        """
        self._forward_ok = False
        out = self.nodes[-1]
        if out.shape != ():
            raise GraphError(f"output node {out.nid} is not scalar (shape {out.shape})")
        values: list = [None] * len(self.nodes)
        aux: list = [None] * len(self.nodes)
        self._label_bindings = {}
        # overflow surfaces through the finiteness check, not a warning
        with np.errstate(over="ignore", invalid="ignore"):
            for node in self.nodes:
                if node.op in (INPUT, PARAM):
                    if node.name not in bindings:
                        raise GraphError(f"leaf {node.name!r} is unbound")
                    v = as_tensor(bindings[node.name])
                    if v.shape != node.shape:
                        raise ShapeMismatchError(
                            node.nid, f"leaf {node.name!r} bound with shape {v.shape}, declared {node.shape}")
                    values[node.nid] = v
                else:
                    values[node.nid], aux[node.nid] = self._forward_op(node, values, bindings)
                if not np.all(np.isfinite(values[node.nid])):
                    raise NonFiniteError(node.nid, f"non-finite value in op {node.op!r}")
        self._values = values
        self._aux = aux
        self._forward_ok = True
        return float(values[-1])

    def value(self, nid: int) -> Tensor:
        """Cached forward value of a node."""
        if not self._forward_ok:
            raise BackwardBeforeForwardError("forward has not been run")
        return self._values[nid]

    def backward(self) -> dict:
        """Gradients of the scalar output with respect to every leaf, by name."""
        if not self._forward_ok:
            raise BackwardBeforeForwardError("backward called before forward")
        values, aux = self._values, self._aux
        grads: list = [None] * len(self.nodes)
        grads[-1] = np.array(1.0)
        for node in reversed(self.nodes):
            g = grads[node.nid]
            if g is None or node.op in (INPUT, PARAM):
                continue
            for inp, ginp in zip(node.inputs, self._backward_op(node, g, values, aux)):
                if grads[inp] is None:
                    grads[inp] = ginp
                else:
                    grads[inp] = grads[inp] + ginp
        out = {}
        for name, nid in self.leaves.items():
            g = grads[nid]
            out[name] = np.zeros(self.nodes[nid].shape) if g is None else g
        return out

    # ------------------------------------------------------------------
    # op kernels

    def _forward_op(self, node, values, bindings):
        op = node.op
        ins = [values[i] for i in node.inputs]
        if op == "affine":
            x, w, b = ins
            return x @ w.T + b, None
        if op == "conv2d":
            x, w, b = ins
            cols, xp_shape, (hout, wout) = _im2col(
                x, w.shape[2], w.shape[3], node.attrs["stride"], node.attrs["padding"])
            y = cols @ w.reshape(w.shape[0], -1).T + b
            y = y.reshape(x.shape[0], hout, wout, w.shape[0]).transpose(0, 3, 1, 2)
            return y, (cols, xp_shape)
        if op == "relu":
            return np.maximum(ins[0], 0.0), None
        if op == "avgpool2":
            x = ins[0]
            n, c, h, w = x.shape
            return x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5)), None
        if op == "flatten":
            return ins[0].reshape(node.shape), None
        if op == "add":
            return ins[0] + ins[1], None
        if op == "mul":
            return ins[0] * ins[1], None
        if op == "scale":
            return ins[0] * node.attrs["c"], None
        if op == "softmax_ce":
            z = ins[0]
            key = node.attrs["labels_key"]
            if key not in bindings:
                raise GraphError(f"labels {key!r} are unbound")
            y = np.asarray(bindings[key])
            if y.shape != (z.shape[0],):
                raise ShapeMismatchError(node.nid, f"labels shape {y.shape}, expected ({z.shape[0]},)")
            y = y.astype(np.int64)
            if y.min(initial=0) < 0 or y.max(initial=0) >= z.shape[1]:
                raise GraphError(f"node {node.nid}: label outside [0, {z.shape[1]})")
            self._label_bindings[key] = y
            m = z.max(axis=1, keepdims=True)
            e = np.exp(z - m)
            s = e.sum(axis=1, keepdims=True)
            p = e / s
            losses = (np.log(s) + m).ravel() - z[np.arange(len(y)), y]
            return np.float64(losses.mean()), p
        raise GraphError(f"unknown op {op!r}")

    def _backward_op(self, node, g, values, aux):
        op = node.op
        ins = [values[i] for i in node.inputs]
        if op == "affine":
            x, w, b = ins
            return g @ w, g.T @ x, g.sum(axis=0)
        if op == "conv2d":
            x, w, b = ins
            cols, xp_shape = aux[node.nid]
            stride, padding = node.attrs["stride"], node.attrs["padding"]
            n, cout, hout, wout = node.shape
            gmat = g.transpose(0, 2, 3, 1).reshape(n * hout * wout, cout)
            dw = (gmat.T @ cols).reshape(w.shape)
            db = gmat.sum(axis=0)
            dcols = gmat @ w.reshape(cout, -1)
            dx = _col2im(dcols, x.shape, xp_shape, w.shape[2], w.shape[3], stride, padding, hout, wout)
            return dx, dw, db
        if op == "relu":
            return ((ins[0] > 0.0) * g,)
        if op == "avgpool2":
            n, c, h, w = ins[0].shape
            up = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3)
            return (up * 0.25,)
        if op == "flatten":
            return (g.reshape(ins[0].shape),)
        if op == "add":
            return g, g
        if op == "mul":
            return g * ins[1], g * ins[0]
        if op == "scale":
            return (g * node.attrs["c"],)
        if op == "softmax_ce":
            p = aux[node.nid]
            y = self._label_bindings[node.attrs["labels_key"]]
            d = p.copy()
            d[np.arange(len(y)), y] -= 1.0
            return (d * (float(g) / len(y)),)
        raise GraphError(f"unknown op {op!r}")


def _im2col(x, kh, kw, stride, padding):
    n, c, h, w = x.shape
    if padding:
        xp = np.zeros((n, c, h + 2 * padding, w + 2 * padding))
        xp[:, :, padding:padding + h, padding:padding + w] = x
    else:
        xp = x
    hout = (xp.shape[2] - kh) // stride + 1
    wout = (xp.shape[3] - kw) // stride + 1
    s0, s1, s2, s3 = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, (n, c, hout, wout, kh, kw), (s0, s1, s2 * stride, s3 * stride, s2, s3),
        writeable=False)
    # column layout is row-major over (in-channel, kernel row, kernel col)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * hout * wout, c * kh * kw)
    return cols, xp.shape, (hout, wout)


def _col2im(dcols, x_shape, xp_shape, kh, kw, stride, padding, hout, wout):
    n, c, h, w = x_shape
    dxp = np.zeros(xp_shape)
    dwin = dcols.reshape(n, hout, wout, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + hout * stride:stride, j:j + wout * stride:stride] += dwin[:, :, :, :, i, j]
    if padding:
        return dxp[:, :, padding:padding + h, padding:padding + w]
    return dxp


@dataclass
class FiniteDiffReport:
    max_rel_error: float
    worst_leaf: str
    worst_index: tuple
    analytic: float
    numeric: float
    tolerance: float
    passed: bool


def finite_diff_check(graph: CompGraph, bindings: dict, step: float = 1e-5,
                      tolerance: float = 1e-6) -> FiniteDiffReport:
    """Compare backward gradients against central finite differences.

    Perturbs every coordinate of every leaf by +-step. Relative error uses
    a max(|analytic|, |numeric|, 1e-12) denominator.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    work = {k: as_tensor(v).copy() if k in graph.leaves else np.asarray(v)
            for k, v in bindings.items()}
    graph.forward(work)
    grads = graph.backward()
    worst = (0.0, "", (), 0.0, 0.0)
    for name, nid in graph.leaves.items():
        arr = work[name]
        flat = arr.reshape(-1)
        gflat = grads[name].reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            fp = graph.forward(work)
            flat[i] = keep - step
            fm = graph.forward(work)
            flat[i] = keep
            numeric = (fp - fm) / (2.0 * step)
            analytic = gflat[i]
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12)
            if rel > worst[0]:
                worst = (rel, name, np.unravel_index(i, arr.shape), float(analytic), float(numeric))
    graph.forward(work)  # leave the cache consistent with the bindings
    rel, name, idx, analytic, numeric = worst
    return FiniteDiffReport(rel, name, idx, analytic, numeric, tolerance, rel <= tolerance)
