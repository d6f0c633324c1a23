"""Network assembly: ordered parameterized layers, builders, binary
checkpoints, and deep cloning.

Parameterized layers (dense, conv2d) carry consecutive ordinals 1..L in
forward order; activations, pooling, and flatten carry none. Ordinal 1 is
the layer closest to the input.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import CompGraph, as_tensor

CHECKPOINT_MAGIC = b"LAPC"
CHECKPOINT_VERSION = 1

_META_INPUT_SHAPE = "__meta__.input_shape"
_META_NUM_CLASSES = "__meta__.num_classes"
_META_STAGES = "__meta__.stages"

# opcode stream for the stages meta record
_OPCODES = {"conv2d": 1, "dense": 2, "relu": 3, "avgpool2": 4, "flatten": 5}
_OPNAMES = {v: k for k, v in _OPCODES.items()}


class NetSpecError(ValueError):
    pass


class CheckpointError(Exception):
    """Base class for checkpoint format failures."""


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


@dataclass
class NetSpec:
    """Declarative architecture: stage dicts validated before construction.

    Stage forms: {"op": "conv2d", "out_channels", "kernel", "stride", "padding"},
    {"op": "dense", "out_features"}, {"op": "relu"}, {"op": "avgpool2"},
    {"op": "flatten"}.
    """

    input_shape: tuple      # (C, H, W)
    num_classes: int
    stages: list

    def validate(self) -> list:
        """Walk the shape chain; returns the per-stage output shapes.

        Raises NetSpecError naming the first stage that breaks the chain.
        """
        if len(self.input_shape) != 3 or any(d < 1 for d in self.input_shape):
            raise NetSpecError(f"input_shape must be (C, H, W) positive, got {self.input_shape}")
        if self.num_classes < 2:
            raise NetSpecError("num_classes must be at least 2")
        shape = tuple(self.input_shape)
        shapes = []
        for i, st in enumerate(self.stages):
            op = st.get("op")
            if op == "conv2d":
                if len(shape) != 3:
                    raise NetSpecError(f"stage {i}: conv2d needs (C,H,W) input, have {shape}")
                k = st["kernel"]
                stride = st.get("stride", 1)
                pad = st.get("padding", 0)
                hout = (shape[1] + 2 * pad - k) // stride + 1
                wout = (shape[2] + 2 * pad - k) // stride + 1
                if hout < 1 or wout < 1:
                    raise NetSpecError(f"stage {i}: kernel {k} too large for {shape}")
                shape = (st["out_channels"], hout, wout)
            elif op == "dense":
                if len(shape) != 1:
                    raise NetSpecError(f"stage {i}: dense needs flattened input, have {shape}")
                shape = (st["out_features"],)
            elif op == "relu":
                pass
            elif op == "avgpool2":
                if len(shape) != 3 or shape[1] % 2 or shape[2] % 2:
                    raise NetSpecError(f"stage {i}: avgpool2 needs even (C,H,W), have {shape}")
                shape = (shape[0], shape[1] // 2, shape[2] // 2)
            elif op == "flatten":
                shape = (int(np.prod(shape)),)
            else:
                raise NetSpecError(f"stage {i}: unknown op {op!r}")
            shapes.append(shape)
        if shape != (self.num_classes,):
            raise NetSpecError(f"final stage must emit ({self.num_classes},) logits, have {shape}")
        return shapes


def desk_cnn_spec(input_shape=(1, 16, 16), num_classes=2, widths=(8, 16, 64)) -> NetSpec:
    """Reference 4-ordinal CNN: conv-conv former block, dense-dense latter block."""
    c, h, w = input_shape
    c1, c2, hidden = widths
    s = (h // 4) * (w // 4)
    return NetSpec(
        input_shape=tuple(input_shape),
        num_classes=num_classes,
        stages=[
            {"op": "conv2d", "out_channels": c1, "kernel": 3, "stride": 1, "padding": 1},
            {"op": "relu"},
            {"op": "avgpool2"},
            {"op": "conv2d", "out_channels": c2, "kernel": 3, "stride": 1, "padding": 1},
            {"op": "relu"},
            {"op": "avgpool2"},
            {"op": "flatten"},
            {"op": "dense", "out_features": hidden},
            {"op": "relu"},
            {"op": "dense", "out_features": num_classes},
        ],
    )


@dataclass
class ParamLayer:
    name: str
    ordinal: int
    kind: str               # "dense" | "conv2d"
    weight: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: int = 0


class Network:
    """Ordered parameterized layers interleaved with non-parametric ops.

    ``stages`` holds ParamLayer instances and the strings "relu",
    "avgpool2", "flatten". Immutable during evaluation; training steps and
    pruning require exclusive access.
    """

    def __init__(self, input_shape, num_classes, stages):
        self.input_shape = tuple(input_shape)
        self.num_classes = int(num_classes)
        self.stages = stages
        self._graphs = {}

    @property
    def param_layers(self) -> list[ParamLayer]:
        return [s for s in self.stages if isinstance(s, ParamLayer)]

    @property
    def num_ordinals(self) -> int:
        return len(self.param_layers)

    def layer(self, ordinal: int) -> ParamLayer:
        for s in self.param_layers:
            if s.ordinal == ordinal:
                return s
        raise ValueError(f"no layer with ordinal {ordinal} (L={self.num_ordinals})")

    def spec(self) -> NetSpec:
        stages = []
        for s in self.stages:
            if isinstance(s, ParamLayer):
                if s.kind == "conv2d":
                    stages.append({"op": "conv2d", "out_channels": s.weight.shape[0],
                                   "kernel": s.weight.shape[2], "stride": s.stride,
                                   "padding": s.padding})
                else:
                    stages.append({"op": "dense", "out_features": s.weight.shape[0]})
            else:
                stages.append({"op": s})
        return NetSpec(self.input_shape, self.num_classes, stages)

    # ------------------------------------------------------------------
    # graph plumbing

    def _graph(self, n: int):
        if n not in self._graphs:
            g = CompGraph()
            node = g.input("x", (n,) + self.input_shape)
            for s in self.stages:
                if isinstance(s, ParamLayer):
                    w = g.param(f"{s.name}.w", s.weight.shape)
                    b = g.param(f"{s.name}.b", s.bias.shape)
                    if s.kind == "conv2d":
                        node = g.conv2d(node, w, b, s.stride, s.padding)
                    else:
                        node = g.affine(node, w, b)
                elif s == "relu":
                    node = g.relu(node)
                elif s == "avgpool2":
                    node = g.avgpool2(node)
                elif s == "flatten":
                    node = g.flatten(node)
                else:
                    raise ValueError(f"unknown stage {s!r}")
            logits_node = node
            g.softmax_cross_entropy(node, "y")
            self._graphs[n] = (g, logits_node)
        return self._graphs[n]

    def _bindings(self, images, labels):
        b = {"x": images, "y": labels}
        for s in self.param_layers:
            b[f"{s.name}.w"] = s.weight
            b[f"{s.name}.b"] = s.bias
        return b

    def mean_loss(self, images, labels) -> float:
        g, _ = self._graph(len(images))
        return g.forward(self._bindings(images, labels))

    def loss_and_grads(self, images, labels):
        """One forward/backward; returns (loss, grads by leaf name incl. "x")."""
        g, _ = self._graph(len(images))
        loss = g.forward(self._bindings(images, labels))
        return loss, g.backward()

    def logits(self, images) -> np.ndarray:
        g, logits_node = self._graph(len(images))
        g.forward(self._bindings(images, np.zeros(len(images), dtype=np.int64)))
        return g.value(logits_node).copy()

    def weight_grads(self, grads: dict) -> dict:
        """Extract {ordinal: weight gradient} from a loss_and_grads result."""
        return {s.ordinal: grads[f"{s.name}.w"] for s in self.param_layers}

    def clone(self) -> "Network":
        stages = []
        for s in self.stages:
            if isinstance(s, ParamLayer):
                stages.append(ParamLayer(s.name, s.ordinal, s.kind,
                                         s.weight.copy(), s.bias.copy(),
                                         s.stride, s.padding))
            else:
                stages.append(s)
        return Network(self.input_shape, self.num_classes, stages)


def build(spec: NetSpec, init_seed: int) -> Network:
    """Construct a network: Kaiming-uniform weights (bound sqrt(6/fan_in)),
    zero biases, deterministic per seed."""
    spec.validate()
    rng = np.random.default_rng(init_seed)
    stages = []
    counters = {"conv2d": 0, "dense": 0}
    ordinal = 0
    shape = tuple(spec.input_shape)
    for st in spec.stages:
        op = st["op"]
        if op in ("conv2d", "dense"):
            counters[op] += 1
            ordinal += 1
            name = f"conv{counters['conv2d']}" if op == "conv2d" else f"fc{counters['dense']}"
            if op == "conv2d":
                k = st["kernel"]
                wshape = (st["out_channels"], shape[0], k, k)
                fan_in = shape[0] * k * k
                stride, pad = st.get("stride", 1), st.get("padding", 0)
                shape = (st["out_channels"],
                         (shape[1] + 2 * pad - k) // stride + 1,
                         (shape[2] + 2 * pad - k) // stride + 1)
                layer = ParamLayer(name, ordinal, "conv2d",
                                   _kaiming(rng, wshape, fan_in),
                                   np.zeros(wshape[0]), stride, pad)
            else:
                wshape = (st["out_features"], shape[0])
                fan_in = shape[0]
                shape = (st["out_features"],)
                layer = ParamLayer(name, ordinal, "dense",
                                   _kaiming(rng, wshape, fan_in), np.zeros(wshape[0]))
            stages.append(layer)
        else:
            if op == "avgpool2":
                shape = (shape[0], shape[1] // 2, shape[2] // 2)
            elif op == "flatten":
                shape = (int(np.prod(shape)),)
            stages.append(op)
    return Network(spec.input_shape, spec.num_classes, stages)


def _kaiming(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


# ----------------------------------------------------------------------
# checkpoint format: magic "LAPC" | version u32 LE | record count u32 LE |
# records of (name len u16 LE, utf-8 name, rank u8, dims u64 LE each,
# float64 LE payload). Architecture metadata rides in reserved-name
# records so a file fully reconstructs the network.


def _stage_opcodes(net: Network) -> list:
    codes = []
    for s in net.stages:
        if isinstance(s, ParamLayer):
            if s.kind == "conv2d":
                codes += [1, s.weight.shape[0], s.weight.shape[2], s.stride, s.padding]
            else:
                codes += [2, s.weight.shape[0]]
        else:
            codes.append(_OPCODES[s])
    return codes


def save_checkpoint(net: Network, path) -> None:
    records = [
        (_META_INPUT_SHAPE, as_tensor(net.input_shape)),
        (_META_NUM_CLASSES, as_tensor([net.num_classes])),
        (_META_STAGES, as_tensor(_stage_opcodes(net))),
    ]
    for s in net.param_layers:
        records.append((f"{s.name}.weight", s.weight))
        records.append((f"{s.name}.bias", s.bias))
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(records)))
        for name, arr in records:
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<Q", d))
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read(f, n, what):
    b = f.read(n)
    if len(b) != n:
        raise TruncatedError(f"truncated file while reading {what}")
    return b


def load_checkpoint(path) -> Network:
    with open(path, "rb") as f:
        magic = f.read(4)
        if len(magic) < 4:
            raise TruncatedError("truncated file while reading magic")
        if magic != CHECKPOINT_MAGIC:
            raise BadMagicError(f"bad magic {magic!r}")
        version, count = struct.unpack("<II", _read(f, 8, "header"))
        if version != CHECKPOINT_VERSION:
            raise VersionMismatchError(f"format version {version}, expected {CHECKPOINT_VERSION}")
        records = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _read(f, 2, "name length"))
            name = _read(f, nlen, "name").decode("utf-8")
            (rank,) = struct.unpack("<B", _read(f, 1, "rank"))
            dims = [struct.unpack("<Q", _read(f, 8, "dims"))[0] for _ in range(rank)]
            numel = int(np.prod(dims)) if dims else 1
            payload = _read(f, 8 * numel, f"payload of {name!r}")
            records[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)
        if f.read(1):
            raise CheckpointError("trailing bytes after final record")
    for key in (_META_INPUT_SHAPE, _META_NUM_CLASSES, _META_STAGES):
        if key not in records:
            raise CheckpointError(f"missing metadata record {key!r}")
    input_shape = tuple(int(v) for v in records[_META_INPUT_SHAPE])
    num_classes = int(records[_META_NUM_CLASSES][0])
    stages = _decode_stages(records[_META_STAGES])
    spec = NetSpec(input_shape, num_classes, stages)
    net = build(spec, init_seed=0)
    for s in net.param_layers:
        for attr, suffix in ((s.weight, "weight"), (s.bias, "bias")):
            key = f"{s.name}.{suffix}"
            if key not in records:
                raise CheckpointError(f"missing parameter record {key!r}")
            if records[key].shape != attr.shape:
                raise CheckpointError(
                    f"record {key!r} has shape {records[key].shape}, expected {attr.shape}")
            attr[...] = records[key]
    return net


def _decode_stages(codes) -> list:
    vals = [int(v) for v in codes]
    stages = []
    i = 0
    while i < len(vals):
        op = _OPNAMES.get(vals[i])
        if op == "conv2d":
            stages.append({"op": "conv2d", "out_channels": vals[i + 1], "kernel": vals[i + 2],
                           "stride": vals[i + 3], "padding": vals[i + 4]})
            i += 5
        elif op == "dense":
            stages.append({"op": "dense", "out_features": vals[i + 1]})
            i += 2
        elif op in ("relu", "avgpool2", "flatten"):
            stages.append({"op": op})
            i += 1
        else:
            raise CheckpointError(f"corrupt stage stream at position {i}")
    return stages
