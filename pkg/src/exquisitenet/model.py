"""Full network assembly, parameter accounting, and weight serialization.

The default configuration stacks five ME/DFSEB pairs over the channel
schedule (12, 50, 100, 200, 350), then a biased 1x1 convolution to 640,
hard swish, global average pooling, dropout, and the classifier. A "micro"
preset scales the same blocks down to 64x64 inputs for desk-scale training.
"""

import io
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .blocks import DFSEBBlock, MEBlock
from .errors import ConfigError, FormatError, ShapeError
from .layers import Conv2d, Dropout, GlobalAvgPool, HardSwish, Linear
from .tensor import DEFAULT_DTYPE

MAGIC = b"EXQW"
FORMAT_VERSION = 1
_DTYPE_CODES = {0: np.float32, 1: np.float64}
_DTYPE_IDS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; defaults give the full-size network."""

    schedule: tuple = (12, 50, 100, 200, 350)
    head_width: int = 640
    classes: int = 102
    dropout: float = 0.2
    se_reduction: int = 4
    resolution: int = 224

    def __post_init__(self):
        object.__setattr__(self, "schedule", tuple(int(c) for c in self.schedule))
        if len(self.schedule) == 0:
            raise ConfigError("channel schedule must be non-empty")
        if any(b <= a for a, b in zip(self.schedule, self.schedule[1:])):
            raise ConfigError(f"channel schedule must be strictly increasing: {self.schedule}")
        if self.resolution % (2 ** len(self.schedule)) != 0:
            raise ConfigError(
                f"resolution {self.resolution} not divisible by 2^{len(self.schedule)}")
        if self.classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.classes}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, blob):
        raw = json.loads(blob)
        raw["schedule"] = tuple(raw["schedule"])
        return cls(**raw)


# Desk-scale preset: same 15-stage topology, scaled-down widths. Dropout is
# disabled here; at 400 training images it only injects step-loss noise.
MICRO = ModelConfig(schedule=(4, 8, 12, 16, 20), head_width=64, classes=4,
                    dropout=0.0, se_reduction=4, resolution=64)
FULL = ModelConfig()


@dataclass
class ParamCount:
    per_stage: dict
    total: int

    @property
    def millions(self):
        return round(self.total / 1e6, 2)


class ModelGraph:
    """Ordered stages plus a named registry of every trainable tensor."""

    def __init__(self, config, stages, dtype=DEFAULT_DTYPE):
        self.config = config
        self.stages = stages  # list of (name, layer) in execution order
        self.dtype = np.dtype(dtype)

    def stage(self, name):
        for n, layer in self.stages:
            if n == name:
                return layer
        raise KeyError(name)

    def forward(self, x, train=False):
        self._check_input(x)
        for _, layer in self.stages:
            x = layer.forward(x, train)
        return x

    def forward_trace(self, x, train=False):
        """Forward pass that also returns [(stage name, output shape), ...]."""
        self._check_input(x)
        trace = []
        for name, layer in self.stages:
            x = layer.forward(x, train)
            trace.append((name, tuple(x.shape)))
        return x, trace

    def forward_collect(self, x, train=False):
        """Forward pass keeping every stage output (used by Grad-CAM)."""
        self._check_input(x)
        outputs = {}
        for name, layer in self.stages:
            x = layer.forward(x, train)
            outputs[name] = x
        return x, outputs

    def backward(self, dout, upto=None):
        """Backpropagate; with `upto`, stop after that stage and return the
        gradient w.r.t. its output instead of the model input."""
        for name, layer in reversed(self.stages):
            if name == upto:
                return dout
            dout = layer.backward(dout)
        if upto is not None:
            raise KeyError(upto)
        return dout

    def parameters(self):
        return self._collect("parameters")

    def gradients(self):
        return self._collect("gradients")

    def buffers(self):
        return self._collect("buffers")

    def _collect(self, method):
        out = {}
        for name, layer in self.stages:
            for k, v in getattr(layer, method)().items():
                out[f"{name}.{k}"] = v
        return out

    def _check_input(self, x):
        r = self.config.resolution
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != r or x.shape[3] != r:
            raise ShapeError(f"expected input [N,3,{r},{r}], got {tuple(x.shape)}")

    def set_dropout_rng(self, rng):
        self.stage("dropout").rng = rng

    def clone_for_inference(self):
        """Structural copy sharing parameter and buffer arrays (fresh caches),
        safe to run on another thread in eval mode."""
        twin = build(self.config, np.random.default_rng(0), dtype=self.dtype)
        src_p, src_b = self.parameters(), self.buffers()
        _assign(twin, src_p, src_b, copy=False)
        return twin


def build(config, rng, dtype=DEFAULT_DTYPE):
    """Construct the network described by `config`, deterministically for a
    seeded generator."""
    if not isinstance(config, ModelConfig):
        raise ConfigError(f"expected ModelConfig, got {type(config).__name__}")
    dtype = np.dtype(dtype)
    stages = []
    cin = 3
    for i, cout in enumerate(config.schedule, start=1):
        stages.append((f"me{i}", MEBlock(cin, cout, rng=rng, dtype=dtype)))
        stages.append((f"dfseb{i}", DFSEBBlock(cout, reduction=config.se_reduction,
                                               rng=rng, dtype=dtype)))
        cin = cout
    stages.append(("head_conv", Conv2d(cin, config.head_width, 1, bias=True,
                                       rng=rng, dtype=dtype)))
    stages.append(("head_act", HardSwish()))
    stages.append(("gap", GlobalAvgPool()))
    stages.append(("dropout", Dropout(config.dropout, rng=np.random.default_rng(rng.integers(2 ** 63)))))
    stages.append(("fc", Linear(config.head_width, config.classes, rng=rng, dtype=dtype)))
    return ModelGraph(config, stages, dtype=dtype)


def count_params(model):
    """Exact trainable-parameter counts per stage and in total.

    Counted two ways internally (registry sum and per-stage sum) which must
    agree; running statistics are buffers and are not counted.
    """
    per_stage = {}
    for name, layer in model.stages:
        per_stage[name] = int(sum(v.size for v in layer.parameters().values()))
    total = sum(per_stage.values())
    registry_total = int(sum(v.size for v in model.parameters().values()))
    if total != registry_total:
        raise AssertionError(f"stage sum {total} != registry sum {registry_total}")
    return ParamCount(per_stage=per_stage, total=total)


def save(model, path):
    """Write weights and config to `path` in the .eqw container."""
    params = model.parameters()
    buffers = model.buffers()
    entries = list(params.items()) + list(buffers.items())
    blob = model.config.to_json().encode("utf-8")
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", FORMAT_VERSION))
    out.write(struct.pack("<I", len(blob)))
    out.write(blob)
    out.write(struct.pack("<I", len(entries)))
    for name, arr in entries:
        nb = name.encode("utf-8")
        out.write(struct.pack("<H", len(nb)))
        out.write(nb)
        out.write(struct.pack("<BB", _DTYPE_IDS[arr.dtype], arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.write(np.ascontiguousarray(arr).astype(arr.dtype, copy=False)
                  .tobytes(order="C"))
    with open(path, "wb") as fh:
        fh.write(out.getvalue())


def load(path):
    """Read a .eqw container back into a ModelGraph.

    Raises FormatError (with byte offset) on bad magic, unknown version, or
    truncation; never returns a partially assigned model.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    (version,) = struct.unpack("<I", r.take(4, "version"))
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    (blob_len,) = struct.unpack("<I", r.take(4, "config length"))
    blob = r.take(blob_len, "config blob")
    try:
        config = ModelConfig.from_json(blob.decode("utf-8"))
    except (ValueError, TypeError, KeyError) as e:
        raise FormatError(f"bad config blob: {e}", 12) from e
    (count,) = struct.unpack("<I", r.take(4, "tensor count"))
    tensors = {}
    dtype = np.float32
    for _ in range(count):
        at = r.offset
        (name_len,) = struct.unpack("<H", r.take(2, "name length"))
        name = r.take(name_len, "name").decode("utf-8")
        dtype_id, rank = struct.unpack("<BB", r.take(2, "dtype/rank"))
        if dtype_id not in _DTYPE_CODES:
            raise FormatError(f"unknown dtype code {dtype_id} for {name!r}", at)
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, "dims"))
        dt = np.dtype(_DTYPE_CODES[dtype_id])
        payload = r.take(int(np.prod(dims)) * dt.itemsize, f"payload of {name!r}")
        tensors[name] = np.frombuffer(payload, dtype=dt.newbyteorder("<")).astype(dt).reshape(dims)
        dtype = dt.type
    model = build(config, np.random.default_rng(0), dtype=dtype)
    _assign(model, tensors, tensors, copy=True, strict_names=True)
    return model


class _Reader:
    def __init__(self, data):
        self.data = data
        self.offset = 0

    def take(self, n, what):
        if self.offset + n > len(self.data):
            raise FormatError(f"truncated while reading {what}", self.offset)
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk


def _assign(model, params_src, buffers_src, copy, strict_names=False):
    want_p = model.parameters()
    want_b = model.buffers()
    if strict_names:
        want = set(want_p) | set(want_b)
        have = set(params_src) | set(buffers_src)
        if want != have:
            missing = sorted(want - have)
            extra = sorted(have - want)
            raise FormatError(f"tensor names disagree (missing {missing}, extra {extra})", 0)
    for registry in (want_p, want_b):
        for name, arr in registry.items():
            src = params_src.get(name, buffers_src.get(name))
            if src.shape != arr.shape:
                raise FormatError(f"shape mismatch for {name!r}: {src.shape} vs {arr.shape}", 0)
            _set_by_name(model, name, src.copy() if copy else src)


def _set_by_name(model, name, value):
    stage_name, rest = name.split(".", 1)
    obj = model.stage(stage_name)
    parts = rest.split(".")
    for part in parts[:-1]:
        obj = getattr(obj, part)
    leaf = parts[-1]
    attr = {"gamma": "gamma", "beta": "beta", "weight": "weight", "bias": "bias",
            "running_mean": "running_mean", "running_var": "running_var"}[leaf]
    setattr(obj, attr, value)
