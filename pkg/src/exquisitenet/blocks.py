"""Composite blocks: squeeze-excite gating, DFSEB residual units, ME downsampling.

A DFSEB block keeps shape and channel count and applies two residual units;
each unit runs depthwise 3x3 -> BN -> ReLU -> pointwise -> BN -> SE gate and
adds the result back onto its input (the merge itself stays linear). An ME
block halves the spatial dims with a 2x2 maxpool, then expands channels with
a bias-free pointwise convolution followed by BN.
"""

import numpy as np

from .errors import ShapeError
from .layers import BatchNorm2d, Conv2d, Layer, Linear, MaxPool2d, ReLU, sigmoid
from .tensor import DEFAULT_DTYPE


class SEBlock(Layer):
    """Channel gate: global average pool -> squeeze -> ReLU -> excite -> sigmoid.

    The gate multiplies the input per channel; no activation follows the
    product. Reduced width is max(channels // reduction, 1).
    """

    kind = "se"

    def __init__(self, c, reduction=4, rng=None, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.c = c
        self.reduction = reduction
        cr = max(c // reduction, 1)
        self.squeeze = Linear(c, cr, rng=rng, dtype=dtype)
        self.excite = Linear(cr, c, rng=rng, dtype=dtype)
        self.squeeze.bias[:] = 0
        self.excite.bias[:] = 0
        self.gate_count = 0  # cumulative sigmoid gatings, for instrumentation

    def forward(self, x, train=False):
        if x.ndim != 4 or x.shape[1] != self.c:
            raise ShapeError(f"se block expects [N,{self.c},H,W], got {x.shape}")
        n, c, h, w = x.shape
        pooled = x.mean(axis=(2, 3))
        hid = self.squeeze.forward(pooled, train)
        hid_relu = np.maximum(hid, 0)
        gate = sigmoid(self.excite.forward(hid_relu, train))
        self.gate_count += 1
        self._cache = (x, gate, hid, (h, w))
        return x * gate[:, :, None, None]

    def backward(self, dout):
        x, gate, hid, (h, w) = self._take_cache()
        dx = dout * gate[:, :, None, None]
        dgate = (dout * x).sum(axis=(2, 3))
        dexc = dgate * gate * (1.0 - gate)
        dhid_relu = self.excite.backward(dexc)
        dhid = dhid_relu * (hid > 0)
        dpooled = self.squeeze.backward(dhid)
        dx += dpooled[:, :, None, None] / (h * w)
        return dx

    def parameters(self):
        out = {}
        for prefix, lin in (("squeeze", self.squeeze), ("excite", self.excite)):
            for k, v in lin.parameters().items():
                out[f"{prefix}.{k}"] = v
        return out

    def gradients(self):
        out = {}
        for prefix, lin in (("squeeze", self.squeeze), ("excite", self.excite)):
            for k, v in lin.gradients().items():
                out[f"{prefix}.{k}"] = v
        return out


class DFSEBUnit(Layer):
    """One residual unit: v + SE(BN(PW(ReLU(BN(DW(v))))))."""

    kind = "dfseb_unit"

    def __init__(self, c, reduction=4, rng=None, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.c = c
        self.dw = Conv2d(c, c, 3, stride=1, pad=1, groups=c, bias=False, rng=rng, dtype=dtype)
        self.bn1 = BatchNorm2d(c, dtype=dtype)
        self.relu = ReLU()
        self.pw = Conv2d(c, c, 1, bias=False, rng=rng, dtype=dtype)
        self.bn2 = BatchNorm2d(c, dtype=dtype)
        self.se = SEBlock(c, reduction=reduction, rng=rng, dtype=dtype)
        self.fusion_count = 0  # cumulative residual additions

    def _children(self):
        return [("dw", self.dw), ("bn1", self.bn1), ("pw", self.pw),
                ("bn2", self.bn2), ("se", self.se)]

    def forward(self, x, train=False):
        branch = self.dw.forward(x, train)
        branch = self.bn1.forward(branch, train)
        branch = self.relu.forward(branch, train)
        branch = self.pw.forward(branch, train)
        branch = self.bn2.forward(branch, train)
        branch = self.se.forward(branch, train)
        self.fusion_count += 1
        self._cache = ()
        return x + branch

    def backward(self, dout):
        self._take_cache()
        d = self.se.backward(dout)
        d = self.bn2.backward(d)
        d = self.pw.backward(d)
        d = self.relu.backward(d)
        d = self.bn1.backward(d)
        d = self.dw.backward(d)
        return dout + d

    def parameters(self):
        return _collect(self._children(), "parameters")

    def gradients(self):
        return _collect(self._children(), "gradients")

    def buffers(self):
        return _collect(self._children(), "buffers")


class DFSEBBlock(Layer):
    """Two sequential residual units; input and output shapes are identical."""

    kind = "dfseb"

    def __init__(self, c, reduction=4, rng=None, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.c = c
        self.unit1 = DFSEBUnit(c, reduction=reduction, rng=rng, dtype=dtype)
        self.unit2 = DFSEBUnit(c, reduction=reduction, rng=rng, dtype=dtype)
        self.last_fusions = 0
        self.last_gatings = 0

    def _children(self):
        return [("unit1", self.unit1), ("unit2", self.unit2)]

    def forward(self, x, train=False):
        fuse0 = self.unit1.fusion_count + self.unit2.fusion_count
        gate0 = self.unit1.se.gate_count + self.unit2.se.gate_count
        y = self.unit1.forward(x, train)
        y = self.unit2.forward(y, train)
        self.last_fusions = self.unit1.fusion_count + self.unit2.fusion_count - fuse0
        self.last_gatings = self.unit1.se.gate_count + self.unit2.se.gate_count - gate0
        self._cache = ()
        return y

    def backward(self, dout):
        self._take_cache()
        d = self.unit2.backward(dout)
        return self.unit1.backward(d)

    def parameters(self):
        return _collect(self._children(), "parameters")

    def gradients(self):
        return _collect(self._children(), "gradients")

    def buffers(self):
        return _collect(self._children(), "buffers")


class MEBlock(Layer):
    """maxpool(2,2) -> pointwise conv cin->cout (no bias) -> BN."""

    kind = "me"

    def __init__(self, cin, cout, rng=None, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.cin, self.cout = cin, cout
        self.pool = MaxPool2d(2, 2)
        self.pw = Conv2d(cin, cout, 1, bias=False, rng=rng, dtype=dtype)
        self.bn = BatchNorm2d(cout, dtype=dtype)

    def _children(self):
        return [("pw", self.pw), ("bn", self.bn)]

    def forward(self, x, train=False):
        n, c, h, w = x.shape
        if h % 2 or w % 2 or h < 2 or w < 2:
            raise ShapeError(f"me block needs even spatial dims >= 2, got {h}x{w}")
        y = self.pool.forward(x, train)
        y = self.pw.forward(y, train)
        y = self.bn.forward(y, train)
        self._cache = ()
        return y

    def backward(self, dout):
        self._take_cache()
        d = self.bn.backward(dout)
        d = self.pw.backward(d)
        return self.pool.backward(d)

    def parameters(self):
        return _collect(self._children(), "parameters")

    def gradients(self):
        return _collect(self._children(), "gradients")

    def buffers(self):
        return _collect(self._children(), "buffers")


def _collect(children, method):
    out = {}
    for name, child in children:
        for k, v in getattr(child, method)().items():
            out[f"{name}.{k}"] = v
    return out
