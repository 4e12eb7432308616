"""Minimal dense-tensor engine with reverse-mode differentiation.

Just enough primitives to express the unfolding reconstruction network,
all in float64 so finite-difference checks resolve cleanly.  Tensors
record their producing operation; ``backward()`` on a scalar output
topologically sorts the graph and accumulates gradients additively into
every tensor with ``requires_grad``.

Shapes follow the image convention (H, W, C) with channels last; the only
broadcasting allowed is the channel-wise bias of ``add_bias``/``conv2d``.
"""

from __future__ import annotations

import itertools
import json
from pathlib import Path

import numpy as np

from .errors import NumericError, ParameterError, ShapeError

_node_counter = itertools.count()


class Tensor:
    """Immutable-once-built n-d array node in a reverse-mode graph."""

    __slots__ = ("data", "requires_grad", "grad", "node_id", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        if self.data.ndim > 4:
            raise ShapeError(f"tensors support up to 4 dims, got {self.data.ndim}")
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node_id = next(_node_counter)
        self._parents = ()
        self._backward = None
        if not np.all(np.isfinite(self.data)):
            raise NumericError(f"non-finite values in tensor node {self.node_id}")

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise ShapeError("backward() requires a scalar output")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # light operator sugar; heavy lifting stays in the named primitives
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else shift_by(self, other)

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else shift_by(self, -other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _toposort(root: Tensor) -> list[Tensor]:
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    return order


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=np.float64)
    out.requires_grad = any(p.requires_grad for p in parents)
    out.grad = None
    out.node_id = next(_node_counter)
    if not np.all(np.isfinite(out.data)):
        raise NumericError(f"non-finite output of {op} at node {out.node_id}")
    if out.requires_grad:
        needy = tuple(p for p in parents if p.requires_grad or p._parents)
        out._parents = needy
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


# ---------------------------------------------------------------------------
# Elementwise and affine primitives
# ---------------------------------------------------------------------------

def add(x: Tensor, y: Tensor) -> Tensor:
    if x.shape != y.shape:
        raise ShapeError(f"add shapes differ: {x.shape} vs {y.shape}")

    def bwd(g):
        _accumulate(x, g)
        _accumulate(y, g)

    return _make(x.data + y.data, (x, y), bwd, "add")


def sub(x: Tensor, y: Tensor) -> Tensor:
    if x.shape != y.shape:
        raise ShapeError(f"sub shapes differ: {x.shape} vs {y.shape}")

    def bwd(g):
        _accumulate(x, g)
        _accumulate(y, -g)

    return _make(x.data - y.data, (x, y), bwd, "sub")


def mul(x: Tensor, y: Tensor) -> Tensor:
    if x.shape != y.shape:
        raise ShapeError(f"mul shapes differ: {x.shape} vs {y.shape}")

    def bwd(g):
        _accumulate(x, g * y.data)
        _accumulate(y, g * x.data)

    return _make(x.data * y.data, (x, y), bwd, "mul")


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def bwd(g):
        _accumulate(x, g * c)

    return _make(x.data * c, (x,), bwd, "scale")


def shift_by(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def bwd(g):
        _accumulate(x, g)

    return _make(x.data + c, (x,), bwd, "shift_by")


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Channel-wise bias: b has the length of x's last dim."""
    if b.data.ndim != 1 or b.shape[0] != x.shape[-1]:
        raise ShapeError(f"bias shape {b.shape} incompatible with {x.shape}")

    def bwd(g):
        _accumulate(x, g)
        _accumulate(b, g.reshape(-1, g.shape[-1]).sum(axis=0))

    return _make(x.data + b.data, (x, b), bwd, "add_bias")


def gelu(x: Tensor) -> Tensor:
    from scipy.special import erf

    phi = 0.5 * (1.0 + erf(x.data / np.sqrt(2.0)))
    dens = np.exp(-0.5 * x.data**2) / np.sqrt(2.0 * np.pi)

    def bwd(g):
        _accumulate(x, g * (phi + x.data * dens))

    return _make(x.data * phi, (x,), bwd, "gelu")


def softplus(x: Tensor) -> Tensor:
    out = np.logaddexp(0.0, x.data)
    sig = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def bwd(g):
        _accumulate(x, g * sig)

    return _make(out, (x,), bwd, "softplus")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def bwd(g):
        _accumulate(x, g * mask)

    return _make(np.where(mask, x.data, 0.0), (x,), bwd, "relu")


def matmul(x: Tensor, y: Tensor) -> Tensor:
    if x.data.ndim != 2 or y.data.ndim != 2 or x.shape[1] != y.shape[0]:
        raise ShapeError(f"matmul needs (n,k)@(k,m), got {x.shape} @ {y.shape}")

    def bwd(g):
        _accumulate(x, g @ y.data.T)
        _accumulate(y, x.data.T @ g)

    return _make(x.data @ y.data, (x, y), bwd, "matmul")


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last dim."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        inner = (g * s).sum(axis=-1, keepdims=True)
        _accumulate(x, s * (g - inner))

    return _make(s, (x,), bwd, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last dim to zero mean / unit variance, then affine."""
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError("layer_norm affine parameters must match the channel count")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv

    def bwd(g):
        gg = g * gamma.data
        m1 = gg.mean(axis=-1, keepdims=True)
        m2 = (gg * xhat).mean(axis=-1, keepdims=True)
        _accumulate(x, inv * (gg - m1 - xhat * m2))
        flat_axes = tuple(range(g.ndim - 1))
        _accumulate(gamma, (g * xhat).sum(axis=flat_axes))
        _accumulate(beta, g.sum(axis=flat_axes))

    return _make(gamma.data * xhat + beta.data, (x, gamma, beta), bwd, "layer_norm")


# ---------------------------------------------------------------------------
# Spatial primitives on (H, W, C)
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-1 convolution with zero 'same' padding; kernels 1x1 or 3x3."""
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise ShapeError(f"conv2d needs (H,W,Cin) and (kh,kw,Cin,Cout), got {x.shape}, {w.shape}")
    kh, kw, cin, cout = w.shape
    if kh != kw or kh not in (1, 3):
        raise ShapeError(f"conv2d supports 1x1 and 3x3 kernels, got {kh}x{kw}")
    if cin != x.shape[2]:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape[2]}, weight {cin}")
    h, wd = x.shape[:2]
    ph = kh // 2
    xp = np.pad(x.data, ((ph, ph), (ph, ph), (0, 0))) if ph else x.data
    out = np.zeros((h, wd, cout))
    for u in range(kh):
        for v in range(kw):
            patch = xp[u:u + h, v:v + wd, :].reshape(-1, cin)
            out += (patch @ w.data[u, v]).reshape(h, wd, cout)
    if bias is not None:
        if bias.shape != (cout,):
            raise ShapeError("conv2d bias must have one entry per output channel")
        out += bias.data

    def bwd(g):
        gflat = g.reshape(-1, cout)
        dxp = np.zeros_like(xp)
        dw = np.zeros_like(w.data)
        for u in range(kh):
            for v in range(kw):
                patch = xp[u:u + h, v:v + wd, :].reshape(-1, cin)
                dw[u, v] = patch.T @ gflat
                dxp[u:u + h, v:v + wd, :] += (gflat @ w.data[u, v].T).reshape(h, wd, cin)
        _accumulate(w, dw)
        _accumulate(x, dxp[ph:ph + h, ph:ph + wd, :] if ph else dxp)
        if bias is not None:
            _accumulate(bias, g.sum(axis=(0, 1)))

    parents = (x, w) if bias is None else (x, w, bias)
    return _make(out, parents, bwd, "conv2d")


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 mean pooling; spatial dims must be even."""
    h, w = x.shape[:2]
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2 needs even spatial dims, got {x.shape}")
    out = x.data.reshape(h // 2, 2, w // 2, 2, -1).mean(axis=(1, 3))

    def bwd(g):
        up = np.repeat(np.repeat(g, 2, axis=0), 2, axis=1) * 0.25
        _accumulate(x, up.reshape(x.shape))

    return _make(out.reshape(h // 2, w // 2, x.shape[2]), (x,), bwd, "avg_pool2")


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbor 2x upsampling."""
    out = np.repeat(np.repeat(x.data, 2, axis=0), 2, axis=1)

    def bwd(g):
        h2, w2 = g.shape[:2]
        _accumulate(x, g.reshape(h2 // 2, 2, w2 // 2, 2, -1).sum(axis=(1, 3)).reshape(x.shape))

    return _make(out, (x,), bwd, "upsample2")


def nearest_resize(x: Tensor, out_hw: tuple[int, int]) -> Tensor:
    """Nearest-neighbor resize of the leading two dims (stretching priors)."""
    h, w = x.shape[:2]
    h2, w2 = out_hw
    iy = np.minimum((np.arange(h2) * h) // h2, h - 1)
    ix = np.minimum((np.arange(w2) * w) // w2, w - 1)
    out = x.data[iy][:, ix]

    def bwd(g):
        rows = np.zeros((h,) + g.shape[1:])
        np.add.at(rows, iy, g)
        dx = np.zeros_like(x.data)
        np.add.at(dx.swapaxes(0, 1), ix, rows.swapaxes(0, 1))
        _accumulate(x, dx)

    return _make(out, (x,), bwd, "nearest_resize")


def pad2d(x: Tensor, bottom: int, right: int) -> Tensor:
    """Zero-pad the bottom/right spatial edges."""
    out = np.pad(x.data, ((0, bottom), (0, right), (0, 0)))
    h, w = x.shape[:2]

    def bwd(g):
        _accumulate(x, g[:h, :w, :])

    return _make(out, (x,), bwd, "pad2d")


def crop2d(x: Tensor, height: int, width: int) -> Tensor:
    """Keep the top-left (height, width) spatial region."""
    if height > x.shape[0] or width > x.shape[1]:
        raise ShapeError("crop2d target exceeds input size")
    out = x.data[:height, :width, :]

    def bwd(g):
        dx = np.zeros_like(x.data)
        dx[:height, :width, :] = g
        _accumulate(x, dx)

    return _make(out, (x,), bwd, "crop2d")


def concat(tensors: list[Tensor]) -> Tensor:
    """Concatenate along the channel (last) dim."""
    base = tensors[0].shape[:-1]
    for t in tensors:
        if t.shape[:-1] != base:
            raise ShapeError("concat inputs must share all but the last dim")
    sizes = [t.shape[-1] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            _accumulate(t, g[..., lo:hi])

    return _make(np.concatenate([t.data for t in tensors], axis=-1),
                 tuple(tensors), bwd, "concat")


def split(x: Tensor, sizes: list[int]) -> tuple[Tensor, ...]:
    """Split the channel (last) dim into consecutive chunks."""
    if sum(sizes) != x.shape[-1]:
        raise ShapeError(f"split sizes {sizes} do not cover {x.shape[-1]} channels")
    offsets = np.cumsum([0] + list(sizes))
    outs = []
    for lo, hi in zip(offsets[:-1], offsets[1:]):
        lo_, hi_ = int(lo), int(hi)

        def bwd(g, lo=lo_, hi=hi_):
            dg = np.zeros_like(x.data)
            dg[..., lo:hi] = g
            _accumulate(x, dg)

        outs.append(_make(x.data[..., lo_:hi_], (x,), bwd, "split"))
    return tuple(outs)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    def bwd(g):
        _accumulate(x, g.reshape(x.shape))

    return _make(x.data.reshape(shape), (x,), bwd, "reshape")


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    inv = np.argsort(axes)

    def bwd(g):
        _accumulate(x, g.transpose(inv))

    return _make(x.data.transpose(axes), (x,), bwd, "transpose")


def circular_shift(x: Tensor, dy: int, dx: int) -> Tensor:
    """Circularly shift the last two dims; the pullback is the inverse shift."""
    if x.data.ndim < 2:
        raise ShapeError("circular_shift needs at least 2 dims")
    out = np.roll(x.data, (dy, dx), axis=(-2, -1))

    def bwd(g):
        _accumulate(x, np.roll(g, (-dy, -dx), axis=(-2, -1)))

    return _make(out, (x,), bwd, "circular_shift")


def channel_shuffle(x: Tensor, groups: int) -> Tensor:
    """Group-transpose permutation of the channel (last) dim."""
    c = x.shape[-1]
    if groups < 1 or c % groups:
        raise ParameterError(f"channels {c} not divisible by groups {groups}")
    lead = x.shape[:-1]
    out = (x.data.reshape(lead + (groups, c // groups))
           .swapaxes(-1, -2)
           .reshape(x.shape))

    def bwd(g):
        back = (g.reshape(lead + (c // groups, groups))
                .swapaxes(-1, -2)
                .reshape(x.shape))
        _accumulate(x, back)

    return _make(out, (x,), bwd, "channel_shuffle")


def sum_all(x: Tensor) -> Tensor:
    def bwd(g):
        _accumulate(x, np.full_like(x.data, float(g)))

    return _make(np.array(x.data.sum()), (x,), bwd, "sum_all")


def custom_linear(x: Tensor, matvec, rmatvec, op: str = "custom_linear") -> Tensor:
    """Wrap an external linear map; its transpose supplies the pullback."""

    def bwd(g):
        _accumulate(x, rmatvec(g))

    return _make(matvec(x.data), (x,), bwd, op)


# ---------------------------------------------------------------------------
# Verification and persistence
# ---------------------------------------------------------------------------

def grad_check(f, x: Tensor, h: float = 1e-5, probes: int = 20, seed: int = 0) -> float:
    """Max relative error between reverse-mode and central differences.

    ``f`` must map a tensor to a scalar tensor.  Each probe compares the
    directional derivative <grad, v> against (f(x+hv) - f(x-hv)) / 2h for
    a random unit direction v.
    """
    if not 1e-7 <= h <= 1e-4:
        raise ParameterError(f"step h must lie in [1e-7, 1e-4], got {h}")
    if probes < 1:
        raise ParameterError("need at least one probe")
    probe_x = Tensor(x.data.copy(), requires_grad=True)
    out = f(probe_x)
    if out.data.size != 1:
        raise ShapeError("grad_check requires a scalar-valued function")
    out.backward()
    g = probe_x.grad if probe_x.grad is not None else np.zeros_like(x.data)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(probes):
        v = rng.standard_normal(x.data.shape)
        v /= np.linalg.norm(v.ravel())
        fp = float(f(Tensor(x.data + h * v)).data)
        fm = float(f(Tensor(x.data - h * v)).data)
        fd = (fp - fm) / (2.0 * h)
        ip = float(np.vdot(g, v))
        err = abs(fd - ip) / max(abs(fd), abs(ip), 1e-12)
        worst = max(worst, err)
    return worst


def save_checkpoint(params: dict[str, Tensor], stem) -> None:
    """Flat float64 payload at <stem>.bin plus a name->shape/offset manifest."""
    stem = Path(stem)
    manifest = {}
    offset = 0
    chunks = []
    for name, t in params.items():
        arr = np.ascontiguousarray(t.data, dtype=np.float64)
        manifest[name] = {"shape": list(arr.shape), "offset": offset}
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    stem.with_suffix(".bin").write_bytes(b"".join(chunks))
    stem.with_suffix(".json").write_text(
        json.dumps({"dtype": "float64", "params": manifest}, indent=1, sort_keys=True))


def load_manifest(stem) -> dict:
    return json.loads(Path(stem).with_suffix(".json").read_text())


def load_checkpoint(stem) -> dict[str, np.ndarray]:
    stem = Path(stem)
    manifest = load_manifest(stem)
    raw = stem.with_suffix(".bin").read_bytes()
    out = {}
    for name, info in manifest["params"].items():
        shape = tuple(info["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = info["offset"]
        arr = np.frombuffer(raw, dtype=np.float64, count=count, offset=start)
        out[name] = arr.reshape(shape).copy()
    return out


def load_into(params: dict[str, Tensor], stem) -> None:
    """Overwrite parameter values in place from a checkpoint."""
    stored = load_checkpoint(stem)
    missing = set(params) - set(stored)
    extra = set(stored) - set(params)
    if missing or extra:
        raise ShapeError(
            f"checkpoint mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
    for name, t in params.items():
        if stored[name].shape != t.data.shape:
            raise ShapeError(f"parameter {name} shape {stored[name].shape} != {t.data.shape}")
        t.data = stored[name]
