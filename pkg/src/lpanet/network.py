"""Residual feed-forward network with a shared readout.

    x_0 = P u + p                              (affine preprocessing)
    x_i = x_{i-1} + G_i(x_{i-1}),  G_i(x) = W'_i relu(W_i x + b_i) + b'_i
    prediction at depth i = R x_i              (one readout R for all depths)

All parameters live in a single flat float64 buffer ``theta``; the named
arrays (``preproc_w``, ``blocks[i].w_in``, ``readout``...) are views into
it.  Buffer order is preproc_w, preproc_b, then for each block w_in, b_in,
w_out, b_out, then readout.  The same order is used by the kernels, the
optimizer state and the checkpoint payload.

Forward functions accept one sample (1-D input) or a batch (2-D, one sample
per row) and return arrays of matching rank.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .linalg import DimensionError
from .rng import Xoshiro256pp

__all__ = [
    "Dims",
    "ResidualBlockParams",
    "ResidualNetwork",
    "Gradients",
    "ForwardStates",
    "init_network",
    "block_forward",
    "preprocess",
    "forward_collect",
    "readout_at_depth",
    "decompose_contributions",
    "truncated_predict",
    "predict",
    "residual_target",
]


@dataclass(frozen=True)
class Dims:
    d_in: int = 2
    d: int = 30
    hidden: int = 30
    d_y: int = 1
    n_blocks: int = 6

    def __post_init__(self):
        for name in ("d_in", "d", "hidden", "d_y", "n_blocks"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise ValueError(f"dimension {name} must be a positive integer, got {v!r}")

    @property
    def block_size(self) -> int:
        return 2 * self.hidden * self.d + self.hidden + self.d

    @property
    def n_params(self) -> int:
        return self.d * self.d_in + self.d + self.n_blocks * self.block_size + self.d_y * self.d

    def as_dict(self) -> dict:
        return {"d_in": self.d_in, "d": self.d, "hidden": self.hidden, "d_y": self.d_y, "n_blocks": self.n_blocks}

    def kernel_args(self) -> tuple[int, int, int, int, int]:
        return (self.d_in, self.d, self.hidden, self.d_y, self.n_blocks)


class ResidualBlockParams(NamedTuple):
    w_in: np.ndarray   # hidden x d
    b_in: np.ndarray   # hidden
    w_out: np.ndarray  # d x hidden
    b_out: np.ndarray  # d


class _ParamSet:
    """Flat buffer plus named views, shared by networks and gradients."""

    def __init__(self, dims: Dims, theta=None, dtype=np.float64):
        if theta is None:
            theta = np.zeros(dims.n_params, dtype=dtype)
        theta = np.asarray(theta, dtype=dtype)
        if theta.ndim != 1 or theta.shape[0] != dims.n_params:
            raise DimensionError(f"expected {dims.n_params} parameters for {dims}, got shape {theta.shape}")
        if not theta.flags.c_contiguous:
            theta = np.ascontiguousarray(theta)
        self.dims = dims
        self.theta = theta
        d, h = dims.d, dims.hidden
        off = 0

        def take(*shape):
            nonlocal off
            size = math.prod(shape)
            view = theta[off:off + size].reshape(shape)
            off += size
            return view

        self.preproc_w = take(d, dims.d_in)
        self.preproc_b = take(d)
        self.blocks = [
            ResidualBlockParams(take(h, d), take(h), take(d, h), take(d)) for _ in range(dims.n_blocks)
        ]
        self.readout = take(dims.d_y, d)

    @property
    def n_blocks(self) -> int:
        return self.dims.n_blocks

    def named_arrays(self):
        """``(name, view)`` pairs in buffer order."""
        yield "preproc_w", self.preproc_w
        yield "preproc_b", self.preproc_b
        for i, b in enumerate(self.blocks, start=1):
            for field, arr in zip(ResidualBlockParams._fields, b):
                yield f"block{i}.{field}", arr
        yield "readout", self.readout

    def param_name(self, k: int) -> str:
        """Human-readable name of flat index ``k``, e.g. ``block2.w_in[3,0]``."""
        off = 0
        for name, arr in self.named_arrays():
            if k < off + arr.size:
                pos = np.unravel_index(k - off, arr.shape)
                return f"{name}[{','.join(str(int(i)) for i in pos)}]"
            off += arr.size
        raise IndexError(f"parameter index {k} out of range")

    def copy(self):
        return type(self)(self.dims, self.theta.copy())

    def copy_as(self, dtype):
        return type(self)(self.dims, self.theta.astype(dtype), dtype=dtype)

    def __repr__(self):
        return f"{type(self).__name__}({self.dims})"


class ResidualNetwork(_ParamSet):
    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.theta)))


class Gradients(_ParamSet):
    pass


@dataclass
class ForwardStates:
    """States x_0..x_N of one forward pass plus the raw (pre-G_0) input."""

    states: list
    input: np.ndarray

    @property
    def n_blocks(self) -> int:
        return len(self.states) - 1


def init_network(dims: Dims, seed: int) -> ResidualNetwork:
    """He-uniform weights in ``[-sqrt(6/fan_in), sqrt(6/fan_in))``, zero biases.

    Weights are drawn from one xoshiro256++ stream in buffer order.
    """
    net = ResidualNetwork(dims)
    rng = Xoshiro256pp(seed)

    def fill(w):
        bound = math.sqrt(6.0 / w.shape[1])
        w[...] = ((2.0 * rng.uniform(w.size) - 1.0) * bound).reshape(w.shape)

    fill(net.preproc_w)
    for b in net.blocks:
        fill(b.w_in)
        fill(b.w_out)
    fill(net.readout)
    return net


def _check_width(x: np.ndarray, width: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != width:
        raise DimensionError(f"{what} must have trailing dimension {width}, got shape {x.shape}")
    return x


def block_forward(b: ResidualBlockParams, x) -> np.ndarray:
    """Residual branch G(x) = W' relu(W x + b) + b' (no skip connection)."""
    x = _check_width(x, b.w_in.shape[1], "block input")
    return np.maximum(x @ b.w_in.T + b.b_in, 0.0) @ b.w_out.T + b.b_out


def preprocess(net: ResidualNetwork, raw_input) -> np.ndarray:
    raw = _check_width(raw_input, net.dims.d_in, "raw input")
    return raw @ net.preproc_w.T + net.preproc_b


def forward_collect(net: ResidualNetwork, raw_input) -> ForwardStates:
    raw = _check_width(raw_input, net.dims.d_in, "raw input")
    x = preprocess(net, raw)
    states = [x]
    for b in net.blocks:
        x = x + block_forward(b, x)
        states.append(x)
    return ForwardStates(states, raw)


def _check_depth(depth: int, n_blocks: int) -> int:
    if isinstance(depth, bool) or not isinstance(depth, (int, np.integer)) or not 0 <= depth <= n_blocks:
        raise IndexError(f"depth must be in 0..{n_blocks}, got {depth!r}")
    return int(depth)


def readout_at_depth(net: ResidualNetwork, fs: ForwardStates, i: int) -> np.ndarray:
    i = _check_depth(i, fs.n_blocks)
    return fs.states[i] @ net.readout.T


def decompose_contributions(net: ResidualNetwork, raw_input) -> list:
    """``[R x_0, R G_1(x_0), ..., R G_N(x_{N-1})]``; prefix sums give each depth's prediction."""
    fs = forward_collect(net, raw_input)
    terms = [fs.states[0] @ net.readout.T]
    for j, b in enumerate(net.blocks):
        terms.append(block_forward(b, fs.states[j]) @ net.readout.T)
    return terms


def truncated_predict(net: ResidualNetwork, raw_input, depth: int) -> np.ndarray:
    """Early-exit prediction: run blocks 1..depth only, then the readout."""
    depth = _check_depth(depth, net.n_blocks)
    x = preprocess(net, raw_input)
    for b in net.blocks[:depth]:
        x = x + block_forward(b, x)
    return x @ net.readout.T


def predict(net: ResidualNetwork, raw_input) -> np.ndarray:
    return truncated_predict(net, raw_input, net.n_blocks)


def residual_target(net: ResidualNetwork, raw_input, target, i: int) -> np.ndarray:
    """What block ``i`` still has to add in output space: target - R x_{i-1}."""
    if isinstance(i, bool) or not isinstance(i, (int, np.integer)) or not 1 <= i <= net.n_blocks:
        raise IndexError(f"block index must be in 1..{net.n_blocks}, got {i!r}")
    target = _check_width(target, net.dims.d_y, "target")
    return target - truncated_predict(net, raw_input, int(i) - 1)
