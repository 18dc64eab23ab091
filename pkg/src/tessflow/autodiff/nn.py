"""Parameter containers and the small set of layers the model is built from."""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator, Optional

import numpy as np

from . import ops
from .tensor import Tensor

__all__ = [
    "Parameter", "Module", "Linear", "PointwiseLinear", "Conv3d", "LayerNorm",
    "MultiheadSelfAttention", "TransformerEncoderLayer", "TransformerEncoder",
    "PointwiseMLP",
]


def Parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


class Module:
    """Minimal parameter container with dotted-name traversal."""

    def __init__(self) -> None:
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_children", OrderedDict())

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def add_module(self, name: str, module: "Module") -> None:
        setattr(self, name, module)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, p.data.copy()) for n, p in self.named_parameters())

    def load_state_dict(self, state) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.shape}")
            p.data = arr.copy()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    """y = x @ W^T + b over the last axis."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True,
                 scale: float = 1.0):
        super().__init__()
        self.weight = Parameter(scale * _uniform(rng, n_in, (n_out, n_in)))
        self.bias = Parameter(np.zeros(n_out)) if bias else None

    def forward(self, x):
        y = ops.matmul(x, ops.transpose(self.weight))
        return y if self.bias is None else y + self.bias


class PointwiseLinear(Module):
    """Per-voxel linear map on channel-first volumes (C, *spatial)."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True,
                 scale: float = 1.0):
        super().__init__()
        self.weight = Parameter(scale * _uniform(rng, n_in, (n_out, n_in)))
        self.bias = Parameter(np.zeros(n_out)) if bias else None

    def forward(self, x):
        spatial = x.shape[1:]
        y = ops.matmul(self.weight, x.reshape(x.shape[0], -1))
        if self.bias is not None:
            y = y + self.bias.reshape(-1, 1)
        return y.reshape((self.weight.shape[0],) + spatial)


class PointwiseMLP(Module):
    """Stack of per-voxel linear layers with ReLU between them."""

    def __init__(self, sizes, rng: np.random.Generator, final_scale: float = 1.0):
        super().__init__()
        self.layers = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            layer = PointwiseLinear(a, b, rng, scale=final_scale if last else 1.0)
            self.add_module(f"fc{i}", layer)
            self.layers.append(layer)

    def forward(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ops.relu(x)
        return x


class Conv3d(Module):
    def __init__(self, c_in: int, c_out: int, kernel=3, stride=1, padding=None,
                 rng: Optional[np.random.Generator] = None, bias: bool = True,
                 scale: float = 1.0):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        k = (kernel,) * 3 if np.isscalar(kernel) else tuple(kernel)
        fan_in = c_in * int(np.prod(k))
        # He-style init suits the ReLU stacks used throughout
        self.weight = Parameter(scale * rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(c_out, c_in) + k))
        self.bias = Parameter(np.zeros(c_out)) if bias else None
        self.stride = stride
        self.padding = tuple(kk // 2 for kk in k) if padding is None else padding

    def forward(self, x):
        return ops.conv3d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.weight = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x):
        return ops.layer_norm(x, self.weight, self.bias, self.eps)


class MultiheadSelfAttention(Module):
    """Scaled dot-product self-attention over tokens (T, dim)."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.dim, self.heads = dim, heads
        self.qkv = Linear(dim, 3 * dim, rng)
        self.proj = Linear(dim, dim, rng)

    def forward(self, x):
        t = x.shape[0]
        hd = self.dim // self.heads
        qkv = self.qkv(x).reshape(t, 3, self.heads, hd).permute(1, 2, 0, 3)
        q, k, v = qkv[0], qkv[1], qkv[2]
        att = ops.softmax(ops.matmul(q, ops.transpose(k)) * (1.0 / np.sqrt(hd)), axis=-1)
        y = ops.matmul(att, v).permute(1, 0, 2).reshape(t, self.dim)
        return self.proj(y)


class TransformerEncoderLayer(Module):
    """Post-norm encoder layer: LN(x + MHA(x)) then LN(x + FFN(x))."""

    def __init__(self, dim: int, heads: int, ffn_dim: int, rng: np.random.Generator):
        super().__init__()
        self.attn = MultiheadSelfAttention(dim, heads, rng)
        self.norm1 = LayerNorm(dim)
        self.ff1 = Linear(dim, ffn_dim, rng)
        self.ff2 = Linear(ffn_dim, dim, rng)
        self.norm2 = LayerNorm(dim)

    def forward(self, x):
        x = self.norm1(x + self.attn(x))
        return self.norm2(x + self.ff2(ops.relu(self.ff1(x))))


class TransformerEncoder(Module):
    def __init__(self, dim: int, heads: int, layers: int, ffn_dim: int, rng: np.random.Generator):
        super().__init__()
        self.layers = []
        for i in range(layers):
            layer = TransformerEncoderLayer(dim, heads, ffn_dim, rng)
            self.add_module(f"layer{i}", layer)
            self.layers.append(layer)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x
