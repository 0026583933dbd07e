"""Small layer objects over the functional ops."""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import ops
from .tensor import Tensor


class Module:
    training: bool = True

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return []

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        return []

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"type": type(self).__name__}


class Conv1d(Module):
    def __init__(self, cin: int, cout: int, k: int, stride: int = 1, padding: int = 0,
                 rng: np.random.Generator | None = None, init_std: float = 0.02):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cin, self.cout, self.k, self.stride, self.padding = cin, cout, k, stride, padding
        self.weight = Tensor(rng.normal(0.0, init_std, (cout, cin, k)), requires_grad=True)
        self.bias = Tensor(np.zeros(cout), requires_grad=True)

    def forward(self, x):
        return ops.conv1d(x, self.weight, self.bias, self.stride, self.padding)

    def named_parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def out_len(self, length: int) -> int:
        return ops.conv_out_len(length, self.k, self.stride, self.padding)

    def describe(self):
        return {"type": "Conv1d", "cin": self.cin, "cout": self.cout, "k": self.k,
                "stride": self.stride, "padding": self.padding}


class ConvTranspose1d(Conv1d):
    def __init__(self, cin: int, cout: int, k: int, stride: int = 1, padding: int = 0,
                 rng: np.random.Generator | None = None, init_std: float = 0.02):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cin, self.cout, self.k, self.stride, self.padding = cin, cout, k, stride, padding
        self.weight = Tensor(rng.normal(0.0, init_std, (cin, cout, k)), requires_grad=True)
        self.bias = Tensor(np.zeros(cout), requires_grad=True)

    def forward(self, x):
        return ops.conv_transpose1d(x, self.weight, self.bias, self.stride, self.padding)

    def out_len(self, length: int) -> int:
        return ops.conv_transpose_out_len(length, self.k, self.stride, self.padding)

    def describe(self):
        d = super().describe()
        d["type"] = "ConvTranspose1d"
        return d


class _Norm(Module):
    def __init__(self, channels: int, rng: np.random.Generator | None = None,
                 eps: float = 1e-5, init_std: float = 0.02):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        self.eps = eps
        self.gamma = Tensor(rng.normal(1.0, init_std, channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)

    def named_parameters(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def describe(self):
        return {"type": type(self).__name__, "channels": self.channels, "eps": self.eps}


class BatchNorm1d(_Norm):
    def __init__(self, channels: int, rng=None, eps: float = 1e-5, momentum: float = 0.1,
                 init_std: float = 0.02):
        super().__init__(channels, rng, eps, init_std)
        self.momentum = momentum
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def forward(self, x):
        return ops.batch_norm1d(x, self.gamma, self.beta, self.running_mean, self.running_var,
                                training=self.training, momentum=self.momentum, eps=self.eps)

    def named_buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def describe(self):
        d = super().describe()
        d["momentum"] = self.momentum
        return d


class InstanceNorm1d(_Norm):
    def forward(self, x):
        return ops.instance_norm1d(x, self.gamma, self.beta, eps=self.eps)


class Activation(Module):
    def __init__(self, kind: str, alpha: float = 0.2):
        self.kind = kind
        self.alpha = alpha

    def forward(self, x):
        return ops.activation(x, self.kind, self.alpha)

    def describe(self):
        d = {"type": "Activation", "kind": self.kind}
        if self.kind == "leaky_relu":
            d["alpha"] = self.alpha
        return d


class Dropout(Module):
    def __init__(self, p: float, rng: np.random.Generator | None = None):
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
        self.p = p
        self.rng = rng

    def forward(self, x):
        return ops.dropout(x, self.p, self.training, self.rng)

    def describe(self):
        return {"type": "Dropout", "p": self.p}


class Sequential(Module):
    def __init__(self, *layers: Module):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def train(self, mode: bool = True):
        self.training = mode
        for layer in self.layers:
            layer.train(mode)
        return self

    def named_parameters(self):
        return [(f"{i}.{n}", p) for i, layer in enumerate(self.layers)
                for n, p in layer.named_parameters()]

    def named_buffers(self):
        return [(f"{i}.{n}", b) for i, layer in enumerate(self.layers)
                for n, b in layer.named_buffers()]

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        out: OrderedDict[str, np.ndarray] = OrderedDict()
        for name, p in self.named_parameters():
            out[name] = p.data
        for name, b in self.named_buffers():
            out[name] = b
        return out

    def load_state_dict(self, state: dict) -> None:
        for name, p in self.named_parameters():
            if state[name].shape != p.data.shape:
                raise ValueError(f"{name}: stored shape {state[name].shape} != {p.data.shape}")
            p.data = np.array(state[name], dtype=np.float64)
        for name, b in self.named_buffers():
            b[...] = state[name]

    def describe(self):
        return {"type": "Sequential", "layers": [layer.describe() for layer in self.layers]}
