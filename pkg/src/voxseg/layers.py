"""Layer modules composing the networks: parameter registration, naming,
gradient bookkeeping, and initialization.

Parameters are registered in construction order, which fixes checkpoint
record order and makes two same-seed builds bit-identical.  Weights draw
from a zero-mean Gaussian with scale sqrt(2 / fan_in); biases start at
zero; normalization starts at identity (gamma 1, beta 0, running mean 0,
running var 1).
"""

import hashlib

import numpy as np

from . import ops
from .tensor import Tensor


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix=""):
        for n, p in self._params.items():
            yield prefix + n, p
        for n, m in self._modules.items():
            yield from m.named_parameters(prefix + n + ".")

    def named_buffers(self, prefix=""):
        for n, b in self._buffers.items():
            yield prefix + n, b
        for n, m in self._modules.items():
            yield from m.named_buffers(prefix + n + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def set_requires_grad(self, flag):
        for p in self.parameters():
            p.requires_grad = bool(flag)

    def param_count(self):
        return sum(p.size for p in self.parameters())

    def checksum(self):
        """Digest over parameters and buffers; detects any state change."""
        h = hashlib.sha256()
        for name, p in self.named_parameters():
            h.update(name.encode())
            h.update(p.data.tobytes())
        for name, b in self.named_buffers():
            h.update(name.encode())
            h.update(b.tobytes())
        return h.hexdigest()


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._list = []
        for m in modules:
            self.append(m)

    def append(self, module):
        self._modules[str(len(self._list))] = module
        self._list.append(module)

    def __iter__(self):
        return iter(self._list)

    def __getitem__(self, i):
        return self._list[i]

    def __len__(self):
        return len(self._list)


class Conv3d(Module):
    def __init__(self, in_channels, out_channels, rng, stride=1):
        super().__init__()
        self.stride = stride
        fan_in = in_channels * 27
        scale = np.sqrt(2.0 / fan_in)
        w = rng.normal(0.0, scale, size=(out_channels, in_channels, 3, 3, 3))
        self.weight = Tensor(w.astype(np.float32), requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels, np.float32), requires_grad=True)

    def __call__(self, x):
        return ops.conv3d(x, self.weight, self.bias, stride=self.stride)


class BatchNorm3d(Module):
    def __init__(self, channels, momentum=0.9, eps=1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(channels, np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, np.float32), requires_grad=True)
        self._buffers["running_mean"] = np.zeros(channels, np.float32)
        self._buffers["running_var"] = np.ones(channels, np.float32)

    def __call__(self, x, mode):
        return ops.batch_norm(x, self.gamma, self.beta,
                              self._buffers["running_mean"], self._buffers["running_var"],
                              mode, momentum=self.momentum, eps=self.eps)


class Linear(Module):
    def __init__(self, in_features, out_features, rng):
        super().__init__()
        scale = np.sqrt(2.0 / in_features)
        w = rng.normal(0.0, scale, size=(in_features, out_features))
        self.weight = Tensor(w.astype(np.float32), requires_grad=True)
        self.bias = Tensor(np.zeros(out_features, np.float32), requires_grad=True)

    def __call__(self, x):
        return ops.linear(x, self.weight, self.bias)
