"""Parameter containers and layers built on the autodiff primitives."""

import numpy as np

from desnet.autodiff import functional as F
from desnet.autodiff.tensor import Tensor, leaky_relu, linear


class ParameterSet:
    """Ordered ``name -> Tensor`` mapping of trainable parameters."""

    def __init__(self, items=()):
        self._params = {}
        for name, p in items:
            if name in self._params:
                raise ValueError("duplicate parameter name %r" % name)
            self._params[name] = p

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def values(self):
        return self._params.values()

    def zero_grad(self):
        for p in self._params.values():
            p.zero_grad()

    def num_elements(self):
        return sum(p.size for p in self._params.values())


class Module:
    """Minimal module: parameters are ``Tensor`` attributes with ``requires_grad``.

    Buffers (non-trainable state such as running statistics) live in
    ``self.buffers``.  Traversal follows attribute insertion order, so names
    are deterministic.
    """

    training = True

    def _children(self):
        for key, val in vars(self).items():
            if isinstance(val, Module):
                yield key, val
            elif isinstance(val, (list, tuple)):
                for i, v in enumerate(val):
                    if isinstance(v, Module):
                        yield "%s.%d" % (key, i), v

    def named_parameters(self, prefix=""):
        for key, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                yield prefix + key, val
        for key, child in self._children():
            yield from child.named_parameters(prefix + key + ".")

    def named_buffers(self, prefix=""):
        for key, val in getattr(self, "buffers", {}).items():
            yield prefix + key, val
        for key, child in self._children():
            yield from child.named_buffers(prefix + key + ".")

    def parameters(self):
        return ParameterSet(self.named_parameters())

    def train(self, mode=True):
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def astype(self, dtype):
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
        for mod in self._modules_iter():
            if hasattr(mod, "buffers"):
                for k in mod.buffers:
                    mod.buffers[k] = mod.buffers[k].astype(dtype)
        return self

    def _modules_iter(self):
        yield self
        for _, child in self._children():
            yield from child._modules_iter()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _param(data, dtype):
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


def uniform_init(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return _param(rng.uniform(-bound, bound, size=shape), dtype)


class Linear(Module):
    def __init__(self, in_features, out_features, rng, dtype=np.float64, bias=True):
        self.weight = uniform_init(rng, (in_features, out_features), in_features, dtype)
        self.bias = _param(np.zeros(out_features), dtype) if bias else None

    def forward(self, x):
        return linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, cin, cout, kernel, rng, stride=(1, 1), padding=0, dtype=np.float64):
        fan_in = cin * kernel[0] * kernel[1]
        self.weight = uniform_init(rng, (cout, cin) + tuple(kernel), fan_in, dtype)
        self.bias = _param(np.zeros(cout), dtype)
        self.stride, self.padding = tuple(stride), padding

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(Module):
    def __init__(self, channels, dtype=np.float64, momentum=0.9, eps=1e-5):
        self.gamma = _param(np.ones(channels), dtype)
        self.beta = _param(np.zeros(channels), dtype)
        self.buffers = {"running_mean": np.zeros(channels, dtype=dtype),
                        "running_var": np.ones(channels, dtype=dtype)}
        self.momentum, self.eps = momentum, eps

    def forward(self, x):
        return F.batchnorm2d(x, self.gamma, self.beta, self.buffers["running_mean"],
                             self.buffers["running_var"], self.training, self.momentum, self.eps)


class LSTM(Module):
    """Stacked unidirectional LSTM over ``(T, B, I)`` sequences."""

    def __init__(self, input_size, hidden_size, num_layers, rng, dtype=np.float64):
        self.hidden_size = hidden_size
        self.layers = []
        for i in range(num_layers):
            size = input_size if i == 0 else hidden_size
            cell = Module()
            cell.w_ih = uniform_init(rng, (size, 4 * hidden_size), hidden_size, dtype)
            cell.w_hh = uniform_init(rng, (hidden_size, 4 * hidden_size), hidden_size, dtype)
            cell.bias = _param(np.zeros(4 * hidden_size), dtype)
            self.layers.append(cell)

    def forward(self, x):
        for cell in self.layers:
            x = F.lstm(x, cell.w_ih, cell.w_hh, cell.bias)
        return x


def leaky(x, slope=0.01):
    return leaky_relu(x, slope)
