"""Parameter containers built on the autodiff engine."""

from __future__ import annotations

from collections import OrderedDict
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from .autodiff import RunningStats, Tensor, affine, batch_norm, conv2d, conv_transpose2d, separable_conv2d
from .autodiff.tensor import get_default_dtype
from .exceptions import ConfigurationError


def gaussian(rng: np.random.Generator, shape: tuple, fan_in: int) -> Tensor:
    """Fan-in scaled (He) Gaussian init."""
    std = np.sqrt(2.0 / max(fan_in, 1))
    return Tensor(rng.normal(0.0, std, size=shape).astype(get_default_dtype()), requires_grad=True)


def zeros(shape: tuple) -> Tensor:
    return Tensor(np.zeros(shape, dtype=get_default_dtype()), requires_grad=True)


def ones(shape: tuple) -> Tensor:
    return Tensor(np.ones(shape, dtype=get_default_dtype()), requires_grad=True)


class Module:
    """Tree of parameters and running statistics with a train/eval flag."""

    training: bool = True

    def children(self) -> Iterator[Tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
        for name, child in self.children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_stats(self, prefix: str = "") -> Iterator[Tuple[str, RunningStats]]:
        for name, value in vars(self).items():
            if isinstance(value, RunningStats):
                yield prefix + name, value
        for name, child in self.children():
            yield from child.named_stats(f"{prefix}{name}.")

    def param_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict((name, p.data.copy()) for name, p in self.named_parameters())
        for name, st in self.named_stats():
            if st.mean is not None:
                state[name + ".mean"] = st.mean.copy()
                state[name + ".var"] = st.var.copy()
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = [n for n in params if n not in state]
        if missing:
            raise ConfigurationError(f"state is missing parameters: {missing[:5]}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ConfigurationError(f"parameter {name}: stored shape {arr.shape} != model shape {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)
        # running statistics live in the parameter dtype, as they do after a training pass
        dtype = next(iter(params.values())).dtype if params else np.float64
        for name, st in self.named_stats():
            if name + ".mean" in state:
                st.mean = np.asarray(state[name + ".mean"]).astype(dtype)
                st.var = np.asarray(state[name + ".var"]).astype(dtype)
            else:
                st.mean = st.var = None


class Conv(Module):
    """k×k convolution, or its k×1 / 1×k separable factorization."""

    def __init__(
        self,
        rng: np.random.Generator,
        cin: int,
        cout: int,
        kernel: int = 3,
        stride: int = 1,
        padding: Optional[int] = None,
        separable: bool = False,
        mid: Optional[int] = None,
        bias: bool = False,
    ):
        self.cin, self.cout, self.kernel, self.stride = cin, cout, kernel, stride
        self.padding = kernel // 2 if padding is None else padding
        self.separable = separable
        if separable:
            self.mid = cout if mid is None else mid
            self.w_row = gaussian(rng, (self.mid, cin, kernel, 1), cin * kernel)
            self.w_col = gaussian(rng, (cout, self.mid, 1, kernel), self.mid * kernel)
        else:
            self.weight = gaussian(rng, (cout, cin, kernel, kernel), cin * kernel * kernel)
        self.bias = zeros((cout,)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if self.separable:
            y = separable_conv2d(x, self.w_row, self.w_col, self.stride, self.padding)
            return y if self.bias is None else y + self.bias.reshape(-1, 1, 1)
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm(Module):
    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        self.gamma = ones((channels,))
        self.beta = zeros((channels,))
        self.stats = RunningStats(momentum=momentum)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return batch_norm(x, self.gamma, self.beta, self.stats, self.training, self.eps)


class Linear(Module):
    """``x W^T + b``. ``init='identity'`` starts a square map at the identity."""

    def __init__(
        self, rng: np.random.Generator, fin: int, fout: int, bias: bool = True, gain: float = 1.0, init: str = "normal"
    ):
        if init == "identity":
            if fin != fout:
                raise ConfigurationError(f"identity init needs a square map, got {fin}->{fout}")
            w = np.eye(fout)
        elif init == "normal":
            w = rng.normal(0.0, gain / np.sqrt(fin), size=(fout, fin))
        else:
            raise ConfigurationError(f"unknown init {init!r}")
        self.weight = Tensor(w.astype(get_default_dtype()), requires_grad=True)
        self.bias = zeros((fout,)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return affine(x, self.weight, self.bias)


class ConvTranspose(Module):
    def __init__(
        self, rng: np.random.Generator, cin: int, cout: int, kernel: int, stride: int, padding: int, bias: bool = True
    ):
        self.stride, self.padding = stride, padding
        fan_in = cin * kernel * kernel // (stride * stride)
        self.weight = gaussian(rng, (cin, cout, kernel, kernel), fan_in)
        self.bias = zeros((cout,)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding)
