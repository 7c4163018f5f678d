"""Wide residual networks with capture hooks and partial re-execution.

The model is deliberately structural: it keeps its blocks in ordered
groups so a forward pass can be resumed from any group boundary with a
substituted feature map (``forward_from``). Hooks sit on the group
outputs, after the residual addition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .checkpoint import load_tensors, save_tensors
from .errors import ConfigError, ShapeError, UsageError
from .tensor import Tensor

HOOK_NAMES = ("conv2", "conv3", "conv4")


class Parameter(Tensor):
    """A leaf tensor that is trainable by default."""

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


class Module:
    """Minimal container with named parameters, buffers and train/eval state."""

    def __init__(self):
        self.training = True
        self.frozen = False
        self._buffers: dict = {}

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    # -- traversal -----------------------------------------------------------

    def _children(self):
        for name, value in self.__dict__.items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = ""):
        for name, value in self.__dict__.items():
            if isinstance(value, Parameter):
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def named_buffers(self, prefix: str = ""):
        for name, value in self._buffers.items():
            yield prefix + name, value
        for name, child in self._children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value

    def modules(self):
        yield self
        for _, child in self._children():
            yield from child.modules()

    # -- mode and gradient state ----------------------------------------------

    def train(self, mode: bool = True) -> "Module":
        """Switch train/eval behaviour. Frozen modules stay in eval mode."""
        for m in self.modules():
            m.training = mode and not m.frozen
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    # -- persistence -----------------------------------------------------------

    def state_dict(self) -> dict:
        state = {name: p.data for name, p in self.named_parameters()}
        for name, buf in self.named_buffers():
            state[name] = buf
        return state

    def load_state_dict(self, state: dict) -> None:
        own_params = dict(self.named_parameters())
        own_buffers = dict(self.named_buffers())
        expected = set(own_params) | set(own_buffers)
        missing = sorted(expected - set(state))
        unexpected = sorted(set(state) - expected)
        if missing or unexpected:
            parts = []
            if missing:
                parts.append("missing: " + ", ".join(missing))
            if unexpected:
                parts.append("unexpected: " + ", ".join(unexpected))
            raise UsageError("state does not match model (" + "; ".join(parts) + ")")
        for name, p in own_params.items():
            value = np.asarray(state[name])
            if value.shape != p.data.shape:
                raise ShapeError(
                    f"parameter {name!r}: checkpoint shape {value.shape} "
                    f"does not match model shape {p.data.shape}"
                )
            p.data = value.astype(p.data.dtype)
            p.grad = np.zeros_like(p.data) if p.requires_grad else None
        for name, buf in own_buffers.items():
            value = np.asarray(state[name])
            if value.shape != buf.shape:
                raise ShapeError(
                    f"buffer {name!r}: checkpoint shape {value.shape} "
                    f"does not match model shape {buf.shape}"
                )
            buf[...] = value.astype(buf.dtype)
        for m in self.modules():
            m._on_state_loaded()

    def _on_state_loaded(self) -> None:
        pass

    def count_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def save_model(model: Module, path) -> None:
    save_tensors(path, model.state_dict())


def load_model(model: Module, path) -> Module:
    model.load_state_dict(load_tensors(path))
    return model


def freeze(model: Module) -> Module:
    """Make the model a constant: no trainable parameters, eval-mode BN.

    Freezing also marks batch-norm statistics as usable, so a model frozen
    straight after random init normalizes with its identity defaults
    instead of refusing to run.
    """
    for p in model.parameters():
        p.requires_grad = False
        p.grad = None
    for m in model.modules():
        m.frozen = True
        m.training = False
        if isinstance(m, BatchNorm2d):
            m._has_stats = True
    return model


# -- layers ---------------------------------------------------------------------


def _uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = float(np.sqrt(2.0 / fan_in))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 stride: int = 1, padding: int = 0, bias: bool = False,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel_size * kernel_size
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        self.weight = Parameter(_uniform_init(rng, shape, fan_in, dtype))
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias,
                          stride=self.stride, padding=self.padding)


class BatchNorm2d(Module):
    def __init__(self, num_features: int, momentum: float = 0.1,
                 eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(num_features, dtype=dtype))
        self.beta = Parameter(np.zeros(num_features, dtype=dtype))
        self.register_buffer("running_mean", np.zeros(num_features, dtype=dtype))
        self.register_buffer("running_var", np.ones(num_features, dtype=dtype))
        self._has_stats = False

    def forward(self, x: Tensor) -> Tensor:
        stats = (self._buffers["running_mean"], self._buffers["running_var"])
        if self.training:
            out = ops.batchnorm2d(x, self.gamma, self.beta, stats, training=True,
                                  momentum=self.momentum, eps=self.eps)
            self._has_stats = True
            return out
        return ops.batchnorm2d(x, self.gamma, self.beta,
                               stats if self._has_stats else None,
                               training=False, momentum=self.momentum, eps=self.eps)

    def _on_state_loaded(self) -> None:
        self._has_stats = True


class Linear(Module):
    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Parameter(_uniform_init(rng, (out_features, in_features),
                                              in_features, dtype))
        self.bias = Parameter(np.zeros(out_features, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class PreactBlock(Module):
    """BN-ReLU-conv residual block; 1x1 projection shortcut on shape change."""

    def __init__(self, in_channels: int, out_channels: int, stride: int,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.equal_io = in_channels == out_channels and stride == 1
        self.bn1 = BatchNorm2d(in_channels, dtype=dtype)
        self.conv1 = Conv2d(in_channels, out_channels, 3, stride=stride,
                            padding=1, rng=rng, dtype=dtype)
        self.bn2 = BatchNorm2d(out_channels, dtype=dtype)
        self.conv2 = Conv2d(out_channels, out_channels, 3, stride=1,
                            padding=1, rng=rng, dtype=dtype)
        self.shortcut = None if self.equal_io else Conv2d(
            in_channels, out_channels, 1, stride=stride, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        pre = ops.relu(self.bn1(x))
        h = self.conv1(pre)
        h = self.conv2(ops.relu(self.bn2(h)))
        residual = x if self.equal_io else self.shortcut(pre)
        return h + residual


# -- the network ------------------------------------------------------------------


@dataclass
class WrnConfig:
    """Architecture hyperparameters for a wide residual network."""

    depth: int
    width: int
    num_classes: int
    base_channels: int = 16
    input_size: int = 32

    def validate(self) -> "WrnConfig":
        problems = []
        if self.depth < 10 or (self.depth - 4) % 6 != 0:
            problems.append(f"depth must be 6d+4 with d >= 1, got {self.depth}")
        if self.width < 1:
            problems.append(f"width must be >= 1, got {self.width}")
        if self.base_channels < 1:
            problems.append(f"base_channels must be >= 1, got {self.base_channels}")
        if self.num_classes < 2:
            problems.append(f"num_classes must be >= 2, got {self.num_classes}")
        if self.input_size < 8 or self.input_size % 4 != 0:
            problems.append(
                f"input_size must be a multiple of 4 and >= 8, got {self.input_size}"
            )
        if problems:
            raise ConfigError(problems)
        return self

    @property
    def blocks_per_group(self) -> int:
        return (self.depth - 4) // 6

    def group_channels(self, hook: str) -> int:
        factor = {"conv2": 1, "conv3": 2, "conv4": 4}[hook]
        return factor * self.base_channels * self.width

    def group_spatial(self, hook: str) -> int:
        factor = {"conv2": 1, "conv3": 2, "conv4": 4}[hook]
        return self.input_size // factor


class WideResNet(Module):
    """Three-group pre-activation WRN with hook capture at group outputs."""

    def __init__(self, config: WrnConfig, rng: np.random.Generator,
                 dtype=np.float32):
        super().__init__()
        config.validate()
        self.config = config
        self.dtype = dtype
        d = config.blocks_per_group
        widths = [config.group_channels(h) for h in HOOK_NAMES]
        self.conv1 = Conv2d(3, config.base_channels, 3, stride=1, padding=1,
                            rng=rng, dtype=dtype)
        self.group2 = self._make_group(config.base_channels, widths[0], d, 1, rng)
        self.group3 = self._make_group(widths[0], widths[1], d, 2, rng)
        self.group4 = self._make_group(widths[1], widths[2], d, 2, rng)
        self.bn_out = BatchNorm2d(widths[2], dtype=dtype)
        self.fc = Linear(widths[2], config.num_classes, rng=rng, dtype=dtype)
        self.hooks: dict = {name: None for name in HOOK_NAMES}

    def _make_group(self, in_channels, out_channels, blocks, stride, rng):
        layers = [PreactBlock(in_channels, out_channels, stride, rng, self.dtype)]
        for _ in range(blocks - 1):
            layers.append(PreactBlock(out_channels, out_channels, 1, rng, self.dtype))
        return layers

    # -- execution ------------------------------------------------------------

    def _check_input(self, x: Tensor) -> None:
        s = self.config.input_size
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != s or x.shape[3] != s:
            raise ShapeError(
                f"forward: expected (N, 3, {s}, {s}) input, got {x.shape}"
            )

    def _run_group(self, name: str, h: Tensor) -> Tensor:
        for block in getattr(self, f"group{name[-1]}"):
            h = block(h)
        return h

    def _head(self, h: Tensor) -> Tensor:
        h = ops.relu(self.bn_out(h))
        pooled = ops.avg_pool_global(h)
        return self.fc(pooled)

    def forward(self, x: Tensor, capture: bool = False) -> Tensor:
        logits, hooks = self.forward_collect(x)
        if capture:
            self.hooks = hooks
        return logits

    def forward_collect(self, x: Tensor) -> tuple:
        """Forward pass returning (logits, hook features) without touching
        shared state, so concurrent read-only evaluation is safe."""
        self._check_input(x)
        h = self.conv1(x)
        hooks = {}
        for name in HOOK_NAMES:
            h = self._run_group(name, h)
            hooks[name] = h
        return self._head(h), hooks

    def clear_hooks(self) -> None:
        self.hooks = {name: None for name in HOOK_NAMES}

    def expected_hook_shape(self, hook: str, batch: int) -> tuple:
        c = self.config.group_channels(hook)
        s = self.config.group_spatial(hook)
        return (batch, c, s, s)

    def forward_from(self, hook: str, injected: Tensor,
                     transforms: dict | None = None) -> Tensor:
        """Re-run the network strictly after ``hook`` on a substituted feature.

        Only frozen models support this: re-execution exists to probe a
        constant network with modified activations, and freezing guarantees
        the tail cannot drift between the plain pass and the re-run.

        ``transforms`` optionally maps later hook names to callables applied
        to the feature computed at that hook before execution continues, so
        several positions can be modified in a single tail run.
        """
        if hook not in self.hooks:
            raise UsageError(f"unknown hook {hook!r}, expected one of {HOOK_NAMES}")
        if not self.frozen:
            raise UsageError("forward_from requires a frozen model")
        expected = self.expected_hook_shape(hook, injected.shape[0] if injected.ndim else 0)
        if injected.ndim != 4 or injected.shape != expected:
            raise ShapeError(
                f"forward_from: injected shape {injected.shape} does not match "
                f"{expected} at hook {hook!r}"
            )
        transforms = transforms or {}
        unknown = [h for h in transforms if h not in HOOK_NAMES]
        if unknown:
            raise UsageError(
                f"forward_from: unknown transform hooks {unknown}, "
                f"expected names from {HOOK_NAMES}"
            )
        unreachable = [h for h in transforms
                       if HOOK_NAMES.index(h) <= HOOK_NAMES.index(hook)]
        if unreachable:
            raise UsageError(
                f"forward_from: transforms at {unreachable} are not after "
                f"the injection hook {hook!r}"
            )
        h = injected
        start = HOOK_NAMES.index(hook)
        for name in HOOK_NAMES[start + 1:]:
            h = self._run_group(name, h)
            if name in transforms:
                h = transforms[name](h)
        return self._head(h)


def build_wrn(config: WrnConfig, seed: int, dtype=np.float32) -> WideResNet:
    """Construct a WRN with parameters drawn deterministically from ``seed``."""
    rng = np.random.default_rng(seed)
    return WideResNet(config, rng, dtype=dtype)
