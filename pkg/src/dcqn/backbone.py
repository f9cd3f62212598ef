"""Temporal-convolution feature extractor and the gradient/training contract.

The backbone is a stack of dilated 1-d convolutions with LeakyReLU, residual
connections within each layer, and a summed skip path to the output. All
tensors are float64 and all computation is single-threaded CPU so that
repeated runs are bit-identical.

Every trainable loss in the package is validated against the central
finite-difference oracle in :func:`gradient_check`.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import torch
from torch import nn

from .errors import (DimensionError, DomainError, ParameterSetError,
                     TrainingDivergedError)
from .gaussian import SeededRng

LEAKY_SLOPE = 0.01

torch.set_num_threads(1)


def default_dilations(layers: int) -> tuple[int, ...]:
    return tuple(2 ** i for i in range(layers))


@dataclass(frozen=True)
class TcnConfig:
    """Shape of the convolutional backbone."""

    layers: int = 4
    channels: int = 32
    kernel_size: int = 3
    dilations: tuple[int, ...] = ()

    def __post_init__(self):
        if self.layers < 1 or self.channels < 1 or self.kernel_size < 2:
            raise DomainError("need layers >= 1, channels >= 1, kernel_size >= 2")
        if not self.dilations:
            object.__setattr__(self, "dilations", default_dilations(self.layers))
        if len(self.dilations) != self.layers:
            raise DomainError("need one dilation per layer")
        if any(d < 1 for d in self.dilations):
            raise DomainError("dilations must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer contract shared by every trainable model in the package."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 500
    patience: int = 20


@dataclass(frozen=True)
class FeatureMap:
    """Backbone output: channels x time."""

    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 2 or not np.all(np.isfinite(self.values)):
            raise DimensionError("feature map must be a finite 2-d array")


class NamedParameterSet:
    """Ordered map of tensor name -> float64 array.

    The interchange form of model parameters: checkpoints serialize it and
    :func:`gradient_check` perturbs it. Arrays are copied on the way in and
    frozen (non-writeable) so a set is immutable once built.
    """

    def __init__(self, arrays: Mapping[str, np.ndarray]):
        self._arrays: OrderedDict[str, np.ndarray] = OrderedDict()
        for name, value in arrays.items():
            arr = np.array(value, dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ParameterSetError(f"tensor {name!r} contains non-finite values")
            arr.flags.writeable = False
            self._arrays[name] = arr

    def __iter__(self):
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def __getitem__(self, name: str) -> np.ndarray:
        if name not in self._arrays:
            raise ParameterSetError(f"missing parameter tensor {name!r}")
        return self._arrays[name]

    def items(self):
        return self._arrays.items()

    def allclose(self, other: "NamedParameterSet", tol: float = 0.0) -> bool:
        if list(self) != list(other):
            return False
        if tol == 0.0:
            return all(np.array_equal(self[n], other[n]) for n in self)
        return all(np.allclose(self[n], other[n], atol=tol) for n in self)

    @classmethod
    def from_module(cls, module: nn.Module) -> "NamedParameterSet":
        return cls(OrderedDict(
            (name, p.detach().numpy()) for name, p in module.named_parameters()
        ))

    def load_into(self, module: nn.Module) -> None:
        expected = OrderedDict(module.named_parameters())
        if set(expected) != set(self._arrays):
            missing = sorted(set(expected) - set(self._arrays))
            extra = sorted(set(self._arrays) - set(expected))
            raise ParameterSetError(f"parameter mismatch: missing {missing}, extra {extra}")
        with torch.no_grad():
            for name, param in expected.items():
                arr = self._arrays[name]
                if tuple(param.shape) != arr.shape:
                    raise ParameterSetError(
                        f"tensor {name!r} has shape {arr.shape}, expected {tuple(param.shape)}"
                    )
                param.copy_(torch.from_numpy(arr.copy()))


def _pad_amounts(kernel_size: int, dilation: int) -> tuple[int, int]:
    total = (kernel_size - 1) * dilation
    left = (total + 1) // 2
    return left, total - left


def dilated_conv1d(inputs: np.ndarray, kernel: np.ndarray, dilation: int) -> np.ndarray:
    """Same-length dilated convolution of a (C_in, T) signal with a
    (C_out, C_in, k) kernel, zero-padded symmetrically (left gets the odd
    element)."""
    inputs = np.asarray(inputs, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if inputs.ndim != 2 or kernel.ndim != 3 or kernel.shape[1] != inputs.shape[0]:
        raise DimensionError(
            f"incompatible shapes: input {inputs.shape}, kernel {kernel.shape}"
        )
    if dilation < 1:
        raise DomainError("dilation must be >= 1")
    left, right = _pad_amounts(kernel.shape[2], dilation)
    x = torch.from_numpy(inputs).unsqueeze(0)
    x = torch.nn.functional.pad(x, (left, right))
    out = torch.nn.functional.conv1d(x, torch.from_numpy(kernel), dilation=dilation)
    return out.squeeze(0).numpy()


class TemporalConvNet(nn.Module):
    """Input projection, residual dilated-conv layers, summed skip outputs."""

    def __init__(self, n_features: int, config: TcnConfig):
        super().__init__()
        self.config = config
        self.in_proj = nn.Conv1d(n_features, config.channels, 1)
        self.convs = nn.ModuleList(
            nn.Conv1d(config.channels, config.channels, config.kernel_size, dilation=d)
            for d in config.dilations
        )
        self.skips = nn.ModuleList(
            nn.Conv1d(config.channels, config.channels, 1) for _ in config.dilations
        )
        self.double()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.in_proj(x)
        out = torch.zeros_like(h)
        for conv, skip, dilation in zip(self.convs, self.skips, self.config.dilations):
            left, right = _pad_amounts(conv.kernel_size[0], dilation)
            h = torch.nn.functional.leaky_relu(
                conv(torch.nn.functional.pad(h, (left, right))), LEAKY_SLOPE
            ) + h
            out = out + skip(h)
        return out


def init_parameters(module: nn.Module, rng: SeededRng) -> None:
    """Weights ~ U(-b, b) with b = fan_in^(-1/2); biases zero.

    Parameters are visited in registration order and filled from a single
    stream, so initialization is a pure function of the rng key.
    """
    with torch.no_grad():
        for name, param in module.named_parameters():
            if name.endswith("bias") or param.ndim == 1:
                param.zero_()
                continue
            fan_in = int(np.prod(param.shape[1:]))
            bound = 1.0 / math.sqrt(fan_in)
            draw = rng.uniform(param.numel()).reshape(tuple(param.shape))
            param.copy_(torch.from_numpy((2.0 * draw - 1.0) * bound))


def tcn_forward(x: np.ndarray, config: TcnConfig,
                params: NamedParameterSet) -> FeatureMap:
    """Functional forward pass of the backbone on a single (F, T) input.

    The feature count is read off the input-projection tensor in ``params``.
    """
    n_features = params["in_proj.weight"].shape[1]
    if x.ndim != 2 or x.shape[0] != n_features:
        raise DimensionError(f"expected ({n_features}, T) input, got {x.shape}")
    net = TemporalConvNet(n_features, config)
    params.load_into(net)
    with torch.no_grad():
        out = net(torch.from_numpy(np.asarray(x, dtype=np.float64)).unsqueeze(0))
    return FeatureMap(out.squeeze(0).numpy())


def gradient_check(fn: Callable[[dict[str, torch.Tensor]], torch.Tensor],
                   params: NamedParameterSet, step: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``fn`` maps a dict of named float64 tensors to a scalar tensor and must be
    built from differentiable ops. Relative error per entry is
    |analytic - numeric| / max(1, |numeric|).
    """
    leaves = {
        name: torch.tensor(np.array(arr), dtype=torch.float64, requires_grad=True)
        for name, arr in params.items()
    }
    value = fn(leaves)
    if not torch.isfinite(value):
        raise TrainingDivergedError(0, "gradient_check objective is non-finite")
    grads = torch.autograd.grad(value, list(leaves.values()), allow_unused=True)
    analytic = {
        name: (g.numpy() if g is not None else np.zeros(leaves[name].shape))
        for name, g in zip(leaves, grads)
    }

    worst = 0.0
    with torch.no_grad():
        frozen = {name: t.detach().clone() for name, t in leaves.items()}

        def eval_at(name, flat_index, delta):
            bumped = dict(frozen)
            tensor = frozen[name].clone()
            tensor.view(-1)[flat_index] += delta
            bumped[name] = tensor
            out = float(fn(bumped))
            if not np.isfinite(out):
                raise TrainingDivergedError(0, "objective non-finite at perturbed point")
            return out

        for name, arr in params.items():
            grad_flat = analytic[name].reshape(-1)
            for i in range(arr.size):
                numeric = (eval_at(name, i, step) - eval_at(name, i, -step)) / (2.0 * step)
                rel = abs(grad_flat[i] - numeric) / max(1.0, abs(numeric))
                worst = max(worst, rel)
    return worst


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    best_val: float


@dataclass
class FitResult:
    history: list[EpochRecord] = field(default_factory=list)
    best_val: float = math.inf
    epochs_run: int = 0


def fit(model: nn.Module, train_step: Callable[[np.ndarray], torch.Tensor],
        val_loss: Callable[[], float], n_train: int, config: TrainConfig,
        shuffle_rng: SeededRng) -> FitResult:
    """Adam + early stopping on validation loss.

    ``train_step`` maps a batch index array to a loss tensor. The initial
    parameters participate in best-validation selection, so the returned
    model is never worse on validation than the initialization. Batch order
    comes from the shuffle stream, one permutation per epoch.
    """
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate,
                                 betas=(config.beta1, config.beta2), eps=config.eps)
    result = FitResult()
    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    result.best_val = val_loss()
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.shuffled_indices(n_train)
        epoch_losses = []
        for start in range(0, n_train, config.batch_size):
            batch = order[start:start + config.batch_size]
            optimizer.zero_grad()
            loss = train_step(batch)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(epoch)
            loss.backward()
            optimizer.step()
            epoch_losses.append(float(loss.detach()))
        current = val_loss()
        if not np.isfinite(current):
            raise TrainingDivergedError(epoch, "validation loss non-finite")
        if current < result.best_val:
            result.best_val = current
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
            stale = 0
        else:
            stale += 1
        result.history.append(EpochRecord(epoch, float(np.mean(epoch_losses)),
                                          current, result.best_val))
        result.epochs_run = epoch
        if stale >= config.patience:
            break
    model.load_state_dict(best_state)
    return result
