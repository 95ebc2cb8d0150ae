"""Small float64 building blocks shared by the encoders and discriminators.

Everything is created in float64 and initialized from an explicit torch
Generator, never from global RNG state, so parameter init is a pure function
of (seed, architecture).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

DTYPE = torch.float64


@dataclass
class ModelDims:
    """Every dimension knob in one place.

    d is the unified embedding width, e the sentence-graph embedding width
    (defaults to d), d_raw the raw scene feature width.
    """

    d: int = 128
    e: int | None = None
    d_raw: int = 64
    n_pool: int = 3        # central objects per image
    epsilon: float = 0.1   # text-node attention threshold
    k_rel: int = 5         # neighbours contributing relationship/attribute nodes
    gcn_layers: int = 2
    mapper_hidden: int | None = None
    critic_hidden: int = 64
    disc_hidden: int = 64
    max_len: int = 20      # decoder hard stop

    def __post_init__(self):
        if self.e is None:
            self.e = self.d
        if self.mapper_hidden is None:
            self.mapper_hidden = max(self.d, self.e)
        for name in ("d", "e", "d_raw", "n_pool", "k_rel", "gcn_layers",
                     "mapper_hidden", "critic_hidden", "disc_hidden", "max_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"dims.{name} must be positive")
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in (0, 1]")


def make_param(*shape, dtype=DTYPE) -> nn.Parameter:
    return nn.Parameter(torch.empty(*shape, dtype=dtype))


def uniform_init_(tensor: torch.Tensor, fan_in: int, generator: torch.Generator) -> None:
    bound = 1.0 / math.sqrt(fan_in)
    with torch.no_grad():
        tensor.uniform_(-bound, bound, generator=generator)


class Dense(nn.Module):
    """Linear layer with explicit seeded init."""

    def __init__(self, in_features: int, out_features: int, bias: bool = True):
        super().__init__()
        self.in_features = in_features
        self.weight = make_param(out_features, in_features)
        self.bias = make_param(out_features) if bias else None

    def reset(self, generator: torch.Generator) -> None:
        uniform_init_(self.weight, self.in_features, generator)
        if self.bias is not None:
            uniform_init_(self.bias, self.in_features, generator)

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)


class LstmCell(nn.Module):
    """Standard gated recurrent cell, gates stacked in [input, forget, cell, output] order.

    z = W x + U h + b;  i, f, g, o = split(z);  c' = sigma(f) c + sigma(i) tanh(g);
    h' = sigma(o) tanh(c').
    """

    def __init__(self, input_size: int, hidden_size: int):
        super().__init__()
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.w_input = make_param(4 * hidden_size, input_size)
        self.w_hidden = make_param(4 * hidden_size, hidden_size)
        self.bias = make_param(4 * hidden_size)

    def reset(self, generator: torch.Generator) -> None:
        for p in (self.w_input, self.w_hidden, self.bias):
            uniform_init_(p, self.hidden_size, generator)

    def initial_state(self, batch: int):
        h = torch.zeros(batch, self.hidden_size, dtype=DTYPE)
        return h, h.clone()

    def forward(self, x, state):
        h, c = state
        z = x @ self.w_input.T + h @ self.w_hidden.T + self.bias
        i, f, g, o = z.chunk(4, dim=-1)
        c_next = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h_next = torch.sigmoid(o) * torch.tanh(c_next)
        return h_next, c_next


def reset_children(module: nn.Module, generator: torch.Generator) -> None:
    """Reset every Dense/LstmCell below `module` in deterministic name order."""
    for _, child in sorted(module.named_modules(), key=lambda kv: kv[0]):
        if isinstance(child, (Dense, LstmCell)):
            child.reset(generator)


def state_to_numpy(module: nn.Module) -> dict:
    return {name: tensor.detach().cpu().numpy().copy()
            for name, tensor in module.state_dict().items()}


def load_numpy_state(module: nn.Module, arrays: dict) -> None:
    state = {name: torch.from_numpy(arr.copy()) for name, arr in arrays.items()}
    module.load_state_dict(state)
