"""Mask-constrained conditional autoregressive flows.

Each output coordinate owns a block of hidden units in a single masked
network, so arbitrary adjacency masks are honoured exactly: the parameters of
coordinate ``i`` are a function of the inputs and context columns its mask
row allows, nothing else. ``forward`` maps data to noise, ``inverse`` maps
noise to data one coordinate at a time in the mask ordering.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .graph import FlowMask

LOG_2PI = math.log(2 * math.pi)

DEFAULT_BINS = 8
DEFAULT_BOUND = 5.0
MIN_BIN_WIDTH = 1e-3
MIN_BIN_HEIGHT = 1e-3
MIN_DERIVATIVE = 1e-3
# softplus(DERIV_SHIFT) + MIN_DERIVATIVE == 1, so zero parameters give unit slopes
DERIV_SHIFT = math.log(math.expm1(1 - MIN_DERIVATIVE))
LOG_SCALE_BOUND = 5.0

_ACTIVATIONS = {"tanh": nn.Tanh, "relu": nn.ReLU, "elu": nn.ELU, "silu": nn.SiLU}


class MaskedLinear(nn.Linear):
    def __init__(self, in_features: int, out_features: int, mask: np.ndarray):
        super().__init__(in_features, out_features)
        mask = torch.as_tensor(np.asarray(mask, dtype=bool))
        self.register_buffer("mask", mask.to(self.weight.dtype))
        with torch.no_grad():
            fan_in = mask.sum(1, keepdim=True).clamp(min=1).to(self.weight.dtype)
            bound = 1.0 / fan_in.sqrt()
            self.weight.uniform_(-1, 1).mul_(bound).mul_(self.mask)
            self.bias.uniform_(-1, 1).mul_(bound.squeeze(1))

    def forward(self, x):
        return F.linear(x, self.weight * self.mask, self.bias)


class MaskedConditioner(nn.Module):
    """Per-coordinate masked MLP producing ``n_params`` values per coordinate."""

    def __init__(self, mask: FlowMask, n_params: int, hidden: Sequence[int] = (32, 32), activation: str = "tanh"):
        super().__init__()
        self.dim = mask.dim
        self.context_dim = mask.context_dim
        self.n_params = n_params
        D = self.dim
        first = np.concatenate([mask.conditioner_mask(), mask.context_mask], axis=1)
        layers: list[nn.Module] = []
        prev_w = None
        in_features = D + self.context_dim
        for w in hidden:
            if prev_w is None:
                m = np.repeat(first, w, axis=0)
            else:
                m = np.kron(np.eye(D, dtype=bool), np.ones((w, prev_w), dtype=bool))
            layers += [MaskedLinear(in_features, D * w, m), _ACTIVATIONS[activation]()]
            in_features, prev_w = D * w, w
        if prev_w is None:
            out_mask = np.repeat(first, n_params, axis=0)
        else:
            out_mask = np.kron(np.eye(D, dtype=bool), np.ones((n_params, prev_w), dtype=bool))
        self.out = MaskedLinear(in_features, D * n_params, out_mask)
        with torch.no_grad():
            self.out.weight.zero_()
            self.out.bias.zero_()
        self.trunk = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor, ctx: torch.Tensor) -> torch.Tensor:
        h = torch.cat([x, ctx], dim=-1) if self.context_dim else x
        return self.out(self.trunk(h)).view(-1, self.dim, self.n_params)


# -- elementwise transforms ----------------------------------------------


def affine_forward(x, params):
    shift, log_scale = _affine_params(params)
    return (x - shift) * torch.exp(-log_scale), -log_scale


def affine_inverse(u, params):
    shift, log_scale = _affine_params(params)
    return u * torch.exp(log_scale) + shift, log_scale


def _affine_params(params):
    shift = params[..., 0]
    log_scale = LOG_SCALE_BOUND * torch.tanh(params[..., 1] / LOG_SCALE_BOUND)
    return shift, log_scale


def rq_spline(inputs, params, inverse=False, bins=DEFAULT_BINS, bound=DEFAULT_BOUND):
    """Monotone rational-quadratic spline on ``[-bound, bound]``, identity outside.

    ``params`` has ``3 * bins - 1`` trailing entries: unnormalised widths,
    heights and interior derivatives. Returns ``(outputs, log|d out / d in|)``.
    """
    uw, uh, ud = params[..., :bins], params[..., bins:2 * bins], params[..., 2 * bins:]
    inside = (inputs >= -bound) & (inputs <= bound)
    x = inputs.clamp(-bound, bound)

    widths = MIN_BIN_WIDTH + (1 - MIN_BIN_WIDTH * bins) * torch.softmax(uw, dim=-1)
    heights = MIN_BIN_HEIGHT + (1 - MIN_BIN_HEIGHT * bins) * torch.softmax(uh, dim=-1)
    cw = _knots(widths, bound)
    ch = _knots(heights, bound)
    widths = cw[..., 1:] - cw[..., :-1]
    heights = ch[..., 1:] - ch[..., :-1]
    ones = torch.ones_like(ud[..., :1])
    derivs = torch.cat([ones, MIN_DERIVATIVE + F.softplus(ud + DERIV_SHIFT), ones], dim=-1)

    knots = ch if inverse else cw
    idx = torch.searchsorted(knots[..., 1:-1].contiguous(), x.unsqueeze(-1).contiguous(), right=True)
    x_k = cw.gather(-1, idx).squeeze(-1)
    w_k = widths.gather(-1, idx).squeeze(-1)
    y_k = ch.gather(-1, idx).squeeze(-1)
    h_k = heights.gather(-1, idx).squeeze(-1)
    d_k = derivs.gather(-1, idx).squeeze(-1)
    d_k1 = derivs.gather(-1, idx + 1).squeeze(-1)
    s = h_k / w_k
    slack = d_k1 + d_k - 2 * s

    if not inverse:
        theta = (x - x_k) / w_k
        t1 = theta * (1 - theta)
        num = h_k * (s * theta**2 + d_k * t1)
        den = s + slack * t1
        out = y_k + num / den
        dnum = s**2 * (d_k1 * theta**2 + 2 * s * t1 + d_k * (1 - theta) ** 2)
        lad = torch.log(dnum) - 2 * torch.log(den)
    else:
        dy = x - y_k
        a = h_k * (s - d_k) + dy * slack
        b = h_k * d_k - dy * slack
        c = -s * dy
        disc = b**2 - 4 * a * c
        if not bool(torch.all(disc >= -1e-12)):
            raise AssertionError("non-monotone spline parameters")
        theta = 2 * c / (-b - torch.sqrt(disc.clamp(min=0)))
        out = theta * w_k + x_k
        t1 = theta * (1 - theta)
        den = s + slack * t1
        dnum = s**2 * (d_k1 * theta**2 + 2 * s * t1 + d_k * (1 - theta) ** 2)
        lad = -(torch.log(dnum) - 2 * torch.log(den))

    out = torch.where(inside, out, inputs)
    lad = torch.where(inside, lad, torch.zeros_like(lad))
    return out, lad


def _knots(sizes, bound):
    c = F.pad(torch.cumsum(sizes, dim=-1), (1, 0), value=0.0)
    c = 2 * bound * c - bound
    # pin the end knots exactly
    return torch.cat([torch.full_like(c[..., :1], -bound), c[..., 1:-1], torch.full_like(c[..., :1], bound)], dim=-1)


# -- flow layers ---------------------------------------------------------


class MaskedAutoregressiveLayer(nn.Module):
    """One conditional bijection ``x <-> u`` constrained by a :class:`FlowMask`."""

    def __init__(
        self,
        mask: FlowMask,
        transform: str = "affine",
        hidden: Sequence[int] = (32, 32),
        bins: int = DEFAULT_BINS,
        bound: float = DEFAULT_BOUND,
        activation: str = "tanh",
    ):
        super().__init__()
        if not mask.is_acyclic():
            raise ValueError("mask is not autoregressive in its ordering")
        if transform not in ("affine", "spline"):
            raise ValueError(f"unknown transform {transform!r}")
        self.mask = mask
        self.transform = transform
        self.bins = bins
        self.bound = bound
        n_params = 2 if transform == "affine" else 3 * bins - 1
        self.conditioner = MaskedConditioner(mask, n_params, hidden, activation)

    @property
    def dim(self) -> int:
        return self.mask.dim

    def _transform(self, values, params, inverse):
        if self.transform == "affine":
            return (affine_inverse if inverse else affine_forward)(values, params)
        return rq_spline(values, params, inverse=inverse, bins=self.bins, bound=self.bound)

    def forward(self, x: torch.Tensor, ctx: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Data to noise; returns ``(u, log|det du/dx|)`` per row."""
        _check_finite(x, ctx)
        params = self.conditioner(x, ctx)
        u, lad = self._transform(x, params, inverse=False)
        return u, lad.sum(-1)

    def inverse(self, u: torch.Tensor, ctx: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Noise to data, solved coordinate by coordinate; returns ``(x, log|det dx/du|)``."""
        _check_finite(u, ctx)
        x = torch.zeros_like(u)
        cols = torch.arange(self.dim, device=u.device)
        lad = torch.zeros_like(u)
        for i in range(self.dim):
            params = self.conditioner(x, ctx)
            xi, li = self._transform(u[:, i], params[:, i], inverse=True)
            onehot = cols == i
            x = torch.where(onehot, xi.unsqueeze(-1), x)
            lad = torch.where(onehot, li.unsqueeze(-1), lad)
        return x, lad.sum(-1)


class ConditionalFlow(nn.Module):
    """Stack of masked layers sharing one mask; logdets add up."""

    def __init__(self, mask: FlowMask, layers: int = 1, **layer_kwargs):
        super().__init__()
        self.mask = mask
        self.layers = nn.ModuleList(MaskedAutoregressiveLayer(mask, **layer_kwargs) for _ in range(layers))

    @property
    def dim(self) -> int:
        return self.mask.dim

    @property
    def context_dim(self) -> int:
        return self.mask.context_dim

    def forward(self, x, ctx):
        total = torch.zeros(x.shape[0], dtype=x.dtype, device=x.device)
        for layer in self.layers:
            x, lad = layer(x, ctx)
            total = total + lad
        return x, total

    def inverse(self, u, ctx):
        total = torch.zeros(u.shape[0], dtype=u.dtype, device=u.device)
        for layer in reversed(self.layers):
            u, lad = layer.inverse(u, ctx)
            total = total + lad
        return u, total

    def log_prob(self, x, ctx):
        return log_prob(self, x, ctx)


def standard_normal_log_prob(u: torch.Tensor) -> torch.Tensor:
    return -0.5 * (u**2).sum(-1) - 0.5 * u.shape[-1] * LOG_2PI


def log_prob(flow, x, ctx) -> torch.Tensor:
    """Log-density of ``x`` given ``ctx`` under a standard-normal base."""
    u, lad = flow(x, ctx)
    return standard_normal_log_prob(u) + lad


def randomize_(module: nn.Module, std: float = 0.5, generator: torch.Generator | None = None) -> nn.Module:
    """Give every (masked) output layer random weights, so the flow is not the identity."""
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, MaskedConditioner):
                w = torch.randn(m.out.weight.shape, generator=generator, dtype=m.out.weight.dtype)
                b = torch.randn(m.out.bias.shape, generator=generator, dtype=m.out.bias.dtype)
                m.out.weight.copy_(w * std * m.out.mask)
                m.out.bias.copy_(b * std)
    return module


def _check_finite(*tensors):
    for t in tensors:
        if not bool(torch.isfinite(t).all()):
            raise FloatingPointError("non-finite input to flow")
