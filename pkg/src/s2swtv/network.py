"""Dropout U-Net denoiser with selectable encoder convolutions.

Layout for depth ``D`` and base width ``c`` (all kernels 3x3 unless noted):

* encoder: an input conv ``1 -> c``, then ``D`` blocks ``c -> c`` each followed
  by 2x2 max pooling, then a bottleneck conv ``c -> c``.  Encoder convs use the
  selected variant; ``mgrconv`` adds a 1x1 residual conv ``c_in -> c``.
* decoder: ``D`` blocks, each nearest-neighbour 2x upsampling, concatenation with
  the matching encoder feature (the raw input for the last block), then two
  convs with dropout in front of each.  Blocks ``0..D-2`` map
  ``prev + c -> 2c -> 2c`` (``prev`` is ``c`` for the deepest block, ``2c`` after);
  the last block maps ``prev + 1 -> c -> c // 2``.
* output: dropout, then a linear conv ``c // 2 -> 1``.

Parameter count, with ``conv(i, o, k) = i*o*k*k + o`` and ``r = 1`` for
``mgrconv`` (``0`` otherwise)::

    conv(1, c, 3) + r*conv(1, c, 1)
    + (D + 1) * (conv(c, c, 3) + r*conv(c, c, 1))
    + sum over blocks 0..D-2 of conv(prev + c, 2c, 3) + conv(2c, 2c, 3)
    + conv(prev_last + 1, c, 3) + conv(c, c // 2, 3) + conv(c // 2, 1, 3)

Inputs whose sides are not multiples of ``2**D`` are reflect-padded at the
bottom/right and cropped back.  Dropout is always on; its Bernoulli draws come
from an explicit ``torch.Generator`` so every forward pass is reproducible.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import CONV_VARIANTS, RngStream, S2SWTVError, ShapeMismatch, as_array
from .masking import MaskedInstance, masked_fidelity
from .wtv import WtvState, augmented_penalty

LEAK = 0.1
FORWARD_MODES = ("train", "eval_sample")


class BadArchitecture(S2SWTVError):
    pass


class ShapeNotDivisible(S2SWTVError):
    pass


@dataclass(frozen=True)
class Architecture:
    depth: int = 5
    width: int = 48
    conv: str = "mgrconv"
    dropout_rate: float = 0.5

    def __post_init__(self):
        if self.depth < 1 or self.width < 2:
            raise BadArchitecture("depth must be >= 1 and width >= 2")
        if self.conv not in CONV_VARIANTS:
            raise BadArchitecture(f"conv must be one of {CONV_VARIANTS}")
        if not 0 <= self.dropout_rate < 1:
            raise BadArchitecture("dropout_rate must lie in [0, 1)")

    @property
    def divisor(self) -> int:
        return 2**self.depth

    @classmethod
    def from_config(cls, config) -> Architecture:
        return cls(config.depth, config.width, config.conv, config.dropout_rate)


class EncoderConv(nn.Module):
    """3x3 convolution in one of three flavours.

    ``partial`` renormalizes by the fraction of kept inputs under the window
    and propagates the dilated mask.  The mask is padded with ones, so an
    all-ones mask leaves the standard convolution untouched.  ``mgrconv`` adds
    a 1x1 residual convolution of the masked input to the partial convolution
    and passes its input mask on unchanged (the caller max-pools it).
    """

    def __init__(self, cin: int, cout: int, variant: str):
        super().__init__()
        self.variant = variant
        self.conv = nn.Conv2d(cin, cout, 3, padding=1)
        self.residual = nn.Conv2d(cin, cout, 1) if variant == "mgrconv" else None

    def forward(self, x, mask):
        if self.variant == "standard":
            return self.conv(x), mask
        xm = x * mask
        raw = F.conv2d(xm, self.conv.weight, None, padding=1)
        ones = torch.ones(1, 1, 3, 3, dtype=x.dtype, device=x.device)
        cover = F.conv2d(F.pad(mask, (1, 1, 1, 1), value=1.0), ones)
        new_mask = (cover > 0).to(x.dtype)
        ratio = 9.0 / cover.clamp(min=1.0) * new_mask
        out = (raw * ratio + self.conv.bias.view(1, -1, 1, 1)) * new_mask
        if self.residual is not None:
            return out + self.residual(xm), mask
        return out, new_mask


class UNet(nn.Module):
    def __init__(self, arch: Architecture):
        super().__init__()
        self.arch = arch
        c, d, v = arch.width, arch.depth, arch.conv
        self.enc_in = EncoderConv(1, c, v)
        self.enc = nn.ModuleList(EncoderConv(c, c, v) for _ in range(d))
        self.bottleneck = EncoderConv(c, c, v)
        self.dec = nn.ModuleList()
        prev = c
        for _ in range(d - 1):
            self.dec.append(nn.ModuleList([
                nn.Conv2d(prev + c, 2 * c, 3, padding=1),
                nn.Conv2d(2 * c, 2 * c, 3, padding=1),
            ]))
            prev = 2 * c
        self.dec.append(nn.ModuleList([
            nn.Conv2d(prev + 1, c, 3, padding=1),
            nn.Conv2d(c, c // 2, 3, padding=1),
        ]))
        self.out = nn.Conv2d(c // 2, 1, 3, padding=1)

    def _dropout(self, h, generator):
        p = self.arch.dropout_rate
        if p == 0:
            return h
        keep = torch.rand(h.shape, generator=generator, dtype=h.dtype, device=h.device) >= p
        return h * keep / (1.0 - p)

    def forward(self, x, mask, generator):
        """``x`` and ``mask`` are ``(N, 1, H, W)`` with H, W multiples of ``2**depth``."""
        act = lambda t: F.leaky_relu(t, LEAK)  # noqa: E731
        h, m = self.enc_in(x, mask)
        h = act(h)
        skips = [x]
        for i, block in enumerate(self.enc):
            h, m = block(h, m)
            h = F.max_pool2d(act(h), 2)
            m = F.max_pool2d(m, 2)
            if i < len(self.enc) - 1:
                skips.append(h)
        h, m = self.bottleneck(h, m)
        h = act(h)
        for conv_a, conv_b in self.dec:
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = torch.cat([h, skips.pop()], dim=1)
            h = act(conv_a(self._dropout(h, generator)))
            h = act(conv_b(self._dropout(h, generator)))
        return self.out(self._dropout(h, generator))


def _conv_count(cin: int, cout: int, k: int) -> int:
    return cin * cout * k * k + cout


def parameter_count(arch: Architecture) -> int:
    """Closed-form parameter count (see module docstring)."""
    c, d = arch.width, arch.depth
    r = 1 if arch.conv == "mgrconv" else 0
    total = _conv_count(1, c, 3) + r * _conv_count(1, c, 1)
    total += (d + 1) * (_conv_count(c, c, 3) + r * _conv_count(c, c, 1))
    prev = c
    for _ in range(d - 1):
        total += _conv_count(prev + c, 2 * c, 3) + _conv_count(2 * c, 2 * c, 3)
        prev = 2 * c
    total += _conv_count(prev + 1, c, 3) + _conv_count(c, c // 2, 3) + _conv_count(c // 2, 1, 3)
    return total


def init_params(arch: Architecture, stream: RngStream, dtype=torch.float32) -> UNet:
    """Build a U-Net with the standard fan-in scaled uniform initialization.

    Weights and biases are drawn from ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``
    (the usual Conv2d default), but from ``stream`` instead of global state.
    """
    if not isinstance(arch, Architecture):
        raise BadArchitecture(f"expected an Architecture, got {type(arch).__name__}")
    model = UNet(arch).to(dtype)
    gen = stream.torch()
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, nn.Conv2d):
                fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
                bound = 1.0 / np.sqrt(fan_in)
                for tensor in (module.weight, module.bias):
                    tensor.copy_((torch.rand(tensor.shape, generator=gen, dtype=dtype) * 2 - 1) * bound)
    return model


def clone_params(model: UNet) -> UNet:
    return copy.deepcopy(model)


def _reflect_index(n: int, target: int) -> torch.Tensor:
    """Indices extending ``0..n-1`` to length ``target`` by mirror reflection."""
    idx = np.arange(target)
    if n > 1:
        period = 2 * (n - 1)
        idx = idx % period
        idx = np.where(idx >= n, period - idx, idx)
    else:
        idx = np.zeros(target, dtype=int)
    return torch.as_tensor(idx, dtype=torch.long)


def pad_to_multiple(t, divisor: int):
    """Reflect-pad the last two dims of ``t`` up to multiples of ``divisor``."""
    h, w = t.shape[-2:]
    th = -(-h // divisor) * divisor
    tw = -(-w // divisor) * divisor
    if (th, tw) == (h, w):
        return t
    return t[..., _reflect_index(h, th), :][..., _reflect_index(w, tw)]


def apply(model: UNet, masked_input, mask, generator):
    """Differentiable forward pass on 2-D (or batched 4-D) tensors."""
    squeeze = masked_input.dim() == 2
    if squeeze:
        masked_input = masked_input[None, None]
        mask = mask[None, None]
    h, w = masked_input.shape[-2:]
    d = model.arch.divisor
    x = pad_to_multiple(masked_input, d)
    m = pad_to_multiple(mask, d)
    if x.shape[-2] % d or x.shape[-1] % d:
        raise ShapeNotDivisible(f"padded shape {tuple(x.shape[-2:])} not divisible by {d}")
    out = model(x, m, generator)[..., :h, :w]
    return out[0, 0] if squeeze else out


def _dtype(model: UNet):
    return next(model.parameters()).dtype


def instance_tensors(model: UNet, instance: MaskedInstance):
    dtype = _dtype(model)
    x = torch.as_tensor(np.asarray(instance.input), dtype=dtype)
    m = torch.as_tensor(as_array(instance.mask), dtype=dtype)
    return x, m


def forward(model: UNet, instance: MaskedInstance, mode: str = "eval_sample", stream: RngStream | None = None):
    """Run the denoiser once and return the output as a numpy array.

    Dropout is active in both modes; ``stream`` fixes its draws.
    """
    if mode not in FORWARD_MODES:
        raise ValueError(f"mode must be one of {FORWARD_MODES}")
    if stream is None:
        raise ValueError("forward needs an explicit RNG stream for dropout")
    x, m = instance_tensors(model, instance)
    with torch.set_grad_enabled(mode == "train"):
        out = apply(model, x, m, stream.torch())
    return out.detach().cpu().numpy()


def theta_loss(model: UNet, instance: MaskedInstance, y, state: WtvState, stream: RngStream):
    """Masked fidelity plus the ADMM coupling term, from one forward pass.

    Returns ``(loss, output)``; ``loss`` is a differentiable scalar tensor.
    """
    x, m = instance_tensors(model, instance)
    y_t = torch.as_tensor(np.asarray(as_array(y)), dtype=x.dtype)
    if y_t.shape != x.shape:
        raise ShapeMismatch(f"y {tuple(y_t.shape)} and instance {tuple(x.shape)} differ")
    out = apply(model, x, m, stream.torch())
    loss = masked_fidelity(y_t, out, m) + augmented_penalty(state, out)
    return loss, out


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(model: UNet, grads, opt_state: AdamState, step_size: float):
    """One bias-corrected Adam update, applied to the parameters in place.

    Returns ``(model, new_state)``.
    """
    params = list(model.parameters())
    grads = list(grads)
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise ShapeMismatch("gradient collection does not match the parameters")
    m_prev = opt_state.m or [torch.zeros_like(p) for p in params]
    v_prev = opt_state.v or [torch.zeros_like(p) for p in params]
    step = opt_state.step + 1
    b1, b2 = opt_state.beta1, opt_state.beta2
    corr1 = 1 - b1**step
    corr2 = 1 - b2**step
    m_new, v_new = [], []
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, m_prev, v_prev):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            p.sub_(step_size * (m / corr1) / ((v / corr2).sqrt() + opt_state.eps))
            m_new.append(m)
            v_new.append(v)
    return model, AdamState(step, m_new, v_new, b1, b2, opt_state.eps)


def save_params(model: UNet, path) -> None:
    torch.save({"arch": vars(model.arch), "state": model.state_dict()}, path)


def load_params(path) -> UNet:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    model = UNet(Architecture(**blob["arch"]))
    dtype = next(iter(blob["state"].values())).dtype
    model = model.to(dtype)
    model.load_state_dict(blob["state"])
    return model
