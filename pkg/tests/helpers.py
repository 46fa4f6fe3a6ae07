"""Oracles shared by the unit and acceptance suites."""

import numpy as np
import torch

from s2swtv.core import derive_stream
from s2swtv.masking import make_instance, sample_mask
from s2swtv.network import Architecture, init_params, theta_loss
from s2swtv.wtv import WtvState

FD_STEP = 1e-5
GRAD_RTOL = 1e-4


def gradcheck_problem(conv: str, size: int = 32, seed: int = 0):
    """A float64 theta-loss instance on a 2-level, 8-channel network."""
    rng = np.random.default_rng(seed)
    model = init_params(Architecture(2, 8, conv), derive_stream(seed, "init", 0), torch.float64)
    y = rng.standard_normal((size, size)) * 0.5
    instance = make_instance(y, sample_mask(size, size, "trace", 0.4, derive_stream(seed, "mask", 0)))
    state = WtvState.initial(size, size, 0.01, 0.1).replace(
        lam=rng.standard_normal((size, size - 1)) * 0.1,
        v=rng.standard_normal((size, size - 1)) * 0.1,
        weights=rng.uniform(0.5, 2.0, (size, size - 1)),
    )
    return model, instance, y, state, derive_stream(seed, "dropout", 0)


def gradcheck(model, instance, y, state, stream, indices=None, h=FD_STEP):
    """Compare autograd against central differences.

    Returns ``(worst_relative_error, normwise_relative_error, checked)``.  The
    element-wise denominator is floored at the level where central
    differences lose 1e-4 relative accuracy to cancellation
    (``eps * |loss| / h`` divided by the tolerance), so gradients that are
    pure round-off in the oracle itself are judged on absolute error.
    """
    g, fd, rel, _ = gradcheck_elements(model, instance, y, state, stream, indices, h)
    return float(rel.max()), float(np.linalg.norm(g - fd) / np.linalg.norm(fd)), len(g)


def gradcheck_elements(model, instance, y, state, stream, indices=None, h=FD_STEP):
    """Per-element ``(analytic, central, relative_error, (forward, backward))``."""
    params = list(model.parameters())
    loss, _ = theta_loss(model, instance, y, state, stream)
    analytic = torch.cat([g.reshape(-1) for g in torch.autograd.grad(loss, params)]).numpy()
    flat = [(k, i) for k, p in enumerate(params) for i in range(p.numel())]
    chosen = range(len(flat)) if indices is None else indices
    floor = np.finfo(np.float64).eps * abs(loss.item()) / h / GRAD_RTOL
    base = loss.item()
    g, fd, sided = [], [], []
    with torch.inference_mode(False), torch.no_grad():
        for n in chosen:
            k, i = flat[n]
            p = params[k].view(-1)
            old = p[i].item()
            p[i] = old + h
            plus = theta_loss(model, instance, y, state, stream)[0].item()
            p[i] = old - h
            minus = theta_loss(model, instance, y, state, stream)[0].item()
            p[i] = old
            g.append(analytic[n])
            fd.append((plus - minus) / (2 * h))
            sided.append(((plus - base) / h, (base - minus) / h))
    g, fd = np.array(g), np.array(fd)
    rel = np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), floor)
    return g, fd, rel, np.array(sided)


def hand_parameter_count(depth: int, width: int, conv: str) -> int:
    """Count parameters layer by layer from the documented layout."""
    layers = []  # (in, out, kernel)
    c = width
    residual = conv == "mgrconv"
    for cin in [1] + [c] * (depth + 1):
        layers.append((cin, c, 3))
        if residual:
            layers.append((cin, c, 1))
    channels = c
    for _ in range(depth - 1):
        layers += [(channels + c, 2 * c, 3), (2 * c, 2 * c, 3)]
        channels = 2 * c
    layers += [(channels + 1, c, 3), (c, c // 2, 3), (c // 2, 1, 3)]
    return sum(i * o * k * k + o for i, o, k in layers)


def masked_loss_gap_samples(draws: int, size: int = 16, sigma: float = 0.1, gamma: float = 0.01, seed: int = 0):
    """Per-draw gap between the two sides of the masked-loss expectation identity.

    For a fixed network ``f`` and clean gather ``X`` each draw samples noise
    ``N``, a trace mask ``M`` and a dropout pattern, then returns

        ||(X + N - f(M*(X+N))) * (1-M)||^2 + g*WTV(f)
      - ||(X - f(M*(X+N))) * (1-M)||^2 - ||sigma * (1-M)||^2 - g*WTV(f)

    whose expectation over ``N`` is zero.
    """
    from s2swtv.synthgen import default_events, make_synthetic
    from s2swtv.network import apply
    from s2swtv.wtv import wtv_norm

    model = init_params(Architecture(2, 8, "mgrconv"), derive_stream(seed, "init", 0), torch.float64)
    x = make_synthetic(size, size, default_events(size, size)).data
    weights = np.ones((size, size - 1))
    sigma_map = np.full((size, size), sigma)
    gaps = np.empty(draws)
    with torch.no_grad():
        for k in range(draws):
            noise = sigma_map * derive_stream(seed, "noise", k).numpy().standard_normal((size, size))
            y = x + noise
            mask = sample_mask(size, size, "trace", 0.4, derive_stream(seed, "mask", k)).data
            out = apply(model, torch.as_tensor(mask * y), torch.as_tensor(mask), derive_stream(seed, "dropout", k).torch())
            f = out.numpy()
            hidden = 1 - mask
            reg = gamma * wtv_norm(f, weights)
            lhs = np.sum(((y - f) * hidden) ** 2) + reg
            rhs = np.sum(((x - f) * hidden) ** 2) + np.sum((sigma_map * hidden) ** 2) + reg
            gaps[k] = lhs - rhs
    return gaps
