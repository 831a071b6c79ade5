"""Autoencoder training (fusion layer removed): SSIM + L1 loss and Adam."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .config import ModelConfig, TrainConfig
from .metrics import gaussian_window
from .pipeline import SwinFuse
from .tensor import ShapeError, Tensor, filter2d, zero_grad
from .weights import WeightStore

log = logging.getLogger(__name__)

DATA_RANGE = 2.0  # images live in [-1, 1]
K1, K2 = 0.01, 0.03


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x), dtype=dtype)


def ssim(a, b, window: int = 11, sigma: float = 1.5, data_range: float = DATA_RANGE) -> Tensor:
    """Mean SSIM over all valid positions of a Gaussian window.

    Differentiable in both arguments when they are recording tensors.
    """
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    if a.shape != b.shape:
        raise ShapeError(f"ssim inputs differ in shape: {a.shape} vs {b.shape}")
    if a.ndim != 2 or min(a.shape) < window:
        raise ShapeError(f"ssim needs 2-D images at least {window}x{window}, got {a.shape}")
    k = gaussian_window(window, sigma)
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    mu_a, mu_b = filter2d(a, k), filter2d(b, k)
    mu_aa, mu_bb, mu_ab = mu_a * mu_a, mu_b * mu_b, mu_a * mu_b
    var_a = filter2d(a * a, k) - mu_aa
    var_b = filter2d(b * b, k) - mu_bb
    cov = filter2d(a * b, k) - mu_ab
    num = (2.0 * mu_ab + c1) * (2.0 * cov + c2)
    den = (mu_aa + mu_bb + c1) * (var_a + var_b + c2)
    return (num / den).mean()


def ssim_loss(out, target, window: int = 11) -> Tensor:
    return 1.0 - ssim(out, target, window)


def l1_loss(out, target) -> Tensor:
    out = _as_tensor(out)
    return (out - _as_tensor(target, like=out)).abs().mean()


def total_loss(out, target, lam: float = 1e3, window: int = 11) -> Tensor:
    return l1_loss(out, target) + lam * ssim_loss(out, target, window)


# -- Adam -----------------------------------------------------------------------


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place on ``params``."""
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= (lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)).astype(p.dtype, copy=False)


# -- training loop --------------------------------------------------------------


@dataclass
class LogRecord:
    epoch: int
    iteration: int
    l1: float
    ssim: float  # the SSIM loss term, 1 - SSIM
    total: float

    CSV_HEADER = "epoch,iteration,l1,ssim,total"

    def csv(self) -> str:
        return f"{self.epoch},{self.iteration},{self.l1:.8g},{self.ssim:.8g},{self.total:.8g}"


def train(dataset: Sequence[np.ndarray], config: TrainConfig | None = None,
          model_config: ModelConfig | None = None,
          on_log: Callable[[LogRecord], None] | None = None,
          model: SwinFuse | None = None) -> WeightStore:
    """Fit encoder and reconstruction head to reproduce each input tile.

    Gradients of a batch are summed image by image in a fixed order, so a run
    is bitwise reproducible for a given seed on a single thread.
    """
    config = config or TrainConfig()
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")
    if model is None:
        model = SwinFuse.initialize(model_config or ModelConfig(), seed=config.seed)
    side = model.config.tile
    tiles = [np.asarray(t, dtype=model.dtype) for t in dataset]
    for t in tiles:
        if t.shape != (side, side):
            raise ShapeError(f"training tile {t.shape} does not match tile side {side}")

    rng = np.random.default_rng(config.seed)
    state = AdamState()
    params = model.params
    iteration = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(tiles))
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            zero_grad(params)
            l1_sum = ssim_sum = 0.0
            for idx in batch:
                target = Tensor(tiles[idx])
                out = model.autoencode(target)
                l1 = l1_loss(out, target)
                ls = ssim_loss(out, target, config.ssim_window)
                loss = (l1 + config.lam * ls) * (1.0 / len(batch))
                loss.backward()
                l1_sum += l1.item()
                ssim_sum += ls.item()
            grads = {k: p.grad for k, p in params.items() if p.grad is not None}
            adam_step({k: p.data for k, p in params.items()}, grads, state, config.lr)
            iteration += 1
            rec = LogRecord(epoch, iteration, l1_sum / len(batch), ssim_sum / len(batch), 0.0)
            rec.total = rec.l1 + config.lam * rec.ssim
            epoch_losses.append(rec.total)
            if on_log is not None:
                on_log(rec)
            if config.max_iterations is not None and iteration >= config.max_iterations:
                break
        log.info("epoch %d mean loss %.6g", epoch, float(np.mean(epoch_losses)))
        if config.max_iterations is not None and iteration >= config.max_iterations:
            break
    zero_grad(params)
    return model.to_store()
