"""Global feature extraction: 1x1 positional encoding and residual Swin blocks.

Everything here is functional over a flat ``{name: Tensor}`` parameter map so
that the same code serves training, inference and gradient checks. Parameter
names follow ``blocks.<i>.layers.<j>.<sublayer>.<weight|bias>``; linear weights
are stored ``(out_features, in_features)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping

import numpy as np

from .config import ConfigError, ModelConfig
from .tensor import ShapeError, Tensor, gelu, layer_norm, linear, matmul, softmax_rows

MASK_VALUE = -1e9

Params = Mapping[str, Tensor]


@dataclass
class SequenceFeatures:
    """Token matrix of shape (height*width, C) plus the grid it came from."""

    tokens: Tensor
    height: int
    width: int

    def __post_init__(self):
        if self.tokens.ndim != 2 or self.tokens.shape[0] != self.height * self.width:
            raise ShapeError(f"tokens {self.tokens.shape} do not match grid "
                             f"{self.height}x{self.width}")

    @property
    def channels(self) -> int:
        return self.tokens.shape[1]

    def plane(self) -> Tensor:
        return self.tokens.reshape(self.height, self.width, self.channels)

    @classmethod
    def from_plane(cls, x: Tensor) -> SequenceFeatures:
        h, w, c = x.shape
        return cls(x.reshape(h * w, c), h, w)


def _sub(params: Params, prefix: str) -> dict[str, Tensor]:
    prefix = prefix + "."
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


# -- initialisation -----------------------------------------------------------


def _trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


def _conv_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Ordered name -> shape map for every learnable tensor of ``config``."""
    c, n = config.channels, config.window_size
    shapes: dict[str, tuple[int, ...]] = {
        "pos_embed.weight": (c, 1),
        "pos_embed.bias": (c,),
    }
    for i, heads in enumerate(config.heads):
        for j in range(config.stl_count):
            p = f"blocks.{i}.layers.{j}"
            shapes.update({
                f"{p}.norm1.weight": (c,),
                f"{p}.norm1.bias": (c,),
                f"{p}.attn.q.weight": (c, c),
                f"{p}.attn.k.weight": (c, c),
                f"{p}.attn.v.weight": (c, c),
                f"{p}.attn.relative_position_bias_table": ((2 * n - 1) ** 2, heads),
                f"{p}.attn.proj.weight": (c, c),
                f"{p}.attn.proj.bias": (c,),
                f"{p}.norm2.weight": (c,),
                f"{p}.norm2.bias": (c,),
                f"{p}.mlp.fc1.weight": (config.hidden, c),
                f"{p}.mlp.fc1.bias": (config.hidden,),
                f"{p}.mlp.fc2.weight": (c, config.hidden),
                f"{p}.mlp.fc2.bias": (c,),
            })
    shapes["recon.weight"] = (1, c)
    shapes["recon.bias"] = (1,)
    return shapes


def init_params(config: ModelConfig, seed: int = 0, dtype=np.float32) -> dict[str, Tensor]:
    """Seeded initial weights.

    Transformer linears and bias tables: truncated normal, std 0.02. LayerNorm:
    ones/zeros. All biases: zeros. The weights of the two 1x1 convolutions keep
    the usual uniform(+-1/sqrt(fan_in)) convolution init.
    """
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for name, shape in param_shapes(config).items():
        if name.endswith("bias") and ".norm" not in name:
            arr = np.zeros(shape)
        elif name.startswith(("pos_embed", "recon")):
            fan_in = 1 if name.startswith("pos_embed") else config.channels
            arr = _conv_uniform(rng, shape, fan_in)
        elif ".norm" in name:
            arr = np.ones(shape) if name.endswith("weight") else np.zeros(shape)
        else:
            arr = _trunc_normal(rng, shape)
        params[name] = Tensor(arr.astype(dtype), requires_grad=True)
    return params


# -- windows ------------------------------------------------------------------


def window_partition(x: Tensor, n: int) -> Tensor:
    """(H, W, C) -> (H*W/n^2, n*n, C); windows and tokens both row-major."""
    h, w, c = x.shape
    if h % n or w % n:
        raise ShapeError(f"plane {h}x{w} not divisible by window {n}")
    x = x.reshape(h // n, n, w // n, n, c).transpose(0, 2, 1, 3, 4)
    return x.reshape((h // n) * (w // n), n * n, c)


def window_reverse(windows: Tensor, n: int, h: int, w: int) -> Tensor:
    """Inverse of :func:`window_partition`."""
    if h % n or w % n or windows.shape[0] != (h // n) * (w // n) or windows.shape[1] != n * n:
        raise ShapeError(f"{windows.shape[0]} windows of {windows.shape[1]} tokens "
                         f"cannot tile a {h}x{w} plane with window {n}")
    c = windows.shape[-1]
    x = windows.reshape(h // n, w // n, n, n, c).transpose(0, 2, 1, 3, 4)
    return x.reshape(h, w, c)


@lru_cache(maxsize=None)
def relative_position_index(n: int, m: int | None = None) -> np.ndarray:
    """(t, t) map from a (query, key) token pair to a bias-table row.

    The window is ``n`` x ``m`` (square when ``m`` is omitted) and the table has
    (2n-1)(2m-1) rows, one per relative offset.
    """
    m = n if m is None else m
    coords = np.stack(np.meshgrid(np.arange(n), np.arange(m), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :]  # 2, t, t
    index = (rel[0] + n - 1) * (2 * m - 1) + (rel[1] + m - 1)
    index.flags.writeable = False
    return index


def shift_region_labels(h: int, w: int, n: int, shift: int) -> np.ndarray:
    """Region id of every pixel of the cyclically shifted plane.

    Pixels that were contiguous before the shift share an id; attention between
    different ids is masked.
    """
    labels = np.zeros((h, w), dtype=np.int64)
    slices = (slice(0, -n), slice(-n, -shift), slice(-shift, None))
    cnt = 0
    for hs in slices:
        for ws in slices:
            labels[hs, ws] = cnt
            cnt += 1
    return labels


@lru_cache(maxsize=32)
def shift_attention_mask(h: int, w: int, n: int, shift: int) -> np.ndarray:
    """(num_windows, n^2, n^2) additive mask: 0 within a region, MASK_VALUE across."""
    labels = shift_region_labels(h, w, n, shift)
    lw = labels.reshape(h // n, n, w // n, n).transpose(0, 2, 1, 3).reshape(-1, n * n)
    diff = lw[:, :, None] != lw[:, None, :]
    mask = np.where(diff, MASK_VALUE, 0.0)
    mask.flags.writeable = False
    return mask


# -- attention ----------------------------------------------------------------


def window_attention(windows: Tensor, p: Params, heads: int,
                     mask: np.ndarray | None = None,
                     window: tuple[int, int] | None = None) -> Tensor:
    """Multi-head self-attention inside each window.

    ``p`` holds ``q.weight``, ``k.weight``, ``v.weight``, ``proj.weight``,
    ``proj.bias`` and ``relative_position_bias_table``. ``window`` gives the
    window's (rows, cols); square by default.
    """
    nw, t, c = windows.shape
    if c % heads:
        raise ConfigError(f"channels {c} not divisible by heads {heads}")
    if window is None:
        n = int(round(np.sqrt(t)))
        window = (n, n)
    if window[0] * window[1] != t:
        raise ShapeError(f"window {window} does not hold {t} tokens")
    d = c // heads

    def split(z: Tensor) -> Tensor:
        return z.reshape(nw, t, heads, d).transpose(0, 2, 1, 3)

    q = split(linear(windows, p["q.weight"]))
    k = split(linear(windows, p["k.weight"]))
    v = split(linear(windows, p["v.weight"]))

    scores = matmul(q, k.swap_last()) * (1.0 / np.sqrt(d))
    table = p["relative_position_bias_table"]
    bias = table.take(relative_position_index(*window).reshape(-1)).reshape(t, t, heads)
    scores = scores + bias.transpose(2, 0, 1)
    if mask is not None:
        scores = scores + mask.reshape(nw, 1, t, t).astype(scores.dtype)
    attn = softmax_rows(scores)
    out = matmul(attn, v).transpose(0, 2, 1, 3).reshape(nw, t, c)
    return linear(out, p["proj.weight"], p["proj.bias"])


def shifted_window_attention(x: Tensor, p: Params, heads: int, n: int, shift: int) -> Tensor:
    """Window attention on an (H, W, C) plane after a cyclic shift of ``shift``.

    ``shift == 0`` is plain W-MSA.
    """
    h, w, _ = x.shape
    if h % n or w % n:
        raise ShapeError(f"plane {h}x{w} not divisible by window {n}")
    mask = None
    if shift:
        x = x.roll((-shift, -shift), (0, 1))
        mask = shift_attention_mask(h, w, n, shift)
    out = window_reverse(window_attention(window_partition(x, n), p, heads, mask), n, h, w)
    if shift:
        out = out.roll((shift, shift), (0, 1))
    return out


def mlp(x: Tensor, p: Params) -> Tensor:
    return linear(gelu(linear(x, p["fc1.weight"], p["fc1.bias"])), p["fc2.weight"], p["fc2.bias"])


# -- layers and blocks ----------------------------------------------------------


def swin_transformer_layer(x: SequenceFeatures, p: Params, heads: int, n: int,
                           shifted: bool, eps: float = 1e-5) -> SequenceFeatures:
    """Pre-norm transformer layer: x + MSA(LN(x)), then x + MLP(LN(x))."""
    tokens = x.tokens
    c = x.channels
    y = layer_norm(tokens, p["norm1.weight"], p["norm1.bias"], eps)
    y = y.reshape(x.height, x.width, c)
    shift = n // 2 if shifted else 0
    y = shifted_window_attention(y, _sub(p, "attn"), heads, n, shift)
    tokens = tokens + y.reshape(x.height * x.width, c)
    y = layer_norm(tokens, p["norm2.weight"], p["norm2.bias"], eps)
    tokens = tokens + mlp(y, _sub(p, "mlp"))
    return SequenceFeatures(tokens, x.height, x.width)


def layer_schedule(stl_count: int) -> list[bool]:
    """Shift flag per layer: W-MSA on even layers, SW-MSA on odd ones."""
    return [j % 2 == 1 for j in range(stl_count)]


def rstb_forward(x: SequenceFeatures, p: Params, heads: int, n: int, stl_count: int,
                 residual: bool = True, eps: float = 1e-5) -> SequenceFeatures:
    """A chain of ``stl_count`` layers, plus the block input when ``residual``."""
    y = x
    for j, shifted in enumerate(layer_schedule(stl_count)):
        y = swin_transformer_layer(y, _sub(p, f"layers.{j}"), heads, n, shifted, eps)
    if residual:
        return SequenceFeatures(y.tokens + x.tokens, x.height, x.width)
    return y


def positional_encode(image: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Per-pixel 1 -> C linear lift of an (H, W) plane to (H, W, C)."""
    h, w = image.shape
    return linear(image.reshape(h, w, 1), weight, bias)


def encode(image, config: ModelConfig, params: Params) -> SequenceFeatures:
    """Positional encoding followed by ``config.rstb_count`` residual Swin blocks."""
    if not isinstance(image, Tensor):
        image = Tensor(np.asarray(image, dtype=params["pos_embed.weight"].dtype))
    if image.shape != (config.tile, config.tile):
        raise ShapeError(f"image {image.shape} does not match tile "
                         f"{config.tile}x{config.tile}")
    feats = SequenceFeatures.from_plane(
        positional_encode(image, params["pos_embed.weight"], params["pos_embed.bias"]))
    for i, heads in enumerate(config.heads):
        feats = rstb_forward(feats, _sub(params, f"blocks.{i}"), heads, config.window_size,
                             config.stl_count, config.residual, config.eps)
    return feats
