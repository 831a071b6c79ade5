"""Tile-based inference on arbitrary-size registered image pairs."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .config import ModelConfig
from .encoder import SequenceFeatures, encode, init_params, param_shapes
from .fusion import FusionMode, fuse_features
from .tensor import ShapeError, Tensor, linear, no_grad
from .weights import WeightStore

log = logging.getLogger(__name__)

LUMA = np.array([0.299, 0.587, 0.114])


class ImageIOError(OSError):
    pass


# -- image I/O ------------------------------------------------------------------


def check_plane(plane: np.ndarray) -> np.ndarray:
    plane = np.asarray(plane)
    if plane.ndim != 2 or plane.size == 0:
        raise ShapeError(f"expected a non-empty 2-D image plane, got shape {plane.shape}")
    if plane.min() < -1.0 or plane.max() > 1.0:
        raise ValueError("image plane values must lie in [-1, 1]")
    return plane


def to_unit_range(pixels: np.ndarray) -> np.ndarray:
    """8-bit values in [0, 255] -> [-1, 1]."""
    return (2.0 * np.asarray(pixels, dtype=np.float64) / 255.0 - 1.0).astype(np.float32)


def to_255(plane: np.ndarray) -> np.ndarray:
    """[-1, 1] -> [0, 255] (unquantised, float64)."""
    return (np.asarray(plane, dtype=np.float64) + 1.0) * 127.5


def read_pixels(path) -> np.ndarray:
    """Luminance of an 8-bit grey/colour image as float64 in [0, 255]."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            img.load()
            if img.mode in ("1", "LA"):
                img = img.convert("L")
            elif img.mode in ("P", "PA", "RGBA", "RGBX"):
                img = img.convert("RGB")
            if img.mode not in ("L", "RGB"):
                raise ImageIOError(f"{path}: unsupported image mode {img.mode!r}")
            arr = np.asarray(img, dtype=np.float64)
    except ImageIOError:
        raise
    except (OSError, UnidentifiedImageError) as exc:
        raise ImageIOError(f"{path}: cannot read image ({exc})") from exc
    if arr.ndim == 3:
        arr = arr @ LUMA
    return arr


def load_image(path) -> np.ndarray:
    """Read a PNG/PGM image as a float32 luminance plane in [-1, 1]."""
    return to_unit_range(read_pixels(path))


def quantize(plane: np.ndarray) -> np.ndarray:
    """Clamp to [-1, 1] and map to uint8 with round-half-up."""
    x = np.clip(np.asarray(plane, dtype=np.float64), -1.0, 1.0)
    return np.floor((x + 1.0) / 2.0 * 255.0 + 0.5).astype(np.uint8)


def save_image(plane: np.ndarray, path) -> None:
    """Write an 8-bit greyscale PNG or binary PGM (chosen by suffix)."""
    path = Path(path)
    fmt = "PPM" if path.suffix.lower() in (".pgm", ".pnm") else "PNG"
    try:
        Image.fromarray(quantize(plane), mode="L").save(path, format=fmt)
    except OSError as exc:
        raise ImageIOError(f"{path}: cannot write image ({exc})") from exc


# -- tiling ---------------------------------------------------------------------


@dataclass(frozen=True)
class TilePlan:
    side: int
    height: int
    width: int

    @property
    def rows(self) -> int:
        return -(-self.height // self.side)

    @property
    def cols(self) -> int:
        return -(-self.width // self.side)

    @property
    def padded_shape(self) -> tuple[int, int]:
        return self.rows * self.side, self.cols * self.side

    @property
    def origins(self) -> list[tuple[int, int]]:
        return [(r * self.side, c * self.side) for r in range(self.rows) for c in range(self.cols)]


def make_tiles(plane: np.ndarray, side: int = 224) -> tuple[TilePlan, list[np.ndarray]]:
    """Zero-pad to multiples of ``side`` and cut row-major non-overlapping tiles."""
    plane = np.asarray(plane)
    if plane.ndim != 2:
        raise ShapeError(f"expected a 2-D plane, got shape {plane.shape}")
    plan = TilePlan(side, *plane.shape)
    padded = np.zeros(plan.padded_shape, dtype=plane.dtype)
    padded[:plan.height, :plan.width] = plane
    tiles = [padded[r:r + side, c:c + side].copy() for r, c in plan.origins]
    return plan, tiles


def reassemble(plan: TilePlan, tiles) -> np.ndarray:
    """Place tiles back in plan order and crop to the original size."""
    tiles = list(tiles)
    if len(tiles) != len(plan.origins):
        raise ShapeError(f"plan expects {len(plan.origins)} tiles, got {len(tiles)}")
    out = np.zeros(plan.padded_shape, dtype=np.result_type(*tiles))
    for (r, c), tile in zip(plan.origins, tiles):
        if tile.shape != (plan.side, plan.side):
            raise ShapeError(f"tile shape {tile.shape} != {(plan.side, plan.side)}")
        out[r:r + plan.side, c:c + plan.side] = tile
    return out[:plan.height, :plan.width]


# -- reconstruction and model ---------------------------------------------------------


def reconstruct(fused: SequenceFeatures, weight: Tensor, bias: Tensor) -> Tensor:
    """Per-pixel C -> 1 linear map and tanh; returns an (H, W) plane."""
    if fused.channels != weight.shape[1]:
        raise ShapeError(f"features have {fused.channels} channels, "
                         f"reconstruction expects {weight.shape[1]}")
    out = linear(fused.tokens, weight, bias).tanh()
    return out.reshape(fused.height, fused.width)


class SwinFuse:
    """Config plus parameters; the shared encoder and the reconstruction head."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int = 0, dtype=np.float32) -> SwinFuse:
        return cls(config, init_params(config, seed, dtype))

    @classmethod
    def from_weights(cls, store: WeightStore, config: ModelConfig) -> SwinFuse:
        """Bind stored tensors to ``config``; names and shapes must match exactly."""
        expected = param_shapes(config)
        for name, shape in expected.items():
            if name not in store:
                raise ShapeError(f"weight file lacks tensor {name!r} required by the config")
            if store[name].shape != shape:
                raise ShapeError(f"tensor {name!r} has shape {store[name].shape}, "
                                 f"config expects {shape}")
        extra = [n for n in store.names() if n not in expected]
        if extra:
            raise ShapeError(f"weight file has tensor {extra[0]!r} not used by the config")
        return cls(config, {k: Tensor(store[k].copy(), requires_grad=True) for k in expected})

    def to_store(self) -> WeightStore:
        return WeightStore.from_params(self.params)

    def astype(self, dtype) -> SwinFuse:
        return SwinFuse(self.config, {k: Tensor(v.data.astype(dtype), requires_grad=True)
                                      for k, v in self.params.items()})

    @property
    def dtype(self):
        return self.params["pos_embed.weight"].dtype

    def encode(self, tile) -> SequenceFeatures:
        return encode(tile, self.config, self.params)

    def reconstruct(self, feats: SequenceFeatures) -> Tensor:
        return reconstruct(feats, self.params["recon.weight"], self.params["recon.bias"])

    def autoencode(self, tile) -> Tensor:
        """Training path: encode then reconstruct, with no fusion layer."""
        return self.reconstruct(self.encode(tile))

    def fuse_tile(self, ir: np.ndarray, vis: np.ndarray,
                  mode: FusionMode | str = FusionMode.ROW_PLUS_COL) -> np.ndarray:
        with no_grad():
            fused = fuse_features(self.encode(ir), self.encode(vis), mode)
            return self.reconstruct(fused).data


def fuse_image_pair(ir: np.ndarray, vis: np.ndarray, model: SwinFuse,
                    mode: FusionMode | str = FusionMode.ROW_PLUS_COL,
                    tile: int | None = None) -> np.ndarray:
    """Fuse a registered infrared/visible pair of any size.

    Both images are cut with one shared tile plan; each tile pair is encoded,
    fused and reconstructed independently, then the tiles are put back.
    """
    ir, vis = np.asarray(ir), np.asarray(vis)
    if ir.shape != vis.shape:
        raise ValueError(f"infrared {ir.shape} and visible {vis.shape} sizes differ")
    check_plane(ir)
    check_plane(vis)
    side = tile or model.config.tile
    if side != model.config.tile:
        model = SwinFuse(model.config.replace(tile=side), model.params)
    dtype = model.dtype
    plan, ir_tiles = make_tiles(ir.astype(dtype), side)
    _, vis_tiles = make_tiles(vis.astype(dtype), side)
    out = []
    for k, (a, b) in enumerate(zip(ir_tiles, vis_tiles)):
        log.debug("tile %d/%d", k + 1, len(ir_tiles))
        out.append(model.fuse_tile(a, b, mode))
    return reassemble(plan, out)
