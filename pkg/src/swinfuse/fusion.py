"""Parameter-free L1-norm activity fusion of two token matrices.

Each token (row) and each channel (column) gets a two-way softmax weight from
the L1 norms of the infrared and visible features; the row-fused and
column-fused matrices are added.
"""

from __future__ import annotations

import enum

import numpy as np

from .encoder import SequenceFeatures
from .tensor import ShapeError, Tensor


class FusionMode(str, enum.Enum):
    ROW_ONLY = "row_only"
    COL_ONLY = "col_only"
    ROW_PLUS_COL = "row_plus_col"

    @classmethod
    def parse(cls, value) -> FusionMode:
        if isinstance(value, cls):
            return value
        aliases = {"row": cls.ROW_ONLY, "col": cls.COL_ONLY, "both": cls.ROW_PLUS_COL}
        if value in aliases:
            return aliases[value]
        return cls(value)


def _matrix(x) -> np.ndarray:
    if isinstance(x, SequenceFeatures):
        x = x.tokens
    if isinstance(x, Tensor):
        x = x.data
    x = np.asarray(x)
    if x.ndim != 2:
        raise ShapeError(f"expected a (tokens, channels) matrix, got shape {x.shape}")
    return x


def two_way_softmax(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """exp(a)/(exp(a)+exp(b)) and its complement, shifted by max(a, b)."""
    m = np.maximum(a, b)
    ea, eb = np.exp(a - m), np.exp(b - m)
    total = ea + eb
    return ea / total, eb / total


def _activity(ir, vis, axis: int):
    ir, vis = _matrix(ir), _matrix(vis)
    if ir.shape != vis.shape:
        raise ShapeError(f"feature shapes differ: {ir.shape} vs {vis.shape}")
    return two_way_softmax(np.abs(ir).sum(axis=axis), np.abs(vis).sum(axis=axis))


def row_activity(ir, vis) -> tuple[np.ndarray, np.ndarray]:
    """Per-token weights (length M*N) from row L1 norms."""
    return _activity(ir, vis, axis=1)


def col_activity(ir, vis) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel weights (length C) from column L1 norms."""
    return _activity(ir, vis, axis=0)


def fuse_matrices(ir: np.ndarray, vis: np.ndarray,
                  mode: FusionMode | str = FusionMode.ROW_PLUS_COL) -> np.ndarray:
    mode = FusionMode.parse(mode)
    ir, vis = _matrix(ir), _matrix(vis)
    out = None
    if mode in (FusionMode.ROW_ONLY, FusionMode.ROW_PLUS_COL):
        w_ir, w_vis = row_activity(ir, vis)
        out = ir * w_ir[:, None] + vis * w_vis[:, None]
    if mode in (FusionMode.COL_ONLY, FusionMode.ROW_PLUS_COL):
        w_ir, w_vis = col_activity(ir, vis)
        col = ir * w_ir[None, :] + vis * w_vis[None, :]
        out = col if out is None else out + col
    return out


def fuse_features(ir: SequenceFeatures, vis: SequenceFeatures,
                  mode: FusionMode | str = FusionMode.ROW_PLUS_COL) -> SequenceFeatures:
    """Fuse two encoded tiles. Inference only: the result carries no gradient."""
    if (ir.height, ir.width) != (vis.height, vis.width):
        raise ShapeError(f"grids differ: {ir.height}x{ir.width} vs {vis.height}x{vis.width}")
    fused = fuse_matrices(ir.tokens.data, vis.tokens.data, mode)
    return SequenceFeatures(Tensor(fused), ir.height, ir.width)
