"""Seg-state to mask decoding.

The seg hidden state is projected into the pixel-feature width; its dot
product with each raw pixel-encoder token (plus a scalar bias) gives a
per-patch logit, squashed by a sigmoid and nearest-neighbor upsampled to
the requested pixel dimensions.
"""

from __future__ import annotations

import numpy as np

from . import layers
from .sefe import FeatureGrid
from .store import ParamStore
from .tensor import (Tensor, ShapeError, add, matmul, repeat_nn, reshape,
                     sigmoid, transpose)


def init_pixel_decoder(store: ParamStore, cfg, rng: np.random.Generator) -> None:
    layers.init_linear(store, "segproj", cfg.d_model, cfg.d_pix, rng)
    store.add("segproj.bias", Tensor(0.0))


def decode_mask(seg_hidden: Tensor, pixel_feats: FeatureGrid,
                out_dims: tuple[int, int], store: ParamStore) -> Tensor:
    """-> H x W map of foreground probabilities (a Tensor, differentiable).

    pixel_feats must be the raw pixel-encoder output for the source image,
    carrying its patch grid; out_dims must be integer multiples of it.
    """
    if pixel_feats.grid is None:
        raise ShapeError("decode_mask: pixel features carry no patch grid")
    gh, gw = pixel_feats.grid
    h, w = out_dims
    if h % gh or w % gw:
        raise ShapeError(
            f"decode_mask: output {out_dims} not a multiple of grid {(gh, gw)}")
    if seg_hidden.shape != (store["segproj.w"].shape[0],):
        raise ShapeError(
            f"decode_mask: seg hidden {seg_hidden.shape}, projector expects "
            f"({store['segproj.w'].shape[0]},)")
    query = layers.linear(reshape(seg_hidden, (1, -1)), store, "segproj")
    patch_logits = matmul(query, transpose(pixel_feats.values))  # 1 x T
    patch_logits = add(patch_logits, store["segproj.bias"])
    probs = sigmoid(reshape(patch_logits, (gh, gw)))
    return repeat_nn(probs, h // gh, w // gw)


def binarize(mask_map, threshold: float = 0.5) -> np.ndarray:
    """Strictly-greater thresholding -> H x W booleans."""
    values = mask_map.data if isinstance(mask_map, Tensor) else np.asarray(mask_map)
    return values > threshold
