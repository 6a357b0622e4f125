"""Runtime controls over a trained model: content-style trade-off,
multi-style interpolation, and spatial control via region masks.

Everything here blends at the fused feature stage (the tensor fed to the
decoder), so the decoder sees convex combinations of features it was
trained on. No retraining is involved.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .encoder import CONTENT_LAYERS, extract_features, image_to_tensor, tensor_to_image
from .errors import ArgumentError, DimensionError
from .imaging import Image
from .transfer import TransferModel, decode, fused_features

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class InterpolationParams:
    """Content-style trade-off weight; 0 reconstructs content, 1 is the
    fully stylized output."""

    alpha: float

    def clamped(self) -> float:
        if not (0.0 <= self.alpha <= 1.0):
            clipped = min(max(self.alpha, 0.0), 1.0)
            log.warning("alpha %.4g outside [0, 1]; clamping to %.4g", self.alpha, clipped)
            return clipped
        return float(self.alpha)


@dataclass
class StyleMix:
    """Styles with nonnegative blend weights; weights are normalized to
    sum to 1 at use time."""

    styles: list
    weights: list

    def normalized_weights(self) -> list[float]:
        if len(self.styles) != len(self.weights):
            raise ArgumentError(
                f"{len(self.styles)} styles but {len(self.weights)} weights")
        if not self.styles:
            raise ArgumentError("style mix needs at least one style")
        w = np.asarray(self.weights, dtype=np.float64)
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ArgumentError("style weights must be finite and >= 0")
        s = w.sum()
        if s <= 0:
            raise ArgumentError("style weights must not all be zero")
        return [float(v) for v in (w / s)]


@dataclass
class RegionMask:
    """Spatial mask in [0, 1] at content resolution. 1 means fully styled
    by the region's style."""

    mask: np.ndarray
    style_index: int = 0

    def __post_init__(self):
        if self.mask.ndim != 2:
            raise DimensionError(f"mask must be 2-D, got shape {self.mask.shape}")


def _content_features(enc, content: Image):
    return extract_features(enc, image_to_tensor(content), CONTENT_LAYERS)


def blended_features(model: TransferModel, enc, content: Image, style: Image,
                     alpha: float) -> torch.Tensor:
    """Decoder input for the trade-off: (1 - alpha) * reconstruction
    features + alpha * stylized features. The endpoints skip the unused
    branch so they are bit-equal to the plain paths."""
    alpha = InterpolationParams(alpha).clamped()
    f_c = _content_features(enc, content)
    if alpha == 1.0:
        f_s = extract_features(enc, image_to_tensor(style), CONTENT_LAYERS)
        return fused_features(model, f_c, f_s)
    if alpha == 0.0:
        return fused_features(model, f_c, f_c)
    f_s = extract_features(enc, image_to_tensor(style), CONTENT_LAYERS)
    f_cs = fused_features(model, f_c, f_s)
    f_cc = fused_features(model, f_c, f_c)
    return (1.0 - alpha) * f_cc + alpha * f_cs


def stylize_with_alpha(model: TransferModel, enc, content: Image, style: Image,
                       alpha: float) -> Image:
    """Stylize with the content-style trade-off applied at the feature stage."""
    with torch.no_grad():
        fused = blended_features(model, enc, content, style, alpha)
        out = decode(model, fused)[:, :, :content.height, :content.width]
    return tensor_to_image(out)


def mixed_features(model: TransferModel, enc, content: Image, mix: StyleMix) -> torch.Tensor:
    """Decoder input for a convex combination of per-style fused features."""
    weights = mix.normalized_weights()
    f_c = _content_features(enc, content)
    fused = None
    for style, w in zip(mix.styles, weights):
        f_s = extract_features(enc, image_to_tensor(style), CONTENT_LAYERS)
        term = w * fused_features(model, f_c, f_s)
        fused = term if fused is None else fused + term
    return fused


def stylize_multi(model: TransferModel, enc, content: Image, mix: StyleMix) -> Image:
    """Stylize with several styles blended by weight."""
    with torch.no_grad():
        fused = mixed_features(model, enc, content, mix)
        out = decode(model, fused)[:, :, :content.height, :content.width]
    return tensor_to_image(out)


def downsample_mask(mask: np.ndarray, feature_hw: tuple[int, int],
                    content_hw: tuple[int, int], pad: tuple[int, int]) -> torch.Tensor:
    """Area-average a content-resolution mask down to feature resolution.

    Any bottom/right padding the encoder applied counts as uncovered
    (zero), matching how padded image rows are cropped away after decode.
    """
    if mask.shape != content_hw:
        raise DimensionError(
            f"mask shape {mask.shape} does not match content {content_hw}")
    t = torch.from_numpy(np.ascontiguousarray(mask, dtype=np.float32))
    t = t.unsqueeze(0).unsqueeze(0)
    if pad != (0, 0):
        t = F.pad(t, (0, pad[1], 0, pad[0]), mode="constant", value=0.0)
    return F.adaptive_avg_pool2d(t, feature_hw)


def spatial_features(model: TransferModel, enc, content: Image,
                     regions) -> torch.Tensor:
    """Decoder input composed per region: each mask selects its style's
    fused features; uncovered area falls back to content reconstruction."""
    if not regions:
        raise ArgumentError("spatial control needs at least one (mask, style) region")
    f_c = _content_features(enc, content)
    f_cc = fused_features(model, f_c, f_c)
    feature_hw = tuple(f_cc.shape[-2:])
    content_hw = (content.height, content.width)

    fused = torch.zeros_like(f_cc)
    coverage = torch.zeros(1, 1, *feature_hw)
    for region, style in regions:
        m = downsample_mask(region.mask, feature_hw, content_hw, f_c.pad)
        f_s = extract_features(enc, image_to_tensor(style), CONTENT_LAYERS)
        fused = fused + m * fused_features(model, f_c, f_s)
        coverage = coverage + m
    residual = (1.0 - coverage).clamp(min=0.0)
    return fused + residual * f_cc


def stylize_spatial(model: TransferModel, enc, content: Image, regions) -> Image:
    """Stylize with per-region styles given (RegionMask, Image) pairs."""
    with torch.no_grad():
        fused = spatial_features(model, enc, content, regions)
        out = decode(model, fused)[:, :, :content.height, :content.width]
    return tensor_to_image(out)
