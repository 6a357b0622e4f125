"""Training objective: content, style, Laplacian and depth losses plus
their weighted total.

Every term is differentiable with respect to the stylized image; image
arguments may be Images, HxWx3 arrays, or (B, 3, H, W) tensors (tensors
keep their autograd graph).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .encoder import CONTENT_LAYERS, STYLE_LAYERS, FeatureBundle
from .errors import ArgumentError, DimensionError
from .imaging import Image, LAPLACIAN_KERNEL

_SIGMA_EPS = 1e-6


@dataclass(frozen=True)
class LossWeights:
    """The four scalars weighting content, style, Laplacian and depth terms."""

    lambda_c: float = 1.0
    lambda_s: float = 3.0
    lambda_lap: float = 0.1
    lambda_depth: float = 20.0

    def __post_init__(self):
        for name in ("lambda_c", "lambda_s", "lambda_lap", "lambda_depth"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ArgumentError(f"{name} must be finite and >= 0, got {v}")


@dataclass
class LossBreakdown:
    """Component losses and their weighted total. Values are 0-d tensors
    while a graph is attached; `detached()` gives plain floats."""

    content: torch.Tensor
    style: torch.Tensor
    lap: torch.Tensor
    depth: torch.Tensor
    total: torch.Tensor

    def detached(self) -> dict[str, float]:
        out = {}
        for k in ("content", "style", "lap", "depth", "total"):
            v = getattr(self, k)
            out[k] = float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
        return out


def _as_image_tensor(x) -> torch.Tensor:
    """Coerce Image / HxWx3 array / (3,H,W) / (B,3,H,W) tensor to (B,3,H,W)."""
    if isinstance(x, Image):
        x = x.pixels
    if isinstance(x, np.ndarray):
        if x.ndim == 3 and x.shape[2] == 3:
            x = torch.from_numpy(np.ascontiguousarray(x, dtype=np.float32)).permute(2, 0, 1)
        else:
            x = torch.from_numpy(np.ascontiguousarray(x, dtype=np.float32))
    if not isinstance(x, torch.Tensor):
        raise ArgumentError(f"cannot interpret {type(x).__name__} as an image")
    if x.dim() == 3:
        x = x.unsqueeze(0)
    if x.dim() != 4 or x.shape[1] != 3:
        raise DimensionError(f"expected (B, 3, H, W) image tensor, got {tuple(x.shape)}")
    return x


def _require_layers(bundle, layers, op: str):
    for l in layers:
        if l not in bundle:
            raise ArgumentError(f"{op}: feature bundle is missing layer {l!r}")


def content_loss(f_stylized: FeatureBundle, f_c: FeatureBundle) -> torch.Tensor:
    """Sum over relu4_1/relu5_1 of element-count-normalized squared distance."""
    _require_layers(f_stylized, CONTENT_LAYERS, "content_loss")
    _require_layers(f_c, CONTENT_LAYERS, "content_loss")
    total = 0.0
    for layer in CONTENT_LAYERS:
        total = total + F.mse_loss(f_stylized[layer], f_c[layer])
    return total


def _channel_stats(x: torch.Tensor):
    mu = x.mean(dim=(2, 3))
    sigma = torch.sqrt(x.var(dim=(2, 3), unbiased=False) + _SIGMA_EPS)
    return mu, sigma


def style_loss(f_stylized: FeatureBundle, f_s: FeatureBundle) -> torch.Tensor:
    """Per layer: Euclidean distance between channelwise spatial means plus
    the same between standard deviations, equal weight across the four
    style layers, averaged over the batch."""
    _require_layers(f_stylized, STYLE_LAYERS, "style_loss")
    _require_layers(f_s, STYLE_LAYERS, "style_loss")
    total = 0.0
    for layer in STYLE_LAYERS:
        mu_a, sig_a = _channel_stats(f_stylized[layer])
        mu_b, sig_b = _channel_stats(f_s[layer])
        total = total + (mu_a - mu_b).norm(dim=1).mean() + (sig_a - sig_b).norm(dim=1).mean()
    return total


def _laplacian_conv(x: torch.Tensor) -> torch.Tensor:
    """Per-channel same-size convolution with the Laplacian kernel;
    edge-replicated borders so constants map to exactly zero (matches
    imaging.laplacian_matrix)."""
    k = torch.as_tensor(LAPLACIAN_KERNEL, dtype=x.dtype, device=x.device)
    weight = k.view(1, 1, 3, 3).repeat(x.shape[1], 1, 1, 1)
    padded = F.pad(x, (1, 1, 1, 1), mode="replicate")
    return F.conv2d(padded, weight, groups=x.shape[1])


def laplacian_loss(i_cs, i_c) -> torch.Tensor:
    """Squared difference of the per-channel Laplacians, summed over the
    three channels and all pixels, then divided by 3*H*W so the weight is
    resolution-independent."""
    a = _as_image_tensor(i_cs)
    b = _as_image_tensor(i_c)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    diff = _laplacian_conv(a) - _laplacian_conv(b)
    return diff.pow(2).mean(dim=(1, 2, 3)).mean()


def depth_loss(i_cs, i_c, backend) -> torch.Tensor:
    """Element-count-normalized squared distance between the two depth maps."""
    a = _as_image_tensor(i_cs)
    b = _as_image_tensor(i_c)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return F.mse_loss(backend.depth_tensor(a), backend.depth_tensor(b))


def total_loss(i_cs, i_c, f_stylized: FeatureBundle, f_c: FeatureBundle,
               f_s: FeatureBundle, weights: LossWeights, depth_backend) -> LossBreakdown:
    """All four components and their weighted sum, in one breakdown."""
    c = content_loss(f_stylized, f_c)
    s = style_loss(f_stylized, f_s)
    lap = laplacian_loss(i_cs, i_c)
    d = depth_loss(i_cs, i_c, depth_backend)
    total = (weights.lambda_c * c + weights.lambda_s * s
             + weights.lambda_lap * lap + weights.lambda_depth * d)
    if not isinstance(total, torch.Tensor):
        total = torch.as_tensor(total)
    return LossBreakdown(content=c, style=s, lap=lap, depth=d, total=total)
