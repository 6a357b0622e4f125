"""Pluggable monocular depth estimation.

Two backends share one contract: a differentiable `depth_tensor` mapping
(B, 3, H, W) images in [0, 1] to (B, 1, H, W) maps min-max normalized to
[0, 1] per sample. The analytic stub needs no files and exists so the
depth term stays testable and trainable everywhere; the pretrained
backend loads a ResNet18-encoder disparity network from a named-tensor
archive.
"""

from __future__ import annotations

import os

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import archive
from .errors import ArgumentError, BackendUnavailableError, CheckpointFormatError
from .imaging import GrayMap, Image

_LUMA = (0.299, 0.587, 0.114)
_STUB_WINDOW = 15


def _minmax_per_sample(d: torch.Tensor) -> torch.Tensor:
    """Min-max normalize each (1, H, W) map to [0, 1]; a constant map
    becomes all zeros (depth is scale-ambiguous, so only relative values
    can carry meaning)."""
    flat = d.flatten(1)
    lo = flat.min(dim=1).values.view(-1, 1, 1, 1)
    hi = flat.max(dim=1).values.view(-1, 1, 1, 1)
    span = hi - lo
    safe = torch.where(span > 0, span, torch.ones_like(span))
    out = (d - lo) / safe
    return torch.where(span > 0, out, torch.zeros_like(out))


class StubDepthBackend:
    """Deterministic analytic proxy: inverted box-blurred luminance.

    Fully differentiable, so gradient checks and stub-only training work.
    """

    kind = "analytic_stub"

    def depth_tensor(self, x: torch.Tensor) -> torch.Tensor:
        r, g, b = _LUMA
        lum = r * x[:, 0:1] + g * x[:, 1:2] + b * x[:, 2:3]
        k = _STUB_WINDOW
        ones = torch.ones(1, 1, k, k, dtype=lum.dtype, device=lum.device)
        pad = (k - 1) // 2
        # Zero padding with per-pixel window-overlap normalization gives a
        # true local mean at every size, including images smaller than k.
        num = F.conv2d(lum, ones, padding=pad)
        den = F.conv2d(torch.ones_like(lum), ones, padding=pad)
        blurred = num / den
        return _minmax_per_sample(1.0 - blurred)


class DepthDecoder(nn.Module):
    """Disparity decoder over ResNet18 skip features (scale-0 output only)."""

    def __init__(self, enc_channels=(64, 64, 128, 256, 512)):
        super().__init__()
        dec_channels = (16, 32, 64, 128, 256)
        self.upconvs0 = nn.ModuleList()
        self.upconvs1 = nn.ModuleList()
        for i in range(4, -1, -1):
            cin = enc_channels[-1] if i == 4 else dec_channels[i + 1]
            self.upconvs0.append(self._block(cin, dec_channels[i]))
            skip = enc_channels[i - 1] if i > 0 else 0
            self.upconvs1.append(self._block(dec_channels[i] + skip, dec_channels[i]))
        self.disp_conv = nn.Sequential(
            nn.ReflectionPad2d(1), nn.Conv2d(dec_channels[0], 1, 3), nn.Sigmoid())

    @staticmethod
    def _block(cin, cout):
        return nn.Sequential(nn.ReflectionPad2d(1), nn.Conv2d(cin, cout, 3), nn.ELU())

    def forward(self, feats):
        x = feats[-1]
        for idx, i in enumerate(range(4, -1, -1)):
            x = self.upconvs0[idx](x)
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            if i > 0:
                x = torch.cat([x, feats[i - 1]], dim=1)
            x = self.upconvs1[idx](x)
        return self.disp_conv(x)


class MonodepthNet(nn.Module):
    """ResNet18 encoder + disparity decoder, the standard self-supervised
    monocular layout. Inference only; never trained here."""

    def __init__(self):
        super().__init__()
        from torchvision.models import resnet18

        self.encoder = resnet18(weights=None)
        self.decoder = DepthDecoder()

    def forward(self, x):
        e = self.encoder
        feats = []
        x = e.relu(e.bn1(e.conv1(x)))
        feats.append(x)
        x = e.layer1(e.maxpool(x))
        feats.append(x)
        for layer in (e.layer2, e.layer3, e.layer4):
            x = layer(x)
            feats.append(x)
        return self.decoder(feats)


class MonodepthBackend:
    """Pretrained monocular depth from a named-tensor archive.

    The archive holds the network state dict plus `feed_height` /
    `feed_width` in its config block; inputs are resized to that feed
    resolution and the disparity is bilinearly restored.
    """

    kind = "pretrained_monodepth"

    def __init__(self, weights_path):
        self.weights_path = os.fspath(weights_path)
        if not os.path.exists(self.weights_path):
            raise BackendUnavailableError(
                f"depth model weights not found at {self.weights_path}")
        arrays, config_text = archive.load_archive(self.weights_path)
        config = archive.parse_config_text(config_text)
        self.feed_height = int(config.get("feed_height", 192))
        self.feed_width = int(config.get("feed_width", 640))
        self.net = MonodepthNet()
        state = self.net.state_dict()
        for name, param in state.items():
            if name not in arrays:
                raise CheckpointFormatError(
                    f"{self.weights_path}: depth archive is missing {name!r}")
            arr = arrays[name]
            if tuple(arr.shape) != tuple(param.shape):
                raise CheckpointFormatError(
                    f"{self.weights_path}: {name} has shape {tuple(arr.shape)}, "
                    f"expected {tuple(param.shape)}")
        self.net.load_state_dict(
            {k: torch.from_numpy(v.copy()) for k, v in arrays.items()})
        self.net.eval()
        for p in self.net.parameters():
            p.requires_grad_(False)

    def depth_tensor(self, x: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[-2:]
        feed = F.interpolate(x, size=(self.feed_height, self.feed_width),
                             mode="bilinear", align_corners=False)
        disp = self.net(feed)
        disp = F.interpolate(disp, size=(h, w), mode="bilinear", align_corners=False)
        return _minmax_per_sample(disp)


def save_monodepth_archive(net: MonodepthNet, path, feed_height=192, feed_width=640):
    """Serialize a depth network into the archive format (used by the
    weight conversion script and by tests)."""
    arrays = {k: v.detach().cpu().numpy() for k, v in net.state_dict().items()}
    text = archive.format_config_text({
        "kind": "monodepth", "feed_height": feed_height, "feed_width": feed_width})
    archive.save_archive(path, arrays, config_text=text)


def make_depth_backend(kind: str, weights_path=None):
    if kind == "stub":
        return StubDepthBackend()
    if kind == "monodepth":
        if weights_path is None:
            raise BackendUnavailableError(
                "monodepth backend needs --depth-weights (or LDSTYLE_WEIGHTS_DIR)")
        return MonodepthBackend(weights_path)
    raise ArgumentError(f"unknown depth backend {kind!r} (expected stub or monodepth)")


def estimate_depth(backend, img: Image) -> GrayMap:
    """Depth map of an Image via the given backend: same H x W, values in [0, 1]."""
    from .encoder import image_to_tensor

    with torch.no_grad():
        d = backend.depth_tensor(image_to_tensor(img))
    vals = d.squeeze(0).squeeze(0).numpy().astype(np.float64)
    return GrayMap(vals, "depth", metadata={"backend": backend.kind})
