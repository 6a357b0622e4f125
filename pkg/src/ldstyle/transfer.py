"""The generator: two style-attention blocks at relu4_1/relu5_1, the
multi-scale fusion convolution, and a decoder mirroring VGG back to RGB.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoder import CONTENT_LAYERS, Encoder, extract_features, image_to_tensor, tensor_to_image
from .errors import DimensionError
from .imaging import Image

MODEL_SCHEMA_VERSION = 1

_NORM_EPS = 1e-5


def _mean_var_norm(x: torch.Tensor) -> torch.Tensor:
    """Per-sample, per-channel normalization over spatial positions."""
    mean = x.mean(dim=(2, 3), keepdim=True)
    var = x.var(dim=(2, 3), keepdim=True, unbiased=False)
    return (x - mean) / torch.sqrt(var + _NORM_EPS)


class SanetBlock(nn.Module):
    """Style attention at one encoder scale.

    f/g embed the normalized content/style features, h embeds the raw
    style features; out_conv is the 1x1 convolution applied before the
    residual sum with the content features.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.f = nn.Conv2d(channels, channels, 1)
        self.g = nn.Conv2d(channels, channels, 1)
        self.h = nn.Conv2d(channels, channels, 1)
        self.out_conv = nn.Conv2d(channels, channels, 1)


def sanet_forward(block: SanetBlock, f_c: torch.Tensor, f_s: torch.Tensor) -> torch.Tensor:
    """Attention output: every content position aggregates style values
    weighted by softmax similarity between normalized features.

    Returns a tensor with f_c's spatial size; style spatial size may differ.
    """
    if f_c.shape[1] != f_s.shape[1]:
        raise DimensionError(
            f"channel mismatch: content {f_c.shape[1]} vs style {f_s.shape[1]}")
    b, c, hc, wc = f_c.shape
    hs, ws = f_s.shape[2], f_s.shape[3]

    query = block.f(_mean_var_norm(f_c)).flatten(2)          # (B, C, Nc)
    key = block.g(_mean_var_norm(f_s)).flatten(2)            # (B, C, Ns)
    value = block.h(f_s).flatten(2)                          # (B, C, Ns)

    scores = torch.bmm(query.transpose(1, 2), key)           # (B, Nc, Ns)
    attention = F.softmax(scores, dim=-1)
    out = torch.bmm(value, attention.transpose(1, 2))        # (B, C, Nc)
    return out.view(b, c, hc, wc)


def attention_weights(block: SanetBlock, f_c: torch.Tensor, f_s: torch.Tensor) -> torch.Tensor:
    """The (B, Nc, Ns) attention matrix; rows sum to 1."""
    query = block.f(_mean_var_norm(f_c)).flatten(2)
    key = block.g(_mean_var_norm(f_s)).flatten(2)
    return F.softmax(torch.bmm(query.transpose(1, 2), key), dim=-1)


def fuse_residual(block: SanetBlock, f_c: torch.Tensor, f_cs: torch.Tensor) -> torch.Tensor:
    """Content features plus the 1x1-convolved attention output."""
    if f_c.shape != f_cs.shape:
        raise DimensionError(f"shape mismatch: {tuple(f_c.shape)} vs {tuple(f_cs.shape)}")
    return f_c + block.out_conv(f_cs)


class Decoder(nn.Module):
    """Mirror of VGG from relu4_1 back to RGB: 3x3 reflect-padded convs
    with nearest-neighbor x2 upsampling where the encoder pooled."""

    def __init__(self):
        super().__init__()
        def conv(cin, cout):
            return [nn.ReflectionPad2d(1), nn.Conv2d(cin, cout, 3)]

        layers = []
        layers += conv(512, 256) + [nn.ReLU(), nn.Upsample(scale_factor=2, mode="nearest")]
        layers += conv(256, 256) + [nn.ReLU()]
        layers += conv(256, 256) + [nn.ReLU()]
        layers += conv(256, 256) + [nn.ReLU()]
        layers += conv(256, 128) + [nn.ReLU(), nn.Upsample(scale_factor=2, mode="nearest")]
        layers += conv(128, 128) + [nn.ReLU()]
        layers += conv(128, 64) + [nn.ReLU(), nn.Upsample(scale_factor=2, mode="nearest")]
        layers += conv(64, 64) + [nn.ReLU()]
        layers += conv(64, 3)
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class TransferModel(nn.Module):
    """Trainable parts of the generator. The encoder stays outside and frozen."""

    def __init__(self, version: int = MODEL_SCHEMA_VERSION):
        super().__init__()
        self.version = version
        self.sanet_4 = SanetBlock(512)
        self.sanet_5 = SanetBlock(512)
        self.fusion_pad = nn.ReflectionPad2d(1)
        self.fusion_conv = nn.Conv2d(512, 512, 3)
        self.decoder = Decoder()


def init_transfer_model(seed: int = 0) -> TransferModel:
    """Uniform fan-in initialization from a seeded generator, so training
    runs are reproducible. The decoder's final bias starts at 0.5 to keep
    initial outputs away from the [0, 1] clamp."""
    gen = torch.Generator().manual_seed(seed)
    model = TransferModel()
    convs = [m for m in model.modules() if isinstance(m, nn.Conv2d)]
    with torch.no_grad():
        for conv in convs:
            fan_in = conv.weight.shape[1] * conv.weight.shape[2] * conv.weight.shape[3]
            bound = 1.0 / float(np.sqrt(fan_in))
            conv.weight.uniform_(-bound, bound, generator=gen)
            conv.bias.uniform_(-bound, bound, generator=gen)
        final = model.decoder.net[-1]
        final.bias.fill_(0.5)
    return model


def fuse_multiscale(model: TransferModel, f4: torch.Tensor, f5: torch.Tensor) -> torch.Tensor:
    """3x3 convolution of the relu4_1-scale sum of both attention branches;
    the relu5_1 branch is upsampled (nearest) to relu4_1 resolution first."""
    f5_up = F.interpolate(f5, size=f4.shape[-2:], mode="nearest")
    return model.fusion_conv(model.fusion_pad(f4 + f5_up))


def fused_features(model: TransferModel, content_feats, style_feats) -> torch.Tensor:
    """Full feature path: attention at both scales, residual sums, fusion.

    `content_feats` / `style_feats` are FeatureBundles (or dicts) holding
    relu4_1 and relu5_1.
    """
    fc4, fc5 = content_feats["relu4_1"], content_feats["relu5_1"]
    fs4, fs5 = style_feats["relu4_1"], style_feats["relu5_1"]
    a4 = sanet_forward(model.sanet_4, fc4, fs4)
    a5 = sanet_forward(model.sanet_5, fc5, fs5)
    r4 = fuse_residual(model.sanet_4, fc4, a4)
    r5 = fuse_residual(model.sanet_5, fc5, a5)
    return fuse_multiscale(model, r4, r5)


def decode(model: TransferModel, fused: torch.Tensor) -> torch.Tensor:
    """Decode a 512-channel fused feature map to an RGB tensor in [0, 1]."""
    if fused.dim() != 4 or fused.shape[1] != 512:
        raise DimensionError(
            f"decoder expects (B, 512, h, w) input, got {tuple(fused.shape)}")
    return model.decoder(fused).clamp(0.0, 1.0)


def stylize_tensor(model: TransferModel, enc: Encoder,
                   content: torch.Tensor, style: torch.Tensor) -> torch.Tensor:
    """Batched stylization; output matches the content tensor's spatial size."""
    h, w = content.shape[-2:]
    f_c = extract_features(enc, content, CONTENT_LAYERS)
    f_s = extract_features(enc, style, CONTENT_LAYERS)
    out = decode(model, fused_features(model, f_c, f_s))
    return out[:, :, :h, :w]


def stylize(model: TransferModel, enc: Encoder, content: Image, style: Image) -> Image:
    """End-to-end single-image stylization."""
    with torch.no_grad():
        out = stylize_tensor(model, enc, image_to_tensor(content), image_to_tensor(style))
    return tensor_to_image(out)
