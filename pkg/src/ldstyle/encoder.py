"""Frozen VGG-19 feature extractor.

Only the slice through relu5_1 is kept; the taps relu1_1 .. relu5_1 are
addressable by name. Weights come from a named-tensor archive (see
`scripts/fetch_vgg19.py` for converting the standard pretrained weights);
`random_encoder` builds a seeded random encoder for tests and desk-scale
runs that must not depend on downloaded files.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import archive
from .errors import ArgumentError, CheckpointFormatError
from .imaging import Image

# (name, out_channels, in_channels) for every conv through conv5_1, with
# "pool" markers where VGG-19 halves the resolution.
VGG19_CONVS = [
    ("conv1_1", 64, 3),
    ("conv1_2", 64, 64),
    ("pool1", None, None),
    ("conv2_1", 128, 64),
    ("conv2_2", 128, 128),
    ("pool2", None, None),
    ("conv3_1", 256, 128),
    ("conv3_2", 256, 256),
    ("conv3_3", 256, 256),
    ("conv3_4", 256, 256),
    ("pool3", None, None),
    ("conv4_1", 512, 256),
    ("conv4_2", 512, 512),
    ("conv4_3", 512, 512),
    ("conv4_4", 512, 512),
    ("pool4", None, None),
    ("conv5_1", 512, 512),
]

LAYER_NAMES = ("relu1_1", "relu2_1", "relu3_1", "relu4_1", "relu5_1")
CONTENT_LAYERS = ("relu4_1", "relu5_1")
STYLE_LAYERS = ("relu2_1", "relu3_1", "relu4_1", "relu5_1")

LAYER_CHANNELS = {"relu1_1": 64, "relu2_1": 128, "relu3_1": 256,
                  "relu4_1": 512, "relu5_1": 512}
LAYER_STRIDES = {"relu1_1": 1, "relu2_1": 2, "relu3_1": 4,
                 "relu4_1": 8, "relu5_1": 16}

# Standard pretrained-VGG input statistics; stored in the archive so the
# weights always travel with the normalization they were trained under.
DEFAULT_MEAN = (0.485, 0.456, 0.406)
DEFAULT_STD = (0.229, 0.224, 0.225)

PAD_MULTIPLE = 16


@dataclass
class FeatureBundle:
    """Named activation maps, each (B, C, H, W). `pad` records any
    bottom/right reflect padding applied to reach a multiple-of-16 input."""

    maps: dict[str, torch.Tensor]
    pad: tuple[int, int] = (0, 0)
    metadata: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.maps[name]

    def __contains__(self, name: str) -> bool:
        return name in self.maps

    def layers(self):
        return tuple(self.maps.keys())


class Encoder(nn.Module):
    """VGG-19 slice through relu5_1 with frozen parameters."""

    def __init__(self):
        super().__init__()
        convs = {}
        for name, out_c, in_c in VGG19_CONVS:
            if name.startswith("pool"):
                continue
            convs[name] = nn.Conv2d(in_c, out_c, kernel_size=3, padding=1)
        self.convs = nn.ModuleDict(convs)
        self.register_buffer("mean", torch.tensor(DEFAULT_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(DEFAULT_STD).view(1, 3, 1, 1))
        self.freeze()

    def freeze(self):
        for p in self.parameters():
            p.requires_grad_(False)
        return self

    def forward(self, x: torch.Tensor, layers) -> dict[str, torch.Tensor]:
        """Run through relu5_1 and return the requested taps.

        `x` is (B, 3, H, W) in [0, 1] with H, W multiples of 16.
        """
        wanted = set(layers)
        taps: dict[str, torch.Tensor] = {}
        deepest = max(LAYER_NAMES.index(l) + 1 for l in wanted)
        x = (x - self.mean) / self.std
        block = 1
        for name, _, _ in VGG19_CONVS:
            if name.startswith("pool"):
                x = F.max_pool2d(x, 2)
                block += 1
                continue
            x = F.relu(self.convs[name](x))
            if name.endswith("_1"):
                tap = f"relu{block}_1"
                if tap in wanted:
                    taps[tap] = x
                if block >= deepest:
                    break
        return taps


def _required_names() -> list[str]:
    names = []
    for name, _, _ in VGG19_CONVS:
        if not name.startswith("pool"):
            names.append(f"{name}.weight")
            names.append(f"{name}.bias")
    names.extend(["normalize.mean", "normalize.std"])
    return names


def save_encoder(enc: Encoder, path) -> None:
    arrays = {}
    for name, conv in enc.convs.items():
        arrays[f"{name}.weight"] = conv.weight.detach().numpy()
        arrays[f"{name}.bias"] = conv.bias.detach().numpy()
    arrays["normalize.mean"] = enc.mean.view(3).numpy()
    arrays["normalize.std"] = enc.std.view(3).numpy()
    archive.save_archive(path, arrays, config_text="kind = vgg19_encoder\n")


def load_encoder(weights_path) -> Encoder:
    """Load a frozen encoder from a named-tensor archive.

    Raises CheckpointFormatError naming the first missing or misshapen
    tensor. Loading twice yields bit-identical parameters.
    """
    arrays, _ = archive.load_archive(weights_path)
    for required in _required_names():
        if required not in arrays:
            raise CheckpointFormatError(
                f"{weights_path}: encoder archive is missing {required!r}")

    enc = Encoder()
    with torch.no_grad():
        for name, conv in enc.convs.items():
            w = arrays[f"{name}.weight"]
            b = arrays[f"{name}.bias"]
            if tuple(w.shape) != tuple(conv.weight.shape):
                raise CheckpointFormatError(
                    f"{weights_path}: {name}.weight has shape {tuple(w.shape)}, "
                    f"expected {tuple(conv.weight.shape)}")
            if tuple(b.shape) != tuple(conv.bias.shape):
                raise CheckpointFormatError(
                    f"{weights_path}: {name}.bias has shape {tuple(b.shape)}, "
                    f"expected {tuple(conv.bias.shape)}")
            conv.weight.copy_(torch.from_numpy(w.astype(np.float32, copy=False)))
            conv.bias.copy_(torch.from_numpy(b.astype(np.float32, copy=False)))
        enc.mean.copy_(torch.from_numpy(
            arrays["normalize.mean"].astype(np.float32, copy=False)).view(1, 3, 1, 1))
        enc.std.copy_(torch.from_numpy(
            arrays["normalize.std"].astype(np.float32, copy=False)).view(1, 3, 1, 1))
    return enc.freeze()


def random_encoder(seed: int = 0) -> Encoder:
    """Seeded random encoder with the true VGG-19 architecture.

    Lets tests and desk-scale training run without downloaded weights;
    features are meaningless for perception but the optimization problem
    is the same shape. Kaiming-scaled init keeps activations alive
    through all the ReLU stages down to relu5_1.
    """
    gen = torch.Generator().manual_seed(seed)
    enc = Encoder()
    with torch.no_grad():
        for conv in enc.convs.values():
            fan_in = conv.weight.shape[1] * 9
            bound = float(np.sqrt(6.0 / fan_in))
            conv.weight.uniform_(-bound, bound, generator=gen)
            conv.bias.zero_()
    return enc.freeze()


def pad_to_multiple(x: torch.Tensor, multiple: int = PAD_MULTIPLE):
    """Reflect-pad (B, C, H, W) on bottom/right so H, W divide `multiple`.

    Reflection cannot exceed the current size, so inputs smaller than the
    pad are grown in steps; 1-pixel dimensions fall back to replication.
    """
    h, w = x.shape[-2:]
    ph = (multiple - h % multiple) % multiple
    pw = (multiple - w % multiple) % multiple
    remaining_h, remaining_w = ph, pw
    while remaining_h > 0 or remaining_w > 0:
        step_h = min(remaining_h, x.shape[-2] - 1)
        step_w = min(remaining_w, x.shape[-1] - 1)
        if step_h == 0 and remaining_h > 0 or step_w == 0 and remaining_w > 0:
            x = F.pad(x, (0, remaining_w - step_w, 0, remaining_h - step_h),
                      mode="replicate")
            remaining_h, remaining_w = step_h, step_w
            continue
        x = F.pad(x, (0, step_w, 0, step_h), mode="reflect")
        remaining_h -= step_h
        remaining_w -= step_w
    return x, (ph, pw)


def image_to_tensor(img) -> torch.Tensor:
    """Image (or HxWx3 array) -> (1, 3, H, W) float32 tensor."""
    if isinstance(img, Image):
        arr = img.pixels
    else:
        arr = np.asarray(img, dtype=np.float32)
    return torch.from_numpy(np.ascontiguousarray(arr)).permute(2, 0, 1).unsqueeze(0)


def tensor_to_image(t: torch.Tensor) -> Image:
    """(1, 3, H, W) or (3, H, W) tensor -> Image, clamped to [0, 1]."""
    if t.dim() == 4:
        t = t.squeeze(0)
    arr = t.detach().clamp(0.0, 1.0).permute(1, 2, 0).cpu().numpy()
    return Image(np.ascontiguousarray(arr, dtype=np.float32))


def extract_features(enc: Encoder, img, layers=STYLE_LAYERS) -> FeatureBundle:
    """Extract the requested taps from an Image or a (B, 3, H, W) tensor.

    Inputs that are not multiples of 16 are reflect-padded first; the pad
    is recorded in the bundle.
    """
    layers = tuple(layers)
    if not layers:
        raise ArgumentError("extract_features: empty layer list")
    for l in layers:
        if l not in LAYER_NAMES:
            raise ArgumentError(f"unknown encoder layer {l!r}")
    if isinstance(img, torch.Tensor):
        x = img if img.dim() == 4 else img.unsqueeze(0)
    else:
        x = image_to_tensor(img)
    x, pad = pad_to_multiple(x)
    taps = enc(x, layers)
    return FeatureBundle(maps=taps, pad=pad, metadata={"input_hw": tuple(x.shape[-2:])})
