#!/usr/bin/env python3
"""Convert standard pretrained VGG-19 weights into the ldstyle archive.

The canonical source is torchvision's ImageNet-trained VGG-19
(https://download.pytorch.org/models/vgg19-dcbb9e9d.pth, also available
through `torchvision.models.vgg19(weights='IMAGENET1K_V1')`). Run with
network access:

    python scripts/fetch_vgg19.py --out weights/vgg19.ldst

or point --state-dict at an already-downloaded .pth file. The archive
stores the convolutions through conv5_1 plus the ImageNet normalization
statistics the weights were trained under.
"""

import argparse
import sys

import numpy as np
import torch

sys.path.insert(0, "src")

from ldstyle import archive  # noqa: E402
from ldstyle.encoder import DEFAULT_MEAN, DEFAULT_STD, VGG19_CONVS  # noqa: E402

# torchvision's vgg19().features indices for each conv through conv5_1.
TORCHVISION_INDICES = {
    "conv1_1": 0, "conv1_2": 2,
    "conv2_1": 5, "conv2_2": 7,
    "conv3_1": 10, "conv3_2": 12, "conv3_3": 14, "conv3_4": 16,
    "conv4_1": 19, "conv4_2": 21, "conv4_3": 23, "conv4_4": 25,
    "conv5_1": 28,
}


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True)
    parser.add_argument("--state-dict", help="local vgg19 .pth file (skips download)")
    args = parser.parse_args()

    if args.state_dict:
        state = torch.load(args.state_dict, map_location="cpu", weights_only=True)
    else:
        from torchvision.models import VGG19_Weights, vgg19

        state = vgg19(weights=VGG19_Weights.IMAGENET1K_V1).state_dict()

    arrays = {}
    for name, _, _ in VGG19_CONVS:
        if name.startswith("pool"):
            continue
        idx = TORCHVISION_INDICES[name]
        arrays[f"{name}.weight"] = state[f"features.{idx}.weight"].numpy()
        arrays[f"{name}.bias"] = state[f"features.{idx}.bias"].numpy()
    arrays["normalize.mean"] = np.asarray(DEFAULT_MEAN, dtype=np.float32)
    arrays["normalize.std"] = np.asarray(DEFAULT_STD, dtype=np.float32)
    archive.save_archive(args.out, arrays, config_text="kind = vgg19_encoder\n")
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
