#!/usr/bin/env python3
"""Generate the committed evaluation corpus: small procedural content and
style images (no external data, no licensing constraints).

    python scripts/make_eval_corpus.py --out assets/eval_corpus
"""

import argparse
import os
import sys

import numpy as np

sys.path.insert(0, "src")

from ldstyle.imaging import Image, save_image  # noqa: E402


def content_image(seed: int, size: int = 256) -> Image:
    """Scene-like image: gradient sky over textured ground with shapes."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) / size
    horizon = 0.35 + 0.2 * rng.random()
    sky = np.stack([0.4 + 0.3 * (1 - yy), 0.5 + 0.3 * (1 - yy), 0.8 - 0.2 * yy], axis=2)
    ground_tex = 0.08 * np.sin(40 * xx + 10 * rng.random()) * np.sin(35 * yy)
    ground = np.stack([0.35 + ground_tex, 0.45 + ground_tex, 0.25 + ground_tex], axis=2)
    img = np.where((yy < horizon)[:, :, None], sky, ground)
    for _ in range(rng.integers(3, 6)):
        cy, cx = rng.random(2)
        r = 0.05 + 0.12 * rng.random()
        color = rng.random(3) * 0.8 + 0.1
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r ** 2
        img[mask] = color
    for _ in range(rng.integers(2, 4)):
        top, left = rng.random(2) * 0.7
        h, w = 0.08 + 0.2 * rng.random(2)
        color = rng.random(3) * 0.8 + 0.1
        mask = (yy > top) & (yy < top + h) & (xx > left) & (xx < left + w)
        img[mask] = color
    img += rng.normal(0, 0.01, img.shape)
    return Image(np.clip(img, 0, 1).astype(np.float32))


def style_image(seed: int, size: int = 256) -> Image:
    """Texture-like image: layered oriented waves with a strong palette."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) / size
    img = np.zeros((size, size, 3), dtype=np.float32)
    for _ in range(4):
        angle = rng.random() * np.pi
        freq = 8 + 40 * rng.random()
        phase = rng.random() * 2 * np.pi
        wave = np.sin(freq * (np.cos(angle) * xx + np.sin(angle) * yy) + phase)
        color = rng.random(3)
        img += wave[:, :, None] * color[None, None, :] * 0.25
    img = 0.5 + img
    blob = np.exp(-(((yy - rng.random()) ** 2 + (xx - rng.random()) ** 2) / 0.05))
    img += blob[:, :, None] * (rng.random(3) - 0.5)[None, None, :]
    img += rng.normal(0, 0.02, img.shape)
    return Image(np.clip(img, 0, 1).astype(np.float32))


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="assets/eval_corpus")
    parser.add_argument("--count", type=int, default=8)
    parser.add_argument("--size", type=int, default=256)
    args = parser.parse_args()

    content_dir = os.path.join(args.out, "content")
    style_dir = os.path.join(args.out, "style")
    os.makedirs(content_dir, exist_ok=True)
    os.makedirs(style_dir, exist_ok=True)
    for i in range(args.count):
        save_image(content_image(1000 + i, args.size),
                   os.path.join(content_dir, f"content_{i:02d}.png"))
        save_image(style_image(2000 + i, args.size),
                   os.path.join(style_dir, f"style_{i:02d}.png"))
    print(f"wrote {2 * args.count} images under {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
