"""Image representation, file I/O, preprocessing and structure primitives.

Images live as float32 H x W x 3 arrays in [0, 1]; quantization to 8 bit
happens only when saving. Everything here is a pure function over
immutable inputs.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field

import numpy as np
from PIL import Image as PilImage
from PIL import UnidentifiedImageError

from .errors import ArgumentError, BackendUnavailableError, DecodeError, DimensionError

GRAY_KINDS = ("laplacian", "depth", "edge", "luminance")

# Discrete Laplacian, entries sum to 0.
LAPLACIAN_KERNEL = np.array([[0.0, -1.0, 0.0],
                             [-1.0, 4.0, -1.0],
                             [0.0, -1.0, 0.0]], dtype=np.float64)

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class Image:
    """RGB raster with float32 pixels in [0, 1], shape (H, W, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 3:
            raise DimensionError(f"image must be HxWx3, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise DimensionError(f"image must be at least 1x1, got {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ArgumentError("image contains non-finite pixels")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class GrayMap:
    """Single-channel map (H, W). `kind` says what it represents."""

    values: np.ndarray
    kind: str
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.ndim != 2:
            raise DimensionError(f"gray map must be 2-D, got shape {self.values.shape}")
        if self.kind not in GRAY_KINDS:
            raise ArgumentError(f"unknown gray map kind {self.kind!r}")
        if not np.all(np.isfinite(self.values)):
            raise ArgumentError("gray map contains non-finite values")


def load_image(path) -> Image:
    """Load an 8- or 16-bit raster as an Image in [0, 1].

    Grayscale inputs are replicated to 3 channels, alpha is dropped.
    """
    path = os.fspath(path)
    try:
        with PilImage.open(path) as pil:
            pil.load()
            arr = np.asarray(pil)
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"cannot decode image {path}: {exc}") from exc

    if arr.dtype == np.uint8:
        scale = 255.0
    elif arr.dtype in (np.uint16, np.int32):  # PIL yields int32 for mode "I"
        scale = 65535.0
    else:
        raise DecodeError(f"cannot decode image {path}: unsupported pixel type {arr.dtype}")

    px = arr.astype(np.float32) / scale
    if px.ndim == 2:
        px = np.repeat(px[:, :, None], 3, axis=2)
    elif px.shape[2] == 4:
        px = px[:, :, :3]
    elif px.shape[2] == 2:  # LA
        px = np.repeat(px[:, :, :1], 3, axis=2)
    return Image(np.clip(px, 0.0, 1.0))


def save_image(img: Image, path) -> None:
    """Save as 8-bit RGB (PNG or JPEG by extension), round-half-up, atomically."""
    quantized = np.floor(img.pixels * 255.0 + 0.5).clip(0, 255).astype(np.uint8)
    path = os.fspath(path)
    suffix = os.path.splitext(path)[1] or ".png"
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=suffix)
    try:
        with os.fdopen(fd, "wb") as f:
            PilImage.fromarray(quantized, mode="RGB").save(f, format=_pil_format(suffix))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _pil_format(suffix: str) -> str:
    return {"":"PNG", ".png": "PNG", ".jpg": "JPEG", ".jpeg": "JPEG"}.get(suffix.lower(), "PNG")


def encode_image(img: Image, format: str = "png") -> bytes:
    """Encode to PNG/JPEG bytes (8-bit RGB, round-half-up)."""
    import io

    quantized = np.floor(img.pixels * 255.0 + 0.5).clip(0, 255).astype(np.uint8)
    buf = io.BytesIO()
    PilImage.fromarray(quantized, mode="RGB").save(buf, format=_pil_format("." + format.lstrip(".")))
    return buf.getvalue()


def decode_image(data: bytes) -> Image:
    """Decode PNG/JPEG bytes to an Image (same conventions as load_image)."""
    import io

    try:
        with PilImage.open(io.BytesIO(data)) as pil:
            pil.load()
            arr = np.asarray(pil)
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"cannot decode image payload: {exc}") from exc
    if arr.dtype == np.uint8:
        scale = 255.0
    elif arr.dtype in (np.uint16, np.int32):
        scale = 65535.0
    else:
        raise DecodeError(f"cannot decode image payload: unsupported pixel type {arr.dtype}")
    px = arr.astype(np.float32) / scale
    if px.ndim == 2:
        px = np.repeat(px[:, :, None], 3, axis=2)
    elif px.shape[2] == 4:
        px = px[:, :, :3]
    elif px.shape[2] == 2:
        px = np.repeat(px[:, :, :1], 3, axis=2)
    return Image(np.clip(px, 0.0, 1.0))


def resize_smaller_dim(img: Image, target: int) -> Image:
    """Bilinear resize so min(H, W) == target, preserving aspect ratio."""
    if target < 1:
        raise ArgumentError(f"resize target must be >= 1, got {target}")
    h, w = img.height, img.width
    if min(h, w) == target:
        return img
    if h <= w:
        new_h = target
        new_w = int(round(w * target / h))
    else:
        new_w = target
        new_h = int(round(h * target / w))
    import torch

    t = torch.from_numpy(img.pixels).permute(2, 0, 1).unsqueeze(0)
    out = torch.nn.functional.interpolate(
        t, size=(new_h, new_w), mode="bilinear", align_corners=False, antialias=True)
    px = out.squeeze(0).permute(1, 2, 0).clamp(0.0, 1.0).numpy()
    return Image(np.ascontiguousarray(px))


def random_crop(img: Image, size: int, rng_seed: int) -> Image:
    """Seeded uniform size x size crop. Deterministic for a fixed seed."""
    h, w = img.height, img.width
    if h < size or w < size:
        raise DimensionError(f"cannot crop {size}x{size} from {h}x{w} image")
    rng = np.random.default_rng(rng_seed)
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return Image(np.ascontiguousarray(img.pixels[top:top + size, left:left + size, :]))


def luminance(img: Image) -> GrayMap:
    r, g, b = LUMA_WEIGHTS
    vals = (r * img.pixels[:, :, 0] + g * img.pixels[:, :, 1] + b * img.pixels[:, :, 2])
    return GrayMap(vals.astype(np.float64), "luminance")


def _convolve_laplacian(channel: np.ndarray) -> np.ndarray:
    """Same-size convolution with the Laplacian kernel.

    Borders are edge-replicated, which makes this the grid graph
    Laplacian (each border pixel subtracts only its existing neighbors):
    any constant image maps to exactly zero everywhere.
    """
    x = np.asarray(channel, dtype=np.float64)
    padded = np.pad(x, 1, mode="edge")
    out = np.zeros_like(x)
    k = LAPLACIAN_KERNEL
    for di in range(3):
        for dj in range(3):
            if k[di, dj] != 0.0:
                out += k[di, dj] * padded[di:di + x.shape[0], dj:dj + x.shape[1]]
    return out


def laplacian_matrix(img):
    """Laplacian of an Image (three per-channel GrayMaps) or of one 2-D channel."""
    if isinstance(img, Image):
        return [GrayMap(_convolve_laplacian(img.pixels[:, :, c]), "laplacian")
                for c in range(3)]
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise DimensionError(f"expected an Image or a 2-D channel, got shape {arr.shape}")
    return GrayMap(_convolve_laplacian(arr), "laplacian")


_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


def _gaussian_window() -> np.ndarray:
    r = (_SSIM_WINDOW - 1) // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    w = np.exp(-0.5 * (x / _SSIM_SIGMA) ** 2)
    return w / w.sum()


def _filter_separable(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Same-size separable filtering by shift-and-sum; border values are
    only valid past radius, which is all SSIM uses."""
    r = (len(w) - 1) // 2
    padded = np.pad(x, r, mode="edge")
    h, wid = x.shape
    rows = np.zeros_like(x)
    for i, wi in enumerate(w):
        rows += wi * padded[i:i + h, r:r + wid]
    padded = np.pad(rows, ((0, 0), (r, r)), mode="edge")
    out = np.zeros_like(x)
    for j, wj in enumerate(w):
        out += wj * padded[:, j:j + wid]
    return out


def _as_gray_array(x) -> np.ndarray:
    if isinstance(x, Image):
        return luminance(x).values
    if isinstance(x, GrayMap):
        return x.values.astype(np.float64)
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 3:
        r, g, b = LUMA_WEIGHTS
        return r * arr[:, :, 0] + g * arr[:, :, 1] + b * arr[:, :, 2]
    if arr.ndim == 2:
        return arr
    raise DimensionError(f"cannot interpret shape {arr.shape} as an image or gray map")


def ssim(a, b) -> float:
    """Mean structural similarity over an 11x11 Gaussian window (sigma 1.5).

    Computed on luminance for RGB inputs, with K1=0.01, K2=0.03 and a
    dynamic range of 1.0. Only windows fully inside the image contribute,
    so the result is independent of border handling.
    """
    xa = _as_gray_array(a)
    xb = _as_gray_array(b)
    if xa.shape != xb.shape:
        raise DimensionError(f"ssim inputs differ in shape: {xa.shape} vs {xb.shape}")
    r = (_SSIM_WINDOW - 1) // 2
    if min(xa.shape) < _SSIM_WINDOW:
        raise DimensionError(
            f"ssim needs at least {_SSIM_WINDOW}x{_SSIM_WINDOW} images, got {xa.shape}")

    w = _gaussian_window()
    ux = _filter_separable(xa, w)
    uy = _filter_separable(xb, w)
    uxx = _filter_separable(xa * xa, w)
    uyy = _filter_separable(xb * xb, w)
    uxy = _filter_separable(xa * xb, w)
    vx = uxx - ux * ux
    vy = uyy - uy * uy
    vxy = uxy - ux * uy

    c1 = (_SSIM_K1 * 1.0) ** 2
    c2 = (_SSIM_K2 * 1.0) ** 2
    s = ((2.0 * ux * uy + c1) * (2.0 * vxy + c2)) / \
        ((ux * ux + uy * uy + c1) * (vx + vy + c2))
    return float(s[r:-r, r:-r].mean())


class SobelEdgeBackend:
    """Deterministic fallback edge extractor: Sobel gradient magnitude."""

    name = "sobel"

    def __call__(self, img: Image) -> GrayMap:
        lum = luminance(img).values
        padded = np.pad(lum, 1, mode="edge")
        kx = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
        ky = kx.T
        gx = np.zeros_like(lum)
        gy = np.zeros_like(lum)
        h, w = lum.shape
        for di in range(3):
            for dj in range(3):
                window = padded[di:di + h, dj:dj + w]
                if kx[di, dj] != 0.0:
                    gx += kx[di, dj] * window
                if ky[di, dj] != 0.0:
                    gy += ky[di, dj] * window
        mag = np.hypot(gx, gy)
        peak = mag.max()
        if peak > 0:
            mag = mag / peak
        return GrayMap(mag, "edge", metadata={"backend": self.name})


class TorchscriptEdgeBackend:
    """Pretrained edge network consumed as a TorchScript module.

    The module must map a (1, 3, H, W) float tensor in [0, 1] to a
    single-channel response of the same spatial size.
    """

    name = "pretrained_edge"

    def __init__(self, weights_path):
        self.weights_path = os.fspath(weights_path)
        if not os.path.exists(self.weights_path):
            raise BackendUnavailableError(
                f"edge model weights not found at {self.weights_path}")
        import torch

        self._module = torch.jit.load(self.weights_path, map_location="cpu")
        self._module.eval()

    def __call__(self, img: Image) -> GrayMap:
        import torch

        with torch.no_grad():
            t = torch.from_numpy(img.pixels).permute(2, 0, 1).unsqueeze(0)
            out = self._module(t)
        vals = out.squeeze().numpy().astype(np.float64)
        if vals.ndim != 2 or vals.shape != (img.height, img.width):
            raise DimensionError(
                f"edge model produced shape {vals.shape}, expected {(img.height, img.width)}")
        vals = np.abs(vals)
        peak = vals.max()
        if peak > 0:
            vals = vals / peak
        return GrayMap(vals, "edge", metadata={"backend": self.name,
                                               "weights": self.weights_path})


def edge_map(img: Image, backend=None) -> GrayMap:
    """Edge map in [0, 1] via the given backend (Sobel fallback by default)."""
    if backend is None:
        backend = SobelEdgeBackend()
    return backend(img)
