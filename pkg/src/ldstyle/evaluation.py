"""Quantitative evaluation: structure-consistency SSIM over images, depth
maps and edge maps, plus an end-to-end speed benchmark.

Published reference numbers for this family of methods appear only as
labeled citation lines in rendered output; they were measured on other
hardware with full-scale training and are never used as pass/fail
targets.
"""

from __future__ import annotations

import csv
import io
import platform
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .depth import estimate_depth
from .errors import ArgumentError, DimensionError
from .imaging import Image, edge_map, ssim
from .transfer import stylize_tensor

# Published structure-consistency SSIM (content / depth map / edge map) and
# execution times in seconds at 256^2 / 512^2 for well-known arbitrary
# style transfer methods, quoted for context in report footers.
REFERENCE_STRUCTURE_SSIM = {
    "structure-enhanced SANet (published)": (0.410, 0.886, 0.477),
    "SANet (published)": (0.364, 0.846, 0.423),
    "AdaIN (published)": (0.170, 0.733, 0.306),
    "Avatar-Net (published)": (0.215, 0.763, 0.420),
    "WCT (published)": (0.227, 0.803, 0.419),
    "Gatys et al. (published)": (0.195, 0.683, 0.319),
}
REFERENCE_SPEED_SECONDS = {
    "structure-enhanced SANet (published)": (0.015, 0.050),
    "SANet (published)": (0.017, 0.055),
    "AdaIN (published)": (0.018, 0.065),
    "Avatar-Net (published)": (0.248, 0.356),
    "WCT (published)": (0.689, 0.997),
    "Gatys et al. (published)": (15.863, 50.804),
}


@dataclass
class StructureReport:
    method_name: str
    content_ssim: float
    depth_ssim: float
    edge_ssim: float
    n_pairs: int


@dataclass
class SpeedReport:
    resolution: int
    mean_seconds: float
    std_seconds: float
    n_runs: int
    warmup_runs: int
    hardware_note: str
    raw_timings: list = field(default_factory=list, repr=False)


def structure_consistency(pairs, depth_backend, edge_backend=None,
                          method_name: str = "ldstyle") -> StructureReport:
    """Mean SSIM between each content image and its stylized output, and
    between their depth maps and edge maps."""
    pairs = list(pairs)
    if not pairs:
        raise ArgumentError("structure_consistency needs at least one pair")
    content_vals, depth_vals, edge_vals = [], [], []
    for content, stylized in pairs:
        if (content.height, content.width) != (stylized.height, stylized.width):
            raise DimensionError(
                f"pair dimensions differ: {(content.height, content.width)} vs "
                f"{(stylized.height, stylized.width)}")
        content_vals.append(ssim(content, stylized))
        depth_vals.append(ssim(estimate_depth(depth_backend, content),
                               estimate_depth(depth_backend, stylized)))
        edge_vals.append(ssim(edge_map(content, edge_backend),
                              edge_map(stylized, edge_backend)))
    return StructureReport(
        method_name=method_name,
        content_ssim=float(np.mean(content_vals)),
        depth_ssim=float(np.mean(depth_vals)),
        edge_ssim=float(np.mean(edge_vals)),
        n_pairs=len(pairs))


def _hardware_note() -> str:
    return (f"{platform.machine()} cpu, {torch.get_num_threads()} torch threads, "
            f"python {platform.python_version()}, torch {torch.__version__}")


def speed_benchmark(model, enc, resolutions, n_runs: int = 30,
                    warmup: int = 5, seed: int = 0) -> list[SpeedReport]:
    """Wall-clock end-to-end stylization timing per resolution, disk I/O
    excluded. Warmup runs are recorded but never enter the statistics."""
    if n_runs < 10:
        raise ArgumentError(f"speed_benchmark needs n_runs >= 10, got {n_runs}")
    if warmup < 0 or warmup >= n_runs:
        raise ArgumentError(f"warmup must be in [0, n_runs), got {warmup}")
    reports = []
    gen = torch.Generator().manual_seed(seed)
    for res in resolutions:
        content = torch.rand(1, 3, res, res, generator=gen)
        style = torch.rand(1, 3, res, res, generator=gen)
        timings = []
        for _ in range(n_runs):
            t0 = time.perf_counter()
            with torch.no_grad():
                stylize_tensor(model, enc, content, style)
            timings.append(time.perf_counter() - t0)
        measured = timings[warmup:]
        reports.append(SpeedReport(
            resolution=res,
            mean_seconds=float(np.mean(measured)),
            std_seconds=float(np.std(measured)),
            n_runs=n_runs,
            warmup_runs=warmup,
            hardware_note=_hardware_note(),
            raw_timings=timings))
    return reports


def _format_table(header, rows) -> str:
    table = [header] + [[str(c) for c in row] for row in rows]
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    lines = []
    for idx, row in enumerate(table):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if idx == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def render_table(reports) -> str:
    """Aligned plain-text tables; mixed report types get separate tables.
    Published reference numbers are appended as labeled footer lines."""
    reports = list(reports)
    if not reports:
        raise ArgumentError("render_table needs at least one report")
    structure = [r for r in reports if isinstance(r, StructureReport)]
    speed = [r for r in reports if isinstance(r, SpeedReport)]
    sections = []
    if structure:
        rows = [(r.method_name, f"{r.content_ssim:.3f}", f"{r.depth_ssim:.3f}",
                 f"{r.edge_ssim:.3f}", r.n_pairs) for r in structure]
        text = _format_table(
            ["method", "content_ssim", "depth_ssim", "edge_ssim", "n_pairs"], rows)
        footer = ["published reference values (full-scale training, other hardware):"]
        for name, (c, d, e) in REFERENCE_STRUCTURE_SSIM.items():
            footer.append(f"  {name}: content {c:.3f}, depth {d:.3f}, edge {e:.3f}")
        sections.append(text + "\n" + "\n".join(footer))
    if speed:
        rows = [(r.resolution, f"{r.mean_seconds:.4f}", f"{r.std_seconds:.4f}",
                 r.n_runs, r.warmup_runs, r.hardware_note) for r in speed]
        text = _format_table(
            ["resolution", "mean_s", "std_s", "n_runs", "warmup", "hardware"], rows)
        footer = ["published reference times, seconds at 256^2 / 512^2 (other hardware):"]
        for name, (t256, t512) in REFERENCE_SPEED_SECONDS.items():
            footer.append(f"  {name}: {t256:.3f} / {t512:.3f}")
        sections.append(text + "\n" + "\n".join(footer))
    return "\n\n".join(sections) + "\n"


def render_csv(reports) -> str:
    """CSV rendering that parses back to the same values."""
    reports = list(reports)
    if not reports:
        raise ArgumentError("render_csv needs at least one report")
    out = io.StringIO()
    writer = csv.writer(out)
    structure = [r for r in reports if isinstance(r, StructureReport)]
    speed = [r for r in reports if isinstance(r, SpeedReport)]
    if structure:
        writer.writerow(["method", "content_ssim", "depth_ssim", "edge_ssim", "n_pairs"])
        for r in structure:
            writer.writerow([r.method_name, repr(r.content_ssim), repr(r.depth_ssim),
                             repr(r.edge_ssim), r.n_pairs])
    if speed:
        if structure:
            writer.writerow([])
        writer.writerow(["resolution", "mean_seconds", "std_seconds", "n_runs", "warmup_runs"])
        for r in speed:
            writer.writerow([r.resolution, repr(r.mean_seconds), repr(r.std_seconds),
                             r.n_runs, r.warmup_runs])
    return out.getvalue()
