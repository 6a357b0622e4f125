"""Dataset ingestion, the optimization loop, checkpoints and ablation sweeps.

Training follows the standard recipe: resize the smaller dimension of
both images, random-crop square regions, optimize the SANet blocks,
fusion convolution and decoder with Adam while the encoder stays frozen.
"""

from __future__ import annotations

import csv
import dataclasses
import itertools
import logging
import os
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from . import archive
from .depth import make_depth_backend
from .encoder import (STYLE_LAYERS, extract_features, image_to_tensor,
                      load_encoder, random_encoder)
from .errors import ArgumentError, CheckpointFormatError, DatasetError, TrainingDivergenceError
from .imaging import load_image, random_crop, resize_smaller_dim
from .losses import LossBreakdown, LossWeights, total_loss
from .transfer import MODEL_SCHEMA_VERSION, TransferModel, decode, fused_features, init_transfer_model

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")

LOG_COLUMNS = ("iter", "content", "style", "lap", "depth", "total")


@dataclass
class TrainConfig:
    content_dir: str
    style_dir: str
    out_dir: str = "runs/default"
    learning_rate: float = 1e-4
    batch_size: int = 5
    resize_target: int = 512
    crop_size: int = 256
    max_iterations: int = 500
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    depth_backend: str = "stub"
    depth_weights: str | None = None
    encoder_weights: str | None = None
    checkpoint_every: int = 100

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ArgumentError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ArgumentError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.crop_size > self.resize_target:
            raise ArgumentError(
                f"crop_size {self.crop_size} exceeds resize_target {self.resize_target}")
        if self.max_iterations < 0:
            raise ArgumentError(f"max_iterations must be >= 0, got {self.max_iterations}")
        if self.checkpoint_every < 1:
            raise ArgumentError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")


_CONFIG_TYPES = {
    "learning_rate": float, "batch_size": int, "resize_target": int,
    "crop_size": int, "max_iterations": int, "seed": int, "checkpoint_every": int,
}
_WEIGHT_KEYS = ("lambda_c", "lambda_s", "lambda_lap", "lambda_depth")


def load_train_config(path, **overrides) -> TrainConfig:
    """Read a key=value run config file into a TrainConfig."""
    if not os.path.exists(path):
        raise ArgumentError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        raw = archive.parse_config_text(f.read())
    kwargs: dict = {}
    weight_kwargs: dict = {}
    for key, value in raw.items():
        if key in _WEIGHT_KEYS:
            weight_kwargs[key] = float(value)
        elif key in _CONFIG_TYPES:
            kwargs[key] = _CONFIG_TYPES[key](value)
        elif key in ("content_dir", "style_dir", "out_dir", "depth_backend",
                     "depth_weights", "encoder_weights"):
            kwargs[key] = value
        else:
            raise ArgumentError(f"{path}: unknown config key {key!r}")
    if weight_kwargs:
        kwargs["weights"] = LossWeights(**weight_kwargs)
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    if "content_dir" not in kwargs or "style_dir" not in kwargs:
        raise ArgumentError(f"{path}: config must set content_dir and style_dir")
    return TrainConfig(**kwargs)


def config_snapshot(cfg: TrainConfig) -> str:
    items = dataclasses.asdict(cfg)
    weights = items.pop("weights")
    items.update(weights)
    if items.get("encoder_weights") is None:
        items["encoder_weights"] = f"random:{cfg.seed}"
    return archive.format_config_text({k: v for k, v in items.items() if v is not None})


def _list_images(directory) -> list[str]:
    try:
        names = sorted(os.listdir(directory))
    except OSError as exc:
        raise DatasetError(f"cannot read dataset directory {directory}: {exc}") from exc
    paths = [os.path.join(directory, n) for n in names
             if os.path.splitext(n)[1].lower() in IMAGE_EXTENSIONS]
    if not paths:
        raise DatasetError(f"no images (png/jpg/jpeg) found in {directory}")
    return paths


def pair_stream(cfg: TrainConfig):
    """Infinite iterator of (content, style) batches, each (B, 3, S, S).

    Sampling is uniform with reshuffled cycles per side, fully driven by
    cfg.seed. Corrupt files are skipped with a warning.
    """
    content_paths = _list_images(cfg.content_dir)
    style_paths = _list_images(cfg.style_dir)
    rng = np.random.default_rng(cfg.seed)

    def sampler(paths):
        order: list[str] = []
        failures = 0
        while True:
            if not order:
                order = [paths[i] for i in rng.permutation(len(paths))]
            path = order.pop()
            try:
                img = load_image(path)
            except Exception as exc:  # corrupt file: warn and move on
                log.warning("skipping unreadable image %s: %s", path, exc)
                failures += 1
                if failures >= 2 * len(paths):
                    raise DatasetError(f"no decodable images usable from {os.path.dirname(path)}")
                continue
            failures = 0
            img = resize_smaller_dim(img, cfg.resize_target)
            crop_seed = int(rng.integers(0, 2**63 - 1))
            yield random_crop(img, cfg.crop_size, crop_seed)

    content_iter = sampler(content_paths)
    style_iter = sampler(style_paths)
    while True:
        content = [image_to_tensor(next(content_iter)) for _ in range(cfg.batch_size)]
        style = [image_to_tensor(next(style_iter)) for _ in range(cfg.batch_size)]
        yield torch.cat(content, dim=0), torch.cat(style, dim=0)


def train_step(model: TransferModel, enc, batch, cfg: TrainConfig,
               optimizer, depth_backend=None, iteration: int = 0) -> LossBreakdown:
    """One optimization step; returns the pre-update loss breakdown."""
    if depth_backend is None:
        depth_backend = make_depth_backend(cfg.depth_backend, cfg.depth_weights)
    content_t, style_t = batch
    content_t = content_t.to(memory_format=torch.channels_last)
    style_t = style_t.to(memory_format=torch.channels_last)

    with torch.no_grad():
        f_c = extract_features(enc, content_t, ("relu4_1", "relu5_1"))
        f_s = extract_features(enc, style_t, STYLE_LAYERS)

    stylized = decode(model, fused_features(model, f_c, f_s))
    stylized = stylized[:, :, :content_t.shape[2], :content_t.shape[3]]
    f_cs = extract_features(enc, stylized, STYLE_LAYERS)

    breakdown = total_loss(stylized, content_t, f_cs, f_c, f_s,
                           cfg.weights, depth_backend)
    if not torch.isfinite(breakdown.total):
        raise TrainingDivergenceError(iteration)

    optimizer.zero_grad(set_to_none=True)
    breakdown.total.backward()
    optimizer.step()
    return LossBreakdown(content=breakdown.content.detach(),
                         style=breakdown.style.detach(),
                         lap=breakdown.lap.detach(),
                         depth=breakdown.depth.detach(),
                         total=breakdown.total.detach())


@dataclass
class Checkpoint:
    """All trainable parameters, optimizer state, iteration counter and a
    config snapshot, as flat named arrays."""

    arrays: dict[str, np.ndarray]
    iteration: int
    config_text: str
    schema_version: int = MODEL_SCHEMA_VERSION


def make_checkpoint(model: TransferModel, optimizer, iteration: int,
                    cfg: TrainConfig) -> Checkpoint:
    arrays: dict[str, np.ndarray] = {}
    for name, param in model.state_dict().items():
        arrays[f"model.{name}"] = param.detach().cpu().contiguous().numpy().copy()
    name_of = {id(p): n for n, p in model.named_parameters()}
    for param, state in optimizer.state.items():
        pname = name_of[id(param)]
        for key, value in state.items():
            if isinstance(value, torch.Tensor):
                arrays[f"optim.{pname}.{key}"] = value.detach().cpu().contiguous().numpy().copy()
            else:
                arrays[f"optim.{pname}.{key}"] = np.asarray(float(value), dtype=np.float64)
    arrays["meta.iteration"] = np.asarray(iteration, dtype=np.int64)
    return Checkpoint(arrays=arrays, iteration=iteration, config_text=config_snapshot(cfg))


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    archive.save_archive(path, ckpt.arrays, config_text=ckpt.config_text,
                         schema_version=ckpt.schema_version)


def load_checkpoint(path) -> Checkpoint:
    arrays, config_text = archive.load_archive(path)
    if "meta.iteration" not in arrays:
        raise CheckpointFormatError(f"{path}: checkpoint is missing meta.iteration")
    iteration = int(arrays["meta.iteration"])
    return Checkpoint(arrays=arrays, iteration=iteration, config_text=config_text)


def model_from_checkpoint(ckpt: Checkpoint) -> TransferModel:
    model = TransferModel()
    state = {}
    expected = model.state_dict()
    for name, param in expected.items():
        key = f"model.{name}"
        if key not in ckpt.arrays:
            raise CheckpointFormatError(f"checkpoint is missing {key!r}")
        arr = ckpt.arrays[key]
        if tuple(arr.shape) != tuple(param.shape):
            raise CheckpointFormatError(
                f"checkpoint tensor {key} has shape {tuple(arr.shape)}, "
                f"expected {tuple(param.shape)}")
        state[name] = torch.from_numpy(arr.copy())
    model.load_state_dict(state)
    return model


def optimizer_from_checkpoint(ckpt: Checkpoint, model: TransferModel, lr: float):
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    prefixes = sorted({k.rsplit(".", 1)[0] for k in ckpt.arrays if k.startswith("optim.")})
    if not prefixes:
        return optimizer
    params = dict(model.named_parameters())
    state: dict = {}
    for prefix in prefixes:
        pname = prefix[len("optim."):]
        if pname not in params:
            raise CheckpointFormatError(f"checkpoint optimizer state for unknown parameter {pname!r}")
        entry = {}
        for key in ("step", "exp_avg", "exp_avg_sq"):
            full = f"{prefix}.{key}"
            if full not in ckpt.arrays:
                raise CheckpointFormatError(f"checkpoint is missing {full!r}")
            arr = ckpt.arrays[full]
            if key == "step":
                entry[key] = torch.tensor(float(arr))
            else:
                entry[key] = torch.from_numpy(arr.copy())
        state[params[pname]] = entry
    optimizer.state.clear()
    optimizer.state.update(state)
    return optimizer


def encoder_from_config(cfg: TrainConfig):
    if cfg.encoder_weights:
        return load_encoder(cfg.encoder_weights)
    return random_encoder(cfg.seed)


def resolve_encoder(config_text: str):
    """Rebuild the encoder a checkpoint was trained against, from its
    config snapshot (`encoder_weights` is a path or "random:<seed>")."""
    items = archive.parse_config_text(config_text)
    spec = items.get("encoder_weights", "random:0")
    if spec.startswith("random:"):
        return random_encoder(int(spec.split(":", 1)[1]))
    return load_encoder(spec)


def train(cfg: TrainConfig) -> Checkpoint:
    """Run cfg.max_iterations steps, logging per-iteration breakdowns to
    out_dir/train_log.csv and checkpointing to out_dir/checkpoint.ldst.

    Divergence aborts with the last periodic checkpoint left in place.
    """
    os.makedirs(cfg.out_dir, exist_ok=True)
    enc = encoder_from_config(cfg).to(memory_format=torch.channels_last)
    model = init_transfer_model(cfg.seed).to(memory_format=torch.channels_last)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    depth_backend = make_depth_backend(cfg.depth_backend, cfg.depth_weights)

    ckpt_path = os.path.join(cfg.out_dir, "checkpoint.ldst")
    log_path = os.path.join(cfg.out_dir, "train_log.csv")
    stream = pair_stream(cfg)

    with open(log_path, "w", newline="", encoding="utf-8") as log_file:
        writer = csv.writer(log_file)
        writer.writerow(LOG_COLUMNS)
        for iteration in range(1, cfg.max_iterations + 1):
            batch = next(stream)
            breakdown = train_step(model, enc, batch, cfg, optimizer,
                                   depth_backend, iteration)
            values = breakdown.detached()
            writer.writerow([iteration] + [f"{values[c]:.8g}" for c in LOG_COLUMNS[1:]])
            log_file.flush()
            if iteration % cfg.checkpoint_every == 0:
                save_checkpoint(make_checkpoint(model, optimizer, iteration, cfg), ckpt_path)

    final = make_checkpoint(model, optimizer, cfg.max_iterations, cfg)
    save_checkpoint(final, ckpt_path)
    return final


@dataclass
class SweepCell:
    lambda_lap: float
    lambda_depth: float
    checkpoint_path: str | None
    report: object | None
    error: str | None = None


def ablation_sweep(cfg: TrainConfig, lap_values, depth_values,
                   heldout_content_dir=None, heldout_style_dir=None,
                   method_prefix: str = "cell") -> list[SweepCell]:
    """Train one model per (lambda_lap, lambda_depth) cell with shared seed
    and data order, then score each on held-out pairs. A failed cell is
    recorded, not fatal."""
    from .evaluation import structure_consistency
    from .transfer import stylize

    lap_values = list(lap_values)
    depth_values = list(depth_values)
    if not lap_values or not depth_values:
        raise ArgumentError("ablation_sweep needs nonempty value lists")

    content_dir = heldout_content_dir or cfg.content_dir
    style_dir = heldout_style_dir or cfg.style_dir
    heldout_content = [load_image(p) for p in _list_images(content_dir)[:4]]
    heldout_style = [load_image(p) for p in _list_images(style_dir)[:4]]

    cells: list[SweepCell] = []
    for lam_lap, lam_depth in itertools.product(lap_values, depth_values):
        name = f"{method_prefix}_lap{lam_lap:g}_depth{lam_depth:g}"
        cell_cfg = replace(
            cfg,
            out_dir=os.path.join(cfg.out_dir, name),
            weights=replace(cfg.weights, lambda_lap=lam_lap, lambda_depth=lam_depth))
        try:
            ckpt = train(cell_cfg)
            model = model_from_checkpoint(ckpt)
            enc = resolve_encoder(ckpt.config_text)
            pairs = []
            for i, content in enumerate(heldout_content):
                style = heldout_style[i % len(heldout_style)]
                pairs.append((content, stylize(model, enc, content, style)))
            depth_backend = make_depth_backend(cell_cfg.depth_backend, cell_cfg.depth_weights)
            report = structure_consistency(pairs, depth_backend, method_name=name)
            cells.append(SweepCell(lam_lap, lam_depth,
                                   os.path.join(cell_cfg.out_dir, "checkpoint.ldst"),
                                   report))
        except Exception as exc:
            log.warning("sweep cell %s failed: %s", name, exc)
            cells.append(SweepCell(lam_lap, lam_depth, None, None, error=str(exc)))
    return cells


def read_loss_log(path) -> list[dict[str, float]]:
    """Parse a train_log.csv back into a list of per-iteration rows."""
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for record in csv.DictReader(f):
            rows.append({k: float(v) for k, v in record.items()})
    return rows
