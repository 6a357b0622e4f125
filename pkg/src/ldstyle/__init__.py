"""Arbitrary style transfer with Laplacian and depth structure losses."""

from .controls import (InterpolationParams, RegionMask, StyleMix,
                       stylize_multi, stylize_spatial, stylize_with_alpha)
from .depth import MonodepthBackend, StubDepthBackend, estimate_depth, make_depth_backend
from .encoder import (Encoder, FeatureBundle, extract_features, load_encoder,
                      random_encoder, save_encoder)
from .errors import (ArgumentError, BackendUnavailableError, CheckpointFormatError,
                     CorruptionError, DatasetError, DecodeError, DimensionError,
                     LdstyleError, TrainingDivergenceError)
from .evaluation import (SpeedReport, StructureReport, render_csv, render_table,
                         speed_benchmark, structure_consistency)
from .imaging import (GrayMap, Image, edge_map, laplacian_matrix, load_image,
                      luminance, random_crop, resize_smaller_dim, save_image, ssim)
from .losses import (LossBreakdown, LossWeights, content_loss, depth_loss,
                     laplacian_loss, style_loss, total_loss)
from .trainer import (Checkpoint, TrainConfig, ablation_sweep, load_checkpoint,
                      load_train_config, make_checkpoint, model_from_checkpoint,
                      pair_stream, save_checkpoint, train, train_step)
from .transfer import (SanetBlock, TransferModel, decode, fuse_multiscale,
                       fuse_residual, fused_features, init_transfer_model,
                       sanet_forward, stylize)

__version__ = "0.1.0"
