"""Multimodal medical image fusion in an autoencoder's latent space.

Stage 1 trains an asymmetric autoencoder (deep multiscale encoder, shallow
decoder) for reconstruction; stage 2 fuses the latents of a co-registered
pair with a parameter-free softmax/nuclear-norm weighting and decodes the
result. A full metric suite (PSNR, SSIM, FMI, FSIM, EN), ablation harness
and timing benchmark round out the pipeline.
"""

from .config import (AblationFlags, ConfigError, EncoderConfig, LossConfig,
                     TrainConfig, brats_preset, harvard_preset, load_config,
                     save_config)
from .datasets import (DatasetManifest, ImagePair, PairedDataset,
                       build_manifest, read_manifest, split_dataset,
                       write_manifest)
from .fusion import (FusionWeights, available_strategies, channel_softmax,
                     fuse, get_strategy, nuclear_norm, register_strategy,
                     sfnn_weights)
from .imaging import (YCbCrImage, load_image, load_volume, normalize_intensity,
                      resample_volume, rgb_to_ycbcr, save_image,
                      volume_to_slices, ycbcr_to_rgb)
from .losses import (PerceptualExtractor, gradient_loss, perceptual_loss,
                     pixel_loss, total_loss)
from .metrics import (MetricReport, aggregate_runs, entropy, fmi, format_mean_std,
                      fsim, fusion_metrics, psnr, ssim)
from .network import (FusionAutoencoder, build_autoencoder, load_checkpoint,
                      param_count, save_checkpoint)
from .pipeline import (BenchmarkReport, FusionResult, RunManifest, TrainResult,
                       ablate, benchmark_fusion_time, evaluate, fuse_pipeline,
                       train_stage1)

__version__ = "0.1.0"

__all__ = [
    "AblationFlags", "BenchmarkReport", "ConfigError", "DatasetManifest",
    "EncoderConfig", "FusionAutoencoder", "FusionResult", "FusionWeights",
    "ImagePair", "LossConfig", "MetricReport", "PairedDataset",
    "PerceptualExtractor", "RunManifest", "TrainConfig", "TrainResult",
    "YCbCrImage", "ablate", "aggregate_runs", "available_strategies",
    "benchmark_fusion_time", "brats_preset", "build_autoencoder",
    "build_manifest", "channel_softmax", "entropy", "evaluate", "fmi",
    "format_mean_std", "fsim", "fuse", "fuse_pipeline",
    "fusion_metrics", "get_strategy", "gradient_loss", "harvard_preset",
    "load_checkpoint", "load_config", "load_image", "load_volume",
    "normalize_intensity", "param_count", "perceptual_loss", "pixel_loss",
    "psnr", "read_manifest", "register_strategy", "resample_volume",
    "rgb_to_ycbcr", "save_checkpoint", "save_config", "save_image",
    "sfnn_weights", "split_dataset", "ssim", "total_loss", "train_stage1",
    "volume_to_slices", "write_manifest", "ycbcr_to_rgb",
]
