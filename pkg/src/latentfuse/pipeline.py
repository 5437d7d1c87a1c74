"""End-to-end workflow: reconstruction training, latent fusion, evaluation,
ablation arms and the fusion-time benchmark.

Training optimizes the autoencoder for reconstruction only; fusion never
trains anything. Runs write a manifest capturing everything needed to
reproduce them (config snapshot, dataset hash, seed, timings).
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .config import ConfigError, EncoderConfig, TrainConfig, config_to_dict
from .datasets import PairedDataset
from .fusion import get_strategy, sfnn_weights
from .imaging import YCbCrImage, is_color, rgb_to_ycbcr, ycbcr_to_rgb
from .losses import PerceptualExtractor, reconstruction_loss
from .metrics import MetricReport, fusion_metrics, report_to_csv, report_to_json, to_luma
from .network import (FusionAutoencoder, load_checkpoint, param_count,
                      save_checkpoint)


class TrainingDivergedError(RuntimeError):
    """Raised when the loss goes non-finite; carries the offending batch."""


@dataclass
class RunManifest:
    """Reproduction record written next to every run's artifacts."""

    config: dict
    seed: int
    dataset_hash: str | None = None
    checkpoint_path: str | None = None
    best_checkpoint_path: str | None = None
    metric_report_path: str | None = None
    timings: dict = field(default_factory=dict)
    extractor_pretrained: bool | None = None
    deterministic: bool = True

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(dataclasses.asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        with open(path) as fh:
            return cls(**json.load(fh))


@dataclass
class TrainResult:
    model: FusionAutoencoder
    history: list[dict]
    manifest: RunManifest
    extractor: PerceptualExtractor


def _to_tensor(img: np.ndarray, device: str) -> torch.Tensor:
    arr = np.ascontiguousarray(img, dtype=np.float32)
    return torch.from_numpy(arr).unsqueeze(0).unsqueeze(0).to(device)


def _pool_training_images(data: PairedDataset) -> list[np.ndarray]:
    """Both modalities of every pair, as grayscale planes (Y for color)."""
    images = []
    for pair in data:
        images.append(to_luma(pair.image_a))
        images.append(to_luma(pair.image_b))
    shapes = {img.shape for img in images}
    if len(shapes) > 1:
        raise ValueError(f"training images must share one size, got {sorted(shapes)}")
    return images


def _lr_at(cfg: TrainConfig, epoch: int) -> float:
    if cfg.lr_schedule == "constant":
        return cfg.initial_lr
    if cfg.epochs <= 1:
        return cfg.initial_lr if epoch == 0 else cfg.final_lr
    # epoch 0 -> initial_lr, last epoch -> final_lr
    t = epoch / (cfg.epochs - 1)
    return cfg.final_lr + 0.5 * (cfg.initial_lr - cfg.final_lr) * (1.0 + np.cos(np.pi * t))


def train_stage1(cfg: TrainConfig, data: PairedDataset, *,
                 encoder_cfg: EncoderConfig | None = None,
                 out_dir: str | Path | None = None,
                 device: str = "cpu",
                 single_threaded: bool = True,
                 resume: bool = False,
                 dataset_hash: str | None = None,
                 max_steps: int | None = None) -> TrainResult:
    """Optimize the autoencoder for reconstruction over the pooled images.

    Adam with the configured cosine/constant schedule; deterministic for a
    fixed seed in single-threaded mode. Writes ``checkpoint_last.pt`` every
    epoch and ``checkpoint_best.pt`` on validation improvement when
    ``out_dir`` is given.
    """
    if len(data) == 0:
        raise ValueError("training split is empty")
    encoder_cfg = encoder_cfg or EncoderConfig()
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    if single_threaded:
        torch.set_num_threads(1)
    torch.manual_seed(cfg.seed)

    model = FusionAutoencoder(encoder_cfg, use_edge_enhancer=cfg.ablation_flags.use_drgo)
    model.to(device).train()
    extractor = PerceptualExtractor(cfg.loss.perceptual_layers).to(device)

    images = _pool_training_images(data)
    n = len(images)
    val_rng = np.random.default_rng(cfg.seed)
    n_val = int(round(cfg.validation_fraction * n)) if cfg.validation_fraction > 0 else 0
    val_idx = set(val_rng.permutation(n)[:n_val].tolist())
    train_images = [img for i, img in enumerate(images) if i not in val_idx]
    val_images = [img for i, img in enumerate(images) if i in val_idx]
    if not train_images:
        raise ValueError("validation fraction leaves no training images")
    train_ids = [i for i in range(n) if i not in val_idx]

    start_epoch = 0
    best_val = float("inf")
    history: list[dict] = []
    last_path = out_dir / "checkpoint_last.pt" if out_dir else None
    best_path = out_dir / "checkpoint_best.pt" if out_dir else None
    payload = None
    if resume:
        if last_path is None or not last_path.exists():
            raise FileNotFoundError("resume requested but no checkpoint_last.pt found")
        model, payload = load_checkpoint(last_path, expected_config=encoder_cfg,
                                         map_location=device)
        model.to(device).train()
        start_epoch = payload["epoch"] + 1
        best_val = payload["extra"].get("best_val", float("inf"))
        history = payload["extra"].get("history", [])

    # the optimizer must bind the final model instance (resume rebuilds it)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.initial_lr,
                                 betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)
    if payload is not None:
        optimizer.load_state_dict(payload["optimizer_state"])

    step = len(history)
    t_start = time.perf_counter()
    stop = False
    for epoch in range(start_epoch, cfg.epochs):
        lr = _lr_at(cfg, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_images))
        for lo in range(0, len(order), cfg.batch_size):
            batch_idx = order[lo:lo + cfg.batch_size]
            batch = torch.stack([
                torch.from_numpy(np.ascontiguousarray(train_images[i], dtype=np.float32))
                for i in batch_idx
            ]).unsqueeze(1).to(device)
            optimizer.zero_grad()
            out = model(batch)
            loss, parts = reconstruction_loss(batch, out, extractor, cfg.loss,
                                              use_grad=cfg.ablation_flags.use_grad_loss)
            if not torch.isfinite(loss):
                ids = [train_ids[i] for i in batch_idx]
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch} (pooled image ids {ids}); "
                    f"components: {parts}"
                )
            loss.backward()
            optimizer.step()
            history.append({"epoch": epoch, "step": step, "lr": lr, **parts})
            step += 1
            if max_steps is not None and step >= max_steps:
                stop = True
                break

        if val_images:
            with torch.no_grad():
                vals = []
                for img in val_images:
                    x = _to_tensor(img, device)
                    v, _ = reconstruction_loss(x, model(x), extractor, cfg.loss,
                                               use_grad=cfg.ablation_flags.use_grad_loss)
                    vals.append(float(v))
                epoch_val = float(np.mean(vals))
        else:
            epoch_val = history[-1]["total"]

        if out_dir is not None:
            extra = {"best_val": min(best_val, epoch_val), "history": history,
                     "train_config": dataclasses.asdict(cfg)}
            save_checkpoint(last_path, model, optimizer=optimizer, epoch=epoch, extra=extra)
            if epoch_val < best_val:
                save_checkpoint(best_path, model, optimizer=optimizer, epoch=epoch, extra=extra)
        if epoch_val < best_val:
            best_val = epoch_val
        if stop:
            break

    elapsed = time.perf_counter() - t_start
    manifest = RunManifest(
        config=config_to_dict(encoder_cfg, cfg),
        seed=cfg.seed,
        dataset_hash=dataset_hash,
        checkpoint_path=str(last_path) if last_path else None,
        best_checkpoint_path=str(best_path) if best_path and best_path.exists() else None,
        timings={"train_seconds": elapsed, "steps": step},
        extractor_pretrained=extractor.pretrained,
        deterministic=single_threaded,
    )
    if out_dir is not None:
        manifest.save(out_dir / "run_manifest.json")
        with open(out_dir / "loss_history.json", "w") as fh:
            json.dump(history, fh)
    model.eval()
    return TrainResult(model=model, history=history, manifest=manifest,
                       extractor=extractor)


@dataclass
class FusionResult:
    image: np.ndarray
    strategy: str
    color_path_used: bool
    intermediates: dict | None = None


def fuse_pipeline(model: FusionAutoencoder, image_a: np.ndarray, image_b: np.ndarray,
                  strategy: str = "sfnn-max", device: str = "cpu",
                  return_intermediates: bool = False) -> FusionResult:
    """Encode both members, fuse the latents, decode the fused latent.

    Grayscale pairs never touch color conversion. A color second member is
    converted to YCbCr: its Y plane is fused with the grayscale member, the
    decoded luma gets the source chroma reattached, and the result is
    converted back to RGB.
    """
    image_a = np.asarray(image_a)
    image_b = np.asarray(image_b)
    if image_a.shape[:2] != image_b.shape[:2]:
        raise ValueError(
            f"pair members must share spatial dimensions, got "
            f"{image_a.shape[:2]} vs {image_b.shape[:2]}"
        )
    fuser = get_strategy(strategy)
    color_path = is_color(image_b)
    ycbcr = rgb_to_ycbcr(image_b) if color_path else None
    plane_b = ycbcr.y if color_path else image_b

    model.eval()
    with torch.no_grad():
        t_a = _to_tensor(image_a, device)
        t_b = _to_tensor(plane_b, device)
        z_a = model.encode(t_a)
        z_b = model.encode(t_b)
        z_f = fuser(z_a, z_b)
        fused_plane = model.decode(z_f)[0, 0].cpu().numpy().astype(np.float64)

    if color_path:
        out = ycbcr_to_rgb(YCbCrImage(y=fused_plane, cb=ycbcr.cb, cr=ycbcr.cr))
    else:
        out = fused_plane

    intermediates = None
    if return_intermediates:
        intermediates = {
            "latent_a": z_a.cpu(),
            "latent_b": z_b.cpu(),
            "latent_fused": z_f.cpu(),
            "fused_luma": fused_plane,
        }
        if strategy in ("sfnn-max", "sfnn-mean", "sfnn-sum", "sfnn-identity"):
            intermediates["weights"] = sfnn_weights(z_a, z_b, strategy)
        if color_path:
            intermediates["ycbcr"] = ycbcr
    return FusionResult(image=out, strategy=strategy,
                        color_path_used=color_path, intermediates=intermediates)


def evaluate(model: FusionAutoencoder, test: PairedDataset, strategies: list[str],
             device: str = "cpu", out_dir: str | Path | None = None,
             run_metadata: dict | None = None) -> dict[str, MetricReport]:
    """Fuse every test pair under each strategy and compute the metric suite."""
    if not strategies:
        raise ConfigError("at least one fusion strategy is required")
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    reports: dict[str, MetricReport] = {}
    for strategy in strategies:
        per_pair = {}
        for pair in sorted(test.pairs, key=lambda p: p.pair_id):
            result = fuse_pipeline(model, pair.image_a, pair.image_b,
                                   strategy=strategy, device=device)
            per_pair[pair.pair_id] = fusion_metrics(pair.image_a, pair.image_b,
                                                    result.image)
        metadata = dict(run_metadata or {})
        metadata["strategy"] = strategy
        report = MetricReport(per_pair=per_pair, run_metadata=metadata)
        reports[strategy] = report
        if out_dir is not None:
            report_to_json(report, out_dir / f"metrics_{strategy}.json")
            report_to_csv(report, out_dir / f"metrics_{strategy}.csv")
    return reports


@dataclass
class BenchmarkReport:
    strategy: str
    n_pairs: int
    warmup: int
    mean_seconds: float
    std_seconds: float
    param_count: int
    param_millions: float

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(dataclasses.asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")


def benchmark_fusion_time(model: FusionAutoencoder, pairs: PairedDataset,
                          strategy: str = "sfnn-max", warmup: int = 3,
                          device: str = "cpu") -> BenchmarkReport:
    """Wall-clock seconds per fused pair (color conversion included), with
    warm-up iterations excluded, alongside the trainable parameter count."""
    if len(pairs) < 10:
        raise ValueError(f"benchmark needs at least 10 pairs for a stable mean, got {len(pairs)}")
    pair_list = list(pairs)
    for pair in pair_list[:warmup]:
        fuse_pipeline(model, pair.image_a, pair.image_b, strategy=strategy, device=device)
    times = []
    for pair in pair_list:
        t0 = time.perf_counter()
        fuse_pipeline(model, pair.image_a, pair.image_b, strategy=strategy, device=device)
        times.append(time.perf_counter() - t0)
    count = param_count(model)
    return BenchmarkReport(
        strategy=strategy, n_pairs=len(times), warmup=warmup,
        mean_seconds=float(np.mean(times)), std_seconds=float(np.std(times)),
        param_count=count, param_millions=count / 1e6,
    )


ABLATION_ARMS: tuple[tuple[str, bool, bool], ...] = (
    # (arm name, use_grad_loss, use_drgo)
    ("base", False, False),
    ("base+grad_loss", True, False),
    ("base+grad_loss+drgo", True, True),
)


@dataclass
class AblationResult:
    arms: dict[str, MetricReport]
    manifests: dict[str, RunManifest]
    table: dict[str, dict[str, tuple[float, float]]]


def ablate(base_cfg: TrainConfig, train_data: PairedDataset, test_data: PairedDataset, *,
           encoder_cfg: EncoderConfig | None = None,
           out_dir: str | Path | None = None,
           strategy: str = "sfnn-max", device: str = "cpu",
           max_steps: int | None = None) -> AblationResult:
    """Train and evaluate the three component-ablation arms.

    All arms share the seed and data; their configs differ only in the
    ablation flags, which the per-arm run manifests make auditable.
    """
    out_dir = Path(out_dir) if out_dir is not None else None
    arms: dict[str, MetricReport] = {}
    manifests: dict[str, RunManifest] = {}
    table: dict[str, dict[str, tuple[float, float]]] = {}
    for name, use_grad, use_drgo in ABLATION_ARMS:
        cfg = replace(base_cfg,
                      ablation_flags=replace(base_cfg.ablation_flags,
                                             use_grad_loss=use_grad,
                                             use_drgo=use_drgo))
        arm_dir = out_dir / name.replace("+", "_") if out_dir else None
        result = train_stage1(cfg, train_data, encoder_cfg=encoder_cfg,
                              out_dir=arm_dir, device=device, max_steps=max_steps)
        report = evaluate(result.model, test_data, [strategy], device=device,
                          out_dir=arm_dir, run_metadata={"arm": name})[strategy]
        arms[name] = report
        manifests[name] = result.manifest
        table[name] = report.aggregate
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        payload = {
            arm: {m: {"mean": v[0], "std": v[1]} for m, v in agg.items()}
            for arm, agg in table.items()
        }
        with open(out_dir / "ablation_table.json", "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return AblationResult(arms=arms, manifests=manifests, table=table)
