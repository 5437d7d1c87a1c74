"""Command-line entry point: prepare-data, train, fuse, evaluate, benchmark, ablate."""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import click

from . import datasets, pipeline
from .config import (EncoderConfig, PRESETS, TrainConfig, load_config)
from .fusion import available_strategies
from .imaging import load_image, save_image
from .metrics import METRIC_NAMES, format_mean_std
from .network import load_checkpoint, param_count


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="YAML config with encoder/loss/train sections.")
@click.option("--preset", type=click.Choice(sorted(PRESETS)), default=None,
              help="Training preset; config file values override it.")
@click.option("--seed", type=int, default=None, help="Overrides the config seed.")
@click.option("--device", default="cpu", show_default=True)
@click.option("--out-dir", type=click.Path(file_okay=False), default="runs",
              show_default=True)
@click.pass_context
def main(ctx, config_path, preset, seed, device, out_dir):
    """Two-stage multimodal image fusion: train a reconstruction autoencoder,
    then fuse co-registered pairs in its latent space."""
    if config_path is not None:
        encoder_cfg, train_cfg = load_config(config_path)
    else:
        encoder_cfg = EncoderConfig()
        train_cfg = PRESETS[preset]() if preset else TrainConfig()
    if seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=seed)
    ctx.obj = {
        "encoder_cfg": encoder_cfg,
        "train_cfg": train_cfg,
        "device": device,
        "out_dir": Path(out_dir),
    }
    ctx.obj["out_dir"].mkdir(parents=True, exist_ok=True)


@main.command("prepare-data")
@click.option("--data-root", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--modality-a", required=True)
@click.option("--modality-b", required=True)
@click.option("--holdout", required=True, type=int,
              help="Number of pairs held out as the test split.")
@click.pass_obj
def prepare_data(obj, data_root, modality_a, modality_b, holdout):
    """Scan paired modality directories and write the split manifest."""
    manifest = datasets.build_manifest(data_root, modality_a, modality_b,
                                       holdout, obj["train_cfg"].seed)
    path = obj["out_dir"] / "manifest.json"
    datasets.write_manifest(manifest, path)
    n_train = len(manifest.split_records("train"))
    n_test = len(manifest.split_records("test"))
    click.echo(f"wrote {path} ({n_train} train / {n_test} test pairs)")


@main.command()
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--resume", is_flag=True, help="Continue from checkpoint_last.pt.")
@click.option("--max-steps", type=int, default=None,
              help="Stop after this many optimizer steps (smoke runs).")
@click.pass_obj
def train(obj, manifest_path, resume, max_steps):
    """Stage-1 reconstruction training on the manifest's train split."""
    manifest = datasets.read_manifest(manifest_path)
    data = datasets.load_split(manifest, "train")
    result = pipeline.train_stage1(
        obj["train_cfg"], data, encoder_cfg=obj["encoder_cfg"],
        out_dir=obj["out_dir"], device=obj["device"], resume=resume,
        dataset_hash=datasets.manifest_hash(manifest_path), max_steps=max_steps,
    )
    final = result.history[-1]["total"] if result.history else float("nan")
    click.echo(f"trained {result.manifest.timings['steps']} steps; "
               f"final loss {final:.6f}; checkpoints in {obj['out_dir']}")


def _strategy_option(fn):
    return click.option(
        "--strategy", "strategies", multiple=True,
        help=f"Fusion strategy name; repeatable. Available: {', '.join(available_strategies())}",
    )(fn)


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--image-a", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--image-b", required=True, type=click.Path(exists=True, dir_okay=False))
@_strategy_option
@click.pass_obj
def fuse(obj, checkpoint, image_a, image_b, strategies):
    """Fuse one co-registered pair; one PNG per requested strategy."""
    strategies = list(strategies) or ["sfnn-max"]
    model, _ = load_checkpoint(checkpoint, map_location=obj["device"])
    img_a = load_image(image_a)
    img_b = load_image(image_b)
    stem = Path(image_a).stem
    for strategy in strategies:
        result = pipeline.fuse_pipeline(model, img_a, img_b, strategy=strategy,
                                        device=obj["device"])
        out_path = obj["out_dir"] / f"fused_{stem}_{strategy}.png"
        save_image(out_path, result.image)
        click.echo(f"{strategy}: wrote {out_path}"
                   + (" (color path)" if result.color_path_used else ""))


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@_strategy_option
@click.pass_obj
def evaluate(obj, checkpoint, manifest_path, strategies):
    """Metric suite over the manifest's test split, one report per strategy."""
    strategies = list(strategies) or ["sfnn-max", "sfnn-mean", "sfnn-sum"]
    model, _ = load_checkpoint(checkpoint, map_location=obj["device"])
    manifest = datasets.read_manifest(manifest_path)
    test = datasets.load_split(manifest, "test")
    reports = pipeline.evaluate(
        model, test, strategies, device=obj["device"], out_dir=obj["out_dir"],
        run_metadata={"checkpoint": checkpoint,
                      "dataset_hash": datasets.manifest_hash(manifest_path),
                      "seed": obj["train_cfg"].seed},
    )
    header = "strategy    " + "  ".join(f"{m:>13}" for m in METRIC_NAMES)
    click.echo(header)
    for strategy, report in reports.items():
        cells = "  ".join(f"{format_mean_std(*report.aggregate[m]):>13}"
                          for m in METRIC_NAMES)
        click.echo(f"{strategy:<12}{cells}")


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--strategy", default="sfnn-max", show_default=True)
@click.option("--warmup", default=3, show_default=True)
@click.option("--split", default="test", show_default=True,
              type=click.Choice(["train", "test"]))
@click.pass_obj
def benchmark(obj, checkpoint, manifest_path, strategy, warmup, split):
    """Mean/std wall-clock fusion time per pair plus the parameter count."""
    model, _ = load_checkpoint(checkpoint, map_location=obj["device"])
    manifest = datasets.read_manifest(manifest_path)
    pairs = datasets.load_split(manifest, split)
    report = pipeline.benchmark_fusion_time(model, pairs, strategy=strategy,
                                            warmup=warmup, device=obj["device"])
    path = obj["out_dir"] / f"benchmark_{strategy}.json"
    report.save(path)
    click.echo(f"params(M): {report.param_millions:.2f}")
    click.echo(f"time(s): {format_mean_std(report.mean_seconds, report.std_seconds)}"
               f" over {report.n_pairs} pairs ({report.warmup} warm-up excluded)")
    click.echo(f"wrote {path}")


@main.command()
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--strategy", default="sfnn-max", show_default=True)
@click.option("--max-steps", type=int, default=None,
              help="Per-arm step cap (smoke runs).")
@click.pass_obj
def ablate(obj, manifest_path, strategy, max_steps):
    """Train and evaluate the three component-ablation arms."""
    manifest = datasets.read_manifest(manifest_path)
    train_data = datasets.load_split(manifest, "train")
    test_data = datasets.load_split(manifest, "test")
    result = pipeline.ablate(
        obj["train_cfg"], train_data, test_data, encoder_cfg=obj["encoder_cfg"],
        out_dir=obj["out_dir"], strategy=strategy, device=obj["device"],
        max_steps=max_steps,
    )
    header = "arm                   " + "  ".join(f"{m:>13}" for m in METRIC_NAMES)
    click.echo(header)
    for arm, agg in result.table.items():
        cells = "  ".join(f"{format_mean_std(*agg[m]):>13}" for m in METRIC_NAMES)
        click.echo(f"{arm:<22}{cells}")


@main.command("inspect")
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.pass_obj
def inspect(obj, checkpoint):
    """Print a checkpoint's config snapshot and parameter count."""
    model, payload = load_checkpoint(checkpoint, map_location=obj["device"])
    click.echo(json.dumps(payload["encoder_config"], indent=2, sort_keys=True))
    click.echo(f"trainable parameters: {param_count(model)} "
               f"({param_count(model) / 1e6:.2f}M)")


if __name__ == "__main__":
    main()
