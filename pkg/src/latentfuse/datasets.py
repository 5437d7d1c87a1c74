"""Co-registered image pairs: directory scanning, splitting, manifests.

Expected on-disk layout: ``<root>/<modality_a>/<id>.<ext>`` paired with
``<root>/<modality_b>/<id>.<ext>`` by identical ``<id>``. The manifest file
written by :func:`write_manifest` records ids, paths and the train/test
split so downstream stages never re-derive it.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imaging import is_color, load_image, validate_color, validate_gray

_RASTER_EXTS = (".png", ".tif", ".tiff", ".bmp")


@dataclass
class ImagePair:
    pair_id: str
    image_a: np.ndarray
    image_b: np.ndarray
    path_a: str | None = None
    path_b: str | None = None

    def __post_init__(self):
        validate_gray(self.image_a)
        if is_color(self.image_b):
            validate_color(self.image_b)
        else:
            validate_gray(self.image_b)
        if self.image_a.shape[:2] != self.image_b.shape[:2]:
            raise ValueError(
                f"pair {self.pair_id!r}: members must be co-registered with "
                f"identical spatial dimensions, got {self.image_a.shape[:2]} "
                f"vs {self.image_b.shape[:2]}"
            )


@dataclass
class PairedDataset:
    pairs: list[ImagePair]
    modality_tags: tuple[str, str] = ("a", "b")
    split: str = "train"

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def pair_ids(self) -> list[str]:
        return [p.pair_id for p in self.pairs]


def split_dataset(ds: PairedDataset, holdout_count: int, seed: int) -> tuple[PairedDataset, PairedDataset]:
    """Randomly hold out ``holdout_count`` pairs as the test set.

    Deterministic for a fixed seed; train and test are disjoint and their
    union is the input dataset.
    """
    n = len(ds.pairs)
    if not 0 < holdout_count < n:
        raise ValueError(
            f"holdout_count must lie strictly between 0 and the pair count "
            f"({n}), got {holdout_count}"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    test_idx = set(order[:holdout_count].tolist())
    train_pairs = [p for i, p in enumerate(ds.pairs) if i not in test_idx]
    test_pairs = [p for i, p in enumerate(ds.pairs) if i in test_idx]
    train = PairedDataset(train_pairs, ds.modality_tags, split="train")
    test = PairedDataset(test_pairs, ds.modality_tags, split="test")
    return train, test


def scan_pair_directory(root: str | Path, modality_a: str, modality_b: str) -> list[tuple[str, Path, Path]]:
    """Find (id, path_a, path_b) triples under the two modality directories."""
    root = Path(root)
    dir_a, dir_b = root / modality_a, root / modality_b
    for d in (dir_a, dir_b):
        if not d.is_dir():
            raise FileNotFoundError(f"modality directory not found: {d}")
    by_id_a = {p.stem: p for p in sorted(dir_a.iterdir()) if p.suffix.lower() in _RASTER_EXTS}
    by_id_b = {p.stem: p for p in sorted(dir_b.iterdir()) if p.suffix.lower() in _RASTER_EXTS}
    common = sorted(set(by_id_a) & set(by_id_b))
    if not common:
        raise FileNotFoundError(
            f"no paired ids between {dir_a} and {dir_b}"
        )
    return [(pid, by_id_a[pid], by_id_b[pid]) for pid in common]


def load_pairs(entries: list[tuple[str, Path, Path]], modality_tags: tuple[str, str], split: str = "train") -> PairedDataset:
    pairs = [
        ImagePair(pid, load_image(pa), load_image(pb), str(pa), str(pb))
        for pid, pa, pb in entries
    ]
    return PairedDataset(pairs, modality_tags, split=split)


@dataclass
class ManifestRecord:
    pair_id: str
    path_a: str
    path_b: str
    split: str


@dataclass
class DatasetManifest:
    modality_a: str
    modality_b: str
    seed: int
    holdout_count: int
    records: list[ManifestRecord] = field(default_factory=list)

    def split_records(self, split: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == split]


def build_manifest(root: str | Path, modality_a: str, modality_b: str,
                   holdout_count: int, seed: int) -> DatasetManifest:
    """Scan a pair directory, assign a deterministic split, build a manifest."""
    entries = scan_pair_directory(root, modality_a, modality_b)
    n = len(entries)
    if not 0 < holdout_count < n:
        raise ValueError(
            f"holdout_count must lie strictly between 0 and the pair count "
            f"({n}), got {holdout_count}"
        )
    rng = np.random.default_rng(seed)
    test_idx = set(rng.permutation(n)[:holdout_count].tolist())
    records = [
        ManifestRecord(pid, str(pa), str(pb), "test" if i in test_idx else "train")
        for i, (pid, pa, pb) in enumerate(entries)
    ]
    return DatasetManifest(modality_a, modality_b, seed, holdout_count, records)


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    payload = {
        "modality_a": manifest.modality_a,
        "modality_b": manifest.modality_b,
        "seed": manifest.seed,
        "holdout_count": manifest.holdout_count,
        "pairs": [
            {"id": r.pair_id, "path_a": r.path_a, "path_b": r.path_b, "split": r.split}
            for r in manifest.records
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path: str | Path) -> DatasetManifest:
    with open(path) as fh:
        payload = json.load(fh)
    records = [
        ManifestRecord(r["id"], r["path_a"], r["path_b"], r["split"])
        for r in payload["pairs"]
    ]
    return DatasetManifest(payload["modality_a"], payload["modality_b"],
                           payload["seed"], payload["holdout_count"], records)


def manifest_hash(path: str | Path) -> str:
    """Content hash of a manifest file, recorded in run manifests."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_split(manifest: DatasetManifest, split: str) -> PairedDataset:
    entries = [(r.pair_id, Path(r.path_a), Path(r.path_b))
               for r in manifest.split_records(split)]
    return load_pairs(entries, (manifest.modality_a, manifest.modality_b), split=split)
