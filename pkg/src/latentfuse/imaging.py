"""Image planes, color conversion, and volume slicing.

Every downstream module works on images normalized to the unit interval:
grayscale planes are H x W float arrays, color images H x W x 3 RGB. This
module owns the conversions into and out of that space.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path
from typing import NamedTuple

import numpy as np
from PIL import Image
from scipy import ndimage

# Full-range BT.601 luma weights with 0.5 chroma offset; the de facto
# convention in the grayscale/color fusion literature.
_KR, _KG, _KB = 0.299, 0.587, 0.114


class YCbCrImage(NamedTuple):
    """Luma plane plus the two chroma planes, all in [0, 1] and same shape."""

    y: np.ndarray
    cb: np.ndarray
    cr: np.ndarray


def validate_gray(img: np.ndarray, min_size: int | None = None) -> np.ndarray:
    """Check an array is a valid grayscale plane in [0, 1]; returns it."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError(f"grayscale image must be 2D, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("grayscale image contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("grayscale image values must lie in [0, 1]")
    if min_size is not None and min(img.shape) < min_size:
        raise ValueError(
            f"image of shape {img.shape} is smaller than the required "
            f"minimum side {min_size}"
        )
    return img


def validate_color(img: np.ndarray) -> np.ndarray:
    """Check an array is a valid H x W x 3 RGB image in [0, 1]; returns it."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"color image must be HxWx3, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("color image contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("color image values must lie in [0, 1]")
    return img


def is_color(img: np.ndarray) -> bool:
    return np.asarray(img).ndim == 3


def normalize_intensity(raw: np.ndarray) -> np.ndarray:
    """Map an 8-bit [0, 255] plane to float64 [0, 1] by exact division.

    Raises ValueError for values outside [0, 255].
    """
    raw = np.asarray(raw)
    if raw.size and (raw.min() < 0 or raw.max() > 255):
        raise ValueError("input intensities must lie in [0, 255]")
    return raw.astype(np.float64) / 255.0


def rgb_to_ycbcr(img: np.ndarray) -> YCbCrImage:
    """Full-range BT.601 RGB -> YCbCr on [0, 1] planes (chroma offset 0.5)."""
    img = validate_color(img)
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    y = _KR * r + _KG * g + _KB * b
    cb = (b - y) / (2.0 * (1.0 - _KB)) + 0.5
    cr = (r - y) / (2.0 * (1.0 - _KR)) + 0.5
    return YCbCrImage(y=y, cb=cb, cr=cr)


def ycbcr_to_rgb(img: YCbCrImage) -> np.ndarray:
    """Inverse of :func:`rgb_to_ycbcr`, clamped into [0, 1].

    Clamping matters in practice: a fused luma plane can push reconstructed
    RGB slightly out of gamut, and the metric suite requires bounded inputs.
    """
    y, cb, cr = img
    if not (y.shape == cb.shape == cr.shape):
        raise ValueError("Y, Cb, Cr planes must share dimensions")
    cb = cb - 0.5
    cr = cr - 0.5
    r = y + 2.0 * (1.0 - _KR) * cr
    b = y + 2.0 * (1.0 - _KB) * cb
    g = (y - _KR * r - _KB * b) / _KG
    return np.clip(np.stack([r, g, b], axis=-1), 0.0, 1.0)


def volume_to_slices(volume: np.ndarray, min_nonzero_fraction: float = 0.1) -> list[np.ndarray]:
    """Slice a D x H x W volume along its first (axial) axis.

    Keeps, in order, only slices whose fraction of nonzero pixels is at
    least ``min_nonzero_fraction``. An empty result is valid.
    """
    volume = np.asarray(volume)
    if volume.ndim != 3:
        raise ValueError(f"volume must be 3D, got shape {volume.shape}")
    if not 0.0 <= min_nonzero_fraction <= 1.0:
        raise ValueError("min_nonzero_fraction must lie in [0, 1]")
    kept = []
    for sl in volume:
        if np.count_nonzero(sl) >= min_nonzero_fraction * sl.size:
            kept.append(np.asarray(sl, dtype=np.float64))
    return kept


def resample_volume(volume: np.ndarray, shape: tuple[int, int, int] = (128, 128, 128)) -> np.ndarray:
    """Trilinearly resample a volume to ``shape`` (e.g. 240x240x155 -> 128^3)."""
    volume = np.asarray(volume, dtype=np.float64)
    if volume.ndim != 3:
        raise ValueError(f"volume must be 3D, got shape {volume.shape}")
    factors = [t / s for t, s in zip(shape, volume.shape)]
    out = ndimage.zoom(volume, factors, order=1)
    # zoom can over/undershoot the target size by one voxel under rounding
    out = out[: shape[0], : shape[1], : shape[2]]
    if out.shape != tuple(shape):
        pad = [(0, t - s) for t, s in zip(shape, out.shape)]
        out = np.pad(out, pad, mode="edge")
    return out


def load_image(path: str | Path) -> np.ndarray:
    """Load a raster file as a [0, 1] grayscale plane or RGB image.

    8-bit and 16-bit grayscale and 8-bit RGB files are supported; values
    are normalized by the format's maximum.
    """
    with Image.open(path) as pil:
        mode = pil.mode
        if mode in ("L", "P"):
            return np.asarray(pil.convert("L"), dtype=np.float64) / 255.0
        if mode.startswith("I;16") or mode == "I":
            arr = np.asarray(pil, dtype=np.float64)
            return arr / 65535.0
        if mode in ("RGB", "RGBA"):
            return np.asarray(pil.convert("RGB"), dtype=np.float64) / 255.0
    raise ValueError(f"unsupported image mode {mode!r} in {path}")


def save_image(path: str | Path, img: np.ndarray) -> None:
    """Write a [0, 1] grayscale or RGB image as an 8-bit PNG."""
    img = np.asarray(img)
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(path)


# NIfTI-1 data type codes -> numpy dtypes (the subset seen in practice).
_NIFTI_DTYPES = {
    2: np.uint8, 4: np.int16, 8: np.int32, 16: np.float32,
    64: np.float64, 256: np.int8, 512: np.uint16, 768: np.uint32,
}


def _load_nifti(path: Path) -> np.ndarray:
    """Minimal read-only NIfTI-1 loader (single-file .nii / .nii.gz)."""
    opener = gzip.open if path.name.endswith(".gz") else open
    with opener(path, "rb") as fh:
        header = fh.read(348)
        if len(header) < 348:
            raise ValueError(f"{path}: truncated NIfTI header")
        sizeof_hdr = struct.unpack("<i", header[:4])[0]
        byte_order = "<"
        if sizeof_hdr != 348:
            byte_order = ">"
            if struct.unpack(">i", header[:4])[0] != 348:
                raise ValueError(f"{path}: not a NIfTI-1 file")
        if header[344:348] not in (b"n+1\x00", b"ni1\x00"):
            raise ValueError(f"{path}: missing NIfTI-1 magic")
        dim = struct.unpack(byte_order + "8h", header[40:56])
        datatype = struct.unpack(byte_order + "h", header[70:72])[0]
        vox_offset = struct.unpack(byte_order + "f", header[108:112])[0]
        scl_slope = struct.unpack(byte_order + "f", header[112:116])[0]
        scl_inter = struct.unpack(byte_order + "f", header[116:120])[0]
        if datatype not in _NIFTI_DTYPES:
            raise ValueError(f"{path}: unsupported NIfTI datatype code {datatype}")
        ndim = dim[0]
        shape = tuple(dim[1 : 1 + ndim])
        dtype = np.dtype(_NIFTI_DTYPES[datatype]).newbyteorder(byte_order)
        fh.read(max(int(vox_offset) - 348, 0))
        count = int(np.prod(shape))
        data = np.frombuffer(fh.read(count * dtype.itemsize), dtype=dtype, count=count)
    # NIfTI stores Fortran order; we expose the slowest-varying axis first
    # so axial slicing iterates over the first dimension.
    vol = data.reshape(shape, order="F").T.astype(np.float64)
    if scl_slope not in (0.0, 1.0) or scl_inter != 0.0:
        slope = scl_slope if scl_slope != 0.0 else 1.0
        vol = vol * slope + scl_inter
    return vol


def load_volume(path: str | Path, normalize: bool = True) -> np.ndarray:
    """Load a 3D volume (.nii / .nii.gz / .npy) as a float array.

    With ``normalize`` the intensities are mapped to [0, 1] by the volume's
    max (min-shifted first if negative values are present).
    """
    path = Path(path)
    if path.suffix == ".npy":
        vol = np.load(path).astype(np.float64)
    elif path.name.endswith((".nii", ".nii.gz")):
        vol = _load_nifti(path)
    else:
        raise ValueError(f"unsupported volume format: {path.name}")
    if vol.ndim != 3:
        raise ValueError(f"{path}: expected a 3D volume, got shape {vol.shape}")
    if normalize:
        if vol.min() < 0:
            vol = vol - vol.min()
        peak = vol.max()
        if peak > 0:
            vol = vol / peak
    return vol
