"""Image sequence I/O.

Sequences live in a directory of individually numbered frames; filename order
(lexicographic) defines temporal order.  Frames are normalized to float64 in
[0, 1] by dividing by the sample-type maximum (255 or 65535).  Ground-truth
masks are binarized at 128 with explicit handling of CDnet-style shade labels.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image


class DatasetError(Exception):
    """Raised for missing, inconsistent, or undecodable sequence files."""


# CDnet ground-truth shades: 85 = outside region of interest, 170 = unknown
# motion.  Both are non-foreground; 170 can additionally be dropped from
# evaluation entirely.
_SHADE_OUTSIDE_ROI = 85
_SHADE_UNKNOWN = 170


@dataclass(frozen=True)
class Frame:
    """One vectorized image: flat (height*width*channels,) data in [0, 1]."""

    data: np.ndarray
    width: int
    height: int
    channels: int

    def __post_init__(self):
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        if self.data.shape != (self.width * self.height * self.channels,):
            raise ValueError(
                f"data length {self.data.shape} does not match "
                f"{self.width}x{self.height}x{self.channels}"
            )

    @property
    def size(self) -> int:
        return self.data.size

    def as_array(self) -> np.ndarray:
        """Reshape to (height, width) or (height, width, channels)."""
        if self.channels == 1:
            return self.data.reshape(self.height, self.width)
        return self.data.reshape(self.height, self.width, self.channels)


@dataclass
class Sequence:
    """Ordered frames with identical dimensions."""

    frames: list[Frame]
    frame_ids: list[str]

    def __post_init__(self):
        if len(self.frames) != len(self.frame_ids):
            raise ValueError("frames and frame_ids must have equal length")
        if self.frames:
            w, h, c = self.frames[0].width, self.frames[0].height, self.frames[0].channels
            for fid, fr in zip(self.frame_ids, self.frames):
                if (fr.width, fr.height, fr.channels) != (w, h, c):
                    raise DatasetError(f"frame {fid} has inconsistent dimensions")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height

    @property
    def channels(self) -> int:
        return self.frames[0].channels

    def as_matrix(self) -> np.ndarray:
        """Stack all frames into an (n, m) float64 matrix."""
        return np.stack([f.data for f in self.frames])


@dataclass
class MaskSequence:
    """Binary ground-truth maps, optionally with an evaluation ROI."""

    masks: list[np.ndarray]  # each (height, width), values in {0, 1}
    frame_ids: list[str]
    roi: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.masks)


def _decoded_array(path: Path) -> np.ndarray:
    """Decode an image file into float64 [0, 1], normalizing by type maximum."""
    try:
        with Image.open(path) as img:
            if img.mode in ("I;16", "I;16B", "I;16L"):
                arr = np.asarray(img, dtype=np.float64) / 65535.0
            elif img.mode == "I":
                arr = np.asarray(img, dtype=np.float64) / 65535.0
            elif img.mode in ("L", "RGB"):
                arr = np.asarray(img, dtype=np.float64) / 255.0
            else:
                arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    except DatasetError:
        raise
    except Exception as exc:
        raise DatasetError(f"cannot decode {path.name}: {exc}") from exc
    return arr


def _downsample_nearest(arr: np.ndarray, max_side: int) -> np.ndarray:
    """Nearest-neighbor downsample so max(width, height) <= max_side."""
    h, w = arr.shape[:2]
    if max(h, w) <= max_side:
        return arr
    scale = max_side / max(h, w)
    new_h = max(1, round(h * scale))
    new_w = max(1, round(w * scale))
    rows = (np.arange(new_h) * h / new_h).astype(int)
    cols = (np.arange(new_w) * w / new_w).astype(int)
    return arr[rows][:, cols]


def _matching_files(directory, pattern: str) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"directory not found: {directory}")
    files = sorted(directory.glob(pattern))
    if not files:
        raise DatasetError(f"no files matching {pattern!r} in {directory}")
    return files


def load_sequence(directory, pattern: str = "*.png",
                  max_side: int | None = None) -> Sequence:
    """Load every image matching ``pattern`` as one Sequence.

    Frames are sorted lexicographically by filename.  Raises
    :class:`DatasetError` with the offending filename on missing directories,
    zero matches, undecodable files, or inconsistent dimensions.
    """
    files = _matching_files(directory, pattern)
    frames, ids = [], []
    dims = None
    for path in files:
        arr = _decoded_array(path)
        if max_side is not None:
            arr = _downsample_nearest(arr, max_side)
        if arr.ndim == 2:
            h, w, c = arr.shape[0], arr.shape[1], 1
        else:
            h, w, c = arr.shape
        if dims is None:
            dims = (w, h, c)
        elif dims != (w, h, c):
            raise DatasetError(
                f"{path.name} has dimensions {(w, h, c)}, expected {dims}"
            )
        frames.append(Frame(data=arr.reshape(-1), width=w, height=h, channels=c))
        ids.append(path.stem)
    return Sequence(frames=frames, frame_ids=ids)


def load_masks(directory, pattern: str = "*.png",
               exclude_unknown: bool = False) -> MaskSequence:
    """Load binary ground-truth masks.

    Grayscale values >= 128 map to 1 except the CDnet "unknown" shade (170),
    which maps to 0.  With ``exclude_unknown``, any pixel ever labeled 170 or
    85 (outside ROI) is dropped from the returned evaluation ROI.
    """
    files = _matching_files(directory, pattern)
    masks, ids = [], []
    roi = None
    dims = None
    for path in files:
        try:
            with Image.open(path) as img:
                raw = np.asarray(img.convert("L"))
        except Exception as exc:
            raise DatasetError(f"cannot decode {path.name}: {exc}") from exc
        if dims is None:
            dims = raw.shape
            roi = np.ones(dims, dtype=np.uint8)
        elif raw.shape != dims:
            raise DatasetError(
                f"{path.name} has shape {raw.shape}, expected {dims}"
            )
        mask = ((raw >= 128) & (raw != _SHADE_UNKNOWN)).astype(np.uint8)
        if exclude_unknown:
            roi[(raw == _SHADE_UNKNOWN) | (raw == _SHADE_OUTSIDE_ROI)] = 0
        masks.append(mask)
        ids.append(path.stem)
    return MaskSequence(masks=masks, frame_ids=ids,
                        roi=roi if exclude_unknown else None)


def save_image(data, path, *, width: int | None = None, height: int | None = None,
               channels: int | None = None, signed: bool = False) -> None:
    """Write an image vector or array as an 8-bit PNG.

    ``data`` may be a Frame, an (h, w) / (h, w, c) array, or a flat vector
    with explicit dims.  Values are clamped to [0, 1] and scaled to bytes with
    round-half-up.  Signed images (illumination / foreground residuals) are
    stored as 0.5 + value/2, so 0 maps to byte 128.
    """
    if isinstance(data, Frame):
        arr = data.as_array()
    else:
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 1:
            if width is None or height is None:
                raise ValueError("flat data requires width and height")
            c = channels if channels is not None else arr.size // (width * height)
            if arr.size != width * height * c:
                raise ValueError(
                    f"vector length {arr.size} does not match {width}x{height}x{c}"
                )
            arr = arr.reshape((height, width) if c == 1 else (height, width, c))
    if signed:
        arr = 0.5 + arr / 2.0
    arr = np.clip(arr, 0.0, 1.0)
    byte = np.floor(arr * 255.0 + 0.5).astype(np.uint8)
    if byte.ndim == 3 and byte.shape[2] == 1:
        byte = byte[:, :, 0]
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(byte).save(path, format="PNG")
    except OSError as exc:
        raise DatasetError(f"cannot write {path}: {exc}") from exc


def save_mask(mask: np.ndarray, path) -> None:
    """Write a binary (h, w) mask as a 0/255 PNG."""
    save_image(np.where(np.asarray(mask) > 0, 1.0, 0.0), path)
