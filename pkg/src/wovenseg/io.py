"""Label-frame stacks, greyscale stacks and dataset manifests.

Manifest grammar (UTF-8 text, one entry per line)::

    # comment                      anything after '#' is ignored
    pixel_size_um = 16.1           required, > 0
    depth_step_um = 16.1           required, > 0
    frame = pred/frame_0000.png    repeated, ordered, at least one
    ground_truth = truth/f0.png    repeated, ordered, optional
    class 3 = weft                 repeated; instance id -> weft | warp
    class 4 warp                   same, without the '='
    ground_truth_class 3 = warp    repeated; classes of ground-truth ids

Relative paths are resolved against the manifest's directory. When no
``ground_truth_class`` entry is present, ground-truth ids share ``class``.
"""
from __future__ import annotations

import enum
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError, ManifestError

MAX_LABEL = np.iinfo(np.uint16).max


class ClassLabel(str, enum.Enum):
    WEFT = "weft"
    WARP = "warp"

    @classmethod
    def parse(cls, text):
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ValueError(f"unknown class '{text}' (expected weft or warp)") from None


@dataclass(frozen=True, eq=False)
class LabelFrame:
    """One 2D grid of instance ids; 0 is background. Immutable."""

    labels: np.ndarray
    frame_index: int = 0

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
            raise DataError(f"label frame must be a nonempty 2D grid, got shape {arr.shape}")
        if arr.dtype != np.uint16:
            if arr.size and (arr.min() < 0 or arr.max() > MAX_LABEL):
                raise DataError(f"label out of 16-bit range in frame {self.frame_index}")
            arr = arr.astype(np.uint16)
        else:
            arr = arr.copy() if arr.flags.writeable else arr
        arr.setflags(write=False)
        object.__setattr__(self, "labels", arr)

    @property
    def height(self):
        return self.labels.shape[0]

    @property
    def width(self):
        return self.labels.shape[1]

    def with_labels(self, labels):
        return LabelFrame(labels, self.frame_index)

    def __eq__(self, other):
        if not isinstance(other, LabelFrame):
            return NotImplemented
        return self.frame_index == other.frame_index and np.array_equal(self.labels, other.labels)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class GreyFrame:
    """Greyscale intensities in [0, 1]."""

    intensities: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.intensities, dtype=np.float64)
        if arr.ndim != 2 or arr.size == 0:
            raise DataError(f"grey frame must be a nonempty 2D grid, got shape {arr.shape}")
        if np.isnan(arr).any() or arr.min() < 0.0 or arr.max() > 1.0:
            raise DataError("grey intensities must lie in [0, 1]")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "intensities", arr)

    @property
    def height(self):
        return self.intensities.shape[0]

    @property
    def width(self):
        return self.intensities.shape[1]


@dataclass
class DatasetManifest:
    frame_paths: list[Path]
    pixel_size_um: float
    depth_step_um: float
    class_map: dict[int, ClassLabel] = field(default_factory=dict)
    ground_truth_paths: list[Path] | None = None
    ground_truth_class_map: dict[int, ClassLabel] | None = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.frame_paths:
            raise ManifestError("empty frame list", key="frame")
        for key in ("pixel_size_um", "depth_step_um"):
            value = getattr(self, key)
            if not np.isfinite(value) or value <= 0:
                raise ManifestError(f"must be positive, got {value}", key=key)
        if self.ground_truth_paths is not None and len(self.ground_truth_paths) != len(self.frame_paths):
            raise ManifestError(
                f"ground truth length mismatch: {len(self.ground_truth_paths)} ground_truth "
                f"entries for {len(self.frame_paths)} frames",
                key="ground_truth",
            )

    @property
    def truth_classes(self):
        if self.ground_truth_class_map:
            return self.ground_truth_class_map
        return self.class_map


def _parse_positive(value, lineno, key):
    try:
        number = float(value)
    except ValueError:
        raise ManifestError(f"not a number: '{value}'", line=lineno, key=key) from None
    if not np.isfinite(number) or number <= 0:
        raise ManifestError(f"nonpositive physical dimension {value}", line=lineno, key=key)
    return number


def parse_manifest(text, base_dir=None):
    """Parse manifest text; relative paths resolve against ``base_dir``."""
    base = Path(base_dir) if base_dir is not None else None
    scalars = {}
    frames, truths = [], []
    classes, truth_classes = {}, {}
    last_line = 0

    def resolve(raw):
        p = Path(raw)
        return p if base is None or p.is_absolute() else base / p

    for lineno, raw in enumerate(text.splitlines(), start=1):
        last_line = lineno
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, value = (s.strip() for s in line.split("=", 1))
        else:
            # bare "class <id> <weft|warp>" form
            parts = line.split()
            if len(parts) != 3 or parts[0] not in ("class", "ground_truth_class"):
                raise ManifestError("expected 'key = value'", line=lineno)
            key, value = " ".join(parts[:2]), parts[2]
        if not value:
            raise ManifestError("missing value", line=lineno, key=key)
        head, *rest = key.split()
        if head in ("pixel_size_um", "depth_step_um") and not rest:
            if head in scalars:
                raise ManifestError("duplicate key", line=lineno, key=head)
            scalars[head] = _parse_positive(value, lineno, head)
        elif head == "frame" and not rest:
            frames.append(resolve(value))
        elif head == "ground_truth" and not rest:
            truths.append(resolve(value))
        elif head in ("class", "ground_truth_class") and len(rest) == 1:
            try:
                ident = int(rest[0])
            except ValueError:
                raise ManifestError(f"instance id must be an integer, got '{rest[0]}'",
                                    line=lineno, key=head) from None
            if not 0 < ident <= MAX_LABEL:
                raise ManifestError(f"instance id {ident} outside 1..{MAX_LABEL}", line=lineno, key=head)
            try:
                label = ClassLabel.parse(value)
            except ValueError as exc:
                raise ManifestError(str(exc), line=lineno, key=head) from None
            target = classes if head == "class" else truth_classes
            if ident in target and target[ident] is not label:
                raise ManifestError(f"conflicting class for id {ident}", line=lineno, key=head)
            target[ident] = label
        else:
            raise ManifestError("unknown key", line=lineno, key=key)

    for key in ("pixel_size_um", "depth_step_um"):
        if key not in scalars:
            raise ManifestError("required key missing", line=last_line, key=key)
    if not frames:
        raise ManifestError("empty frame list", line=last_line, key="frame")
    if truths and len(truths) != len(frames):
        raise ManifestError(
            f"ground truth length mismatch: {len(truths)} ground_truth entries for {len(frames)} frames",
            line=last_line, key="ground_truth",
        )
    return DatasetManifest(
        frame_paths=frames,
        pixel_size_um=scalars["pixel_size_um"],
        depth_step_um=scalars["depth_step_um"],
        class_map=classes,
        ground_truth_paths=truths or None,
        ground_truth_class_map=truth_classes or None,
    )


def load_manifest(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    return parse_manifest(path.read_text(encoding="utf-8"), base_dir=path.parent.resolve())


def format_manifest(manifest, relative_to=None):
    def fmt(p):
        p = Path(p)
        if relative_to is not None and p.is_absolute():
            try:
                return Path(os.path.relpath(p, relative_to)).as_posix()
            except ValueError:
                pass
        return p.as_posix()

    lines = [
        f"pixel_size_um = {manifest.pixel_size_um!r}",
        f"depth_step_um = {manifest.depth_step_um!r}",
    ]
    lines += [f"frame = {fmt(p)}" for p in manifest.frame_paths]
    lines += [f"ground_truth = {fmt(p)}" for p in manifest.ground_truth_paths or ()]
    lines += [f"class {i} = {c.value}" for i, c in sorted(manifest.class_map.items())]
    lines += [f"ground_truth_class {i} = {c.value}"
              for i, c in sorted((manifest.ground_truth_class_map or {}).items())]
    return "\n".join(lines) + "\n"


def save_manifest(manifest, path):
    """Write ``manifest``; absolute paths are rewritten relative to its directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_manifest(manifest, relative_to=path.parent.resolve()), encoding="utf-8")
    return path


# --- label stacks ------------------------------------------------------------

def read_label_png(path):
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.mode not in ("I;16", "I;16B", "I;16L", "I", "L", "P", "1"):
                raise DataError(f"{path}: not a single-channel label image (mode {im.mode})")
            arr = np.array(im)
    except (OSError, SyntaxError) as exc:
        raise DataError(f"unreadable image {path}: {exc}") from exc
    if arr.ndim != 2:
        raise DataError(f"{path}: not a single-channel label image")
    if arr.size and (arr.min() < 0 or arr.max() > MAX_LABEL):
        raise DataError(f"{path}: label exceeds 16-bit range")
    return arr.astype(np.uint16, copy=False)


def write_label_png(labels, path):
    arr = np.asarray(labels)
    if arr.size and (arr.min() < 0 or arr.max() > MAX_LABEL):
        raise DataError(f"label overflow writing {path}")
    Image.fromarray(np.ascontiguousarray(arr, dtype=np.uint16)).save(path, format="PNG")
    return Path(path)


def _check_uniform(frames):
    shape = frames[0].labels.shape
    for f in frames[1:]:
        if f.labels.shape != shape:
            raise DataError(f"dimension mismatch at frame {f.frame_index}: "
                            f"{f.labels.shape} vs {shape}")


def load_label_stack(manifest, which="predictions", threads=None):
    """Load the prediction or ground-truth stack named in ``manifest``."""
    if which == "predictions":
        paths = manifest.frame_paths
    elif which == "ground_truth":
        if manifest.ground_truth_paths is None:
            raise DataError("manifest has no ground_truth entries")
        paths = manifest.ground_truth_paths
    else:
        raise ValueError(f"which must be 'predictions' or 'ground_truth', not {which!r}")
    with ThreadPoolExecutor(max_workers=threads or 1) as pool:
        arrays = list(pool.map(read_label_png, paths))
    frames = [LabelFrame(a, i) for i, a in enumerate(arrays)]
    _check_uniform(frames)
    return frames


def frame_filename(index):
    return f"frame_{index:05d}.png"


def save_label_stack(frames, directory, threads=None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = [directory / frame_filename(i) for i in range(len(frames))]
    with ThreadPoolExecutor(max_workers=threads or 1) as pool:
        list(pool.map(lambda fp: write_label_png(fp[0].labels, fp[1]), zip(frames, paths)))
    return paths


def instances_in_frame(frame):
    """Pixel count per nonzero instance id."""
    ids, counts = np.unique(frame.labels, return_counts=True)
    return {int(i): int(c) for i, c in zip(ids, counts) if i != 0}


def stack_array(frames):
    _check_uniform(frames)
    return np.stack([f.labels for f in frames])


def frames_from_array(volume):
    return [LabelFrame(np.array(volume[z]), z) for z in range(volume.shape[0])]


# --- greyscale stacks ---------------------------------------------------------

def read_grey_png(path):
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L"):
            return GreyFrame(np.array(im).astype(np.float64) / 65535.0)
        if im.mode == "I":
            arr = np.array(im).astype(np.float64)
            return GreyFrame(arr / 65535.0)
        return GreyFrame(np.array(im.convert("L")).astype(np.float64) / 255.0)


def write_grey_png(frame, path):
    arr = np.rint(np.clip(frame.intensities, 0.0, 1.0) * 65535.0).astype(np.uint16)
    Image.fromarray(arr).save(path, format="PNG")
    return Path(path)


def list_images(directory):
    directory = Path(directory)
    paths = sorted(p for p in directory.iterdir()
                   if p.suffix.lower() in (".png", ".tif", ".tiff", ".jpg", ".jpeg", ".bmp"))
    if not paths:
        raise DataError(f"no images in {directory}")
    return paths
