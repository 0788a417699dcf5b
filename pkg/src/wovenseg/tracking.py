"""Frame-to-frame IoU tracking of yarn instances."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .io import ClassLabel, LabelFrame, MAX_LABEL
from .kernels import overlap_table

DEFAULT_IOU_THRESHOLD = 0.4


@dataclass(frozen=True)
class YarnInfo:
    cls: ClassLabel
    frames_present: tuple[int, ...]


@dataclass(frozen=True)
class InstanceMask:
    frame_index: int
    local_id: int
    cls: ClassLabel
    pixels: frozenset

    @classmethod
    def from_frame(cls, frame, local_id, class_map):
        rows, cols = np.nonzero(frame.labels == local_id)
        if rows.size == 0:
            raise DataError(f"instance {local_id} absent from frame {frame.frame_index}")
        return cls(frame.frame_index, int(local_id), class_map[int(local_id)],
                   frozenset(zip(rows.tolist(), cols.tolist())))


@dataclass(frozen=True, eq=False)
class TrackedStack:
    """Frames whose labels are global yarn ids, plus a per-yarn index."""

    frames: tuple[LabelFrame, ...]
    yarn_index: dict[int, YarnInfo]
    params: dict = field(default_factory=dict)

    @classmethod
    def from_frames(cls, frames, class_map, params=None):
        """Index an already globally labelled stack."""
        frames = tuple(LabelFrame(f.labels, i) for i, f in enumerate(frames))
        present: dict[int, list[int]] = {}
        for f in frames:
            for yid in np.unique(f.labels):
                if yid:
                    present.setdefault(int(yid), []).append(f.frame_index)
        missing = sorted(set(present) - set(class_map))
        if missing:
            raise DataError(f"unknown label(s) {missing[:10]} not in class map")
        index = {y: YarnInfo(ClassLabel(class_map[y]), tuple(fr)) for y, fr in sorted(present.items())}
        return cls(frames, index, dict(params or {}))

    @property
    def class_map(self):
        return {y: info.cls for y, info in self.yarn_index.items()}

    @property
    def n_yarns(self):
        return len(self.yarn_index)

    def array(self):
        return np.stack([f.labels for f in self.frames])

    def __eq__(self, other):
        if not isinstance(other, TrackedStack):
            return NotImplemented
        return (len(self.frames) == len(other.frames)
                and all(a == b for a, b in zip(self.frames, other.frames))
                and self.yarn_index == other.yarn_index)

    __hash__ = None


def iou(a, b):
    """|a & b| / |a | b| for pixel sets; 0 when both are empty."""
    a = a if isinstance(a, (set, frozenset)) else set(a)
    b = b if isinstance(b, (set, frozenset)) else set(b)
    union = len(a | b)
    if union == 0:
        return 0.0
    return len(a & b) / union


def iou_matrix(prev_labels, next_labels):
    """IoU between every instance of two label grids.

    Returns ``(prev_ids, next_ids, iou)`` with ``iou[i, j]`` for
    ``prev_ids[i]`` against ``next_ids[j]``.
    """
    ids_p, ids_n, inter, area_p, area_n = overlap_table(prev_labels, next_labels)
    union = area_p[:, None] + area_n[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        m = np.where(union > 0, inter / np.maximum(union, 1), 0.0)
    return ids_p, ids_n, m


def _classes_of(ids, class_map, frame_index):
    out = []
    for i in ids:
        try:
            out.append(ClassLabel(class_map[int(i)]))
        except KeyError:
            raise DataError(f"unknown label {int(i)} in frame {frame_index}: not in class map") from None
    return np.array([c is ClassLabel.WEFT for c in out], dtype=bool)


def associate(prev_ids, prev_weft, next_ids, next_weft, ious, threshold):
    """Assign successors to predecessors.

    Each successor takes its best same-class predecessor if that IoU clears
    ``threshold``. When several successors pick the same predecessor the
    highest IoU wins, ties to the lower successor id; losers get nothing.
    Returns ``{next_id: prev_id}``.
    """
    if prev_ids.size == 0 or next_ids.size == 0:
        return {}
    same = prev_weft[:, None] == next_weft[None, :]
    masked = np.where(same, ious, -1.0)
    best = np.argmax(masked, axis=0)  # lowest predecessor index on ties
    best_iou = masked[best, np.arange(next_ids.size)]
    claims: dict[int, tuple[float, int]] = {}
    for j in np.flatnonzero(best_iou >= threshold):
        key = (-best_iou[j], int(next_ids[j]))
        i = int(best[j])
        if i not in claims or key < claims[i]:
            claims[i] = key
    return {nid: int(prev_ids[i]) for i, (_, nid) in claims.items()}


def track(stack, class_map, R=DEFAULT_IOU_THRESHOLD):
    """Relabel per-frame instances into globally consistent yarn ids."""
    if not 0 < R <= 1:
        raise DataError(f"IoU threshold must lie in (0, 1], got {R}")
    if not stack:
        raise DataError("empty stack")
    shape = stack[0].labels.shape
    next_yarn = 1
    out_frames = []
    yarn_class: dict[int, ClassLabel] = {}
    prev_tracked = None

    for k, frame in enumerate(stack):
        if frame.labels.shape != shape:
            raise DataError(f"dimension mismatch at frame {k}")
        local = frame.labels
        if prev_tracked is None:
            ids = np.unique(local)
            ids = ids[ids != 0].astype(np.int64)
            _classes_of(ids, class_map, k)
            mapping = {}
        else:
            p_ids, n_ids, m = iou_matrix(prev_tracked, local)
            p_weft = np.array([yarn_class[int(y)] is ClassLabel.WEFT for y in p_ids], dtype=bool)
            n_weft = _classes_of(n_ids, class_map, k)
            mapping = associate(p_ids, p_weft, n_ids, n_weft, m, R)
            ids = n_ids
        for lid in ids:
            lid = int(lid)
            if lid not in mapping:
                mapping[lid] = next_yarn
                yarn_class[next_yarn] = ClassLabel(class_map[lid])
                next_yarn += 1
        if next_yarn - 1 > MAX_LABEL:
            raise DataError("more than 65535 yarns; ids no longer fit 16 bits")
        lut = np.zeros(int(local.max()) + 1, dtype=np.uint16)
        for lid, yid in mapping.items():
            lut[lid] = yid
        tracked = lut[local]
        out_frames.append(LabelFrame(tracked, k))
        prev_tracked = tracked

    return TrackedStack.from_frames(out_frames, yarn_class, {"R": R})


def relabel_compact(tracked):
    """Renumber yarns 1..Y in order of first appearance (ties by old id)."""
    order = sorted(tracked.yarn_index, key=lambda y: (tracked.yarn_index[y].frames_present[0], y))
    mapping = {old: new for new, old in enumerate(order, start=1)}
    return relabel(tracked, mapping)


def relabel(tracked, mapping):
    """Apply ``{old: new}`` to every frame; unmapped ids are kept."""
    top = max([0, *tracked.yarn_index, *mapping])
    lut = np.arange(top + 1, dtype=np.int64)
    for old, new in mapping.items():
        lut[old] = new
    if lut.max() > MAX_LABEL:
        raise DataError("relabel produced ids beyond 16 bits")
    lut = lut.astype(np.uint16)
    frames = [LabelFrame(lut[f.labels], f.frame_index) for f in tracked.frames]
    classes = {}
    for old, info in tracked.yarn_index.items():
        new = int(lut[old])
        if classes.get(new, info.cls) is not info.cls:
            raise DataError(f"relabel merges yarns of different classes into {new}")
        classes[new] = info.cls
    return TrackedStack.from_frames(frames, classes, tracked.params)
