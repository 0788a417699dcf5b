"""Regional-block correction of false positives and false negatives.

A yarn seen exactly once inside a block, away from the block's edges, is a
false positive unless some other block shows it at least twice around that
frame. Frames missing between two sightings of a yarn inside one block are
false negatives and get filled by blending signed distance fields of the
bounding masks; existing predictions always keep their pixels.
"""
from __future__ import annotations

import csv
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DataError
from .io import LabelFrame
from .tracking import TrackedStack, iou_matrix, relabel

DEFAULT_BLOCK_SIZE = 10
FP = "FP"
FN = "FN"


@dataclass(frozen=True, order=True)
class Flag:
    frame: int
    yarn: int
    kind: str


@dataclass(frozen=True)
class RegionalBlock:
    start_frame: int
    size: int

    def __post_init__(self):
        if self.size < 3:
            raise DataError(f"block size must be at least 3, got {self.size}")
        if self.start_frame < 0:
            raise DataError("block starts before the dataset")

    @property
    def last_frame(self):
        return self.start_frame + self.size - 1

    @property
    def member_frames(self):
        return range(self.start_frame, self.start_frame + self.size)


@dataclass(frozen=True)
class Removal:
    yarn: int
    frame: int
    pixels: int


@dataclass(frozen=True)
class Fill:
    yarn: int
    frame: int
    pixels: int


@dataclass(frozen=True)
class Link:
    yarn: int
    absorbed: int
    frame: int


@dataclass
class CorrectionLog:
    removals: list[Removal] = field(default_factory=list)
    fills: list[Fill] = field(default_factory=list)
    links: list[Link] = field(default_factory=list)

    def is_empty(self):
        return not (self.removals or self.fills or self.links)

    def modified_frames(self):
        return {r.frame for r in self.removals} | {f.frame for f in self.fills}

    def merge(self, other):
        return CorrectionLog(self.removals + other.removals, self.fills + other.fills,
                             self.links + other.links)


def regional_blocks(n_frames, block_size):
    if block_size < 3:
        raise DataError(f"block size must be at least 3, got {block_size}")
    if block_size > n_frames:
        raise DataError(f"block size {block_size} exceeds dataset length {n_frames}")
    return [RegionalBlock(k, block_size) for k in range(n_frames - block_size + 1)]


def scan_blocks(tracked, block_size=DEFAULT_BLOCK_SIZE):
    """Flag false positives and false negatives with a stride-1 block sweep."""
    blocks = regional_blocks(len(tracked.frames), block_size)
    flags = set()
    for yarn, info in tracked.yarn_index.items():
        occ = info.frames_present
        candidates, corroborated = set(), set()
        for b in blocks:
            lo = bisect_left(occ, b.start_frame)
            hi = bisect_right(occ, b.last_frame)
            inside = occ[lo:hi]
            if len(inside) == 1:
                f = inside[0]
                if b.start_frame < f < b.last_frame:
                    candidates.add(f)
            elif len(inside) > 1:
                corroborated.update(inside)
                for a, c in zip(inside, inside[1:]):
                    flags.update(Flag(m, yarn, FN) for m in range(a + 1, c))
        flags.update(Flag(f, yarn, FP) for f in candidates - corroborated)
    return sorted(flags)


def remove_false_positives(tracked, flags):
    """Erase every FP-flagged (yarn, frame) mask."""
    log = CorrectionLog()
    targets: dict[int, list[int]] = {}
    for fl in flags:
        if fl.kind == FP:
            targets.setdefault(fl.frame, []).append(fl.yarn)
    if not targets:
        return tracked, log
    frames = list(tracked.frames)
    for k in sorted(targets):
        labels = frames[k].labels.copy()
        for yarn in sorted(set(targets[k])):
            hit = labels == yarn
            n = int(hit.sum())
            if n:
                labels[hit] = 0
                log.removals.append(Removal(yarn, k, n))
        frames[k] = LabelFrame(labels, k)
    classes = tracked.class_map
    return TrackedStack.from_frames(frames, classes, tracked.params), log


def link_fragments(tracked, block_size=DEFAULT_BLOCK_SIZE, min_iou=0.0):
    """Join track pieces separated by a short run of empty frames.

    A yarn that starts at frame ``s`` is appended to a same-class yarn ending
    at ``e`` when ``1 < s - e < block_size``, their end masks overlap with IoU
    above ``min_iou``, the tail has no same-class overlap in frame ``e + 1``
    and the head none in frame ``s - 1`` (the yarn really vanished rather than
    changing id). Pairs are taken greedily by descending IoU, each tail and
    head used once. The tracker itself never bridges gaps.
    """
    index = tracked.yarn_index
    frames = tracked.frames
    n = len(frames)
    first = {y: info.frames_present[0] for y, info in index.items()}
    last = {y: info.frames_present[-1] for y, info in index.items()}

    cache = {}

    def overlaps(e, s):
        if (e, s) not in cache:
            p, q, m = iou_matrix(frames[e].labels, frames[s].labels)
            cache[e, s] = ({int(v): i for i, v in enumerate(p)}, {int(v): j for j, v in enumerate(q)}, m)
        return cache[e, s]

    def continues(y, z, other_z):
        # does some same-class instance in other_z overlap yarn y's mask at z?
        if not 0 <= other_z < n:
            return False
        if z < other_z:
            pi, qi, m = overlaps(z, other_z)
            row = m[pi[y]]
            ids = qi
        else:
            pi, qi, m = overlaps(other_z, z)
            row = m[:, qi[y]]
            ids = pi
        cls = index[y].cls
        return any(row[j] > 0 and index[o].cls is cls for o, j in ids.items())

    tails = {y: e for y, e in last.items() if e < n - 1 and not continues(y, e, e + 1)}
    heads = {y: s for y, s in first.items() if s > 0 and not continues(y, s, s - 1)}
    by_last: dict[int, list[int]] = {}
    for y, e in tails.items():
        by_last.setdefault(e, []).append(y)

    candidates = []
    for head, s in heads.items():
        for e in range(max(0, s - block_size + 1), s - 1):
            for tail in by_last.get(e, ()):
                if tail == head or index[tail].cls is not index[head].cls:
                    continue
                pi, qi, m = overlaps(e, s)
                value = float(m[pi[tail], qi[head]])
                if value > min_iou:
                    candidates.append((-value, tail, head))

    candidates.sort()
    used_tail, used_head, parent = set(), set(), {}
    for _, tail, head in candidates:
        if tail in used_tail or head in used_head:
            continue
        used_tail.add(tail)
        used_head.add(head)
        parent[head] = tail

    def root(y):
        while y in parent:
            y = parent[y]
        return y

    log = CorrectionLog()
    if not parent:
        return tracked, log
    mapping = {head: root(head) for head in parent}
    log.links.extend(Link(mapping[h], h, first[h]) for h in sorted(parent, key=lambda h: (first[h], h)))
    return relabel(tracked, mapping), log


# --- interpolation -------------------------------------------------------------

def signed_distance(mask):
    """Signed Euclidean distance to the mask boundary, negative inside.

    Distances are measured to pixel edges, so boundary pixels sit at -0.5 and
    their outside neighbours at +0.5.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.all():
        raise DataError("mask covers the whole grid; no boundary")
    outside = ndimage.distance_transform_edt(~mask)
    inside = ndimage.distance_transform_edt(mask)
    return np.where(mask, 0.5 - inside, outside - 0.5)


def _shift(mask, dr, dc):
    out = np.zeros_like(mask)
    h, w = mask.shape
    src = mask[max(0, -dr):h - max(0, dr), max(0, -dc):w - max(0, dc)]
    out[max(0, dr):max(0, dr) + src.shape[0], max(0, dc):max(0, dc) + src.shape[1]] = src
    return out


def _blend(before, after, t):
    return (1.0 - t) * signed_distance(before) + t * signed_distance(after)


def interpolate_masks(before, after, t):
    """Blend two boolean masks of equal shape at fraction ``t``.

    Returns ``{p : (1-t) d_before(p) + t d_after(p) <= 0}``. If that set is
    empty (masks too far apart to morph) the shapes are blended about their
    centroids and placed at the interpolated centroid instead.
    """
    before = np.asarray(before, dtype=bool)
    after = np.asarray(after, dtype=bool)
    if before.shape != after.shape:
        raise DataError("masks must share a shape")
    if not before.any() or not after.any():
        raise DataError("interpolation needs two nonempty masks")
    rows, cols = np.nonzero(before | after)
    r0, r1 = rows.min() - 1, rows.max() + 2
    c0, c1 = cols.min() - 1, cols.max() + 2
    pad = ((max(0, -r0), max(0, r1 - before.shape[0])), (max(0, -c0), max(0, c1 - before.shape[1])))
    b = np.pad(before, pad)
    a = np.pad(after, pad)
    r0 += pad[0][0]
    r1 += pad[0][0]
    c0 += pad[1][0]
    c1 += pad[1][0]
    field_ = _blend(b[r0:r1, c0:c1], a[r0:r1, c0:c1], t)
    result = np.zeros_like(b)
    result[r0:r1, c0:c1] = field_ <= 0
    if not result.any():
        result = _centroid_blend(b, a, t)
    return result[pad[0][0]:pad[0][0] + before.shape[0], pad[1][0]:pad[1][0] + before.shape[1]]


def _centroid_blend(before, after, t):
    cb = np.argwhere(before).mean(axis=0)
    ca = np.argwhere(after).mean(axis=0)
    target = (1.0 - t) * cb + t * ca
    db = np.rint(target - cb).astype(int)
    da = np.rint(target - ca).astype(int)
    sb = _shift(before, *db)
    sa = _shift(after, *da)
    if not sb.any() or not sa.any():
        sb, sa = before, after
    f = _blend(sb, sa, t)
    out = f <= 0
    if not out.any():
        support = sb | sa
        out = support & (f <= f[support].min())
    return out


def interpolate_gap(mask_before, mask_after, t):
    """Interpolate between two pixel sets of ``(row, col)`` tuples."""
    if not 0.0 < t < 1.0:
        raise ValueError(f"t must lie in (0, 1), got {t}")
    before = set(mask_before)
    after = set(mask_after)
    if not before or not after:
        raise DataError("interpolation needs two nonempty masks")
    pts = np.array(sorted(before | after))
    lo = pts.min(axis=0)
    shape = tuple(pts.max(axis=0) - lo + 1)
    gb = np.zeros(shape, dtype=bool)
    ga = np.zeros(shape, dtype=bool)
    gb[tuple((np.array(sorted(before)) - lo).T)] = True
    ga[tuple((np.array(sorted(after)) - lo).T)] = True
    res = interpolate_masks(gb, ga, t)
    return {(int(r + lo[0]), int(c + lo[1])) for r, c in np.argwhere(res)}


def fill_false_negatives(tracked, flags):
    """Fill FN-flagged frames with interpolated masks, on background only."""
    log = CorrectionLog()
    todo = sorted(fl for fl in flags if fl.kind == FN)
    if not todo:
        return tracked, log
    vol = tracked.array().copy()
    for fl in todo:
        occ = tracked.yarn_index[fl.yarn].frames_present
        i = bisect_left(occ, fl.frame)
        if i == 0 or i == len(occ) or occ[i] == fl.frame:
            raise DataError(f"FN flag for yarn {fl.yarn} at frame {fl.frame} is not bounded by sightings")
        prev, nxt = occ[i - 1], occ[i]
        t = (fl.frame - prev) / (nxt - prev)
        shape = interpolate_masks(vol[prev] == fl.yarn, vol[nxt] == fl.yarn, t)
        write = shape & (vol[fl.frame] == 0)
        n = int(write.sum())
        if n:
            vol[fl.frame][write] = fl.yarn
            log.fills.append(Fill(fl.yarn, fl.frame, n))
    frames = [LabelFrame(vol[k], k) for k in range(vol.shape[0])]
    return TrackedStack.from_frames(frames, tracked.class_map, tracked.params), log


def correct(tracked, block_size=DEFAULT_BLOCK_SIZE, link=True):
    """Link fragments, drop false positives, then fill false negatives.

    Linking runs before the FP scan so that a yarn seen once just before a
    gap is not mistaken for a spurious detection, and again after removal
    since dropping a spurious piece can expose a bridgeable gap.
    """
    log = CorrectionLog()
    if link:
        tracked, part = link_fragments(tracked, block_size)
        log = log.merge(part)
    flags = scan_blocks(tracked, block_size)
    tracked, part = remove_false_positives(tracked, flags)
    log = log.merge(part)
    if link and part.removals:
        tracked, part = link_fragments(tracked, block_size)
        log = log.merge(part)
    flags = scan_blocks(tracked, block_size)
    tracked, part = fill_false_negatives(tracked, flags)
    log = log.merge(part)
    params = dict(tracked.params, block_size=block_size)
    return TrackedStack(tracked.frames, tracked.yarn_index, params), log


def write_log_csv(log, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "yarn", "frame", "pixels"])
        for r in log.removals:
            w.writerow([FP, r.yarn, r.frame, r.pixels])
        for f in log.fills:
            w.writerow([FN, f.yarn, f.frame, f.pixels])
    return path


def write_links_csv(log, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["yarn", "absorbed", "frame"])
        for ln in log.links:
            w.writerow([ln.yarn, ln.absorbed, ln.frame])
    return path
