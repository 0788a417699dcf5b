"""Synthetic multi-ply plain-weave label stacks with exact ground truth.

Coordinates: a frame is ``(row, col)``; frames advance along ``z``. Each ply
owns a horizontal slab of rows. Its wefts are straight bands spanning every
column with an elliptical ``(z, row)`` cross-section; its warps run along
``z`` with an elliptical ``(col, row)`` cross-section whose centre row
follows a cosine, passing alternately over and under consecutive wefts. The
weft pitch is therefore half the crimp wavelength.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import GeometryOverflowError, InjectionError
from .io import ClassLabel, DatasetManifest, LabelFrame, MAX_LABEL, frame_filename

# fixed substream indices, one per purpose
_STREAM_SIZE, _STREAM_FP, _STREAM_FN, _STREAM_JITTER = 0, 1, 2, 3

# wefts are drawn only where their band is at least half its full thickness
_WEFT_Z_EXTENT = math.sqrt(3.0) / 2.0


def _rng(seed, stream):
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(stream,)))


@dataclass(frozen=True)
class WeaveSpec:
    n_weft_layers: int = 4
    n_weft_per_layer: int = 3
    n_warp: int = 8
    yarn_half_axes: tuple = (8.0, 4.0)
    crimp_amplitude: float = 9.0
    crimp_wavelength: float = 60.0
    frame_width: int = 512
    frame_height: int = 256
    n_frames: int = 200
    seed: int = 0
    size_jitter: float = 0.0
    pixel_size_um: float = 16.1
    depth_step_um: float = 16.1

    def __post_init__(self):
        for name in ("n_weft_layers", "n_weft_per_layer", "n_warp", "frame_width", "frame_height", "n_frames"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be at least 1")
        if min(self.yarn_half_axes) < 1:
            raise ValueError("yarn half-axes must be at least 1 pixel")
        if self.crimp_wavelength < 2:
            raise ValueError("crimp wavelength must be at least 2 frames")
        if self.crimp_amplitude < 0:
            raise ValueError("crimp amplitude must be nonnegative")
        if not 0 <= self.size_jitter < 0.5:
            raise ValueError("size_jitter must lie in [0, 0.5)")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @property
    def n_wefts(self):
        return self.n_weft_layers * self.n_weft_per_layer

    @property
    def n_yarns(self):
        return self.n_wefts + self.n_warp


@dataclass(frozen=True)
class YarnGeometry:
    yarn_id: int
    cls: ClassLabel
    ply: int
    slot: int
    half_axes: tuple
    row: int          # ply centre row
    axis_pos: float   # weft: centre frame; warp: centre column
    sign: int = 1     # warp: +1 passes over even-numbered wefts


class WeaveLayout:
    """Analytic description of every yarn in a :class:`WeaveSpec`."""

    def __init__(self, spec):
        self.spec = spec
        self.slab = spec.frame_height / spec.n_weft_layers
        self.pitch = spec.crimp_wavelength / 2.0
        self.z0 = (spec.n_frames - 1 - (spec.n_weft_per_layer - 1) * self.pitch) / 2.0
        rng = _rng(spec.seed, _STREAM_SIZE)
        a0, b0 = (float(v) for v in spec.yarn_half_axes)
        scale = 1.0 + spec.size_jitter * rng.uniform(-1.0, 1.0, size=(spec.n_yarns, 2))

        yarns = []
        yid = 1
        for ply in range(spec.n_weft_layers):
            for i in range(spec.n_weft_per_layer):
                yarns.append(YarnGeometry(yid, ClassLabel.WEFT, ply, i,
                                          (a0 * scale[yid - 1, 0], b0 * scale[yid - 1, 1]),
                                          self.ply_row(ply), self.z0 + i * self.pitch))
                yid += 1
        per_ply = [0] * spec.n_weft_layers
        for j in range(spec.n_warp):
            per_ply[j % spec.n_weft_layers] += 1
        for j in range(spec.n_warp):
            ply, slot = j % spec.n_weft_layers, j // spec.n_weft_layers
            col = math.floor((slot + 0.5) * spec.frame_width / per_ply[ply])
            yarns.append(YarnGeometry(yid, ClassLabel.WARP, ply, slot,
                                      (a0 * scale[yid - 1, 0], b0 * scale[yid - 1, 1]),
                                      self.ply_row(ply), float(col), 1 if slot % 2 == 0 else -1))
            yid += 1
        self.yarns = yarns
        self.per_ply_warps = per_ply
        self._check_fit()

    def ply_row(self, ply):
        return math.floor((ply + 0.5) * self.slab)

    def by_id(self, yarn_id):
        return self.yarns[yarn_id - 1]

    @property
    def class_map(self):
        return {y.yarn_id: y.cls for y in self.yarns}

    def warp_center_row(self, yarn, z):
        """Centre row of a warp yarn's cross-section at frame ``z``."""
        y = yarn if isinstance(yarn, YarnGeometry) else self.by_id(yarn)
        phase = math.pi * (np.asarray(z, dtype=np.float64) - self.z0) / self.pitch
        return y.row - y.sign * self.spec.crimp_amplitude * np.cos(phase)

    def weft_frames(self, yarn):
        a = yarn.half_axes[0] * _WEFT_Z_EXTENT
        lo = max(0, math.ceil(yarn.axis_pos - a))
        hi = min(self.spec.n_frames - 1, math.floor(yarn.axis_pos + a))
        return range(lo, hi + 1)

    def weft_half_thickness(self, yarn, z):
        a, b = yarn.half_axes
        dz = (z - yarn.axis_pos) / a
        if abs(dz) > _WEFT_Z_EXTENT:
            return None
        return math.floor(b * math.sqrt(1.0 - dz * dz) + 0.5)

    def _check_fit(self):
        s = self.spec
        amp = s.crimp_amplitude
        for y in self.yarns:
            a, b = y.half_axes
            top, bottom = y.ply * self.slab, (y.ply + 1) * self.slab - 1
            reach = (b if y.cls is ClassLabel.WEFT else amp + b) + 1
            if y.row - reach < top or y.row + reach > bottom:
                raise GeometryOverflowError(
                    f"yarn {y.yarn_id} needs {2 * reach + 1:.1f} rows but each ply slab has "
                    f"{self.slab:.1f}; reduce half-axes/crimp amplitude or plies")
            if y.cls is ClassLabel.WEFT:
                ext = a * _WEFT_Z_EXTENT
                if y.axis_pos - ext < 0 or y.axis_pos + ext > s.n_frames - 1:
                    raise GeometryOverflowError(
                        f"weft {y.yarn_id} extends outside frames 0..{s.n_frames - 1}; "
                        "increase n_frames or reduce crimp wavelength / weft count")
                if 2 * ext + 1 >= self.pitch and s.n_weft_per_layer > 1:
                    raise GeometryOverflowError(
                        f"wefts of one ply overlap along z: pitch {self.pitch:g} frames is too "
                        f"small for half-axis {a:g}")
            else:
                spacing = s.frame_width / self.per_ply_warps[y.ply]
                if y.axis_pos - a < 0 or y.axis_pos + a > s.frame_width - 1 or spacing < 2 * a + 2:
                    raise GeometryOverflowError(
                        f"warp {y.yarn_id} does not fit across {s.frame_width} columns "
                        f"with {self.per_ply_warps[y.ply]} warps in ply {y.ply}")

    # --- rasterization -------------------------------------------------------

    def yarn_box(self, yarn):
        """``(z0, z1, r0, r1, c0, c1)`` half-open bounds containing the yarn."""
        a, b = yarn.half_axes
        if yarn.cls is ClassLabel.WEFT:
            zs = self.weft_frames(yarn)
            return (zs.start, zs.stop, int(yarn.row - math.ceil(b)), int(yarn.row + math.ceil(b)) + 1,
                    0, self.spec.frame_width)
        reach = self.spec.crimp_amplitude + b
        return (0, self.spec.n_frames, int(math.floor(yarn.row - reach)), int(math.ceil(yarn.row + reach)) + 1,
                int(math.floor(yarn.axis_pos - a)), int(math.ceil(yarn.axis_pos + a)) + 1)

    def rasterize(self, yarn):
        """Boolean mask of ``yarn`` inside its :meth:`yarn_box`."""
        z0, z1, r0, r1, c0, c1 = self.yarn_box(yarn)
        mask = np.zeros((z1 - z0, r1 - r0, c1 - c0), dtype=bool)
        rows = np.arange(r0, r1, dtype=np.float64)
        a, b = yarn.half_axes
        if yarn.cls is ClassLabel.WEFT:
            for z in range(z0, z1):
                h = self.weft_half_thickness(yarn, z)
                if h is not None:
                    mask[z - z0, np.abs(rows - yarn.row) <= h, :] = True
        else:
            cols = np.arange(c0, c1, dtype=np.float64)
            dc = ((cols - yarn.axis_pos) / a) ** 2
            centres = self.warp_center_row(yarn, np.arange(z0, z1))
            for k, cy in enumerate(centres):
                dr = ((rows - cy) / b) ** 2
                mask[k] = dr[:, None] + dc[None, :] <= 1.0
        return mask


def render_weave(layout):
    """Label volume ``(z, row, col)``; lower yarn ids win contested pixels."""
    s = layout.spec
    vol = np.zeros((s.n_frames, s.frame_height, s.frame_width), dtype=np.uint16)
    for y in layout.yarns:
        z0, z1, r0, r1, c0, c1 = layout.yarn_box(y)
        view = vol[z0:z1, r0:r1, c0:c1]
        m = layout.rasterize(y) & (view == 0)
        view[m] = y.yarn_id
    return vol


def generate_weave(spec):
    """Error-free ``(predictions, ground_truth, manifest)`` for ``spec``."""
    layout = WeaveLayout(spec)
    vol = render_weave(layout)
    truth = [LabelFrame(vol[z], z) for z in range(spec.n_frames)]
    preds = [LabelFrame(vol[z], z) for z in range(spec.n_frames)]
    manifest = DatasetManifest(
        frame_paths=[Path("pred") / frame_filename(z) for z in range(spec.n_frames)],
        pixel_size_um=spec.pixel_size_um,
        depth_step_um=spec.depth_step_um,
        class_map=layout.class_map,
        ground_truth_paths=[Path("truth") / frame_filename(z) for z in range(spec.n_frames)],
        ground_truth_class_map=layout.class_map,
    )
    return preds, truth, manifest


def layup_adjacency(spec):
    """Yarn pairs whose rasterized bodies touch across a voxel face.

    Computed per yarn from the unresolved rasterization by dilation, so it is
    independent of the face-counting contact analysis.
    """
    layout = WeaveLayout(spec)
    shape = (spec.n_frames, spec.frame_height, spec.frame_width)
    struct = ndimage.generate_binary_structure(3, 1)
    boxes = {y.yarn_id: layout.yarn_box(y) for y in layout.yarns}
    masks = {y.yarn_id: layout.rasterize(y) for y in layout.yarns}
    pairs = set()
    for y in layout.yarns:
        z0, z1, r0, r1, c0, c1 = boxes[y.yarn_id]
        grown = ndimage.binary_dilation(np.pad(masks[y.yarn_id], 1), structure=struct)
        g0 = (z0 - 1, r0 - 1, c0 - 1)
        for other in layout.yarns:
            if other.yarn_id <= y.yarn_id:
                continue
            oz0, oz1, or0, or1, oc0, oc1 = boxes[other.yarn_id]
            lo = [max(g0[0], oz0, 0), max(g0[1], or0, 0), max(g0[2], oc0, 0)]
            hi = [min(z1 + 1, oz1, shape[0]), min(r1 + 1, or1, shape[1]), min(c1 + 1, oc1, shape[2])]
            if any(h <= l for l, h in zip(lo, hi)):
                continue
            gs = tuple(slice(l - g, h - g) for l, h, g in zip(lo, hi, g0))
            os_ = tuple(slice(l - o, h - o) for l, h, o in zip(lo, hi, (oz0, or0, oc0)))
            if (grown[gs] & masks[other.yarn_id][os_]).any():
                pairs.add(frozenset((y.yarn_id, other.yarn_id)))
    return pairs


# --- error injection -------------------------------------------------------------

@dataclass(frozen=True)
class ErrorSpec:
    fp_count: int = 0
    fn_gap_count: int = 0
    fn_gap_length: int = 1
    fn_gap_length_max: int | None = None
    jitter_px: int = 0
    seed: int = 0
    fp_half_axes: tuple = (5, 3)
    fp_clearance: int = 10

    def __post_init__(self):
        if self.fp_count < 0 or self.fn_gap_count < 0 or self.jitter_px < 0:
            raise ValueError("error counts and jitter must be nonnegative")
        if self.fn_gap_length < 1:
            raise ValueError("fn_gap_length must be at least 1")
        if self.fn_gap_length_max is not None and self.fn_gap_length_max < self.fn_gap_length:
            raise ValueError("fn_gap_length_max must be >= fn_gap_length")
        if self.fp_clearance < 1:
            raise ValueError("fp_clearance must be at least 1 frame")

    @property
    def is_null(self):
        return self.fp_count == 0 and self.fn_gap_count == 0 and self.jitter_px == 0


@dataclass(frozen=True)
class InjectionRecord:
    kind: str                 # "FP", "FN" or "JITTER"
    yarn: int
    frames: tuple
    pixels: int = 0
    cls: ClassLabel | None = None


def _ellipse(h, w, cr, cc, a, b):
    rr = np.arange(max(0, math.floor(cr - b)), min(h, math.ceil(cr + b) + 1))
    cc_ = np.arange(max(0, math.floor(cc - a)), min(w, math.ceil(cc + a) + 1))
    m = ((rr[:, None] - cr) / b) ** 2 + ((cc_[None, :] - cc) / a) ** 2 <= 1.0
    r, c = np.nonzero(m)
    return rr[r], cc_[c]


def _jitter(vol, radius, rng, log):
    """Roughen mask boundaries by up to ``radius`` px.

    Each of ``radius`` rounds drops a random half of the mask's inner boundary
    ring and claims a random half of the background ring just outside it.
    Only the largest connected piece is kept, so a mask never splits.
    """
    four = ndimage.generate_binary_structure(2, 1)
    for z in range(vol.shape[0]):
        frame = vol[z]
        for yid in np.unique(frame):
            if yid == 0:
                continue
            rows, cols = np.nonzero(frame == yid)
            r0, r1 = max(0, rows.min() - radius - 1), min(frame.shape[0], rows.max() + radius + 2)
            c0, c1 = max(0, cols.min() - radius - 1), min(frame.shape[1], cols.max() + radius + 2)
            view = frame[r0:r1, c0:c1]
            mask = view == yid
            new = mask.copy()
            for _ in range(radius):
                inner = new & ~ndimage.binary_erosion(new, structure=four, border_value=1)
                outer = ndimage.binary_dilation(new, structure=four) & ~new & (view == 0)
                new &= ~(inner & (rng.random(new.shape) < 0.5))
                new |= outer & (rng.random(new.shape) < 0.5)
            if ndimage.label(mask, four)[1] != 1:
                continue
            parts, count = ndimage.label(new, four)
            if count == 0:
                continue
            if count > 1:
                sizes = np.bincount(parts.ravel())
                sizes[0] = 0
                new = parts == int(np.argmax(sizes))
            changed = int((new ^ mask).sum())
            if changed:
                view[mask & ~new] = 0
                view[new] = yid
                log.append(InjectionRecord("JITTER", int(yid), (z,), changed))


def inject_errors(ground_truth, err):
    """Corrupt a ground-truth stack; returns ``(corrupted, injection_log)``.

    Order is jitter, then false-negative gaps, then false-positive masks.
    FP masks are placed on pixels that are background in both stacks for
    ``err.fp_clearance`` frames either side, so they never touch real yarns.
    """
    truth = np.stack([f.labels for f in ground_truth]).astype(np.uint16)
    vol = truth.copy()
    n, h, w = vol.shape
    log: list[InjectionRecord] = []
    if err.is_null:
        return [LabelFrame(vol[z], z) for z in range(n)], log

    if err.jitter_px:
        _jitter(vol, err.jitter_px, _rng(err.seed, _STREAM_JITTER), log)

    if err.fn_gap_count:
        rng = _rng(err.seed, _STREAM_FN)
        longest = err.fn_gap_length_max or err.fn_gap_length
        present = {}
        for z in range(n):
            for yid in np.unique(truth[z]):
                if yid:
                    present.setdefault(int(yid), []).append(z)
        # a gap of length L needs L interior frames plus one sighting on each side
        eligible = sorted(y for y, fr in present.items() if fr[-1] - fr[0] + 1 >= longest + 2)
        if len(eligible) < err.fn_gap_count:
            raise InjectionError(
                f"need {err.fn_gap_count} yarns whose span leaves room for a {longest}-frame gap "
                f"strictly inside it; only {len(eligible)} qualify")
        for yid in sorted(rng.choice(eligible, size=err.fn_gap_count, replace=False).tolist()):
            length = int(rng.integers(err.fn_gap_length, longest + 1))
            first, last = present[yid][0], present[yid][-1]
            start = int(rng.integers(first + 1, last - length + 1))
            frames = tuple(range(start, start + length))
            erased = 0
            for z in frames:
                hit = vol[z] == yid
                erased += int(hit.sum())
                vol[z][hit] = 0
            log.append(InjectionRecord("FN", yid, frames, erased))

    if err.fp_count:
        if n < 3:
            raise InjectionError("FP injection needs at least 3 frames (an interior frame)")
        rng = _rng(err.seed, _STREAM_FP)
        a, b = (float(v) for v in err.fp_half_axes)
        next_id = int(max(truth.max(), vol.max())) + 1
        occupied = (truth != 0) | (vol != 0)
        for _ in range(err.fp_count):
            if next_id > MAX_LABEL:
                raise InjectionError("no free 16-bit id for another FP")
            for _attempt in range(500):
                z = int(rng.integers(1, n - 1))
                cr = float(rng.uniform(b + 1, h - b - 2))
                cc = float(rng.uniform(a + 1, w - a - 2))
                rr, cc_ = _ellipse(h, w, cr, cc, a, b)
                if rr.size == 0:
                    continue
                z0, z1 = max(0, z - err.fp_clearance), min(n, z + err.fp_clearance + 1)
                r0, r1 = max(0, rr.min() - 1), min(h, rr.max() + 2)
                c0, c1 = max(0, cc_.min() - 1), min(w, cc_.max() + 2)
                if occupied[z0:z1, r0:r1, c0:c1].any():
                    continue
                break
            else:
                raise InjectionError("no background location with enough clearance for another FP")
            cls = ClassLabel.WEFT if rng.integers(0, 2) == 0 else ClassLabel.WARP
            vol[z, rr, cc_] = next_id
            occupied[z, rr, cc_] = True
            log.append(InjectionRecord("FP", next_id, (z,), int(rr.size), cls))
            next_id += 1

    return [LabelFrame(vol[z], z) for z in range(n)], log


def classes_with_injections(class_map, log):
    out = dict(class_map)
    out.update({r.yarn: r.cls for r in log if r.kind == "FP"})
    return out


def write_injection_csv(log, path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["kind", "yarn", "class", "frames", "pixels"])
        for r in log:
            wr.writerow([r.kind, r.yarn, r.cls.value if r.cls else "",
                         ";".join(str(z) for z in r.frames), r.pixels])
    return path
