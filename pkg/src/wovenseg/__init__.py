"""Reconstruct woven-textile yarn geometry from stacks of instance-labelled frames."""
from ._accel import BACKEND
from .blur import GaussianKernel, build_kernel
from .correction import CorrectionLog, Flag, RegionalBlock, correct, fill_false_negatives, \
    interpolate_gap, interpolate_masks, link_fragments, remove_false_positives, scan_blocks
from .errors import DataError, GeometryOverflowError, InjectionError, ManifestError, WovenSegError
from .io import ClassLabel, DatasetManifest, GreyFrame, LabelFrame, instances_in_frame, \
    load_label_stack, load_manifest, save_label_stack, save_manifest
from .metrics import FrameScore, PQReport, match_frame, score_frame, score_stack
from .synth import ErrorSpec, WeaveLayout, WeaveSpec, generate_weave, inject_errors, layup_adjacency
from .tracking import InstanceMask, TrackedStack, iou, relabel_compact, track
from .volume import VoxelVolume, area_distribution, assemble_volume, contact_regions, export_volume, \
    extract_paths, import_volume

__version__ = "0.1.0"
