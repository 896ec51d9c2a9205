"""Object scene flow and motion segmentation on synthetic rigid RGB-D scenes."""

from .geometry import (CameraIntrinsics, RigidMotion, SymmetrySpec, backproject,
                       canonicalize_rotation, project, rotate, swing_twist, transport_point)
from .losses import LossBreakdown, LossWeights, PredictionMaps, direct_fit, total_loss
from .metrics import flow_metrics, metric_report, seg_metrics
from .segment import greedy_cluster, recompute_flow, refine_rigid, trajectory_map
from .synth import PixelMaps, ScenePair, SynthConfig, compute_gt_maps, generate_scene_pair, render_view

__version__ = "0.1.0"
