"""Fragment association and trajectory rectification for roadway video tracking.

Set ``TRAJRECON_NUMBA=0`` before import to run the pure-numpy kernels.
"""
__version__ = "0.1.0"

from .association import (AssociationState, SuperFragment, construct_graph, evict, find_negative_cycle,
                          flow_to_trajectories, ncc_batch, ncc_online, online_add, push_flow)
from .benchgen import (CameraLayout, NoiseSpec, ScenarioSpec, SpaceTimeMask, appendix_a_benchmark,
                       generate_ground_truth, perturb)
from .core import DEFAULT_DT, Fragment, FrameConfig, GridError, Point, Trajectory, resample_to_grid
from .costs import CostModelParams, fit_motion, node_costs, transition_cost
from .evaluation import EvalReport, evaluate, match_frames, compute_metrics, kinematic_stats
from .io import load_external, read_fragments, read_trajectories, write_fragments, write_trajectories
from .pipeline import PipelineConfig, run_pipeline, stream_ingest
from .plotting import emit_timespace_plot
from .rectify import (RectificationError, RectificationProblem, RectifierConfig, difference_operator,
                      rectify_axis, rectify_trajectory, steering_angles)

__all__ = [
    "AssociationState", "CameraLayout", "CostModelParams", "DEFAULT_DT", "EvalReport", "Fragment",
    "FrameConfig", "GridError", "NoiseSpec", "PipelineConfig", "Point", "RectificationError",
    "RectificationProblem", "RectifierConfig", "ScenarioSpec", "SpaceTimeMask", "SuperFragment",
    "Trajectory", "appendix_a_benchmark", "compute_metrics", "construct_graph", "difference_operator",
    "emit_timespace_plot", "evaluate", "evict", "find_negative_cycle", "fit_motion", "flow_to_trajectories",
    "generate_ground_truth", "kinematic_stats", "load_external", "match_frames", "ncc_batch", "ncc_online",
    "node_costs", "online_add", "perturb", "push_flow", "read_fragments", "read_trajectories",
    "rectify_axis", "rectify_trajectory", "resample_to_grid", "run_pipeline", "steering_angles",
    "stream_ingest", "transition_cost", "write_fragments", "write_trajectories",
]
