"""lidarfield: hierarchical neural density fields for sparse LiDAR frames.

Builds a two-level scene partition (trajectory blocks holding point-segment
regions), trains one depth-supervised density field per block, and
synthesizes novel LiDAR views via segment-refined depth inference. Includes
a voxel ray-casting baseline and the full metric suite.
"""

from .field import FieldConfig, FieldModel, OptimizerState, adam_step, lr_at, positional_encode
from .geometry import Aabb, RayInterval, inflate, ray_aabb_intersect, sphere_prefilter
from .inference import (
    DepthPrediction,
    InferenceParams,
    find_candidates,
    one_step_depth,
    select_child,
    synthesize_view,
    two_step_depth,
)
from .io import (
    FrameSplit,
    PointCloud,
    Pose,
    parse_poses,
    parse_scan,
    range_filter,
    split_frames,
    to_world,
)
from .losses import (
    LossWeights,
    child_depth_loss,
    child_free_loss,
    parent_depth_loss,
    smooth_l1_prime,
    total_loss,
)
from .metrics import MapReport, MetricsReport, chamfer, depth_metrics, f_score, map_metrics
from .partition import (
    ChildRegion,
    LidarRay,
    ParentBlock,
    PartitionParams,
    RayBundle,
    assign_rays,
    build_child_regions,
    build_parent_blocks,
    cluster_regions,
    extract_ground,
)
from .raycast import VoxelMap, build_voxel_map, cast_ray
from .render import (
    RayBounds,
    RaySamples,
    SamplingConfig,
    compute_weights,
    hierarchical_fine_sample,
    integrate_weight,
    render_depth,
    segmented_sample,
)
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
