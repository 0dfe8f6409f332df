"""Real-time destructive mesh tearing with a soft-body particle layer."""

from .mesh import (
    Hit,
    Mesh,
    Ray,
    Vertex,
    apply_delta,
    build_mesh,
    faces_near,
    raycast,
)
from .particles import (
    Particle,
    SimParams,
    SoftBodyState,
    apply_vertex_positions,
    decompose,
    displace_particle,
    step,
    update_after_tear,
)
from .skinning import Bone, Skeleton, blend_weights, pose_positions
from .tear import (
    ScalpelSample,
    TearCell,
    TearDelta,
    apply_tear_segment,
    build_cell,
    build_cells,
    classify_faces,
    clip_face,
    continuous_tear,
    sample_path,
)

__version__ = "0.1.0"

__all__ = [
    "Hit", "Mesh", "Ray", "Vertex", "apply_delta", "build_mesh", "faces_near",
    "raycast", "Particle", "SimParams", "SoftBodyState", "apply_vertex_positions",
    "decompose", "displace_particle", "step", "update_after_tear", "Bone",
    "Skeleton", "blend_weights", "pose_positions", "ScalpelSample", "TearCell",
    "TearDelta", "apply_tear_segment", "build_cell", "build_cells",
    "classify_faces", "clip_face", "continuous_tear", "sample_path",
]
