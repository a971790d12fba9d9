"""Training-free 3D scene memory and grounding engine.

Turns per-frame RGB + point-map bundles with 2D instance masks into
consolidated open-vocabulary 3D instances, serves occlusion-aware view
retrieval from a volumetric visual memory, orchestrates planning/grounding/
coding agents over a shared scene memory, and scores grounded-QA outputs.
"""

from .bundle import (
    BundleError,
    BundleWriter,
    FrameRecord,
    Intrinsics,
    MaskRecord,
    SceneBundle,
    load_bundle,
    read_instances,
    write_instances,
)
from .config import EngineConfig
from .geometry import (
    Aabb,
    AabbRegion,
    FrontRegion,
    VoxelSet,
    YawBox,
    bev_iou,
    containment_overlap,
    fit_yaw_box,
    region_membership,
    voxelize,
)
from .lifting import (
    CleanConfig,
    Instance,
    associate,
    backproject,
    bev_merge,
    clean_points,
    refine_instances,
)
from .maskproc import (
    FilterConfig,
    apply_mirror_policy,
    filter_masks,
    resolve_overlaps,
    suppress_duplicates,
)
from .metrics import JudgedCase, case_score, chain_stats, object_score
from .pipeline import GroundingResult, ground_labels
from .viewmem import (
    MemoryEntry,
    ViewCache,
    VisualMemory,
    build_memory,
    region_from_box,
    region_from_direction,
)

__version__ = "0.1.0"
