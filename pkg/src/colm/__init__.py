"""colm: compact object-level LiDAR map registration.

Scans become 13-byte-per-object (centroid, class) sets; a learned matcher
plus SVD/RANSAC/ICP solvers registers them against a stored map.
"""

from .core import (
    ColmError,
    CorrespondenceSet,
    LabeledPointCloud,
    ObjectSet,
    RigidTransform,
    apply_transform,
    compose,
    invert,
    rot_z,
    transform_objects,
)
from .extract import ExtractConfig, cluster_dbscan, extract_objects, extract_pipeline
from .codec import decode_scan, encode_scan, read_map, read_scan, write_map, write_scan
from .net import (
    MatchParams,
    MatchResult,
    NetConfig,
    forward,
    init_params,
    load_params,
    save_params,
)
from .pose import (
    IcpConfig,
    RansacConfig,
    RegistrationResult,
    icp_refine,
    ransac_register,
    registration_recall,
    rre,
    rte,
    svd_register,
    weighted_svd,
)
from .loss import (
    LossConfig,
    TrainConfig,
    build_supervision,
    circle_loss,
    grad_params,
    train_toy,
)
from .synth import (
    PerturbConfig,
    RegistrationPair,
    SceneConfig,
    generate_scene,
    gt_correspondences,
    make_registration_pairs,
    perturb_scene,
)

__version__ = "0.1.0"

__all__ = [
    "ColmError",
    "CorrespondenceSet",
    "ExtractConfig",
    "IcpConfig",
    "LabeledPointCloud",
    "LossConfig",
    "MatchParams",
    "MatchResult",
    "NetConfig",
    "ObjectSet",
    "PerturbConfig",
    "RansacConfig",
    "RegistrationPair",
    "RegistrationResult",
    "RigidTransform",
    "SceneConfig",
    "TrainConfig",
    "apply_transform",
    "build_supervision",
    "circle_loss",
    "cluster_dbscan",
    "compose",
    "decode_scan",
    "encode_scan",
    "extract_objects",
    "extract_pipeline",
    "forward",
    "generate_scene",
    "grad_params",
    "gt_correspondences",
    "icp_refine",
    "init_params",
    "invert",
    "load_params",
    "make_registration_pairs",
    "perturb_scene",
    "ransac_register",
    "read_map",
    "read_scan",
    "registration_recall",
    "rot_z",
    "rre",
    "rte",
    "save_params",
    "svd_register",
    "train_toy",
    "transform_objects",
    "weighted_svd",
    "write_map",
    "write_scan",
]
