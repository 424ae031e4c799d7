"""Non-rigid registration, target selection and grasp transfer."""
from .cpd import (CpdParams, NonRigidTransform, PointCloud, apply_transform, cpd_e_step, cpd_m_step,
                  cpd_objective, cpd_register, cpd_surrogate, gaussian_gram, initial_sigma2,
                  transform_gradient)
from .grasp import GraspPose, mean_min_distance, select_target, similarity, transfer_grasp
from .preprocess import dbscan_labels, euclidean_cluster, voxel_downsample

__all__ = [
    "CpdParams", "NonRigidTransform", "PointCloud", "apply_transform", "cpd_e_step", "cpd_m_step",
    "cpd_objective", "cpd_register", "cpd_surrogate", "gaussian_gram", "initial_sigma2",
    "transform_gradient", "GraspPose", "mean_min_distance", "select_target", "similarity",
    "transfer_grasp", "dbscan_labels", "euclidean_cluster", "voxel_downsample",
]
