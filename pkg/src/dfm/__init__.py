"""Depth from motion: geometry, plane-sweep stereo, fusion and pose tools.

Submodules:
    geometry      intrinsics, quaternions, rigid motions, projection
    closed_form   binocular and two-view depth formulas
    plane_sweep   cost volumes and depth distributions
    augmentation  geometry-preserving image augmentation
    fusion        monocular/stereo fusion and depth losses
    pose          photometric ego-motion estimation
    voxel         frustum-to-voxel lifting and bird's-eye view
    synth         ray-cast synthetic scenes (ground-truth oracle)
    fileio        calibration, image, depth and pose files
    metrics       depth error statistics
"""

__version__ = "0.1.0"
