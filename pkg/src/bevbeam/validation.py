"""Input validation helpers for raw sensor records."""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError


def check_camera_frame(pixels: np.ndarray) -> np.ndarray:
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise DimensionError(f"camera frame must be (H, W, 3), got {pixels.shape}")
    if pixels.shape[0] < 32 or pixels.shape[1] < 32:
        raise ContractError(f"camera frame must be at least 32x32, got {pixels.shape[:2]}")
    if pixels.dtype != np.uint8:
        raise ContractError(f"camera frame must be uint8, got {pixels.dtype}")
    return pixels


def check_point_cloud(points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=np.float32)
    if points.size == 0:
        return points.reshape(0, 4)
    if points.ndim != 2 or points.shape[1] != 4:
        raise DimensionError(f"point cloud must be (N, 4) x/y/z/intensity, got {points.shape}")
    if not np.isfinite(points).all():
        raise ContractError("point cloud contains non-finite coordinates")
    return points


def check_radar_cube(cube: np.ndarray) -> np.ndarray:
    cube = np.asarray(cube)
    if not np.issubdtype(cube.dtype, np.complexfloating):
        raise ContractError(f"radar cube must be complex, got {cube.dtype}")
    if cube.ndim != 3 or min(cube.shape) < 2:
        raise DimensionError(
            f"radar cube must be (antennas, chirps, ranges) all >= 2, got {cube.shape}")
    return cube.astype(np.complex64, copy=False)


def check_finite(*values: float, what: str = "value") -> None:
    for v in values:
        if not np.isfinite(v):
            raise ContractError(f"{what} must be finite, got {v}")
