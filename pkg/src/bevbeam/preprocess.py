"""Raw sensor records to model-ready representations.

Cameras are resized and channel-normalized; LiDAR clouds are rasterized onto
the BEV grid; radar cubes become range-angle / range-velocity power maps; GPS
readings are frame-calibrated and turned into one-hot BEV masks.  Everything
here is a pure function — per-sample calls are safe to run in parallel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nd
from .errors import ContractError
from .validation import check_camera_frame, check_finite, check_point_cloud, check_radar_cube

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass
class CameraNormConfig:
    """Channel statistics and target size for camera normalization."""

    mean: tuple = IMAGENET_MEAN
    std: tuple = IMAGENET_STD
    out_size: tuple = (256, 256)

    def __post_init__(self):
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ContractError("camera normalization needs 3 channel means and stds")
        if any(s <= 0 for s in self.std):
            raise ContractError("camera std components must be positive")


@dataclass
class BevGridSpec:
    """Square BEV grid centered on the base station."""

    extent: float = 50.0  # half-width in meters
    height: int = 128
    width: int = 128

    def __post_init__(self):
        if self.height < 8 or self.width < 8:
            raise ContractError(f"BEV grid needs >= 8 cells per side, got {self.height}x{self.width}")
        if self.extent <= 0:
            raise ContractError(f"BEV extent must be positive, got {self.extent}")


@dataclass
class GpsReading:
    """Relative east/north displacement of the user from the base station."""

    dx: float
    dy: float

    def __post_init__(self):
        check_finite(self.dx, self.dy, what="gps displacement")


@dataclass
class ScenarioCalibration:
    """Rotation aligning the GPS frame with the sensor boresight."""

    theta_offset: float = 0.0

    def __post_init__(self):
        if not (-math.pi < self.theta_offset <= math.pi):
            raise ContractError(f"theta_offset must lie in (-pi, pi], got {self.theta_offset}")


def normalize_camera(pixels: np.ndarray, cfg: CameraNormConfig) -> nd.Tensor:
    """Resize to cfg.out_size and normalize channels: (pixels/255 - mean) / std.

    Returns a channel-major (3, H, W) f32 tensor.
    """
    pixels = check_camera_frame(pixels)
    chw = pixels.astype(np.float32).transpose(2, 0, 1)[None]
    resized = nd.bilinear_resize(nd.tensor(chw), cfg.out_size[0], cfg.out_size[1]).data[0]
    mean = np.asarray(cfg.mean, dtype=np.float32)[:, None, None]
    std = np.asarray(cfg.std, dtype=np.float32)[:, None, None]
    return nd.tensor((resized / 255.0 - mean) / std)


def denormalize_camera(img: nd.Tensor, cfg: CameraNormConfig) -> np.ndarray:
    """Inverse of the channel normalization (returns resized pixels/255)."""
    mean = np.asarray(cfg.mean, dtype=np.float32)[:, None, None]
    std = np.asarray(cfg.std, dtype=np.float32)[:, None, None]
    return img.data * std + mean


def _cell_indices(coords: np.ndarray, extent: float, cells: int) -> np.ndarray:
    idx = np.floor((coords + extent) / (2.0 * extent) * cells).astype(np.int64)
    return np.clip(idx, 0, cells - 1)


def lidar_to_bev(points: np.ndarray, grid: BevGridSpec,
                 channels: str = "height_only") -> nd.Tensor:
    """Rasterize a point cloud onto the BEV grid.

    Per cell: max height, max intensity, and point count over the points whose
    (x, y) fall inside it; empty cells are 0 in all channels.  Points outside
    the grid extent are dropped.  ``channels`` selects the single-channel
    height map or the full height/intensity/density stack.
    """
    if channels not in ("height_only", "height_intensity_density"):
        raise ContractError(f"unknown lidar channel mode {channels!r}")
    points = check_point_cloud(points)
    h_grid = np.full((grid.height, grid.width), -np.inf, dtype=np.float32)
    e_grid = np.full((grid.height, grid.width), -np.inf, dtype=np.float32)
    d_grid = np.zeros((grid.height, grid.width), dtype=np.float32)
    if points.shape[0]:
        x, y, z, inten = points.T
        keep = (x >= -grid.extent) & (x < grid.extent) & (y >= -grid.extent) & (y < grid.extent)
        x, y, z, inten = x[keep], y[keep], z[keep], inten[keep]
        cols = _cell_indices(x, grid.extent, grid.width)
        rows = _cell_indices(y, grid.extent, grid.height)
        np.maximum.at(h_grid, (rows, cols), z)
        np.maximum.at(e_grid, (rows, cols), inten)
        np.add.at(d_grid, (rows, cols), 1.0)
    empty = d_grid == 0
    h_grid[empty] = 0.0
    e_grid[empty] = 0.0
    if channels == "height_only":
        return nd.tensor(h_grid[None])
    return nd.tensor(np.stack([h_grid, e_grid, d_grid]))


def radar_to_maps(cube: np.ndarray, out_hw: tuple) -> nd.Tensor:
    """Range-angle and range-velocity power maps from a radar cube.

    The cube is (antennas, chirps, ranges).  RA takes the DFT power over the
    antenna axis averaged across chirps; RV the DFT power over the chirp axis
    averaged across antennas.  Each map is max-normalized to [0, 1] (an
    all-zero cube stays all-zero), resized to ``out_hw``, and stacked RA|RV.
    """
    cube = check_radar_cube(cube)
    ra = nd.fft_power(cube, axis=0).data.mean(axis=1).T  # (ranges, antennas)
    rv = nd.fft_power(cube, axis=1).data.mean(axis=0).T  # (ranges, chirps)
    maps = []
    for m in (ra, rv):
        peak = m.max()
        if peak > 0:
            m = m / peak
        resized = nd.bilinear_resize(
            nd.tensor(m[None, None].astype(np.float32)), out_hw[0], out_hw[1]).data[0, 0]
        maps.append(resized)
    return nd.tensor(np.stack(maps))


def calibrate_gps(g: GpsReading, cal: ScenarioCalibration) -> GpsReading:
    """Rotate a reading by the scenario offset (an isometry)."""
    c, s = math.cos(cal.theta_offset), math.sin(cal.theta_offset)
    return GpsReading(dx=c * g.dx - s * g.dy, dy=s * g.dx + c * g.dy)


def gps_grid_cell(g: GpsReading, grid: BevGridSpec) -> tuple:
    """(row, col) of the BEV cell containing a calibrated reading."""
    e = grid.extent
    col = int(np.floor(np.clip((g.dx + e) / (2 * e) * (grid.width - 1), 0, grid.width - 1)))
    row = int(np.floor(np.clip((g.dy + e) / (2 * e) * (grid.height - 1), 0, grid.height - 1)))
    return row, col


def gps_to_mask(g: GpsReading, grid: BevGridSpec) -> nd.Tensor:
    """One-hot (1, H, W) mask marking the cell containing the reading."""
    mask = np.zeros((1, grid.height, grid.width), dtype=np.float32)
    row, col = gps_grid_cell(g, grid)
    mask[0, row, col] = 1.0
    return nd.tensor(mask)
