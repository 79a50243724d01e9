"""Input validator tests."""

import numpy as np
import pytest

from bevbeam import validation as v
from bevbeam.errors import ContractError, DimensionError


class TestCameraFrame:
    def test_passthrough(self):
        frame = np.zeros((40, 48, 3), dtype=np.uint8)
        assert v.check_camera_frame(frame) is frame

    def test_wrong_channels(self):
        with pytest.raises(DimensionError):
            v.check_camera_frame(np.zeros((40, 48, 4), dtype=np.uint8))

    def test_wrong_dtype(self):
        with pytest.raises(ContractError):
            v.check_camera_frame(np.zeros((40, 48, 3), dtype=np.float32))


class TestPointCloud:
    def test_empty_ok(self):
        assert v.check_point_cloud(np.zeros((0, 4))).shape == (0, 4)

    def test_wrong_width(self):
        with pytest.raises(DimensionError):
            v.check_point_cloud(np.zeros((5, 3)))

    def test_non_finite_rejected(self):
        pts = np.zeros((2, 4))
        pts[1, 0] = np.inf
        with pytest.raises(ContractError):
            v.check_point_cloud(pts)


class TestRadarCube:
    def test_complex_required(self):
        with pytest.raises(ContractError):
            v.check_radar_cube(np.zeros((4, 4, 8), dtype=np.float32))

    def test_min_axis_size(self):
        with pytest.raises(DimensionError):
            v.check_radar_cube(np.zeros((1, 4, 8), dtype=np.complex64))

    def test_downcasts_to_complex64(self):
        cube = v.check_radar_cube(np.zeros((2, 3, 4), dtype=np.complex128))
        assert cube.dtype == np.complex64


def test_check_finite():
    v.check_finite(1.0, -2.5)
    with pytest.raises(ContractError, match="displacement"):
        v.check_finite(np.nan, what="displacement")
