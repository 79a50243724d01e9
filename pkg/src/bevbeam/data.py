"""Dataset on-disk format, synthetic scenario generation, loading and splits.

Tensor container (".bvt"): magic "BVT1" | dtype u8 (0=f32, 1=f64, 2=u8,
3=complex64) | ndim u8 | 2 reserved bytes | zero pad to byte 16 | ndim x u32
little-endian dims | row-major little-endian payload.

Dataset layout: ``root/index.csv`` (seq_id, scenario_id, label, dir) plus one
directory per sequence holding cam_t{1..5}.bvt, lidar_t{1..5}.bvt,
radar_t{1..5}.bvt, gps.bvt (2x2: two dx/dy readings) and meta.txt
(theta_offset, beams, fov_deg).
"""

from __future__ import annotations

import csv
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError
from .nd import Tensor
from .preprocess import BevGridSpec, GpsReading, ScenarioCalibration

logger = logging.getLogger(__name__)

SEQUENCE_LEN = 5
GPS_READINGS = 2

MAGIC = b"BVT1"
_DTYPE_TO_CODE = {
    np.dtype(np.float32): 0,
    np.dtype(np.float64): 1,
    np.dtype(np.uint8): 2,
    np.dtype(np.complex64): 3,
}
_CODE_TO_DTYPE = {0: "<f4", 1: "<f8", 2: "u1", 3: "<c8"}


# -- tensor container --------------------------------------------------------


def tensor_to_bytes(tensor) -> bytes:
    """Serialize a tensor (or ndarray) into the .bvt container layout."""
    arr = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor)
    code = _DTYPE_TO_CODE.get(arr.dtype)
    if code is None:
        raise FormatError(f"dtype {arr.dtype} has no container code")
    header = MAGIC + struct.pack("<BB", code, arr.ndim) + b"\x00" * 10
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
    le = arr.astype(_CODE_TO_DTYPE[code], copy=False)
    return header + dims + np.ascontiguousarray(le).tobytes()


def tensor_from_bytes(raw: bytes, source: str = "<bytes>") -> Tensor:
    """Parse a .bvt container; ``source`` names the origin in errors."""
    if len(raw) < 16:
        raise FormatError(f"{source}: truncated header ({len(raw)} bytes)")
    if raw[:4] != MAGIC:
        raise FormatError(f"{source}: bad magic {raw[:4]!r} at offset 0")
    code, ndim = struct.unpack_from("<BB", raw, 4)
    if code not in _CODE_TO_DTYPE:
        raise FormatError(f"{source}: unknown dtype code {code} at offset 4")
    offset = 16
    if len(raw) < offset + 4 * ndim:
        raise FormatError(f"{source}: truncated dims at offset {offset}")
    shape = struct.unpack_from(f"<{ndim}I", raw, offset) if ndim else ()
    offset += 4 * ndim
    dtype = np.dtype(_CODE_TO_DTYPE[code])
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    payload = raw[offset:]
    if len(payload) != expected:
        raise FormatError(
            f"{source}: payload is {len(payload)} bytes, expected {expected} at offset {offset}")
    return Tensor(np.frombuffer(payload, dtype=dtype).copy().reshape(shape))


def save_tensor(path, tensor) -> None:
    """Write a tensor (or ndarray) to the .bvt container; bit-exact round trip."""
    with open(path, "wb") as fh:
        fh.write(tensor_to_bytes(tensor))


def load_tensor(path) -> Tensor:
    """Read a .bvt container back into a tensor."""
    path = Path(path)
    return tensor_from_bytes(path.read_bytes(), source=str(path))


# -- domain types -------------------------------------------------------------


@dataclass
class CodebookSpec:
    """Directional codebook over a symmetric azimuth field of view."""

    beams: int = 64
    fov_deg: float = 90.0

    def __post_init__(self):
        if self.beams < 2:
            raise ContractError(f"codebook needs >= 2 beams, got {self.beams}")
        if not 0 < self.fov_deg <= 180:
            raise ContractError(f"codebook fov must be in (0, 180], got {self.fov_deg}")


@dataclass
class Frame:
    """One synchronized observation: camera pixels, LiDAR cloud, radar cube."""

    camera: np.ndarray  # (H, W, 3) u8
    lidar: np.ndarray   # (N, 4) f32 x/y/z/intensity
    radar: np.ndarray   # (antennas, chirps, ranges) complex64


@dataclass
class SampleSequence:
    """One labeled observation: 5 frames, 2 GPS readings, true beam index."""

    seq_id: str
    scenario_id: int
    frames: list
    gps: list
    label: int
    calibration: ScenarioCalibration = field(default_factory=ScenarioCalibration)
    beams: int = 64

    def validate(self) -> "SampleSequence":
        if len(self.frames) != SEQUENCE_LEN:
            raise ContractError(
                f"{self.seq_id}: expected {SEQUENCE_LEN} frames, got {len(self.frames)}")
        if len(self.gps) != GPS_READINGS:
            raise ContractError(
                f"{self.seq_id}: expected {GPS_READINGS} gps readings, got {len(self.gps)}")
        if not 0 <= self.label < self.beams:
            raise ContractError(
                f"{self.seq_id}: label {self.label} outside [0, {self.beams})")
        return self


@dataclass
class SyntheticScenarioConfig:
    """Knobs for the synthetic drive-by scenario generator."""

    n_sequences: int
    seed: int = 0
    grid: BevGridSpec = field(default_factory=BevGridSpec)
    codebook: CodebookSpec = field(default_factory=CodebookSpec)
    n_scenarios: int = 3
    cam_size: int = 64
    speed_range: tuple = (4.0, 12.0)
    frame_dt: float = 0.25
    gps_noise_std: float = 1.0
    lidar_points: int = 256
    radar_antennas: int = 8
    radar_chirps: int = 8
    radar_ranges: int = 16
    radar_noise_std: float = 0.05

    def __post_init__(self):
        if self.n_sequences < 1:
            raise ContractError(f"n_sequences must be >= 1, got {self.n_sequences}")
        if self.cam_size < 32:
            raise ContractError(f"cam_size must be >= 32, got {self.cam_size}")


# -- beam oracle ---------------------------------------------------------------


def oracle_beam(pos: GpsReading, cb: CodebookSpec) -> int:
    """Ground-truth beam for a boresight-frame position (+y is boresight).

    Positions behind the array map to the nearest edge beam (flagged in logs).
    """
    azimuth = math.atan2(pos.dx, pos.dy)
    if abs(azimuth) > math.pi / 2:
        logger.warning("oracle_beam: position (%.1f, %.1f) is behind the array; "
                       "clamping to edge beam", pos.dx, pos.dy)
    fov = math.radians(cb.fov_deg)
    raw = math.floor((azimuth + fov / 2) / fov * cb.beams)
    return int(min(max(raw, 0), cb.beams - 1))


# -- synthetic generation --------------------------------------------------------


def _scenario_offsets(cfg: SyntheticScenarioConfig) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, 999983])
    return rng.uniform(-0.9 * math.pi, 0.9 * math.pi, cfg.n_scenarios)


def _sample_trajectory(rng: np.random.Generator, cfg: SyntheticScenarioConfig):
    """Straight lateral pass; returns positions (5, 2) and velocity (2,)."""
    fov = math.radians(cfg.codebook.fov_deg)
    extent = cfg.grid.extent
    for _ in range(64):
        az5 = rng.uniform(-0.47 * fov, 0.47 * fov)
        r5 = rng.uniform(0.25 * extent, 0.8 * extent)
        p5 = np.array([r5 * math.sin(az5), r5 * math.cos(az5)])
        speed = rng.uniform(*cfg.speed_range)
        side = rng.choice([-1.0, 1.0])
        drift = rng.uniform(-0.25, 0.25)
        velocity = speed * np.array([side * math.cos(drift), math.sin(drift)])
        steps = np.arange(SEQUENCE_LEN - 1, -1, -1.0)
        positions = p5[None, :] - velocity[None, :] * (steps[:, None] * cfg.frame_dt)
        inside = (np.abs(positions) < 0.95 * extent).all() and (positions[:, 1] > 2.0).all()
        if inside:
            return positions, velocity
    return positions, velocity  # accept the last draw; bounds are soft


def _render_camera(rng, position, cfg: SyntheticScenarioConfig) -> np.ndarray:
    """Vehicle as a bright rectangle; horizontal placement encodes azimuth."""
    s = cfg.cam_size
    img = rng.integers(20, 90, size=(s, s, 3)).astype(np.uint8)
    img[: s // 3] = (img[: s // 3] * 0.5).astype(np.uint8)  # darker sky band
    x, y = position
    azimuth = math.atan2(x, y)
    fov = math.radians(cfg.codebook.fov_deg)
    if abs(azimuth) > fov / 2:
        return img  # vehicle out of view
    dist = math.hypot(x, y)
    u = int((azimuth + fov / 2) / fov * (s - 1))
    v = int(s * (0.35 + 0.45 * min(dist / cfg.grid.extent, 1.0)))
    half_w = max(2, int(s * 1.8 / max(dist, 4.0)))
    half_h = max(2, int(s * 1.2 / max(dist, 4.0)))
    r0, r1 = max(0, v - half_h), min(s, v + half_h)
    c0, c1 = max(0, u - half_w), min(s, u + half_w)
    body = rng.integers(190, 255, size=(r1 - r0, c1 - c0, 3), dtype=np.int64)
    img[r0:r1, c0:c1] = body.astype(np.uint8)
    return img


def _render_lidar(rng, position, cfg: SyntheticScenarioConfig) -> np.ndarray:
    n = cfg.lidar_points
    n_vehicle = int(n * 0.7)
    n_clutter = n - n_vehicle
    vx = rng.uniform(-1.0, 1.0, n_vehicle) + position[0]
    vy = rng.uniform(-2.2, 2.2, n_vehicle) + position[1]
    vz = rng.uniform(0.1, 1.7, n_vehicle)
    vi = rng.uniform(0.6, 1.0, n_vehicle)
    e = cfg.grid.extent
    cx = rng.uniform(-e, e, n_clutter)
    cy = rng.uniform(-e, e, n_clutter)
    cz = rng.uniform(-0.2, 0.35, n_clutter)
    ci = rng.uniform(0.0, 0.3, n_clutter)
    pts = np.column_stack([
        np.concatenate([vx, cx]), np.concatenate([vy, cy]),
        np.concatenate([vz, cz]), np.concatenate([vi, ci]),
    ])
    return pts.astype(np.float32)


def _render_radar(rng, position, velocity, cfg: SyntheticScenarioConfig) -> np.ndarray:
    """Target tone: antenna-axis frequency tracks azimuth, chirp-axis tracks
    radial velocity, energy concentrated at the true range bin."""
    na, nc, nr = cfg.radar_antennas, cfg.radar_chirps, cfg.radar_ranges
    noise = cfg.radar_noise_std * (rng.standard_normal((na, nc, nr))
                                   + 1j * rng.standard_normal((na, nc, nr)))
    x, y = position
    dist = math.hypot(x, y)
    azimuth = math.atan2(x, y)
    radial_v = float(np.dot(velocity, position) / max(dist, 1e-6))
    v_max = cfg.speed_range[1] * 1.25
    f_az = 0.5 * math.sin(azimuth)
    f_dop = 0.45 * radial_v / v_max
    a = np.arange(na)[:, None]
    c = np.arange(nc)[None, :]
    tone = np.exp(2j * math.pi * (f_az * a + f_dop * c))
    rb = int(min(dist / cfg.grid.extent * nr, nr - 1))
    cube = noise
    cube[:, :, rb] += tone
    if rb + 1 < nr:
        cube[:, :, rb + 1] += 0.35 * tone
    return cube.astype(np.complex64)


def _write_meta(path: Path, theta_offset: float, cb: CodebookSpec) -> None:
    path.write_text(
        f"theta_offset={theta_offset!r}\nbeams={cb.beams}\nfov_deg={cb.fov_deg!r}\n")


def _read_meta(path: Path) -> dict:
    meta = {}
    for line in path.read_text().splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            meta[key.strip()] = value.strip()
    return meta


def generate_synthetic(cfg: SyntheticScenarioConfig, out_dir) -> Path:
    """Write a synthetic dataset; identical seeds give byte-identical output."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    offsets = _scenario_offsets(cfg)
    rows = []
    for idx in range(cfg.n_sequences):
        rng = np.random.default_rng([cfg.seed, idx])
        scenario = idx % cfg.n_scenarios
        theta = float(offsets[scenario])
        positions, velocity = _sample_trajectory(rng, cfg)
        label = oracle_beam(GpsReading(*positions[-1]), cfg.codebook)

        seq_id = f"seq_{idx:05d}"
        seq_dir = root / seq_id
        seq_dir.mkdir(exist_ok=True)
        for t in range(SEQUENCE_LEN):
            save_tensor(seq_dir / f"cam_t{t + 1}.bvt", _render_camera(rng, positions[t], cfg))
            save_tensor(seq_dir / f"lidar_t{t + 1}.bvt", _render_lidar(rng, positions[t], cfg))
            save_tensor(seq_dir / f"radar_t{t + 1}.bvt",
                        _render_radar(rng, positions[t], velocity, cfg))
        # raw GPS is reported in the uncalibrated frame: rotate by -theta so
        # that scenario calibration recovers the boresight-frame position
        c, s = math.cos(-theta), math.sin(-theta)
        readings = []
        for t in range(GPS_READINGS):
            noisy = positions[t] + cfg.gps_noise_std * rng.standard_normal(2)
            readings.append([c * noisy[0] - s * noisy[1], s * noisy[0] + c * noisy[1]])
        save_tensor(seq_dir / "gps.bvt", np.asarray(readings, dtype=np.float32))
        _write_meta(seq_dir / "meta.txt", theta, cfg.codebook)
        rows.append((seq_id, scenario, label, seq_id))

    with open(root / "index.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seq_id", "scenario_id", "label", "dir"])
        writer.writerows(rows)
    return root


# -- loading ---------------------------------------------------------------------


class DatasetHandle:
    """Indexed dataset with lazy, validated per-sample loading."""

    def __init__(self, root: Path, entries: list, cache: bool = True):
        self.root = root
        self.entries = entries  # (seq_id, scenario_id, label, dir)
        self._cache = {} if cache else None

    def __len__(self):
        return len(self.entries)

    @property
    def labels(self) -> np.ndarray:
        return np.array([e[2] for e in self.entries], dtype=np.int64)

    @property
    def scenario_ids(self) -> np.ndarray:
        return np.array([e[1] for e in self.entries], dtype=np.int64)

    def sample(self, index: int) -> SampleSequence:
        if self._cache is not None and index in self._cache:
            return self._cache[index]
        seq_id, scenario_id, label, rel = self.entries[index]
        seq_dir = self.root / rel
        meta = _read_meta(seq_dir / "meta.txt")
        beams = int(meta["beams"])
        frames = []
        for t in range(1, SEQUENCE_LEN + 1):
            cam = load_tensor(seq_dir / f"cam_t{t}.bvt").data
            lidar = load_tensor(seq_dir / f"lidar_t{t}.bvt").data
            radar = load_tensor(seq_dir / f"radar_t{t}.bvt").data
            frames.append(Frame(camera=cam, lidar=lidar, radar=radar))
        gps_raw = load_tensor(seq_dir / "gps.bvt").data
        if gps_raw.shape != (GPS_READINGS, 2):
            raise FormatError(f"{seq_dir / 'gps.bvt'}: expected shape (2, 2), got {gps_raw.shape}")
        sample = SampleSequence(
            seq_id=seq_id,
            scenario_id=scenario_id,
            frames=frames,
            gps=[GpsReading(float(dx), float(dy)) for dx, dy in gps_raw],
            label=label,
            calibration=ScenarioCalibration(float(meta["theta_offset"])),
            beams=beams,
        ).validate()
        if self._cache is not None:
            self._cache[index] = sample
        return sample

    def samples(self, indices) -> list:
        return [self.sample(i) for i in indices]


def load_dataset(root, cache: bool = True) -> DatasetHandle:
    """Open a dataset directory; shapes and label ranges check on first access."""
    root = Path(root)
    index = root / "index.csv"
    if not index.exists():
        raise FileNotFoundError(f"dataset index not found: {index}")
    entries = []
    with open(index, newline="") as fh:
        for row in csv.DictReader(fh):
            entries.append((row["seq_id"], int(row["scenario_id"]), int(row["label"]),
                            row["dir"]))
    return DatasetHandle(root, entries, cache=cache)


# -- splits ------------------------------------------------------------------------


def _largest_remainder(n: int, ratios) -> list:
    ideal = [n * r for r in ratios]
    base = [math.floor(v) for v in ideal]
    order = sorted(range(len(ratios)), key=lambda i: (-(ideal[i] - base[i]), i))
    for i in order[: n - sum(base)]:
        base[i] += 1
    return base


def split_dataset(handle: DatasetHandle, ratios=(0.8, 0.1, 0.1), seed: int = 0):
    """Disjoint, exhaustive train/val/test index lists, stratified by
    (scenario, label) where group sizes permit and deterministic per seed."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ContractError(f"split ratios must sum to 1, got {ratios}")
    n = len(handle)
    n_splits = len(ratios)
    global_targets = _largest_remainder(n, ratios)

    by_scenario: dict[int, list] = {}
    for i, entry in enumerate(handle.entries):
        by_scenario.setdefault(entry[1], []).append(i)
    scenarios = sorted(by_scenario)
    targets = {s: _largest_remainder(len(by_scenario[s]), ratios) for s in scenarios}

    # reconcile scenario allocations with the exact global split sizes
    for j in range(n_splits):
        while sum(targets[s][j] for s in scenarios) > global_targets[j]:
            deficit = next(k for k in range(n_splits)
                           if sum(targets[s][k] for s in scenarios) < global_targets[k])
            donor = max(scenarios,
                        key=lambda s: (targets[s][j] - len(by_scenario[s]) * ratios[j], -s))
            targets[donor][j] -= 1
            targets[donor][deficit] += 1

    rng = np.random.default_rng(seed)
    splits = [[] for _ in range(n_splits)]
    for s in scenarios:
        assigned = [0] * n_splits
        goal = targets[s]
        by_label: dict[int, list] = {}
        for i in by_scenario[s]:
            by_label.setdefault(handle.entries[i][2], []).append(i)
        for label in sorted(by_label):
            group = np.array(by_label[label])
            rng.shuffle(group)
            for i in group:
                # deal to the split with the largest relative remaining need
                need = [(goal[j] - assigned[j]) / goal[j] if goal[j] else -1.0
                        for j in range(n_splits)]
                j = int(np.argmax(need))
                splits[j].append(int(i))
                assigned[j] += 1
    return tuple(sorted(part) for part in splits)
