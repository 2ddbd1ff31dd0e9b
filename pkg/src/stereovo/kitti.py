"""KITTI odometry format: sequence directories, projection-matrix
calibration, and 12-number-per-line pose files."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .errors import ImageDecodeError, IndexOutOfRange, MalformedPoseFile, MissingCalibration
from .geometry import PinholeIntrinsics, Pose, StereoRig
from .image import GrayImage


@dataclass
class SequenceHandle:
    root: Path
    left_paths: list[Path]
    right_paths: list[Path]
    rig: StereoRig
    gt_poses: list[Pose] | None
    timestamps: list[float] | None

    def __len__(self) -> int:
        return len(self.left_paths)

    def frame(self, i: int) -> tuple[GrayImage, GrayImage]:
        if not (0 <= i < len(self)):
            raise IndexOutOfRange(f"frame {i} outside [0, {len(self)})")
        return _load_gray(self.left_paths[i]), _load_gray(self.right_paths[i])


class SequenceSlice:
    """A contiguous [start, stop) window over another frame source."""

    def __init__(self, inner, start: int, stop: int):
        stop = min(stop, len(inner))
        if not (0 <= start < stop):
            raise IndexOutOfRange(f"bad slice [{start}, {stop}) over {len(inner)} frames")
        self.inner = inner
        self.start = start
        self.stop = stop
        self.rig = getattr(inner, "rig", None)
        gt = getattr(inner, "gt_poses", None)
        self.gt_poses = gt[start:stop] if gt else None

    def __len__(self) -> int:
        return self.stop - self.start

    def frame(self, i: int) -> tuple[GrayImage, GrayImage]:
        if not (0 <= i < len(self)):
            raise IndexOutOfRange(f"frame {i} outside [0, {len(self)})")
        return self.inner.frame(self.start + i)


def _load_gray(path: Path) -> GrayImage:
    # IMREAD_GRAYSCALE applies BT.601 luma weights to color inputs
    img = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if img is None:
        raise ImageDecodeError(f"cannot decode image {path}")
    return GrayImage(img)


def parse_calib(path: Path) -> StereoRig:
    if not path.is_file():
        raise MissingCalibration(f"calibration file not found: {path}")
    mats: dict[str, np.ndarray] = {}
    for line in path.read_text().splitlines():
        if ":" not in line:
            continue
        name, rest = line.split(":", 1)
        vals = np.fromstring(rest, dtype=np.float64, sep=" ")
        if len(vals) == 12:
            mats[name.strip()] = vals.reshape(3, 4)
    if "P0" not in mats or "P1" not in mats:
        raise MissingCalibration(f"{path} lacks P0/P1 projection matrices")
    p0, p1 = mats["P0"], mats["P1"]
    intr = PinholeIntrinsics(fx=p0[0, 0], fy=p0[1, 1], cx=p0[0, 2], cy=p0[1, 2])
    baseline = -p1[0, 3] / p1[0, 0]
    if baseline <= 0:
        raise MissingCalibration(f"non-positive baseline derived from {path}")
    return StereoRig(intr, baseline)


def read_poses(path: str | Path) -> list[Pose]:
    poses = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        vals = np.fromstring(line, dtype=np.float64, sep=" ")
        if len(vals) != 12:
            raise MalformedPoseFile(f"{path}:{lineno}: expected 12 values, got {len(vals)}")
        poses.append(Pose.from_matrix34(vals.reshape(3, 4)))
    return poses


def write_poses(poses: list[Pose], path: str | Path) -> None:
    lines = [" ".join(repr(float(x)) for x in p.matrix34.ravel()) for p in poses]
    Path(path).write_text("\n".join(lines) + "\n")


def open_sequence(path: str | Path, sequence_id: str) -> SequenceHandle:
    """Open one sequence; accepts either a dataset root (with ``sequences/``
    and optional ``poses/``) or a bare sequence directory."""
    root = Path(path)
    seq_dir = root / "sequences" / sequence_id
    if not seq_dir.is_dir():
        seq_dir = root / sequence_id
    if not seq_dir.is_dir():
        seq_dir = root
    left = sorted((seq_dir / "image_0").glob("*.png"))
    right = sorted((seq_dir / "image_1").glob("*.png"))
    if not left:
        raise MissingCalibration(f"no frames under {seq_dir / 'image_0'}")
    if len(left) != len(right):
        raise MalformedPoseFile(
            f"left/right frame counts differ in {seq_dir}: {len(left)} vs {len(right)}"
        )
    rig = parse_calib(seq_dir / "calib.txt")

    poses_path = root / "poses" / f"{sequence_id}.txt"
    gt = read_poses(poses_path) if poses_path.is_file() else None
    if gt is not None and len(gt) != len(left):
        raise MalformedPoseFile(
            f"{poses_path}: {len(gt)} poses for {len(left)} frames"
        )

    times_path = seq_dir / "times.txt"
    timestamps = None
    if times_path.is_file():
        timestamps = [float(t) for t in times_path.read_text().split()]

    return SequenceHandle(root=seq_dir, left_paths=left, right_paths=right,
                          rig=rig, gt_poses=gt, timestamps=timestamps)
