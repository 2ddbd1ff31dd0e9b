"""Synthetic stereo scenes with exact ground truth.

Scenes are textured planar rectangles rendered through the same pinhole
model the pipeline assumes, so every pixel has a known 3D point and every
frame a known pose.  Textures are seeded value noise: dense corner
structure at controlled spatial scales, fully reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import IndexOutOfRange
from .geometry import PinholeIntrinsics, Pose, StereoRig
from .image import GrayImage
from .rng import stream


def value_noise(rng: np.random.Generator, res_v: int, res_u: int,
                cells=(64, 16, 4), weights=(1.0, 0.6, 0.35)) -> np.ndarray:
    """Multi-octave bilinear value noise in [0, 1], shape (res_v, res_u)."""
    acc = np.zeros((res_v, res_u))
    vv, uu = np.meshgrid(np.arange(res_v, dtype=np.float64), np.arange(res_u, dtype=np.float64), indexing="ij")
    for cell, w in zip(cells, weights):
        gv = res_v // cell + 2
        gu = res_u // cell + 2
        grid = rng.random((gv, gu))
        acc += w * ndimage.map_coordinates(grid, [vv / cell, uu / cell], order=1, mode="nearest")
    lo, hi = acc.min(), acc.max()
    return (acc - lo) / (hi - lo) if hi > lo else np.full_like(acc, 0.5)


@dataclass
class TexturedPlane:
    origin: np.ndarray      # (3,) world center
    u_axis: np.ndarray      # (3,) unit
    v_axis: np.ndarray      # (3,) unit, orthogonal to u_axis
    half_u: float
    half_v: float
    texture_seed: int
    texel_size: float = 0.05      # meters per texel
    cells: tuple = (64, 16, 4)    # octave cell sizes, texels
    intensity_range: tuple = (40.0, 220.0)
    _texture: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.origin = np.asarray(self.origin, dtype=np.float64)
        self.u_axis = np.asarray(self.u_axis, dtype=np.float64)
        self.v_axis = np.asarray(self.v_axis, dtype=np.float64)

    @property
    def normal(self) -> np.ndarray:
        n = np.cross(self.u_axis, self.v_axis)
        return n / np.linalg.norm(n)

    @property
    def texture(self) -> np.ndarray:
        if self._texture is None:
            res_u = max(int(2.0 * self.half_u / self.texel_size), 4)
            res_v = max(int(2.0 * self.half_v / self.texel_size), 4)
            rng = stream(self.texture_seed, "plane-texture")
            noise = value_noise(rng, res_v, res_u, self.cells)
            lo, hi = self.intensity_range
            self._texture = lo + noise * (hi - lo)
        return self._texture

    def sample(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Bilinear texture lookup at local plane coords (a along u, b along v)."""
        tex = self.texture
        res_v, res_u = tex.shape
        tu = (a / (2.0 * self.half_u) + 0.5) * (res_u - 1)
        tv = (b / (2.0 * self.half_v) + 0.5) * (res_v - 1)
        return ndimage.map_coordinates(tex, [tv, tu], order=1, mode="nearest")


@dataclass
class SyntheticScene:
    planes: list[TexturedPlane]
    path: list[Pose]            # camera-to-world, left camera
    rig: StereoRig
    width: int
    height: int
    noise_sigma: float = 0.0
    seed: int = 0

    def __len__(self) -> int:
        return len(self.path)

    @property
    def gt_poses(self) -> list[Pose]:
        return list(self.path)


def _render_view(scene: SyntheticScene, cam_to_world: Pose, eye_offset: float,
                 frame_index: int, eye: int) -> tuple[np.ndarray, np.ndarray]:
    """Ray-cast one camera; returns (uint8 image, float depth map)."""
    k = scene.rig.intrinsics
    w, h = scene.width, scene.height
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    dir_cam = np.stack([(us - k.cx) / k.fx, (vs - k.cy) / k.fy, np.ones_like(us)], axis=0).reshape(3, -1)
    r = cam_to_world.rotation
    origin = cam_to_world.apply(np.array([eye_offset, 0.0, 0.0]))
    dir_world = r @ dir_cam

    depth = np.full(w * h, np.inf)
    shade = np.full(w * h, 128.0)
    for plane in scene.planes:
        n = plane.normal
        denom = n @ dir_world
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (n @ (plane.origin - origin)) / denom
        hit = np.isfinite(t) & (t > 1e-6)
        if not np.any(hit):
            continue
        pts = origin[:, None] + dir_world[:, hit] * t[hit]
        rel = pts - plane.origin[:, None]
        a = plane.u_axis @ rel
        b = plane.v_axis @ rel
        inside = (np.abs(a) <= plane.half_u) & (np.abs(b) <= plane.half_v)
        idx = np.nonzero(hit)[0][inside]
        closer = t[idx] < depth[idx]
        idx = idx[closer]
        if len(idx) == 0:
            continue
        depth[idx] = t[idx]
        shade[idx] = plane.sample(a[inside][closer], b[inside][closer])

    if scene.noise_sigma > 0:
        rng = stream(scene.seed, f"render-noise-{frame_index}-{eye}")
        shade = shade + rng.normal(0.0, scene.noise_sigma, size=shade.shape)
    img = np.clip(np.round(shade), 0, 255).astype(np.uint8).reshape(h, w)
    return img, depth.reshape(h, w)


def render(scene: SyntheticScene, pose_index: int) -> tuple[GrayImage, GrayImage]:
    left, right, _ = render_with_depth(scene, pose_index)
    return left, right


def render_with_depth(scene: SyntheticScene, pose_index: int) -> tuple[GrayImage, GrayImage, np.ndarray]:
    """Render both eyes plus the left camera's ground-truth depth map."""
    if not (0 <= pose_index < len(scene.path)):
        raise IndexOutOfRange(f"pose index {pose_index} outside [0, {len(scene.path)})")
    pose = scene.path[pose_index]
    left, depth = _render_view(scene, pose, 0.0, pose_index, 0)
    right, _ = _render_view(scene, pose, scene.rig.baseline, pose_index, 1)
    return GrayImage(left), GrayImage(right), depth


class SyntheticSequence:
    """Frame-source adapter over a scene: len() + frame(i) -> stereo pair."""

    def __init__(self, scene: SyntheticScene):
        self.scene = scene
        self.rig = scene.rig
        self.gt_poses = scene.gt_poses

    def __len__(self) -> int:
        return len(self.scene)

    def frame(self, i: int) -> tuple[GrayImage, GrayImage]:
        return render(self.scene, i)


# ---------------------------------------------------------------------------
# scene builders


def default_rig() -> StereoRig:
    return StereoRig(PinholeIntrinsics(fx=450.0, fy=450.0, cx=256.0, cy=192.0), baseline=0.54)


def straight_path(n_frames: int, speed: float) -> list[Pose]:
    return [Pose(np.eye(3), np.array([0.0, 0.0, speed * i])) for i in range(n_frames)]


def corridor_scene(
    n_frames: int = 100,
    speed: float = 1.0,
    seed: int = 0,
    width: int = 512,
    height: int = 384,
    rig: StereoRig | None = None,
    half_width: float = 4.0,
    ground_y: float = 1.6,
    noise_sigma: float = 0.0,
    texel_size: float = 0.05,
    cells: tuple = (64, 16, 4),
) -> SyntheticScene:
    """Forward motion down a textured corridor: two walls, ground, end wall.

    Wall features sweep from far to near, giving strong scale change over
    multi-step matching windows.  ``texel_size`` and ``cells`` control the
    wall/ground texture detail (finest corner scale = cells[-1] * texel_size
    meters).
    """
    length = n_frames * speed + 60.0
    mid_z = length / 2.0
    seeds = stream(seed, "corridor-plane-seeds").integers(0, 2**31 - 1, size=4)
    planes = [
        TexturedPlane(
            origin=np.array([-half_width, 0.0, mid_z]),
            u_axis=np.array([0.0, 0.0, 1.0]),
            v_axis=np.array([0.0, 1.0, 0.0]),
            half_u=mid_z + 5.0,
            half_v=6.0,
            texture_seed=int(seeds[0]),
            texel_size=texel_size,
            cells=cells,
        ),
        TexturedPlane(
            origin=np.array([half_width, 0.0, mid_z]),
            u_axis=np.array([0.0, 0.0, 1.0]),
            v_axis=np.array([0.0, 1.0, 0.0]),
            half_u=mid_z + 5.0,
            half_v=6.0,
            texture_seed=int(seeds[1]),
            texel_size=texel_size,
            cells=cells,
        ),
        TexturedPlane(
            origin=np.array([0.0, ground_y, mid_z]),
            u_axis=np.array([1.0, 0.0, 0.0]),
            v_axis=np.array([0.0, 0.0, 1.0]),
            half_u=half_width + 2.0,
            half_v=mid_z + 5.0,
            texture_seed=int(seeds[2]),
            texel_size=texel_size,
            cells=cells,
        ),
        TexturedPlane(
            origin=np.array([0.0, 0.0, length + 2.0]),
            u_axis=np.array([1.0, 0.0, 0.0]),
            v_axis=np.array([0.0, 1.0, 0.0]),
            half_u=40.0,
            half_v=30.0,
            texture_seed=int(seeds[3]),
            texel_size=0.15,
        ),
    ]
    return SyntheticScene(
        planes=planes,
        path=straight_path(n_frames, speed),
        rig=rig or default_rig(),
        width=width,
        height=height,
        noise_sigma=noise_sigma,
        seed=seed,
    )


def facing_plane_scene(
    depths: list[float],
    seed: int = 0,
    width: int = 384,
    height: int = 384,
    rig: StereoRig | None = None,
    plane_half: float = 6.0,
    texel_size: float = 0.02,
    cells: tuple = (256, 64, 16),
    noise_sigma: float = 0.0,
) -> SyntheticScene:
    """One fronto-parallel textured wall at z = max(depths) + each camera
    placed so the wall center sits at the requested depth; used by the
    scale-invariance and drift oracles."""
    rig = rig or default_rig()
    wall_z = max(depths) + 0.0
    plane = TexturedPlane(
        origin=np.array([0.0, 0.0, wall_z]),
        u_axis=np.array([1.0, 0.0, 0.0]),
        v_axis=np.array([0.0, 1.0, 0.0]),
        half_u=plane_half,
        half_v=plane_half,
        texture_seed=seed,
        texel_size=texel_size,
        cells=cells,
    )
    path = [Pose(np.eye(3), np.array([0.0, 0.0, wall_z - d])) for d in depths]
    return SyntheticScene(
        planes=[plane], path=path, rig=rig, width=width, height=height,
        noise_sigma=noise_sigma, seed=seed,
    )


# ---------------------------------------------------------------------------
# fixture serialization (textures regenerate from seeds; only parameters
# and the camera path are stored)


def save_scene(scene: SyntheticScene, path: str | Path) -> None:
    lines = ["stereovo-scene v1"]
    k = scene.rig.intrinsics
    lines.append(f"rig {k.fx!r} {k.fy!r} {k.cx!r} {k.cy!r} {scene.rig.baseline!r}")
    lines.append(f"image {scene.width} {scene.height}")
    lines.append(f"noise {scene.noise_sigma!r}")
    lines.append(f"seed {scene.seed}")
    lines.append(f"planes {len(scene.planes)}")
    for p in scene.planes:
        nums = [*p.origin, *p.u_axis, *p.v_axis, p.half_u, p.half_v]
        lines.append(
            " ".join(repr(float(x)) for x in nums)
            + f" {p.texture_seed} {p.texel_size!r} {','.join(str(c) for c in p.cells)}"
            + f" {p.intensity_range[0]!r},{p.intensity_range[1]!r}"
        )
    lines.append(f"path {len(scene.path)}")
    for pose in scene.path:
        lines.append(" ".join(repr(float(x)) for x in pose.matrix34.ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def load_scene(path: str | Path) -> SyntheticScene:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if lines[0] != "stereovo-scene v1":
        raise ValueError(f"unrecognized scene header: {lines[0]!r}")
    rig_vals = [float(t) for t in lines[1].split()[1:]]
    rig = StereoRig(PinholeIntrinsics(*rig_vals[:4]), rig_vals[4])
    width, height = (int(t) for t in lines[2].split()[1:])
    noise_sigma = float(lines[3].split()[1])
    seed = int(lines[4].split()[1])
    nplanes = int(lines[5].split()[1])
    planes = []
    for ln in lines[6 : 6 + nplanes]:
        toks = ln.split()
        nums = [float(t) for t in toks[:11]]
        lo, hi = (float(t) for t in toks[14].split(","))
        planes.append(
            TexturedPlane(
                origin=np.array(nums[0:3]),
                u_axis=np.array(nums[3:6]),
                v_axis=np.array(nums[6:9]),
                half_u=nums[9],
                half_v=nums[10],
                texture_seed=int(toks[11]),
                texel_size=float(toks[12]),
                cells=tuple(int(c) for c in toks[13].split(",")),
                intensity_range=(lo, hi),
            )
        )
    idx = 6 + nplanes
    npath = int(lines[idx].split()[1])
    path_poses = [Pose.from_matrix34(np.array([float(t) for t in ln.split()])) for ln in lines[idx + 1 : idx + 1 + npath]]
    return SyntheticScene(planes=planes, path=path_poses, rig=rig, width=width,
                          height=height, noise_sigma=noise_sigma, seed=seed)
