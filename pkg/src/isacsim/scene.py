"""Scene geometry: pinhole cameras, world/pixel/polar transforms, vision detections.

World frame: right-handed, z up. The base-station UPA sits at a fixed world
position and observes the half-space in front of it (positive azimuth axis);
elevation ``theta`` is measured so that straight below the array is ``pi`` and
the horizon is ``pi/2``, matching the steering-vector convention.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .arrays import Direction
from .errors import ConfigurationError

__all__ = [
    "CameraModel",
    "Entity",
    "Scene",
    "BoundingBox",
    "AngularRange",
    "Detection",
    "world_to_polar",
    "pixel_to_world",
    "world_to_pixel",
    "detect_candidates",
    "positioning_spectrum",
    "load_scene",
    "save_scene",
]


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera: image size in pixels, horizontal field of view, pose.

    ``rotation`` holds (x, y, z) axis angles in radians; the full rotation is
    applied z-axis last: R = Rz @ Ry @ Rx. ``position`` is the translation of
    the projection model (camera coordinates are R @ world + position), so the
    optical center sits at -R^T @ position in world space.
    """

    n_w: int
    n_h: int
    fov: float
    position: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))
        if self.n_w < 1 or self.n_h < 1:
            raise ConfigurationError("image size must be positive")
        if not 0 < self.fov < np.pi:
            raise ConfigurationError("fov must lie in (0, pi)")

    @property
    def focal_px(self) -> float:
        return self.n_w / (2.0 * np.tan(self.fov / 2.0))

    def intrinsic_matrix(self) -> np.ndarray:
        f = self.focal_px
        return np.array(
            [[f, 0.0, self.n_w / 2.0], [0.0, f, self.n_h / 2.0], [0.0, 0.0, 1.0]]
        )

    def rotation_matrix(self) -> np.ndarray:
        ax, ay, az = self.rotation
        rx = np.array(
            [[1, 0, 0], [0, np.cos(ax), -np.sin(ax)], [0, np.sin(ax), np.cos(ax)]]
        )
        ry = np.array(
            [[np.cos(ay), 0, np.sin(ay)], [0, 1, 0], [-np.sin(ay), 0, np.cos(ay)]]
        )
        rz = np.array(
            [[np.cos(az), -np.sin(az), 0], [np.sin(az), np.cos(az), 0], [0, 0, 1]]
        )
        return rz @ ry @ rx


@dataclass(frozen=True)
class Entity:
    """Physical object in the scene.

    ``extent = (half_width, half_height)`` in metres spans the box used for
    projection: half_width applies to both ground axes, half_height to z.
    """

    kind: str  # "user" | "target" | "scatterer"
    position: np.ndarray
    extent: tuple[float, float] = (0.0, 0.0)
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        if self.kind not in ("user", "target", "scatterer"):
            raise ConfigurationError(f"unknown entity kind {self.kind!r}")

    def corners(self) -> np.ndarray:
        """(8, 3) corners of the extent box around the entity position."""
        hw, hh = self.extent
        offs = np.array(
            [[sx * hw, sy * hw, sz * hh] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]
        )
        return self.position[None, :] + offs


@dataclass(frozen=True)
class Scene:
    """Base-station position, its cameras, and the entities around it."""

    upa_position: np.ndarray
    cameras: tuple[CameraModel, ...] = ()
    entities: tuple[Entity, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "upa_position", np.asarray(self.upa_position, dtype=float))
        object.__setattr__(self, "cameras", tuple(self.cameras))
        object.__setattr__(self, "entities", tuple(self.entities))

    def by_kind(self, kind: str) -> tuple[Entity, ...]:
        return tuple(e for e in self.entities if e.kind == kind)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned pixel box: center (cx, cy), full size (w, h), depth in metres."""

    center: tuple[float, float]
    size: tuple[float, float]
    depth: float


@dataclass(frozen=True)
class AngularRange:
    """Rectangle in (theta, phi) with a representative distance estimate."""

    theta_min: float
    theta_max: float
    phi_min: float
    phi_max: float
    dist: float

    def contains(self, direction: Direction) -> bool:
        return (
            self.theta_min <= direction.theta <= self.theta_max
            and self.phi_min <= direction.phi <= self.phi_max
        )

    def dilated(self, margin: float) -> "AngularRange":
        return AngularRange(
            self.theta_min - margin,
            self.theta_max + margin,
            self.phi_min - margin,
            self.phi_max + margin,
            self.dist,
        )


@dataclass(frozen=True)
class Detection:
    """One vision candidate: pixel box plus the polar region it maps to."""

    kind: str
    name: str
    camera_index: int
    box: BoundingBox
    region: AngularRange
    direction: Direction
    dist: float
    world_estimate: np.ndarray = field(repr=False)


def world_to_polar(point: np.ndarray, upa_position: np.ndarray) -> tuple[Direction, float]:
    """Polar coordinates of ``point`` as seen from the UPA.

    Azimuth is the ground-plane angle of the offset (clamped to the frontal
    half-space [-pi/2, pi/2]); elevation runs from pi/2 on the horizon to pi
    straight below (the vertical sign is folded out, scenes keep entities on
    one side). Returns (direction, euclidean distance).
    """
    delta = np.asarray(point, dtype=float) - np.asarray(upa_position, dtype=float)
    phi = float(np.clip(np.arctan2(delta[1], delta[0]), -np.pi / 2, np.pi / 2))
    ground = float(np.hypot(delta[0], delta[1]))
    theta = float(np.pi - np.arctan2(ground, abs(delta[2])))
    return Direction(theta=theta, phi=phi), float(np.linalg.norm(delta))


def pixel_to_world(pixel: np.ndarray, depth: float, cam: CameraModel) -> np.ndarray:
    """Back-project a pixel at a given camera depth into world coordinates."""
    p = np.array([pixel[0], pixel[1], 1.0])
    cam_pt = depth * np.linalg.solve(cam.intrinsic_matrix(), p)
    return np.linalg.solve(cam.rotation_matrix(), cam_pt - cam.position)


def world_to_pixel(point: np.ndarray, cam: CameraModel) -> tuple[np.ndarray, float]:
    """Project a world point; returns (pixel, depth). Depth <= 0 is behind the camera."""
    v = cam.rotation_matrix() @ np.asarray(point, dtype=float) + cam.position
    depth = float(v[2])
    if abs(depth) < 1e-300:
        return np.array([np.nan, np.nan]), depth
    h = cam.intrinsic_matrix() @ v
    return h[:2] / depth, depth


def _in_image(pixel: np.ndarray, cam: CameraModel) -> bool:
    return bool(0 <= pixel[0] < cam.n_w and 0 <= pixel[1] < cam.n_h)


def _detect_one(
    scene: Scene, cam: CameraModel, cam_idx: int, entity: Entity, noise_px: float, rng
) -> Detection | None:
    center_px, center_depth = world_to_pixel(entity.position, cam)
    if center_depth <= 0 or not _in_image(center_px, cam):
        return None
    pts = entity.corners() if max(entity.extent) > 0 else entity.position[None, :]
    pixels, depths = [], []
    for p in pts:
        px, d = world_to_pixel(p, cam)
        if d <= 0:
            return None
        pixels.append(px)
        depths.append(d)
    pixels = np.array(pixels)
    lo = np.clip(pixels.min(axis=0), [0, 0], [cam.n_w, cam.n_h])
    hi = np.clip(pixels.max(axis=0), [0, 0], [cam.n_w, cam.n_h])
    center = (lo + hi) / 2.0
    size = hi - lo
    if noise_px > 0:
        center = center + rng.normal(0.0, noise_px, 2)
        size = np.maximum(size + rng.normal(0.0, noise_px, 2), 0.0)
        center_depth = center_depth + rng.normal(
            0.0, noise_px * center_depth / cam.focal_px
        )
    box = BoundingBox(tuple(center), tuple(size), float(center_depth))
    world_est = pixel_to_world(center, center_depth, cam)
    direction, dist = world_to_polar(world_est, scene.upa_position)
    corners_px = [
        (center[0] + sx * size[0] / 2.0, center[1] + sy * size[1] / 2.0)
        for sx in (-1, 1)
        for sy in (-1, 1)
    ]
    polars = [
        world_to_polar(pixel_to_world(np.array(c), center_depth, cam), scene.upa_position)[0]
        for c in corners_px
    ]
    thetas = [p.theta for p in polars]
    phis = [p.phi for p in polars]
    region = AngularRange(min(thetas), max(thetas), min(phis), max(phis), dist)
    return Detection(
        kind=entity.kind,
        name=entity.name,
        camera_index=cam_idx,
        box=box,
        region=region,
        direction=direction,
        dist=dist,
        world_estimate=world_est,
    )


def detect_candidates(
    scene: Scene,
    noise_px: float = 0.0,
    rng: np.random.Generator | int | None = None,
    dedup_radius: float = 0.5,
) -> list[Detection]:
    """Project every entity into every camera and return noisy candidate regions.

    Boxes come from the exact projection of the entity extent, then the pixel
    center and size are perturbed with zero-mean Gaussian noise of standard
    deviation ``noise_px``; the depth read at the box center gets the same
    noise scaled to metres through the focal length. Detections of one entity
    from several cameras are merged when their back-projected world positions
    fall within ``dedup_radius`` metres (the first camera wins).
    """
    rng = np.random.default_rng(rng)
    raw: list[Detection] = []
    for cam_idx, cam in enumerate(scene.cameras):
        for entity in scene.entities:
            det = _detect_one(scene, cam, cam_idx, entity, noise_px, rng)
            if det is not None:
                raw.append(det)
    kept: list[Detection] = []
    for det in raw:
        if any(
            np.linalg.norm(det.world_estimate - k.world_estimate) <= dedup_radius
            for k in kept
        ):
            continue
        kept.append(det)
    return kept


def positioning_spectrum(
    user_detections: list[Detection],
    target_regions: list[AngularRange],
    n_x: int,
    n_y: int,
    d_max: float = 200.0,
) -> np.ndarray:
    """Two-channel (theta, phi) occupancy image with distance-coded intensities.

    The grid tiles theta over [0, pi) and phi over [-pi/2, pi/2) with cells
    [step*k, step*(k+1)). Channel 0 marks the single cell holding each user's
    point estimate, channel 1 every cell a target's angular range touches;
    cell values are 1 - dist/d_max. Distances beyond ``d_max`` clamp to zero
    intensity and emit a warning.
    """
    spectrum = np.zeros((2, n_x, n_y))
    step_t = np.pi / n_x
    step_p = np.pi / n_y

    def intensity(dist: float) -> float:
        if dist > d_max:
            warnings.warn(
                f"distance {dist:.1f} m exceeds d_max={d_max:.1f} m; intensity clamped to 0",
                stacklevel=2,
            )
            return 0.0
        return 1.0 - dist / d_max

    def cell_t(theta: float) -> int:
        return int(np.clip(np.floor(theta / step_t), 0, n_x - 1))

    def cell_p(phi: float) -> int:
        return int(np.clip(np.floor((phi + np.pi / 2) / step_p), 0, n_y - 1))

    for det in user_detections:
        spectrum[0, cell_t(det.direction.theta), cell_p(det.direction.phi)] = intensity(det.dist)
    for region in target_regions:
        val = intensity(region.dist)
        for ix in range(cell_t(region.theta_min), cell_t(region.theta_max) + 1):
            for iy in range(cell_p(region.phi_min), cell_p(region.phi_max) + 1):
                spectrum[1, ix, iy] = val
    return spectrum


_CAMERA_KEYS = {"fov_deg", "n_w", "n_h", "relative_position", "rotation_deg"}
_ENTITY_KEYS = {"kind", "position", "extent", "name"}
_SCENE_KEYS = {"upa_position", "cameras", "entities"}


def _check_keys(obj: dict, allowed: set, what: str):
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigurationError(f"unknown {what} field(s): {sorted(unknown)}")


def load_scene(path) -> Scene:
    """Read a scene description (JSON, rotations and fov given in degrees)."""
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(
                f"scene file {path}: parse error at line {exc.lineno}, column {exc.colno}"
            ) from exc
    _check_keys(raw, _SCENE_KEYS, "scene")
    if "upa_position" not in raw:
        raise ConfigurationError("scene file must set upa_position")
    upa = np.asarray(raw["upa_position"], dtype=float)
    cameras = []
    for cam in raw.get("cameras", []):
        _check_keys(cam, _CAMERA_KEYS, "camera")
        try:
            cameras.append(
                CameraModel(
                    n_w=int(cam["n_w"]),
                    n_h=int(cam["n_h"]),
                    fov=np.deg2rad(float(cam["fov_deg"])),
                    position=upa + np.asarray(cam["relative_position"], dtype=float),
                    rotation=np.deg2rad(np.asarray(cam["rotation_deg"], dtype=float)),
                )
            )
        except KeyError as exc:
            raise ConfigurationError(f"camera entry missing field {exc.args[0]!r}") from exc
    entities = []
    for ent in raw.get("entities", []):
        _check_keys(ent, _ENTITY_KEYS, "entity")
        try:
            entities.append(
                Entity(
                    kind=ent["kind"],
                    position=np.asarray(ent["position"], dtype=float),
                    extent=tuple(ent.get("extent", (0.0, 0.0))),
                    name=ent.get("name", ""),
                )
            )
        except KeyError as exc:
            raise ConfigurationError(f"entity entry missing field {exc.args[0]!r}") from exc
    return Scene(upa_position=upa, cameras=tuple(cameras), entities=tuple(entities))


def save_scene(scene: Scene, path) -> None:
    """Inverse of load_scene (degrees in the file, radians in memory)."""
    raw = {
        "upa_position": list(scene.upa_position),
        "cameras": [
            {
                "fov_deg": float(np.rad2deg(c.fov)),
                "n_w": c.n_w,
                "n_h": c.n_h,
                "relative_position": list(c.position - scene.upa_position),
                "rotation_deg": list(np.rad2deg(c.rotation)),
            }
            for c in scene.cameras
        ],
        "entities": [
            {
                "kind": e.kind,
                "position": list(e.position),
                "extent": list(e.extent),
                "name": e.name,
            }
            for e in scene.entities
        ],
    }
    with open(path, "w") as fh:
        json.dump(raw, fh, indent=2)
        fh.write("\n")
