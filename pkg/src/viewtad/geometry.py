"""Virtual camera rigs, pinhole projection, and torso-plane occlusion.

World frame is y-up. Cameras sit on a circle around a target point (the
skeleton root), one per yaw step, all looking at the target. The camera
frame is the usual vision convention: x right, y down, z forward, so a
point with positive depth projects to u = f*x/z + cx, v = f*y/z + cy.

Occlusion follows the self-occlusion model of monocular capture: the four
torso joints define a least-squares plane and a bounded quad; a joint is
occluded in a view when the open camera-to-joint segment crosses that plane
inside the quad (inflated by ``margin``).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

_UP = np.array([0.0, 1.0, 0.0])
_MIN_DEPTH = 1e-9


@dataclass
class VirtualCamera:
    rotation: np.ndarray  # (3, 3) orthonormal, rows are right/down/forward
    position: np.ndarray  # (3,) world units
    focal: float = 1.0
    principal: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.position = np.asarray(self.position, dtype=np.float64)
        self.principal = np.asarray(self.principal, dtype=np.float64)
        if self.focal <= 0:
            raise ValueError("focal length must be positive")
        if not np.allclose(self.rotation @ self.rotation.T, np.eye(3), atol=1e-10):
            raise ValueError("camera rotation is not orthonormal")

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return (points - self.position) @ self.rotation.T


@dataclass
class SkeletonWindow3D:
    joints: np.ndarray  # (F, J, 3)

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=np.float64)
        if self.joints.ndim != 3 or self.joints.shape[2] != 3:
            raise ValueError(f"window must be (F, J, 3), got {self.joints.shape}")
        if not np.all(np.isfinite(self.joints)):
            raise ValueError("window contains non-finite coordinates")

    @property
    def frames(self) -> int:
        return self.joints.shape[0]

    @property
    def num_joints(self) -> int:
        return self.joints.shape[1]


@dataclass
class ProjectedWindow:
    joints2d: np.ndarray  # (F, J, 2), zeroed where invisible
    visibility: np.ndarray  # (F, J) bool
    view_index: int = 0


@dataclass
class TorsoPlane:
    anchor: np.ndarray  # (3,) point on the plane
    normal: np.ndarray  # (3,) unit normal
    basis: np.ndarray  # (2, 3) in-plane orthonormal axes
    polygon: np.ndarray  # (4, 2) torso joints in plane coordinates


def look_at_camera(position, target, focal=1.0, principal=(0.0, 0.0)) -> VirtualCamera:
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValueError("camera position coincides with its target")
    forward = forward / norm
    right = np.cross(forward, _UP)
    rnorm = np.linalg.norm(right)
    if rnorm < 1e-9:  # looking straight up or down
        right = np.array([1.0, 0.0, 0.0])
    else:
        right = right / rnorm
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward])
    return VirtualCamera(rot, position, focal, np.asarray(principal, dtype=np.float64))


def make_virtual_cameras(
    num_views: int,
    spacing_deg: float = 30.0,
    radius: float = 3.0,
    height: float = 0.0,
    focal: float = 1.0,
    target=(0.0, 0.0, 0.0),
) -> list[VirtualCamera]:
    """Place ``num_views`` cameras at yaws i*spacing on a circle around ``target``.

    ``height`` is the vertical offset above the target (default 0: cameras at
    root height). Camera i's yaw is measured about the world y axis, with
    yaw 0 on the +z side.
    """
    if num_views < 1:
        raise ValueError("need at least one view")
    if spacing_deg <= 0:
        raise ValueError("camera spacing must be positive")
    target = np.asarray(target, dtype=np.float64)
    cams = []
    for i in range(num_views):
        yaw = np.deg2rad(i * spacing_deg)
        offset = np.array([radius * np.sin(yaw), height, radius * np.cos(yaw)])
        cams.append(look_at_camera(target + offset, target, focal))
    return cams


def project_window(window: SkeletonWindow3D, cam: VirtualCamera, view_index: int = 0) -> ProjectedWindow:
    """Pinhole-project every joint; joints at non-positive depth are flagged
    invisible (zero coordinates) instead of raising."""
    pts = cam.world_to_camera(window.joints.reshape(-1, 3))
    z = pts[:, 2]
    visible = z > _MIN_DEPTH
    uv = np.zeros((pts.shape[0], 2))
    safe_z = np.where(visible, z, 1.0)
    uv[:, 0] = cam.focal * pts[:, 0] / safe_z + cam.principal[0]
    uv[:, 1] = cam.focal * pts[:, 1] / safe_z + cam.principal[1]
    uv[~visible] = 0.0
    f, j = window.joints.shape[:2]
    return ProjectedWindow(uv.reshape(f, j, 2), visible.reshape(f, j), view_index)


def fit_torso_plane(torso_points: np.ndarray) -> TorsoPlane:
    """Least-squares plane through the four torso joints.

    The plane normal is the singular vector of the centered points with the
    smallest singular value; the polygon is the points' projection expressed
    in the two remaining (in-plane) singular directions.
    """
    pts = np.asarray(torso_points, dtype=np.float64)
    if pts.shape != (4, 3):
        raise ValueError(f"expected 4 torso joints, got shape {pts.shape}")
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    _, svals, vt = np.linalg.svd(centered, full_matrices=True)
    if svals[1] < 1e-9:  # points (nearly) collinear: no unique plane
        raise ValueError("torso joints are degenerate (collinear)")
    normal = vt[2]
    basis = vt[:2]
    polygon = centered @ basis.T
    area = _polygon_area(polygon)
    if area < 1e-12:
        raise ValueError("torso polygon has zero area")
    return TorsoPlane(centroid, normal, basis, polygon)


def _polygon_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _point_in_polygon(point: np.ndarray, poly: np.ndarray) -> bool:
    """Even-odd rule; boundary points are resolved by the distance test."""
    x, y = point
    inside = False
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        if (y0 > y) != (y1 > y):
            t = (y - y0) / (y1 - y0)
            if x < x0 + t * (x1 - x0):
                inside = not inside
    return inside


def _dist_to_polygon(point: np.ndarray, poly: np.ndarray) -> float:
    best = np.inf
    n = len(poly)
    for i in range(n):
        a = poly[i]
        ab = poly[(i + 1) % n] - a
        denom = float(ab @ ab)
        t = 0.0 if denom == 0.0 else float(np.clip((point - a) @ ab / denom, 0.0, 1.0))
        best = min(best, float(np.linalg.norm(a + t * ab - point)))
    return best


def signed_polygon_distance(point: np.ndarray, poly: np.ndarray) -> float:
    """Negative inside, positive outside, zero on the boundary."""
    dist = _dist_to_polygon(point, poly)
    return -dist if _point_in_polygon(point, poly) else dist


def occlusion_mask(
    pw: ProjectedWindow,
    window: SkeletonWindow3D,
    cam: VirtualCamera,
    planes: list[TorsoPlane | None],
    torso_indices,
    margin: float = 0.0,
) -> ProjectedWindow:
    """Update visibility: a joint is occluded when the open camera-to-joint
    segment crosses its frame's torso plane inside the (margin-inflated)
    torso polygon. Torso joints are never self-occluded. A ``None`` plane
    (degenerate torso) leaves that frame fully visible.
    """
    torso_indices = set(int(i) for i in torso_indices)
    vis = pw.visibility.copy()
    uv = pw.joints2d.copy()
    origin = cam.position
    for f in range(window.frames):
        plane = planes[f]
        if plane is None:
            continue
        for j in range(window.num_joints):
            if j in torso_indices or not vis[f, j]:
                continue
            joint = window.joints[f, j]
            ray = joint - origin
            denom = float(plane.normal @ ray)
            if abs(denom) < 1e-12:  # segment parallel to the plane
                continue
            t = float(plane.normal @ (plane.anchor - origin)) / denom
            if not (0.0 < t < 1.0):  # crossing outside the open segment
                continue
            hit = origin + t * ray
            hit2d = plane.basis @ (hit - plane.anchor)
            if signed_polygon_distance(hit2d, plane.polygon) <= margin:
                vis[f, j] = False
                uv[f, j] = 0.0
    return ProjectedWindow(uv, vis, pw.view_index)


def fit_torso_planes(window: SkeletonWindow3D, torso_indices) -> list[TorsoPlane | None]:
    """Per-frame torso planes; degenerate frames yield None (logged once)."""
    planes: list[TorsoPlane | None] = []
    warned = False
    for f in range(window.frames):
        try:
            planes.append(fit_torso_plane(window.joints[f, list(torso_indices)]))
        except ValueError:
            if not warned:
                logger.warning("degenerate torso at frame %d: skipping occlusion", f)
                warned = True
            planes.append(None)
    return planes


def render_views(
    window: SkeletonWindow3D,
    cams: list[VirtualCamera],
    torso_indices,
    margin: float = 0.0,
) -> list[ProjectedWindow]:
    """Project the window into every camera and apply occlusion masking."""
    planes = fit_torso_planes(window, torso_indices)
    views = []
    for v, cam in enumerate(cams):
        pw = project_window(window, cam, view_index=v)
        views.append(occlusion_mask(pw, window, cam, planes, torso_indices, margin))
    return views


@dataclass
class RigSpec:
    """Parameters of a virtual rig; cameras are instantiated per target point."""

    num_views: int = 12
    spacing_deg: float = 30.0
    radius: float = 3.0
    height: float = 0.0
    focal: float = 1.0
    margin: float = 0.0  # torso polygon inflation for occlusion

    def build(self, target) -> list[VirtualCamera]:
        return make_virtual_cameras(
            self.num_views, self.spacing_deg, self.radius, self.height, self.focal, target
        )


# ---------------------------------------------------------------------------
# rig serialization


def save_rig(path, cams: list[VirtualCamera]) -> None:
    payload = [
        {
            "rotation": cam.rotation.reshape(-1).tolist(),
            "position": cam.position.tolist(),
            "focal": cam.focal,
            "principal": cam.principal.tolist(),
        }
        for cam in cams
    ]
    with open(path, "w") as fh:
        json.dump({"cameras": payload}, fh, indent=1)


def load_rig(path) -> list[VirtualCamera]:
    with open(path) as fh:
        data = json.load(fh)
    return [
        VirtualCamera(
            np.asarray(c["rotation"]).reshape(3, 3),
            np.asarray(c["position"]),
            float(c["focal"]),
            np.asarray(c["principal"]),
        )
        for c in data["cameras"]
    ]
