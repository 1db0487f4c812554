"""Visual estimators: scooping-site selection over the bowl cloud and
mouth-pose estimation from 68-landmark streams.

Site selection scores five candidate locations by a Gaussian-density-weighted
sum over the masked food cloud (sample covariance of the masked points as the
kernel).  The mouth estimator filters landmarks by reference distance,
inter-frame displacement, and an eye-region distance model, then builds the
mouth frame from the cheek/eye/mouth group centroids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay, QhullError

from . import face
from .geometry import PoseSE3, UnitQuaternion
from .world import FoodCloud, LandmarkFrame


class NoFoodError(RuntimeError):
    pass


class RegistrationError(RuntimeError):
    pass


class DegenerateGeometryError(RuntimeError):
    pass


# --------------------------------------------------------------------- food

def psi_mask(points, bowl_center, bowl_diameter, guard_height: float = 0.03):
    """Binary mask: 1 inside the scoopable region of the bowl.

    Horizontal ellipse with both semi-axes 0.8 x bowl radius, height within
    [bowl bottom, bottom + guard height].
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    c = np.asarray(bowl_center, dtype=float)
    a = 0.8 * bowl_diameter / 2.0
    rel = pts - c
    horiz = (rel[:, 0] / a) ** 2 + (rel[:, 1] / a) ** 2 <= 1.0
    band = (rel[:, 2] >= -1e-12) & (rel[:, 2] <= guard_height + 1e-12)
    out = horiz & band
    return out if np.asarray(points).ndim == 2 else bool(out[0])


def default_scoop_sites(bowl_center, bowl_diameter) -> np.ndarray:
    """Five candidates: bowl center plus half-radius along both horizontal
    axes, just above the bowl bottom.  Center first (lowest tie-break index)."""
    c = np.asarray(bowl_center, dtype=float)
    r = bowl_diameter / 2.0
    z = 0.01
    return np.array([
        c + [0.0, 0.0, z],
        c + [r / 2.0, 0.0, z],
        c + [-r / 2.0, 0.0, z],
        c + [0.0, r / 2.0, z],
        c + [0.0, -r / 2.0, z],
    ])


def masked_cloud_covariance(masked_points: np.ndarray, eps: float = 1e-6,
                            sigma_floor: float = 0.01) -> np.ndarray:
    """Sample covariance of the masked cloud, regularized with eps * I.

    Fewer than 4 points cannot support a 3-D covariance; fall back to an
    isotropic kernel.
    """
    if len(masked_points) < 4:
        return sigma_floor ** 2 * np.eye(3)
    cov = np.cov(masked_points.T, bias=False)
    return cov + eps * np.eye(3)


def score_sites(masked_points: np.ndarray, sites: np.ndarray,
                cov: np.ndarray) -> np.ndarray:
    """Gaussian-density-weighted point counts per candidate site (k = 3)."""
    k = 3
    cov_inv = np.linalg.inv(cov)
    norm = np.sqrt((2.0 * np.pi) ** k * np.linalg.det(cov))
    scores = np.zeros(len(sites))
    for i, s in enumerate(sites):
        d = masked_points - s
        m = np.einsum("ij,jk,ik->i", d, cov_inv, d)
        scores[i] = np.sum(np.exp(-0.5 * m)) / norm
    return scores


def select_scoop_site(cloud: FoodCloud, sites=None, eps: float = 1e-6,
                      sigma_floor: float = 0.01) -> np.ndarray:
    """Highest-scoring candidate site; ties broken by lowest index."""
    if sites is None:
        sites = default_scoop_sites(cloud.bowl_center, cloud.bowl_diameter)
    sites = np.asarray(sites, dtype=float).reshape(-1, 3)
    if sites.shape[0] != 5:
        raise ValueError("exactly five candidate sites expected")
    if len(cloud.points) == 0:
        raise NoFoodError("food cloud is empty")
    mask = psi_mask(cloud.points, cloud.bowl_center, cloud.bowl_diameter,
                    cloud.guard_height)
    masked = cloud.points[mask]
    if len(masked) == 0:
        raise NoFoodError("no food points inside the scoopable region")
    cov = masked_cloud_covariance(masked, eps, sigma_floor)
    scores = score_sites(masked, sites, cov)
    return sites[int(np.argmax(scores))].copy()


# -------------------------------------------------------------------- mouth

@dataclass(frozen=True, eq=False)
class MouthEstimate:
    pose: PoseSE3
    confidence: float
    timestamp: float
    open_flag: bool

    def is_stale(self, now: float, horizon: float = 2.0) -> bool:
        return now - self.timestamp > horizon


@dataclass(frozen=True, eq=False)
class ReferenceLandmarks:
    points: np.ndarray          # (68, 3) in the registered mouth frame
    available: np.ndarray       # (68,) bool
    pose: PoseSE3               # registered mouth pose (world)
    eye_pairs: np.ndarray       # (n_pairs, 2) index pairs within the eye group
    eye_distances: np.ndarray   # (n_pairs,) reference distances
    face_area: float            # triangulated frontal area, m^2


def lift_frame(frame: LandmarkFrame, camera) -> np.ndarray:
    """World-frame 3-D landmark positions from pixels + per-landmark depth."""
    return frame.lift(camera)


def _group_centroids(points: np.ndarray, mask: np.ndarray):
    out = []
    for idx in (face.CHEEK_IDX, face.EYE_IDX, face.MOUTH_IDX):
        sel = mask[idx]
        if not np.any(sel):
            return None
        out.append(points[idx][sel].mean(axis=0))
    return out


def _projected_area(points2d: np.ndarray) -> float:
    if len(points2d) < 3:
        return 0.0
    try:
        tri = Delaunay(points2d)
    except QhullError:
        return 0.0
    area = 0.0
    for simplex in tri.simplices:
        a, b, c = points2d[simplex]
        area += 0.5 * abs((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    return float(area)


def estimate_mouth_pose(points: np.ndarray, accepted: np.ndarray,
                        camera_position, timestamp: float,
                        ref: ReferenceLandmarks | None = None,
                        min_landmarks: int = 30) -> MouthEstimate:
    """Mouth pose from accepted landmarks.

    Position: centroid of the mouth group.  z axis: normal of the plane
    through the cheek/eye/mouth group centroids, oriented toward the camera.
    y axis: mouth-to-eye direction projected onto that plane.  A Delaunay
    triangulation of the 2-D projection approximates the visible face area,
    which scales the confidence.
    """
    points = np.asarray(points, dtype=float).reshape(68, 3)
    accepted = np.asarray(accepted, dtype=bool).reshape(68)
    if accepted.sum() < min_landmarks:
        raise DegenerateGeometryError(
            f"only {int(accepted.sum())} accepted landmarks (< {min_landmarks})")
    cents = _group_centroids(points, accepted)
    if cents is None:
        raise DegenerateGeometryError("a landmark group has no accepted points")
    c_cheek, c_eye, c_mouth = cents

    u = c_eye - c_mouth
    v = c_cheek - c_mouth
    n = np.cross(u, v)
    nn = np.linalg.norm(n)
    if nn < 1e-9 * max(np.linalg.norm(u) * np.linalg.norm(v), 1e-12):
        raise DegenerateGeometryError("group centroids are collinear")
    n = n / nn
    toward_cam = np.asarray(camera_position, dtype=float) - c_mouth
    if n @ toward_cam < 0:
        n = -n
    y = u - (u @ n) * n
    ny = np.linalg.norm(y)
    if ny < 1e-12:
        raise DegenerateGeometryError("eye direction is normal to the face plane")
    y = y / ny
    x = np.cross(y, n)
    pose = PoseSE3(c_mouth, UnitQuaternion.from_matrix(np.stack([x, y, n], axis=1)))

    # visible-surface proxy: triangulated area of the in-plane projection
    rel = points[accepted] - c_mouth
    pts2d = np.stack([rel @ x, rel @ y], axis=1)
    area = _projected_area(pts2d)
    area_factor = 1.0
    if ref is not None and ref.face_area > 0:
        area_factor = min(1.0, area / ref.face_area)
    confidence = float(accepted.sum() / 68.0 * area_factor)

    open_flag = False
    lip_idx = np.r_[face.INNER_LIP_TOP, face.INNER_LIP_BOTTOM]
    if accepted[lip_idx].all():
        open_flag = face.inner_lip_gap(points) > 0.01

    return MouthEstimate(pose=pose, confidence=confidence,
                         timestamp=float(timestamp), open_flag=open_flag)


def register_reference(frames: list[LandmarkFrame], camera,
                       n_required: int = 20) -> ReferenceLandmarks:
    """Aggregate exactly 20 frontal frames into per-landmark references.

    Per-landmark reference = coordinate-wise median over the frames (robust
    to single-frame outliers), expressed in the mouth frame of the aggregate.
    """
    if len(frames) != n_required:
        raise RegistrationError(f"need exactly {n_required} frames, got {len(frames)}")
    lifted = []
    for k, fr in enumerate(frames):
        if int(fr.visible.sum()) < 60:
            raise RegistrationError(f"frame {k} has {int(fr.visible.sum())} visible "
                                    "landmarks (< 60)")
        lifted.append(lift_frame(fr, camera))

    points = np.zeros((68, 3))
    available = np.zeros(68, dtype=bool)
    for i in range(68):
        obs = np.array([lifted[k][i] for k in range(len(frames)) if frames[k].visible[i]])
        if len(obs) == 0:
            continue
        points[i] = np.median(obs, axis=0)
        available[i] = True

    cam_pos = np.mean([fr.camera_pose.position for fr in frames], axis=0)
    agg = estimate_mouth_pose(points, available, cam_pos,
                              timestamp=frames[-1].t)
    inv = agg.pose.inverse()
    local = np.array([inv.transform_point(p) for p in points])

    eye_avail = [i for i in face.EYE_IDX if available[i]]
    pairs = np.array([(a, b) for ai, a in enumerate(eye_avail)
                      for b in eye_avail[ai + 1:]], dtype=int).reshape(-1, 2)
    dists = np.array([np.linalg.norm(local[a] - local[b]) for a, b in pairs])

    rel = local[available]
    pts2d = rel[:, :2] - rel[:, :2].mean(axis=0)
    area = _projected_area(pts2d)

    return ReferenceLandmarks(points=local, available=available, pose=agg.pose,
                              eye_pairs=pairs, eye_distances=dists,
                              face_area=area)


def filter_landmarks(points: np.ndarray, visible: np.ndarray,
                     prev_points: np.ndarray | None,
                     prev_accepted: np.ndarray | None,
                     ref: ReferenceLandmarks | None,
                     predicted_pose: PoseSE3 | None,
                     ref_dist_tol: float = 0.03,
                     jump_tol: float = 0.05,
                     eye_dev_tol: float = 0.25) -> np.ndarray:
    """Accepted-landmark mask after the three rejection rules.

    (a) distance to the registered reference in the mouth frame > ref_dist_tol,
    (b) displacement since the previous accepted frame > jump_tol,
    (c) eye-group pairwise-distance pattern deviating > eye_dev_tol from the
        reference eye model (drops the whole group).
    Rules (a) and (c) are skipped while no reference is registered.
    """
    points = np.asarray(points, dtype=float).reshape(68, 3)
    accepted = np.asarray(visible, dtype=bool).copy().reshape(68)

    if prev_points is not None and prev_accepted is not None:
        both = accepted & np.asarray(prev_accepted, dtype=bool)
        jumps = np.linalg.norm(points - prev_points, axis=1)
        accepted[both & (jumps > jump_tol)] = False

    if ref is not None and predicted_pose is not None:
        inv = predicted_pose.inverse()
        local = np.array([inv.transform_point(p) for p in points])
        dist = np.linalg.norm(local - ref.points, axis=1)
        accepted &= ~(ref.available & (dist > ref_dist_tol))

    if ref is not None and len(ref.eye_pairs):
        live = [k for k, (a, b) in enumerate(ref.eye_pairs)
                if accepted[a] and accepted[b]]
        if live:
            pairs = ref.eye_pairs[live]
            d = np.linalg.norm(points[pairs[:, 0]] - points[pairs[:, 1]], axis=1)
            rel_dev = np.abs(d - ref.eye_distances[live]) / ref.eye_distances[live]
            if rel_dev.mean() > eye_dev_tol:
                accepted[face.EYE_IDX] = False

    return accepted


class MouthTracker:
    """Stateful front end: registration, filtering, estimation, staleness."""

    def __init__(self, camera, cfg: dict):
        self.camera = camera
        self.register_frames = int(cfg.get("register_frames", 20))
        self.ref_dist_tol = float(cfg.get("ref_dist_tol", 0.03))
        self.jump_tol = float(cfg.get("jump_tol", 0.05))
        self.eye_dev_tol = float(cfg.get("eye_dev_tol", 0.25))
        self.min_landmarks = int(cfg.get("min_landmarks", 30))
        self.stale_s = float(cfg.get("stale_s", 2.0))
        self.reference: ReferenceLandmarks | None = None
        self.last_estimate: MouthEstimate | None = None
        self._reg_buffer: list[LandmarkFrame] = []
        self._prev_points: np.ndarray | None = None
        self._prev_accepted: np.ndarray | None = None
        self._last_t = -np.inf

    @property
    def registered(self) -> bool:
        return self.reference is not None

    def reset_reference(self):
        self.reference = None
        self.last_estimate = None
        self._reg_buffer.clear()
        self._prev_points = None
        self._prev_accepted = None

    def predicted_pose(self) -> PoseSE3 | None:
        if self.last_estimate is not None:
            return self.last_estimate.pose
        if self.reference is not None:
            return self.reference.pose
        return None

    def ingest(self, frame: LandmarkFrame) -> MouthEstimate | None:
        """Feed one landmark frame; returns an estimate when one is formed."""
        if frame.t < self._last_t:
            raise ValueError("landmark frames must arrive in time order")
        self._last_t = frame.t

        if not self.registered:
            if int(frame.visible.sum()) >= 60:
                self._reg_buffer.append(frame)
            else:
                self._reg_buffer.clear()   # caller retries with next frames
            if len(self._reg_buffer) == self.register_frames:
                self.reference = register_reference(self._reg_buffer, self.camera,
                                                    self.register_frames)
                self._reg_buffer.clear()
            return None

        points = lift_frame(frame, self.camera)
        accepted = filter_landmarks(points, frame.visible,
                                    self._prev_points, self._prev_accepted,
                                    self.reference, self.predicted_pose(),
                                    self.ref_dist_tol, self.jump_tol,
                                    self.eye_dev_tol)
        if int(accepted.sum()) < self.min_landmarks:
            return None
        try:
            est = estimate_mouth_pose(points, accepted,
                                      frame.camera_pose.position, frame.t,
                                      self.reference, self.min_landmarks)
        except DegenerateGeometryError:
            return None
        self._prev_points = points
        self._prev_accepted = accepted
        self.last_estimate = est
        return est
