"""Canonical 68-point face template and landmark group conventions.

Index convention (standard 68-landmark layout): 0-16 jaw contour, 17-26
brows, 27-35 nose, 36-47 eyes, 48-67 mouth (60-67 inner lip).  The pose
groups used downstream are cheek (jaw), eye, and mouth.

Template geometry, in the mouth frame (meters):
  - mouth-group centroid sits exactly at the origin,
  - eye-group centroid exactly at (0, +0.08, 0),
  - cheek-group centroid exactly at (0.06, -0.02, 0).
The three group centroids therefore span the z = 0 plane, so the plane
through them is the mouth plane and its normal is the +z axis (out of the
face, toward the camera).  The lateral cheek-centroid offset keeps that
plane numerically well conditioned; the template is synthetic, not a
measured face.
"""

from __future__ import annotations

import numpy as np

N_LANDMARKS = 68

CHEEK_IDX = np.arange(0, 17)
BROW_IDX = np.arange(17, 27)
NOSE_IDX = np.arange(27, 36)
EYE_IDX = np.arange(36, 48)
MOUTH_IDX = np.arange(48, 68)

INNER_LIP_TOP = np.array([61, 62, 63])
INNER_LIP_BOTTOM = np.array([65, 66, 67])

EYE_CENTROID = np.array([0.0, 0.08, 0.0])
CHEEK_CENTROID = np.array([0.06, -0.02, 0.0])

OPEN_GAP_M = 0.022   # inner-lip gap of the open-mouth template
CLOSED_GAP_M = 0.004


def _recenter(pts: np.ndarray, target: np.ndarray) -> np.ndarray:
    return pts - pts.mean(axis=0) + target


def face_template(mouth_open: bool = False) -> np.ndarray:
    """(68, 3) template points in the mouth frame."""
    pts = np.zeros((N_LANDMARKS, 3))

    # jaw contour: lower half-ellipse from ear to ear, slight depth recess
    ang = np.deg2rad(np.linspace(180.0, 360.0, 17))
    jaw = np.stack([0.085 * np.cos(ang),
                    0.05 + 0.11 * np.sin(ang),
                    -0.015 * np.abs(np.cos(ang))], axis=1)
    pts[CHEEK_IDX] = _recenter(jaw, CHEEK_CENTROID)

    # brows: two 5-point arcs above the eyes
    bx = np.linspace(-0.05, -0.012, 5)
    pts[17:22] = np.stack([bx, 0.098 + 0.004 * np.sin(np.linspace(0, np.pi, 5)),
                           np.full(5, 0.004)], axis=1)
    pts[22:27] = np.stack([-bx[::-1], 0.098 + 0.004 * np.sin(np.linspace(0, np.pi, 5)),
                           np.full(5, 0.004)], axis=1)

    # nose: bridge down the midline, then the base row; tip toward +z
    pts[27:31] = np.stack([np.zeros(4), np.linspace(0.075, 0.032, 4),
                           np.linspace(0.012, 0.028, 4)], axis=1)
    nx = np.linspace(-0.016, 0.016, 5)
    pts[31:36] = np.stack([nx, np.full(5, 0.020), np.full(5, 0.016)], axis=1)

    # eyes: two 6-point ellipses, one per eye
    t6 = np.deg2rad(np.linspace(0.0, 300.0, 6))
    for k, cx in enumerate((-0.032, 0.032)):
        eye = np.stack([cx + 0.016 * np.cos(t6), 0.016 * 0.45 * np.sin(t6),
                        np.zeros(6)], axis=1)
        pts[36 + 6 * k:42 + 6 * k] = eye
    pts[EYE_IDX] = _recenter(pts[EYE_IDX], EYE_CENTROID)

    # mouth: outer 12-point ellipse and inner 8-point lip ring
    t12 = np.deg2rad(np.linspace(0.0, 330.0, 12))
    outer = np.stack([0.026 * np.cos(t12), 0.013 * np.sin(t12), np.zeros(12)], axis=1)
    gap = OPEN_GAP_M if mouth_open else CLOSED_GAP_M
    inner = np.zeros((8, 3))
    inner[0] = [0.017, 0.0, 0.0]                    # right corner
    inner[1:4, 0] = [0.008, 0.0, -0.008]            # top arc
    inner[1:4, 1] = gap / 2.0
    inner[4] = [-0.017, 0.0, 0.0]                   # left corner
    inner[5:8, 0] = [-0.008, 0.0, 0.008]            # bottom arc
    inner[5:8, 1] = -gap / 2.0
    mouth = np.vstack([outer, inner])
    pts[MOUTH_IDX] = _recenter(mouth, np.zeros(3))

    return pts


def inner_lip_gap(points: np.ndarray) -> float:
    """3-D gap between the inner-lip top and bottom arcs."""
    top = points[INNER_LIP_TOP].mean(axis=0)
    bot = points[INNER_LIP_BOTTOM].mean(axis=0)
    return float(np.linalg.norm(top - bot))
