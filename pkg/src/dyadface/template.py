"""Canonical 68-point 3D face used as the synthetic mean shape.

Coordinates are in normalized face units: x to the subject's left in the
image (image right), y downward, z toward the camera. The face spans about
[-1, 1] horizontally. Values are rounded to 4 decimals so renders of the
template are identical on every platform.
"""
from __future__ import annotations

import numpy as np

N_LANDMARKS = 68

JAW = range(0, 17)
RIGHT_BROW = range(17, 22)
LEFT_BROW = range(22, 27)
NOSE_BRIDGE = range(27, 31)
NOSTRILS = range(31, 36)
RIGHT_EYE = range(36, 42)
LEFT_EYE = range(42, 48)
OUTER_LIP = range(48, 60)
INNER_LIP = range(60, 68)


def _ellipse(cx, cy, rx, ry, angles):
    a = np.asarray(angles, dtype=np.float64)
    return np.column_stack([cx + rx * np.cos(a), cy + ry * np.sin(a)])


def _template_xy() -> np.ndarray:
    pts = np.zeros((N_LANDMARKS, 2))
    phi = np.pi - np.pi * np.arange(17) / 16.0
    pts[0:17] = np.column_stack([0.95 * np.cos(phi), -0.15 + 1.05 * np.sin(phi)])

    bx = np.linspace(-0.8, -0.2, 5)
    pts[17:22] = np.column_stack([bx, -0.5 - 0.1 * np.sin(np.pi * (bx + 0.8) / 0.6)])
    pts[22:27] = np.column_stack([-bx[::-1], pts[17:22, 1][::-1]])

    pts[27:31] = np.column_stack([np.zeros(4), np.linspace(-0.3, 0.15, 4)])
    nx = np.linspace(-0.2, 0.2, 5)
    pts[31:36] = np.column_stack([nx, 0.25 + 0.05 * (1.0 - (nx / 0.2) ** 2)])

    # eyes: outer corner, two upper lid points, inner corner, two lower lid points
    eye_angles = np.array([np.pi, 4 * np.pi / 3, 5 * np.pi / 3, 0.0, np.pi / 3, 2 * np.pi / 3])
    pts[36:42] = _ellipse(-0.4, -0.25, 0.16, 0.07, eye_angles)
    pts[42:48] = _ellipse(0.4, -0.25, 0.16, 0.07, np.pi - eye_angles[[3, 2, 1, 0, 5, 4]])

    # mouth runs from the image-left corner across the top lip and back along the bottom
    outer = np.pi + np.pi * np.arange(12) / 6.0
    pts[48:60] = _ellipse(0.0, 0.55, 0.36, 0.13, outer)
    inner = np.pi + np.pi * np.arange(8) / 4.0
    pts[60:68] = _ellipse(0.0, 0.55, 0.24, 0.05, inner)
    return pts


def template_face() -> np.ndarray:
    """Return the (68, 3) template, mirror-symmetric about x = 0."""
    xy = _template_xy()
    z = 0.35 * (1.0 - xy[:, 0] ** 2) - 0.1 * np.clip(xy[:, 1], 0, None)
    z[27:31] += np.linspace(0.05, 0.3, 4)
    z[31:36] += 0.15
    shape = np.column_stack([xy, z])
    shape -= shape.mean(axis=0)
    return np.round(shape, 4) + 0.0


def mirror_permutation() -> np.ndarray:
    """Index map taking each landmark to its horizontal mirror partner."""
    perm = np.arange(N_LANDMARKS)
    perm[0:17] = np.arange(16, -1, -1)
    perm[17:27] = np.arange(26, 16, -1)
    perm[31:36] = np.arange(35, 30, -1)
    perm[36:48] = [45, 44, 43, 42, 47, 46, 39, 38, 37, 36, 41, 40]
    perm[48:60] = [54, 53, 52, 51, 50, 49, 48, 59, 58, 57, 56, 55]
    perm[60:68] = [64, 63, 62, 61, 60, 67, 66, 65]
    return perm
