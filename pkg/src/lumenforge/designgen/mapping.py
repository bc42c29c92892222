"""Equal-flux correspondence between source directions and target points.

Lambertian flux through a cone is uniform over the disk coordinates
(u, v) = (sin t cos p, sin t sin p): the flux element cos t sin t dt dp equals
du dv / 2. Composing that disk with the concentric equal-area square map
therefore sends equal source-flux cells to equal target-area cells, which is
the prescription a uniform rectangle asks for.
"""

from __future__ import annotations

import math

import numpy as np

from ..optics import Scenario
from ..shsurface import angles_to_direction, direction_to_angles

_QUARTER = math.pi / 4.0


def square_to_disk(sx, sy):
    """Concentric equal-area map from [-1, 1]^2 onto the unit disk."""
    sx = np.asarray(sx, dtype=float)
    sy = np.asarray(sy, dtype=float)
    first = np.abs(sx) > np.abs(sy)
    # avoid 0/0 at the center; the radius factor zeroes the result there
    denom_x = np.where(sx == 0.0, 1.0, sx)
    denom_y = np.where(sy == 0.0, 1.0, sy)
    r = np.where(first, sx, sy)
    phi = np.where(first, _QUARTER * (sy / denom_x), math.pi / 2.0 - _QUARTER * (sx / denom_y))
    return r * np.cos(phi), r * np.sin(phi)


def disk_to_square(u, v):
    """Inverse of square_to_disk; distorts areas by the constant 4/pi."""
    scalar = np.isscalar(u) and np.isscalar(v)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    r = np.hypot(u, v)
    phi = np.arctan2(v, u)
    phi = np.where(phi < -_QUARTER, phi + 2.0 * math.pi, phi)
    sx = np.empty_like(r)
    sy = np.empty_like(r)

    sector0 = phi < _QUARTER
    sector1 = (phi >= _QUARTER) & (phi < 3.0 * _QUARTER)
    sector2 = (phi >= 3.0 * _QUARTER) & (phi < 5.0 * _QUARTER)
    sector3 = phi >= 5.0 * _QUARTER

    sx[sector0] = r[sector0]
    sy[sector0] = phi[sector0] * r[sector0] / _QUARTER
    sy[sector1] = r[sector1]
    sx[sector1] = -(phi[sector1] - math.pi / 2.0) * r[sector1] / _QUARTER
    sx[sector2] = -r[sector2]
    sy[sector2] = -(phi[sector2] - math.pi) * r[sector2] / _QUARTER
    sy[sector3] = -r[sector3]
    sx[sector3] = (phi[sector3] - 3.0 * math.pi / 2.0) * r[sector3] / _QUARTER
    if scalar:
        return float(sx[0]), float(sy[0])
    return sx, sy


def target_map(scenario: Scenario, target, direction) -> np.ndarray:
    """Ideal landing point (x, y) on the target plane for source direction(s).

    Equal-flux by construction: the Lambertian cone pushes forward to a
    uniform distribution on the receiver rectangle.
    """
    theta, phi = direction_to_angles(np.asarray(direction, dtype=float))
    scale = math.sin(scenario.cone_half_angle)
    u = np.sin(theta) * np.cos(phi) / scale
    v = np.sin(theta) * np.sin(phi) / scale
    sx, sy = disk_to_square(u, v)
    xc, yc, width, height, _ = scenario.target_rect(target)
    return np.stack([xc + 0.5 * width * np.asarray(sx), yc + 0.5 * height * np.asarray(sy)], axis=-1)


def equal_flux_directions(cone_half_angle: float, n: int) -> np.ndarray:
    """Deterministic (n*n, 3) direction grid stratified in cumulative flux.

    Cell centers of an n x n grid on the square map back through the
    concentric map, so each direction carries the same source flux and
    corresponds to one target grid cell under target_map.
    """
    centers = (np.arange(n) + 0.5) / n * 2.0 - 1.0
    sx, sy = np.meshgrid(centers, centers, indexing="ij")
    u, v = square_to_disk(sx.ravel(), sy.ravel())
    sin_t = np.hypot(u, v) * math.sin(cone_half_angle)
    theta = np.arcsin(np.clip(sin_t, 0.0, 1.0))
    phi = np.arctan2(v, u)
    return angles_to_direction(theta, phi)
