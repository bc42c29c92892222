"""Real spherical-harmonic freeform surfaces.

A surface is a radial height function r(theta, phi) = sum c_lm Y_lm over the
direction sphere, plus a rigid tilt. The basis is the real orthonormal
convention without the Condon-Shortley phase: m > 0 are cosine terms, m < 0
sine terms. Coefficients are stored as a dense flat vector ordered by l, then
m from -l to l, so entry l*l + l + m holds c_lm.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

Y00 = 0.5 / math.sqrt(math.pi)  # constant l=0 basis value


class InvalidSurfaceError(ValueError):
    """Surface radius is non-positive somewhere it must be evaluated."""


def basis_size(order: int) -> int:
    return (order + 1) ** 2


def flat_index(l: int, m: int) -> int:
    """Position of (l, m) in the dense coefficient vector."""
    if abs(m) > l:
        raise ValueError(f"|m| must be <= l, got l={l} m={m}")
    return l * l + l + m


def _tri_index(l: int, m: int) -> int:
    # index of (l, m>=0) in the packed associated-Legendre table
    return l * (l + 1) // 2 + m


@lru_cache(maxsize=8)
def _recurrence_coeffs(order: int):
    """Precomputed coefficients of the normalized Legendre recurrences."""
    a = np.zeros((order + 1, order + 1))
    b = np.zeros((order + 1, order + 1))
    for m in range(order + 1):
        for l in range(m + 2, order + 1):
            a[l, m] = math.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b[l, m] = math.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
    diag = np.array(
        [math.sqrt((2.0 * m + 1.0) / (2.0 * m)) if m > 0 else 0.0 for m in range(order + 1)]
    )
    return a, b, diag


def _legendre_table(order: int, cos_t: np.ndarray, sin_t: np.ndarray) -> np.ndarray:
    """Orthonormalized associated Legendre values P[l, m>=0] at cos(theta).

    Normalization folds in sqrt((2l+1)/(4 pi) (l-m)!/(l+m)!) so the complex
    harmonics P * exp(i m phi) are orthonormal; no Condon-Shortley phase.
    Stable for any order (no factorials are formed).
    """
    a, b, diag = _recurrence_coeffs(order)
    n_pairs = (order + 1) * (order + 2) // 2
    table = np.empty((n_pairs,) + cos_t.shape)
    table[0] = 0.5 / math.sqrt(math.pi)
    for m in range(order + 1):
        if m > 0:
            # diagonal step: P_m^m from P_{m-1}^{m-1}
            table[_tri_index(m, m)] = diag[m] * sin_t * table[_tri_index(m - 1, m - 1)]
        if m + 1 <= order:
            table[_tri_index(m + 1, m)] = math.sqrt(2.0 * m + 3.0) * cos_t * table[_tri_index(m, m)]
        for l in range(m + 2, order + 1):
            table[_tri_index(l, m)] = a[l, m] * (
                cos_t * table[_tri_index(l - 1, m)] - b[l, m] * table[_tri_index(l - 2, m)]
            )
    return table


def _legendre_theta_derivative(order: int, table: np.ndarray) -> np.ndarray:
    """d/dtheta of the normalized Legendre table, via the ladder identity.

    dP_l^m = ((l+m)(l-m+1))^(1/2)/2 * P_l^(m-1) - ((l-m)(l+m+1))^(1/2)/2 * P_l^(m+1)
    for m >= 1, and dP_l^0 = -sqrt(l(l+1)) P_l^1. Pole-safe: no 1/sin(theta).
    """
    dtable = np.zeros_like(table)
    for l in range(1, order + 1):
        dtable[_tri_index(l, 0)] = -math.sqrt(l * (l + 1.0)) * table[_tri_index(l, 1)]
        for m in range(1, l + 1):
            d = math.sqrt((l + m) * (l - m + 1.0)) * table[_tri_index(l, m - 1)]
            if m + 1 <= l:
                d = d - math.sqrt((l - m) * (l + m + 1.0)) * table[_tri_index(l, m + 1)]
            dtable[_tri_index(l, m)] = 0.5 * d
    return dtable


def _azimuth_tables(order: int, phi: np.ndarray):
    """cos(m phi), sin(m phi) for m = 0..order via the angle-addition recurrence."""
    cos_m = np.empty((order + 1,) + phi.shape)
    sin_m = np.empty((order + 1,) + phi.shape)
    cos_m[0] = 1.0
    sin_m[0] = 0.0
    if order >= 1:
        cos_m[1] = np.cos(phi)
        sin_m[1] = np.sin(phi)
    for m in range(2, order + 1):
        cos_m[m] = cos_m[m - 1] * cos_m[1] - sin_m[m - 1] * sin_m[1]
        sin_m[m] = sin_m[m - 1] * cos_m[1] + cos_m[m - 1] * sin_m[1]
    return cos_m, sin_m


def _check_theta(theta: np.ndarray) -> None:
    if np.any(theta < -1e-12) or np.any(theta > math.pi + 1e-12):
        raise ValueError("theta must lie in [0, pi]")


def eval_sh_basis(order: int, theta, phi) -> np.ndarray:
    """All real orthonormal SH values at (theta, phi).

    Returns an array of shape (*broadcast_shape, (order+1)**2) with entries
    ordered by flat_index. Accepts scalars or arrays.
    """
    y, _, _ = _basis_internal(order, theta, phi, want_grad=False)
    return y


def eval_sh_basis_grad(order: int, theta, phi):
    """Basis values plus analytic d/dtheta and d/dphi, same layout as eval_sh_basis."""
    return _basis_internal(order, theta, phi, want_grad=True)


def _basis_internal(order: int, theta, phi, want_grad: bool):
    if order < 0:
        raise ValueError("order must be >= 0")
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    _check_theta(theta)
    theta, phi = np.broadcast_arrays(theta, phi)
    table = _legendre_table(order, np.cos(theta), np.sin(theta))
    cos_m, sin_m = _azimuth_tables(order, phi)
    dtable = _legendre_theta_derivative(order, table) if want_grad else None

    n = basis_size(order)
    y = np.empty(theta.shape + (n,))
    dth = np.empty_like(y) if want_grad else None
    dph = np.empty_like(y) if want_grad else None
    sqrt2 = math.sqrt(2.0)
    for l in range(order + 1):
        for m in range(0, l + 1):
            p = table[_tri_index(l, m)]
            if m == 0:
                y[..., flat_index(l, 0)] = p
                if want_grad:
                    dth[..., flat_index(l, 0)] = dtable[_tri_index(l, 0)]
                    dph[..., flat_index(l, 0)] = 0.0
            else:
                y[..., flat_index(l, m)] = sqrt2 * p * cos_m[m]
                y[..., flat_index(l, -m)] = sqrt2 * p * sin_m[m]
                if want_grad:
                    dp = dtable[_tri_index(l, m)]
                    dth[..., flat_index(l, m)] = sqrt2 * dp * cos_m[m]
                    dth[..., flat_index(l, -m)] = sqrt2 * dp * sin_m[m]
                    dph[..., flat_index(l, m)] = -sqrt2 * m * p * sin_m[m]
                    dph[..., flat_index(l, -m)] = sqrt2 * m * p * cos_m[m]
    return y, dth, dph


def radius_and_gradients(values: np.ndarray, theta, phi):
    """(r, dr/dtheta, dr/dphi) of r = sum c_lm Y_lm, without forming the basis matrix.

    `values` is the dense coefficient vector; theta/phi may be arrays. The
    accumulation keeps memory at O(order^2 + npoints) which matters when
    tracing millions of rays in chunks.
    """
    order = int(math.isqrt(len(values))) - 1
    if basis_size(order) != len(values):
        raise ValueError(f"coefficient vector length {len(values)} is not a square")
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    _check_theta(theta)
    theta, phi = np.broadcast_arrays(theta, phi)
    table = _legendre_table(order, np.cos(theta), np.sin(theta))
    dtable = _legendre_theta_derivative(order, table)
    cos_m, sin_m = _azimuth_tables(order, phi)

    r = np.zeros(theta.shape)
    dr_dt = np.zeros(theta.shape)
    dr_dp = np.zeros(theta.shape)
    sqrt2 = math.sqrt(2.0)
    for l in range(order + 1):
        c0 = values[flat_index(l, 0)]
        if c0 != 0.0:
            r += c0 * table[_tri_index(l, 0)]
            dr_dt += c0 * dtable[_tri_index(l, 0)]
        for m in range(1, l + 1):
            cc = values[flat_index(l, m)]
            cs = values[flat_index(l, -m)]
            if cc == 0.0 and cs == 0.0:
                continue
            ang = cc * cos_m[m] + cs * sin_m[m]
            dang = m * (cs * cos_m[m] - cc * sin_m[m])
            r += sqrt2 * table[_tri_index(l, m)] * ang
            dr_dt += sqrt2 * dtable[_tri_index(l, m)] * ang
            dr_dp += sqrt2 * table[_tri_index(l, m)] * dang
    return r, dr_dt, dr_dp


# ---------------------------------------------------------------------------
# symmetry masks


@dataclass(frozen=True)
class SymmetryMask:
    """Subset of (l, m) indices retained under x -> -x and y -> -y symmetry."""

    order: int
    indices: tuple  # sorted (l, m) pairs

    @property
    def size(self) -> int:
        return len(self.indices)

    def flat_positions(self) -> np.ndarray:
        return np.array([flat_index(l, m) for l, m in self.indices], dtype=int)

    def pack(self, full: np.ndarray) -> np.ndarray:
        """Extract the retained entries from a dense coefficient vector."""
        return np.asarray(full, dtype=float)[self.flat_positions()]

    def unpack(self, masked: np.ndarray) -> np.ndarray:
        """Dense coefficient vector with zeros outside the mask."""
        masked = np.asarray(masked, dtype=float)
        if masked.shape[-1] != self.size:
            raise ValueError(f"expected {self.size} masked values, got {masked.shape[-1]}")
        full = np.zeros(masked.shape[:-1] + (basis_size(self.order),))
        full[..., self.flat_positions()] = masked
        return full


def quadrant_mask(order: int) -> SymmetryMask:
    """Mask of terms invariant under both x and y sign flips: m >= 0 and m even.

    At order 10 this keeps 36 of the 121 terms.
    """
    if order < 0:
        raise ValueError("order must be >= 0")
    idx = tuple((l, m) for l in range(order + 1) for m in range(0, l + 1, 2))
    return SymmetryMask(order=order, indices=idx)


# ---------------------------------------------------------------------------
# tilt


def tilt_matrix(alpha: float, beta: float) -> np.ndarray:
    """Rotation R = R_y(beta) @ R_x(alpha); the surface lives in the rotated frame."""
    ca, sa = math.cos(alpha), math.sin(alpha)
    cb, sb = math.cos(beta), math.sin(beta)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, ca, -sa], [0.0, sa, ca]])
    ry = np.array([[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]])
    return ry @ rx


def apply_tilt(direction: np.ndarray, alpha: float, beta: float, inverse: bool = False) -> np.ndarray:
    """Rotate direction(s) by the tilt; inverse applies the transpose.

    Accepts a single 3-vector or an (..., 3) array.
    """
    rot = tilt_matrix(alpha, beta)
    if inverse:
        rot = rot.T
    return np.asarray(direction, dtype=float) @ rot.T


def direction_to_angles(direction: np.ndarray):
    """(theta, phi) of unit direction(s); theta in [0, pi], phi in (-pi, pi]."""
    d = np.asarray(direction, dtype=float)
    theta = np.arctan2(np.hypot(d[..., 0], d[..., 1]), d[..., 2])
    phi = np.arctan2(d[..., 1], d[..., 0])
    return theta, phi


def angles_to_direction(theta, phi) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


# ---------------------------------------------------------------------------
# surfaces


@dataclass
class SHCoefficients:
    """Dense SH coefficient vector with an optional quadrant-symmetry mask."""

    order: int
    values: np.ndarray
    mask: SymmetryMask | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (basis_size(self.order),):
            raise ValueError(
                f"need {basis_size(self.order)} coefficients for order {self.order}, "
                f"got {self.values.shape}"
            )
        if self.mask is not None and self.mask.order != self.order:
            raise ValueError("mask order differs from coefficient order")
        if self.mask is not None:
            outside = np.delete(self.values, self.mask.flat_positions())
            if np.any(outside != 0.0):
                raise ValueError("masked coefficient vector has nonzero entries outside the mask")

    @classmethod
    def from_masked(cls, mask: SymmetryMask, masked_values: np.ndarray) -> "SHCoefficients":
        return cls(order=mask.order, values=mask.unpack(masked_values), mask=mask)


@dataclass
class SurfaceModel:
    """SH coefficients plus tilt: the design-parameter-space point."""

    coeffs: SHCoefficients
    tilt_alpha: float = 0.0
    tilt_beta: float = 0.0

    def __post_init__(self):
        if abs(self.tilt_alpha) >= math.pi / 2 or abs(self.tilt_beta) >= math.pi / 2:
            raise ValueError("tilt angles must satisfy |tilt| < pi/2")

    @property
    def order(self) -> int:
        return self.coeffs.order

    def rotation(self) -> np.ndarray:
        return tilt_matrix(self.tilt_alpha, self.tilt_beta)

    def to_dict(self) -> dict:
        mask = self.coeffs.mask
        coeffs = mask.pack(self.coeffs.values) if mask is not None else self.coeffs.values
        return {
            "order": self.coeffs.order,
            "mask": "quadrant" if mask is not None else "full",
            "tilt": [self.tilt_alpha, self.tilt_beta],
            "coeffs": [float(c) for c in coeffs],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SurfaceModel":
        order = int(data["order"])
        kind = data.get("mask", "full")
        raw = np.asarray(data["coeffs"], dtype=float)
        if kind == "quadrant":
            coeffs = SHCoefficients.from_masked(quadrant_mask(order), raw)
        elif kind == "full":
            coeffs = SHCoefficients(order=order, values=raw)
        else:
            raise ValueError(f"unknown mask kind {kind!r}")
        tilt = data.get("tilt", [0.0, 0.0])
        return cls(coeffs=coeffs, tilt_alpha=float(tilt[0]), tilt_beta=float(tilt[1]))

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "SurfaceModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def constant_surface(order: int, radius: float, mask: SymmetryMask | None = None) -> SurfaceModel:
    """Sphere of the given radius: c00 = radius / Y00, everything else zero."""
    values = np.zeros(basis_size(order))
    values[0] = radius / Y00
    coeffs = SHCoefficients(order=order, values=values, mask=mask)
    return SurfaceModel(coeffs=coeffs)


def eval_surface(surface: SurfaceModel, theta, phi):
    """(r, dr/dtheta, dr/dphi) at tilted-frame angles; raises if r <= 0."""
    r, dr_dt, dr_dp = radius_and_gradients(surface.coeffs.values, theta, phi)
    if np.any(r <= 0.0):
        raise InvalidSurfaceError("surface radius is non-positive")
    return r, dr_dt, dr_dp


def normals_from_gradients(theta, phi, r, dr_dt, dr_dp, pole_ab=None) -> np.ndarray:
    """Outward unit normals of r = f(theta, phi) in the surface's own frame.

    n is proportional to r_hat - (f_t/f) theta_hat - (f_p/(f sin t)) phi_hat. Near
    the pole the phi term is replaced by its Cartesian limit; `pole_ab` supplies
    the (df/dx, df/dy) pole gradient when any theta is smaller than 1e-6.
    """
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    st, ct = np.sin(theta), np.cos(theta)
    sp, cp = np.sin(phi), np.cos(phi)
    at_pole = st < 1e-6
    safe_st = np.where(at_pole, 1.0, st)

    g_t = dr_dt / r
    g_p = dr_dp / (r * safe_st)
    nx = st * cp - g_t * ct * cp + g_p * sp
    ny = st * sp - g_t * ct * sp - g_p * cp
    nz = ct + g_t * st
    n = np.stack([nx, ny, nz], axis=-1)
    if np.any(at_pole):
        if pole_ab is None:
            raise ValueError("pole gradient required for theta < 1e-6")
        a, b = pole_ab
        pole_n = np.stack(
            [np.broadcast_to(-a, r.shape), np.broadcast_to(-b, r.shape), r], axis=-1
        )
        n = np.where(at_pole[..., None], pole_n, n)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def pole_gradient(values: np.ndarray):
    """(df/dx, df/dy) of the surface at theta = 0, in local Cartesian angle coords.

    Only m = +/-1 terms contribute at the pole; evaluated via the pole-safe
    theta-derivative at phi = 0 and phi = pi/2.
    """
    theta0 = np.zeros(2)
    phi0 = np.array([0.0, math.pi / 2.0])
    _, dr_dt, _ = radius_and_gradients(values, theta0, phi0)
    return float(dr_dt[0]), float(dr_dt[1])


def surface_normal(surface: SurfaceModel, theta, phi) -> np.ndarray:
    """World-frame outward unit normal at tilted-frame angles (theta, phi)."""
    r, dr_dt, dr_dp = eval_surface(surface, theta, phi)
    pole_ab = pole_gradient(surface.coeffs.values)
    n_local = normals_from_gradients(theta, phi, r, dr_dt, dr_dp, pole_ab=pole_ab)
    return n_local @ surface.rotation().T


def validate_surface(surface: SurfaceModel, cone_half_angle: float,
                     n_theta: int = 64, n_phi: int = 128) -> float:
    """Check r > 0 on a dense angular grid over the emission cone.

    Returns the minimum radius found; raises InvalidSurfaceError if it is
    not strictly positive.
    """
    theta = np.linspace(0.0, cone_half_angle, n_theta)
    phi = np.linspace(0.0, 2.0 * math.pi, n_phi, endpoint=False)
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    r, _, _ = radius_and_gradients(surface.coeffs.values, tt, pp)
    r_min = float(r.min())
    if r_min <= 0.0:
        raise InvalidSurfaceError(f"surface radius reaches {r_min:.3g} mm inside the cone")
    return r_min
