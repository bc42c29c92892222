"""Monte Carlo point-source raytracer for the two design scenarios.

Geometry conventions (millimeters everywhere):

* Reflector: a Lambertian point source at the origin emits into the +z cone
  (half-angle 85 deg). The mirror is the radial SH surface over that cone,
  evaluated in its tilted frame; reflected rays travel to the receiver plane
  at z = -3000 where a 500 x 500 square sits at the requested (x, y) offset.
  Rays that do not head to -z after reflection are lost. Self-reintersection
  with the mirror is ignored.
* Lens: the source emits into the +z cone (half-angle 70 deg) inside a PMMA
  lens. The inner surface is a sphere concentric with the source, so rays
  cross it undeviated; the single refraction happens at the outer freeform
  surface (n = 1.49 into air), after which rays propagate to the receiver
  rectangle at z = +distance. Total internal reflection counts as lost.

Tracing is deterministic for fixed (seed, n_rays) regardless of worker
count: rays are split into fixed-size chunks, each chunk draws from its own
counter-based substream keyed by (seed, chunk index), and per-chunk integer
count grids are merged in chunk order.
"""

from __future__ import annotations

import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .shsurface import (
    InvalidSurfaceError,
    SurfaceModel,
    direction_to_angles,
    normals_from_gradients,
    pole_gradient,
    radius_and_gradients,
    validate_surface,
)

DEFAULT_RAYS = 2_000_000
TRACE_CHUNK = 65_536  # fixed so results do not depend on the thread count

REFLECTOR_SQUARE_MM = 500.0
REFLECTOR_PLANE_Z_MM = -3000.0


class DegenerateTargetError(ValueError):
    """Receiver rectangle has a non-positive width or height."""


@dataclass(frozen=True)
class Scenario:
    """Fixed optical geometry plus the metric's grid and kernel presets."""

    kind: str  # "reflector_offset" or "lens_rect"
    cone_half_angle: float  # radians
    refractive_index: float
    base_radius: float  # mm, nominal c00 sphere
    inner_radius: float  # mm, lens entry sphere (no deviation; 0 for reflector)
    grid_n: int
    kernel_px: int
    sh_order: int = 10

    @classmethod
    def reflector(cls) -> "Scenario":
        return cls(
            kind="reflector_offset",
            cone_half_angle=math.radians(85.0),
            refractive_index=1.0,
            base_radius=50.0,
            inner_radius=0.0,
            grid_n=81,
            kernel_px=5,
        )

    @classmethod
    def lens(cls) -> "Scenario":
        return cls(
            kind="lens_rect",
            cone_half_angle=math.radians(70.0),
            refractive_index=1.49,
            base_radius=25.0,
            inner_radius=15.0,
            grid_n=41,
            kernel_px=3,
        )

    @classmethod
    def preset(cls, kind: str) -> "Scenario":
        if kind == "reflector_offset":
            return cls.reflector()
        if kind == "lens_rect":
            return cls.lens()
        raise ValueError(f"unknown scenario kind {kind!r}")

    def target_rect(self, target) -> tuple[float, float, float, float, float]:
        """Receiver rectangle (xc, yc, width, height, plane_z) for a target spec."""
        if self.kind == "reflector_offset":
            if not isinstance(target, OffsetTarget):
                raise TypeError("reflector scenario needs an OffsetTarget")
            return (target.x_off, target.y_off, REFLECTOR_SQUARE_MM,
                    REFLECTOR_SQUARE_MM, REFLECTOR_PLANE_Z_MM)
        if not isinstance(target, RectTarget):
            raise TypeError("lens scenario needs a RectTarget")
        if target.width <= 0.0 or target.height <= 0.0 or target.distance <= 0.0:
            raise DegenerateTargetError("rectangle width/height/distance must be positive")
        return (0.0, 0.0, target.width, target.height, target.distance)


@dataclass(frozen=True)
class OffsetTarget:
    """Scenario A performance point: offset of the fixed 500 mm square."""

    x_off: float
    y_off: float

    def params(self) -> tuple[float, ...]:
        return (self.x_off, self.y_off)


@dataclass(frozen=True)
class RectTarget:
    """Scenario B performance point: rectangle width/height at a distance."""

    width: float
    height: float
    distance: float

    def params(self) -> tuple[float, ...]:
        return (self.width, self.height, self.distance)


@dataclass
class IrradianceMap:
    """Binned target-plane flux with spill/loss accounting."""

    grid: np.ndarray  # (grid_n, grid_n), row 0 at the minimum-y edge
    extent: tuple[float, float, float, float]  # xc, yc, width, height (mm)
    rays_launched: int
    rays_binned: int
    rays_spilled: int
    rays_lost: int
    seed: int = 0

    def mean(self) -> float:
        return float(self.grid.mean())


@dataclass
class TraceStats:
    spill_fraction: float
    loss_fraction: float
    wall_time: float


def _substream(seed: int, chunk_index: int) -> np.random.Generator:
    """Counter-based substream: Philox keyed by the seed, counter by the chunk."""
    key = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    return np.random.Generator(np.random.Philox(key=key, counter=chunk_index << 128))


def sample_lambertian(cone_half_angle: float, rng: np.random.Generator, n: int) -> np.ndarray:
    """n unit directions with flux density cos(t) sin(t) inside the cone.

    Inverse-CDF sampling: theta = asin(sqrt(u) * sin(t_max)), phi uniform.
    """
    u = rng.random(n)
    v = rng.random(n)
    theta = np.arcsin(np.sqrt(u) * math.sin(cone_half_angle))
    phi = 2.0 * math.pi * v
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def reflect(d: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Specular reflection d - 2 (d . n) n; expects d . n < 0."""
    d = np.asarray(d, dtype=float)
    n = np.asarray(n, dtype=float)
    dot = np.sum(d * n, axis=-1, keepdims=True)
    if np.any(np.abs(dot) < 1e-9):
        warnings.warn("grazing incidence: |d . n| < 1e-9", RuntimeWarning, stacklevel=2)
    return d - 2.0 * dot * n


def refract(d: np.ndarray, n: np.ndarray, n1: float, n2: float):
    """Snell refraction in vector form.

    `n` must point toward the incidence side (d . n < 0). Returns
    (directions, tir) where tir marks rays past the critical angle; their
    direction entries are not meaningful. TIR is a value, not an error.
    """
    d = np.asarray(d, dtype=float)
    n = np.asarray(n, dtype=float)
    eta = n1 / n2
    cos_i = -np.sum(d * n, axis=-1)
    sin2_t = eta * eta * (1.0 - cos_i * cos_i)
    tir = sin2_t > 1.0
    cos_t = np.sqrt(np.maximum(1.0 - sin2_t, 0.0))
    out = eta * d + (eta * cos_i - cos_t)[..., None] * n
    return out, tir


def refract_clamped(d: np.ndarray, n: np.ndarray, n1: float, n2: float) -> np.ndarray:
    """Refraction with the transmitted angle clamped at grazing.

    Used by the design fit so the residual stays defined (and continuous up
    to the TIR boundary) while the optimizer passes near it.
    """
    d = np.asarray(d, dtype=float)
    n = np.asarray(n, dtype=float)
    eta = n1 / n2
    cos_i = -np.sum(d * n, axis=-1)
    sin2_t = np.minimum(eta * eta * (1.0 - cos_i * cos_i), 1.0 - 1e-12)
    cos_t = np.sqrt(1.0 - sin2_t)
    out = eta * d + (eta * cos_i - cos_t)[..., None] * n
    # renormalize: clamping breaks unit length past the critical angle
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def _surface_frame(surface: SurfaceModel):
    rot = surface.rotation()
    tilted = not (surface.tilt_alpha == 0.0 and surface.tilt_beta == 0.0)
    return rot, tilted


def intersect_and_normals(surface: SurfaceModel, d: np.ndarray):
    """Closed-form hit of origin rays with the radial surface.

    Returns (points, outward world normals, radii). Directions d are world
    frame; the surface is evaluated at the angles of R^T d.
    """
    rot, tilted = _surface_frame(surface)
    d_local = d @ rot if tilted else d  # R^T d
    theta, phi = direction_to_angles(d_local)
    r, dr_dt, dr_dp = radius_and_gradients(surface.coeffs.values, theta, phi)
    if np.any(r <= 0.0):
        raise InvalidSurfaceError("ray hit non-positive surface radius")
    pole_ab = pole_gradient(surface.coeffs.values)
    n_local = normals_from_gradients(theta, phi, r, dr_dt, dr_dp, pole_ab=pole_ab)
    n_world = n_local @ rot.T if tilted else n_local
    return r[..., None] * d, n_world, r


def _bin_hits(x, y, rect, grid_n):
    xc, yc, width, height = rect
    ix = np.floor((x - (xc - 0.5 * width)) / width * grid_n).astype(np.int64)
    iy = np.floor((y - (yc - 0.5 * height)) / height * grid_n).astype(np.int64)
    inside = (ix >= 0) & (ix < grid_n) & (iy >= 0) & (iy < grid_n)
    flat = iy[inside] * grid_n + ix[inside]
    counts = np.bincount(flat, minlength=grid_n * grid_n).reshape(grid_n, grid_n)
    return counts, int(inside.sum())


def _trace_chunk(scenario: Scenario, surface: SurfaceModel | None, rect, plane_z,
                 seed: int, chunk_index: int, n: int):
    rng = _substream(seed, chunk_index)
    d = sample_lambertian(scenario.cone_half_angle, rng, n)

    if surface is None:
        out = d
        alive = out[:, 2] * np.sign(plane_z) > 0.0
    elif scenario.kind == "reflector_offset":
        p, n_world, _ = intersect_and_normals(surface, d)
        n_face = -n_world  # concave side seen from the source
        facing = np.sum(d * n_face, axis=-1) < 0.0
        out = reflect(d, n_face)
        alive = facing & (out[:, 2] < 0.0)
    else:
        p, n_world, _ = intersect_and_normals(surface, d)
        exiting = np.sum(d * n_world, axis=-1) > 0.0
        out, tir = refract(d, -n_world, scenario.refractive_index, 1.0)
        alive = exiting & ~tir & (out[:, 2] > 0.0)

    if surface is None:
        t = plane_z / out[:, 2]
        hx = t * out[:, 0]
        hy = t * out[:, 1]
    else:
        t = (plane_z - p[:, 2]) / np.where(alive, out[:, 2], 1.0)
        hx = p[:, 0] + t * out[:, 0]
        hy = p[:, 1] + t * out[:, 1]

    counts, n_binned = _bin_hits(hx[alive], hy[alive], rect, scenario.grid_n)
    n_lost = int(n - alive.sum())
    n_spilled = n - n_lost - n_binned
    return counts, n_binned, n_spilled, n_lost


def trace_design(scenario: Scenario, surface: SurfaceModel | None, target,
                 n_rays: int = DEFAULT_RAYS, seed: int = 0,
                 threads: int = 1) -> tuple[IrradianceMap, TraceStats]:
    """Trace n_rays through the scenario's optic onto the receiver grid.

    surface=None bypasses the optic entirely (bare-source oracle hook).
    Deterministic for fixed (seed, n_rays) independent of `threads`.
    """
    if n_rays < 1:
        raise ValueError("n_rays must be >= 1")
    xc, yc, width, height, plane_z = scenario.target_rect(target)
    if surface is not None:
        validate_surface(surface, scenario.cone_half_angle)

    t_start = time.perf_counter()
    rect = (xc, yc, width, height)
    sizes = [TRACE_CHUNK] * (n_rays // TRACE_CHUNK)
    if n_rays % TRACE_CHUNK:
        sizes.append(n_rays % TRACE_CHUNK)

    def run(idx_size):
        idx, size = idx_size
        return _trace_chunk(scenario, surface, rect, plane_z, seed, idx, size)

    jobs = list(enumerate(sizes))
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    grid = np.zeros((scenario.grid_n, scenario.grid_n), dtype=np.int64)
    binned = spilled = lost = 0
    for counts, n_b, n_s, n_l in results:  # chunk-index order
        grid += counts
        binned += n_b
        spilled += n_s
        lost += n_l

    wall = time.perf_counter() - t_start
    irr = IrradianceMap(
        grid=grid.astype(float),
        extent=(xc, yc, width, height),
        rays_launched=n_rays,
        rays_binned=binned,
        rays_spilled=spilled,
        rays_lost=lost,
        seed=seed,
    )
    stats = TraceStats(
        spill_fraction=spilled / n_rays,
        loss_fraction=lost / n_rays,
        wall_time=wall,
    )
    return irr, stats


def smooth(irr: IrradianceMap, kernel_px: int) -> IrradianceMap:
    """Box average with borders renormalized over their in-grid support."""
    if kernel_px % 2 != 1:
        raise ValueError("kernel_px must be odd")
    if kernel_px > irr.grid.shape[0]:
        raise ValueError("kernel_px exceeds grid size")
    if kernel_px == 1:
        return replace(irr, grid=irr.grid.copy())
    summed = _box_sum(irr.grid, kernel_px)
    support = _box_sum(np.ones_like(irr.grid), kernel_px)
    return replace(irr, grid=summed / support)


def _box_sum(grid: np.ndarray, k: int) -> np.ndarray:
    """Sliding k x k window sum with zero padding, via an integral image."""
    half = k // 2
    padded = np.zeros((grid.shape[0] + 2 * half, grid.shape[1] + 2 * half))
    padded[half:half + grid.shape[0], half:half + grid.shape[1]] = grid
    csum = padded.cumsum(axis=0).cumsum(axis=1)
    csum = np.pad(csum, ((1, 0), (1, 0)))
    return (csum[k:, k:] - csum[:-k, k:] - csum[k:, :-k] + csum[:-k, :-k])


def nonuniformity(irr: IrradianceMap) -> float:
    """100 * (RMS deviation about the mean) / mean, over all grid cells."""
    mean = irr.grid.mean()
    if mean <= 0.0:
        raise ValueError("irradiance map is empty: mean flux is zero")
    return float(100.0 * irr.grid.std() / mean)


@dataclass
class EvalResult:
    raw: IrradianceMap
    smoothed: IrradianceMap
    stats: TraceStats
    nonuniformity_pct: float


def evaluate_design(scenario: Scenario, surface: SurfaceModel | None, target,
                    n_rays: int = DEFAULT_RAYS, seed: int = 0,
                    threads: int = 1) -> EvalResult:
    """Trace, smooth with the scenario's kernel, and score non-uniformity."""
    raw, stats = trace_design(scenario, surface, target, n_rays=n_rays,
                              seed=seed, threads=threads)
    smoothed = smooth(raw, scenario.kernel_px)
    return EvalResult(raw=raw, smoothed=smoothed, stats=stats,
                      nonuniformity_pct=nonuniformity(smoothed))


# ---------------------------------------------------------------------------
# irradiance file formats


def write_irradiance_csv(irr: IrradianceMap, path) -> None:
    """grid_n x grid_n comma-separated values, row 0 at the minimum-y edge."""
    xc, yc, width, height = (float(v) for v in irr.extent)
    with open(path, "w") as fh:
        fh.write(f"# extent_mm={xc!r},{yc!r},{width!r},{height!r} "
                 f"rays={irr.rays_launched} seed={irr.seed}\n")
        for row in irr.grid:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


def read_irradiance_csv(path) -> IrradianceMap:
    with open(path) as fh:
        header = fh.readline().strip()
        rows = [np.array([float(v) for v in line.split(",")]) for line in fh if line.strip()]
    if not header.startswith("# extent_mm="):
        raise ValueError("missing irradiance CSV header")
    fields = dict(part.split("=", 1) for part in header[2:].split(" "))
    xc, yc, width, height = (float(v) for v in fields["extent_mm"].split(","))
    grid = np.vstack(rows)
    n_rays = int(fields["rays"])
    return IrradianceMap(
        grid=grid,
        extent=(xc, yc, width, height),
        rays_launched=n_rays,
        rays_binned=0,
        rays_spilled=0,
        rays_lost=0,
        seed=int(fields["seed"]),
    )


def write_irradiance_pgm(irr: IrradianceMap, path) -> None:
    """8-bit grayscale PGM, linear scale, for quick viewing."""
    peak = irr.grid.max()
    scale = 255.0 / peak if peak > 0 else 0.0
    pixels = np.rint(irr.grid[::-1] * scale).astype(np.uint8)  # image row 0 at top
    with open(path, "wb") as fh:
        fh.write(f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode())
        fh.write(pixels.tobytes())
