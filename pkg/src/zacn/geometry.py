"""Pinhole geometry and the depth-guided sampling-offset pipeline.

Coordinate conventions (standard computer vision):

  * camera frame is right-handed: X right, Y down, Z forward (meters),
  * image frame: ``u`` = column, ``v`` = row, origin at the top-left
    pixel center, so back-projection is
    ``X = (u - cu) * Z / fu``, ``Y = (v - cv) * Z / fv``.

The offset pipeline, per output pixel ``p``:

  1. gather the regular receptive field on the depth map (coordinates
     clamped to the image),
  2. back-project the valid-depth taps into a 3D point cloud,
  3. least-squares fit a plane through the back-projected center ``P0``
     (smallest eigenvector of the scatter matrix of ``Pi - P0``),
  4. build an orthonormal in-plane basis with a horizontal x axis,
  5. scale a regular grid on the plane so that a fronto-parallel plane
     reproduces the dilated pixel grid exactly,
  6. project the 3D grid back to the image; the offsets are the
     projected positions minus the regular grid positions.

Pixels with invalid center depth, fewer than 3 valid neighbors, or a
rank-deficient (collinear) neighborhood fall back to zero offsets, which
reduces the adapted operators to their standard counterparts there.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BehindCameraError,
    ConfigError,
    DegenerateBasisError,
    DegenerateNeighborhoodError,
    InvalidDepthError,
)
from .tensor import DepthMap, OffsetField

__all__ = [
    "CameraIntrinsics",
    "Point3",
    "PlaneFrame",
    "ScaleFactors",
    "KernelSpec",
    "OffsetSummary",
    "back_project",
    "project",
    "fit_plane",
    "basis_from_normal",
    "frame_from_normal",
    "scale_factors",
    "grid_3d",
    "compute_offsets",
]

# Unit/orthogonality tolerance for plane frames and the basis guard.
_FRAME_TOL = 1e-6
# Relative eigenvalue gap below which a neighborhood counts as collinear.
_RANK_TOL = 1e-9
# Components smaller than this count as zero in the normal-sign tie-break.
# Set to the degenerate-basis zone width (n2^2 >= 1 - 1e-6 implies
# |n1|, |n3| <= 1e-3) so every normal in that zone tie-breaks to n2 >= 0
# and the fallback frame is constant there instead of flipping on noise.
_SIGN_TOL = 1e-3


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole parameters: focal lengths and principal point, in pixels."""

    fu: float
    fv: float
    cu: float
    cv: float

    def __post_init__(self):
        for name in ("fu", "fv", "cu", "cv"):
            val = getattr(self, name)
            if not math.isfinite(val):
                raise ConfigError(f"intrinsic {name}={val} is not finite")
        if self.fu <= 0 or self.fv <= 0:
            raise ConfigError(f"focal lengths must be positive, got ({self.fu}, {self.fv})")


@dataclass(frozen=True)
class Point3:
    """A camera-frame 3D point in meters."""

    X: float
    Y: float
    Z: float

    def __post_init__(self):
        if not (math.isfinite(self.X) and math.isfinite(self.Y) and math.isfinite(self.Z)):
            raise ConfigError(f"point ({self.X}, {self.Y}, {self.Z}) is not finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.X, self.Y, self.Z], dtype=np.float64)


@dataclass(frozen=True)
class ScaleFactors:
    """Metric grid step along the in-plane axes (meters per tap)."""

    ku: float
    kv: float


@dataclass(frozen=True)
class KernelSpec:
    """Kernel geometry of the regular sampling grid.

    ``size`` must be odd so a center tap exists; taps are enumerated
    row-major, tap ``(i, j)`` sitting at displacement
    ``(dilation * (i - c), dilation * (j - c))`` with ``c = (size-1)//2``.
    """

    size: int
    dilation: int = 1
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.size < 1 or self.size % 2 == 0:
            raise ConfigError(f"kernel size must be odd and >= 1, got {self.size}")
        if self.dilation < 1:
            raise ConfigError(f"dilation must be >= 1, got {self.dilation}")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ConfigError(f"padding must be >= 0, got {self.padding}")

    @classmethod
    def same(cls, size: int, dilation: int = 1, stride: int = 1) -> "KernelSpec":
        """Spec whose padding keeps unit-stride output the input size."""
        return cls(size, dilation, stride, dilation * (size - 1) // 2)

    @property
    def tap_count(self) -> int:
        return self.size * self.size

    @property
    def offset_channels(self) -> int:
        return 2 * self.size * self.size

    @property
    def center(self) -> int:
        return (self.size - 1) // 2

    def span(self) -> int:
        """Extent of the dilated window in pixels."""
        return self.dilation * (self.size - 1) + 1

    def output_shape(self, height: int, width: int) -> tuple[int, int]:
        oh = (height + 2 * self.padding - self.span()) // self.stride + 1
        ow = (width + 2 * self.padding - self.span()) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ConfigError(
                f"kernel {self.size}x{self.size} (dilation {self.dilation}, "
                f"padding {self.padding}) does not fit a {height}x{width} input"
            )
        return oh, ow

    def tap_grid(self) -> tuple[np.ndarray, np.ndarray]:
        """Row/column displacements of all taps, row-major, shape (N*N,)."""
        c = self.center
        ii, jj = np.meshgrid(np.arange(self.size), np.arange(self.size), indexing="ij")
        return (self.dilation * (ii.ravel() - c), self.dilation * (jj.ravel() - c))


@dataclass(frozen=True)
class PlaneFrame:
    """Orthonormal in-plane basis (x horizontal) anchored at ``origin``."""

    normal: np.ndarray = field(repr=False)
    x_axis: np.ndarray = field(repr=False)
    y_axis: np.ndarray = field(repr=False)
    origin: Point3

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        x = np.asarray(self.x_axis, dtype=np.float64)
        y = np.asarray(self.y_axis, dtype=np.float64)
        for name, vec in (("normal", n), ("x_axis", x), ("y_axis", y)):
            if vec.shape != (3,):
                raise ConfigError(f"{name} must be a 3-vector")
            if abs(np.linalg.norm(vec) - 1.0) > _FRAME_TOL:
                raise ConfigError(f"{name} is not unit length: {vec}")
        if abs(float(x @ n)) > _FRAME_TOL or abs(float(y @ n)) > _FRAME_TOL:
            raise ConfigError("plane axes are not orthogonal to the normal")
        if abs(float(x @ y)) > _FRAME_TOL:
            raise ConfigError("plane axes are not orthogonal to each other")
        if abs(float(x[1])) > _FRAME_TOL:
            raise ConfigError("x axis must be horizontal (zero Y component)")
        if np.max(np.abs(np.cross(n, x) - y)) > _FRAME_TOL:
            raise ConfigError("frame is not right-handed (normal x xAxis != yAxis)")
        for name, vec in (("normal", n), ("x_axis", x), ("y_axis", y)):
            vec = np.ascontiguousarray(vec)
            vec.setflags(write=False)
            object.__setattr__(self, name, vec)


@dataclass(frozen=True)
class OffsetSummary:
    """Bookkeeping for one offset-field computation."""

    total_pixels: int
    degenerate_pixels: int
    basis_fallback_pixels: int

    def as_dict(self) -> dict:
        return {
            "total_pixels": self.total_pixels,
            "degenerate_pixels": self.degenerate_pixels,
            "basis_fallback_pixels": self.basis_fallback_pixels,
        }


def back_project(u: float, v: float, z: float, K: CameraIntrinsics) -> Point3:
    """Lift pixel ``(u, v)`` with depth ``z`` (meters) into the camera frame."""
    if not (math.isfinite(z) and z > 0):
        raise InvalidDepthError(f"depth must be positive and finite, got {z}")
    return Point3((u - K.cu) * z / K.fu, (v - K.cv) * z / K.fv, z)


def project(p, K: CameraIntrinsics) -> tuple[float, float]:
    """Perspective-project a camera-frame point to fractional pixels."""
    if isinstance(p, Point3):
        x, y, z = p.X, p.Y, p.Z
    else:
        x, y, z = (float(t) for t in p)
    if z <= 0:
        raise BehindCameraError(f"cannot project point with Z={z} <= 0")
    return K.fu * x / z + K.cu, K.fv * y / z + K.cv


def _points_to_array(points) -> np.ndarray:
    rows = []
    for p in points:
        if isinstance(p, Point3):
            rows.append((p.X, p.Y, p.Z))
        else:
            rows.append(tuple(float(t) for t in p))
    arr = np.asarray(rows, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ConfigError(f"expected a sequence of 3D points, got shape {arr.shape}")
    return arr


def fit_plane(points, center) -> np.ndarray:
    """Least-squares plane normal through ``center`` for a 3D neighborhood.

    Minimizes the summed squared point-plane distances
    ``sum_i (n . (Pi - P0))^2`` over unit normals ``n``; the minimizer is
    the smallest eigenvector of the 3x3 scatter matrix of the
    center-relative points.  The sign is fixed so ``n3 >= 0`` (ties
    broken by ``n1 >= 0`` then ``n2 >= 0``; components within 1e-3 of
    zero count as ties so noise cannot flip near-axis-aligned normals).

    Raises :class:`DegenerateNeighborhoodError` when fewer than 3 finite
    points remain or the neighborhood is collinear.
    """
    pts = _points_to_array(points)
    pts = pts[np.all(np.isfinite(pts), axis=1)]
    if pts.shape[0] < 3:
        raise DegenerateNeighborhoodError(
            f"plane fit needs >= 3 valid points, got {pts.shape[0]}"
        )
    p0 = center.as_array() if isinstance(center, Point3) else np.asarray(center, np.float64)
    diffs = pts - p0
    scatter = diffs.T @ diffs
    eigvals, normal = _smallest_eigenpair_sym3(scatter[None])
    lam_min, lam_mid, lam_max = (float(e[0]) for e in eigvals)
    if lam_max <= 0.0 or lam_mid <= _RANK_TOL * lam_max:
        raise DegenerateNeighborhoodError("neighborhood is collinear or a single point")
    return normal[0]


def basis_from_normal(n) -> tuple[np.ndarray, np.ndarray]:
    """In-plane orthonormal basis ``(x, y)`` with horizontal ``x``.

    ``x = (n3, 0, -n1) / sqrt(1 - n2^2)`` and
    ``y = (-n1*n2, 1 - n2^2, -n2*n3) / sqrt(1 - n2^2)``, which satisfies
    ``n x xAxis = yAxis``.  Raises :class:`DegenerateBasisError` when
    ``n2^2 >= 1 - 1e-6`` (normal nearly along camera Y); callers should
    substitute the fallback frame ``(1,0,0) / (0,0,-sign(n2))``.
    """
    n = np.asarray(n, dtype=np.float64)
    if n.shape != (3,):
        raise ConfigError(f"normal must be a 3-vector, got shape {n.shape}")
    if abs(np.linalg.norm(n) - 1.0) > _FRAME_TOL:
        raise ConfigError(f"normal must be unit length, got |n|={np.linalg.norm(n)}")
    s2 = 1.0 - n[1] * n[1]
    if s2 <= _FRAME_TOL:
        raise DegenerateBasisError(f"normal {n} is too close to the camera Y axis")
    inv = 1.0 / math.sqrt(s2)
    x = np.array([n[2] * inv, 0.0, -n[0] * inv])
    y = np.array([-n[0] * n[1] * inv, s2 * inv, -n[1] * n[2] * inv])
    return x, y


def frame_from_normal(normal, origin: Point3) -> PlaneFrame:
    """Build a :class:`PlaneFrame`, applying the degenerate-basis fallback.

    Near-vertical normals (``n2^2 >= 1 - 1e-6``) get the fallback frame
    and the stored normal snaps to ``(0, sign(n2), 0)`` so the frame
    invariants hold exactly.
    """
    n = np.asarray(normal, dtype=np.float64)
    try:
        x, y = basis_from_normal(n)
    except DegenerateBasisError:
        sign = 1.0 if n[1] >= 0 else -1.0
        n = np.array([0.0, sign, 0.0])
        x = np.array([1.0, 0.0, 0.0])
        y = np.array([0.0, 0.0, -sign])
    return PlaneFrame(normal=n, x_axis=x, y_axis=y, origin=origin)


def scale_factors(z0: float, spec: KernelSpec, K: CameraIntrinsics) -> ScaleFactors:
    """Grid step sizes ``ku = dilation * z0 / fu``, ``kv = dilation * z0 / fv``.

    Chosen so that on a fronto-parallel plane the projected 3D grid
    lands exactly on the dilated pixel grid.
    """
    if not (math.isfinite(z0) and z0 > 0):
        raise InvalidDepthError(f"center depth must be positive and finite, got {z0}")
    return ScaleFactors(spec.dilation * z0 / K.fu, spec.dilation * z0 / K.fv)


def grid_3d(frame: PlaneFrame, s: ScaleFactors, size: int) -> np.ndarray:
    """Regular ``size x size`` grid on the plane, shape ``(size, size, 3)``.

    ``tap[i, j] = origin + ku*(j - c)*x_axis + kv*(i - c)*y_axis``; the
    center tap equals the origin and every tap lies on the plane.
    """
    if size < 1 or size % 2 == 0:
        raise ConfigError(f"kernel size must be odd and >= 1, got {size}")
    c = (size - 1) // 2
    steps = np.arange(size, dtype=np.float64) - c
    a = s.ku * steps  # along x_axis, varies with column j
    b = s.kv * steps  # along y_axis, varies with row i
    taps = (
        frame.origin.as_array()[None, None, :]
        + a[None, :, None] * frame.x_axis[None, None, :]
        + b[:, None, None] * frame.y_axis[None, None, :]
    )
    return taps


def _smallest_eigenpair_sym3(s: np.ndarray) -> tuple[tuple[np.ndarray, ...], np.ndarray]:
    """Closed-form eigendecomposition of symmetric 3x3 matrices.

    ``s`` has shape ``(..., 3, 3)``.  Returns ``((lam_min, lam_mid,
    lam_max), v_min)`` where ``v_min`` is the unit eigenvector of the
    smallest eigenvalue with the deterministic sign convention
    ``n3 >= 0`` (ties: ``n1 >= 0``, then ``n2 >= 0``).  Eigenvalues come
    from the trigonometric solution of the characteristic cubic; the
    eigenvector is the largest cross product of rows of ``S - lam*I``,
    which is exact for the fronto-parallel (block-diagonal) case.
    """
    a00 = s[..., 0, 0]
    a11 = s[..., 1, 1]
    a22 = s[..., 2, 2]
    a01 = s[..., 0, 1]
    a02 = s[..., 0, 2]
    a12 = s[..., 1, 2]

    q = (a00 + a11 + a22) / 3.0
    b00 = a00 - q
    b11 = a11 - q
    b22 = a22 - q
    p2 = b00 * b00 + b11 * b11 + b22 * b22 + 2.0 * (a01 * a01 + a02 * a02 + a12 * a12)
    p = np.sqrt(p2 / 6.0)
    psafe = np.where(p > 0.0, p, 1.0)
    det = (
        b00 * (b11 * b22 - a12 * a12)
        - a01 * (a01 * b22 - a12 * a02)
        + a02 * (a01 * a12 - b11 * a02)
    )
    r = np.clip(det / (2.0 * psafe**3), -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    lam_max = q + 2.0 * p * np.cos(phi)
    lam_min = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    lam_mid = 3.0 * q - lam_max - lam_min

    # Rows of S - lam_min*I; the eigenvector is orthogonal to all of them.
    r0 = np.stack([a00 - lam_min, a01, a02], axis=-1)
    r1 = np.stack([a01, a11 - lam_min, a12], axis=-1)
    r2 = np.stack([a02, a12, a22 - lam_min], axis=-1)
    c01 = np.cross(r0, r1)
    c02 = np.cross(r0, r2)
    c12 = np.cross(r1, r2)
    norms = np.stack(
        [
            np.einsum("...i,...i->...", c01, c01),
            np.einsum("...i,...i->...", c02, c02),
            np.einsum("...i,...i->...", c12, c12),
        ],
        axis=-1,
    )
    choice = np.argmax(norms, axis=-1)
    pick = choice[..., None]
    v = np.where(pick == 0, c01, np.where(pick == 1, c02, c12))
    best = np.max(norms, axis=-1)

    # Isotropic or rank-deficient: no informative cross product; fall back
    # to the deterministic convention (callers flag these via eigenvalues).
    usable = best > 0.0
    v = np.where(usable[..., None], v, np.array([0.0, 0.0, 1.0]))
    v = v / np.linalg.norm(v, axis=-1, keepdims=True)

    sign = np.where(
        np.abs(v[..., 2]) > _SIGN_TOL,
        np.sign(v[..., 2]),
        np.where(
            np.abs(v[..., 0]) > _SIGN_TOL,
            np.sign(v[..., 0]),
            np.where(np.abs(v[..., 1]) > _SIGN_TOL, np.sign(v[..., 1]), 1.0),
        ),
    )
    v = v * sign[..., None]
    return (lam_min, lam_mid, lam_max), v


def _offset_block(
    depth64: np.ndarray,
    valid_depth: np.ndarray,
    K: CameraIntrinsics,
    spec: KernelSpec,
    row_start: int,
    row_stop: int,
    out_w: int,
):
    """Offsets for output rows ``[row_start, row_stop)``; pure function."""
    h, w = depth64.shape
    n = spec.size
    n2 = n * n
    c = spec.center
    center_tap = c * n + c
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    ii = ii.ravel()
    jj = jj.ravel()
    di = spec.dilation * (ii - c)
    dj = spec.dilation * (jj - c)

    oy = np.arange(row_start, row_stop, dtype=np.int64)
    ox = np.arange(out_w, dtype=np.int64)
    base_v = oy * spec.stride - spec.padding + spec.dilation * c
    base_u = ox * spec.stride - spec.padding + spec.dilation * c

    # Nominal (unclamped) tap coordinates p + p_n, shape (n2, bh, ow).
    tv = base_v[None, :, None] + di[:, None, None]
    tu = base_u[None, None, :] + dj[:, None, None]
    tv, tu = np.broadcast_arrays(tv, tu)
    tvc = np.clip(tv, 0, h - 1)
    tuc = np.clip(tu, 0, w - 1)

    z = depth64[tvc, tuc]
    valid = valid_depth[tvc, tuc]

    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        px = (tuc - K.cu) * z / K.fu
        py = (tvc - K.cv) * z / K.fv

        x0 = px[center_tap]
        y0 = py[center_tap]
        z0 = z[center_tap]
        center_valid = valid[center_tap]

        dx = np.where(valid, px - x0[None], 0.0)
        dy = np.where(valid, py - y0[None], 0.0)
        dz = np.where(valid, z - z0[None], 0.0)

        scat = np.empty(dx.shape[1:] + (3, 3), dtype=np.float64)
        scat[..., 0, 0] = np.einsum("nhw,nhw->hw", dx, dx)
        scat[..., 1, 1] = np.einsum("nhw,nhw->hw", dy, dy)
        scat[..., 2, 2] = np.einsum("nhw,nhw->hw", dz, dz)
        scat[..., 0, 1] = scat[..., 1, 0] = np.einsum("nhw,nhw->hw", dx, dy)
        scat[..., 0, 2] = scat[..., 2, 0] = np.einsum("nhw,nhw->hw", dx, dz)
        scat[..., 1, 2] = scat[..., 2, 1] = np.einsum("nhw,nhw->hw", dy, dz)

        (lam_min, lam_mid, lam_max), normal = _smallest_eigenpair_sym3(scat)

        neighbor_count = valid.sum(axis=0) - center_valid.astype(np.int64)
        degenerate = (
            ~center_valid
            | (neighbor_count < 3)
            | (lam_max <= 0.0)
            | (lam_mid <= _RANK_TOL * lam_max)
        )

        # In-plane basis; near-vertical normals use the fallback frame.
        n1 = normal[..., 0]
        nY = normal[..., 1]
        n3 = normal[..., 2]
        s2 = 1.0 - nY * nY
        fallback = s2 <= _FRAME_TOL
        inv = 1.0 / np.sqrt(np.maximum(s2, _FRAME_TOL))
        sgn = np.where(nY >= 0.0, 1.0, -1.0)
        ax = np.where(fallback, 1.0, n3 * inv)
        az = np.where(fallback, 0.0, -n1 * inv)
        bx = np.where(fallback, 0.0, -n1 * nY * inv)
        by = np.where(fallback, 0.0, s2 * inv)
        bz = np.where(fallback, -sgn, -nY * n3 * inv)

        z0safe = np.where(center_valid, z0, 1.0)
        ku = spec.dilation * z0safe / K.fu
        kv = spec.dilation * z0safe / K.fv

        a = (jj - c).astype(np.float64)[:, None, None] * ku[None]
        b = (ii - c).astype(np.float64)[:, None, None] * kv[None]

        tx = x0[None] + a * ax[None] + b * bx[None]
        ty = y0[None] + b * by[None]  # x axis has zero Y component
        tz = z0[None] + a * az[None] + b * bz[None]

        behind = (tz <= 0.0) & np.isfinite(tz)
        degenerate = degenerate | behind.any(axis=0) | ~np.isfinite(tz).all(axis=0)

        tzsafe = np.where(tz > 0.0, tz, 1.0)
        proj_u = K.fu * tx / tzsafe + K.cu
        proj_v = K.fv * ty / tzsafe + K.cv

        off_dy = proj_v - tv
        off_dx = proj_u - tu
        keep = ~degenerate
        off_dy = np.where(keep[None], off_dy, 0.0)
        off_dx = np.where(keep[None], off_dx, 0.0)

    block = np.stack([off_dy, off_dx], axis=1).reshape(2 * n2, len(oy), out_w)
    degenerate_count = int(np.count_nonzero(degenerate))
    fallback_count = int(np.count_nonzero(fallback & keep))
    return block.astype(np.float32), degenerate_count, fallback_count


def compute_offsets(
    depth: DepthMap,
    K: CameraIntrinsics,
    spec: KernelSpec,
    out_h: int,
    out_w: int,
    workers: int | None = None,
) -> tuple[OffsetField, OffsetSummary]:
    """Depth-adapted sampling offsets for every output pixel.

    The output has ``2 * N * N`` channels of shape ``(out_h, out_w)``:
    channel ``2n`` is the row displacement and ``2n + 1`` the column
    displacement of tap ``n`` (row-major taps).  ``(out_h, out_w)`` must
    match the convolution output shape implied by ``spec`` on the depth
    dimensions; output centers sit at ``stride * p_out - padding +
    dilation * (N-1)/2`` on the input grid.

    ``workers`` > 1 partitions output rows across a thread pool; results
    are bit-identical for any worker count.
    """
    expected = spec.output_shape(depth.height, depth.width)
    if expected != (out_h, out_w):
        raise ConfigError(
            f"output dims ({out_h}, {out_w}) inconsistent with depth "
            f"{depth.height}x{depth.width} under {spec}; expected {expected}"
        )
    nworkers = 1 if workers is None else max(1, min(int(workers), out_h))

    depth64 = depth.data.astype(np.float64)
    valid = depth.valid_mask()

    if nworkers == 1:
        block, deg, fb = _offset_block(depth64, valid, K, spec, 0, out_h, out_w)
        field = OffsetField(block)
        return field, OffsetSummary(out_h * out_w, deg, fb)

    bounds = np.linspace(0, out_h, nworkers + 1, dtype=int)
    jobs = [(int(b0), int(b1)) for b0, b1 in zip(bounds[:-1], bounds[1:]) if b1 > b0]
    with ThreadPoolExecutor(max_workers=len(jobs)) as pool:
        results = list(
            pool.map(
                lambda rows: _offset_block(depth64, valid, K, spec, rows[0], rows[1], out_w),
                jobs,
            )
        )
    field = OffsetField(np.concatenate([r[0] for r in results], axis=1))
    deg = sum(r[1] for r in results)
    fb = sum(r[2] for r in results)
    return field, OffsetSummary(out_h * out_w, deg, fb)
