"""Degree-5 Bezier curves: evaluation, sampling, least-squares fitting, rasterization.

Curves are ``(6, 2)`` float arrays of control points in normalized image
coordinates; polylines are ``(n, 2)`` arrays; masks are ``(H, W)`` uint8 arrays.
"""
from __future__ import annotations

from math import comb

import numpy as np
from scipy import ndimage

DEGREE = 5
N_CONTROL = DEGREE + 1
_BINOM = np.array([comb(DEGREE, j) for j in range(N_CONTROL)], dtype=np.float64)


class GeometryError(ValueError):
    """Raised for out-of-domain geometric input."""


class FitError(GeometryError):
    """Raised when a least-squares fit is rank deficient."""


def as_curve(curve) -> np.ndarray:
    arr = np.asarray(curve, dtype=np.float64)
    if arr.shape != (N_CONTROL, 2):
        raise GeometryError(f"a Bezier curve needs {N_CONTROL} 2D control points, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise GeometryError("control points must be finite")
    return arr


def check_polyline(points) -> tuple[np.ndarray, bool]:
    """Validate a polyline; returns the array and whether consecutive duplicates occur."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 2:
        raise GeometryError(f"a polyline needs at least 2 points, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise GeometryError("polyline points must be finite")
    dup = bool(np.any(np.all(np.diff(arr, axis=0) == 0.0, axis=1)))
    return arr, dup


def bernstein_matrix(ts) -> np.ndarray:
    """Rows of degree-5 Bernstein weights, one row per parameter value."""
    t = np.atleast_1d(np.asarray(ts, dtype=np.float64))
    if np.any(t < 0.0) or np.any(t > 1.0) or not np.all(np.isfinite(t)):
        raise GeometryError("Bezier parameter must lie in [0, 1]")
    j = np.arange(N_CONTROL)
    return _BINOM * t[:, None] ** j * (1.0 - t[:, None]) ** (DEGREE - j)


def eval_bezier(curve, t: float) -> np.ndarray:
    """Point on the curve at parameter ``t``."""
    ctrl = as_curve(curve)
    return (bernstein_matrix([t]) @ ctrl)[0]


def uniform_params(n: int) -> np.ndarray:
    if n < 2:
        raise GeometryError(f"need at least 2 samples, got {n}")
    return np.arange(n, dtype=np.float64) / (n - 1)


def sample_uniform(curve, n: int) -> np.ndarray:
    """``n`` points at t = k/(n-1); endpoints coincide with the end control points."""
    ctrl = as_curve(curve)
    pts = bernstein_matrix(uniform_params(n)) @ ctrl
    pts[0] = ctrl[0]
    pts[-1] = ctrl[-1]
    return pts


def fit_matrix(params) -> np.ndarray:
    """Least-squares operator ``F`` (6 x n) with ``F @ points`` the best-fit control points.

    Built from a QR factorisation of the Bernstein design matrix.
    """
    t = np.asarray(params, dtype=np.float64)
    if t.ndim != 1 or t.size < N_CONTROL:
        raise FitError(f"need at least {N_CONTROL} parameter values, got {t.size}")
    design = bernstein_matrix(t)
    q, r = np.linalg.qr(design)
    diag = np.abs(np.diag(r))
    if diag.min() <= 1e-12 * max(diag.max(), 1.0):
        raise FitError("rank-deficient Bernstein design matrix (fewer than 6 distinct parameters?)")
    return np.linalg.solve(r, q.T)


def fit_bezier(points, params=None) -> np.ndarray:
    """Fit a degree-5 curve to ``points`` by linear least squares.

    Parameters default to uniform t_k = k/(n-1).
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < N_CONTROL:
        raise FitError(f"need at least {N_CONTROL} points, got shape {pts.shape}")
    if params is None:
        params = uniform_params(pts.shape[0])
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (pts.shape[0],):
        raise FitError("params must match the number of points")
    if np.any(np.diff(params) < 0):
        raise FitError("params must be sorted")
    if np.any(params < 0) or np.any(params > 1):
        raise FitError("params must lie in [0, 1]")
    return fit_matrix(params) @ pts


def chord_length_params(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    if cum[-1] <= 0:
        raise FitError("polyline has zero length")
    return cum / cum[-1]


def resample_polyline(points, n: int) -> np.ndarray:
    """``n`` points equally spaced in arc length along a polyline."""
    pts, _ = check_polyline(points)
    s = chord_length_params(pts)
    targets = np.linspace(0.0, 1.0, n)
    return np.stack([np.interp(targets, s, pts[:, 0]), np.interp(targets, s, pts[:, 1])], axis=1)


def arc_length_point(points, fraction: float) -> np.ndarray:
    """Point at the given fraction of the total arc length."""
    pts, _ = check_polyline(points)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    total = seg.sum()
    if total == 0:
        return pts[0].copy()
    s = np.concatenate([[0.0], np.cumsum(seg)]) / total
    return np.array([np.interp(fraction, s, pts[:, 0]), np.interp(fraction, s, pts[:, 1])])


def to_pixel(point, height: int, width: int) -> tuple[int, int]:
    """(row, col) of the pixel containing a normalized point, clamped to the image."""
    x = min(max(float(point[0]), 0.0), 1.0) * width
    y = min(max(float(point[1]), 0.0), 1.0) * height
    return min(int(np.floor(y)), height - 1), min(int(np.floor(x)), width - 1)


def _supercover(x0, y0, x1, y1, width, height, out: np.ndarray) -> None:
    # grid traversal in pixel units; pixel (r, c) covers [c, c+1) x [r, r+1)
    col, row = min(int(x0), width - 1), min(int(y0), height - 1)
    end_col, end_row = min(int(x1), width - 1), min(int(y1), height - 1)
    out[row, col] = 1
    dx, dy = x1 - x0, y1 - y0
    step_c = 1 if dx > 0 else -1
    step_r = 1 if dy > 0 else -1
    # subnormal steps overflow to inf, which correctly means "never crosses"
    with np.errstate(over="ignore"):
        if dx != 0:
            next_x = col + 1 if dx > 0 else col
            t_max_x = (next_x - x0) / dx
            t_delta_x = abs(1.0 / dx)
        else:
            t_max_x = t_delta_x = np.inf
        if dy != 0:
            next_y = row + 1 if dy > 0 else row
            t_max_y = (next_y - y0) / dy
            t_delta_y = abs(1.0 / dy)
        else:
            t_max_y = t_delta_y = np.inf
    budget = abs(end_col - col) + abs(end_row - row)
    while (col, row) != (end_col, end_row) and budget > 0:
        if t_max_x == t_max_y:
            # exact corner crossing: both edge neighbours are touched
            nc = min(max(col + step_c, 0), width - 1)
            nr = min(max(row + step_r, 0), height - 1)
            out[row, nc] = 1
            out[nr, col] = 1
            col, row = nc, nr
            t_max_x += t_delta_x
            t_max_y += t_delta_y
            budget -= 2
        elif t_max_x < t_max_y:
            col = min(max(col + step_c, 0), width - 1)
            t_max_x += t_delta_x
            budget -= 1
        else:
            row = min(max(row + step_r, 0), height - 1)
            t_max_y += t_delta_y
            budget -= 1
        out[row, col] = 1
    out[end_row, end_col] = 1


def draw_centerline(polylines, height: int, width: int) -> np.ndarray:
    """Pixels crossed by any polyline segment (supercover traversal), undilated."""
    mask = np.zeros((height, width), dtype=np.uint8)
    for poly in polylines:
        pts = np.clip(np.asarray(poly, dtype=np.float64), 0.0, 1.0)
        if pts.ndim != 2 or pts.shape[0] == 0:
            continue
        # pixel units, kept strictly inside the image so the right/bottom edge maps to the last pixel
        px = np.minimum(pts[:, 0] * width, np.nextafter(width, 0))
        py = np.minimum(pts[:, 1] * height, np.nextafter(height, 0))
        if pts.shape[0] == 1:
            mask[int(py[0]), int(px[0])] = 1
            continue
        for k in range(pts.shape[0] - 1):
            _supercover(px[k], py[k], px[k + 1], py[k + 1], width, height, mask)
    return mask


def dilate(mask: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean disk dilation: pixels whose center lies within ``radius`` of a foreground center."""
    if radius < 0:
        raise GeometryError("dilation radius must be non-negative")
    mask = np.asarray(mask, dtype=bool)
    if radius == 0 or not mask.any():
        return mask.astype(np.uint8)
    dist = ndimage.distance_transform_edt(~mask)
    return (dist <= radius).astype(np.uint8)


def rasterize(polylines, height: int, width: int, dilation_px: float = 0) -> np.ndarray:
    """Binary mask of polylines drawn by supercover traversal then disk-dilated."""
    if height < 1 or width < 1:
        raise GeometryError("image size must be positive")
    return dilate(draw_centerline(polylines, height, width), dilation_px)


def curve_polyline(curve, n: int = 64) -> np.ndarray:
    """Dense polyline approximation of a curve, used for rendering and rasterizing predictions."""
    return sample_uniform(curve, n)
