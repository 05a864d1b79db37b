"""Synthetic distorted sequences with ground-truth surfaces.

Three closed-form surfaces are provided.  They are stand-ins for a
wave-equation simulator, chosen because their spatial gradients are exact:

* ``ripple``:   h = h_base + A sin(2 pi r / lam - w t) exp(-beta r),  r = |x - c|
* ``ocean``:    h = h_base + sum_i (A/K) sin(k_i . x - w_i t + phi_i),
                w_i = w sqrt(|k_i| / (2 pi / lam))
* ``gaussian``: h = h_base + sum_j A exp(-|x - c_j(t)|^2 / (2 sigma^2)),
                c_j(t) = c_j + v_j t, sigma = lam / 4

Frames are rendered with the same first-order model the restorer uses: the
ground-truth image is bilinearly sampled at ``x + d_gt(x, t)``.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .diffcore import ContractError
from .refraction import Grid, RefractionConstants, normalized_times

WAVE_TYPES = ("ripple", "ocean", "gaussian")


@dataclass(frozen=True)
class WaveParams:
    wave: str = "ripple"
    h_base: float = 1.0
    amplitude: float = 0.05
    wavelength: float = 0.8
    speed: float = 2.0  # angular speed, radians per unit of normalized time
    damping: float = 0.5
    center_x: float = 0.0
    center_y: float = 0.0
    components: int = 6  # ocean
    blobs: int = 4  # gaussian
    drift: float = 0.3  # gaussian, normalized units per unit time
    seed: int = 0

    def __post_init__(self):
        if self.wave not in WAVE_TYPES:
            raise ContractError(f"unknown wave type {self.wave!r}; expected one of {WAVE_TYPES}")
        if self.amplitude < 0 or self.wavelength <= 0 or self.speed < 0:
            raise ContractError("amplitude must be >= 0, wavelength > 0, speed >= 0")
        if self.h_base <= 0:
            raise ContractError("h_base must be positive")
        if self.components < 1 or self.blobs < 1:
            raise ContractError("components and blobs must be >= 1")

    def as_items(self) -> list[tuple[str, object]]:
        return list(asdict(self).items())


class Surface:
    """Closed-form ground-truth height with exact spatial gradient."""

    def __init__(self, params: WaveParams):
        self.p = params
        rng = np.random.default_rng(params.seed)
        if params.wave == "ocean":
            K = params.components
            theta = rng.uniform(0.0, 2.0 * np.pi, K)
            lam = params.wavelength * rng.uniform(0.7, 1.3, K)
            kmag = 2.0 * np.pi / lam
            self.k = np.stack([kmag * np.cos(theta), kmag * np.sin(theta)], axis=1)
            self.phase = rng.uniform(0.0, 2.0 * np.pi, K)
            self.omega = params.speed * np.sqrt(kmag / (2.0 * np.pi / params.wavelength))
        elif params.wave == "gaussian":
            J = params.blobs
            self.centers = rng.uniform(-0.6, 0.6, (J, 2))
            ang = rng.uniform(0.0, 2.0 * np.pi, J)
            self.velocity = params.drift * np.stack([np.cos(ang), np.sin(ang)], axis=1)
            self.sigma = params.wavelength / 4.0

    def height(self, x: np.ndarray, t) -> np.ndarray:
        """Heights at points ``x`` of shape ``[..., 2]`` and times ``t`` (broadcast)."""
        x = np.asarray(x, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64)
        p = self.p
        if p.wave == "ripple":
            r = np.hypot(x[..., 0] - p.center_x, x[..., 1] - p.center_y)
            fluct = np.sin(2.0 * np.pi * r / p.wavelength - p.speed * t) * np.exp(-p.damping * r)
        elif p.wave == "ocean":
            arg = x @ self.k.T - self.omega * t[..., None] + self.phase
            fluct = np.sin(arg).sum(axis=-1) / len(self.phase)
        else:
            fluct = 0.0
            for c0, v in zip(self.centers, self.velocity):
                c = c0 + v * t[..., None]
                q = ((x - c) ** 2).sum(axis=-1)
                fluct = fluct + np.exp(-q / (2.0 * self.sigma**2))
        return p.h_base + p.amplitude * fluct

    def gradient(self, x: np.ndarray, t) -> np.ndarray:
        """Exact ``(dh/dx1, dh/dx2)`` at ``x`` (``[..., 2]``), returns ``[..., 2]``."""
        x = np.asarray(x, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64)
        p = self.p
        if p.wave == "ripple":
            dx = x[..., 0] - p.center_x
            dy = x[..., 1] - p.center_y
            r = np.hypot(dx, dy)
            kr = 2.0 * np.pi / p.wavelength
            phase = kr * r - p.speed * t
            damp = np.exp(-p.damping * r)
            dh_dr = p.amplitude * damp * (kr * np.cos(phase) - p.damping * np.sin(phase))
            safe = np.where(r > 0, r, 1.0)
            scale = np.where(r > 0, dh_dr / safe, 0.0)  # radial symmetry: zero at the center
            return np.stack([scale * dx, scale * dy], axis=-1)
        if p.wave == "ocean":
            arg = x @ self.k.T - self.omega * t[..., None] + self.phase
            return (p.amplitude / len(self.phase)) * (np.cos(arg) @ self.k)
        g = np.zeros(x.shape[:-1] + (2,))
        for c0, v in zip(self.centers, self.velocity):
            diff = x - (c0 + v * t[..., None])
            e = np.exp(-(diff**2).sum(axis=-1) / (2.0 * self.sigma**2))
            g = g - (p.amplitude / self.sigma**2) * e[..., None] * diff
        return g


def gt_height(params: WaveParams, x, t) -> np.ndarray:
    return Surface(params).height(x, t)


def gt_gradient(params: WaveParams, x, t) -> np.ndarray:
    return Surface(params).gradient(x, t)


def _bilinear_setup(n: int, pos: np.ndarray):
    """Clamp pixel positions to ``[0, n-1]``; return left index, weight and in-range mask."""
    if n == 1:
        zeros = np.zeros(pos.shape, dtype=np.intp)
        return zeros, zeros, np.zeros(pos.shape), np.zeros(pos.shape, dtype=bool)
    inside = (pos >= 0.0) & (pos <= n - 1)
    p = np.clip(pos, 0.0, n - 1.0)
    i0 = np.minimum(np.floor(p).astype(np.intp), n - 2)
    return i0, i0 + 1, p - i0, inside


def to_pixels(coords: np.ndarray, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Normalized ``(x1, x2)`` -> fractional (column, row), snapping to exact centers."""
    coords = np.asarray(coords, dtype=np.float64)
    col = (coords[..., 0] + 1.0) * (width - 1) / 2.0
    row = (coords[..., 1] + 1.0) * (height - 1) / 2.0
    # rounding in the normalization leaves centers ~1e-15 px off
    for a in (col, row):
        r = np.rint(a)
        snap = np.abs(a - r) < 1e-9
        a[snap] = r[snap]
    return col, row


class BilinearPlan:
    """Precomputed neighbor indices and weights for sampling an ``H x W`` raster."""

    def __init__(self, cols: np.ndarray, rows: np.ndarray, width: int, height: int):
        self.width, self.height = width, height
        self.c0, self.c1, self.fx, self.in_x = _bilinear_setup(width, np.asarray(cols, dtype=np.float64))
        self.r0, self.r1, self.fy, self.in_y = _bilinear_setup(height, np.asarray(rows, dtype=np.float64))

    def sample(self, raster: np.ndarray) -> np.ndarray:
        fx = self.fx[..., None]
        fy = self.fy[..., None]
        top = raster[self.r0, self.c0] * (1.0 - fx) + raster[self.r0, self.c1] * fx
        bot = raster[self.r1, self.c0] * (1.0 - fx) + raster[self.r1, self.c1] * fx
        return top * (1.0 - fy) + bot * fy

    def scatter(self, g: np.ndarray) -> np.ndarray:
        """Adjoint of :meth:`sample`: spread ``[N, C]`` values back onto the raster."""
        out = np.zeros((self.height, self.width, g.shape[-1]))
        fx = self.fx[:, None]
        fy = self.fy[:, None]
        for r, c, w in (
            (self.r0, self.c0, (1 - fx) * (1 - fy)),
            (self.r0, self.c1, fx * (1 - fy)),
            (self.r1, self.c0, (1 - fx) * fy),
            (self.r1, self.c1, fx * fy),
        ):
            np.add.at(out, (r, c), g * w)
        return out

    def position_derivatives(self, raster: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """d(sample)/d(col) and d(sample)/d(row); zero where the position was clamped."""
        fx = self.fx[..., None]
        fy = self.fy[..., None]
        v00, v01 = raster[self.r0, self.c0], raster[self.r0, self.c1]
        v10, v11 = raster[self.r1, self.c0], raster[self.r1, self.c1]
        dcol = (v01 - v00) * (1.0 - fy) + (v11 - v10) * fy
        drow = (v10 - v00) * (1.0 - fx) + (v11 - v01) * fx
        return dcol * self.in_x[..., None], drow * self.in_y[..., None]


def bilinear_sample(raster: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Sample an ``[H, W, C]`` raster at normalized coords ``[N, 2]``; borders clamp."""
    raster = np.asarray(raster, dtype=np.float64)
    h, w = raster.shape[:2]
    col, row = to_pixels(coords, w, h)
    return BilinearPlan(col, row, w, h).sample(raster)


@dataclass
class SimulatedSequence:
    frames: np.ndarray  # [T, H, W, 3]
    distortions: np.ndarray  # [T, H, W, 2]
    heights: np.ndarray  # [T, H, W]
    h0: float
    times: np.ndarray


def simulate_sequence(gt: np.ndarray, params: WaveParams, T: int, n: float = 1.33) -> SimulatedSequence:
    """Distort ``gt`` (``[H, W, 3]``) by the surface ``params`` over ``T`` frames."""
    if T < 1:
        raise ContractError("simulate_sequence needs T >= 1")
    gt = np.asarray(gt, dtype=np.float64)
    h, w = gt.shape[:2]
    grid = Grid(w, h)
    c = RefractionConstants(n).c
    surf = Surface(params)
    times = normalized_times(T)
    pts = grid.points.reshape(h, w, 2)
    heights = np.stack([surf.height(pts, t) for t in times])
    h0 = float(heights.mean())
    grads = np.stack([surf.gradient(pts, t) for t in times])
    d = c * h0 * grads
    peak = float(np.abs(d).max()) if d.size else 0.0
    if peak > 0.5:
        warnings.warn(f"distortion reaches {peak:.3f} normalized units; small-slope assumption violated")
    ux, uy = grid.pixel_units()
    jj, ii = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    frames = np.empty((T, h, w, 3))
    for k in range(T):
        # integer pixel index plus offset, so zero offset hits centers exactly
        plan = BilinearPlan(jj + d[k, ..., 0] / ux, ii + d[k, ..., 1] / uy, w, h)
        frames[k] = plan.sample(gt)
    return SimulatedSequence(frames, d, heights, h0, times)


def demo_scene(size: int = 64, seed: int = 0) -> np.ndarray:
    """A deterministic RGB scene with edges at several scales, values in [0, 1]."""
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    checker = ((np.floor(x * 8) + np.floor(y * 8)) % 2).astype(np.float64)
    rings = 0.5 + 0.5 * np.cos(2 * np.pi * 6 * np.hypot(x - 0.3, y - 0.7))
    img = np.empty((size, size, 3))
    img[..., 0] = 0.15 + 0.7 * checker
    img[..., 1] = 0.2 + 0.6 * rings
    img[..., 2] = 0.5 + 0.3 * np.sin(2 * np.pi * 3 * x) * np.cos(2 * np.pi * 2 * y)
    bars = rng.integers(0, size, 6)
    for b in bars:
        img[:, b : b + 2, 2] = 0.1
    return np.clip(img, 0.0, 1.0)
