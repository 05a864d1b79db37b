"""First-order refraction model and rendering through the image field.

A height field ``h(x, t)`` displaces the apparent position of the scene point
under pixel ``x`` by

    d(x, t) = (1 - 1/n) * h0 * grad_x h(x, t)

where ``h0`` is the spatio-temporal mean height and ``n`` the relative
refraction index.  Coordinates are normalized to [-1, 1] on both axes, so one
pixel spans ``2 / (W - 1)`` units horizontally.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import diffcore as dc
from .diffcore import ContractError, Tensor
from .neuralfields import HeightField, ImageField


def normalized_axis(n: int) -> np.ndarray:
    """Pixel-center coordinates ``-1 + 2j/(n-1)``, endpoint inclusive."""
    if n < 1:
        raise ContractError("axis length must be positive")
    if n == 1:
        return np.zeros(1)
    j = np.arange(n, dtype=np.float64)
    return (2.0 * j - (n - 1)) / (n - 1)


def normalized_times(T: int) -> np.ndarray:
    return normalized_axis(T)


@dataclass(frozen=True)
class Grid:
    width: int
    height: int

    @cached_property
    def xs(self) -> np.ndarray:
        return normalized_axis(self.width)

    @cached_property
    def ys(self) -> np.ndarray:
        return normalized_axis(self.height)

    @property
    def npix(self) -> int:
        return self.width * self.height

    @cached_property
    def points(self) -> np.ndarray:
        """``[H*W, 2]`` array of (x1, x2) in row-major pixel order; x1 is horizontal."""
        x1, x2 = np.meshgrid(self.xs, self.ys)
        return np.stack([x1.ravel(), x2.ravel()], axis=1)

    def spacetime(self, times) -> np.ndarray:
        """``[T*H*W, 3]`` rows (x1, x2, t), frame-major."""
        times = np.atleast_1d(np.asarray(times, dtype=np.float64))
        pts = self.points
        return np.concatenate([np.column_stack([pts, np.full(len(pts), t)]) for t in times])

    def pixel_units(self) -> tuple[float, float]:
        """Normalized units per pixel along (x1, x2)."""
        return 2.0 / max(self.width - 1, 1), 2.0 / max(self.height - 1, 1)


@dataclass(frozen=True)
class RefractionConstants:
    n: float = 1.33

    def __post_init__(self):
        if self.n <= 1.0:
            raise ContractError(f"refraction index must exceed 1, got {self.n}")

    @property
    def c(self) -> float:
        return 1.0 - 1.0 / self.n


def mean_height(h_field: HeightField, grid: Grid, times) -> Tensor:
    """h0: mean of the height field over every grid point and time."""
    times = np.atleast_1d(times)
    if grid.npix == 0 or times.size == 0:
        raise ContractError("mean_height needs a non-empty grid and time list")
    return dc.reduce_mean(h_field(dc.constant(grid.spacetime(times))))


@dataclass
class Surface:
    """Graph outputs of one height-field pass over a whole sequence."""

    heights: Tensor  # [T*H*W, 1]
    gradient: Tensor  # [T*H*W, 2]
    h0: Tensor  # scalar
    d: Tensor  # [T*H*W, 2]


def surface(h_field: HeightField, grid: Grid, times, constants: RefractionConstants) -> Surface:
    """Heights, h0, gradients and distortions for all frames in one graph.

    h0 is recomputed from the same pass, so gradients flow into the weights
    through both h0 and the spatial gradient.
    """
    coords = dc.constant(grid.spacetime(times))
    h, g = h_field.height_and_gradient(coords)
    h0 = dc.reduce_mean(h)
    d = dc.scale(dc.mul(h0, g), constants.c)
    return Surface(h, g, h0, d)


def distortion(h_field: HeightField, grid: Grid, t: float, constants: RefractionConstants, h0=None) -> Tensor:
    """Distortion ``[H*W, 2]`` for a single time ``t``.

    ``h0`` should come from :func:`mean_height` over the whole sequence; if
    omitted it is the mean over this frame alone.
    """
    coords = dc.constant(grid.spacetime([t]))
    h, g = h_field.height_and_gradient(coords)
    if h0 is None:
        h0 = dc.reduce_mean(h)
    elif not isinstance(h0, Tensor):
        h0 = dc.constant(h0)
    return dc.scale(dc.mul(h0, g), constants.c)


def tiled_points(grid: Grid, frames: int) -> np.ndarray:
    return np.tile(grid.points, (frames, 1))


def render_distorted(i_field: ImageField, grid: Grid, d: Tensor) -> Tensor:
    """Image field evaluated at ``x_reg + d``; ``d`` is ``[k*H*W, 2]`` for k frames."""
    k, rem = divmod(d.shape[0], grid.npix)
    if rem or d.shape[1:] != (2,):
        raise dc.DimensionError(f"distortion shape {d.shape} does not tile a {grid.height}x{grid.width} grid")
    return i_field(dc.add(dc.constant(tiled_points(grid, k)), d))


def render_clean(i_field: ImageField, grid: Grid) -> Tensor:
    """The restored image on the regular grid, ``[H*W, 3]``."""
    return i_field(dc.constant(grid.points))


def as_frames(t, grid: Grid) -> np.ndarray:
    """Reshape ``[k*H*W, C]`` values to ``[k, H, W, C]``."""
    a = t.data if isinstance(t, Tensor) else np.asarray(t)
    return a.reshape(-1, grid.height, grid.width, a.shape[-1])


def as_image(t, grid: Grid) -> np.ndarray:
    """Reshape ``[H*W, C]`` values to ``[H, W, C]``."""
    a = t.data if isinstance(t, Tensor) else np.asarray(t)
    return a.reshape(grid.height, grid.width, a.shape[-1])
