"""Two-stage unsupervised fitting of the height and image fields.

Stage 1 pulls the distortion towards zero and the image towards the frame
average.  Stage 2 fits every observed frame by rendering the image field at
the refracted positions.  All loss terms are mean-reduced L1 over frames,
pixels and channels (or distortion components).
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .neuralfields import HeightField, ImageField
from .refraction import Grid, RefractionConstants, normalized_times, render_clean, render_distorted, surface
from .wavesim import BilinearPlan, to_pixels

log = logging.getLogger(__name__)

LOSS_MODES = ("l1", "ndir3")


class InputError(ValueError):
    """Training data is malformed."""


class TrainingDiverged(FloatingPointError):
    def __init__(self, stage: int, iteration: int, value: float):
        super().__init__(f"non-finite loss {value} at stage {stage}, iteration {iteration}")
        self.stage = stage
        self.iteration = iteration


@dataclass
class TrainConfig:
    seed: int = 0
    frames: int = 10
    loss_mode: str = "l1"
    n_refraction: float = 1.33
    omega0: float = 30.0
    height_hidden: int = 256
    image_hidden: int = 256
    fourier_m: int = 128
    fourier_bandwidth: float = 8.0
    height_offset: float = 1.0
    height_scale: float = 0.1
    lr_stage1: float = 1e-4
    iters_stage1: int = 500
    lr_stage2: float = 1e-4
    iters_stage2: int = 2000
    fourier: bool = True

    def __post_init__(self):
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}, got {self.loss_mode!r}")
        if self.iters_stage1 < 0 or self.iters_stage2 < 0:
            raise ValueError("iteration counts must be >= 0")
        if self.lr_stage1 <= 0 or self.lr_stage2 <= 0:
            raise ValueError("learning rates must be positive")
        if self.frames < 1:
            raise ValueError("frames must be >= 1")

    @classmethod
    def from_mapping(cls, values: dict[str, str]) -> "TrainConfig":
        """Build from string values (a parsed config file); unknown keys are errors."""
        types = {f.name: f.type for f in fields(cls)}
        unknown = sorted(set(values) - set(types))
        if unknown:
            raise KeyError(f"unknown config keys: {', '.join(unknown)}")
        kwargs = {}
        for key, raw in values.items():
            kind = types[key]
            if kind == "bool":
                if raw.lower() not in ("on", "off", "true", "false", "1", "0"):
                    raise ValueError(f"{key}: expected on/off, got {raw!r}")
                kwargs[key] = raw.lower() in ("on", "true", "1")
            elif kind == "int":
                kwargs[key] = int(raw)
            elif kind == "float":
                kwargs[key] = float(raw)
            else:
                kwargs[key] = raw
        return cls(**kwargs)

    def as_items(self) -> list[tuple[str, str]]:
        out = []
        for k, v in asdict(self).items():
            out.append((k, ("on" if v else "off") if isinstance(v, bool) else str(v)))
        return out


@dataclass
class LogEntry:
    stage: int
    iteration: int
    loss: float
    wall: float


@dataclass
class TrainLog:
    entries: list[LogEntry] = field(default_factory=list)
    snapshots: dict[str, list[np.ndarray]] = field(default_factory=dict)
    stage1_mean_abs_d: float | None = None

    def losses(self, stage: int) -> list[float]:
        return [e.loss for e in self.entries if e.stage == stage]

    def lines(self) -> list[str]:
        """``iteration stage loss`` per line; wall-clock is left out so files are reproducible."""
        return [f"{e.iteration} {e.stage} {e.loss!r}" for e in self.entries]


@dataclass
class Problem:
    """Frames and fixed geometry shared by all loss evaluations."""

    frames: np.ndarray  # [T, H, W, 3]
    grid: Grid
    times: np.ndarray
    constants: RefractionConstants

    @classmethod
    def from_frames(cls, frames, n_refraction: float = 1.33) -> "Problem":
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim != 4 or frames.shape[-1] != 3:
            raise InputError(f"frames must be [T, H, W, 3], got {frames.shape}")
        T, H, W, _ = frames.shape
        return cls(frames, Grid(W, H), normalized_times(T), RefractionConstants(n_refraction))

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def targets(self) -> Tensor:
        return dc.constant(self.frames.reshape(-1, 3))


def warp(raster: Tensor, grid: Grid, coords: Tensor) -> Tensor:
    """Differentiable bilinear lookup of an ``[H*W, C]`` raster at normalized ``coords``.

    Gradients reach both the raster values and the sampling positions;
    positions clamped to the border get zero positional gradient.
    """
    H, W = grid.height, grid.width
    col, row = to_pixels(coords.data, W, H)
    plan = BilinearPlan(col, row, W, H)
    img = raster.data.reshape(H, W, -1)
    out = plan.sample(img)
    ux, uy = grid.pixel_units()

    def bw(g):
        if raster.requires_grad:
            raster.accumulate(plan.scatter(g).reshape(raster.shape))
        if coords.requires_grad:
            dcol, drow = plan.position_derivatives(img)
            gx = (g * dcol).sum(axis=1) / ux
            gy = (g * drow).sum(axis=1) / uy
            coords.accumulate(np.stack([gx, gy], axis=1))

    return Tensor.from_op(out, "warp", (raster, coords), bw)


def _l1(a: Tensor, b: Tensor) -> Tensor:
    return dc.reduce_mean(dc.abs(dc.sub(a, b)))


def _repeat(t: Tensor, k: int) -> Tensor:
    return t if k == 1 else dc.concat([t] * k, axis=0)


def init_loss(h_field: HeightField, i_field: ImageField, prob: Problem) -> Tensor:
    """mean|d| + mean_t mean|I(x_reg) - I_t|."""
    surf = surface(h_field, prob.grid, prob.times, prob.constants)
    clean = render_clean(i_field, prob.grid)
    return dc.add(dc.reduce_mean(dc.abs(surf.d)), _l1(_repeat(clean, prob.T), prob.targets))


def main_loss(h_field: HeightField, i_field: ImageField, prob: Problem) -> Tensor:
    """mean_t mean|I(x_reg + d(x_reg, t)) - I_t|."""
    surf = surface(h_field, prob.grid, prob.times, prob.constants)
    return _l1(render_distorted(i_field, prob.grid, surf.d), prob.targets)


def ndir_loss(h_field: HeightField, i_field: ImageField, prob: Problem) -> Tensor:
    """Three-pair loss: rendered-vs-observed, warped-vs-observed, rendered-vs-warped.

    The warped prediction bilinearly resamples the clean raster at the
    refracted positions instead of querying the image field there.
    """
    surf = surface(h_field, prob.grid, prob.times, prob.constants)
    rendered = render_distorted(i_field, prob.grid, surf.d)
    clean = render_clean(i_field, prob.grid)
    pos = dc.add(dc.constant(np.tile(prob.grid.points, (prob.T, 1))), surf.d)
    warped = warp(clean, prob.grid, pos)
    target = prob.targets
    return dc.add(dc.add(_l1(rendered, target), _l1(warped, target)), _l1(rendered, warped))


STAGE2_LOSSES = {"l1": main_loss, "ndir3": ndir_loss}


def build_fields(config: TrainConfig) -> tuple[HeightField, ImageField]:
    h_seed, i_seed = np.random.SeedSequence(config.seed).spawn(2)
    hf = HeightField.create(
        np.random.default_rng(h_seed),
        hidden=config.height_hidden,
        omega0=config.omega0,
        offset=config.height_offset,
        scale=config.height_scale,
    )
    imf = ImageField.create(
        np.random.default_rng(i_seed),
        hidden=config.image_hidden,
        omega0=config.omega0,
        fourier_m=config.fourier_m,
        bandwidth=config.fourier_bandwidth,
        fourier=config.fourier,
    )
    return hf, imf


def _snapshot(params: list[Tensor]) -> list[np.ndarray]:
    return [p.data.copy() for p in params]


def restore_snapshot(params: list[Tensor], snap: list[np.ndarray]) -> None:
    for p, a in zip(params, snap):
        p.data[...] = a


def train(frames, config: TrainConfig, progress=None) -> tuple[HeightField, ImageField, TrainLog]:
    """Fit both fields to ``frames`` (``[T, H, W, 3]``, values in [0, 1]).

    ``progress``, if given, is called as ``progress(stage, iteration, loss)``.
    """
    if isinstance(frames, (list, tuple)):
        shapes = {np.shape(f) for f in frames}
        if len(shapes) != 1:
            raise InputError(f"frames have mismatched shapes: {sorted(shapes)}")
    prob = Problem.from_frames(frames, config.n_refraction)
    hf, imf = build_fields(config)
    params = hf.parameters() + imf.parameters()
    tlog = TrainLog()
    t_start = time.perf_counter()
    stages = ((1, init_loss, config.lr_stage1, config.iters_stage1),
              (2, STAGE2_LOSSES[config.loss_mode], config.lr_stage2, config.iters_stage2))
    for stage, loss_fn, lr, iters in stages:
        opt = dc.Adam(params, lr=lr)
        for it in range(iters):
            opt.zero_grad()
            loss = loss_fn(hf, imf, prob)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(stage, it, value)
            dc.backward(loss)
            opt.step()
            tlog.entries.append(LogEntry(stage, it, value, time.perf_counter() - t_start))
            if progress is not None:
                progress(stage, it, value)
            if it % 100 == 0:
                log.debug("stage %d iter %d loss %.6f", stage, it, value)
        tlog.snapshots[f"stage{stage}"] = _snapshot(params)
        if stage == 1:
            surf = surface(hf, prob.grid, prob.times, prob.constants)
            tlog.stage1_mean_abs_d = float(np.abs(surf.d.data).mean())
    return hf, imf, tlog
