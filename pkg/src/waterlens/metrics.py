"""Restoration and surface-recovery metrics.

Heights recovered from refraction are only defined up to gauge
transformations (an additive constant and a global sign), and distortions up
to a global shift that the image field can absorb.  :func:`gauge_align` and
:func:`distortion_correlation` factor these out before comparing with ground
truth.  LPIPS is not provided.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

PSNR_CAP = 100.0
REC601 = np.array([0.299, 0.587, 0.114])


class MetricInputError(ValueError):
    pass


def _same_shape(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricInputError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1]; capped at 100 dB."""
    a, b = _same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return 10.0 * math.log10(1.0 / mse)


def luma(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 3:
        return img @ REC601
    if img.ndim == 3 and img.shape[2] == 1:
        return img[..., 0]
    return img


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-(x**2) / (2.0 * sigma**2))
    return w / w.sum()


def ssim(a, b, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> float:
    """Mean SSIM on Rec. 601 luma over all fully contained windows."""
    a, b = _same_shape(a, b)
    x, y = luma(a), luma(b)
    if x.shape[0] < window or x.shape[1] < window:
        raise MetricInputError(f"image {x.shape} smaller than the {window}x{window} window")
    w = gaussian_window(window, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2

    def blur(img):
        out = correlate1d(img, w, axis=0, mode="constant")
        out = correlate1d(out, w, axis=1, mode="constant")
        r = window // 2
        return out[r : out.shape[0] - r, r : out.shape[1] - r]

    mx, my = blur(x), blur(y)
    sxx = blur(x * x) - mx * mx
    syy = blur(y * y) - my * my
    sxy = blur(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def gauge_align(pred, gt) -> np.ndarray:
    """Match ``pred`` to ``gt`` up to sign and additive constant.

    The sign flips when the centered correlation is negative; then the mean
    of ``pred`` is replaced by the mean of ``gt``.
    """
    pred, gt = _same_shape(pred, gt)
    pc = pred - pred.mean()
    gc = gt - gt.mean()
    if float(np.sum(pc * gc)) < 0:
        pc = -pc
    return pc + gt.mean()


def height_errors(pred, gt, align: bool = True) -> tuple[float, float]:
    """(RMSE, Abs Rel) of predicted heights against positive ground truth."""
    pred, gt = _same_shape(pred, gt)
    if np.any(gt <= 0):
        raise MetricInputError("ground-truth heights must be positive for Abs Rel")
    if align:
        pred = gauge_align(pred, gt)
    diff = pred - gt
    return float(np.sqrt(np.mean(diff**2))), float(np.mean(np.abs(diff) / gt))


def distortion_correlation(pred_d, gt_d) -> np.ndarray:
    """Per-frame Pearson r between distortion fields ``[T, H, W, 2]``.

    Each field has its per-sequence mean (per component) removed first.
    Frames where either field has zero variance give ``nan``.
    """
    p, g = _same_shape(pred_d, gt_d)
    if p.ndim != 4 or p.shape[-1] != 2:
        raise MetricInputError(f"expected [T, H, W, 2] distortions, got {p.shape}")
    p = p - p.mean(axis=(0, 1, 2))
    g = g - g.mean(axis=(0, 1, 2))
    out = np.empty(p.shape[0])
    for t in range(p.shape[0]):
        a = p[t].ravel()
        b = g[t].ravel()
        a = a - a.mean()
        b = b - b.mean()
        den = math.sqrt(float(a @ a) * float(b @ b))
        out[t] = float(a @ b) / den if den > 0 else math.nan
    return out


@dataclass
class EvalReport:
    psnr: float
    ssim: float
    height_rmse: float | None = None
    height_abs_rel: float | None = None
    d_corr: np.ndarray | None = None

    @property
    def d_corr_median(self) -> float | None:
        if self.d_corr is None:
            return None
        return float(np.nanmedian(self.d_corr))

    def items(self) -> list[tuple[str, str]]:
        out = [("psnr", repr(self.psnr)), ("ssim", repr(self.ssim))]
        if self.height_rmse is not None:
            out += [("height_rmse", repr(self.height_rmse)), ("height_abs_rel", repr(self.height_abs_rel))]
        if self.d_corr is not None:
            out.append(("d_corr_median", repr(self.d_corr_median)))
        return out


def evaluate(pred, gt, h_pred=None, h_gt=None, d_pred=None, d_gt=None) -> EvalReport:
    rep = EvalReport(psnr(pred, gt), ssim(pred, gt))
    if h_pred is not None and h_gt is not None:
        rep.height_rmse, rep.height_abs_rel = height_errors(h_pred, h_gt)
    if d_pred is not None and d_gt is not None:
        rep.d_corr = distortion_correlation(d_pred, d_gt)
    return rep
