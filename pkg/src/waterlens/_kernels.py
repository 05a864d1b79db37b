"""Vectorized float64 sin/cos.

numpy's float64 ``sin`` runs the scalar libm path, which dominates training
time.  This kernel uses fdlibm's polynomial coefficients with a three-part
Cody-Waite reduction by pi/2; written branch-free so LLVM vectorizes it.
Error is within 1 ulp of libm for |x| < 2**20; larger arguments fall back to
numpy.
"""

from __future__ import annotations

import numba
import numpy as np

_S1 = -1.66666666666666324348e-01
_S2 = 8.33333333332248946124e-03
_S3 = -1.98412698298579493134e-04
_S4 = 2.75573137070700676789e-06
_S5 = -2.50507602534068634195e-08
_S6 = 1.58969099521155010221e-10
_C1 = 4.16666666666666019037e-02
_C2 = -1.38888888888741095749e-03
_C3 = 2.48015872894767294178e-05
_C4 = -2.75573143513906633035e-07
_C5 = 2.08757232129817482790e-09
_C6 = -1.13596475577881948265e-11
_TWO_OVER_PI = 6.36619772367581382433e-01
_PIO2_1 = 1.57079632673412561417e00
_PIO2_2 = 6.07710050650619224932e-11
_PIO2_3 = 2.02226624871116645580e-21

_LIMIT = float(2**20)


@numba.njit(cache=True, nogil=True)
def _sincos_flat(x, s_out, c_out):
    for i in range(x.size):
        v = x[i]
        k = np.floor(v * _TWO_OVER_PI + 0.5)
        r = ((v - k * _PIO2_1) - k * _PIO2_2) - k * _PIO2_3
        z = r * r
        s = r + r * z * (_S1 + z * (_S2 + z * (_S3 + z * (_S4 + z * (_S5 + z * _S6)))))
        c = 1.0 - 0.5 * z + z * z * (_C1 + z * (_C2 + z * (_C3 + z * (_C4 + z * (_C5 + z * _C6)))))
        q = np.int64(k)
        swap = (q & 1) == 1
        a = c if swap else s
        b = s if swap else c
        s_out[i] = (1.0 - 2.0 * ((q >> 1) & 1)) * a
        c_out[i] = (1.0 - 2.0 * (((q + 1) >> 1) & 1)) * b


def sincos(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.size == 0 or not np.all(np.abs(x) < _LIMIT):
        return np.sin(x), np.cos(x)
    s = np.empty_like(x)
    c = np.empty_like(x)
    _sincos_flat(x.reshape(-1), s.reshape(-1), c.reshape(-1))
    return s, c
