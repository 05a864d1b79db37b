"""Sinusoidal coordinate networks for the surface height and the image.

The height network also exposes its spatial gradient as an explicit forward
graph (per-layer Jacobian products with ``cos`` activations), so that the
gradient itself can be differentiated with respect to the weights using the
first-order engine in :mod:`waterlens.diffcore`.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import ContractError, DimensionError, Tensor
from .formats import read_f32r, write_f32r


@dataclass
class SirenLayer:
    weight: Tensor  # [out, in]
    bias: Tensor  # [1, out]
    omega0: float
    linear: bool = False

    @property
    def fan_in(self) -> int:
        return self.weight.shape[1]

    def preactivation(self, x: Tensor) -> Tensor:
        return dc.affine(x, self.weight, self.bias)

    def __call__(self, x: Tensor) -> Tensor:
        z = self.preactivation(x)
        return z if self.linear else dc.sin(z, self.omega0)


class SirenNet:
    """MLP with ``sin(omega0 * .)`` hidden activations and a linear head."""

    def __init__(self, layers: Sequence[SirenLayer]):
        if not layers:
            raise ContractError("SirenNet needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.weight.shape[0] != b.weight.shape[1]:
                raise DimensionError(f"layer dims do not compose: {a.weight.shape} -> {b.weight.shape}")
        if not layers[-1].linear or any(l.linear for l in layers[:-1]):
            raise ContractError("only the final layer may (and must) be linear")
        self.layers = list(layers)

    @property
    def dim_in(self) -> int:
        return self.layers[0].fan_in

    @property
    def dim_out(self) -> int:
        return self.layers[-1].weight.shape[0]

    def parameters(self) -> list[Tensor]:
        return [t for l in self.layers for t in (l.weight, l.bias)]

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.ndim != 2 or x.shape[1] != self.dim_in:
            raise DimensionError(f"expected coordinates [N, {self.dim_in}], got {x.shape}")
        for layer in self.layers:
            x = layer(x)
        return x


def siren_init(seed, dims: Sequence[int], omega0: float = 30.0, name: str = "siren") -> SirenNet:
    """Build a SIREN with the usual uniform initialisation.

    ``dims`` lists every width from input to output, so ``[3, 64, 64, 1]``
    gives two sinusoidal layers and a linear head.  The first layer draws
    from U(-1/fan_in, 1/fan_in); all later layers (head included) from
    U(-sqrt(6/fan_in)/omega0, +sqrt(6/fan_in)/omega0).  Biases share the
    range of their layer.
    """
    if len(dims) < 2:
        raise ContractError("siren_init: need at least input and output dims")
    if omega0 <= 0:
        raise ContractError("siren_init: omega0 must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    layers = []
    n = len(dims) - 1
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        bound = 1.0 / fan_in if i == 0 else np.sqrt(6.0 / fan_in) / omega0
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        b = rng.uniform(-bound, bound, size=(1, fan_out))
        layers.append(
            SirenLayer(
                dc.parameter(w, f"{name}.l{i}.weight"),
                dc.parameter(b, f"{name}.l{i}.bias"),
                omega0,
                linear=i == n - 1,
            )
        )
    return SirenNet(layers)


class FourierEncoding:
    """Fixed random Fourier features ``[sin(2 pi B u) | cos(2 pi B u)]``.

    ``u = (x + 1) / 2`` maps the normalized image square onto the unit square
    before projection, so ``bandwidth`` counts cycles per image width.  Taken
    directly on ``[-1, 1]`` the same bandwidth would place a large share of
    the frequencies above the Nyquist limit of a 64-pixel grid, and the field
    would oscillate between pixel centers.
    """

    def __init__(self, B: np.ndarray, bandwidth: float | None = None):
        self.B = np.asarray(B, dtype=np.float64)
        if self.B.ndim != 2 or self.B.shape[1] != 2:
            raise DimensionError(f"frequency matrix must be [m, 2], got {self.B.shape}")
        self.bandwidth = bandwidth
        # 2 pi B (x + 1) / 2 == (pi B) x + pi B 1
        self._weight = dc.constant(np.pi * self.B)
        self._phase = dc.constant(np.pi * self.B.sum(axis=1)[None, :])

    @classmethod
    def random(cls, seed, m: int = 128, bandwidth: float = 8.0) -> "FourierEncoding":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        return cls(rng.normal(0.0, bandwidth, size=(m, 2)), bandwidth)

    @property
    def m(self) -> int:
        return self.B.shape[0]

    def __call__(self, coords: Tensor) -> Tensor:
        if coords.data.ndim != 2 or coords.shape[1] != 2:
            raise DimensionError(f"encode expects [N, 2] coordinates, got {coords.shape}")
        return dc.concat(list(dc.sin_cos(dc.affine(coords, self._weight, self._phase))), axis=1)


class HeightField:
    """Surface height ``h(x1, x2, t) = offset + scale * siren(x1, x2, t)``."""

    def __init__(self, net: SirenNet, offset: float = 1.0, scale: float = 0.1):
        if net.dim_in != 3 or net.dim_out != 1:
            raise DimensionError("height network must map R^3 -> R")
        self.net = net
        self.offset = float(offset)
        self.scale = float(scale)

    @classmethod
    def create(cls, seed, hidden: int = 256, omega0: float = 30.0, offset: float = 1.0, scale: float = 0.1):
        return cls(siren_init(seed, [3, hidden, hidden, 1], omega0, name="height"), offset, scale)

    def parameters(self) -> list[Tensor]:
        return self.net.parameters()

    def __call__(self, coords: Tensor) -> Tensor:
        raw = self.net(coords)
        return dc.add(dc.scale(raw, self.scale), dc.constant(self.offset))

    def height_and_gradient(self, coords: Tensor) -> tuple[Tensor, Tensor]:
        """Heights ``[N, 1]`` and spatial gradients ``[N, 2]`` sharing one forward pass.

        The gradient is propagated forward as tangent vectors through each
        layer: ``dz_next = (omega0 cos(omega0 z) * dz) @ W_next^T``.
        """
        if coords.data.ndim != 2 or coords.shape[1] != 3:
            raise DimensionError(f"expected [N, 3] coordinates (x1, x2, t), got {coords.shape}")
        n = coords.shape[0]
        seeds = []
        for k in range(2):
            e = np.zeros((n, 3))
            e[:, k] = 1.0
            seeds.append(dc.constant(e))

        # omega0 factors of the slopes are pulled out and applied once at the end
        x = coords
        tangents = seeds
        factor = self.scale
        for layer in self.net.layers:
            if layer.linear:
                out = layer.preactivation(x)
                tangents = [t @ layer.weight.T for t in tangents]
                break
            x, slope = dc.sin_cos(layer.preactivation(x), layer.omega0)
            # the bias does not enter the tangent; only W does
            tangents = [dc.mul(slope, t @ layer.weight.T) for t in tangents]
            factor *= layer.omega0
        h = dc.add(dc.scale(out, self.scale), dc.constant(self.offset))
        grad = dc.scale(dc.concat(tangents, axis=1), factor)
        return h, grad


def spatial_gradient(h_field: HeightField, coords: Tensor) -> Tensor:
    """``(dh/dx1, dh/dx2)`` at each ``(x1, x2, t)`` row, as a differentiable graph."""
    return h_field.height_and_gradient(coords)[1]


def eval_field(net, coords: Tensor) -> Tensor:
    return net(coords)


def encode(enc: FourierEncoding, coords: Tensor) -> Tensor:
    return enc(coords)


class ImageField:
    """RGB image ``I(x) = sigmoid(siren(encode(x)))`` over 2-D coordinates.

    With ``encoding=None`` the Fourier lift is replaced by an extra
    sinusoidal layer acting on the raw coordinates.
    """

    def __init__(self, net: SirenNet, encoding: FourierEncoding | None):
        expected = 2 * encoding.m if encoding is not None else 2
        if net.dim_in != expected or net.dim_out != 3:
            raise DimensionError(f"image network must map R^{expected} -> R^3")
        self.net = net
        self.encoding = encoding

    @classmethod
    def create(
        cls,
        seed,
        hidden: int = 256,
        omega0: float = 30.0,
        fourier_m: int = 128,
        bandwidth: float = 8.0,
        fourier: bool = True,
    ) -> "ImageField":
        rng = np.random.default_rng(seed)
        if fourier:
            enc = FourierEncoding.random(rng, fourier_m, bandwidth)
            dims = [2 * fourier_m, hidden, hidden, hidden, 3]
        else:
            enc = None
            dims = [2, hidden, hidden, hidden, hidden, 3]
        return cls(siren_init(rng, dims, omega0, name="image"), enc)

    def parameters(self) -> list[Tensor]:
        return self.net.parameters()

    def __call__(self, coords: Tensor) -> Tensor:
        feats = self.encoding(coords) if self.encoding is not None else coords
        return dc.sigmoid(self.net(feats))


def export_weights(fields: dict, directory) -> list[Path]:
    """Write every weight, bias and frequency matrix as its own F32R file.

    Matrices are stored with height = rows, width = columns, one channel.
    Values are rounded to float32 by the container.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for prefix, fld in fields.items():
        for i, layer in enumerate(fld.net.layers):
            for kind, t in (("weight", layer.weight), ("bias", layer.bias)):
                path = directory / f"{prefix}.l{i}.{kind}.f32r"
                write_f32r(path, t.data)
                written.append(path)
        enc = getattr(fld, "encoding", None)
        if enc is not None:
            path = directory / f"{prefix}.fourier.B.f32r"
            write_f32r(path, enc.B)
            written.append(path)
    return written


def import_weights(fld, prefix: str, directory) -> None:
    """Load weights written by :func:`export_weights` into ``fld`` in place."""
    directory = Path(directory)
    for i, layer in enumerate(fld.net.layers):
        for kind, t in (("weight", layer.weight), ("bias", layer.bias)):
            arr = read_f32r(directory / f"{prefix}.l{i}.{kind}.f32r")[:, :, 0]
            if arr.shape != t.shape:
                raise DimensionError(f"{prefix}.l{i}.{kind}: file has {arr.shape}, field has {t.shape}")
            t.data[...] = arr
    enc = getattr(fld, "encoding", None)
    if enc is not None:
        B = read_f32r(directory / f"{prefix}.fourier.B.f32r")[:, :, 0]
        fld.encoding = FourierEncoding(B, enc.bandwidth)
