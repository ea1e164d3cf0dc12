"""High-frequency prior extractors and the feature-map correlation diagnostic.

Three operators share one small surface (``apply``, ``restore``, ``tag``):

* :class:`WeightMatrix` multiplies k-space by a radial weight that grows
  with distance from DC, flattening the dynamic range.
* :class:`CenterMask` zeroes a centered ``n x n`` low-frequency block.
* :class:`IdentityOp` leaves k-space alone (the plain full-k-space prior).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Union

import numpy as np

from .kspace import center_index, centered_coords, ifft2c

DEFAULT_R_CUT = 1.0
DEFAULT_P = 0.5
DEFAULT_FLOOR = 1e-6
DEFAULT_WINDOW = 50
REFERENCE_SIZE = 256


def _check_shape(k: np.ndarray, shape: tuple[int, int]) -> None:
    if tuple(k.shape[-2:]) != tuple(shape):
        raise ValueError(f"grid shape {tuple(k.shape[-2:])} does not match operator shape {tuple(shape)}")


def scaled_window(n: int, height: int, reference: int = REFERENCE_SIZE) -> int:
    """Scale a window size quoted for a ``reference``-pixel grid to ``height``.

    Rounds half up and never returns less than 1.
    """
    return max(1, int(math.floor(n * height / reference + 0.5)))


@dataclass(frozen=True)
class WeightMatrix:
    """Radial weight ``max(floor, (r_cut*cx^2 + r_cut*cy^2)^p)`` on centered, normalized coordinates."""

    w: np.ndarray = field(repr=False)
    r_cut: float = DEFAULT_R_CUT
    p: float = DEFAULT_P
    floor: float = DEFAULT_FLOOR

    kind = "weight"

    @classmethod
    def build(cls, shape: tuple[int, int], r_cut: float = DEFAULT_R_CUT, p: float = DEFAULT_P,
              floor: float = DEFAULT_FLOOR) -> "WeightMatrix":
        if r_cut <= 0:
            raise ValueError("r_cut must be positive")
        if floor < 0:
            raise ValueError("floor must be nonnegative")
        cx, cy = centered_coords(shape)
        w = np.maximum(floor, (r_cut * cx ** 2 + r_cut * cy ** 2) ** p)
        w.setflags(write=False)
        return cls(w=w, r_cut=float(r_cut), p=float(p), floor=float(floor))

    @property
    def shape(self) -> tuple[int, int]:
        return self.w.shape

    def apply(self, k: np.ndarray) -> np.ndarray:
        return apply_weight(k, self)

    def restore(self, kw: np.ndarray, prior: np.ndarray | None = None) -> np.ndarray:
        return unapply_weight(kw, self)

    def tag(self) -> dict[str, Any]:
        return {"kind": self.kind, "r_cut": self.r_cut, "p": self.p, "floor": self.floor}


@dataclass(frozen=True)
class CenterMask:
    """Centered ``window x window`` low-frequency block ``m``; ``complement`` is ``1 - m``."""

    m: np.ndarray = field(repr=False)
    window: int

    kind = "mask"

    @classmethod
    def build(cls, shape: tuple[int, int], window: int) -> "CenterMask":
        h, w = shape
        if window < 1:
            raise ValueError("window must be at least 1")
        if window > min(h, w):
            raise ValueError(f"window {window} larger than grid {shape}")
        ch, cw = center_index(shape)
        r0, c0 = ch - window // 2, cw - window // 2
        m = np.zeros(shape, dtype=bool)
        m[r0:r0 + window, c0:c0 + window] = True
        m.setflags(write=False)
        return cls(m=m, window=int(window))

    @property
    def shape(self) -> tuple[int, int]:
        return self.m.shape

    @property
    def complement(self) -> np.ndarray:
        return ~self.m

    def apply(self, k: np.ndarray) -> np.ndarray:
        return apply_highpass(k, self)

    def lowpass(self, k: np.ndarray) -> np.ndarray:
        _check_shape(k, self.shape)
        return np.where(self.m, k, 0)

    def restore(self, km: np.ndarray, prior: np.ndarray | None = None) -> np.ndarray:
        """High frequencies from ``km``; the masked block comes from ``prior`` (zeros if absent)."""
        hp = apply_highpass(km, self)
        if prior is None:
            return hp
        return hp + self.lowpass(prior)

    def tag(self) -> dict[str, Any]:
        return {"kind": self.kind, "window": self.window}


@dataclass(frozen=True)
class IdentityOp:
    shape: tuple[int, int]

    kind = "identity"

    def apply(self, k: np.ndarray) -> np.ndarray:
        _check_shape(k, self.shape)
        return np.asarray(k, dtype=np.complex128).copy()

    def restore(self, k: np.ndarray, prior: np.ndarray | None = None) -> np.ndarray:
        return self.apply(k)

    def tag(self) -> dict[str, Any]:
        return {"kind": self.kind}


FreqOperator = Union[WeightMatrix, CenterMask, IdentityOp]


def operator_from_tag(tag: dict[str, Any], shape: tuple[int, int]) -> FreqOperator:
    kind = tag.get("kind")
    if kind == "weight":
        return WeightMatrix.build(shape, tag.get("r_cut", DEFAULT_R_CUT), tag.get("p", DEFAULT_P),
                                  tag.get("floor", DEFAULT_FLOOR))
    if kind == "mask":
        return CenterMask.build(shape, int(tag["window"]))
    if kind == "identity":
        return IdentityOp(tuple(shape))
    raise ValueError(f"unknown operator tag {tag!r}")


def apply_weight(k: np.ndarray, wm: WeightMatrix) -> np.ndarray:
    _check_shape(k, wm.shape)
    return wm.w * k


def unapply_weight(kw: np.ndarray, wm: WeightMatrix) -> np.ndarray:
    if wm.floor <= 0:
        raise ValueError("cannot invert a weight matrix with floor 0 (division by zero at DC)")
    _check_shape(kw, wm.shape)
    return kw / wm.w


def apply_highpass(k: np.ndarray, cm: CenterMask) -> np.ndarray:
    _check_shape(k, cm.shape)
    return np.where(cm.m, 0, k).astype(np.result_type(k, np.complex128))


def correlation(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson correlation of two real grids over all entries."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValueError("correlation needs grids of the same shape")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = np.sqrt(np.mean(xc ** 2))
    sy = np.sqrt(np.mean(yc ** 2))
    if sx == 0 or sy == 0:
        raise ValueError("correlation undefined for a constant grid")
    rho = float(np.mean(xc * yc) / (sx * sy))
    return min(1.0, max(-1.0, rho))


def feature_map(k: np.ndarray, op: FreqOperator) -> np.ndarray:
    """Image-domain magnitude of the operator-filtered k-space."""
    return np.abs(ifft2c(op.apply(k)))
