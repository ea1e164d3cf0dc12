"""Centered unitary 2D Fourier transforms and coil handling.

Grids are plain 2D complex numpy arrays. The DC bin of every k-space grid
sits at ``(H // 2, W // 2)`` and transforms use orthonormal scaling, so
``fft2c`` is a unitary map and Parseval holds exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class Domain(str, Enum):
    IMAGE = "image"
    KSPACE = "kspace"


def _check_grid(g: np.ndarray) -> np.ndarray:
    g = np.asarray(g)
    if g.ndim < 2 or g.shape[-1] < 1 or g.shape[-2] < 1:
        raise ValueError(f"expected a grid with positive dimensions, got shape {g.shape}")
    return g


def fft2c(g: np.ndarray) -> np.ndarray:
    """Centered orthonormal 2D DFT over the last two axes."""
    g = _check_grid(g)
    axes = (-2, -1)
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(g, axes=axes), norm="ortho"), axes=axes)


def ifft2c(g: np.ndarray) -> np.ndarray:
    """Exact inverse of :func:`fft2c`."""
    g = _check_grid(g)
    axes = (-2, -1)
    return np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(g, axes=axes), norm="ortho"), axes=axes)


def center_index(shape: tuple[int, int]) -> tuple[int, int]:
    return shape[0] // 2, shape[1] // 2


def index_grid(shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Raw integer row/column indices, each of the given shape."""
    return np.indices(shape)


def centered_coords(shape: tuple[int, int], normalize: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Offsets from the DC bin along rows and columns.

    With ``normalize`` the offsets are divided by ``H/2`` and ``W/2`` so that
    they span roughly [-1, 1] independently of resolution.
    """
    h, w = shape
    ch, cw = center_index(shape)
    rows, cols = np.indices(shape, dtype=float)
    cx = rows - ch
    cy = cols - cw
    if normalize:
        cx /= h / 2.0
        cy /= w / 2.0
    return cx, cy


@dataclass(frozen=True)
class CoilStack:
    """Multi-coil data with an explicit domain tag.

    ``data`` has shape ``(coils, H, W)``.
    """

    data: np.ndarray
    domain: Domain

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[None]
        if data.ndim != 3 or data.shape[0] < 1 or min(data.shape[1:]) < 1:
            raise ValueError(f"coil stack must have shape (coils, H, W), got {data.shape}")
        data = data.astype(np.complex128, copy=True)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "domain", Domain(self.domain))

    @property
    def coils(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]

    def __len__(self) -> int:
        return self.coils

    def __getitem__(self, c: int) -> np.ndarray:
        return self.data[c]

    def to_kspace(self) -> "CoilStack":
        if self.domain is not Domain.IMAGE:
            raise ValueError("stack is already in k-space")
        return CoilStack(fft2c(self.data), Domain.KSPACE)

    def to_image(self) -> "CoilStack":
        if self.domain is not Domain.KSPACE:
            raise ValueError("stack is already in the image domain")
        return CoilStack(ifft2c(self.data), Domain.IMAGE)


def sos_combine(stack: CoilStack) -> np.ndarray:
    """Root sum of squares over coils of an image-domain stack."""
    if stack.domain is not Domain.IMAGE:
        raise ValueError("sos_combine needs an image-domain stack; call to_image() first")
    return np.sqrt(np.sum(np.abs(stack.data) ** 2, axis=0))
