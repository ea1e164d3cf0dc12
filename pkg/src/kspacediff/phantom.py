"""Randomized ellipse phantoms and smooth coil sensitivities."""

from __future__ import annotations

import numpy as np

from .kspace import CoilStack, Domain
from .rng import substream

# (value, center_x, center_y, semi_x, semi_y, angle_deg); painted in order
_HEAD_LAYOUT = [
    (1.00, 0.00, 0.00, 0.69, 0.92, 0.0),
    (0.25, 0.00, -0.018, 0.66, 0.87, 0.0),
    (0.05, 0.22, 0.00, 0.11, 0.31, -18.0),
    (0.05, -0.22, 0.00, 0.16, 0.41, 18.0),
    (0.45, 0.00, 0.35, 0.21, 0.25, 0.0),
    (0.55, 0.00, 0.10, 0.046, 0.046, 0.0),
    (0.55, 0.00, -0.10, 0.046, 0.046, 0.0),
    (0.65, -0.08, -0.605, 0.046, 0.023, 0.0),
    (0.65, 0.00, -0.605, 0.023, 0.023, 0.0),
    (0.65, 0.06, -0.605, 0.023, 0.046, 0.0),
]


def _ellipse(shape, cx, cy, ax, ay, angle_deg):
    h, w = shape
    y, x = np.mgrid[-1:1:complex(0, h), -1:1:complex(0, w)]
    t = np.deg2rad(angle_deg)
    xr = (x - cx) * np.cos(t) + (y - cy) * np.sin(t)
    yr = -(x - cx) * np.sin(t) + (y - cy) * np.cos(t)
    return (xr / ax) ** 2 + (yr / ay) ** 2 <= 1.0


def ellipse_image(shape: tuple[int, int], seed: int, jitter: float = 1.0) -> np.ndarray:
    """Piecewise-smooth head-like phantom in [0, 1] with an exactly zero background.

    Every structure of a Shepp-Logan style layout gets a random shift,
    rescaling, rotation and intensity; a few extra random lesions are added
    and a gentle smooth bias field modulates the interior. ``jitter=0``
    gives the fixed layout with none of these.
    """
    if min(shape) < 32:
        raise ValueError("phantoms need at least 32 pixels per side")
    rng = substream(seed, "phantom")
    img = np.zeros(shape)
    inside = np.zeros(shape, dtype=bool)
    for n, (val, cx, cy, ax, ay, ang) in enumerate(_HEAD_LAYOUT):
        if n == 0:
            scale = 1 + jitter * rng.uniform(-0.05, 0.03)
            dx, dy = jitter * rng.uniform(-0.03, 0.03, 2)
            region = _ellipse(shape, cx + dx, cy + dy, ax * scale, ay * scale, ang + jitter * rng.uniform(-8, 8))
            inside = region
            value = 1.0
        else:
            s = 1 + jitter * rng.uniform(-0.2, 0.2, 2)
            d = jitter * rng.uniform(-0.06, 0.06, 2)
            region = _ellipse(shape, cx + d[0], cy + d[1], ax * s[0], ay * s[1], ang + jitter * rng.uniform(-20, 20))
            value = float(np.clip(val + jitter * rng.uniform(-0.08, 0.08), 0.02, 0.95))
        img[region & inside] = value
    n_lesions = int(rng.integers(2, 6)) if jitter > 0 else 0
    for _ in range(n_lesions):
        cx, cy = rng.uniform(-0.4, 0.4, 2)
        ax, ay = rng.uniform(0.03, 0.12, 2)
        region = _ellipse(shape, cx, cy, ax, ay, rng.uniform(0, 180)) & inside
        img[region] = rng.uniform(0.1, 0.9)
    y, x = np.mgrid[-1:1:complex(0, shape[0]), -1:1:complex(0, shape[1])]
    a = jitter * rng.uniform(-0.1, 0.1, 3)
    bias = 1.0 + a[0] * x + a[1] * y + a[2] * (x ** 2 + y ** 2)
    img = np.where(inside, img * bias, 0.0)
    img = np.clip(img / img.max(), 0.0, 1.0)
    return img


def smooth_phase(shape: tuple[int, int], seed: int, strength: float = np.pi / 2) -> np.ndarray:
    rng = substream(seed, "phase")
    y, x = np.mgrid[-1:1:complex(0, shape[0]), -1:1:complex(0, shape[1])]
    c = rng.uniform(-1, 1, 5)
    return strength * (c[0] + c[1] * x + c[2] * y + c[3] * x * y + c[4] * (x ** 2 - y ** 2)) / 2


def make_sensitivities(shape: tuple[int, int], coils: int, seed: int = 0) -> np.ndarray:
    """Gaussian-lobe coil profiles around the field of view with ``sum_c |S_c|^2 = 1``."""
    if coils < 1:
        raise ValueError("need at least one coil")
    if coils == 1:
        return np.ones((1, *shape), dtype=np.complex128)
    rng = substream(seed, "coils")
    y, x = np.mgrid[-1:1:complex(0, shape[0]), -1:1:complex(0, shape[1])]
    maps = []
    for c in range(coils):
        theta = 2 * np.pi * c / coils + rng.uniform(-0.2, 0.2)
        px, py = 1.3 * np.cos(theta), 1.3 * np.sin(theta)
        width = rng.uniform(0.8, 1.2)
        mag = np.exp(-((x - px) ** 2 + (y - py) ** 2) / (2 * width ** 2))
        phase = rng.uniform(-np.pi, np.pi) + rng.uniform(-1, 1) * x + rng.uniform(-1, 1) * y
        maps.append(mag * np.exp(1j * phase))
    maps = np.array(maps)
    return maps / np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))


def make_phantom(kind: str = "ellipses", shape: tuple[int, int] = (64, 64), seed: int = 0, coils: int = 1,
                 phase: bool = False) -> CoilStack:
    """Image-domain coil stack of a randomized phantom.

    ``kind`` is ``"ellipses"`` (randomized) or ``"shepp-logan"`` (fixed
    layout, no randomization).
    """
    if kind == "ellipses":
        img = ellipse_image(shape, seed)
    elif kind == "shepp-logan":
        img = ellipse_image(shape, seed, jitter=0.0)
    else:
        raise ValueError(f"unknown phantom kind {kind!r}")
    img = img.astype(np.complex128)
    if phase:
        img = img * np.exp(1j * smooth_phase(shape, seed))
    sens = make_sensitivities(shape, coils, seed)
    return CoilStack(sens * img[None], Domain.IMAGE)
