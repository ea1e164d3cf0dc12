"""Multi-frequency reconstruction: branch sampling, combination, data consistency, Hankel projection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .freqops import CenterMask, FreqOperator, WeightMatrix, apply_highpass, operator_from_tag
from .kspace import CoilStack, Domain, ifft2c, sos_combine
from .masks import SamplingMask
from .rng import complex_normal, substream
from .sampler import LevelStepper, NonFiniteState, SamplerConfig, check_operator
from .score import ScoreModel

DEFAULT_HANKEL_WINDOW = (6, 6)
DEFAULT_HANKEL_RANK = 24
_REFERENCE_GRID = 64


class Mode(str, Enum):
    SERIAL = "serial"
    PARALLEL = "parallel"
    SINGLE = "single"


class PairingError(ValueError):
    pass


class HankelError(RuntimeError):
    pass


def default_hankel(shape: tuple[int, int]) -> tuple[tuple[int, int], int]:
    """Window and rank for a grid, scaled from ``(6, 6)`` / rank 24 at 64x64."""
    f = min(shape) / _REFERENCE_GRID
    a = max(2, int(round(DEFAULT_HANKEL_WINDOW[0] * f)))
    b = max(2, int(round(DEFAULT_HANKEL_WINDOW[1] * f)))
    rank = max(1, int(round(DEFAULT_HANKEL_RANK * (a * b) / 36)))
    return (a, b), rank


@dataclass(frozen=True)
class ReconConfig:
    mode: Mode = Mode.SERIAL
    mu1: float = 1.0
    mu2: float = 1.0
    lambda1: float = 0.5
    lambda2: float = 0.5
    dc_lambda: float = math.inf
    hankel_window: tuple[int, int] | None = None
    hankel_rank: int | None = None
    hankel: bool = True
    outer_iters: int = 1
    interleave: bool = True
    serial_feed: str = "sampler"

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.mode is Mode.PARALLEL and not math.isclose(self.lambda1 + self.lambda2, 1.0, abs_tol=1e-12):
            raise ValueError("parallel weights must satisfy lambda1 + lambda2 = 1")
        if not self.dc_lambda > 0:
            raise ValueError("dc_lambda must be positive (use inf for exact replacement)")
        if self.hankel_rank is not None and self.hankel_rank < 1:
            raise ValueError("hankel_rank must be >= 1")
        if self.outer_iters < 1:
            raise ValueError("outer_iters must be >= 1")
        if self.serial_feed not in ("sampler", "operator"):
            raise ValueError("serial_feed is 'sampler' or 'operator'")

    def hankel_params(self, shape: tuple[int, int]) -> tuple[tuple[int, int], int]:
        window, rank = default_hankel(shape)
        if self.hankel_window is not None:
            window = tuple(self.hankel_window)
        if self.hankel_rank is not None:
            rank = self.hankel_rank
        return window, rank

    def to_dict(self) -> dict[str, Any]:
        return {"mode": self.mode.value, "mu1": self.mu1, "mu2": self.mu2, "lambda1": self.lambda1,
                "lambda2": self.lambda2, "dc_lambda": "inf" if math.isinf(self.dc_lambda) else self.dc_lambda,
                "hankel_window": None if self.hankel_window is None else list(self.hankel_window),
                "hankel_rank": self.hankel_rank, "hankel": self.hankel, "outer_iters": self.outer_iters,
                "interleave": self.interleave, "serial_feed": self.serial_feed}


@dataclass(frozen=True)
class Measurement:
    f: CoilStack
    mask: SamplingMask

    def __post_init__(self) -> None:
        if self.f.domain is not Domain.KSPACE:
            raise ValueError("measurement must be a k-space stack")
        if self.f.shape != self.mask.shape:
            raise ValueError(f"mask shape {self.mask.shape} does not match data {self.f.shape}")
        if np.any(self.f.data[:, ~self.mask.omega] != 0):
            raise ValueError("measurement has nonzero values outside the sampling mask")


def undersample(kspace: CoilStack, mask: SamplingMask) -> Measurement:
    if kspace.domain is not Domain.KSPACE:
        kspace = kspace.to_kspace()
    return Measurement(CoilStack(np.where(mask.omega, kspace.data, 0), Domain.KSPACE), mask)


def zero_filled(meas: Measurement) -> CoilStack:
    return meas.f.to_image()


def combine(kw: np.ndarray, km: np.ndarray, cfg: ReconConfig, cm: CenterMask | None = None) -> np.ndarray:
    """Serial: ``mu2 * highpass(mu1 * kw)`` (``km`` unused). Parallel: ``lambda1 * kw + lambda2 * km``."""
    if kw.shape != km.shape:
        raise ValueError(f"branch shapes differ: {kw.shape} vs {km.shape}")
    if cfg.mode is Mode.PARALLEL:
        return cfg.lambda1 * kw + cfg.lambda2 * km
    if cfg.mode is Mode.SERIAL:
        if cm is None:
            raise ValueError("serial combination needs the center mask")
        return cfg.mu2 * apply_highpass(cfg.mu1 * kw, cm)
    raise ValueError("single-branch mode has nothing to combine")


def data_consistency(k: np.ndarray, f: np.ndarray, omega: np.ndarray, dc_lambda: float = math.inf) -> np.ndarray:
    """Pull acquired entries toward the measurement; exact replacement when ``dc_lambda`` is infinite."""
    if not dc_lambda > 0:
        raise ValueError("dc_lambda must be positive")
    if k.shape != omega.shape or f.shape != omega.shape:
        raise ValueError("mask shape mismatch")
    if math.isinf(dc_lambda):
        return np.where(omega, f, k)
    return np.where(omega, (k + dc_lambda * f) / (1.0 + dc_lambda), k)


def _positions(shape, window):
    h, w = shape
    a, b = window
    if a < 1 or b < 1 or a > h or b > w:
        raise ValueError(f"window {window} does not fit grid {shape}")
    return h - a + 1, w - b + 1


def hankel_lift(k: np.ndarray, window: tuple[int, int]) -> np.ndarray:
    """Columns are row-major ``a x b`` patches; positions run column-major (row offset fastest)."""
    k = np.asarray(k)
    ni, nj = _positions(k.shape, window)
    a, b = window
    patches = sliding_window_view(k, (a, b))  # (ni, nj, a, b)
    return patches.transpose(1, 0, 2, 3).reshape(ni * nj, a * b).T.copy()


def hankel_average(mat: np.ndarray, shape: tuple[int, int], window: tuple[int, int]) -> np.ndarray:
    """Pseudo-inverse of the lift: average every entry mapped to the same grid index."""
    ni, nj = _positions(shape, window)
    a, b = window
    if mat.shape != (a * b, ni * nj):
        raise ValueError(f"matrix shape {mat.shape} does not match window {window} on {shape}")
    out = np.zeros(shape, dtype=np.result_type(mat, np.complex128))
    count = np.zeros(shape)
    for di in range(a):
        for dj in range(b):
            row = mat[di * b + dj].reshape(nj, ni).T
            out[di:di + ni, dj:dj + nj] += row
            count[di:di + ni, dj:dj + nj] += 1
    return out / count


def hankel_project(k: np.ndarray, window: tuple[int, int], rank: int) -> np.ndarray:
    """Hard-threshold the lift to its ``rank`` largest singular values and map back.

    The lift is short and wide (``a*b`` rows), so the leading left singular
    vectors come from the eigendecomposition of the small Gram matrix and
    the truncation is the projection of the lift onto their span.
    """
    if rank < 1:
        raise ValueError("rank must be >= 1")
    mat = hankel_lift(k, window)
    if rank > min(mat.shape):
        raise ValueError(f"rank {rank} exceeds lifted matrix dimensions {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise HankelError("non-finite entries in the Hankel lift")
    wide = mat.shape[0] <= mat.shape[1]
    gram = mat @ mat.conj().T if wide else mat.conj().T @ mat
    try:
        _, vecs = np.linalg.eigh(gram)
    except np.linalg.LinAlgError as exc:
        raise HankelError(f"singular value decomposition failed: {exc}") from exc
    top = vecs[:, -rank:]
    low = top @ (top.conj().T @ mat) if wide else (mat @ top) @ top.conj().T
    return hankel_average(low, k.shape, window)


@dataclass
class ReconResult:
    kspace: CoilStack
    images: CoilStack
    sos: np.ndarray
    history: list[dict[str, float]] = field(default_factory=list)


@dataclass
class _Branch:
    op: FreqOperator
    stepper: LevelStepper
    scale: float
    state: np.ndarray

    def to_model(self, k: np.ndarray) -> np.ndarray:
        return self.op.apply(k) / self.scale

    def from_model(self, prior: np.ndarray | None = None) -> np.ndarray:
        return self.op.restore(self.state * self.scale, prior)


def _branch(score: ScoreModel, shape, sampler_cfg: SamplerConfig, index: int, coil: int) -> _Branch:
    tag = getattr(score, "operator_tag", None)
    if tag is None:
        raise PairingError("score model carries no operator tag")
    op = operator_from_tag(tag, shape)
    check_operator(score, op)
    rng = substream(sampler_cfg.rng_seed, "noise", index, coil)
    init = complex_normal(substream(sampler_cfg.rng_seed, "init", index, coil), shape)
    return _Branch(op, LevelStepper(score, sampler_cfg, rng), float(getattr(score, "data_scale", 1.0)), init)


def _check_pairing(cfg: ReconConfig, score_w, score_m) -> None:
    if cfg.mode is Mode.SINGLE:
        if score_w is None:
            raise PairingError("single-branch mode needs a model")
        return
    if score_w is None or score_m is None:
        raise PairingError(f"{cfg.mode.value} mode needs both a weight and a mask model")
    tw = (getattr(score_w, "operator_tag", None) or {}).get("kind")
    tm = (getattr(score_m, "operator_tag", None) or {}).get("kind")
    if tw != WeightMatrix.kind or tm != CenterMask.kind:
        raise PairingError(f"expected weight- and mask-tagged models, got {tw!r} and {tm!r}")


def reconstruct_coil(f: np.ndarray, omega: np.ndarray, score_w: ScoreModel, score_m: ScoreModel | None,
                     cfg: ReconConfig, sampler_cfg: SamplerConfig, coil: int = 0,
                     callback: Callable[[int, np.ndarray], None] | None = None) -> np.ndarray:
    shape = f.shape
    window, rank = cfg.hankel_params(shape)
    bw = _branch(score_w, shape, sampler_cfg, 0, coil)
    bm = _branch(score_m, shape, sampler_cfg, 1, coil) if cfg.mode is not Mode.SINGLE else None
    k = np.where(omega, f, 0).astype(np.complex128)
    levels = len(bw.stepper)

    def project(x: np.ndarray) -> np.ndarray:
        x = data_consistency(x, f, omega, cfg.dc_lambda)
        if cfg.hankel:
            x = data_consistency(hankel_project(x, window, rank), f, omega, cfg.dc_lambda)
        return x

    step = 0
    for _ in range(cfg.outer_iters):
        for i in range(levels):
            bw.state = bw.stepper.level(bw.state, i)
            if cfg.mode is Mode.SINGLE:
                kc = bw.from_model(prior=k)
            elif cfg.mode is Mode.PARALLEL:
                bm.state = bm.stepper.level(bm.state, i)
                kw = bw.from_model()
                km = bm.from_model(prior=kw)
                kc = combine(kw, km, cfg)
            else:
                kw = bw.from_model()
                fed = combine(kw, kw, cfg, bm.op)
                if cfg.serial_feed == "sampler":
                    bm.state = bm.stepper.level(fed / bm.scale, i)
                    fed = bm.from_model()
                kc = fed + bm.op.lowpass(cfg.mu1 * kw)
            last = i == levels - 1
            if cfg.interleave or last:
                k = project(kc)
            else:
                k = kc
            if not np.all(np.isfinite(k)):
                raise NonFiniteState("non-finite reconstruction state", i)
            if cfg.interleave:
                bw.state = bw.to_model(k)
                if bm is not None:
                    bm.state = bm.to_model(k)
            step += 1
            if callback is not None:
                callback(step, k)
    return k


def reconstruct(meas: Measurement, score_w: ScoreModel, score_m: ScoreModel | None, cfg: ReconConfig,
                sampler_cfg: SamplerConfig,
                callback: Callable[[int, int, np.ndarray], None] | None = None) -> ReconResult:
    """Reconstruct every coil with shared models and per-coil data consistency.

    ``callback(step, coil, kspace)`` sees the k-space estimate after each
    level, which is how convergence curves are recorded.
    """
    _check_pairing(cfg, score_w, score_m)
    out = []
    for c in range(meas.f.coils):
        cb = None if callback is None else (lambda s, k, _c=c: callback(s, _c, k))
        out.append(reconstruct_coil(meas.f.data[c], meas.mask.omega, score_w, score_m, cfg, sampler_cfg, c, cb))
    ks = CoilStack(np.stack(out), Domain.KSPACE)
    images = ks.to_image()
    return ReconResult(kspace=ks, images=images, sos=sos_combine(images))


def image_from_kspace(k: np.ndarray) -> np.ndarray:
    return np.abs(ifft2c(k))
