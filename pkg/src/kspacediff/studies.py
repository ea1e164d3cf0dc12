"""Experiment drivers shared by the CLI, the scripts and the acceptance suite.

* :func:`correlation_study` measures how closely the weight-operator feature
  map tracks mask-operator feature maps of several window sizes.
* :func:`convergence_study` records PSNR/SSIM after every noise level for
  the full-k-space, weight-only, mask-only and combined chains.
* :func:`reference_models` trains (or loads) the small phantom-scale
  weight, mask and identity models used by the end-to-end runs.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .freqops import CenterMask, IdentityOp, WeightMatrix, correlation, feature_map, scaled_window
from .kspace import fft2c, ifft2c, sos_combine
from .masks import make_mask
from .metrics import mse, psnr, ssim
from .phantom import make_phantom
from .recon import Measurement, Mode, ReconConfig, reconstruct, undersample, zero_filled
from .sampler import SamplerConfig
from .score import (ScoreModel, TrainableScore, build_training_set, load_checkpoint, make_schedule,
                    save_checkpoint, train)

TRAIN_SEED_OFFSET = 0
VAL_SEED_OFFSET = 100_000
TEST_SEED_OFFSET = 200_000
CONVERGENCE_SEED_OFFSET = 300_000
# Sampling stops at 0.03 rather than the training floor of 0.01: below that the
# small reference denoisers stop helping and late levels erode PSNR.
REFERENCE_SIGMA_MIN = 0.03


# correlation ------------------------------------------------------------------------------------

def correlation_study(images: np.ndarray, windows=(30, 50, 70), reference: int = 256,
                      weight: WeightMatrix | None = None) -> dict:
    """Pearson correlation between the weight feature map and each mask feature map.

    ``windows`` are quoted for a ``reference``-pixel grid and rescaled to the
    data; duplicates (before or after scaling) are dropped. Returns per-image
    values, the suite mean per window and the window with the largest mean.
    """
    images = np.asarray(images)
    if images.ndim == 2:
        images = images[None]
    shape = images.shape[-2:]
    quoted = list(dict.fromkeys(int(n) for n in windows))
    scaled: dict[int, int] = {}
    for n in quoted:
        s = scaled_window(n, shape[0], reference)
        if s not in scaled.values():
            scaled[n] = s
    wm = weight or WeightMatrix.build(shape)
    per_image = {n: [] for n in scaled}
    for img in images:
        k = fft2c(img)
        wmap = feature_map(k, wm)
        for n, s in scaled.items():
            per_image[n].append(correlation(wmap, feature_map(k, CenterMask.build(shape, s))))
    mean = {n: float(np.mean(v)) for n, v in per_image.items()}
    best = max(mean, key=mean.get)
    order = sorted(scaled)
    return {"windows": order, "scaled": [scaled[n] for n in order], "per_image": per_image, "mean": mean,
            "argmax": best, "middle": order[len(order) // 2]}


# models -----------------------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    """Settings for the phantom-scale reference models."""

    shape: tuple[int, int] = (64, 64)
    n_train: int = 200
    n_val: int = 20
    epochs: int = 40
    hidden: int = 32
    depth: int = 5
    kernel: int = 3
    sigma_max: float = 1.0
    sigma_min: float = 0.01
    levels: int = 10
    lr: float = 2e-3
    batch_size: int = 16
    window: int = 50
    r_cut: float = 1.0
    p: float = 0.5
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shape"] = list(self.shape)
        return d


def operator_for(kind: str, cfg: TrainConfig):
    if kind == "weight":
        return WeightMatrix.build(cfg.shape, cfg.r_cut, cfg.p)
    if kind == "mask":
        return CenterMask.build(cfg.shape, scaled_window(cfg.window, cfg.shape[0]))
    if kind == "identity":
        return IdentityOp(cfg.shape)
    raise ValueError(f"unknown operator kind {kind!r}")


def phantom_kspace(seeds, shape=(64, 64), coils: int = 1) -> np.ndarray:
    """First-coil k-space of ``make_phantom`` for every seed, shape ``(n, H, W)``."""
    return np.stack([make_phantom(seed=int(s), shape=shape, coils=coils).to_kspace().data[0] for s in seeds])


def train_reference(kind: str, cfg: TrainConfig, log: Callable[[str], None] | None = None):
    """Train one reference model under operator ``kind``; returns ``(model, history)``."""
    op = operator_for(kind, cfg)
    k_train = phantom_kspace(range(cfg.seed + TRAIN_SEED_OFFSET, cfg.seed + TRAIN_SEED_OFFSET + cfg.n_train),
                             cfg.shape)
    k_val = phantom_kspace(range(cfg.seed + VAL_SEED_OFFSET, cfg.seed + VAL_SEED_OFFSET + cfg.n_val), cfg.shape)
    x, scale = build_training_set(k_train, op)
    xv, _ = build_training_set(k_val, op, scale)
    sigma_data = float(np.sqrt(np.mean(np.abs(x) ** 2)))
    model = TrainableScore(cfg.shape, op.tag(), make_schedule(cfg.sigma_max, cfg.sigma_min, cfg.levels),
                           seed=cfg.seed, data_scale=scale, sigma_data=sigma_data, hidden=cfg.hidden,
                           depth=cfg.depth, kernel=cfg.kernel)
    history = train(model, x, xv, epochs=cfg.epochs, lr=cfg.lr, batch_size=cfg.batch_size, log=log)
    return model, history


def reference_models(kinds=("weight", "mask"), cfg: TrainConfig | None = None, cache: str | Path | None = None,
                     log: Callable[[str], None] | None = None) -> dict[str, TrainableScore]:
    """Train the requested models, reusing checkpoints in ``cache`` when present."""
    cfg = cfg or TrainConfig()
    out = {}
    for kind in kinds:
        path = None if cache is None else Path(cache) / f"{kind}.ckpt"
        if path is not None and path.exists():
            out[kind] = load_checkpoint(path)
            continue
        model, _ = train_reference(kind, cfg, log)
        if path is not None:
            save_checkpoint(path, model)
        out[kind] = model
    return out


# reconstruction suites --------------------------------------------------------------------------

@dataclass(frozen=True)
class SuiteConfig:
    """Held-out phantom suite and sampler settings for end-to-end runs."""

    n_phantoms: int = 10
    shape: tuple[int, int] = (64, 64)
    pattern: str = "random2d"
    accel: float = 4.0
    calib: int = 8
    levels: int = 50
    sigma_max: float = 1.0
    sigma_min: float = REFERENCE_SIGMA_MIN
    step_ratio: float = 0.075
    corrector_steps: int = 4
    denoise_final: bool = True
    seed: int = 0

    def sampler(self) -> SamplerConfig:
        return SamplerConfig(make_schedule(self.sigma_max, self.sigma_min, self.levels), step_ratio=self.step_ratio,
                             corrector_steps=self.corrector_steps, rng_seed=self.seed,
                             denoise_final=self.denoise_final)

    def cases(self):
        """``(image_id, reference SOS image, measurement)`` for every suite phantom."""
        for i in range(self.n_phantoms):
            ph = make_phantom(seed=self.seed + TEST_SEED_OFFSET + i, shape=self.shape)
            mask = make_mask(self.pattern, self.shape, self.accel, self.calib, seed=self.seed + i)
            yield i, sos_combine(ph), undersample(ph.to_kspace(), mask)


def method_table(models: dict[str, ScoreModel]) -> dict[str, tuple[ReconConfig, ScoreModel, ScoreModel | None]]:
    """The reconstruction variants compared in the ablation."""
    table = {}
    if "weight" in models and "mask" in models:
        table["serial"] = (ReconConfig(Mode.SERIAL), models["weight"], models["mask"])
        table["parallel"] = (ReconConfig(Mode.PARALLEL), models["weight"], models["mask"])
    for kind in ("weight", "mask", "identity"):
        if kind in models:
            table[kind] = (ReconConfig(Mode.SINGLE), models[kind], None)
    return table


def evaluate_suite(models: dict[str, ScoreModel], suite: SuiteConfig, methods=None,
                   log: Callable[[str], None] | None = None) -> list[dict]:
    """Metric rows (``METRIC_COLUMNS`` layout) for zero-filling and every method."""
    table = method_table(models)
    if methods is not None:
        table = {m: table[m] for m in methods}
    rows = []
    scfg = suite.sampler()
    for i, ref, meas in suite.cases():
        outputs = {"zero-filled": sos_combine(zero_filled(meas))}
        for name, (cfg, a, b) in table.items():
            outputs[name] = reconstruct(meas, a, b, cfg, scfg).sos
        for name, img in outputs.items():
            rows.append({"image_id": i, "pattern": suite.pattern, "R": suite.accel, "method": name,
                         "psnr_db": psnr(ref, img), "ssim": ssim(ref, img), "mse": mse(ref, img)})
            if log is not None:
                log(f"phantom {i} {name:12s} psnr {rows[-1]['psnr_db']:.2f}")
    return rows


def summarize(rows: list[dict], key: str = "psnr_db") -> dict[str, float]:
    methods = list(dict.fromkeys(r["method"] for r in rows))
    return {m: float(np.mean([r[key] for r in rows if r["method"] == m])) for m in methods}


# convergence ------------------------------------------------------------------------------------

def smooth(values, window: int = 10) -> np.ndarray:
    """Moving average over every full window of ``window`` consecutive values.

    Entry ``j`` averages iterations ``j+1 .. j+window``; curves shorter than
    the window collapse to their overall mean.
    """
    v = np.asarray(values, dtype=float)
    if len(v) == 0:
        raise ValueError("empty curve")
    w = min(window, len(v))
    c = np.cumsum(np.insert(v, 0, 0.0))
    return (c[w:] - c[:-w]) / w


def iterations_to_fraction(values, fraction: float = 0.95, window: int = 10) -> int:
    """Iterations needed before the smoothed PSNR first reaches ``fraction`` of its final value.

    Counted at the end of the first qualifying smoothing window.
    """
    s = smooth(values, window)
    w = len(values) - len(s) + 1
    return int(np.argmax(s >= fraction * s[-1])) + w


def is_nondecreasing(values, window: int = 10, tol: float = 0.0) -> bool:
    s = smooth(values, window)
    return bool(np.all(np.diff(s) >= -tol))


@dataclass
class ConvergenceCurve:
    chain: str
    psnr: list[float] = field(default_factory=list)
    ssim: list[float] = field(default_factory=list)


def convergence_study(models: dict[str, ScoreModel], ref: np.ndarray, meas: Measurement,
                      sampler_cfg: SamplerConfig, chains=("full", "weight", "mask", "combined")
                      ) -> dict[str, ConvergenceCurve]:
    """PSNR/SSIM of the SOS image after every level for each chain.

    ``full`` is the plain k-space prior (identity operator), ``combined``
    the serial weight-then-mask chain.
    """
    plan = {"full": (ReconConfig(Mode.SINGLE), "identity", None),
            "weight": (ReconConfig(Mode.SINGLE), "weight", None),
            "mask": (ReconConfig(Mode.SINGLE), "mask", None),
            "combined": (ReconConfig(Mode.SERIAL), "weight", "mask")}
    curves = {}
    for chain in chains:
        cfg, a, b = plan[chain]
        curve = ConvergenceCurve(chain)
        n_coils = meas.f.coils
        current: dict[int, np.ndarray] = {}

        def record(step, coil, k, _curve=curve, _cur=current):
            _cur[coil] = k
            if coil == n_coils - 1:
                img = np.sqrt(sum(np.abs(ifft2c(_cur[c])) ** 2 for c in range(n_coils)))
                _curve.psnr.append(psnr(ref, img))
                _curve.ssim.append(ssim(ref, img))

        if n_coils > 1:
            raise ValueError("convergence curves are recorded for single-coil measurements")
        reconstruct(meas, models[a], None if b is None else models[b], cfg, sampler_cfg, callback=record)
        curves[chain] = curve
    return curves


def convergence_case(seed: int = 0, shape=(64, 64), pattern: str = "random2d", accel: float = 8.0,
                     calib: int = 8, phantom_seed: int | None = None) -> tuple[np.ndarray, Measurement]:
    """Reference image and single-coil measurement for the convergence study."""
    ph = make_phantom(seed=CONVERGENCE_SEED_OFFSET + seed if phantom_seed is None else phantom_seed, shape=shape)
    mask = make_mask(pattern, shape, accel, calib, seed=seed)
    return sos_combine(ph), undersample(ph.to_kspace(), mask)


def convergence_rows(curves: dict[str, ConvergenceCurve]) -> list[dict]:
    rows = []
    for chain, c in curves.items():
        for i, (p, s) in enumerate(zip(c.psnr, c.ssim), start=1):
            rows.append({"iteration": i, "chain": chain, "psnr": p, "ssim": s})
    return rows


def finite_or_none(x: float):
    return x if math.isfinite(x) else None
