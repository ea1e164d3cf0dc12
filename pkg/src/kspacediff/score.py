"""Noise schedules, score models and denoising score matching.

Complex conventions used throughout the package: noise is circular complex
Gaussian with ``E|z|^2 = 1`` per entry, a "variance" always means
``E|x - mean|^2`` per complex entry, and a score is the conjugate Wirtinger
gradient of the log density. For a complex Gaussian CN(mu, v) that score is
``(mu - x) / v``, which is what the Langevin update ``x + eps/2 * s + sqrt(eps) * z``
needs in order to target the density.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol, runtime_checkable

import numpy as np
import torch
from torch import nn

from .freqops import FreqOperator
from .kspace import centered_coords

CHECKPOINT_FORMAT = "kspacediff-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingDivergence(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    sigma_max: float
    sigma_min: float
    levels: int
    sigmas: np.ndarray = field(repr=False, compare=False)

    def __len__(self) -> int:
        return self.levels

    @classmethod
    def constant(cls, sigma: float) -> "NoiseSchedule":
        """Single-level schedule holding only ``sigma``."""
        sigmas = np.array([float(sigma)])
        sigmas.setflags(write=False)
        return cls(float(sigma), float(sigma), 1, sigmas)

    def to_dict(self) -> dict[str, Any]:
        return {"sigma_max": self.sigma_max, "sigma_min": self.sigma_min, "levels": self.levels}


def make_schedule(sigma_max: float = 1.0, sigma_min: float = 0.01, levels: int = 1000) -> NoiseSchedule:
    """Geometric noise levels from ``sigma_max`` down to ``sigma_min``, end points exact."""
    if not (sigma_max > sigma_min > 0):
        raise ValueError("need sigma_max > sigma_min > 0")
    if levels < 2:
        raise ValueError("need at least two noise levels")
    sigmas = np.geomspace(sigma_max, sigma_min, levels)
    sigmas[0], sigmas[-1] = sigma_max, sigma_min
    sigmas.setflags(write=False)
    return NoiseSchedule(float(sigma_max), float(sigma_min), int(levels), sigmas)


def schedule_from_dict(d: dict[str, Any]) -> NoiseSchedule:
    if int(d["levels"]) == 1:
        return NoiseSchedule.constant(d["sigma_max"])
    return make_schedule(d["sigma_max"], d["sigma_min"], int(d["levels"]))


@runtime_checkable
class ScoreModel(Protocol):
    """Anything callable as ``model(x, sigma)`` returning a score field shaped like ``x``.

    ``x`` is a complex grid ``(H, W)`` or a batch ``(B, H, W)`` in the
    model's own (operator-transformed, normalized) domain.
    """

    def __call__(self, x: np.ndarray, sigma: float) -> np.ndarray: ...


@dataclass(frozen=True)
class GaussianScoreOracle:
    """Exact score of CN(mean, variance) convolved with CN(0, sigma^2)."""

    mean: np.ndarray
    variance: float
    operator_tag: dict[str, Any] | None = None
    data_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.variance <= 0:
            raise ValueError("variance must be positive")

    def __call__(self, x: np.ndarray, sigma: float) -> np.ndarray:
        return (self.mean - x) / (self.variance + sigma ** 2)

    def log_density(self, x: np.ndarray, sigma: float) -> float:
        v = self.variance + sigma ** 2
        d = np.size(x)
        return float(-np.sum(np.abs(x - self.mean) ** 2) / v - d * math.log(math.pi * v))


class _Denoiser(nn.Module):
    """Plain conv stack; the last layer starts at zero so an untrained model is a Gaussian prior."""

    def __init__(self, in_ch: int, hidden: int, depth: int, kernel: int):
        super().__init__()
        layers: list[nn.Module] = []
        ch = in_ch
        for _ in range(depth):
            layers += [nn.Conv2d(ch, hidden, kernel, padding=kernel // 2), nn.SiLU()]
            ch = hidden
        self.body = nn.Sequential(*layers)
        self.head = nn.Conv2d(ch, 2, kernel, padding=kernel // 2)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        return self.head(self.body(feats))


def _fft2c_t(x: torch.Tensor) -> torch.Tensor:
    dims = (-2, -1)
    return torch.fft.fftshift(torch.fft.fft2(torch.fft.ifftshift(x, dim=dims), norm="ortho"), dim=dims)


def _ifft2c_t(x: torch.Tensor) -> torch.Tensor:
    dims = (-2, -1)
    return torch.fft.fftshift(torch.fft.ifft2(torch.fft.ifftshift(x, dim=dims), norm="ortho"), dim=dims)


class TrainableScore:
    """Reference score model built around a preconditioned denoiser.

    ``D(x, sigma) = c_skip x + c_out F(c_in x, log sigma, coords)`` and the
    score is ``(D - x) / sigma^2``. With ``domain="image"`` the conv stack
    ``F`` runs on ``ifft2c`` of the operator-domain grid and the result is
    mapped back with ``fft2c``; the transform is unitary, so the score in
    the operator domain is exact and isotropic noise stays isotropic.
    Complex grids enter the network as real/imaginary channels.
    """

    def __init__(self, shape: tuple[int, int], operator_tag: dict[str, Any], schedule: NoiseSchedule,
                 seed: int = 0, data_scale: float = 1.0, sigma_data: float = 0.5, domain: str = "image",
                 hidden: int = 32, depth: int = 3, kernel: int = 3):
        if domain not in ("image", "kspace"):
            raise ValueError("domain must be 'image' or 'kspace'")
        self.shape = (int(shape[0]), int(shape[1]))
        self.operator_tag = dict(operator_tag)
        self.schedule = schedule
        self.seed = int(seed)
        self.data_scale = float(data_scale)
        self.architecture = {"name": "precond-conv-denoiser", "domain": domain, "hidden": int(hidden),
                             "depth": int(depth), "kernel": int(kernel), "sigma_data": float(sigma_data)}
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(self.seed)
            self.net = _Denoiser(5, hidden, depth, kernel)
        self.net.eval()
        cx, cy = centered_coords(self.shape)
        self._coords = torch.from_numpy(np.stack([cx, cy]).astype(np.float32))

    @property
    def sigma_data(self) -> float:
        return self.architecture["sigma_data"]

    def forward_tensor(self, x: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
        """``sigma * score`` for a ``(B, 2, H, W)`` real batch, same layout out."""
        b = x.shape[0]
        s = sigma.view(b, 1, 1, 1)
        sd = self.sigma_data
        image = self.architecture["domain"] == "image"
        y = x
        if image:
            yc = _ifft2c_t(torch.complex(x[:, 0], x[:, 1]))
            y = torch.stack([yc.real, yc.imag], dim=1)
        norm = torch.sqrt(s ** 2 + sd ** 2)
        c_skip = sd ** 2 / norm ** 2
        c_out = s * sd / norm
        feats = torch.cat([y / norm, torch.log(s).expand(b, 1, *self.shape) / 4,
                           self._coords.expand(b, 2, *self.shape)], dim=1)
        denoised = c_skip * y + c_out * self.net(feats)
        out = (denoised - y) / s
        if image:
            oc = _fft2c_t(torch.complex(out[:, 0], out[:, 1]))
            out = torch.stack([oc.real, oc.imag], dim=1)
        return out

    def __call__(self, x: np.ndarray, sigma: float) -> np.ndarray:
        x = np.asarray(x)
        single = x.ndim == 2
        xb = x[None] if single else x
        t = torch.from_numpy(np.stack([xb.real, xb.imag], axis=1).astype(np.float32))
        sig = torch.full((xb.shape[0],), float(sigma), dtype=torch.float32)
        with torch.no_grad():
            out = self.forward_tensor(t, sig).double().numpy()
        score = (out[:, 0] + 1j * out[:, 1]) / sigma
        if not np.all(np.isfinite(score)):
            raise FloatingPointError("score model produced non-finite output")
        return score[0] if single else score

    def parameters_vector(self) -> np.ndarray:
        return np.concatenate([p.detach().numpy().ravel() for p in self.net.state_dict().values()])

    def header(self) -> dict[str, Any]:
        state = self.net.state_dict()
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "architecture": self.architecture,
            "shape": list(self.shape),
            "schedule": self.schedule.to_dict(),
            "operator": self.operator_tag,
            "seed": self.seed,
            "data_scale": self.data_scale,
            "parameters": [[name, list(t.shape)] for name, t in state.items()],
        }


def build_training_set(kspace: np.ndarray, operator: FreqOperator, scale: float | None = None) -> tuple[np.ndarray, float]:
    """Apply ``operator`` to every grid and normalize to unit max magnitude.

    Returns the transformed batch and the scale that was divided out.
    """
    kspace = np.asarray(kspace)
    if kspace.ndim == 2:
        kspace = kspace[None]
    if len(kspace) == 0:
        raise ValueError("empty dataset")
    x = np.stack([operator.apply(k) for k in kspace])
    if scale is None:
        scale = float(np.max(np.abs(x)))
    if not scale > 0:
        raise ValueError("dataset is identically zero after the operator")
    return x / scale, scale


def dsm_loss(model: ScoreModel, batch: np.ndarray, sigma: float | np.ndarray, noise: np.ndarray) -> float:
    """Mean over the batch of ``||sigma * s(x + sigma z, sigma) + z||^2``.

    ``sigma`` may be a scalar or one value per batch item.
    """
    batch = np.asarray(batch)
    if batch.ndim == 2:
        batch, noise = batch[None], np.asarray(noise)[None]
    if len(batch) == 0:
        raise ValueError("empty batch")
    sig = np.broadcast_to(np.asarray(sigma, dtype=float), (len(batch),))
    total = 0.0
    for x, z, s in zip(batch, noise, sig):
        r = s * model(x + s * z, float(s)) + z
        total += float(np.sum(np.abs(r) ** 2))
    return total / len(batch)


@dataclass
class TrainingHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)

    @property
    def initial_val(self) -> float:
        return self.val_loss[0]

    @property
    def final_val(self) -> float:
        return self.val_loss[-1]


def _to_channels(x: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.stack([x.real, x.imag], axis=1).astype(np.float32))


def _loss_tensor(model: TrainableScore, x: torch.Tensor, z: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
    s = sigma.view(-1, 1, 1, 1)
    out = model.forward_tensor(x + s * z, sigma)
    # complex z has E|z|^2 = 1 split over two real channels
    return ((out + z) ** 2).sum(dim=(1, 2, 3)).mean()


def _draw_sigmas(gen: torch.Generator, n: int, schedule: NoiseSchedule) -> torch.Tensor:
    u = torch.rand(n, generator=gen, dtype=torch.float64)
    lo, hi = math.log(schedule.sigma_min), math.log(schedule.sigma_max)
    return torch.exp(lo + u * (hi - lo)).float()


def validation_loss(model: TrainableScore, x_val: np.ndarray, seed: int = 0) -> float:
    """DSM loss on held-out grids with noise and sigma fixed by ``seed``."""
    gen = torch.Generator().manual_seed(int(seed) + 7919)
    x = _to_channels(x_val)
    z = torch.randn(x.shape, generator=gen) / math.sqrt(2.0)
    sig = _draw_sigmas(gen, len(x), model.schedule)
    with torch.no_grad():
        return float(_loss_tensor(model, x, z, sig))


def train(model: TrainableScore, x_train: np.ndarray, x_val: np.ndarray | None = None, epochs: int = 50,
          adam_betas: tuple[float, float] = (0.9, 0.999), lr: float = 2e-3, batch_size: int = 16,
          log=None) -> TrainingHistory:
    """Fit ``model`` by denoising score matching with Adam.

    Training data must already be operator-transformed and normalized (see
    :func:`build_training_set`). Sigma is drawn log-uniformly between the
    schedule's end points for every item. Deterministic given ``model.seed``.
    """
    x_train = np.asarray(x_train)
    if len(x_train) == 0:
        raise ValueError("empty training set")
    if x_val is None:
        x_val = x_train
    history = TrainingHistory()
    history.val_loss.append(validation_loss(model, x_val, model.seed))
    if epochs <= 0:
        return history

    gen = torch.Generator().manual_seed(model.seed)
    data = _to_channels(x_train)
    opt = torch.optim.Adam(model.net.parameters(), lr=lr, betas=adam_betas)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=epochs)
    model.net.train()
    try:
        for epoch in range(1, epochs + 1):
            perm = torch.randperm(len(data), generator=gen)
            running, count = 0.0, 0
            for start in range(0, len(data), batch_size):
                idx = perm[start:start + batch_size]
                x = data[idx]
                z = torch.randn(x.shape, generator=gen) / math.sqrt(2.0)
                sig = _draw_sigmas(gen, len(x), model.schedule)
                loss = _loss_tensor(model, x, z, sig)
                if not torch.isfinite(loss):
                    raise TrainingDivergence(epoch, float(loss))
                opt.zero_grad()
                loss.backward()
                opt.step()
                running += float(loss.detach()) * len(x)
                count += len(x)
            sched.step()
            history.train_loss.append(running / count)
            model.net.eval()
            history.val_loss.append(validation_loss(model, x_val, model.seed))
            model.net.train()
            if not math.isfinite(history.val_loss[-1]):
                raise TrainingDivergence(epoch, history.val_loss[-1])
            if log is not None:
                log(f"epoch {epoch:3d}  train {history.train_loss[-1]:.4f}  val {history.val_loss[-1]:.4f}")
    finally:
        model.net.eval()
    return history


def save_checkpoint(path: str | Path, model: TrainableScore) -> None:
    """JSON header line followed by little-endian float32 parameters."""
    header = json.dumps(model.header(), sort_keys=True).encode()
    blob = b"".join(t.detach().numpy().astype("<f4").tobytes() for t in model.net.state_dict().values())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(header + b"\n" + blob)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> TrainableScore:
    raw = Path(path).read_bytes()
    head, sep, blob = raw.partition(b"\n")
    if not sep:
        raise CheckpointError("missing checkpoint header terminator")
    try:
        header = json.loads(head)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"malformed checkpoint header: {exc}") from None
    if header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError("not a kspacediff checkpoint")
    if "operator" not in header or not isinstance(header["operator"], dict):
        raise CheckpointError("checkpoint lacks the mandatory operator tag")
    arch = header["architecture"]
    sch = header["schedule"]
    model = TrainableScore(tuple(header["shape"]), header["operator"],
                           schedule_from_dict(sch),
                           seed=header["seed"], data_scale=header["data_scale"],
                           sigma_data=arch["sigma_data"], domain=arch["domain"],
                           hidden=arch["hidden"], depth=arch["depth"], kernel=arch["kernel"])
    state = model.net.state_dict()
    expected = sum(int(np.prod(shape)) for _, shape in header["parameters"]) * 4
    if len(blob) != expected:
        raise CheckpointError(f"parameter blob has {len(blob)} bytes, expected {expected}")
    offset = 0
    new_state = {}
    for name, shape in header["parameters"]:
        n = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=offset).reshape(shape)
        new_state[name] = torch.from_numpy(arr.astype(np.float32))
        offset += n * 4
    if set(new_state) != set(state):
        raise CheckpointError("parameter names do not match the architecture")
    model.net.load_state_dict(new_state)
    model.net.eval()
    return model
