"""Command-line entry point.

Every command writes its outputs atomically plus a ``<out>.manifest.json``
recording the command, the fully resolved configuration, the seed, SHA-256
hashes of inputs and outputs and the tool version. ``kspacediff replay
MANIFEST`` (or ``--config MANIFEST`` on the same command) re-runs it.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .arrayfile import (ArrayFile, ArrayFileError, atomic_write_bytes, read_array, write_array, write_csv,
                        write_metrics_csv, write_pgm)
from .freqops import CenterMask, IdentityOp, WeightMatrix
from .kspace import CoilStack, Domain, sos_combine
from .masks import InfeasibleMask, Pattern, SamplingMask, make_mask
from .metrics import mse, psnr, ssim
from .phantom import make_phantom
from .recon import HankelError, Measurement, Mode, PairingError, ReconConfig, reconstruct
from .sampler import (NonFiniteState, OperatorMismatch, SamplerConfig, theorem1_study,
                      verify_orthogonal_equivalence)
from .score import (CheckpointError, TrainableScore, TrainingDivergence, build_training_set, load_checkpoint,
                    make_schedule, save_checkpoint, train)
from .studies import (REFERENCE_SIGMA_MIN, convergence_case, convergence_rows, convergence_study,
                      correlation_study, is_nondecreasing, iterations_to_fraction)

MANIFEST_SCHEMA = 1
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
APPENDIX_TOLERANCE = 1e-10


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(message)


# helpers ----------------------------------------------------------------------------------------

def _shape(text: str) -> tuple[int, int]:
    parts = [int(p) for p in str(text).replace("x", ",").split(",") if p.strip()]
    if len(parts) == 1:
        parts *= 2
    if len(parts) != 2 or min(parts) < 1:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}")
    return parts[0], parts[1]


def _float_list(text: str) -> list[float]:
    return [float(p) for p in str(text).split(",") if p.strip()]


def _int_list(text: str) -> list[int]:
    return [int(p) for p in str(text).split(",") if p.strip()]


def _float(text: str) -> float:
    return math.inf if str(text).lower() in ("inf", "infinity") else float(text)


def sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def manifest_path(out: str | Path) -> Path:
    out = Path(out)
    return out.with_name(out.name + ".manifest.json")


def _jsonable(v: Any) -> Any:
    if isinstance(v, tuple):
        return list(v)
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return v


def write_manifest(args: argparse.Namespace, inputs: list[str], outputs: list[str]) -> None:
    config = {k: _jsonable(v) for k, v in vars(args).items() if k not in ("func", "config", "command")}
    record = {
        "schema_version": MANIFEST_SCHEMA,
        "tool": "kspacediff",
        "version": __version__,
        "command": args.command,
        "config": config,
        "seed": config.get("seed"),
        "inputs": {str(p): sha256(p) for p in inputs if p},
        "outputs": {str(p): sha256(p) for p in outputs},
    }
    atomic_write_bytes(manifest_path(args.out), (json.dumps(record, indent=2, sort_keys=True) + "\n").encode())


def _load_array(path: str) -> ArrayFile:
    try:
        return read_array(path)
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None


def _load_model(path: str) -> TrainableScore:
    try:
        return load_checkpoint(path)
    except FileNotFoundError:
        raise DataError(f"no such checkpoint: {path}") from None


def mask_to_array(mask: SamplingMask) -> ArrayFile:
    return ArrayFile(mask.omega.astype(np.complex64), domain="kspace", meta=mask.meta())


def mask_from_array(af: ArrayFile) -> SamplingMask:
    if af.meta.get("kind") != "mask":
        raise DataError("file does not hold a sampling mask")
    omega = af.data[0, 0].real > 0.5
    return SamplingMask(omega, Pattern(af.meta["pattern"]), float(af.meta["accel"]), int(af.meta["calib"]),
                        int(af.meta["seed"]))


def _require(args: argparse.Namespace, *names: str) -> None:
    missing = [n for n in names if getattr(args, n, None) in (None, "")]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


# commands ---------------------------------------------------------------------------------------

def cmd_phantom(args) -> int:
    _require(args, "out")
    if args.count < 1 or args.coils < 1:
        raise UsageError("--count and --coils must be positive")
    items = []
    for i in range(args.count):
        ph = make_phantom(args.kind, args.shape, seed=args.seed + i, coils=args.coils, phase=args.phase)
        items.append((ph.to_kspace() if args.domain == "kspace" else ph).data)
    af = ArrayFile(np.stack(items), domain=args.domain, meta={"kind": "phantom", "phantom": args.kind,
                                                               "seed": args.seed})
    write_array(args.out, af)
    write_manifest(args, [], [args.out])
    print(f"wrote {af.count} phantoms of dims {af.dims} to {args.out}")
    return EXIT_OK


def cmd_mask(args) -> int:
    _require(args, "out")
    mask = make_mask(args.pattern, args.shape, args.accel, args.calib, args.seed)
    write_array(args.out, mask_to_array(mask))
    write_manifest(args, [], [args.out])
    print(f"{mask.pattern.value} mask R={mask.accel:g}: sampled fraction {mask.fraction:.4f}")
    return EXIT_OK


def cmd_undersample(args) -> int:
    _require(args, "data", "mask", "out")
    data, mask = _load_array(args.data), mask_from_array(_load_array(args.mask))
    if tuple(data.dims[1:]) != mask.shape:
        raise DataError(f"mask shape {mask.shape} does not match data {data.dims[1:]}")
    items = []
    for item in data.data:
        stack = CoilStack(item.astype(np.complex128), Domain(data.domain))
        k = stack.to_kspace().data if stack.domain is Domain.IMAGE else stack.data
        items.append(np.where(mask.omega, k, 0))
    af = ArrayFile(np.stack(items), domain="kspace", meta={"kind": "measurement", **{
        "mask_" + k: v for k, v in mask.meta().items() if k != "kind"}})
    write_array(args.out, af)
    write_manifest(args, [args.data, args.mask], [args.out])
    print(f"wrote {af.count} measurements to {args.out}")
    return EXIT_OK


def _operator(args, shape):
    if args.operator == "weight":
        return WeightMatrix.build(shape, args.r_cut, args.p, args.floor)
    if args.operator == "mask":
        if args.window > min(shape):
            raise DataError(f"window {args.window} larger than grid {shape}")
        return CenterMask.build(shape, args.window)
    return IdentityOp(tuple(shape))


def cmd_train(args) -> int:
    _require(args, "data", "out")
    data = _load_array(args.data)
    shape = tuple(data.dims[1:])
    grids = []
    for item in data.data:
        stack = CoilStack(item.astype(np.complex128), Domain(data.domain))
        grids.extend(stack.to_kspace().data if stack.domain is Domain.IMAGE else stack.data)
    grids = np.array(grids)
    if len(grids) < 2:
        raise DataError("training needs at least two grids (one is held out for validation)")
    n_val = max(1, int(round(args.val_fraction * len(grids))))
    op = _operator(args, shape)
    x, scale = build_training_set(grids[:-n_val], op)
    xv, _ = build_training_set(grids[-n_val:], op, scale)
    sigma_data = float(np.sqrt(np.mean(np.abs(x) ** 2)))
    model = TrainableScore(shape, op.tag(), make_schedule(args.sigma_max, args.sigma_min, args.levels),
                           seed=args.seed, data_scale=scale, sigma_data=sigma_data, hidden=args.hidden,
                           depth=args.depth, kernel=args.kernel)
    hist = train(model, x, xv, epochs=args.epochs, adam_betas=(args.beta1, args.beta2), lr=args.lr,
                 batch_size=args.batch_size, log=_log if args.verbose else None)
    save_checkpoint(args.out, model)
    write_manifest(args, [args.data], [args.out])
    print(f"validation loss {hist.initial_val:.4f} -> {hist.final_val:.4f} "
          f"(ratio {hist.final_val / hist.initial_val:.3f})")
    return EXIT_OK


def _recon_configs(args) -> tuple[ReconConfig, SamplerConfig]:
    try:
        rc = ReconConfig(mode=Mode(args.mode), mu1=args.mu1, mu2=args.mu2, lambda1=args.l1, lambda2=args.l2,
                         dc_lambda=args.dc_lambda,
                         hankel_window=None if args.hankel_window is None else tuple(args.hankel_window),
                         hankel_rank=args.hankel_rank, hankel=not args.no_hankel, outer_iters=args.iters,
                         serial_feed=args.serial_feed)
        sc = SamplerConfig(make_schedule(args.sigma_max, args.sigma_min, args.levels), step_ratio=args.step_ratio,
                           corrector_steps=args.corrector_steps, rng_seed=args.seed,
                           denoise_final=args.denoise_final)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return rc, sc


def cmd_reconstruct(args) -> int:
    _require(args, "meas", "mask", "model_w", "out")
    if args.mode != "single":
        _require(args, "model_m")
    rc, sc = _recon_configs(args)
    meas_af, mask = _load_array(args.meas), mask_from_array(_load_array(args.mask))
    if meas_af.domain != "kspace":
        raise DataError("measurement file must hold k-space data")
    score_w = _load_model(args.model_w)
    score_m = _load_model(args.model_m) if args.mode != "single" else None
    ref_af = _load_array(args.ref) if args.ref else None
    if ref_af is not None and ref_af.count != meas_af.count:
        raise DataError("reference and measurement item counts differ")
    images, rows, pgms = [], [], []
    out = Path(args.out)
    for i, item in enumerate(meas_af.data):
        try:
            meas = Measurement(CoilStack(item.astype(np.complex128), Domain.KSPACE), mask)
        except ValueError as exc:
            raise DataError(str(exc)) from None
        res = reconstruct(meas, score_w, score_m, rc, sc)
        images.append(res.images.data)
        pgm = out.with_suffix(".pgm") if meas_af.count == 1 else out.with_name(f"{out.stem}_{i}.pgm")
        write_pgm(pgm, res.sos)
        pgms.append(str(pgm))
        if ref_af is not None:
            stack = CoilStack(ref_af.data[i].astype(np.complex128), Domain(ref_af.domain))
            ref = sos_combine(stack if stack.domain is Domain.IMAGE else stack.to_image())
            zf = sos_combine(meas.f.to_image())
            for name, img in (("zero-filled", zf), (args.mode, res.sos)):
                rows.append({"image_id": i, "pattern": mask.pattern.value, "R": mask.accel, "method": name,
                             "psnr_db": psnr(ref, img), "ssim": ssim(ref, img), "mse": mse(ref, img)})
                print(f"item {i} {name:12s} psnr {rows[-1]['psnr_db']:.2f} dB  ssim {rows[-1]['ssim']:.4f}")
    write_array(out, ArrayFile(np.stack(images), domain="image", meta={"kind": "reconstruction",
                                                                       "mode": args.mode}))
    outputs = [str(out), *pgms]
    if rows:
        csv_path = out.with_suffix(".csv")
        write_metrics_csv(csv_path, rows)
        outputs.append(str(csv_path))
    write_manifest(args, [args.meas, args.mask, args.model_w, args.model_m, args.ref], outputs)
    return EXIT_OK


def cmd_verify(args) -> int:
    _require(args, "out")
    if args.study == "appendixA":
        dev = verify_orthogonal_equivalence(steps=args.steps, seed=args.seed, shape=args.shape)
        atomic_write_bytes(args.out, (json.dumps({"max_deviation": dev, "steps": args.steps}) + "\n").encode())
        write_manifest(args, [], [args.out])
        ok = dev < APPENDIX_TOLERANCE
        print(f"max deviation {dev:.3e} ({'ok' if ok else 'FAILED'}, tolerance {APPENDIX_TOLERANCE:g})")
        return EXIT_OK if ok else EXIT_NUMERIC
    if args.study == "theorem1":
        rows = theorem1_study(alphas=tuple(args.alphas), draws=args.draws, shape=args.shape, eps=args.eps,
                              sigma=args.sigma, seed=args.seed)
        cols = ["alpha", "lhs", "rhs_sum", "c1", "noise_term", "corr_term", "corr_se", "relative_gap"]
        write_csv(args.out, cols, rows)
        write_manifest(args, [], [args.out])
        for r in rows:
            print(f"alpha {r['alpha']:.2f}  lhs {r['lhs']:.6f}  rhs {r['rhs_sum']:.6f}  "
                  f"corr {r['corr_term']:.6f} +- {r['corr_se']:.6f}")
        return EXIT_OK
    _require(args, "model_w", "model_m", "model_full")
    models = {"weight": _load_model(args.model_w), "mask": _load_model(args.model_m),
              "identity": _load_model(args.model_full)}
    ref, meas = convergence_case(args.seed, models["weight"].shape, args.pattern, args.accel, args.calib,
                                 args.phantom_seed)
    sc = SamplerConfig(make_schedule(args.sigma_max, args.sigma_min, args.levels), step_ratio=args.step_ratio,
                       corrector_steps=args.corrector_steps, rng_seed=args.seed)
    curves = convergence_study(models, ref, meas, sc)
    write_csv(args.out, ["iteration", "chain", "psnr", "ssim"], convergence_rows(curves))
    write_manifest(args, [args.model_w, args.model_m, args.model_full], [args.out])
    for chain, c in curves.items():
        print(f"{chain:9s} final psnr {c.psnr[-1]:.2f}  95% at iteration {iterations_to_fraction(c.psnr)}  "
              f"nondecreasing {is_nondecreasing(c.psnr)}")
    return EXIT_OK


def cmd_correlate(args) -> int:
    _require(args, "data", "out")
    data = _load_array(args.data)
    images = []
    for item in data.data:
        stack = CoilStack(item.astype(np.complex128), Domain(data.domain))
        images.append(sos_combine(stack if stack.domain is Domain.IMAGE else stack.to_image()))
    res = correlation_study(np.array(images), windows=args.window_list)
    rows = []
    for n, s in zip(res["windows"], res["scaled"]):
        vals = res["per_image"][n]
        rows.append({"window": n, "scaled_window": s, "rho_mean": res["mean"][n], "rho_min": min(vals),
                     "rho_max": max(vals), "is_max": int(n == res["argmax"])})
    write_csv(args.out, list(rows[0]), rows)
    write_manifest(args, [args.data], [args.out])
    order = sorted(res["mean"], key=res["mean"].get, reverse=True)
    print("correlation ordering (high to low): " + " > ".join(f"{n} ({res['mean'][n]:.4f})" for n in order))
    print(f"maximizer {res['argmax']}; middle window {res['middle']}")
    return EXIT_OK


# parser -----------------------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file (or run manifest) supplying any option; flags override it")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")


def _add_sampler(p: argparse.ArgumentParser, levels: int, corrector: int) -> None:
    p.add_argument("--levels", type=int, default=levels)
    p.add_argument("--sigma-max", type=float, default=1.0)
    p.add_argument("--sigma-min", type=float, default=REFERENCE_SIGMA_MIN)
    p.add_argument("--step-ratio", type=float, default=0.075)
    p.add_argument("--corrector-steps", type=int, default=corrector)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kspacediff", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"kspacediff {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("phantom", help="synthetic phantom dataset")
    _add_common(p)
    p.add_argument("--shape", type=_shape, default=(64, 64))
    p.add_argument("--coils", type=int, default=1)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--kind", choices=["ellipses", "shepp-logan"], default="ellipses")
    p.add_argument("--phase", action="store_true")
    p.add_argument("--domain", choices=["image", "kspace"], default="image")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("mask", help="sampling mask")
    _add_common(p)
    p.add_argument("--pattern", choices=[x.value for x in Pattern], default="random2d")
    p.add_argument("--shape", type=_shape, default=(64, 64))
    p.add_argument("--accel", type=float, default=4.0)
    p.add_argument("--calib", type=int, default=8)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("undersample", help="apply a mask to a dataset")
    _add_common(p)
    p.add_argument("--data")
    p.add_argument("--mask")
    p.set_defaults(func=cmd_undersample)

    p = sub.add_parser("train", help="train a score model under one operator")
    _add_common(p)
    p.add_argument("--data")
    p.add_argument("--operator", choices=["weight", "mask", "identity"], default="weight")
    p.add_argument("--r-cut", type=float, default=1.0)
    p.add_argument("--p", type=float, default=0.5)
    p.add_argument("--floor", type=float, default=1e-6)
    p.add_argument("--window", type=int, default=13)
    p.add_argument("--sigma-max", type=float, default=1.0)
    p.add_argument("--sigma-min", type=float, default=0.01)
    p.add_argument("--levels", type=int, default=10)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--depth", type=int, default=5)
    p.add_argument("--kernel", type=int, default=3)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--beta1", type=float, default=0.9)
    p.add_argument("--beta2", type=float, default=0.999)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", help="reconstruct under-sampled measurements")
    _add_common(p)
    p.add_argument("--meas")
    p.add_argument("--mask")
    p.add_argument("--model-w")
    p.add_argument("--model-m")
    p.add_argument("--ref", help="ground-truth dataset; enables the metrics CSV")
    p.add_argument("--mode", choices=[m.value for m in Mode], default="serial")
    p.add_argument("--mu1", type=float, default=1.0)
    p.add_argument("--mu2", type=float, default=1.0)
    p.add_argument("--l1", type=float, default=0.5)
    p.add_argument("--l2", type=float, default=0.5)
    p.add_argument("--dc-lambda", type=_float, default=math.inf)
    p.add_argument("--hankel-window", type=_shape, default=None)
    p.add_argument("--hankel-rank", type=int, default=None)
    p.add_argument("--no-hankel", action="store_true")
    p.add_argument("--iters", type=int, default=1, help="outer passes over the noise schedule")
    p.add_argument("--serial-feed", choices=["sampler", "operator"], default="sampler")
    p.add_argument("--denoise-final", action=argparse.BooleanOptionalAction, default=True)
    _add_sampler(p, 50, 4)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("verify", help="verification studies")
    _add_common(p)
    p.add_argument("study", nargs="?", choices=["theorem1", "appendixA", "convergence"])
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--shape", type=_shape, default=None)
    p.add_argument("--alphas", type=_float_list, default=[0.0, 0.3, 0.6])
    p.add_argument("--draws", type=int, default=100_000)
    p.add_argument("--eps", type=float, default=0.05)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--model-w")
    p.add_argument("--model-m")
    p.add_argument("--model-full")
    p.add_argument("--pattern", choices=[x.value for x in Pattern], default="random2d")
    p.add_argument("--accel", type=float, default=8.0)
    p.add_argument("--calib", type=int, default=8)
    p.add_argument("--phantom-seed", type=int, default=None, help="defaults to a seed derived from --seed")
    _add_sampler(p, 50, 4)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("correlate", help="weight/mask feature-map correlation")
    _add_common(p)
    p.add_argument("--data")
    p.add_argument("--window-list", type=_int_list, default=[30, 50, 70])
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", help="write to a different output path")
    return parser


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    return action.choices[command]


def _apply_config(parser: argparse.ArgumentParser, command: str, config: dict[str, Any]) -> None:
    """Install ``config`` as the command's defaults so explicit flags still override it.

    Values are handed to argparse as strings, which makes it run them
    through the same ``type`` converters as command-line input.
    """
    sub = _subparser(parser, command)
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in config.items():
        dest = key.replace("-", "_")
        if dest in ("config", "command", "func", "help"):
            continue
        action = actions.get(dest)
        if action is None:
            raise UsageError(f"unknown config key {key!r} for {command}")
        if value is not None and action.type is not None and not isinstance(value, str):
            value = ",".join(str(v) for v in value) if isinstance(value, (list, tuple)) else str(value)
        defaults[dest] = value
    sub.set_defaults(**defaults)


def _read_config(path: str) -> dict[str, Any]:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"no such config file: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"malformed config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError("config must be a JSON object")
    return data


def parse(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("a command is required (see --help)")
    if args.command == "replay":
        record = _read_config(args.manifest)
        if "command" not in record or "config" not in record:
            raise UsageError("not a run manifest")
        command, out = record["command"], args.out
        parser = build_parser()
        _apply_config(parser, command, record["config"])
        args = parser.parse_args([command] + (["--out", out] if out else []))
    elif getattr(args, "config", None):
        record = _read_config(args.config)
        # a run manifest carries its options under "config"
        config = record["config"] if "schema_version" in record and "config" in record else record
        parser = build_parser()
        _apply_config(parser, args.command, config)
        args = parser.parse_args(argv)
    if args.command == "verify":
        if args.study is None:
            raise UsageError("verify needs a study: theorem1, appendixA or convergence")
        if args.shape is None:
            args.shape = (8, 8) if args.study == "appendixA" else (4, 4)
    return args


ERROR_CODES: list[tuple[tuple[type, ...], int]] = [
    ((UsageError,), EXIT_USAGE),
    ((FloatingPointError, NonFiniteState, TrainingDivergence, HankelError, np.linalg.LinAlgError), EXIT_NUMERIC),
    ((DataError, ArrayFileError, CheckpointError, PairingError, OperatorMismatch, InfeasibleMask, OSError,
      ValueError, KeyError), EXIT_DATA),
]


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse(argv)
        return args.func(args)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except Exception as exc:
        for types, code in ERROR_CODES:
            if isinstance(exc, types):
                print(f"kspacediff: error: {exc}", file=sys.stderr)
                return code
        raise


if __name__ == "__main__":
    sys.exit(main())
