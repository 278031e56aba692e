"""Command-line surface: degrade, fit-noise, restore, evaluate, benchmark.

Runs are driven by a single JSON config document; every flag mirrors a
config key as a --kebab-case override, and the fully resolved config
(defaults included) is echoed next to the outputs so runs are
reproducible.  Measurements travel as float64 sidecars next to their PNG
previews so quantization never touches solver inputs.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .denoisers import (ExternalDenoiserEndpoint, GmmPrior, external_denoiser,
                        gmm_denoiser, median_denoiser, tv_denoiser,
                        two_level_prior)
from .errors import (ArgumentError, DecodeError, DimensionError, NumericError,
                     TransportError)
from .guidance import GuidanceConfig, dps_sample
from .image import as_vector, from_vector, load_image, save_image
from .metrics import evaluate
from .noise import SaltPepperSpec, apply_salt_pepper, fit_noise
from .operators import (avgpool_sr_op, blur_op, identity_op, inpaint_op,
                        load_mask, make_mask, save_mask)
from .schedule import PerturbationSchedule, linear_beta_schedule
from .sidecar import read_sidecar, write_sidecar
from .solver import RestoreConfig, restore

TASKS = ("denoise", "deblur", "inpaint", "sr")

DEFAULT_CONFIG = {
    "task": "denoise",
    "operator": {
        "blur_size": 61,
        "blur_sigma": 3.0,
        "mask_fraction": 0.7,
        "mask_seed": 0,
        "sr_factor": 4,
    },
    "noise": {"sp_level": 0.5, "seed": 0},
    "solver": {
        "q": 0.5,
        "lambda": 1.0,
        "T": 100,
        "T_inter": 1,
        "step_rule": "normalized",
        "eps0": 1e-2,
        "decay": 0.8,
        "eps_min": 1e-8,
        "warm_start": False,
    },
    "schedule": {"N": 1000, "beta_start": 1e-4, "beta_end": 0.02},
    "denoiser": {
        "kind": "gmm",
        "params": {},
        "endpoint": {},
    },
    "guidance": {"variant": "none", "rho": 1.0, "jacobian_mode": "exact_diag"},
    "input": {"clean": ""},
    "output": {
        "measurement_png": "measurement.png",
        "measurement_raw": "measurement.f64",
        "mask": "measurement.mask",
        "restored": "restored.png",
        "trace": "trace.jsonl",
        "resolved_config": "resolved_config.json",
    },
    "master_seed": 0,
}

_SCALAR_FLAGS = [
    ("task", ("task",), str),
    ("operator-blur-size", ("operator", "blur_size"), int),
    ("operator-blur-sigma", ("operator", "blur_sigma"), float),
    ("operator-mask-fraction", ("operator", "mask_fraction"), float),
    ("operator-mask-seed", ("operator", "mask_seed"), int),
    ("operator-sr-factor", ("operator", "sr_factor"), int),
    ("noise-sp-level", ("noise", "sp_level"), float),
    ("noise-seed", ("noise", "seed"), int),
    ("solver-q", ("solver", "q"), float),
    ("solver-lambda", ("solver", "lambda"), float),
    ("solver-t", ("solver", "T"), int),
    ("solver-t-inter", ("solver", "T_inter"), int),
    ("solver-step-rule", ("solver", "step_rule"), str),
    ("solver-eps0", ("solver", "eps0"), float),
    ("solver-decay", ("solver", "decay"), float),
    ("solver-eps-min", ("solver", "eps_min"), float),
    ("schedule-n", ("schedule", "N"), int),
    ("schedule-beta-start", ("schedule", "beta_start"), float),
    ("schedule-beta-end", ("schedule", "beta_end"), float),
    ("denoiser-kind", ("denoiser", "kind"), str),
    ("guidance-variant", ("guidance", "variant"), str),
    ("guidance-rho", ("guidance", "rho"), float),
    ("guidance-jacobian-mode", ("guidance", "jacobian_mode"), str),
    ("input-clean", ("input", "clean"), str),
    ("output-measurement-png", ("output", "measurement_png"), str),
    ("output-measurement-raw", ("output", "measurement_raw"), str),
    ("output-mask", ("output", "mask"), str),
    ("output-restored", ("output", "restored"), str),
    ("output-trace", ("output", "trace"), str),
    ("output-resolved-config", ("output", "resolved_config"), str),
    ("master-seed", ("master_seed",), int),
]


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def resolve_config(config_path=None, overrides=None) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if config_path:
        try:
            with open(config_path, encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ArgumentError(f"cannot read config {config_path}: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ArgumentError(f"config {config_path} is not a JSON object")
        cfg = _deep_merge(cfg, file_cfg)
    for path, value in (overrides or {}).items():
        node = cfg
        for key in path[:-1]:
            node = node.setdefault(key, {})
        node[path[-1]] = value
    if cfg["task"] not in TASKS:
        raise ArgumentError(f"unknown task {cfg['task']!r}; choose from {TASKS}")
    return cfg


def _write_resolved(cfg: dict, extra=None) -> None:
    doc = copy.deepcopy(cfg)
    doc["tool_version"] = __version__
    if extra:
        doc.update(extra)
    path = cfg["output"]["resolved_config"]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def build_operator(cfg: dict, domain_shape, mask=None):
    task = cfg["task"]
    params = cfg["operator"]
    if task == "denoise":
        return identity_op(domain_shape), None
    if task == "deblur":
        return blur_op(domain_shape, params["blur_size"], params["blur_sigma"]), None
    if task == "inpaint":
        if mask is None:
            mask = make_mask(domain_shape, params["mask_fraction"],
                             params["mask_seed"])
        return inpaint_op(mask, domain_shape), mask
    return avgpool_sr_op(domain_shape, params["sr_factor"]), None


def build_schedule(cfg: dict):
    s = cfg["schedule"]
    return linear_beta_schedule(int(s["N"]), float(s["beta_start"]),
                                float(s["beta_end"]))


def build_perturbation(cfg: dict):
    s = cfg["solver"]
    return PerturbationSchedule(eps0=float(s["eps0"]), decay=float(s["decay"]),
                                eps_min=float(s["eps_min"]))


def build_denoiser(cfg: dict, domain_shape, schedule):
    spec = cfg["denoiser"]
    kind = spec.get("kind", "gmm")
    params = spec.get("params") or {}
    if kind == "gmm":
        if {"weights", "means", "variances"} <= set(params):
            prior = GmmPrior(np.asarray(params["weights"], dtype=float),
                             np.asarray(params["means"], dtype=float),
                             np.asarray(params["variances"], dtype=float))
        else:
            prior = two_level_prior()
        return gmm_denoiser(prior, schedule)
    if kind == "tv":
        return tv_denoiser(float(params.get("strength", 0.1)), domain_shape,
                           schedule, int(params.get("inner_iters", 30)))
    if kind == "median":
        return median_denoiser(int(params.get("window", 3)), domain_shape)
    if kind == "external":
        ep = spec.get("endpoint") or {}
        endpoint = ExternalDenoiserEndpoint(
            kind=ep.get("kind", "stdio"),
            command=tuple(ep.get("command", ())),
            host=ep.get("host", "127.0.0.1"),
            port=int(ep.get("port", 0)),
            timeout_ms=int(ep.get("timeout_ms", 10_000)),
        )
        return external_denoiser(endpoint, domain_shape, schedule)
    raise ArgumentError(f"unknown denoiser kind {kind!r}")


def cmd_degrade(cfg: dict) -> int:
    clean_path = cfg["input"]["clean"]
    if not clean_path:
        raise ArgumentError("degrade needs input.clean (or --input-clean)")
    clean = load_image(clean_path)
    op, mask = build_operator(cfg, clean.shape)
    y = op.apply(as_vector(clean))
    spec = SaltPepperSpec(level=float(cfg["noise"]["sp_level"]),
                          seed=int(cfg["noise"]["seed"]))
    y = apply_salt_pepper(y, spec)
    out = cfg["output"]
    write_sidecar(out["measurement_raw"], y, op.range_shape)
    if cfg["task"] == "inpaint":
        save_mask(mask, out["mask"])
        preview = from_vector(np.clip(op.adjoint(y), 0.0, 1.0), clean.shape)
    else:
        preview = from_vector(np.clip(y, 0.0, 1.0), op.range_shape)
    save_image(preview, out["measurement_png"])
    _write_resolved(cfg, extra={"domain_shape": list(clean.shape)})
    return 0


def cmd_fit_noise(clean_path, noisy_path, output_path) -> int:
    clean = load_image(clean_path)
    noisy = load_image(noisy_path)
    if clean.shape != noisy.shape:
        raise DimensionError(f"shape mismatch: {clean.shape} vs {noisy.shape}")
    report = fit_noise(noisy.data - clean.data)
    text = report.to_json()
    if output_path:
        Path(output_path).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def _domain_shape_for_restore(cfg: dict, sidecar_shape):
    task = cfg["task"]
    h, w, c = sidecar_shape
    if task in ("denoise", "deblur"):
        return sidecar_shape
    if task == "sr":
        f = int(cfg["operator"]["sr_factor"])
        return (h * f, w * f, c)
    preview = load_image(cfg["output"]["measurement_png"])
    return preview.shape


def cmd_restore(cfg: dict) -> int:
    out = cfg["output"]
    y, sidecar_shape = read_sidecar(out["measurement_raw"])
    domain_shape = _domain_shape_for_restore(cfg, sidecar_shape)
    mask = load_mask(out["mask"]) if cfg["task"] == "inpaint" else None
    op, _ = build_operator(cfg, domain_shape, mask=mask)
    schedule = build_schedule(cfg)
    denoiser = build_denoiser(cfg, domain_shape, schedule)
    s = cfg["solver"]
    variant = cfg["guidance"]["variant"]
    try:
        if variant and variant != "none":
            gcfg = GuidanceConfig(variant=variant, q=float(s["q"]),
                                  schedule=schedule,
                                  perturbation=build_perturbation(cfg),
                                  rho=float(cfg["guidance"]["rho"]),
                                  seed=int(cfg["master_seed"]),
                                  jacobian_mode=cfg["guidance"]["jacobian_mode"])
            img, trace_text = dps_sample(y, op, denoiser, gcfg,
                                         record_trace=True)
        else:
            rcfg = RestoreConfig(q=float(s["q"]), lam=float(s["lambda"]),
                                 T=int(s["T"]), T_inter=int(s["T_inter"]),
                                 schedule=schedule,
                                 perturbation=build_perturbation(cfg),
                                 step_rule=s["step_rule"],
                                 seed=int(cfg["master_seed"]),
                                 warm_start=bool(s["warm_start"]))
            img, trace = restore(y, op, rcfg, denoiser)
            trace_text = trace.to_jsonl()
    finally:
        close = getattr(denoiser, "close", None)
        if close:
            close()
    save_image(img, out["restored"])
    Path(out["trace"]).write_text(trace_text, encoding="utf-8")
    _write_resolved(cfg)
    return 0


def cmd_evaluate(ref_path, test_path, output_path=None) -> int:
    ref = load_image(ref_path)
    test = load_image(test_path)
    report = evaluate(ref, test)
    text = json.dumps(report.to_dict()) + "\n"
    if output_path:
        Path(output_path).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def cmd_benchmark(cfg: dict, directory, output_path) -> int:
    images = sorted(Path(directory).glob("*.png"))
    if not images:
        raise ArgumentError(f"no PNG images found in {directory}")
    master = int(cfg["master_seed"])
    schedule = build_schedule(cfg)
    rows = []
    for index, path in enumerate(images):
        seed = master + index
        clean = load_image(path)
        op, mask = build_operator(cfg, clean.shape)
        y = apply_salt_pepper(op.apply(as_vector(clean)),
                              SaltPepperSpec(level=float(cfg["noise"]["sp_level"]),
                                             seed=seed))
        denoiser = build_denoiser(cfg, clean.shape, schedule)
        s = cfg["solver"]
        rcfg = RestoreConfig(q=float(s["q"]), lam=float(s["lambda"]),
                             T=int(s["T"]), T_inter=int(s["T_inter"]),
                             schedule=schedule,
                             perturbation=build_perturbation(cfg),
                             step_rule=s["step_rule"], seed=seed,
                             warm_start=bool(s["warm_start"]))
        start = time.perf_counter()
        restored, _ = restore(y, op, rcfg, denoiser)
        seconds = time.perf_counter() - start
        close = getattr(denoiser, "close", None)
        if close:
            close()
        report = evaluate(clean, restored)
        row = {"name": path.name, "seed": seed, "seconds": seconds}
        row.update(report.to_dict())
        rows.append(row)
    finite_psnr = [r["psnr_db"] for r in rows if r["psnr_db"] != "inf"]
    psnr_vals = np.asarray(finite_psnr if finite_psnr else [np.inf])
    ssim_vals = np.asarray([r["ssim"] for r in rows])
    doc = {
        "tool_version": __version__,
        "resolved_config": cfg,
        "images": rows,
        "aggregate": {
            "count": len(rows),
            "psnr_mean": float(np.mean(psnr_vals)),
            "psnr_std": float(np.std(psnr_vals)),
            "ssim_mean": float(np.mean(ssim_vals)),
            "ssim_std": float(np.std(ssim_vals)),
        },
    }
    text = json.dumps(doc, indent=2) + "\n"
    if output_path:
        Path(output_path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="JSON config file")
    for flag, _, caster in _SCALAR_FLAGS:
        if caster is bool:
            parser.add_argument(f"--{flag}", default=None,
                                action=argparse.BooleanOptionalAction)
        else:
            parser.add_argument(f"--{flag}", default=None, type=caster)
    parser.add_argument("--solver-warm-start", default=None,
                        action=argparse.BooleanOptionalAction)


def _collect_overrides(args: argparse.Namespace) -> dict:
    overrides = {}
    for flag, path, _ in _SCALAR_FLAGS:
        value = getattr(args, flag.replace("-", "_"))
        if value is not None:
            overrides[path] = value
    if getattr(args, "solver_warm_start", None) is not None:
        overrides[("solver", "warm_start")] = args.solver_warm_start
    return overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lqpnp",
        description="lq-fidelity plug-and-play image restoration toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("degrade", help="simulate a noisy measurement")
    _add_config_flags(p)

    p = sub.add_parser("fit-noise", help="fit noise models to residuals")
    p.add_argument("--clean", required=True)
    p.add_argument("--noisy", required=True)
    p.add_argument("--output", default=None)

    p = sub.add_parser("restore", help="run the restoration solver")
    _add_config_flags(p)

    p = sub.add_parser("evaluate", help="PSNR/SSIM between two images")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--output", default=None)

    p = sub.add_parser("benchmark", help="degrade+restore+evaluate a directory")
    p.add_argument("--dir", required=True)
    p.add_argument("--output", default=None)
    _add_config_flags(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.verb == "degrade":
            return cmd_degrade(resolve_config(args.config,
                                              _collect_overrides(args)))
        if args.verb == "fit-noise":
            return cmd_fit_noise(args.clean, args.noisy, args.output)
        if args.verb == "restore":
            return cmd_restore(resolve_config(args.config,
                                              _collect_overrides(args)))
        if args.verb == "evaluate":
            return cmd_evaluate(args.ref, args.test, args.output)
        if args.verb == "benchmark":
            return cmd_benchmark(resolve_config(args.config,
                                                _collect_overrides(args)),
                                 args.dir, args.output)
        raise ArgumentError(f"unknown verb {args.verb}")
    except (ArgumentError, DecodeError, DimensionError, OSError,
            json.JSONDecodeError) as exc:
        print(f"lqpnp: config error: {exc}", file=sys.stderr)
        return 2
    except TransportError as exc:
        print(f"lqpnp: transport error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"lqpnp: numeric error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
