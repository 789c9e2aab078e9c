"""Command-line driver.

Subcommands::

    ksgdiffuse schedule dump   --kind cosine --T 4000 [--respace 100]
    ksgdiffuse mask make       --height H --width W --acceleration 4 --out m.msk
    ksgdiffuse phantom         --height H --width W --out-dir DIR
    ksgdiffuse reconstruct     --input x.cim --out-dir DIR [--config run.json] [overrides]
    ksgdiffuse ablate          --input x.cim --out sweep.csv [--config run.json] [overrides]
    ksgdiffuse metrics         --reference a.cim --test b.cim
    ksgdiffuse oracle          --input x.cim --mask m.msk --out post.cim

A run is described by a JSON file (see :class:`RunConfig`); command-line
flags override it. Relative paths inside the file are resolved against the
file's directory. Exit codes: 0 ok, 2 invalid arguments, 3 I/O or format,
4 plugin, 5 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import shlex
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ablation, io, kspace, metrics, oracle, phantom
from .denoiser import GaussianPriorDenoiser, ZeroDenoiser
from .errors import FormatError, InvalidArgumentError, KsgError
from .plugin import DenoiserPool, RemoteDenoiser
from .sampler import SamplerConfig, c2f_reconstruct
from .schedule import from_name, respace

REPORT_SCHEMA = "ksgdiffuse-report/1"
CONSISTENCY_TOL = 1e-4


@dataclass
class ScheduleOptions:
    kind: str = "cosine"
    T: int = 4000
    beta_start: float = 1e-4
    beta_end: float = 0.02


@dataclass
class SamplerOptions:
    k: int = 40
    N: int = 10
    T_refine: int = 20
    ksg_noise: bool = True
    refine: bool = True
    keep_samples: bool = False
    seed: int = 0
    workers: int = 1


@dataclass
class MaskOptions:
    path: str | None = None
    kind: str = kspace.CARTESIAN
    acceleration: float = 4.0
    center_fraction: float | None = None
    seed: int = 0


@dataclass
class DenoiserOptions:
    kind: str = "gaussian"  # gaussian | zero | plugin
    mu: str | None = None
    s2: float = 1.0
    command: str | list | None = None
    address: str | None = None
    timeout: float = 30.0


@dataclass
class AblationOptions:
    seeds: int = 20
    seed_base: int = 0
    cells: list | None = None


@dataclass
class RunConfig:
    schedule: ScheduleOptions = field(default_factory=ScheduleOptions)
    sampler: SamplerOptions = field(default_factory=SamplerOptions)
    mask: MaskOptions = field(default_factory=MaskOptions)
    denoiser: DenoiserOptions = field(default_factory=DenoiserOptions)
    ablation: AblationOptions = field(default_factory=AblationOptions)
    input: str | None = None
    truth: str | None = None

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(T=self.schedule.T, **dataclasses.asdict(self.sampler))


_SECTIONS = {
    "schedule": ScheduleOptions,
    "sampler": SamplerOptions,
    "mask": MaskOptions,
    "denoiser": DenoiserOptions,
    "ablation": AblationOptions,
}
_PATH_KEYS = {("mask", "path"), ("denoiser", "mu"), (None, "input"), (None, "truth")}


def load_config(path) -> RunConfig:
    """Read a JSON run manifest; unknown keys are rejected."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise InvalidArgumentError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise InvalidArgumentError(f"config {path} must hold a JSON object")
    cfg = RunConfig()
    base = path.parent
    for key, value in raw.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise InvalidArgumentError(f"config section {key!r} must be an object")
            section = getattr(cfg, key)
            names = {f.name for f in dataclasses.fields(section)}
            for k, v in value.items():
                if k not in names:
                    raise InvalidArgumentError(f"unknown config key {key}.{k}")
                if (key, k) in _PATH_KEYS and v is not None:
                    v = str(base / v)
                setattr(section, k, v)
        elif key in ("input", "truth"):
            setattr(cfg, key, None if value is None else str(base / value))
        else:
            raise InvalidArgumentError(f"unknown config key {key!r}")
    return cfg


# Flag dest -> (section, field). Flags left at None keep the config value.
_OVERRIDES = {
    "schedule_kind": ("schedule", "kind"),
    "T": ("schedule", "T"),
    "k": ("sampler", "k"),
    "N": ("sampler", "N"),
    "T_refine": ("sampler", "T_refine"),
    "ksg_noise": ("sampler", "ksg_noise"),
    "refine": ("sampler", "refine"),
    "keep_samples": ("sampler", "keep_samples"),
    "seed": ("sampler", "seed"),
    "workers": ("sampler", "workers"),
    "mask": ("mask", "path"),
    "mask_kind": ("mask", "kind"),
    "acceleration": ("mask", "acceleration"),
    "center_fraction": ("mask", "center_fraction"),
    "mask_seed": ("mask", "seed"),
    "denoiser": ("denoiser", "kind"),
    "mu": ("denoiser", "mu"),
    "s2": ("denoiser", "s2"),
    "plugin_command": ("denoiser", "command"),
    "plugin_address": ("denoiser", "address"),
    "plugin_timeout": ("denoiser", "timeout"),
    "seeds": ("ablation", "seeds"),
    "seed_base": ("ablation", "seed_base"),
    "cell": ("ablation", "cells"),
    "input": (None, "input"),
    "truth": (None, "truth"),
}


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    for dest, (section, name) in _OVERRIDES.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        target = cfg if section is None else getattr(cfg, section)
        setattr(target, name, value)
    return cfg


def _config_echo(cfg: RunConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d.pop("ablation")
    d["sampler"] = dataclasses.asdict(cfg.sampler_config())
    return d


# ---------------------------------------------------------------- run setup


@dataclass
class Problem:
    x_obs: np.ndarray
    mask: kspace.Mask
    truth: np.ndarray | None


def _read_image(path, name):
    data, domain = io.read_cim(path)
    if domain != io.DOMAIN_IMAGE:
        raise FormatError(f"{name} {path} must be an image-domain CIM1 file")
    return data.astype(np.complex128)


def load_problem(cfg: RunConfig) -> Problem:
    if not cfg.input:
        raise InvalidArgumentError("an input CIM1 file is required (--input)")
    data, domain = io.read_cim(cfg.input)
    data = data.astype(np.complex128)
    h, w = data.shape
    if cfg.mask.path:
        mask = io.read_msk(cfg.mask.path)
        if mask.shape != (h, w):
            raise InvalidArgumentError(f"mask shape {mask.shape} does not match input shape {(h, w)}")
    else:
        m = cfg.mask
        mask = kspace.make_mask(m.kind, h, w, m.acceleration, m.center_fraction, m.seed)
    truth = _read_image(cfg.truth, "truth") if cfg.truth else None
    if domain == io.DOMAIN_IMAGE:
        if truth is None:
            truth = data
        x_obs = phantom.observe(data, mask)
    else:
        x_obs = kspace.apply_mask(data, mask)
    if truth is not None and truth.shape != (h, w):
        raise InvalidArgumentError(f"truth shape {truth.shape} does not match input shape {(h, w)}")
    return Problem(x_obs=x_obs, mask=mask, truth=truth)


def _plugin_factory(opts: DenoiserOptions, shape, T):
    if opts.command and opts.address:
        raise InvalidArgumentError("give either a plugin command or a plugin address, not both")
    if opts.command:
        command = shlex.split(opts.command) if isinstance(opts.command, str) else list(opts.command)
        return lambda: RemoteDenoiser.spawn(command, shape, T, opts.timeout)
    if opts.address:
        host, _, port = opts.address.rpartition(":")
        if not host or not port.isdigit():
            raise InvalidArgumentError(f"plugin address must be host:port, got {opts.address!r}")
        return lambda: RemoteDenoiser.connect(host, int(port), shape, T, opts.timeout)
    raise InvalidArgumentError("plugin denoiser needs a command or an address")


def open_denoiser(cfg: RunConfig, shape):
    """Returns ``(denoiser, closer)``."""
    opts = cfg.denoiser
    if opts.kind == "zero":
        return ZeroDenoiser(), lambda: None
    if opts.kind == "gaussian":
        mu = _read_image(opts.mu, "prior mean") if opts.mu else np.zeros(shape, dtype=np.complex128)
        if mu.shape != tuple(shape):
            raise InvalidArgumentError(f"prior mean shape {mu.shape} does not match input shape {tuple(shape)}")
        return GaussianPriorDenoiser(mu, float(opts.s2)), lambda: None
    if opts.kind == "plugin":
        factory = _plugin_factory(opts, shape, cfg.schedule.T)
        # One connection per concurrently running chain.
        pool = DenoiserPool.open(factory, min(cfg.sampler.workers, cfg.sampler.N))
        return pool, pool.close
    raise InvalidArgumentError(f"unknown denoiser kind {opts.kind!r}")


def _schedule(cfg: RunConfig):
    s = cfg.schedule
    return from_name(s.kind, s.T, s.beta_start, s.beta_end)


def consistency_error(mean, x_obs, mask) -> float:
    m = mask.entries
    if not m.any():
        return 0.0
    return float(np.abs(kspace.fft2c(mean)[m] - x_obs[m]).max())


# ----------------------------------------------------------------- commands


def cmd_schedule_dump(args) -> int:
    s = from_name(args.kind, args.T, args.beta_start, args.beta_end)
    if args.respace is not None:
        s = respace(s, args.respace)
    json.dump(s.table(), sys.stdout, indent=args.indent)
    sys.stdout.write("\n")
    return 0


def cmd_mask_make(args) -> int:
    m = kspace.make_mask(args.kind, args.height, args.width, args.acceleration, args.center_fraction, args.seed)
    io.write_msk(args.out, m)
    print(json.dumps({
        "path": str(args.out),
        "shape": list(m.shape),
        "columns": len(m.columns),
        "acceleration": m.acceleration,
    }))
    return 0


def cmd_phantom(args) -> int:
    ph = phantom.gaussian_phantom(args.height, args.width, args.s2, args.seed, args.amplitude, args.bump_width)
    out = Path(args.out_dir)
    io.write_cim(out / "truth.cim", ph.ground_truth)
    io.write_cim(out / "mu.cim", ph.mu)
    print(json.dumps({"truth": str(out / "truth.cim"), "mu": str(out / "mu.cim"), "s2": ph.s2}))
    return 0


def cmd_reconstruct(args) -> int:
    cfg = resolve_config(args)
    if not args.out_dir:
        raise InvalidArgumentError("--out-dir is required")
    out = Path(args.out_dir)
    sampler_cfg = cfg.sampler_config()
    problem = load_problem(cfg)
    schedule = _schedule(cfg)
    denoiser, close = open_denoiser(cfg, problem.x_obs.shape)
    try:
        result = c2f_reconstruct(problem.x_obs, problem.mask, schedule, denoiser, sampler_cfg)
    finally:
        close()

    io.write_cim(out / "mean.cim", result.mean)
    io.write_f32_grid(out / "variance.f32", result.variance, quantity="variance of magnitude")
    outputs = {"mean": "mean.cim", "variance": "variance.f32"}
    if result.samples is not None:
        names = []
        for i, s in enumerate(result.samples):
            name = f"samples/sample_{i:03d}.cim"
            io.write_cim(out / name, s)
            names.append(name)
        outputs["samples"] = names

    err = consistency_error(result.mean, problem.x_obs, problem.mask)
    md = result.metadata
    report = {
        "schema": REPORT_SCHEMA,
        "shape": list(problem.x_obs.shape),
        "config": _config_echo(cfg),
        "schedule": md["schedule"],
        "coarse_schedule": md["coarse_schedule"],
        "speedup_factor": md["speedup_factor"],
        "timings": md["timings"],
        "consistency": {"max_abs_error": err, "ok": err <= CONSISTENCY_TOL, "tolerance": CONSISTENCY_TOL},
        "backend": md["backend"],
        "outputs": outputs,
    }
    if problem.truth is not None:
        report["metrics"] = metrics.evaluate(problem.truth, result.mean).as_dict()
    io.atomic_write_text(out / "report.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(json.dumps({"report": str(out / "report.json"), "consistency_ok": err <= CONSISTENCY_TOL}))
    return 0


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    problem = load_problem(cfg)
    if problem.truth is None:
        raise InvalidArgumentError("ablation needs a ground truth (image-domain input or --truth)")
    cells = [ablation.parse_cell(c) if isinstance(c, str) else ablation.Cell(*c) for c in cfg.ablation.cells] \
        if cfg.ablation.cells else ablation.default_sweep()
    if cfg.ablation.seeds < 1:
        raise InvalidArgumentError(f"seeds must be positive, got {cfg.ablation.seeds}")
    seeds = range(cfg.ablation.seed_base, cfg.ablation.seed_base + cfg.ablation.seeds)
    base = cfg.sampler_config()
    schedule = _schedule(cfg)

    def progress(tr):
        if args.verbose:
            print(f"{tr.cell.variant} k={tr.cell.k} N={tr.cell.N} seed={tr.seed} psnr={tr.psnr:.4f}", file=sys.stderr)

    denoiser, close = open_denoiser(cfg, problem.x_obs.shape)
    try:
        trials = ablation.run_ablation(problem.x_obs, problem.mask, problem.truth, schedule, denoiser, base,
                                       cells, seeds, progress)
    finally:
        close()
    text = ablation.to_csv(ablation.summarize(trials))
    if args.out:
        io.atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_metrics(args) -> int:
    ref = _read_image(args.reference, "reference")
    test = _read_image(args.test, "test")
    print(json.dumps(metrics.evaluate(ref, test, args.data_range).as_dict()))
    return 0


def cmd_oracle(args) -> int:
    data, domain = io.read_cim(args.input)
    data = data.astype(np.complex128)
    mask = io.read_msk(args.mask)
    x_obs = phantom.observe(data, mask) if domain == io.DOMAIN_IMAGE else kspace.apply_mask(data, mask)
    mu = _read_image(args.mu, "prior mean") if args.mu else np.zeros(data.shape, dtype=np.complex128)
    post = oracle.gaussian_posterior(mu, args.s2, mask, x_obs)
    io.write_cim(args.out, post.mean)
    if args.kspace_variance:
        io.write_f32_grid(args.kspace_variance, post.kspace_variance, quantity="posterior k-space variance")
    print(json.dumps({
        "mean": str(args.out),
        "observed": int(mask.entries.sum()),
        "unobserved": int((~mask.entries).sum()),
        "s2": args.s2,
    }))
    return 0


# ------------------------------------------------------------------- parser


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _add_run_flags(p):
    p.add_argument("--config", help="JSON run manifest; flags override it")
    p.add_argument("--input", help="CIM1 image (ground truth) or k-space file")
    p.add_argument("--truth", help="CIM1 ground-truth image for metrics")
    g = p.add_argument_group("schedule")
    g.add_argument("--schedule-kind", choices=["cosine", "linear"])
    g.add_argument("--T", type=_positive_int)
    g = p.add_argument_group("sampler")
    g.add_argument("--k", type=_positive_int)
    g.add_argument("--N", type=_positive_int)
    g.add_argument("--T-refine", dest="T_refine", type=int)
    g.add_argument("--ksg-noise", dest="ksg_noise", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--refine", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--keep-samples", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--seed", type=int)
    g.add_argument("--workers", type=_positive_int)
    g = p.add_argument_group("mask")
    g.add_argument("--mask", help="MSK1 file; otherwise a mask is generated")
    g.add_argument("--mask-kind", choices=[kspace.CARTESIAN, kspace.GAUSSIAN])
    g.add_argument("--acceleration", type=float)
    g.add_argument("--center-fraction", type=float)
    g.add_argument("--mask-seed", type=int)
    g = p.add_argument_group("denoiser")
    g.add_argument("--denoiser", choices=["gaussian", "zero", "plugin"])
    g.add_argument("--mu", help="CIM1 prior mean for the gaussian denoiser (default zeros)")
    g.add_argument("--s2", type=float)
    g.add_argument("--plugin-command", help="command line of a stdio plugin")
    g.add_argument("--plugin-address", help="host:port of a TCP plugin")
    g.add_argument("--plugin-timeout", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ksgdiffuse", description="k-space guided diffusion reconstruction")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("schedule", help="noise schedule tools")
    ssub = p.add_subparsers(dest="action", required=True)
    d = ssub.add_parser("dump", help="print beta/alpha/alpha_bar/sigma2 as JSON")
    d.add_argument("--kind", choices=["cosine", "linear"], default="cosine")
    d.add_argument("--T", type=_positive_int, default=4000)
    d.add_argument("--beta-start", type=float, default=1e-4)
    d.add_argument("--beta-end", type=float, default=0.02)
    d.add_argument("--respace", type=_positive_int)
    d.add_argument("--indent", type=int, default=None)
    d.set_defaults(func=cmd_schedule_dump)

    p = sub.add_parser("mask", help="sampling mask tools")
    msub = p.add_subparsers(dest="action", required=True)
    m = msub.add_parser("make", help="write an MSK1 mask")
    m.add_argument("--height", type=_positive_int, required=True)
    m.add_argument("--width", type=_positive_int, required=True)
    m.add_argument("--kind", choices=[kspace.CARTESIAN, kspace.GAUSSIAN], default=kspace.CARTESIAN)
    m.add_argument("--acceleration", type=float, default=4.0)
    m.add_argument("--center-fraction", type=float)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_mask_make)

    p = sub.add_parser("phantom", help="draw a Gaussian-prior test image")
    p.add_argument("--height", type=_positive_int, default=16)
    p.add_argument("--width", type=_positive_int, default=16)
    p.add_argument("--s2", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--amplitude", type=float, default=phantom.DEFAULT_AMPLITUDE)
    p.add_argument("--bump-width", type=float)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("reconstruct", help="coarse-to-fine reconstruction")
    _add_run_flags(p)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("ablate", help="ablation sweep, CSV output")
    _add_run_flags(p)
    p.add_argument("--seeds", type=_positive_int, help="seeds per cell (default 20)")
    p.add_argument("--seed-base", type=int)
    p.add_argument("--cell", action="append", help="variant:k:N, repeatable (default: 14-cell grid)")
    p.add_argument("--out", help="CSV path (default stdout)")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("metrics", help="PSNR/SSIM of two CIM1 images")
    p.add_argument("--reference", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--data-range", type=float)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("oracle", help="closed-form Gaussian posterior mean")
    p.add_argument("--input", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--mu")
    p.add_argument("--s2", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.add_argument("--kspace-variance", help="also write the k-space variance grid here")
    p.set_defaults(func=cmd_oracle)
    return parser


def _fail(code: int, kind: str, message: str) -> int:
    print(json.dumps({"error": kind, "exit_code": code, "message": message}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KsgError as e:
        return _fail(e.exit_code, type(e).__name__, str(e))
    except OSError as e:
        return _fail(3, type(e).__name__, str(e))
    except (ValueError, TypeError) as e:
        # Malformed values that slipped past argument parsing, e.g. in a config file.
        return _fail(2, type(e).__name__, str(e))


if __name__ == "__main__":
    sys.exit(main())
