"""Command-line entry point: ``dmu <subcommand> ...``.

Every run writes ``manifest.json`` (arguments, seed, package versions) next
to its outputs.  Exit codes: 0 success, 2 configuration error, 3 numeric
failure, 4 I/O failure.  When ``--out`` is omitted the output goes to
``$DMU_OUTPUT_ROOT/<subcommand>``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import platform
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .autodiff import NonFiniteError
from .autodiff.checkpoint import CheckpointError
from .data import write_dataset
from .filter import (DegeneracyError, FilterConfig, load_frames, run_occlusion3, run_sequence, snapshot_csv,
                     summary_csv)
from .imageio import write_pfm, write_pgm
from .likelihood import InputAndSynthetic, Learned, SyntheticAndSynthetic, rows_to_csv, sweep
from .model import load_model
from .render import render_depth, render_segmentation
from .scene import (ScenarioError, ScenarioSpec, bind_state, default_state, default_unmodeled, sample_scene,
                    sample_state)
from .training import TrainConfig, TrainingDiverged, resolve_scenario, train

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
OUTPUT_ROOT_ENV = "DMU_OUTPUT_ROOT"


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = [problems] if isinstance(problems, str) else list(problems)
        super().__init__("; ".join(self.problems))


# ---------------------------------------------------------------------------
# helpers


def _output_dir(args) -> Path:
    if args.out is not None:
        out = Path(args.out)
    elif os.environ.get(OUTPUT_ROOT_ENV):
        out = Path(os.environ[OUTPUT_ROOT_ENV]) / args.command
        if out.parent.is_dir():
            out.mkdir(exist_ok=True)
    else:
        raise ConfigError(f"--out not given and {OUTPUT_ROOT_ENV} is not set")
    if not out.is_dir():
        raise FileNotFoundError(f"output directory {out} does not exist")
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory {out} is not writable")
    return out


def _write_manifest(out: Path, args, extra: dict | None = None) -> None:
    echo = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out")}
    manifest = {
        "command": args.command,
        "args": echo,
        "seed": getattr(args, "seed", None),
        "versions": {"dmu": __version__, "numpy": np.__version__, "python": platform.python_version()},
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def _scenario(args) -> ScenarioSpec:
    source = getattr(args, "scenario", None) or getattr(args, "preset", None)
    if source is None:
        raise ConfigError("one of --preset or --scenario is required")
    try:
        return resolve_scenario(source)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None


def _parse_vector(text: str | None, spec: ScenarioSpec, which: str, seed: int) -> np.ndarray:
    """``default``, ``identity`` (default with unit quaternions), ``random`` or comma-separated numbers."""
    dofs = spec.state if which == "state" else spec.unmodeled
    if text is None or text == "default":
        return default_state(spec) if which == "state" else default_unmodeled(spec)
    if text == "random":
        x, z = sample_scene(spec, seed)
        return x if which == "state" else z
    if text == "identity":
        v = default_state(spec) if which == "state" else default_unmodeled(spec)
        i = 0
        for d in dofs:
            if d.kind == "quat":
                v[i:i + 4] = (1.0, 0.0, 0.0, 0.0)
            i += d.size
        return v
    try:
        v = np.array([float(t) for t in text.split(",") if t.strip()])
    except ValueError:
        raise ConfigError(f"--{which}: cannot parse {text!r}") from None
    expected = sum(d.size for d in dofs)
    if v.size != expected:
        names = spec.state_names if which == "state" else spec.unmodeled_names
        raise ConfigError(f"--{which}: expected {expected} values ({', '.join(names)}), got {v.size}")
    return v


def _set_dof(spec: ScenarioSpec, x: np.ndarray, name: str, value: float) -> None:
    if name not in spec.state_names:
        raise ConfigError(f"scenario {spec.name!r} has no state DOF named {name!r}")
    x[spec.state_names.index(name)] = value


# ---------------------------------------------------------------------------
# subcommands


def cmd_render(args) -> int:
    spec = _scenario(args)
    out = _output_dir(args)
    x = _parse_vector(args.state, spec, "state", args.seed)
    z = _parse_vector(args.unmodeled, spec, "unmodeled", args.seed)
    if args.alpha is not None:
        _set_dof(spec, x, "alpha", args.alpha)
    scene = bind_state(spec, x, z)
    write_pfm(out / "depth.pfm", render_depth(scene))
    write_pgm(out / "mask.pgm", render_segmentation(scene, spec.target_ids))
    _write_manifest(out, args, {"state": x.tolist(), "unmodeled": z.tolist()})
    return EXIT_OK


def cmd_gen_data(args) -> int:
    spec = _scenario(args)
    out = _output_dir(args)
    if args.count <= 0:
        raise ConfigError(f"--count must be positive, got {args.count}")
    write_dataset(out / "dataset", spec, args.count, args.seed, args.mask_union, args.workers)
    _write_manifest(out, args)
    return EXIT_OK


TRAIN_OVERRIDES = ("scenario", "profile", "variant", "epochs", "epoch_size", "reuse", "batch", "seed", "lr",
                   "lr_schedule", "latent_dim", "workers", "dataset")


def train_config_from_args(args) -> TrainConfig:
    d = {}
    if args.config:
        loaded = yaml.safe_load(Path(args.config).read_text()) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{args.config}: expected a mapping of training options")
        d.update(loaded.get("train", loaded))
    for k in TRAIN_OVERRIDES:
        v = getattr(args, k)
        if v is not None:
            d[k] = v
    try:
        cfg = TrainConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    problems = cfg.validate()
    if problems:
        raise ConfigError(problems)
    return cfg


def cmd_train(args) -> int:
    cfg = train_config_from_args(args)
    out = _output_dir(args)
    _write_manifest(out, args, {"train_config": cfg.to_dict(), "seed": cfg.seed})
    _, report = train(cfg, out, progress=None if args.quiet else
                      lambda r: print(f"epoch {r['epoch']}: total {r['total']:.5f} val {r['val_total']:.5f}",
                                      file=sys.stderr))
    print(report.checkpoint)
    return EXIT_OK


def _evaluator(name: str, spec: ScenarioSpec, model_path, x_gt, z_gt):
    if name == "learned":
        if model_path is None:
            raise ConfigError("--model is required for the learned evaluator")
        return Learned(load_model(model_path))
    if name == "insyn":
        return InputAndSynthetic(spec, z_gt)
    if name == "synsyn":
        return SyntheticAndSynthetic(spec, x_gt, z_gt)
    raise ConfigError(f"unknown evaluator {name!r}")


def cmd_sweep(args) -> int:
    spec = _scenario(args)
    out = _output_dir(args)
    if args.model is not None and args.evaluator == "learned":
        model = load_model(args.model)
        if (spec.camera.height, spec.camera.width) != (model.arch.height, model.arch.width):
            spec = dataclasses.replace(spec, camera=spec.camera.with_resolution(model.arch.width, model.arch.height))
    x_gt = _parse_vector(args.state, spec, "state", args.seed)
    z_gt = _parse_vector(args.unmodeled, spec, "unmodeled", args.seed)
    ev = _evaluator(args.evaluator, spec, args.model, x_gt, z_gt)
    y_obs = render_depth(bind_state(spec, x_gt, z_gt))
    axes = args.axis or ["tx", "ty", "tz"]
    axes = [int(a) if a.isdigit() else a for a in axes]
    try:
        rows = sweep(ev, spec, y_obs, x_gt, axes, args.half_range, args.steps)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    (out / "sweep.csv").write_text(rows_to_csv(rows))
    _write_manifest(out, args, {"state": x_gt.tolist(), "unmodeled": z_gt.tolist()})
    return EXIT_OK


def cmd_filter(args) -> int:
    out = _output_dir(args)
    sigma = [float(s) for s in args.sigma.split(",")] if args.sigma else None
    if args.scripted is not None:
        if args.scripted != "occlusion3":
            raise ConfigError(f"unknown scripted sequence {args.scripted!r}")
        config = FilterConfig(args.particles, sigma if sigma is not None else [0.005, 0.0, 0.0], seed=args.seed)
        if config.validate():
            raise ConfigError(config.validate())
        model = load_model(args.model) if args.evaluator == "learned" else None

        def factory(seq):
            if args.evaluator == "insyn":
                return InputAndSynthetic(seq.spec)
            if args.evaluator == "learned":
                return Learned(model)
            raise ConfigError("the scripted sequence supports the insyn and learned evaluators")

        result = run_occlusion3(factory, config, args.frames_per_phase)
        snaps, spec = result.snapshots, result.sequence.spec
        extra = {"phase1_mass_hidden": result.phase1_mass, "phase2_mass_behind_remaining": result.phase2_mass,
                 "phase3_mean_error": result.phase3_error}
    else:
        spec = _scenario(args)
        if args.frames is None:
            raise ConfigError("--frames <dir> or --scripted occlusion3 is required")
        frames = load_frames(args.frames)
        config = FilterConfig(args.particles, sigma if sigma is not None else 0.0, seed=args.seed)
        if config.validate():
            raise ConfigError(config.validate())
        z = _parse_vector(args.unmodeled, spec, "unmodeled", args.seed)
        ev = _evaluator(args.evaluator, spec, args.model, None, z)

        def prior(rng, n):
            return np.stack([sample_state(spec, rng) for _ in range(n)])

        snaps = run_sequence(frames, config, ev, prior, spec)
        extra = {}
    names = spec.state_names
    for s in snaps:
        (out / f"particles_{s.frame:03d}.csv").write_text(snapshot_csv(s, names))
    (out / "summary.csv").write_text(summary_csv(snaps, names))
    _write_manifest(out, args, extra)
    if extra:
        print(json.dumps(extra, sort_keys=True))
    return EXIT_OK


def cmd_inspect(args) -> int:
    if args.model is not None:
        info = load_model(args.model).describe()
    else:
        spec = _scenario(args)
        info = {"name": spec.name, "state": spec.state_names, "unmodeled": spec.unmodeled_names,
                "camera": dataclasses.asdict(spec.camera), "objects": [o.id for o in spec.objects]}
    print(json.dumps(info, indent=2, default=str))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_scenario(p, required=False):
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--preset", help="built-in scenario name")
    g.add_argument("--scenario", help="scenario preset name or YAML file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dmu", description="Learned measurement updates for depth images.")
    parser.add_argument("--version", action="version", version=f"dmu {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="render a depth image and target mask")
    _add_scenario(p)
    p.add_argument("--state", default="default", help="default | identity | random | comma-separated values")
    p.add_argument("--unmodeled", default="default", help="default | random | comma-separated values")
    p.add_argument("--alpha", type=float, help="articulation angle in radians (scenarios with an alpha DOF)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("gen-data", help="write a primed-pair dataset")
    _add_scenario(p)
    p.add_argument("--count", type=int, default=1050)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mask-union", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="YAML file of training options")
    p.add_argument("--scenario")
    p.add_argument("--profile", choices=["desk", "paper"])
    p.add_argument("--variant", choices=["cae", "cae_generator"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--epoch-size", type=int)
    p.add_argument("--reuse", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-schedule", choices=("constant", "cosine"))
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--dataset", help="directory written by gen-data (default: live stream)")
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="evaluate a likelihood along state axes")
    _add_scenario(p)
    p.add_argument("--evaluator", choices=["learned", "insyn", "synsyn"], required=True)
    p.add_argument("--model", help="checkpoint for the learned evaluator")
    p.add_argument("--state", default="default")
    p.add_argument("--unmodeled", default="default")
    p.add_argument("--axis", action="append", help="tx ty tz rx ry rz, a DOF name or index (repeatable)")
    p.add_argument("--half-range", type=float, default=0.1)
    p.add_argument("--steps", type=int, default=21)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("filter", help="run the particle filter")
    _add_scenario(p)
    p.add_argument("--scripted", help="built-in sequence (occlusion3)")
    p.add_argument("--frames", help="directory of .pfm depth frames, or 'scripted'")
    p.add_argument("--evaluator", choices=["learned", "insyn", "synsyn"], default="insyn")
    p.add_argument("--model")
    p.add_argument("--unmodeled", default="default")
    p.add_argument("--particles", type=int, default=100)
    p.add_argument("--sigma", help="comma-separated process noise per state DOF")
    p.add_argument("--frames-per-phase", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("inspect", help="describe a model checkpoint or scenario")
    _add_scenario(p)
    p.add_argument("--model")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "frames", None) == "scripted" and getattr(args, "scripted", None) is None:
        args.scripted, args.frames = "occlusion3", None
    try:
        return args.func(args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except ScenarioError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDiverged, DegeneracyError, NonFiniteError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, CheckpointError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
