"""Command-line entry point: ``feasplan <command> [options]``.

Every command is a pure function of its config, input files and seed, so
reruns write byte-identical outputs. Exit codes: 0 success, 1 runtime failure
(no path, training divergence), 2 usage, config or input error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import evaluator, feasnet, oracle, planner, tensorizer, terrain
from .config import ConfigError, RunConfig, dump_config, load_config

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class UsageError(Exception):
    """Bad arguments or missing inputs; maps to exit code 2."""


def _err(msg):
    print(f"feasplan: error: {msg}", file=sys.stderr)


def _info(msg):
    print(msg, file=sys.stderr)


def _need(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"input file {p} does not exist")
    return p


def _cell(text, what):
    try:
        x, y = (int(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"--{what} expects 'x,y' integers, got {text!r}") from None
    return x, y


def _param(text):
    if "=" not in text:
        raise UsageError(f"--param expects key=value, got {text!r}")
    k, v = text.split("=", 1)
    try:
        val = json.loads(v)
    except json.JSONDecodeError:
        val = v
    return k, tuple(val) if isinstance(val, list) else val


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed, train=replace(cfg.train, seed=args.seed))
    return cfg


def _load_map(path):
    return terrain.load_map(_need(path))


# -- commands ---------------------------------------------------------------------


def cmd_gen_terrain(args, cfg: RunConfig):
    spec = cfg.terrain
    if args.family is not None:
        if args.family not in terrain.FAMILIES:
            raise UsageError(f"unknown family {args.family!r}; choose from {', '.join(terrain.FAMILIES)}")
        spec = terrain.TerrainSpec(args.family, spec.extent, {}, spec.seed)
    if args.extent is not None:
        spec = replace(spec, extent=tuple(args.extent))
    if args.param:
        spec = replace(spec, params={**spec.params, **dict(_param(p) for p in args.param)})
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    emap = terrain.generate(spec)
    out = Path(args.out)
    terrain.save_map(emap, out)
    pgm = Path(args.pgm) if args.pgm else out.with_suffix(".pgm")
    terrain.write_pgm(pgm, emap.data)
    _info(f"wrote {out} ({emap.width}x{emap.height} cells) and {pgm}")


def _training_specs(cfg: RunConfig, arch):
    if cfg.training_terrains is not None:
        return list(cfg.training_terrains)
    return evaluator.specs_for(arch, cfg.seed)


def cmd_train(args, cfg: RunConfig):
    arch = cfg.archetype(args.archetype)
    train_cfg = cfg.train
    if args.epochs is not None:
        train_cfg = replace(train_cfg, epochs=args.epochs)
    n = args.samples if args.samples is not None else cfg.n_samples
    data = oracle.sample_dataset(
        arch, _training_specs(cfg, arch), n, seed=cfg.seed, sigma_noise=cfg.sigma_noise, sigma=cfg.sigma_reward
    )
    params, history = feasnet.train(feasnet.init_params(cfg.seed), data, train_cfg)
    out = Path(args.out)
    feasnet.save_params(params, out)
    log = Path(args.log) if args.log else out.with_suffix(".loss.tsv")
    lines = ["epoch\ttotal\tfeas\trecon\tkl"]
    for h in history:
        lines.append(f"{h['epoch']}\t{h['total']!r}\t{h['feas']!r}\t{h['recon']!r}\t{h['kl']!r}")
    log.write_text("\n".join(lines) + "\n")
    last = history[-1]
    _info(f"wrote {out} and {log}; final feas {last['feas']:.5f} recon {last['recon']:.5f}")


def _policy_id(args, cfg: RunConfig):
    if args.archetype is not None:
        return cfg.archetype(args.archetype).id
    return args.policy_id


def cmd_tensorize(args, cfg: RunConfig):
    emap = _load_map(args.map)
    params = feasnet.load_params(_need(args.weights))
    t = tensorizer.tensorize(emap, params, _policy_id(args, cfg), cfg.tau_low, cfg.tau_high)
    out = Path(args.out)
    tensorizer.save_tensor(t, out)
    _info(f"wrote {out}")
    if args.heatmaps:
        d = Path(args.heatmaps)
        d.mkdir(parents=True, exist_ok=True)
        for k in range(tensorizer.DIRECTIONS):
            terrain.write_pgm(d / f"{out.stem}_k{k}.pgm", t.values[:, :, k], 0.0, 1.0)
        _info(f"wrote {tensorizer.DIRECTIONS} heatmaps to {d}")


def _endpoints(args, cfg: RunConfig, emap):
    start = _cell(args.start, "start") if args.start else cfg.start
    goal = _cell(args.goal, "goal") if args.goal else cfg.goal
    if start is None or goal is None:
        s, g = evaluator.default_endpoints(emap)
        start = start or s
        goal = goal or g
    return start, goal


def cmd_plan(args, cfg: RunConfig):
    emap = _load_map(args.map)
    tensors = [tensorizer.load_tensor(_need(p), emap.resolution) for p in args.tensors]
    for p, t in zip(args.tensors, tensors):
        if (t.height, t.width) != (emap.height, emap.width):
            raise UsageError(f"tensor {p} is {t.width}x{t.height} but the map is {emap.width}x{emap.height}")
    start, goal = _endpoints(args, cfg, emap)
    try:
        p, fld = planner.plan_multi(tensors, start, goal, cfg.f_min)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    planner.save_plan(p, out)
    if args.overlay:
        terrain.write_pgm(args.overlay, planner.plan_overlay(emap.data, p, [t.policy_id for t in tensors]), 0.0, 1.0)
    _info(f"wrote {out}: {len(p.waypoints)} waypoints, length {p.total_length:.3f} m, {p.switches()} switches")


def cmd_evaluate(args, cfg: RunConfig):
    trials = args.trials
    for name in ("trials", "tasks"):
        v = getattr(args, name)
        if v is not None and v < 1:
            raise UsageError(f"--{name} must be at least 1, got {v}")
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.experiment == "adaptation":
        trials = trials or cfg.adaptation_trials
        train_cfg = replace(cfg.train, epochs=cfg.adaptation_epochs)
        result = evaluator.run_adaptation_experiment(
            cfg.skill_levels, trials, cfg.adaptation_samples, cfg.adaptation_epochs, cfg.seed,
            cfg.terrain, cfg.settings, train_cfg, progress=_info,
        )
        table = evaluator.format_adaptation(result)
    else:
        trials = trials or cfg.trials
        tasks = args.tasks or cfg.tasks
        table_data = evaluator.run_mixed_experiment(
            None, tasks, trials, cfg.seed, None, cfg.n_samples, cfg.train.epochs, cfg.settings,
            list(cfg.archetypes), None if cfg.training_terrains is None else list(cfg.training_terrains),
            cfg.train, progress=_info,
        )
        table = evaluator.format_mixed(table_data)
    resolved = json.loads(dump_config(cfg))
    resolved["evaluator"]["trials" if args.experiment == "mixed" else "adaptation_trials"] = trials
    m = evaluator.manifest(
        {"experiment": args.experiment, **resolved},
        [cfg.seed],
        [json.dumps(resolved, sort_keys=True).encode()],
    )
    (out / f"{args.experiment}.tsv").write_text(table)
    (out / f"{args.experiment}_manifest.json").write_text(evaluator.manifest_json(m))
    sys.stdout.write(table)
    _info(f"wrote {out / f'{args.experiment}.tsv'} and manifest")


def cmd_render(args, cfg: RunConfig):
    out = Path(args.out)
    if args.tensor:
        t = tensorizer.load_tensor(_need(args.tensor))
        if args.channel is None:
            grid = t.values.max(axis=2)
        elif 0 <= args.channel < tensorizer.DIRECTIONS:
            grid = t.values[:, :, args.channel]
        else:
            raise UsageError(f"--channel must be in 0..{tensorizer.DIRECTIONS - 1}")
        terrain.write_pgm(out, grid, 0.0, 1.0)
    elif args.plan:
        if not args.map:
            raise UsageError("render --plan needs --map for the background")
        emap = _load_map(args.map)
        p = planner.load_plan(_need(args.plan))
        for x, y in p.waypoints:
            if not (0 <= x < emap.width and 0 <= y < emap.height):
                raise UsageError(f"plan {args.plan} leaves the {emap.width}x{emap.height} map at ({x}, {y})")
        terrain.write_pgm(out, planner.plan_overlay(emap.data, p), 0.0, 1.0)
    elif args.map:
        terrain.write_pgm(out, _load_map(args.map).data)
    else:
        raise UsageError("render needs one of --map, --tensor or --plan")
    _info(f"wrote {out}")


def cmd_grad_check(args, cfg: RunConfig):
    rng = np.random.default_rng(cfg.seed)
    data = oracle.sample_dataset(
        cfg.archetype(args.archetype), [cfg.terrain], args.batch, seed=cfg.seed,
        sigma_noise=cfg.sigma_noise, sigma=cfg.sigma_reward,
    )
    batch = (data.patches, data.tasks, data.labels)
    worst = 0.0
    for i in range(args.inits):
        params = feasnet.init_params(cfg.seed + i)
        noise = rng.standard_normal((args.batch, params.latent))
        err = feasnet.grad_check(params, batch, noise, n_params=args.params, seed=cfg.seed + i, cfg=cfg.train)
        worst = max(worst, err)
        print(f"init {i}: max relative error {err:.3e}")
    ok = worst < args.tolerance
    print(f"{'PASS' if ok else 'FAIL'}: worst {worst:.3e} (tolerance {args.tolerance:g})")
    return EXIT_OK if ok else EXIT_RUNTIME


# -- parser -----------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="feasplan", description="Capability-aware planning over feasibility tensors.")
    ap.add_argument("--config", help="JSON run configuration (defaults apply when omitted)")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-terrain", help="generate an elevation map and PGM preview")
    g.add_argument("--family", help="terrain family (default: config terrain)")
    g.add_argument("--extent", type=float, nargs=2, metavar=("W_M", "H_M"))
    g.add_argument("--param", action="append", help="family parameter key=value (JSON value)")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.add_argument("--pgm", help="preview path (default: OUT with .pgm suffix)")
    g.set_defaults(func=cmd_gen_terrain)

    t = sub.add_parser("train", help="train a feasibility net for one archetype")
    t.add_argument("--archetype", required=True)
    t.add_argument("--samples", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    t.add_argument("--log", help="loss log (default: OUT with .loss.tsv suffix)")
    t.set_defaults(func=cmd_train)

    z = sub.add_parser("tensorize", help="build a feasibility tensor from a map and weights")
    z.add_argument("--map", required=True)
    z.add_argument("--weights", required=True)
    z.add_argument("--archetype", help="take the policy id from this config archetype")
    z.add_argument("--policy-id", type=int, default=0)
    z.add_argument("--out", required=True)
    z.add_argument("--heatmaps", help="directory for per-direction PGM heatmaps")
    z.set_defaults(func=cmd_tensorize)

    p = sub.add_parser("plan", help="fuse tensors and plan a path")
    p.add_argument("--map", required=True)
    p.add_argument("--tensors", nargs="+", required=True)
    p.add_argument("--start", help="x,y (default: config, else the map's default endpoints)")
    p.add_argument("--goal", help="x,y")
    p.add_argument("--out", required=True)
    p.add_argument("--overlay", help="PGM path overlay")
    p.set_defaults(func=cmd_plan)

    e = sub.add_parser("evaluate", help="run the adaptation or mixed-terrain experiment")
    e.add_argument("--experiment", choices=("adaptation", "mixed"), required=True)
    e.add_argument("--trials", type=int)
    e.add_argument("--tasks", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--out", help="output directory (default: config output_dir)")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("render", help="render a map, tensor or plan overlay to PGM")
    r.add_argument("--map")
    r.add_argument("--tensor")
    r.add_argument("--plan")
    r.add_argument("--channel", type=int, help="tensor direction (default: max over directions)")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render)

    c = sub.add_parser("grad-check", help="compare analytic and numerical gradients")
    c.add_argument("--archetype", default="StepsExpert")
    c.add_argument("--inits", type=int, default=5)
    c.add_argument("--params", type=int, default=200)
    c.add_argument("--batch", type=int, default=4)
    c.add_argument("--tolerance", type=float, default=1e-4)
    c.add_argument("--seed", type=int)
    c.set_defaults(func=cmd_grad_check)
    return ap


_USAGE_ERRORS = (
    UsageError,
    ConfigError,
    terrain.TerrainError,
    terrain.MapFormatError,
    feasnet.WeightFormatError,
    tensorizer.TensorFormatError,
    FileNotFoundError,
    IsADirectoryError,
)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        rc = args.func(args, cfg)
    except _USAGE_ERRORS as exc:
        _err(exc)
        return EXIT_USAGE
    except (planner.NoPath, feasnet.TrainingDiverged) as exc:
        _err(exc)
        return EXIT_RUNTIME
    except ValueError as exc:
        _err(exc)
        return EXIT_USAGE
    return EXIT_OK if rc is None else rc


if __name__ == "__main__":
    sys.exit(main())
