"""Command-line entry point.

Subcommands: gen, simulate, fit, refine, eval, analyze. All outputs are
deterministic under --seed and carry a stamp of the effective settings.
Configuration precedence: CLI flag > config file > built-in default. Errors
print a single-line machine-readable JSON record on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

import numpy as np

from springfit import fileio, grad, metrics, scenegen, sim
from springfit.fit import (
    FitResult,
    OptimConfig,
    SearchConfig,
    fit_first_order,
    fit_zero_order,
    refine_controller,
)
from springfit.fileio import SchemaError
from springfit.model import PhysicsConfig
from springfit.scenegen import Scene, SceneSpec
from springfit.sim import ControllerTrajectory, SimulationDiverged

# Built-in hyperparameter defaults (zero-order / first-order / refinement).
DEFAULTS = {
    "seed": 0,
    "substeps": None,
    "lambda_tr": 1.0,
    "tau_dyn": metrics.DEFAULT_TAU_DYN,
    "iters": None,
    "lr": None,
    "stage": "both",
    "controller": "dense",
}
STAGE_ITERS = {"zero-order": 100, "first-order": 200, "refine": 40}
STAGE_LR = {"first-order": 1e-3, "refine": 2e-5}

# Coarse-fit initialization (independent of any scene's ground truth).
INIT_CONNECT_RADIUS = 0.002
INIT_MAX_DEGREE = 3
INIT_GLOBAL_STIFFNESS = 1000.0


class CliError(ValueError):
    pass


def _read_config_file(path: str) -> dict:
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, _, token = line.partition(" ")
            if key not in DEFAULTS:
                raise CliError(f"unknown config key {key!r}")
            values[key] = fileio._parse_scalar(token.strip())
    return values


def _effective(args) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(_read_config_file(args.config))
    for key in DEFAULTS:
        cli_value = getattr(args, key, None)
        if cli_value is not None:
            cfg[key] = cli_value
    return cfg


def _parse_controller_flag(value: str) -> tuple[str, int | None]:
    if value == "dense":
        return "dense", None
    if value.startswith("sparse:"):
        k = int(value.split(":", 1)[1])
        if k < 1:
            raise CliError("sparse controller size must be >= 1")
        return "sparse", k
    raise CliError(f"bad --controller value {value!r}; use dense or sparse:<k>")


def _stamp(command: str, cfg: dict) -> dict:
    stamp = {"command": command}
    for key in sorted(cfg):
        stamp[key] = cfg[key]
    return stamp


def _load_spec(token: str) -> SceneSpec:
    if token.endswith(fileio.EXTENSIONS["scenespec"]):
        return fileio.read_scenespec(token)
    return scenegen.bundled_spec(token)


def _select_controller(scene: Scene, cfg: dict, use_perturbed: bool) -> ControllerTrajectory:
    base = scene.controller
    if use_perturbed:
        if scene.controller_perturbed is None:
            raise CliError("scene has no perturbed controller (noise_controller was 0)")
        base = scene.controller_perturbed
    kind, k = _parse_controller_flag(cfg["controller"])
    if kind == "dense":
        return base
    idx = scenegen.fps_indices(base.frames[0], k, scene.spec.seed)
    return ControllerTrajectory(base.frames[:, idx, :], base.frame_dt)


def _fit_base_config(scene: Scene, cfg: dict) -> PhysicsConfig:
    base = replace(
        scene.config,
        connect_radius=INIT_CONNECT_RADIUS,
        max_degree=INIT_MAX_DEGREE,
        global_stiffness=INIT_GLOBAL_STIFFNESS,
    )
    if cfg["substeps"] is not None:
        base = replace(base, substeps=int(cfg["substeps"]))
    return base


def cmd_gen(args) -> int:
    cfg = _effective(args)
    spec = _load_spec(args.spec)
    if cfg["seed"] != DEFAULTS["seed"] or args.seed is not None:
        spec = replace(spec, seed=int(cfg["seed"]))
    kind, k = _parse_controller_flag(cfg["controller"])
    if kind == "sparse":
        spec = replace(spec, controller_kind="sparse", sparse_k=k)
    scene = scenegen.generate(spec)
    stamp = _stamp("gen", cfg)
    fileio.write_scene(args.out + fileio.EXTENSIONS["scene"], scene, stamp)
    fileio.write_observations(args.out + fileio.EXTENSIONS["observations"], scene.observations, stamp)
    print(f"wrote {args.out}.scene and {args.out}.obs ({spec.name}, seed {spec.seed})")
    return 0


def cmd_simulate(args) -> int:
    cfg = _effective(args)
    scene = fileio.read_scene(args.scene)
    if args.fit:
        fit = fileio.read_fit(args.fit)
        topo = fit.topology
        config = fit.config
        params = fit.spring_params
        controller = fit.refined_controller or fit.controller
    else:
        topo = scene.topology
        config = scene.config
        params = scene.topology.params()
        controller = scene.controller
    if cfg["substeps"] is not None:
        config = replace(config, substeps=int(cfg["substeps"]))
    frames = sim.rollout(topo, config, controller, params=params)
    n_obj = topo.n_object
    positions = np.stack([f.positions[:n_obj] for f in frames])
    velocities = np.stack([f.velocities[:n_obj] for f in frames])
    fileio.write_rollout(args.out, positions, velocities, config.frame_dt, _stamp("simulate", cfg))
    print(f"wrote {args.out} ({len(frames)} frames, {n_obj} nodes)")
    return 0


def cmd_fit(args) -> int:
    cfg = _effective(args)
    scene = fileio.read_scene(args.scene)
    observations = fileio.read_observations(args.obs)
    controller = _select_controller(scene, cfg, args.perturbed_controller)
    base = _fit_base_config(scene, cfg)
    stage = cfg["stage"]
    if stage not in ("zero-order", "first-order", "both"):
        raise CliError(f"bad --stage value {stage!r}")
    seed = int(cfg["seed"])
    track_weight = float(cfg["lambda_tr"])
    rest = scene.object_rest

    result: FitResult
    if stage in ("zero-order", "both"):
        iters = cfg["iters"] if cfg["iters"] is not None else STAGE_ITERS["zero-order"]
        search = SearchConfig(
            base=base, iterations=int(iters), seed=seed, track_weight=track_weight
        )
        result = fit_zero_order(rest, controller, observations, search)
        coarse = result
    else:
        search = SearchConfig(base=base, iterations=0, seed=seed, track_weight=track_weight)
        coarse = fit_zero_order(rest, controller, observations, search)
        result = coarse
    if stage in ("first-order", "both"):
        iters = cfg["iters"] if cfg["iters"] is not None else STAGE_ITERS["first-order"]
        lr = cfg["lr"] if cfg["lr"] is not None else STAGE_LR["first-order"]
        opt = OptimConfig(iterations=int(iters), learning_rate=float(lr), track_weight=track_weight)
        result = fit_first_order(
            coarse.topology, controller, observations, opt, coarse.config, seed=seed
        )
        result.warnings = coarse.warnings + result.warnings
    fileio.write_fit(args.out, result, _stamp("fit", cfg))
    print(f"wrote {args.out} (stage {result.stage}, loss {result.loss:.6g})")
    return 0


def cmd_refine(args) -> int:
    cfg = _effective(args)
    fit = fileio.read_fit(args.fit)
    scene = fileio.read_scene(args.scene)
    observations = fileio.read_observations(args.obs)
    if scene.controller_perturbed is not None:
        init = scene.controller_perturbed
    else:
        init = scene.controller
    kind, k = _parse_controller_flag(cfg["controller"])
    if kind == "sparse":
        idx = scenegen.fps_indices(init.frames[0], k, scene.spec.seed)
        init = ControllerTrajectory(init.frames[:, idx, :], init.frame_dt)
        truth = ControllerTrajectory(scene.controller.frames[:, idx, :], init.frame_dt)
    else:
        truth = scene.controller
    if init.n_nodes != fit.topology.n_controller:
        raise CliError(
            "controller size does not match the fitted topology; "
            "use the same --controller selection as the fit"
        )
    iters = cfg["iters"] if cfg["iters"] is not None else STAGE_ITERS["refine"]
    lr = cfg["lr"] if cfg["lr"] is not None else STAGE_LR["refine"]
    opt = OptimConfig(
        iterations=int(iters),
        learning_rate=float(lr),
        lr_decay=0.99,
        track_weight=float(cfg["lambda_tr"]),
    )
    result = refine_controller(
        fit.topology,
        fit.spring_params,
        init,
        observations,
        opt,
        fit.config,
        controller_truth=truth,
        seed=int(cfg["seed"]),
    )
    fileio.write_fit(args.out, result, _stamp("refine", cfg))
    err = "n/a" if result.controller_error is None else f"{result.controller_error:.6g}"
    print(f"wrote {args.out} (loss {result.loss:.6g}, controller error {err})")
    return 0


def cmd_eval(args) -> int:
    cfg = _effective(args)
    observations = fileio.read_observations(args.obs)
    if args.input.endswith(fileio.EXTENSIONS["rollout"]):
        positions, _, _ = fileio.read_rollout(args.input)
        frames = [positions[t] for t in range(positions.shape[0])]
    elif args.input.endswith(fileio.EXTENSIONS["fit"]):
        fit = fileio.read_fit(args.input)
        controller = fit.refined_controller or fit.controller
        states = sim.rollout(fit.topology, fit.config, controller, params=fit.spring_params)
        n_obj = fit.topology.n_object
        frames = [s.positions[:n_obj] for s in states]
    else:
        raise CliError("eval input must be a .roll or .fit file")
    report = metrics.evaluate_motion(frames, observations, tau_dyn=float(cfg["tau_dyn"]))
    fileio.write_report(args.out, report, _stamp("eval", cfg))
    cd_dyn_txt = "undefined" if report.cd_dyn_mm is None else f"{report.cd_dyn_mm:.4f}"
    track_txt = "n/a" if report.track_error_x100 is None else f"{report.track_error_x100:.5f}"
    print(
        f"wrote {args.out} (cd_full {report.cd_full_mm:.4f} mm, cd_dyn {cd_dyn_txt} mm, "
        f"track_x100 {track_txt})"
    )
    return 0


def cmd_analyze(args) -> int:
    cfg = _effective(args)
    fit = fileio.read_fit(args.fit)
    controller = fit.refined_controller or fit.controller
    report = metrics.evaluate_topology(fit.topology, controller.frames[0])
    fileio.write_report(args.out, report, _stamp("analyze", cfg))
    print(
        f"wrote {args.out} (rrd_object {report.rrd_object:.4f}, rrd_virtual "
        f"{report.rrd_virtual:.4f}, acc@5mm {report.contact_acc_5mm:.4f})"
    )
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--substeps", type=int, default=None)
    parser.add_argument("--lambda-tr", dest="lambda_tr", type=float, default=None)
    parser.add_argument("--tau-dyn", dest="tau_dyn", type=float, default=None)
    parser.add_argument("--iters", type=int, default=None)
    parser.add_argument("--lr", type=float, default=None)
    parser.add_argument("--stage", choices=["zero-order", "first-order", "both"], default=None)
    parser.add_argument("--controller", type=str, default=None, help="dense or sparse:<k>")
    parser.add_argument("--config", type=str, default=None, help="key-value config file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="springfit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a scene and observations from a spec")
    p.add_argument("spec", help="bundled scene name or .spec file")
    p.add_argument("--out", required=True, help="output basename (writes .scene and .obs)")
    _add_common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("simulate", help="roll out a scene at ground-truth or fitted parameters")
    p.add_argument("scene")
    p.add_argument("--fit", default=None)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="run the identification pipeline")
    p.add_argument("scene")
    p.add_argument("obs")
    p.add_argument("--out", required=True)
    p.add_argument("--perturbed-controller", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("refine", help="refine a controller trajectory against a fitted model")
    p.add_argument("fit")
    p.add_argument("scene")
    p.add_argument("obs")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("eval", help="evaluate a rollout or fit against observations")
    p.add_argument("input")
    p.add_argument("obs")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="topology metrics of a fit result")
    p.add_argument("fit")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SimulationDiverged as err:
        record = {
            "error": "divergence",
            "message": str(err),
            "frame": err.frame,
            "substep": err.substep,
            "command": args.command,
        }
        print(json.dumps(record), file=sys.stderr)
        return 3
    except (SchemaError, CliError) as err:
        print(json.dumps({"error": type(err).__name__, "message": str(err),
                          "command": args.command}), file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError, RuntimeError, KeyError) as err:
        print(json.dumps({"error": type(err).__name__, "message": str(err),
                          "command": args.command}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
