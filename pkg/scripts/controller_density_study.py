#!/usr/bin/env python3
"""Dense-versus-sparse controller study on the bundled grasp/stretch scenes.

Fits each scene twice (full dense controller, farthest-point 30-point
subsample), then tabulates resimulation Chamfer distance, tracking error, and
the radius-to-resolution deviations of the fitted topologies.

Usage:
    python scripts/controller_density_study.py [--seed N] [--sparse-k K] [--out CSV]
"""

import argparse
import csv
import sys
import time
from dataclasses import replace

from springfit import metrics, scenegen, sim
from springfit.fit import OptimConfig, SearchConfig, fit_first_order, fit_zero_order
from springfit.sim import ControllerTrajectory

SCENES = ("grasp_lift_cloth", "double_stretch_blob")


def full_fit(scene, controller, seed):
    base = replace(
        scene.config, connect_radius=0.002, max_degree=3, global_stiffness=1000.0
    )
    coarse = fit_zero_order(
        scene.object_rest, controller, scene.observations,
        SearchConfig(base=base, seed=seed),
    )
    return fit_first_order(
        coarse.topology, controller, scene.observations, OptimConfig(),
        coarse.config, seed=seed,
    )


def evaluate(scene, fit, controller):
    frames = sim.rollout(fit.topology, fit.config, controller, params=fit.spring_params)
    n_obj = fit.topology.n_object
    sf = [f.positions[:n_obj] for f in frames]
    cd = metrics.cd_full(sf, scene.observations)
    te = metrics.track_error_x100(sf, scene.observations.tracks)
    rrd_obj, rrd_virt = metrics.rrd_pair(fit.topology)
    return dict(
        radius=fit.config.connect_radius,
        cd_full_mm=cd,
        track_x100=te,
        rrd_object=rrd_obj,
        rrd_virtual=rrd_virt,
    )


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--sparse-k", type=int, default=30)
    parser.add_argument("--out", default=None, help="optional CSV path")
    args = parser.parse_args()

    rows = []
    for name in SCENES:
        scene = scenegen.generate(scenegen.bundled_spec(name))
        variants = {"dense": scene.controller}
        idx = scenegen.fps_indices(scene.controller.frames[0], args.sparse_k, scene.spec.seed)
        variants[f"sparse{args.sparse_k}"] = ControllerTrajectory(
            scene.controller.frames[:, idx, :], scene.controller.frame_dt
        )
        for variant, controller in variants.items():
            t0 = time.time()
            fit = full_fit(scene, controller, args.seed)
            row = dict(scene=name, controller=variant, **evaluate(scene, fit, controller))
            row["seconds"] = round(time.time() - t0, 1)
            rows.append(row)
            print(
                f"{name:22s} {variant:9s} radius={row['radius']:.4f} "
                f"cd={row['cd_full_mm']:.3f}mm track={row['track_x100']:.4f} "
                f"rrd_obj={row['rrd_object']:.3f} rrd_virt={row['rrd_virtual']:.3f} "
                f"({row['seconds']}s)"
            )

    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
        print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
