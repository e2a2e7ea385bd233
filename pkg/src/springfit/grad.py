"""Adjoint gradients of the rollout loss.

Reverse-mode differentiation through every substep of a stored trajectory,
with respect to per-spring parameters (reported in log space so positivity is
structural) and to per-frame controller positions. Chamfer correspondences
are frozen per evaluation; gradients flow through the distances, not through
the argmin switches. The ground-plane projection is differentiated as a
clamp: zero gradient through the projected normal component.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from springfit import geom, kernels, sim
from springfit.model import PhysicsConfig, SpringParams, SystemTopology
from springfit.sim import ControllerTrajectory, SimulationDiverged


@dataclass
class GradientReport:
    """Loss value plus whichever gradient blocks were requested."""

    loss: float
    stiffness_grad: np.ndarray | None = None  # d loss / d log stiffness, per spring
    damping_grad: np.ndarray | None = None  # d loss / d log damping, per spring
    controller_grad: np.ndarray | None = None  # (frames, nodes, 3), d loss / d position


def bind_tracks(object_frame0: np.ndarray, tracks_frame0: np.ndarray) -> np.ndarray:
    """Bind each track to its nearest object node at frame 0 (ties: lower index)."""
    return geom.nearest_indices(object_frame0, tracks_frame0)


def frame_loss_and_grad(
    x_obj: np.ndarray,
    cloud: np.ndarray,
    tracks_t: np.ndarray | None,
    bindings: np.ndarray | None,
    track_weight: float,
) -> tuple[float, np.ndarray]:
    """Per-frame loss (chamfer + weighted track term) and its gradient."""
    n_sim = len(x_obj)
    d2_fwd, nn_fwd = geom.sq_nearest(x_obj, cloud)
    d2_bwd, nn_bwd = geom.sq_nearest(cloud, x_obj)
    value = float(d2_fwd.mean() + d2_bwd.mean())
    grad = (2.0 / n_sim) * (x_obj - cloud[nn_fwd])
    np.add.at(grad, nn_bwd, (2.0 / len(cloud)) * (x_obj[nn_bwd] - cloud))
    if tracks_t is not None and len(tracks_t):
        diff = x_obj[bindings] - tracks_t
        value += track_weight * float(np.einsum("ij,ij->i", diff, diff).mean())
        np.add.at(grad, bindings, (2.0 * track_weight / len(tracks_t)) * diff)
    return value, grad


def _check_observations(controller: ControllerTrajectory, observations) -> None:
    if len(observations.clouds) != controller.n_frames:
        raise ValueError(
            f"observation frame count {len(observations.clouds)} does not match "
            f"rollout frame count {controller.n_frames}"
        )


def _loss_and_grads(
    topology: SystemTopology,
    config: PhysicsConfig,
    params: SpringParams,
    controller: ControllerTrajectory,
    observations,
    track_weight: float,
    want_params: bool,
    want_controller: bool,
) -> GradientReport:
    _check_observations(controller, observations)
    if len(params) != topology.n_springs:
        raise ValueError("parameter count does not match spring count")
    if observations.tracks.shape[1] > topology.n_object:
        raise ValueError("more tracks than object nodes")
    n_obj = topology.n_object
    substeps = config.substeps
    dt = config.substep_dt
    n_frames = controller.n_frames
    horizon = n_frames - 1

    _, (xs, vs) = sim.rollout(topology, config, controller, params=params, record_substeps=True)

    tracks = observations.tracks
    bindings = None
    if tracks is not None and tracks.shape[1] > 0:
        bindings = bind_tracks(xs[0], tracks[0])

    # Loss and per-frame adjoint seeds (frame 0 is the fixed initial state).
    loss = 0.0
    seeds = np.zeros((n_frames, n_obj, 3))
    for t in range(1, n_frames):
        tr_t = tracks[t] if bindings is not None else None
        value, grad = frame_loss_and_grad(
            xs[t * substeps], observations.clouds[t], tr_t, bindings, track_weight
        )
        loss += value
        seeds[t] = grad / horizon
    loss /= horizon

    ds_raw = np.zeros(topology.n_springs)
    dg_raw = np.zeros(topology.n_springs)
    ctl_grad = np.zeros_like(controller.frames)
    coll = config.collision
    grav = config.gravity_vec

    xb = np.zeros((n_obj, 3))
    vb = np.zeros((n_obj, 3))
    for t in reversed(range(horizon)):
        xb += seeds[t + 1]
        kernels.backward_interval(
            xs[t * substeps : (t + 1) * substeps + 1],
            vs[t * substeps : (t + 1) * substeps + 1],
            controller.frames[t], controller.frames[t + 1],
            topology.spring_i, topology.spring_j,
            params.stiffness, params.damping, topology.rest_length,
            topology.masses, n_obj,
            grav, dt,
            coll.ground_height, coll.friction_retain, coll.restitution,
            controller.frame_dt, substeps,
            want_params, want_controller,
            xb, vb, ds_raw, dg_raw,
            ctl_grad[t], ctl_grad[t + 1],
        )

    report = GradientReport(loss=loss)
    if want_params:
        log_s_grad = ds_raw * params.stiffness
        log_g_grad = dg_raw * params.damping
        for name, arr in (("stiffness", log_s_grad), ("damping", log_g_grad)):
            bad = np.flatnonzero(~np.isfinite(arr))
            if bad.size:
                raise RuntimeError(f"non-finite {name} gradient for spring {int(bad[0])}")
        report.stiffness_grad = log_s_grad
        report.damping_grad = log_g_grad
    if want_controller:
        if not np.isfinite(ctl_grad).all():
            raise RuntimeError("non-finite controller gradient")
        report.controller_grad = ctl_grad
    return report


def loss_and_grad_params(
    topology: SystemTopology,
    config: PhysicsConfig,
    params: SpringParams,
    controller: ControllerTrajectory,
    observations,
    track_weight: float = 1.0,
) -> GradientReport:
    """Rollout loss and its gradient with respect to log per-spring parameters."""
    return _loss_and_grads(
        topology, config, params, controller, observations, track_weight,
        want_params=True, want_controller=False,
    )


def loss_and_grad_controller(
    topology: SystemTopology,
    config: PhysicsConfig,
    params: SpringParams,
    controller: ControllerTrajectory,
    observations,
    track_weight: float = 1.0,
) -> GradientReport:
    """Rollout loss and its gradient with respect to controller positions."""
    return _loss_and_grads(
        topology, config, params, controller, observations, track_weight,
        want_params=False, want_controller=True,
    )


def sequence_loss(
    topology: SystemTopology,
    config: PhysicsConfig,
    params: SpringParams | None,
    controller: ControllerTrajectory,
    observations,
    track_weight: float = 1.0,
) -> float:
    """Forward-only rollout loss (same reduction as the gradient ops)."""
    _check_observations(controller, observations)
    if params is None:
        params = topology.params()
    frames = sim.rollout(topology, config, controller, params=params)
    n_obj = topology.n_object
    tracks = observations.tracks
    bindings = None
    if tracks is not None and tracks.shape[1] > 0:
        bindings = bind_tracks(frames[0].positions[:n_obj], tracks[0])
    total = 0.0
    for t in range(1, len(frames)):
        tr_t = tracks[t] if bindings is not None else None
        value, _ = frame_loss_and_grad(
            frames[t].positions[:n_obj], observations.clouds[t], tr_t, bindings, track_weight
        )
        total += value
    return total / (len(frames) - 1)
