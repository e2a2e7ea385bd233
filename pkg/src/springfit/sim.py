"""Deterministic forward simulation of the spring-mass system.

Object nodes advance by semi-implicit Euler under spring, dashpot-damping and
external (gravity) forces; controller nodes are moving boundary conditions
that snap to interpolated targets each substep. Ground contact is a single
plane with projection, restitution on the normal velocity and tangential
velocity retention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from springfit.kernels import BLOWUP_LIMIT, LENGTH_GUARD
from springfit.model import PhysicsConfig, Spring, SpringParams, SystemTopology


class SimulationDiverged(RuntimeError):
    """Raised when any state component stops being finite."""

    def __init__(self, substep: int | None = None, frame: int | None = None):
        self.substep = substep
        self.frame = frame
        msg = "simulation diverged"
        if substep is not None:
            msg += f" at substep {substep}"
        if frame is not None:
            msg += f" (frame {frame})"
        super().__init__(msg)


@dataclass
class SimState:
    """Positions and velocities for all nodes (object first, controller after)."""

    positions: np.ndarray  # (n_nodes, 3)
    velocities: np.ndarray
    time: float = 0.0

    def copy(self) -> "SimState":
        return SimState(self.positions.copy(), self.velocities.copy(), self.time)


@dataclass(frozen=True)
class ControllerTrajectory:
    """Per-frame positions of every controller node."""

    frames: np.ndarray  # (n_frames, n_controller, 3)
    frame_dt: float

    def __post_init__(self):
        frames = np.ascontiguousarray(self.frames, dtype=np.float64)
        if frames.ndim != 3 or frames.shape[2] != 3:
            raise ValueError(f"expected (frames, nodes, 3) array, got {frames.shape}")
        if frames.shape[0] < 2:
            raise ValueError("controller trajectory needs at least 2 frames")
        if not np.all(np.isfinite(frames)):
            raise ValueError("controller trajectory contains non-finite values")
        if not self.frame_dt > 0.0:
            raise ValueError("frame_dt must be positive")
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.frames.shape[1]


def spring_force(state: SimState, spring: Spring) -> np.ndarray:
    """Hooke force on node i from one spring (force on j is the negation)."""
    d = state.positions[spring.j] - state.positions[spring.i]
    length = float(np.linalg.norm(d))
    if length <= LENGTH_GUARD:
        return np.zeros(3)
    return spring.stiffness * (length - spring.rest_length) * (d / length)


def damping_force(state: SimState, spring: Spring) -> np.ndarray:
    """Dashpot force on node i: damps the full relative velocity."""
    return -spring.damping * (state.velocities[spring.i] - state.velocities[spring.j])


def internal_forces(
    positions: np.ndarray,
    velocities: np.ndarray,
    topology: SystemTopology,
    params: SpringParams | None = None,
) -> tuple[np.ndarray, int]:
    """Accumulated spring + damping force per node.

    Returns (forces, coincident_count) where coincident_count is the number of
    springs whose endpoints were within the length guard (their spring force
    contribution is zero).
    """
    i_idx, j_idx = topology.spring_i, topology.spring_j
    stiffness = params.stiffness if params is not None else topology.stiffness
    damping = params.damping if params is not None else topology.damping
    d = positions[j_idx] - positions[i_idx]
    length = np.sqrt(np.einsum("ij,ij->i", d, d))
    ok = length > LENGTH_GUARD
    # coeff is exactly zero for guarded springs; inv is finite there by the max.
    coeff = stiffness * (length - topology.rest_length) * ok / np.maximum(length, LENGTH_GUARD)
    f = d * coeff[:, None]
    f -= damping[:, None] * (velocities[i_idx] - velocities[j_idx])
    forces = topology.scatter_pair_forces(f)
    return forces, int(np.count_nonzero(~ok))


def _apply_ground(positions, velocities, collision) -> None:
    below = positions[:, 2] < collision.ground_height
    if not below.any():
        return
    positions[below, 2] = collision.ground_height
    velocities[below, 2] *= -collision.restitution
    velocities[below, :2] *= collision.friction_retain


def step(
    state: SimState,
    topology: SystemTopology,
    config: PhysicsConfig,
    controller_positions: np.ndarray,
    controller_velocities: np.ndarray,
    params: SpringParams | None = None,
    substep_index: int | None = None,
) -> SimState:
    """Advance one substep of dt = frame_dt / substeps.

    Object nodes integrate semi-implicitly (velocity from force, position from
    the new velocity), then the ground response is applied, then controller
    nodes snap to the supplied targets.
    """
    dt = config.substep_dt
    n_obj = topology.n_object
    forces, _ = internal_forces(state.positions, state.velocities, topology, params)
    m = topology.masses[:n_obj, None]
    f_obj = forces[:n_obj] + m * config.gravity_vec
    v_new = state.velocities[:n_obj] + dt * f_obj / m
    x_new = state.positions[:n_obj] + dt * v_new
    _apply_ground(x_new, v_new, config.collision)

    positions = np.empty_like(state.positions)
    velocities = np.empty_like(state.velocities)
    positions[:n_obj] = x_new
    velocities[:n_obj] = v_new
    positions[n_obj:] = controller_positions
    velocities[n_obj:] = controller_velocities
    if not np.isfinite(positions).all() or not np.isfinite(velocities).all() or np.abs(x_new).max(initial=0.0) > BLOWUP_LIMIT:
        raise SimulationDiverged(substep=substep_index)
    return SimState(positions, velocities, state.time + dt)


def initial_state(topology: SystemTopology, controller: ControllerTrajectory) -> SimState:
    """Rest-geometry object nodes plus controller nodes at frame 0."""
    if controller.n_nodes != topology.n_controller:
        raise ValueError("controller node count does not match topology")
    n_obj = topology.n_object
    positions = topology.positions.copy()
    positions[n_obj:] = controller.frames[0]
    velocities = np.zeros_like(positions)
    velocities[n_obj:] = (controller.frames[1] - controller.frames[0]) / controller.frame_dt
    return SimState(positions, velocities, 0.0)


def controller_substep_targets(
    controller: ControllerTrajectory, frame: int, substeps: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(start frame value, per-frame displacement, constant velocity) for one interval."""
    start = controller.frames[frame]
    seg = controller.frames[frame + 1] - start
    vel = seg / controller.frame_dt
    return start, seg, vel


def rollout(
    topology: SystemTopology,
    config: PhysicsConfig,
    controller: ControllerTrajectory,
    initial: SimState | None = None,
    params: SpringParams | None = None,
    record_substeps: bool = False,
):
    """Simulate every frame of the controller trajectory.

    Each frame advances by `config.substeps` substeps; controller targets are
    linear interpolations of the trajectory within the frame, with the
    controller velocity held at frame displacement / frame dt. Returns the
    list of per-frame SimStates (frame 0 is the initial state). With
    record_substeps=True, also returns (positions, velocities) arrays of the
    object nodes at every substep boundary, shape (total_substeps + 1,
    n_object, 3); controller states at substep boundaries are implied by the
    trajectory interpolation and are not stored.

    Divergence is reported with the offending frame index.
    """
    from springfit import kernels

    if abs(controller.frame_dt - config.frame_dt) > 1e-12 * max(1.0, config.frame_dt):
        raise ValueError("controller frame_dt does not match config.frame_dt")
    if controller.n_nodes != topology.n_controller:
        raise ValueError("controller node count does not match topology")
    state = initial.copy() if initial is not None else initial_state(topology, controller)
    n_frames = controller.n_frames
    substeps = config.substeps
    n_obj = topology.n_object
    stiffness = params.stiffness if params is not None else topology.stiffness
    damping = params.damping if params is not None else topology.damping
    if len(stiffness) != topology.n_springs:
        raise ValueError("parameter count does not match spring count")
    frames = [state.copy()]
    if record_substeps:
        total = (n_frames - 1) * substeps
        xs = np.empty((total + 1, n_obj, 3))
        vs = np.empty((total + 1, n_obj, 3))
        xs[0] = state.positions[:n_obj]
        vs[0] = state.velocities[:n_obj]
    else:
        scratch_x = np.empty((substeps, n_obj, 3))
        scratch_v = np.empty((substeps, n_obj, 3))
    x = state.positions
    v = state.velocities
    grav = config.gravity_vec
    coll = config.collision
    for t in range(n_frames - 1):
        if record_substeps:
            xs_out = xs[t * substeps + 1 : (t + 1) * substeps + 1]
            vs_out = vs[t * substeps + 1 : (t + 1) * substeps + 1]
        else:
            xs_out, vs_out = scratch_x, scratch_v
        bad = kernels.run_interval(
            x, v,
            topology.spring_i, topology.spring_j,
            stiffness, damping, topology.rest_length,
            topology.masses, n_obj,
            grav, config.substep_dt,
            coll.ground_height, coll.friction_retain, coll.restitution,
            controller.frames[t], controller.frames[t + 1],
            config.frame_dt, substeps,
            xs_out, vs_out,
        )
        if bad >= 0:
            raise SimulationDiverged(substep=t * substeps + bad, frame=t + 1)
        frames.append(SimState(x.copy(), v.copy(), state.time + (t + 1) * config.frame_dt))
    if record_substeps:
        return frames, (xs, vs)
    return frames


def controller_position_at(
    controller: ControllerTrajectory, frame: int, substep: int, substeps: int
) -> np.ndarray:
    """Controller positions at the start of a given substep of one interval.

    Bit-identical to the values the rollout loop produced at that substep.
    """
    if substep == 0:
        return controller.frames[frame]
    if substep == substeps:
        return controller.frames[frame + 1]
    start = controller.frames[frame]
    seg = controller.frames[frame + 1] - start
    return start + (substep / substeps) * seg


def mechanical_energy(
    state: SimState,
    topology: SystemTopology,
    config: PhysicsConfig,
    params: SpringParams | None = None,
) -> float:
    """Kinetic + elastic + gravitational energy of the object nodes (joules)."""
    n_obj = topology.n_object
    m = topology.masses[:n_obj]
    v = state.velocities[:n_obj]
    kinetic = 0.5 * float(np.sum(m * np.einsum("ij,ij->i", v, v)))
    stiffness = params.stiffness if params is not None else topology.stiffness
    d = state.positions[topology.spring_j] - state.positions[topology.spring_i]
    length = np.sqrt(np.einsum("ij,ij->i", d, d))
    elastic = 0.5 * float(np.sum(stiffness * (length - topology.rest_length) ** 2))
    potential = -float(np.sum(m * (state.positions[:n_obj] @ config.gravity_vec)))
    return kinetic + elastic + potential
