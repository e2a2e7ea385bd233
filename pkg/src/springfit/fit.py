"""Hierarchical system identification.

Stage one (coarse): derivative-free search over the non-differentiable
parameters (connection radius, degree cap, homogeneous stiffness, optionally
collision response) assuming homogeneous stiffness. Stage two (dense):
adaptive-moment gradient descent on log per-spring stiffness and damping
through the differentiable simulator. Stage three: inverse-physics refinement
of the controller trajectory against the fitted object model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from springfit import geom, grad, model, sim
from springfit.model import PhysicsConfig, SpringParams, SystemTopology
from springfit.sim import ControllerTrajectory, SimulationDiverged


@dataclass(frozen=True)
class ObservationSequence:
    """Per-frame observed clouds plus identity-correspondent tracks."""

    clouds: tuple  # tuple of (m_t, 3) arrays, one per frame
    tracks: np.ndarray  # (frames, n_tracks, 3); n_tracks may be 0
    frame_dt: float

    def __post_init__(self):
        clouds = tuple(geom.as_cloud(c) for c in self.clouds)
        tracks = np.ascontiguousarray(self.tracks, dtype=np.float64)
        if tracks.ndim != 3 or tracks.shape[2] != 3:
            raise ValueError(f"tracks must be (frames, n, 3), got {tracks.shape}")
        if len(clouds) != tracks.shape[0]:
            raise ValueError("cloud and track frame counts disagree")
        if len(clouds) < 2:
            raise ValueError("need at least 2 observation frames")
        if not np.all(np.isfinite(tracks)):
            raise ValueError("tracks contain non-finite values")
        if not self.frame_dt > 0.0:
            raise ValueError("frame_dt must be positive")
        object.__setattr__(self, "clouds", clouds)
        object.__setattr__(self, "tracks", tracks)

    @property
    def n_frames(self) -> int:
        return len(self.clouds)


def track_loss(object_positions: np.ndarray, tracks_t: np.ndarray, bindings: np.ndarray) -> float:
    """Mean squared distance between bound node positions and track positions."""
    if len(tracks_t) == 0:
        return 0.0
    diff = object_positions[bindings] - tracks_t
    return float(np.einsum("ij,ij->i", diff, diff).mean())


def build_topology(object_rest, controller_frame0, config: PhysicsConfig) -> SystemTopology:
    """Object springs plus virtual contact springs for one coarse configuration."""
    topo = model.build_object_springs(
        object_rest, config.connect_radius, config.max_degree, config.global_stiffness
    )
    return model.attach_virtual_springs(
        topo, controller_frame0, object_rest, config.connect_radius, config.global_stiffness
    )


@dataclass(frozen=True)
class SearchConfig:
    """Coarse-stage stochastic search settings."""

    base: PhysicsConfig = field(default_factory=PhysicsConfig)
    iterations: int = 100
    population: int = 8
    seed: int = 0
    track_weight: float = 1.0
    radius_bounds: tuple[float, float] = (2e-4, 0.1)
    degree_bounds: tuple[int, int] = (1, 12)
    stiffness_bounds: tuple[float, float] = (1.0, 1e5)
    search_collision: bool = False  # include friction/restitution dimensions
    step_scale: float = 1.0


@dataclass(frozen=True)
class OptimConfig:
    """Adaptive-moment gradient descent settings."""

    iterations: int = 200
    learning_rate: float = 1e-3
    lr_decay: float = 1.0  # multiplicative, per step
    track_weight: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def refinement() -> "OptimConfig":
        return OptimConfig(iterations=40, learning_rate=2e-5, lr_decay=0.99)


@dataclass
class FitResult:
    """Output of one fitting stage."""

    config: PhysicsConfig
    loss: float
    loss_curve: list[float]
    stage: str
    seed: int = 0
    spring_params: SpringParams | None = None
    topology: SystemTopology | None = None
    controller: ControllerTrajectory | None = None
    refined_controller: ControllerTrajectory | None = None
    warnings: list[str] = field(default_factory=list)
    reverted: bool = False
    controller_error: float | None = None


class _CoarseSpace:
    """Encode/decode the coarse parameter vector with box bounds.

    Radius and stiffness live in log space; the degree dimension is continuous
    during search and rounded to the nearest integer >= 1 when decoding.
    """

    def __init__(self, search: SearchConfig):
        self.search = search
        lo = [math.log(search.radius_bounds[0]), float(search.degree_bounds[0]),
              math.log(search.stiffness_bounds[0])]
        hi = [math.log(search.radius_bounds[1]), float(search.degree_bounds[1]),
              math.log(search.stiffness_bounds[1])]
        steps = [0.5, 1.0, 0.7]
        if search.search_collision:
            lo += [0.0, 0.0]
            hi += [1.0, 1.0]
            steps += [0.15, 0.15]
        self.lo = np.asarray(lo)
        self.hi = np.asarray(hi)
        self.init_steps = np.asarray(steps) * search.step_scale

    @property
    def dim(self) -> int:
        return len(self.lo)

    def encode(self, config: PhysicsConfig) -> np.ndarray:
        z = [math.log(config.connect_radius), float(config.max_degree),
             math.log(config.global_stiffness)]
        if self.search.search_collision:
            z += [config.collision.friction_retain, config.collision.restitution]
        return np.clip(np.asarray(z), self.lo, self.hi)

    def decode(self, z: np.ndarray) -> PhysicsConfig:
        base = self.search.base
        degree = max(1, int(np.rint(z[1])))
        collision = base.collision
        if self.search.search_collision:
            collision = replace(collision, friction_retain=float(z[3]), restitution=float(z[4]))
        return replace(
            base,
            connect_radius=float(math.exp(z[0])),
            max_degree=degree,
            global_stiffness=float(math.exp(z[2])),
            collision=collision,
        )


def fit_zero_order(
    object_rest,
    controller: ControllerTrajectory,
    observations: ObservationSequence,
    search: SearchConfig,
) -> FitResult:
    """Coarse fit: Gaussian perturbation around the incumbent with step adaptation.

    Each iteration draws a population around the incumbent, keeps the best
    candidate if it improves, and expands/shrinks the per-dimension steps on
    success/failure. Candidates whose topology has no contact or whose rollout
    diverges score infinity. Raises if no candidate ever produced a finite
    loss, listing what was tried.
    """
    rest = geom.as_cloud(object_rest)
    rng = np.random.default_rng(search.seed)
    space = _CoarseSpace(search)
    warnings: list[str] = []
    stats = {"no_contact": 0, "diverged": 0}
    tried: list[tuple[PhysicsConfig, float]] = []

    def evaluate_config(config: PhysicsConfig) -> tuple[float, PhysicsConfig]:
        try:
            topo = build_topology(rest, controller.frames[0], config)
        except ValueError:
            stats["no_contact"] += 1
            tried.append((config, math.inf))
            return math.inf, config
        try:
            loss = grad.sequence_loss(
                topo, config, None, controller, observations, search.track_weight
            )
        except SimulationDiverged:
            stats["diverged"] += 1
            tried.append((config, math.inf))
            return math.inf, config
        if not math.isfinite(loss):
            loss = math.inf
        tried.append((config, loss))
        return loss, config

    def evaluate(z: np.ndarray) -> tuple[float, PhysicsConfig]:
        return evaluate_config(space.decode(z))

    # The initial incumbent is evaluated exactly as configured (no encode /
    # decode round-trip), so a zero budget returns the initialization verbatim.
    incumbent = space.encode(search.base)
    inc_loss, inc_config = evaluate_config(search.base)
    steps = space.init_steps.copy()
    curve = [inc_loss]
    for _ in range(search.iterations):
        cand = incumbent[None, :] + rng.standard_normal((search.population, space.dim)) * steps
        # One box-uniform explorer per generation escapes flat plateaus (for
        # example when the radius sits below the object's lattice spacing).
        cand[-1] = space.lo + rng.random(space.dim) * (space.hi - space.lo)
        cand = np.clip(cand, space.lo, space.hi)
        losses = np.empty(search.population)
        configs = []
        for p in range(search.population):
            losses[p], cfg = evaluate(cand[p])
            configs.append(cfg)
        best = int(np.argmin(losses))
        if losses[best] < inc_loss:
            incumbent = cand[best]
            inc_loss = float(losses[best])
            inc_config = configs[best]
            steps *= 1.25
        elif not math.isfinite(inc_loss):
            # Nothing valid found yet: widen the search instead of contracting.
            steps *= 1.25
        else:
            steps *= 0.85
        steps = np.clip(steps, space.init_steps * 0.02, space.init_steps * 4.0)
        curve.append(inc_loss)

    if not math.isfinite(inc_loss):
        lines = ", ".join(
            f"(radius={c.connect_radius:.4g}, degree={c.max_degree}, "
            f"stiffness={c.global_stiffness:.4g})"
            for c, _ in tried[:20]
        )
        raise RuntimeError(f"all candidates diverged or had no contact; tried: {lines}")

    if stats["no_contact"]:
        warnings.append(f"{stats['no_contact']} candidates had no contact within the radius")
    if stats["diverged"]:
        warnings.append(f"{stats['diverged']} candidate rollouts diverged")
    final_topo = build_topology(rest, controller.frames[0], inc_config)
    for node in final_topo.isolated_nodes:
        warnings.append(f"isolated node {node}: no neighbor within radius")
    return FitResult(
        config=inc_config,
        loss=inc_loss,
        loss_curve=curve,
        stage="zero-order",
        seed=search.seed,
        spring_params=final_topo.params(),
        topology=final_topo,
        controller=controller,
        warnings=warnings,
    )


def _adam_loop(theta0, eval_fn, opt: OptimConfig):
    """Generic Adam loop with best-iterate tracking.

    eval_fn(theta) -> (loss, grad) and may raise SimulationDiverged or
    RuntimeError on non-finite gradients; on that the loop reverts to the best
    valid iterate and stops.
    """
    theta = theta0.copy()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    curve: list[float] = []
    best_loss = math.inf
    best_theta = theta.copy()
    reverted = False
    lr = opt.learning_rate
    for it in range(opt.iterations):
        try:
            loss, g = eval_fn(theta)
        except (SimulationDiverged, RuntimeError):
            reverted = True
            break
        curve.append(loss)
        if loss < best_loss:
            best_loss = loss
            best_theta = theta.copy()
        m = opt.beta1 * m + (1.0 - opt.beta1) * g
        v = opt.beta2 * v + (1.0 - opt.beta2) * g * g
        m_hat = m / (1.0 - opt.beta1 ** (it + 1))
        v_hat = v / (1.0 - opt.beta2 ** (it + 1))
        theta = theta - lr * m_hat / (np.sqrt(v_hat) + opt.eps)
        lr *= opt.lr_decay
        if not np.isfinite(theta).all():
            reverted = True
            break
    else:
        # Final evaluation so the last update can still win.
        try:
            loss, _ = eval_fn(theta)
            curve.append(loss)
            if loss < best_loss:
                best_loss = loss
                best_theta = theta.copy()
        except (SimulationDiverged, RuntimeError):
            reverted = True
    return best_theta, best_loss, curve, reverted


def fit_first_order(
    topology: SystemTopology,
    controller: ControllerTrajectory,
    observations: ObservationSequence,
    opt: OptimConfig,
    config: PhysicsConfig,
    init_params: SpringParams | None = None,
    seed: int = 0,
) -> FitResult:
    """Dense fit of log per-spring stiffness and damping with Adam.

    Starts from the homogeneous initialization (or init_params) and returns
    the best iterate seen, so the result never regresses below its starting
    loss. Divergence reverts to the last valid iterate and is flagged.
    """
    params0 = init_params if init_params is not None else topology.params()
    if np.any(params0.stiffness <= 0.0) or np.any(params0.damping <= 0.0):
        raise ValueError("log-space refinement needs strictly positive initial parameters")
    n = len(params0)
    theta0 = np.concatenate([np.log(params0.stiffness), np.log(params0.damping)])

    def eval_fn(theta):
        params = SpringParams(stiffness=np.exp(theta[:n]), damping=np.exp(theta[n:]))
        report = grad.loss_and_grad_params(
            topology, config, params, controller, observations, opt.track_weight
        )
        return report.loss, np.concatenate([report.stiffness_grad, report.damping_grad])

    best_theta, best_loss, curve, reverted = _adam_loop(theta0, eval_fn, opt)
    best = SpringParams(stiffness=np.exp(best_theta[:n]), damping=np.exp(best_theta[n:]))
    return FitResult(
        config=config,
        loss=best_loss,
        loss_curve=curve,
        stage="first-order",
        seed=seed,
        spring_params=best,
        topology=topology.with_params(best),
        controller=controller,
        reverted=reverted,
    )


def refine_controller(
    topology: SystemTopology,
    params: SpringParams,
    controller_init: ControllerTrajectory,
    observations: ObservationSequence,
    opt: OptimConfig | None,
    config: PhysicsConfig,
    controller_truth: ControllerTrajectory | None = None,
    seed: int = 0,
) -> FitResult:
    """Inverse-physics refinement of the controller trajectory.

    The fitted object model is held fixed; per-frame controller positions are
    optimized with Adam. Reports the mean position error versus the ground
    truth when one is supplied (synthetic scenes).
    """
    if opt is None:
        opt = OptimConfig.refinement()
    shape = controller_init.frames.shape
    theta0 = controller_init.frames.reshape(-1)

    def eval_fn(theta):
        traj = ControllerTrajectory(theta.reshape(shape), controller_init.frame_dt)
        report = grad.loss_and_grad_controller(
            topology, config, params, traj, observations, opt.track_weight
        )
        return report.loss, report.controller_grad.reshape(-1)

    best_theta, best_loss, curve, reverted = _adam_loop(theta0, eval_fn, opt)
    refined = ControllerTrajectory(best_theta.reshape(shape), controller_init.frame_dt)
    error = None
    if controller_truth is not None:
        error = float(np.linalg.norm(refined.frames - controller_truth.frames, axis=2).mean())
    return FitResult(
        config=config,
        loss=best_loss,
        loss_curve=curve,
        stage="refine",
        seed=seed,
        spring_params=params,
        topology=topology.with_params(params),
        controller=controller_init,
        refined_controller=refined,
        reverted=reverted,
        controller_error=error,
    )
