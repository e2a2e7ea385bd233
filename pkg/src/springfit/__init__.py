"""Differentiable spring-mass system identification toolkit.

Simulates controller-driven deformable objects, fits physical parameters and
topology to observed point-cloud trajectories, and refines controller
trajectories through simulator gradients. All quantities are SI (meters,
seconds, newtons) unless a function says otherwise.
"""

from springfit.model import (
    CollisionParams,
    MassNode,
    PhysicsConfig,
    Spring,
    SpringParams,
    SystemTopology,
    attach_virtual_springs,
    build_object_springs,
    mean_resolution,
)
from springfit.sim import ControllerTrajectory, SimState, SimulationDiverged, rollout, step
from springfit.fit import (
    FitResult,
    ObservationSequence,
    OptimConfig,
    SearchConfig,
    fit_first_order,
    fit_zero_order,
    refine_controller,
    track_loss,
)
from springfit.scenegen import Scene, SceneSpec, bundled_scene_names, bundled_spec, generate
from springfit.metrics import EvalReport, cd_dyn, cd_full, contact_accuracy, rrd

__all__ = [
    "CollisionParams",
    "ControllerTrajectory",
    "EvalReport",
    "FitResult",
    "MassNode",
    "ObservationSequence",
    "OptimConfig",
    "PhysicsConfig",
    "Scene",
    "SceneSpec",
    "SearchConfig",
    "SimState",
    "SimulationDiverged",
    "Spring",
    "SpringParams",
    "SystemTopology",
    "attach_virtual_springs",
    "build_object_springs",
    "bundled_scene_names",
    "bundled_spec",
    "cd_dyn",
    "cd_full",
    "contact_accuracy",
    "fit_first_order",
    "fit_zero_order",
    "generate",
    "mean_resolution",
    "refine_controller",
    "rollout",
    "rrd",
    "step",
    "track_loss",
]
