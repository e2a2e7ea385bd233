"""Synthetic ground-truth scenes.

Builds rest geometries (rope chain, cloth grid, volumetric blob), dense or
sparse controller point sets, scripted interaction trajectories (lift,
stretch, fold, push), a high-substep reference rollout, and jittered
observations. Everything is deterministic under the scene seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from springfit import geom, model, sim
from springfit.fit import ObservationSequence, build_topology
from springfit.model import PhysicsConfig, SpringParams, SystemTopology
from springfit.sim import ControllerTrajectory, SimulationDiverged

GEOMETRIES = ("rope", "cloth", "blob")
SCRIPTS = ("lift", "stretch", "fold", "push")
CONTROLLER_KINDS = ("dense", "sparse")


@dataclass(frozen=True)
class SceneSpec:
    """Everything needed to generate one synthetic scene."""

    name: str = "scene"
    geometry: str = "cloth"
    node_shape: tuple[int, ...] = (9, 9)
    spacing: float = 0.01
    config: PhysicsConfig = field(default_factory=PhysicsConfig)  # ground truth
    controller_kind: str = "dense"
    sparse_k: int = 30
    patch_shape: tuple[int, int] = (8, 9)
    patch_spacing: float = 0.01
    clearance: float = 0.0012
    script: str = "lift"
    amplitude: float = 0.04
    n_frames: int = 21
    noise_obs: float = 0.0  # observation jitter sigma, meters
    noise_tracks: float = 0.0
    noise_controller: float = 0.0
    seed: int = 0
    reference_substep_multiplier: int = 4
    hetero_axis: int | None = None  # split axis for a two-material object
    hetero_stiffness: tuple[float, float] | None = None
    damping_fraction: float = 0.1
    blob_roundness: float = 1.3  # ellipsoid semi-axis scale; smaller = rounder blob
    patch_tilt: float = 0.0  # patch recedes from the surface at this slope

    def __post_init__(self):
        if self.geometry not in GEOMETRIES:
            raise ValueError(f"unknown geometry {self.geometry!r}")
        if self.script not in SCRIPTS:
            raise ValueError(f"unknown script {self.script!r}")
        if self.controller_kind not in CONTROLLER_KINDS:
            raise ValueError(f"unknown controller kind {self.controller_kind!r}")
        if min(self.noise_obs, self.noise_tracks, self.noise_controller) < 0.0:
            raise ValueError("noise levels must be non-negative")
        if self.n_frames < 2:
            raise ValueError("need at least 2 frames")
        if self.controller_kind == "sparse" and self.sparse_k > self.dense_count:
            raise ValueError("sparse_k exceeds the dense controller size")

    @property
    def dense_count(self) -> int:
        per = self.patch_shape[0] * self.patch_shape[1]
        return 2 * per if self.script == "stretch" else per


@dataclass
class Scene:
    """Ground truth plus observations for one generated scene."""

    spec: SceneSpec
    topology: SystemTopology  # truth, per-spring parameters included
    config: PhysicsConfig
    controller: ControllerTrajectory  # truth
    controller_perturbed: ControllerTrajectory | None
    reference_positions: np.ndarray  # (frames, n_object, 3)
    node_material: np.ndarray | None
    observations: ObservationSequence

    @property
    def object_rest(self) -> np.ndarray:
        return self.topology.positions[: self.topology.n_object]


def _rest_geometry(spec: SceneSpec) -> np.ndarray:
    h = spec.spacing
    if spec.geometry == "rope":
        (n,) = spec.node_shape
        pts = np.zeros((n, 3))
        pts[:, 0] = np.arange(n) * h
        return pts
    if spec.geometry == "cloth":
        nx, ny = spec.node_shape
        gx, gy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        pts = np.zeros((nx * ny, 3))
        pts[:, 0] = gx.ravel() * h
        pts[:, 1] = gy.ravel() * h
        return pts
    nx, ny, nz = spec.node_shape
    gx, gy, gz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    pts = np.stack([gx.ravel() * h, gy.ravel() * h, gz.ravel() * h], axis=1).astype(np.float64)
    center = pts.mean(axis=0)
    # Trim lattice corners to an ellipsoid; roundness 1.3 only shaves the
    # extreme corners, smaller values give a rounder blob.
    semi = spec.blob_roundness * np.maximum((pts.max(axis=0) - pts.min(axis=0)) / 2.0, h / 2.0)
    keep = np.einsum("ij,ij->i", (pts - center) / semi, (pts - center) / semi) <= 1.0
    return pts[keep]


def _patch_grid(anchor, na, nb, spacing, axis_a, axis_b) -> np.ndarray:
    """Grid of na*nb points whose offsets from `anchor` are multiples of `spacing`.

    The grid always contains the anchor itself, so when the anchor sits on an
    object node the closest contact pair is exactly the clearance apart no
    matter how the counts and spacings relate to the object lattice.
    """
    ga, gb = np.meshgrid(np.arange(na), np.arange(nb), indexing="ij")
    offs_a = (ga.ravel() - (na - 1) // 2) * spacing
    offs_b = (gb.ravel() - (nb - 1) // 2) * spacing
    pts = np.tile(np.asarray(anchor, dtype=np.float64), (na * nb, 1))
    pts[:, axis_a] += offs_a
    pts[:, axis_b] += offs_b
    return pts


def _nearest_node(rest: np.ndarray, target) -> np.ndarray:
    d2 = np.einsum("ij,ij->i", rest - target, rest - target)
    return rest[int(np.argmin(d2))]


def _controller_rest(spec: SceneSpec, rest: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Dense controller points and their motion-group labels (0 or 1)."""
    lo, hi = rest.min(axis=0), rest.max(axis=0)
    mid = (lo + hi) / 2.0
    pa, pb = spec.patch_shape
    if spec.script == "stretch":
        # Two patches gripping the +-x end faces. A positive tilt pulls the
        # patch away from the face as it extends outward (a pinching cone),
        # so only its center sits at the clearance distance.
        left_anchor = _nearest_node(rest, (lo[0], mid[1], mid[2])).copy()
        right_anchor = _nearest_node(rest, (hi[0], mid[1], mid[2])).copy()
        left_anchor[0] -= spec.clearance
        right_anchor[0] += spec.clearance
        left = _patch_grid(left_anchor, pa, pb, spec.patch_spacing, 1, 2)
        right = _patch_grid(right_anchor, pa, pb, spec.patch_spacing, 1, 2)
        if spec.patch_tilt:
            r_left = np.linalg.norm(left - left_anchor, axis=1)
            r_right = np.linalg.norm(right - right_anchor, axis=1)
            left[:, 0] -= spec.patch_tilt * r_left
            right[:, 0] += spec.patch_tilt * r_right
        points = np.concatenate([left, right], axis=0)
        groups = np.concatenate(
            [np.zeros(len(left), dtype=np.int64), np.ones(len(right), dtype=np.int64)]
        )
        return points, groups
    # One patch hovering over the max-x end of the object's top surface,
    # extending inward along -x from the grasp anchor. A positive tilt raises
    # the patch as it extends back, like a hand touching down edge-on.
    anchor = _nearest_node(rest, (hi[0], mid[1], hi[2])).copy()
    anchor[2] += spec.clearance
    ga, gb = np.meshgrid(np.arange(pa), np.arange(pb), indexing="ij")
    pts = np.tile(anchor, (pa * pb, 1))
    back = ga.ravel() * spec.patch_spacing
    pts[:, 0] -= back
    pts[:, 1] += (gb.ravel() - (pb - 1) // 2) * spec.patch_spacing
    pts[:, 2] += spec.patch_tilt * back
    return pts, np.zeros(len(pts), dtype=np.int64)


def _smoothstep(tau: np.ndarray) -> np.ndarray:
    return 3.0 * tau**2 - 2.0 * tau**3


def _script_offsets(spec: SceneSpec) -> np.ndarray:
    """(n_frames, 2, 3) offsets per frame and motion group."""
    tau = np.arange(spec.n_frames) / (spec.n_frames - 1)
    s = _smoothstep(tau)
    offsets = np.zeros((spec.n_frames, 2, 3))
    amp = spec.amplitude
    if spec.script == "lift":
        offsets[:, :, 2] = amp * s[:, None]
    elif spec.script == "push":
        offsets[:, :, 0] = amp * s[:, None]
    elif spec.script == "stretch":
        offsets[:, 0, 0] = -0.5 * amp * s
        offsets[:, 1, 0] = +0.5 * amp * s
    else:  # fold: semicircular arc up and over toward -x
        radius = amp / 2.0
        phi = math.pi * s
        offsets[:, :, 0] = (-radius * (1.0 - np.cos(phi)))[:, None]
        offsets[:, :, 2] = (radius * np.sin(phi))[:, None]
    return offsets


def fps_indices(points, k: int, seed: int = 0) -> np.ndarray:
    """Farthest-point sampling order, seeded at index `seed % len(points)`."""
    pts = geom.as_cloud(points)
    n = len(pts)
    if k > n:
        raise ValueError(f"cannot subsample {k} from {n} points")
    if k <= 0:
        raise ValueError("k must be positive")
    start = seed % n
    chosen = [start]
    min_d2 = np.einsum("ij,ij->i", pts - pts[start], pts - pts[start])
    for _ in range(k - 1):
        nxt = int(np.argmax(min_d2))
        chosen.append(nxt)
        d2 = np.einsum("ij,ij->i", pts - pts[nxt], pts - pts[nxt])
        min_d2 = np.minimum(min_d2, d2)
    return np.asarray(chosen, dtype=np.int64)


def sparse_subsample(dense_controller, k: int, seed: int = 0) -> np.ndarray:
    """Farthest-point subsample of a dense controller cloud, in visit order."""
    pts = geom.as_cloud(dense_controller)
    return pts[fps_indices(pts, k, seed)]


def _material_stiffness(spec: SceneSpec, rest: np.ndarray, topo: SystemTopology):
    """Per-node material labels and per-spring true stiffness overrides."""
    if spec.hetero_stiffness is None:
        return None, None
    axis = spec.hetero_axis if spec.hetero_axis is not None else 0
    coords = rest[:, axis]
    material = (coords >= np.median(coords)).astype(np.int64)
    values = np.asarray(spec.hetero_stiffness, dtype=np.float64)
    k = topo.n_object_springs
    s = topo.stiffness.copy()
    s[:k] = 0.5 * (values[material[topo.spring_i[:k]]] + values[material[topo.spring_j[:k]]])
    return material, s


def truth_params(scene_topology: SystemTopology) -> SpringParams:
    return scene_topology.params()


def generate(spec: SceneSpec) -> Scene:
    """Generate ground truth and observations for a scene spec.

    The reference rollout runs at `reference_substep_multiplier` times the
    configured substep count so integration error is negligible relative to
    fitting error. Observations are the reference object clouds plus i.i.d.
    Gaussian jitter; tracks are exact node trajectories plus jitter.
    """
    rest = _rest_geometry(spec)
    dense_ctl, groups = _controller_rest(spec, rest)
    if spec.controller_kind == "sparse":
        idx = fps_indices(dense_ctl, spec.sparse_k, spec.seed)
        ctl_rest = dense_ctl[idx]
        groups = groups[idx]
    else:
        ctl_rest = dense_ctl

    offsets = _script_offsets(spec)
    frames = ctl_rest[None, :, :] + offsets[:, groups, :]
    controller = ControllerTrajectory(frames=frames, frame_dt=spec.config.frame_dt)

    topo = build_topology(rest, ctl_rest, spec.config)
    material, stiffness = _material_stiffness(spec, rest, topo)
    if stiffness is not None:
        damping = spec.damping_fraction * stiffness
        topo = topo.with_params(SpringParams(stiffness=stiffness, damping=damping))
    else:
        damping = spec.damping_fraction * topo.stiffness
        topo = topo.with_params(SpringParams(stiffness=topo.stiffness.copy(), damping=damping))

    ref_config = replace(spec.config, substeps=spec.config.substeps * spec.reference_substep_multiplier)
    try:
        ref_frames = sim.rollout(topo, ref_config, controller)
    except SimulationDiverged as err:
        raise ValueError(f"scene spec unstable: {err}") from err
    n_obj = topo.n_object
    reference = np.stack([f.positions[:n_obj] for f in ref_frames], axis=0)

    rng = np.random.default_rng(spec.seed)
    obs_noise = rng.standard_normal(reference.shape)
    track_noise = rng.standard_normal(reference.shape)
    ctl_noise = rng.standard_normal(frames.shape)

    clouds = reference + spec.noise_obs * obs_noise if spec.noise_obs > 0 else reference.copy()
    tracks = reference + spec.noise_tracks * track_noise if spec.noise_tracks > 0 else reference.copy()
    observations = ObservationSequence(
        clouds=tuple(clouds[t] for t in range(len(clouds))),
        tracks=tracks,
        frame_dt=spec.config.frame_dt,
    )
    perturbed = None
    if spec.noise_controller > 0:
        perturbed = ControllerTrajectory(
            frames=frames + spec.noise_controller * ctl_noise, frame_dt=spec.config.frame_dt
        )
    return Scene(
        spec=spec,
        topology=topo,
        config=spec.config,
        controller=controller,
        controller_perturbed=perturbed,
        reference_positions=reference,
        node_material=material,
        observations=observations,
    )


def _bundled_specs() -> dict[str, SceneSpec]:
    # Patch grids are anchored on an object node so the closest contact pair
    # sits exactly at the clearance distance, keeping contact discoverable
    # from the default 0.002 m initial radius. The grasp/stretch pair uses
    # tilted patches over curved regions: farthest-point subsamples then have
    # genuinely worse reach, which is what separates the dense and sparse
    # controller fits.
    gravity_soft = (0.0, 0.0, -2.0)
    cloth_config = PhysicsConfig(
        connect_radius=0.0265,
        max_degree=6,
        global_stiffness=220.0,
        gravity=gravity_soft,
        frame_dt=0.025,
        substeps=48,
    )
    blob_config = PhysicsConfig(
        connect_radius=0.031,
        max_degree=8,
        global_stiffness=220.0,
        gravity=gravity_soft,
        frame_dt=0.025,
        substeps=48,
    )
    # Materials split along the stretch axis: a series chain distributes its
    # elongation inversely to stiffness, so the heterogeneity is identifiable
    # from geometry alone (a split across the load path is not).
    two_mat_config = PhysicsConfig(
        connect_radius=0.031,
        max_degree=6,
        global_stiffness=160.0,
        gravity=(0.0, 0.0, -1.0),
        frame_dt=0.025,
        substeps=32,
    )
    rope_config = PhysicsConfig(
        connect_radius=0.036,
        max_degree=4,
        global_stiffness=300.0,
        gravity=gravity_soft,
        frame_dt=0.025,
        substeps=32,
    )
    return {
        "grasp_lift_cloth": SceneSpec(
            name="grasp_lift_cloth",
            geometry="cloth",
            node_shape=(12, 12),
            spacing=0.008,
            config=cloth_config,
            patch_shape=(14, 13),
            patch_spacing=0.0065,
            script="lift",
            amplitude=0.05,
            n_frames=18,
            seed=11,
            patch_tilt=0.5,
        ),
        "double_stretch_blob": SceneSpec(
            name="double_stretch_blob",
            geometry="blob",
            node_shape=(7, 6, 5),
            spacing=0.009,
            config=blob_config,
            patch_shape=(9, 7),
            patch_spacing=0.0075,
            script="stretch",
            amplitude=0.05,
            n_frames=18,
            seed=12,
            blob_roundness=1.15,
            patch_tilt=0.5,
        ),
        "two_material_cloth": SceneSpec(
            name="two_material_cloth",
            geometry="cloth",
            node_shape=(12, 8),
            spacing=0.01,
            config=two_mat_config,
            patch_shape=(7, 3),
            patch_spacing=0.01,
            script="stretch",
            amplitude=0.05,
            n_frames=20,
            hetero_axis=0,
            hetero_stiffness=(80.0, 320.0),
            seed=13,
        ),
        "push_rope": SceneSpec(
            name="push_rope",
            geometry="rope",
            node_shape=(26,),
            spacing=0.012,
            config=rope_config,
            patch_shape=(7, 3),
            patch_spacing=0.006,
            script="push",
            amplitude=0.05,
            n_frames=21,
            seed=14,
        ),
    }


def bundled_scene_names() -> tuple[str, ...]:
    return tuple(sorted(_bundled_specs()))


def bundled_spec(name: str) -> SceneSpec:
    specs = _bundled_specs()
    if name not in specs:
        raise KeyError(f"unknown bundled scene {name!r}; have {sorted(specs)}")
    return specs[name]
