"""Spring-mass model construction.

Builds the object topology from the rest geometry (degree-capped greedy
connection in ascending-distance order within the connection radius) and
attaches virtual contact springs between controller and object nodes from
their frame-0 configuration. Controller nodes are boundary-driven and never
integrated; every node carries unit mass by default.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from springfit import geom

OBJECT = "object"
CONTROLLER = "controller"
VIRTUAL = "virtual"

# Fresh springs are mildly under-damped; the first-order stage corrects this.
DAMPING_INIT_FRACTION = 0.1


@dataclass(frozen=True)
class MassNode:
    """One particle of the object or controller."""

    position: tuple[float, float, float]
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    mass: float = 1.0
    kind: str = OBJECT

    def __post_init__(self):
        if not self.mass > 0.0:
            raise ValueError("node mass must be positive")
        if self.kind not in (OBJECT, CONTROLLER):
            raise ValueError(f"unknown node kind {self.kind!r}")


@dataclass(frozen=True)
class Spring:
    """A single spring between nodes i and j."""

    i: int
    j: int
    stiffness: float  # N/m
    damping: float  # N*s/m
    rest_length: float  # m
    kind: str = OBJECT

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError("spring endpoints must differ")
        if not self.stiffness > 0.0:
            raise ValueError("stiffness must be positive")
        if self.damping < 0.0:
            raise ValueError("damping must be non-negative")
        if self.rest_length < 0.0:
            raise ValueError("rest length must be non-negative")
        if self.kind not in (OBJECT, VIRTUAL):
            raise ValueError(f"unknown spring kind {self.kind!r}")


@dataclass(frozen=True)
class CollisionParams:
    """Ground-plane response: plane z = ground_height, +z normal."""

    ground_height: float = -10.0
    friction_retain: float = 1.0  # tangential velocity kept on contact
    restitution: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.friction_retain <= 1.0:
            raise ValueError("friction_retain must be in [0, 1]")
        if not 0.0 <= self.restitution <= 1.0:
            raise ValueError("restitution must be in [0, 1]")


@dataclass(frozen=True)
class PhysicsConfig:
    """Coarse fit targets plus the fixed integration constants.

    connect_radius and max_degree induce the topology; global_stiffness is the
    homogeneous stiffness used before per-spring refinement; collision holds
    the ground-plane parameters.
    """

    connect_radius: float = 0.002
    max_degree: int = 3
    global_stiffness: float = 1000.0
    collision: CollisionParams = field(default_factory=CollisionParams)
    gravity: tuple[float, float, float] = (0.0, 0.0, -9.81)
    frame_dt: float = 0.04
    substeps: int = 32

    def __post_init__(self):
        if not self.connect_radius > 0.0:
            raise ValueError("connect_radius must be positive")
        if int(self.max_degree) < 1:
            raise ValueError("max_degree must be >= 1")
        if not self.global_stiffness > 0.0:
            raise ValueError("global_stiffness must be positive")
        if int(self.substeps) < 1:
            raise ValueError("substeps must be >= 1")
        if not self.frame_dt > 0.0:
            raise ValueError("frame_dt must be positive")

    @property
    def gravity_vec(self) -> np.ndarray:
        return np.asarray(self.gravity, dtype=np.float64)

    @property
    def substep_dt(self) -> float:
        return self.frame_dt / self.substeps


@dataclass(frozen=True)
class SpringParams:
    """Per-spring stiffness/damping vectors (the differentiable parameters)."""

    stiffness: np.ndarray
    damping: np.ndarray

    def __post_init__(self):
        s = np.ascontiguousarray(self.stiffness, dtype=np.float64)
        g = np.ascontiguousarray(self.damping, dtype=np.float64)
        if s.shape != g.shape or s.ndim != 1:
            raise ValueError("stiffness and damping must be matching 1-d arrays")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(g))):
            raise ValueError("spring parameters must be finite")
        if np.any(s <= 0.0) or np.any(g < 0.0):
            raise ValueError("need stiffness > 0 and damping >= 0")
        object.__setattr__(self, "stiffness", s)
        object.__setattr__(self, "damping", g)

    def __len__(self) -> int:
        return len(self.stiffness)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class SystemTopology:
    """Nodes at rest plus object and virtual springs.

    Nodes are stored object-first: indices < n_object are object nodes, the
    rest are controller nodes. Springs are stored object-first as well;
    springs[:n_object_springs] are object springs, the remainder virtual.
    Immutable and shareable across simulation workers.
    """

    positions: np.ndarray  # (n_nodes, 3) rest positions
    n_object: int
    spring_i: np.ndarray  # (n_springs,) int64
    spring_j: np.ndarray
    stiffness: np.ndarray  # (n_springs,) initial per-spring values
    damping: np.ndarray
    rest_length: np.ndarray
    n_object_springs: int
    construction_radius: float
    masses: np.ndarray | None = None  # (n_nodes,), defaults to unit mass
    isolated_nodes: tuple[int, ...] = ()

    def __post_init__(self):
        pos = geom.as_cloud(self.positions)
        masses = self.masses
        if masses is None:
            masses = np.ones(len(pos), dtype=np.float64)
        masses = np.ascontiguousarray(masses, dtype=np.float64)
        if np.any(masses <= 0.0):
            raise ValueError("node masses must be positive")
        object.__setattr__(self, "positions", _frozen(pos))
        object.__setattr__(self, "masses", _frozen(masses))
        object.__setattr__(self, "spring_i", _frozen(np.asarray(self.spring_i, dtype=np.int64)))
        object.__setattr__(self, "spring_j", _frozen(np.asarray(self.spring_j, dtype=np.int64)))
        object.__setattr__(self, "stiffness", _frozen(np.asarray(self.stiffness, dtype=np.float64)))
        object.__setattr__(self, "damping", _frozen(np.asarray(self.damping, dtype=np.float64)))
        object.__setattr__(self, "rest_length", _frozen(np.asarray(self.rest_length, dtype=np.float64)))
        # Flattened scatter index for accumulating +f at i and -f at j with one
        # bincount; hot path of both simulation and its adjoint.
        flat = np.concatenate([self.spring_i, self.spring_j])
        object.__setattr__(
            self, "_scatter3", _frozen((flat[:, None] * 3 + np.arange(3)).ravel())
        )

    @property
    def n_nodes(self) -> int:
        return len(self.positions)

    @property
    def n_controller(self) -> int:
        return self.n_nodes - self.n_object

    @property
    def n_springs(self) -> int:
        return len(self.spring_i)

    @property
    def n_virtual_springs(self) -> int:
        return self.n_springs - self.n_object_springs

    def node_kind(self, idx: int) -> str:
        return OBJECT if idx < self.n_object else CONTROLLER

    def spring_kind(self, idx: int) -> str:
        return OBJECT if idx < self.n_object_springs else VIRTUAL

    def springs(self) -> list[Spring]:
        return [
            Spring(
                i=int(self.spring_i[k]),
                j=int(self.spring_j[k]),
                stiffness=float(self.stiffness[k]),
                damping=float(self.damping[k]),
                rest_length=float(self.rest_length[k]),
                kind=self.spring_kind(k),
            )
            for k in range(self.n_springs)
        ]

    def object_degrees(self) -> np.ndarray:
        """Object-spring degree per node (virtual springs do not count)."""
        deg = np.zeros(self.n_nodes, dtype=np.int64)
        k = self.n_object_springs
        np.add.at(deg, self.spring_i[:k], 1)
        np.add.at(deg, self.spring_j[:k], 1)
        return deg

    def scatter_pair_forces(self, per_spring: np.ndarray) -> np.ndarray:
        """Accumulate +value at node i and -value at node j for every spring."""
        w = np.concatenate([per_spring, -per_spring], axis=0)
        out = np.bincount(self._scatter3, weights=w.ravel(), minlength=3 * self.n_nodes)
        return out.reshape(self.n_nodes, 3)

    def params(self) -> SpringParams:
        return SpringParams(stiffness=self.stiffness.copy(), damping=self.damping.copy())

    def with_params(self, params: SpringParams) -> "SystemTopology":
        if len(params) != self.n_springs:
            raise ValueError("parameter count does not match spring count")
        return replace(self, stiffness=params.stiffness.copy(), damping=params.damping.copy())


def build_object_springs(
    rest_points,
    connect_radius: float,
    max_degree: int,
    global_stiffness: float,
) -> SystemTopology:
    """Connect object nodes within the connection radius, shortest pairs first.

    Candidate pairs are all pairs at distance <= connect_radius; they are
    admitted in ascending (distance, i, j) order while both endpoints are
    below max_degree. A connection counts toward both endpoints' degrees.
    Nodes with no candidate neighbor at all are recorded as isolated (a
    warning, not an error).
    """
    rest = geom.as_cloud(rest_points)
    if not connect_radius > 0.0:
        raise ValueError("connect_radius must be positive")
    if int(max_degree) < 1:
        raise ValueError("max_degree must be >= 1")
    if not global_stiffness > 0.0:
        raise ValueError("global_stiffness must be positive")
    n = len(rest)
    index = geom.NeighborIndex(rest, cell_size=connect_radius)
    pairs: list[tuple[float, int, int]] = []
    has_neighbor = np.zeros(n, dtype=bool)
    for i in range(n):
        for j, dist in index.radius_neighbors(rest[i], connect_radius):
            if j == i:
                continue
            has_neighbor[i] = True
            if i < j:
                pairs.append((dist, i, j))
    pairs.sort()
    degree = np.zeros(n, dtype=np.int64)
    cap = int(max_degree)
    si, sj, lengths = [], [], []
    for dist, i, j in pairs:
        if degree[i] >= cap or degree[j] >= cap:
            continue
        si.append(i)
        sj.append(j)
        lengths.append(dist)
        degree[i] += 1
        degree[j] += 1
    isolated = tuple(int(i) for i in np.flatnonzero(~has_neighbor))
    count = len(si)
    return SystemTopology(
        positions=rest,
        n_object=n,
        spring_i=np.asarray(si, dtype=np.int64),
        spring_j=np.asarray(sj, dtype=np.int64),
        stiffness=np.full(count, float(global_stiffness)),
        damping=np.full(count, DAMPING_INIT_FRACTION * float(global_stiffness)),
        rest_length=np.asarray(lengths, dtype=np.float64),
        n_object_springs=count,
        construction_radius=float(connect_radius),
        isolated_nodes=isolated,
    )


def attach_virtual_springs(
    topology: SystemTopology,
    controller_frame0,
    object_frame0,
    connect_radius: float,
    global_stiffness: float,
) -> SystemTopology:
    """Append controller nodes and one virtual spring per contact pair.

    Every (controller, object) pair at distance <= connect_radius at frame 0
    gets a virtual spring whose rest length is that distance. Virtual springs
    are exempt from the object degree cap. Raises if no pair is in range,
    since the simulation would be uncontrolled.
    """
    if topology.n_controller != 0:
        raise ValueError("topology already has controller nodes attached")
    controller = geom.as_cloud(controller_frame0)
    obj = geom.as_cloud(object_frame0)
    if len(controller) == 0 or len(obj) == 0:
        raise ValueError("controller and object clouds must be non-empty")
    if len(obj) != topology.n_object:
        raise ValueError("object_frame0 does not match the topology's object nodes")
    index = geom.NeighborIndex(obj, cell_size=connect_radius)
    vi, vj, lengths = [], [], []
    n_obj = topology.n_object
    for c in range(len(controller)):
        for o, dist in index.radius_neighbors(controller[c], connect_radius):
            vi.append(n_obj + c)  # controller node index after appending
            vj.append(o)
            lengths.append(dist)
    if not vi:
        raise ValueError("no contact detected")
    count = len(vi)
    positions = np.concatenate([topology.positions, controller], axis=0)
    return SystemTopology(
        positions=positions,
        n_object=n_obj,
        spring_i=np.concatenate([topology.spring_i, np.asarray(vi, dtype=np.int64)]),
        spring_j=np.concatenate([topology.spring_j, np.asarray(vj, dtype=np.int64)]),
        stiffness=np.concatenate([topology.stiffness, np.full(count, float(global_stiffness))]),
        damping=np.concatenate(
            [topology.damping, np.full(count, DAMPING_INIT_FRACTION * float(global_stiffness))]
        ),
        rest_length=np.concatenate([topology.rest_length, np.asarray(lengths, dtype=np.float64)]),
        n_object_springs=topology.n_object_springs,
        construction_radius=topology.construction_radius,  # object-spring radius
        isolated_nodes=topology.isolated_nodes,
    )


def mean_resolution(object_rest) -> float:
    """Spatial discretization resolution of a rest cloud.

    For each node: mean distance to its 4 nearest other nodes; returns the
    mean of that over all nodes. Requires at least 5 nodes.
    """
    rest = geom.as_cloud(object_rest)
    n = len(rest)
    if n < 5:
        raise ValueError("mean resolution needs at least 5 nodes")
    diff = rest[:, None, :] - rest[None, :, :]
    d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    np.fill_diagonal(d, np.inf)
    d.sort(axis=1)
    return float(d[:, :4].mean())
