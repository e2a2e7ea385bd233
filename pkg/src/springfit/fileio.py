"""Bit-stable text file formats for scenes, observations, rollouts, fits, reports.

Files are line-oriented with an explicit schema-version header. Floats are
serialized with repr (shortest round-trip form), so write-then-read
reproduces every value exactly and determinism is byte-checkable with diff.
Writes are atomic (temp file + rename).

Layout: a header line ``#springfit <kind> <major>`` followed by sections.
``[scalars <name>]`` holds one ``key value`` pair per line, ``[array <name>
<dtype> <dims...>]`` holds one row per line of the array flattened to its
last axis, ``[lines <name> <count>]`` holds raw text lines (may contain
spaces).
"""

from __future__ import annotations

import os
from dataclasses import replace

import numpy as np

from springfit.fit import FitResult, ObservationSequence
from springfit.metrics import EvalReport
from springfit.model import CollisionParams, PhysicsConfig, SpringParams, SystemTopology
from springfit.scenegen import Scene, SceneSpec
from springfit.sim import ControllerTrajectory

FORMAT_VERSION = 1

EXTENSIONS = {
    "scenespec": ".spec",
    "scene": ".scene",
    "observations": ".obs",
    "rollout": ".roll",
    "fit": ".fit",
    "report": ".report",
}


class SchemaError(ValueError):
    """File does not match the expected kind/version/shape."""


def _fmt_scalar(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, tuple):
        return "(" + ",".join(_fmt_scalar(v) for v in value) + ")"
    if isinstance(value, str):
        if not value or any(ch.isspace() for ch in value) or value.startswith("("):
            raise ValueError(f"cannot serialize string scalar {value!r}")
        return value
    raise TypeError(f"cannot serialize scalar of type {type(value)}")


def _parse_scalar(token: str):
    if token == "none":
        return None
    if token == "true":
        return True
    if token == "false":
        return False
    if token.startswith("(") and token.endswith(")"):
        inner = token[1:-1]
        if not inner:
            return ()
        return tuple(_parse_scalar(part) for part in inner.split(","))
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        pass
    return token


_DTYPES = {"f8": np.float64, "i8": np.int64}


def _fmt_cell(value, dtype: str) -> str:
    return str(int(value)) if dtype == "i8" else repr(float(value))


class Document:
    """Ordered sections of scalars, arrays and raw lines."""

    def __init__(self, kind: str):
        self.kind = kind
        self._scalars: dict[str, dict] = {}
        self._arrays: dict[str, np.ndarray] = {}
        self._lines: dict[str, list[str]] = {}
        self._order: list[tuple[str, str]] = []

    def add_scalars(self, name: str, mapping: dict) -> None:
        self._scalars[name] = dict(mapping)
        self._order.append(("scalars", name))

    def add_array(self, name: str, arr, dtype: str = "f8") -> None:
        self._arrays[name] = np.ascontiguousarray(arr, dtype=_DTYPES[dtype])
        self._order.append(("array", name))

    def add_lines(self, name: str, lines: list[str]) -> None:
        for line in lines:
            if "\n" in line:
                raise ValueError("raw lines cannot contain newlines")
        self._lines[name] = list(lines)
        self._order.append(("lines", name))

    def scalars(self, name: str) -> dict:
        if name not in self._scalars:
            raise SchemaError(f"missing [scalars {name}] section")
        return self._scalars[name]

    def array(self, name: str) -> np.ndarray:
        if name not in self._arrays:
            raise SchemaError(f"missing [array {name}] section")
        return self._arrays[name]

    def has(self, name: str) -> bool:
        return name in self._arrays or name in self._scalars or name in self._lines

    def lines(self, name: str) -> list[str]:
        if name not in self._lines:
            raise SchemaError(f"missing [lines {name}] section")
        return self._lines[name]

    def write(self, path: str) -> None:
        chunks = [f"#springfit {self.kind} {FORMAT_VERSION}\n"]
        for sect_kind, name in self._order:
            if sect_kind == "scalars":
                chunks.append(f"[scalars {name}]\n")
                for key, value in self._scalars[name].items():
                    chunks.append(f"{key} {_fmt_scalar(value)}\n")
            elif sect_kind == "array":
                arr = self._arrays[name]
                dtype = "i8" if arr.dtype == np.int64 else "f8"
                dims = " ".join(str(d) for d in arr.shape)
                chunks.append(f"[array {name} {dtype} {dims}]\n")
                last = arr.shape[-1] if arr.ndim else 1
                rows = arr.reshape(-1, last) if arr.size else arr.reshape(0, last or 1)
                for row in rows:
                    chunks.append(" ".join(_fmt_cell(v, dtype) for v in row) + "\n")
            else:
                lines = self._lines[name]
                chunks.append(f"[lines {name} {len(lines)}]\n")
                for line in lines:
                    chunks.append(line + "\n")
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write("".join(chunks))
        os.replace(tmp, path)

    @staticmethod
    def read(path: str, expected_kind: str) -> "Document":
        with open(path, "r", encoding="utf-8") as fh:
            raw = fh.read().split("\n")
        if not raw or not raw[0].startswith("#springfit "):
            raise SchemaError(f"{path}: missing springfit header")
        parts = raw[0].split()
        if len(parts) != 3:
            raise SchemaError(f"{path}: malformed header {raw[0]!r}")
        kind, version = parts[1], parts[2]
        if not version.isdigit() or int(version) != FORMAT_VERSION:
            raise SchemaError(f"{path}: unsupported major version {version}")
        if kind != expected_kind:
            raise SchemaError(f"{path}: expected kind {expected_kind!r}, found {kind!r}")
        doc = Document(kind)
        i = 1
        n = len(raw)
        while i < n:
            line = raw[i]
            i += 1
            if not line:
                continue
            if not (line.startswith("[") and line.endswith("]")):
                raise SchemaError(f"{path}: expected section header, got {line!r}")
            head = line[1:-1].split()
            if head[0] == "scalars":
                name = head[1]
                mapping = {}
                while i < n and raw[i] and not raw[i].startswith("["):
                    key, _, token = raw[i].partition(" ")
                    mapping[key] = _parse_scalar(token)
                    i += 1
                doc.add_scalars(name, mapping)
            elif head[0] == "array":
                name, dtype = head[1], head[2]
                dims = tuple(int(d) for d in head[3:])
                last = dims[-1] if dims else 1
                n_rows = int(np.prod(dims[:-1])) if len(dims) > 1 else (dims[0] if dims else 0)
                if len(dims) == 1:
                    n_rows, last = 1, dims[0]
                total = int(np.prod(dims)) if dims else 0
                values: list = []
                rows_read = 0
                while i < n and rows_read < n_rows and raw[i] and not raw[i].startswith("["):
                    values.extend(raw[i].split())
                    rows_read += 1
                    i += 1
                if len(values) != total:
                    raise SchemaError(
                        f"{path}: array {name} expected {total} values, read {len(values)}"
                    )
                arr = np.asarray([_DTYPES[dtype](v) for v in values], dtype=_DTYPES[dtype])
                doc.add_array(name, arr.reshape(dims), dtype)
            elif head[0] == "lines":
                name, count = head[1], int(head[2])
                lines = raw[i : i + count]
                if len(lines) != count:
                    raise SchemaError(f"{path}: truncated [lines {name}] section")
                i += count
                doc.add_lines(name, lines)
            else:
                raise SchemaError(f"{path}: unknown section kind {head[0]!r}")
        return doc


# ---------------------------------------------------------------------------
# PhysicsConfig and topology section helpers


def _config_scalars(config: PhysicsConfig) -> dict:
    return {
        "connect_radius": config.connect_radius,
        "max_degree": config.max_degree,
        "global_stiffness": config.global_stiffness,
        "ground_height": config.collision.ground_height,
        "friction_retain": config.collision.friction_retain,
        "restitution": config.collision.restitution,
        "gravity": tuple(float(g) for g in config.gravity),
        "frame_dt": config.frame_dt,
        "substeps": config.substeps,
    }


def _config_from(mapping: dict) -> PhysicsConfig:
    return PhysicsConfig(
        connect_radius=mapping["connect_radius"],
        max_degree=mapping["max_degree"],
        global_stiffness=mapping["global_stiffness"],
        collision=CollisionParams(
            ground_height=mapping["ground_height"],
            friction_retain=mapping["friction_retain"],
            restitution=mapping["restitution"],
        ),
        gravity=tuple(float(g) for g in mapping["gravity"]),
        frame_dt=mapping["frame_dt"],
        substeps=mapping["substeps"],
    )


def _add_topology(doc: Document, topo: SystemTopology) -> None:
    doc.add_scalars(
        "topology",
        {
            "n_object": topo.n_object,
            "n_object_springs": topo.n_object_springs,
            "construction_radius": topo.construction_radius,
            "isolated_nodes": tuple(int(i) for i in topo.isolated_nodes),
        },
    )
    doc.add_array("positions", topo.positions)
    doc.add_array("masses", topo.masses)
    doc.add_array("spring_i", topo.spring_i, "i8")
    doc.add_array("spring_j", topo.spring_j, "i8")
    doc.add_array("stiffness", topo.stiffness)
    doc.add_array("damping", topo.damping)
    doc.add_array("rest_length", topo.rest_length)


def _topology_from(doc: Document) -> SystemTopology:
    meta = doc.scalars("topology")
    return SystemTopology(
        positions=doc.array("positions"),
        n_object=meta["n_object"],
        spring_i=doc.array("spring_i"),
        spring_j=doc.array("spring_j"),
        stiffness=doc.array("stiffness"),
        damping=doc.array("damping"),
        rest_length=doc.array("rest_length"),
        n_object_springs=meta["n_object_springs"],
        construction_radius=meta["construction_radius"],
        masses=doc.array("masses"),
        isolated_nodes=tuple(meta["isolated_nodes"]),
    )


def _spec_scalars(spec: SceneSpec) -> dict:
    return {
        "name": spec.name,
        "geometry": spec.geometry,
        "node_shape": tuple(int(v) for v in spec.node_shape),
        "spacing": spec.spacing,
        "controller_kind": spec.controller_kind,
        "sparse_k": spec.sparse_k,
        "patch_shape": tuple(int(v) for v in spec.patch_shape),
        "patch_spacing": spec.patch_spacing,
        "clearance": spec.clearance,
        "script": spec.script,
        "amplitude": spec.amplitude,
        "n_frames": spec.n_frames,
        "noise_obs": spec.noise_obs,
        "noise_tracks": spec.noise_tracks,
        "noise_controller": spec.noise_controller,
        "seed": spec.seed,
        "reference_substep_multiplier": spec.reference_substep_multiplier,
        "hetero_axis": spec.hetero_axis,
        "hetero_stiffness": spec.hetero_stiffness,
        "damping_fraction": spec.damping_fraction,
        "blob_roundness": spec.blob_roundness,
        "patch_tilt": spec.patch_tilt,
    }


def _spec_from(mapping: dict, config: PhysicsConfig) -> SceneSpec:
    hetero = mapping["hetero_stiffness"]
    return SceneSpec(
        name=mapping["name"],
        geometry=mapping["geometry"],
        node_shape=tuple(mapping["node_shape"]),
        spacing=mapping["spacing"],
        config=config,
        controller_kind=mapping["controller_kind"],
        sparse_k=mapping["sparse_k"],
        patch_shape=tuple(mapping["patch_shape"]),
        patch_spacing=mapping["patch_spacing"],
        clearance=mapping["clearance"],
        script=mapping["script"],
        amplitude=mapping["amplitude"],
        n_frames=mapping["n_frames"],
        noise_obs=mapping["noise_obs"],
        noise_tracks=mapping["noise_tracks"],
        noise_controller=mapping["noise_controller"],
        seed=mapping["seed"],
        reference_substep_multiplier=mapping["reference_substep_multiplier"],
        hetero_axis=mapping["hetero_axis"],
        hetero_stiffness=tuple(hetero) if hetero is not None else None,
        damping_fraction=mapping["damping_fraction"],
        blob_roundness=mapping["blob_roundness"],
        patch_tilt=mapping["patch_tilt"],
    )


def _stamp(doc: Document, stamp: dict | None) -> None:
    doc.add_scalars("stamp", stamp or {})


# ---------------------------------------------------------------------------
# Public writers/readers


def write_scenespec(path: str, spec: SceneSpec, stamp: dict | None = None) -> None:
    doc = Document("scenespec")
    doc.add_scalars("spec", _spec_scalars(spec))
    doc.add_scalars("config", _config_scalars(spec.config))
    _stamp(doc, stamp)
    doc.write(path)


def read_scenespec(path: str) -> SceneSpec:
    doc = Document.read(path, "scenespec")
    return _spec_from(doc.scalars("spec"), _config_from(doc.scalars("config")))


def write_scene(path: str, scene: Scene, stamp: dict | None = None) -> None:
    doc = Document("scene")
    doc.add_scalars("spec", _spec_scalars(scene.spec))
    doc.add_scalars("config", _config_scalars(scene.config))
    _add_topology(doc, scene.topology)
    doc.add_array("controller", scene.controller.frames)
    doc.add_scalars(
        "extras",
        {
            "has_perturbed_controller": scene.controller_perturbed is not None,
            "has_node_material": scene.node_material is not None,
        },
    )
    if scene.controller_perturbed is not None:
        doc.add_array("controller_perturbed", scene.controller_perturbed.frames)
    if scene.node_material is not None:
        doc.add_array("node_material", scene.node_material, "i8")
    doc.add_array("reference", scene.reference_positions)
    _stamp(doc, stamp)
    doc.write(path)


def read_scene(path: str) -> Scene:
    doc = Document.read(path, "scene")
    config = _config_from(doc.scalars("config"))
    spec = _spec_from(doc.scalars("spec"), config)
    topo = _topology_from(doc)
    extras = doc.scalars("extras")
    controller = ControllerTrajectory(doc.array("controller"), config.frame_dt)
    perturbed = None
    if extras["has_perturbed_controller"]:
        perturbed = ControllerTrajectory(doc.array("controller_perturbed"), config.frame_dt)
    material = doc.array("node_material") if extras["has_node_material"] else None
    reference = doc.array("reference")
    # Observations are stored separately; rebuild a noise-free placeholder so
    # the Scene object is complete even without the .obs file.
    observations = ObservationSequence(
        clouds=tuple(reference[t] for t in range(reference.shape[0])),
        tracks=reference.copy(),
        frame_dt=config.frame_dt,
    )
    return Scene(
        spec=spec,
        topology=topo,
        config=config,
        controller=controller,
        controller_perturbed=perturbed,
        reference_positions=reference,
        node_material=material,
        observations=observations,
    )


def write_observations(path: str, obs: ObservationSequence, stamp: dict | None = None) -> None:
    sizes = {len(c) for c in obs.clouds}
    if len(sizes) != 1:
        raise ValueError("serialization requires uniform cloud sizes")
    doc = Document("observations")
    doc.add_scalars("meta", {"frame_dt": obs.frame_dt, "n_frames": obs.n_frames})
    doc.add_array("clouds", np.stack(obs.clouds, axis=0))
    doc.add_array("tracks", obs.tracks)
    _stamp(doc, stamp)
    doc.write(path)


def read_observations(path: str) -> ObservationSequence:
    doc = Document.read(path, "observations")
    meta = doc.scalars("meta")
    clouds = doc.array("clouds")
    return ObservationSequence(
        clouds=tuple(clouds[t] for t in range(clouds.shape[0])),
        tracks=doc.array("tracks"),
        frame_dt=meta["frame_dt"],
    )


def write_rollout(
    path: str,
    positions: np.ndarray,
    velocities: np.ndarray,
    frame_dt: float,
    stamp: dict | None = None,
) -> None:
    doc = Document("rollout")
    doc.add_scalars("meta", {"frame_dt": frame_dt, "n_frames": positions.shape[0]})
    doc.add_array("positions", positions)
    doc.add_array("velocities", velocities)
    _stamp(doc, stamp)
    doc.write(path)


def read_rollout(path: str) -> tuple[np.ndarray, np.ndarray, float]:
    doc = Document.read(path, "rollout")
    meta = doc.scalars("meta")
    return doc.array("positions"), doc.array("velocities"), meta["frame_dt"]


def write_fit(path: str, result: FitResult, stamp: dict | None = None) -> None:
    if result.topology is None or result.controller is None:
        raise ValueError("fit serialization needs topology and controller attached")
    doc = Document("fit")
    doc.add_scalars(
        "fit",
        {
            "stage": result.stage,
            "loss": result.loss,
            "seed": result.seed,
            "reverted": result.reverted,
            "controller_error": result.controller_error,
            "has_refined_controller": result.refined_controller is not None,
            "has_params": result.spring_params is not None,
        },
    )
    doc.add_scalars("config", _config_scalars(result.config))
    _add_topology(doc, result.topology)
    doc.add_array("controller", result.controller.frames)
    if result.refined_controller is not None:
        doc.add_array("refined_controller", result.refined_controller.frames)
    if result.spring_params is not None:
        doc.add_array("params_stiffness", result.spring_params.stiffness)
        doc.add_array("params_damping", result.spring_params.damping)
    doc.add_array("loss_curve", np.asarray(result.loss_curve, dtype=np.float64))
    doc.add_lines("warnings", result.warnings)
    _stamp(doc, stamp)
    doc.write(path)


def read_fit(path: str) -> FitResult:
    doc = Document.read(path, "fit")
    meta = doc.scalars("fit")
    config = _config_from(doc.scalars("config"))
    topo = _topology_from(doc)
    controller = ControllerTrajectory(doc.array("controller"), config.frame_dt)
    refined = None
    if meta["has_refined_controller"]:
        refined = ControllerTrajectory(doc.array("refined_controller"), config.frame_dt)
    params = None
    if meta["has_params"]:
        params = SpringParams(
            stiffness=doc.array("params_stiffness"), damping=doc.array("params_damping")
        )
    return FitResult(
        config=config,
        loss=meta["loss"],
        loss_curve=[float(v) for v in doc.array("loss_curve")],
        stage=meta["stage"],
        seed=meta["seed"],
        spring_params=params,
        topology=topo,
        controller=controller,
        refined_controller=refined,
        warnings=doc.lines("warnings"),
        reverted=meta["reverted"],
        controller_error=meta["controller_error"],
    )


def write_report(path: str, report: EvalReport, stamp: dict | None = None) -> None:
    doc = Document("report")
    doc.add_scalars(
        "metrics",
        {
            "cd_full_mm": report.cd_full_mm,
            "cd_dyn_mm": report.cd_dyn_mm,
            "track_error_x100": report.track_error_x100,
            "rrd_object": report.rrd_object,
            "rrd_virtual": report.rrd_virtual,
            "contact_acc_5mm": report.contact_acc_5mm,
            "contact_acc_10mm": report.contact_acc_10mm,
        },
    )
    doc.add_lines("reduction", [report.reduction])
    doc.add_lines("notes", report.notes)
    doc.add_array("per_frame_cd_mm", np.asarray(report.per_frame_cd_mm, dtype=np.float64))
    doc.add_array(
        "per_frame_track_x100", np.asarray(report.per_frame_track_x100, dtype=np.float64)
    )
    _stamp(doc, stamp)
    doc.write(path)


def read_report(path: str) -> EvalReport:
    doc = Document.read(path, "report")
    metrics_map = doc.scalars("metrics")
    return EvalReport(
        cd_full_mm=metrics_map["cd_full_mm"],
        cd_dyn_mm=metrics_map["cd_dyn_mm"],
        track_error_x100=metrics_map["track_error_x100"],
        rrd_object=metrics_map["rrd_object"],
        rrd_virtual=metrics_map["rrd_virtual"],
        contact_acc_5mm=metrics_map["contact_acc_5mm"],
        contact_acc_10mm=metrics_map["contact_acc_10mm"],
        per_frame_cd_mm=[float(v) for v in doc.array("per_frame_cd_mm")],
        per_frame_track_x100=[float(v) for v in doc.array("per_frame_track_x100")],
        reduction=doc.lines("reduction")[0],
        notes=doc.lines("notes"),
    )
