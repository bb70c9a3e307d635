"""JSON documents read and written by the command-line tools.

Every document carries a ``schema`` tag; unknown keys are rejected so that
a typo fails loudly instead of silently falling back to a default.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError
from .mesh import TriMesh
from .rig import Hinge, RigConfig, build_rig
from .trackio import TrajectorySynthSpec

RIG_CONFIG_SCHEMA = "emarig.rig-config/1"
RIG_SCHEMA = "emarig.rig/1"
SYNTH_SCHEMA = "emarig.synth/1"
PIPELINE_SCHEMA = "emarig.pipeline/1"
LANDMARKS_SCHEMA = "emarig.landmarks/1"


def _check_keys(doc, where, required=(), optional=()):
    if not isinstance(doc, dict):
        raise ParseError("%s: expected an object" % where)
    unknown = sorted(set(doc) - set(required) - set(optional))
    if unknown:
        raise ParseError("%s: unknown key(s) %s" % (where, ", ".join(unknown)))
    missing = [k for k in required if k not in doc]
    if missing:
        raise ParseError("%s: missing key(s) %s" % (where, ", ".join(missing)))


def _check_schema(doc, schema, where):
    if not isinstance(doc, dict) or doc.get("schema") != schema:
        found = doc.get("schema") if isinstance(doc, dict) else None
        raise ParseError("%s: expected schema %r, found %r" % (where, schema, found))


def load_json(text, where="document"):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError("%s: %s" % (where, exc.msg), exc.lineno) from None


def dump_json(doc):
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def _vec(value, where, n=3):
    arr = np.asarray(value, dtype=float)
    if arr.shape != (n,) or not np.all(np.isfinite(arr)):
        raise ParseError("%s: expected %d finite numbers" % (where, n))
    return tuple(float(v) for v in arr)


def _list(values):
    return [float(v) for v in values]


# rig configuration

_RIG_KEYS = ("hooks", "root_anchor", "tip_anchor")
_RIG_OPTIONAL = ("anchor_coils", "joint_count", "r_in", "r_out", "depth", "smoothstep",
                 "hinge", "roll_reference")


def rig_config_from_dict(doc, where="rig config"):
    doc = {k: v for k, v in doc.items() if k != "schema"}
    _check_keys(doc, where, _RIG_KEYS, _RIG_OPTIONAL)
    kw = dict(doc)
    if not isinstance(kw["hooks"], dict):
        raise ParseError("%s: hooks must map coil name to control-point index" % where)
    kw["hooks"] = {str(k): int(v) for k, v in kw["hooks"].items()}
    kw["root_anchor"] = _vec(kw["root_anchor"], where + ".root_anchor")
    kw["tip_anchor"] = _vec(kw["tip_anchor"], where + ".tip_anchor")
    if "roll_reference" in kw:
        kw["roll_reference"] = _vec(kw["roll_reference"], where + ".roll_reference")
    if "depth" in kw and not isinstance(kw["depth"], (int, float)):
        kw["depth"] = _vec(kw["depth"], where + ".depth")
    if kw.get("hinge") is not None:
        h = kw["hinge"]
        _check_keys(h, where + ".hinge", ("point", "direction"), ("coil",))
        kw["hinge"] = Hinge(_vec(h["point"], where + ".hinge.point"),
                            _vec(h["direction"], where + ".hinge.direction"), h.get("coil", "jaw"))
    try:
        return RigConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ParseError("%s: %s" % (where, exc)) from None


def rig_config_to_dict(cfg):
    depth = cfg.depth if isinstance(cfg.depth, (int, float)) else _list(cfg.depth)
    return {
        "schema": RIG_CONFIG_SCHEMA,
        "hooks": dict(cfg.hooks),
        "root_anchor": _list(cfg.root_anchor),
        "tip_anchor": _list(cfg.tip_anchor),
        "anchor_coils": dict(cfg.anchor_coils),
        "joint_count": cfg.joint_count,
        "r_in": cfg.r_in,
        "r_out": cfg.r_out,
        "depth": depth,
        "smoothstep": cfg.smoothstep,
        "hinge": None if cfg.hinge is None else {
            "point": _list(cfg.hinge.point), "direction": _list(cfg.hinge.direction), "coil": cfg.hinge.coil},
        "roll_reference": _list(cfg.roll_reference),
    }


def load_rig_config(text, where="rig config"):
    doc = load_json(text, where)
    _check_schema(doc, RIG_CONFIG_SCHEMA, where)
    return rig_config_from_dict(doc, where)


# serialized rig: the inputs of build_rig, rebuilt on load

def _mesh_dict(mesh):
    return None if mesh is None else {
        "vertices": [_list(v) for v in mesh.vertices],
        "faces": [[int(i) for i in f] for f in mesh.faces],
    }


def _mesh_from(doc, where):
    if doc is None:
        return None
    _check_keys(doc, where, ("vertices", "faces"))
    v = np.asarray(doc["vertices"], float).reshape(-1, 3)
    f = np.asarray(doc["faces"], int).reshape(-1, 3)
    return TriMesh(v, f)


def rig_to_text(rig):
    doc = {
        "schema": RIG_SCHEMA,
        "config": rig_config_to_dict(rig.config),
        "bind_frame": {c: _list(p) for c, p in rig.bind_frame.items()},
        "tongue": _mesh_dict(rig.tongue),
        "mandible": _mesh_dict(rig.mandible),
        "maxilla": _mesh_dict(rig.maxilla),
    }
    return dump_json(doc)


def rig_from_text(text, where="rig"):
    doc = load_json(text, where)
    _check_schema(doc, RIG_SCHEMA, where)
    _check_keys(doc, where, ("schema", "config", "bind_frame", "tongue"), ("mandible", "maxilla"))
    cfg = rig_config_from_dict(doc["config"], where + ".config")
    bind = {str(c): np.asarray(_vec(p, where + ".bind_frame." + c)) for c, p in doc["bind_frame"].items()}
    return build_rig(_mesh_from(doc["tongue"], where + ".tongue"), bind, cfg,
                     mandible=_mesh_from(doc.get("mandible"), where + ".mandible"),
                     maxilla=_mesh_from(doc.get("maxilla"), where + ".maxilla"))


# synthetic trajectory spec

def synth_spec_from_dict(doc, where="synth spec"):
    _check_schema(doc, SYNTH_SCHEMA, where)
    _check_keys(doc, where, ("schema", "coils", "base"), ("amplitude", "frequency", "phase", "rate", "duration"))
    try:
        return TrajectorySynthSpec(
            coils=tuple(doc["coils"]),
            base={c: tuple(v) for c, v in doc["base"].items()},
            amplitude=dict(doc.get("amplitude", {})),
            frequency=dict(doc.get("frequency", {})),
            phase=dict(doc.get("phase", {})),
            rate=float(doc.get("rate", 200.0)),
            duration=float(doc.get("duration", 2.5)),
        )
    except (TypeError, ValueError) as exc:
        raise ParseError("%s: %s" % (where, exc)) from None


def synth_spec_to_dict(spec):
    def plain(d):
        return {k: (float(v) if np.ndim(v) == 0 else _list(v)) for k, v in d.items()}

    return {
        "schema": SYNTH_SCHEMA,
        "coils": list(spec.coils),
        "base": {k: _list(v) for k, v in spec.base.items()},
        "amplitude": plain(spec.amplitude),
        "frequency": plain(spec.frequency),
        "phase": plain(spec.phase),
        "rate": spec.rate,
        "duration": spec.duration,
    }


# landmark correspondences for the register command

def load_landmarks(text, where="landmarks"):
    """Paired ``src``/``dst`` landmark lists (at least three pairs)."""
    doc = load_json(text, where)
    _check_schema(doc, LANDMARKS_SCHEMA, where)
    _check_keys(doc, where, ("schema", "src", "dst"))
    src = np.asarray(doc["src"], float)
    dst = np.asarray(doc["dst"], float)
    if src.ndim != 2 or src.shape[1:] != (3,) or src.shape != dst.shape or len(src) < 3:
        raise ParseError("%s: need matching src/dst lists of >= 3 points" % where)
    return src, dst


# pipeline

@dataclass(frozen=True)
class PipelineConfig:
    """Paths are resolved relative to the config file's directory."""

    ema: str
    tongue: str
    rig: RigConfig
    out_dir: str
    layout: tuple | None = None
    mandible: str | None = None
    maxilla: str | None = None
    bind_frame: int = 0
    plane: str = "x=0"
    palate_coils: tuple = ()
    palate_subsample: int = 1
    export_format: str = "obj-sequence"
    rotations: str = "normals"
    track_coils: tuple = ("T1", "T2", "T3")
    workers: int = 1
    frame_window: tuple | None = field(default=None)


_PIPE_KEYS = ("schema", "inputs", "rig", "output")
_PIPE_OPTIONAL = ("coil_layout", "midsagittal_plane", "export", "subsample", "evaluate")


def load_pipeline_config(text, base_dir=".", where="pipeline config"):
    doc = load_json(text, where)
    _check_schema(doc, PIPELINE_SCHEMA, where)
    _check_keys(doc, where, _PIPE_KEYS, _PIPE_OPTIONAL)
    inputs = doc["inputs"]
    _check_keys(inputs, where + ".inputs", ("ema", "tongue"), ("mandible", "maxilla", "bind_frame"))

    def path(p):
        return None if p is None else os.path.normpath(os.path.join(base_dir, p))

    export = doc.get("export", {})
    _check_keys(export, where + ".export", (), ("format", "rotations", "workers", "frames"))
    sub = doc.get("subsample", {})
    _check_keys(sub, where + ".subsample", (), ("palate",))
    ev = doc.get("evaluate", {})
    _check_keys(ev, where + ".evaluate", (), ("coils",))
    plane = doc.get("midsagittal_plane", {"spec": "x=0"})
    _check_keys(plane, where + ".midsagittal_plane", (), ("spec", "palate_coils"))
    cfg = rig_config_from_dict(doc["rig"], where + ".rig")
    layout = doc.get("coil_layout")
    pc = PipelineConfig(
        ema=path(inputs["ema"]),
        tongue=path(inputs["tongue"]),
        mandible=path(inputs.get("mandible")),
        maxilla=path(inputs.get("maxilla")),
        bind_frame=int(inputs.get("bind_frame", 0)),
        rig=cfg,
        out_dir=path(doc["output"]),
        layout=None if layout is None else tuple(layout),
        plane=str(plane.get("spec", "x=0")),
        palate_coils=tuple(plane.get("palate_coils", ())),
        palate_subsample=int(sub.get("palate", 1)),
        export_format=export.get("format", "obj-sequence"),
        rotations=export.get("rotations", "normals"),
        workers=int(export.get("workers", 1)),
        frame_window=None if export.get("frames") is None else tuple(int(v) for v in export["frames"]),
        track_coils=tuple(ev.get("coils", ("T1", "T2", "T3"))),
    )
    unknown = [c for c in pc.track_coils if c not in cfg.coils]
    if unknown:
        raise ParseError("%s: evaluate.coils %s are not rig coils" % (where, ", ".join(unknown)))
    return pc
