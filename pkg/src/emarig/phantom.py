"""Synthetic vocal-tract phantom: half-ellipsoid tongue, dental arches and a
matching coil layout. Stands in for the real corpus in tests and demos.

Axes: +X lateral, +Y up, +Z anterior; millimetres.
"""

from __future__ import annotations

import numpy as np

from .mesh import TriMesh
from .rig import Hinge, RigConfig
from .trackio import TrajectorySynthSpec

TONGUE_AXES = (22.0, 20.0, 32.0)
TONGUE_COILS = ("T1", "T2", "T3")


def half_ellipsoid(axes=TONGUE_AXES, rings=12, segments=48):
    """Upper half of an ellipsoid closed by a flat floor at y = 0.

    Default resolution gives 578 vertices. Faces wind outward.
    """
    a, b, c = axes
    verts = [(0.0, b, 0.0)]
    for i in range(1, rings + 1):
        theta = 0.5 * np.pi * i / rings
        for k in range(segments):
            phi = 2 * np.pi * k / segments
            verts.append((a * np.sin(theta) * np.sin(phi), b * np.cos(theta), c * np.sin(theta) * np.cos(phi)))
    bottom = len(verts)
    verts.append((0.0, 0.0, 0.0))

    def ring(i, k):
        return 1 + (i - 1) * segments + k % segments

    faces = []
    for k in range(segments):
        faces.append((0, ring(1, k + 1), ring(1, k)))
    for i in range(1, rings):
        for k in range(segments):
            p, q = ring(i, k), ring(i, k + 1)
            r, s = ring(i + 1, k), ring(i + 1, k + 1)
            faces.append((p, q, s))
            faces.append((p, s, r))
    for k in range(segments):
        faces.append((bottom, ring(rings, k), ring(rings, k + 1)))
    mesh = TriMesh(np.array(verts), faces)
    return _orient_outward(mesh)


def _orient_outward(mesh):
    v = mesh.vertices[mesh.faces]
    n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    out = np.einsum("ij,ij->i", n, v.mean(axis=1) - mesh.vertices.mean(axis=0)) < 0
    faces = mesh.faces.copy()
    faces[out] = faces[out][:, [0, 2, 1]]
    return TriMesh(mesh.vertices, faces)


def dental_arch(height, radius=24.0, z0=4.0, tube=4.0, steps=17, sides=8):
    """U-shaped tube opening backward, a crude stand-in for a dental arch."""
    verts = []
    for i in range(steps):
        phi = -0.5 * np.pi + np.pi * i / (steps - 1)
        center = np.array([radius * np.sin(phi), height, z0 + radius * np.cos(phi)])
        radial = np.array([np.sin(phi), 0.0, np.cos(phi)])
        up = np.array([0.0, 1.0, 0.0])
        for k in range(sides):
            psi = 2 * np.pi * k / sides
            verts.append(center + tube * (np.cos(psi) * radial + np.sin(psi) * up))
    faces = []
    for i in range(steps - 1):
        for k in range(sides):
            p, q = i * sides + k, i * sides + (k + 1) % sides
            r, s = p + sides, q + sides
            faces.append((p, r, s))
            faces.append((p, s, q))
    return TriMesh(np.array(verts), faces)


def surface_point(z, axes=TONGUE_AXES):
    """Midsagittal point on the tongue dorsum at anterior coordinate ``z``."""
    a, b, c = axes
    return np.array([0.0, b * np.sqrt(1.0 - (z / c) ** 2), z])


def bind_positions():
    return {
        "T1": surface_point(24.0),
        "T2": surface_point(8.0),
        "T3": surface_point(-10.0),
        "jaw": np.array([0.0, -12.0, 34.0]),
    }


def rig_config(**overrides):
    cfg = dict(
        hooks={"T3": 1, "T2": 2, "T1": 3},
        root_anchor=(0.0, 6.0, -30.0),
        tip_anchor=(0.0, 8.0, 31.0),
        anchor_coils={"tip": "T1"},
        hinge=Hinge((0.0, -5.0, -40.0), (1.0, 0.0, 0.0), "jaw"),
    )
    cfg.update(overrides)
    return RigConfig(**cfg)


def synth_spec(amplitude=8.0, rate=200.0, frames=500):
    """Sinusoidal tongue motion at 1-3 Hz (one frequency per axis, phase
    lagging from tip to dorsum) plus a small jaw oscillation."""
    base = bind_positions()
    freq = (1.0, 3.0, 2.0)
    lag = {"T1": 0.0, "T2": 0.2, "T3": 0.4}
    return TrajectorySynthSpec(
        coils=TONGUE_COILS + ("jaw",),
        base={k: tuple(v) for k, v in base.items()},
        amplitude={**{c: amplitude for c in TONGUE_COILS}, "jaw": (0.0, 3.0, 0.5)},
        frequency={**{c: freq for c in TONGUE_COILS}, "jaw": 2.0},
        phase={**{c: (lag[c], lag[c] + 0.3, lag[c] + 0.6) for c in TONGUE_COILS}, "jaw": 0.0},
        rate=rate,
        duration=frames / rate,
    )


def assets():
    """Tongue, mandible and maxilla meshes of the phantom."""
    return {
        "tongue": half_ellipsoid(),
        "mandible": dental_arch(-12.0, z0=8.0),
        "maxilla": dental_arch(26.0, z0=8.0),
    }
