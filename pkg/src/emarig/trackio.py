"""EMA coil trajectory containers and readers.

Positions are millimetres throughout; orientations are unit normals.
"""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError

log = logging.getLogger(__name__)

COMPONENTS = ("x", "y", "z", "nx", "ny", "nz")
DEFAULT_FRAME_PERIOD = 0.005
# normals outside this length band are treated as corrupt, inside it they are rescaled
NORMAL_BAND = (0.5, 2.0)


@dataclass(frozen=True)
class DroppedRow:
    line: int
    reason: str


@dataclass(frozen=True, eq=False)
class CoilTrajectorySet:
    """Time series of position and orientation normal for each named coil.

    ``positions`` and ``normals`` have shape ``(frames, coils, 3)``.
    """

    coils: tuple
    timestamps: np.ndarray
    positions: np.ndarray
    normals: np.ndarray
    dropped: tuple = field(default=())

    def __post_init__(self):
        coils = tuple(str(c) for c in self.coils)
        ts = np.array(self.timestamps, dtype=float).reshape(-1)
        pos = np.array(self.positions, dtype=float)
        nrm = np.array(self.normals, dtype=float)
        n_frames, n_coils = len(ts), len(coils)
        if len(set(coils)) != n_coils:
            raise ValueError("duplicate coil names in %r" % (coils,))
        if pos.shape != (n_frames, n_coils, 3) or nrm.shape != (n_frames, n_coils, 3):
            raise ValueError(
                "expected positions/normals of shape %r, got %r and %r"
                % ((n_frames, n_coils, 3), pos.shape, nrm.shape)
            )
        if n_frames > 1 and not np.all(np.diff(ts) > 0):
            raise ValueError("timestamps must be strictly increasing")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        if n_frames and not np.allclose(np.linalg.norm(nrm, axis=-1), 1.0, atol=1e-3, rtol=0):
            raise ValueError("orientation normals must have unit length")
        for arr in (ts, pos, nrm):
            arr.setflags(write=False)
        object.__setattr__(self, "coils", coils)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "normals", nrm)
        object.__setattr__(self, "dropped", tuple(self.dropped))

    @property
    def frame_count(self):
        return len(self.timestamps)

    def index(self, coil):
        try:
            return self.coils.index(coil)
        except ValueError:
            raise KeyError("coil %r not in recording (have %s)" % (coil, ", ".join(self.coils))) from None

    def position(self, coil):
        """``(frames, 3)`` position series of one coil."""
        return self.positions[:, self.index(coil)]

    def frame(self, i):
        """Mapping coil name -> position for frame ``i``."""
        return {c: self.positions[i, k] for k, c in enumerate(self.coils)}

    def select(self, frames):
        """Subset of frames (slice or index array), keeping the drop report."""
        idx = np.arange(self.frame_count)[frames]
        return CoilTrajectorySet(
            self.coils, self.timestamps[idx], self.positions[idx], self.normals[idx], self.dropped
        )

    def transformed(self, rotation, translation):
        """Apply a rigid transform to positions and normals."""
        rotation = np.asarray(rotation, float)
        return CoilTrajectorySet(
            self.coils,
            self.timestamps,
            self.positions @ rotation.T + np.asarray(translation, float),
            self.normals @ rotation.T,
            self.dropped,
        )

    def equals(self, other, decimals=6):
        if self.coils != other.coils or self.frame_count != other.frame_count:
            return False
        tol = 0.5 * 10.0**-decimals * (1 + 1e-9)
        return all(
            np.allclose(a, b, atol=tol, rtol=0)
            for a, b in (
                (self.timestamps, other.timestamps),
                (self.positions, other.positions),
                (self.normals, other.normals),
            )
        )


def _normalize_rows(values, dropped, lines):
    """Rescale normals in-band; return mask of rows whose normals are all usable."""
    lengths = np.linalg.norm(values, axis=-1)
    ok = np.all((lengths >= NORMAL_BAND[0]) & (lengths <= NORMAL_BAND[1]), axis=-1)
    for i in np.flatnonzero(~ok):
        dropped.append(DroppedRow(lines[i], "orientation normal length outside [%g, %g]" % NORMAL_BAND))
    with np.errstate(invalid="ignore", divide="ignore"):
        values /= lengths[..., None]
    return ok


def _group_channels(names, name_lines):
    """Map channel names ``<coil>_<comp>`` to (coils, column index array)."""
    coils = []
    slots = {}
    for col, name in enumerate(names):
        coil, sep, comp = name.rpartition("_")
        if not sep or comp not in COMPONENTS or not coil:
            raise ParseError("channel %r is not of the form <coil>_<x|y|z|nx|ny|nz>" % name, name_lines[col])
        if coil not in slots:
            coils.append(coil)
            slots[coil] = {}
        if comp in slots[coil]:
            raise ParseError("coil %s: duplicate channel %s" % (coil, comp), name_lines[col])
        slots[coil][comp] = col
    for coil in coils:
        if len(slots[coil]) != 6:
            missing = [c for c in COMPONENTS if c not in slots[coil]]
            first = name_lines[min(slots[coil].values())]
            raise ParseError(
                "coil %s has %d channels, expected 6 (missing %s)" % (coil, len(slots[coil]), ", ".join(missing)),
                first,
            )
    columns = np.array([[slots[c][comp] for comp in COMPONENTS] for c in coils], dtype=int)
    return coils, columns


def _build(coils, times, data, lines, dropped):
    """``data`` is ``(rows, coils, 6)``; drop corrupt rows and assemble the set."""
    if len(times) == 0:
        raise ParseError("no frames")
    pos = data[..., :3].copy()
    nrm = data[..., 3:].copy()
    ok = _normalize_rows(nrm, dropped, lines)
    times = np.asarray(times, float)[ok]
    if len(times) == 0:
        raise ParseError("no frames")
    kept_lines = np.asarray(lines)[ok]
    bad = np.flatnonzero(np.diff(times) <= 0)
    if len(bad):
        raise ParseError("timestamps not strictly increasing", int(kept_lines[bad[0] + 1]))
    dropped.sort(key=lambda d: d.line)
    if dropped:
        log.info("dropped %d invalid frame(s)", len(dropped))
    return CoilTrajectorySet(coils, times, pos[ok], nrm[ok], tuple(dropped))


def _float(token, lineno):
    try:
        value = float(token)
    except ValueError:
        raise ParseError("non-numeric value %r" % token, lineno) from None
    if not math.isfinite(value):
        raise ParseError("non-finite value %r" % token, lineno)
    return value


def parse_est_ascii(text):
    """Parse the ASCII variant of an EST_Track file.

    Data rows are ``time flag value...``; rows whose flag is not exactly ``1``
    are dropped and listed in ``result.dropped``.
    """
    if not isinstance(text, str):
        text = text.read()
    lines = text.splitlines()
    if not lines or lines[0].split()[:2] != ["EST_File", "Track"]:
        raise ParseError("expected header line 'EST_File Track'", 1)
    header = {}
    channels = {}
    channel_lines = {}
    end = None
    for i, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line == "EST_Header_End":
            end = i
            break
        key, _, value = line.partition(" ")
        value = value.strip()
        if key.startswith("Channel_"):
            try:
                ch = int(key[len("Channel_"):])
            except ValueError:
                raise ParseError("bad channel key %r" % key, i) from None
            channels[ch] = value
            channel_lines[ch] = i
        else:
            header[key] = (value, i)
    if end is None:
        raise ParseError("missing EST_Header_End", len(lines))
    for key in ("DataType", "NumFrames", "NumChannels"):
        if key not in header:
            raise ParseError("missing header key %s" % key, end)
    if header["DataType"][0] != "ascii":
        raise ParseError("DataType %r not supported (ascii only)" % header["DataType"][0], header["DataType"][1])
    try:
        n_channels = int(header["NumChannels"][0])
        n_frames = int(header["NumFrames"][0])
    except ValueError as exc:
        raise ParseError("bad NumChannels/NumFrames: %s" % exc, end) from None
    for ch in range(n_channels):
        if ch not in channels:
            raise ParseError("missing header key Channel_%d" % ch, end)
    if set(channels) - set(range(n_channels)):
        extra = min(set(channels) - set(range(n_channels)))
        raise ParseError("Channel_%d exceeds NumChannels %d" % (extra, n_channels), channel_lines[extra])
    names = [channels[ch] for ch in range(n_channels)]
    coils, columns = _group_channels(names, [channel_lines[ch] for ch in range(n_channels)])

    times, rows, row_lines, dropped = [], [], [], []
    raw_rows = 0
    for i, raw in enumerate(lines[end:], start=end + 1):
        tokens = raw.split()
        if not tokens:
            continue
        raw_rows += 1
        if len(tokens) != n_channels + 2:
            raise ParseError("expected %d values, found %d" % (n_channels + 2, len(tokens)), i)
        values = [_float(t, i) for t in tokens]
        if tokens[1] != "1" and values[1] != 1.0:
            dropped.append(DroppedRow(i, "flag %s" % tokens[1]))
            continue
        times.append(values[0])
        rows.append(values[2:])
        row_lines.append(i)
    if raw_rows != n_frames:
        log.warning("NumFrames is %d but %d data rows present", n_frames, raw_rows)
    if not rows:
        raise ParseError("no frames", end)
    data = np.asarray(rows, float)[:, columns]
    return _build(coils, times, data, row_lines, dropped)


def parse_coil_csv(text, layout, frame_period=DEFAULT_FRAME_PERIOD):
    """Parse comma-separated coil data, six columns per coil in ``layout`` order.

    A leading time column is optional; without it timestamps are
    ``k * frame_period``.
    """
    if not isinstance(text, str):
        text = text.read()
    layout = tuple(layout)
    if not layout:
        raise ValueError("layout must name at least one coil")
    width = 6 * len(layout)
    rows, lines = [], []
    first = True
    for i, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        cells = [c.strip() for c in raw.split(",")]
        if first:
            first = False
            if not _numeric(cells[0]):
                continue
        if len(cells) not in (width, width + 1):
            raise ParseError("expected %d or %d columns, found %d" % (width, width + 1, len(cells)), i)
        rows.append([_float(c, i) for c in cells])
        lines.append(i)
    if not rows:
        raise ParseError("no frames")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ParseError("inconsistent column count", lines[[len(r) for r in rows].index(max(widths))])
    arr = np.asarray(rows, float)
    if arr.shape[1] == width + 1:
        times, arr = arr[:, 0], arr[:, 1:]
    else:
        times = np.arange(len(arr)) * float(frame_period)
    return _build(layout, times, arr.reshape(len(arr), len(layout), 6), lines, [])


def _numeric(token):
    try:
        float(token)
    except ValueError:
        return False
    return True


def csv_header_layout(text):
    """Coil names declared by a ``time,T1_x,...`` style header, or None."""
    first = next((ln for ln in text.splitlines() if ln.strip()), "")
    cells = [c.strip() for c in first.split(",")]
    if not cells or _numeric(cells[0]):
        return None
    if cells[0].lower() in ("time", "t", "timestamp"):
        cells = cells[1:]
    try:
        coils, _ = _group_channels(cells, [1] * len(cells))
    except ParseError:
        return None
    return tuple(coils)


def write_coil_csv(trajectories, time_column=True):
    """Serialize as CSV with a ``time,<coil>_<comp>...`` header, 6 decimals."""
    out = io.StringIO()
    names = ["%s_%s" % (c, comp) for c in trajectories.coils for comp in COMPONENTS]
    out.write(",".join((["time"] if time_column else []) + names) + "\n")
    data = np.concatenate([trajectories.positions, trajectories.normals], axis=-1)
    data = data.reshape(trajectories.frame_count, -1)
    for t, row in zip(trajectories.timestamps, data):
        cells = (["%.6f" % t] if time_column else []) + ["%.6f" % v for v in row]
        out.write(",".join(cells) + "\n")
    return out.getvalue()


@dataclass(frozen=True)
class TrajectorySynthSpec:
    """Per-coil sinusoids; amplitude/frequency/phase are scalars or 3-vectors."""

    coils: tuple
    base: dict
    amplitude: dict
    frequency: dict
    phase: dict
    rate: float = 200.0
    duration: float = 2.5

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("frame rate must be positive")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        for coil in self.coils:
            if coil not in self.base:
                raise ValueError("no base position for coil %r" % coil)


def synth_trajectories(spec):
    """Deterministic sinusoidal coil motion with constant (0, 0, 1) normals."""
    n = int(round(spec.duration * spec.rate))
    t = np.arange(n) / spec.rate
    pos = np.empty((n, len(spec.coils), 3))
    for k, coil in enumerate(spec.coils):
        base = np.broadcast_to(np.asarray(spec.base[coil], float), 3)
        amp = np.broadcast_to(np.asarray(spec.amplitude.get(coil, 0.0), float), 3)
        freq = np.broadcast_to(np.asarray(spec.frequency.get(coil, 0.0), float), 3)
        phase = np.broadcast_to(np.asarray(spec.phase.get(coil, 0.0), float), 3)
        pos[:, k] = base + amp * np.sin(2 * np.pi * freq * t[:, None] + phase)
    normals = np.zeros_like(pos)
    normals[..., 2] = 1.0
    return CoilTrajectorySet(tuple(spec.coils), t, pos, normals)
