"""Closed race tracks: CSV input, synthetic shapes and per-knot frames."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import FormatError


@dataclass(frozen=True, eq=False)
class TrackData:
    """Centerline points (m) and left/right boundary distances (m).

    The track is closed implicitly: the last point connects back to the first.
    """

    points: np.ndarray  # (N, 2)
    widths: np.ndarray  # (N, 2) columns w_l, w_r

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        w = np.asarray(self.widths, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError(f"points must have shape (N, 2), got {pts.shape}")
        if w.shape != pts.shape:
            raise ValueError(f"widths must have shape {pts.shape}, got {w.shape}")
        if pts.shape[0] < 4:
            raise ValueError("a track needs at least 4 points")
        if np.any(w <= 0):
            raise ValueError("track widths must be positive")
        if np.allclose(pts[0], pts[-1]):
            raise ValueError("first and last points coincide; give an open point list")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "widths", w)

    def __len__(self) -> int:
        return self.points.shape[0]


def load_track(path) -> TrackData:
    """Read ``x,y,w_l,w_r`` rows; a non-numeric first row is taken as a header."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row) or row[0].lstrip().startswith("#"):
                continue
            try:
                vals = [float(c) for c in row]
            except ValueError:
                if not rows and lineno == 1:
                    continue
                raise FormatError(f"{path}: line {lineno}: non-numeric value in {row!r}") from None
            if len(vals) != 4:
                raise FormatError(f"{path}: line {lineno}: expected 4 columns x,y,w_l,w_r, got {len(vals)}")
            rows.append(vals)
    if not rows:
        raise FormatError(f"{path}: no track points")
    data = np.array(rows)
    try:
        return TrackData(data[:, :2], data[:, 2:])
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def save_track(track: TrackData, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "w_l", "w_r"])
        for (x, y), (wl, wr) in zip(track.points, track.widths):
            w.writerow([format(v, ".17g") for v in (x, y, wl, wr)])


def circle_track(radius: float = 50.0, segments: int = 360, width: float = 2.0) -> TrackData:
    """Counter-clockwise circle centred at the origin."""
    phi = 2 * np.pi * np.arange(segments) / segments
    pts = radius * np.column_stack([np.cos(phi), np.sin(phi)])
    return TrackData(pts, np.full((segments, 2), width))


def oval_track(
    segments: int = 2356,
    straight: float = 1000.0,
    radius: float = 150.0,
    width: float = 5.0,
) -> TrackData:
    """Counter-clockwise stadium (two straights joined by half circles),
    sampled uniformly in arc length and centred at the origin."""
    perim = 2 * straight + 2 * np.pi * radius
    s = perim * np.arange(segments) / segments
    half = straight / 2
    arc = np.pi * radius
    pts = np.empty((segments, 2))
    for j, sj in enumerate(s):
        if sj < straight:  # bottom straight, left to right
            pts[j] = (-half + sj, -radius)
        elif sj < straight + arc:  # right turn-around
            a = (sj - straight) / radius - np.pi / 2
            pts[j] = (half + radius * np.cos(a), radius * np.sin(a))
        elif sj < 2 * straight + arc:  # top straight, right to left
            pts[j] = (half - (sj - straight - arc), radius)
        else:
            a = (sj - 2 * straight - arc) / radius + np.pi / 2
            pts[j] = (-half + radius * np.cos(a), radius * np.sin(a))
    return TrackData(pts, np.full((segments, 2), width))


@dataclass(frozen=True, eq=False)
class Frames:
    tangents: np.ndarray  # (N, 2) unit
    normals: np.ndarray  # (N, 2) unit, right-hand
    lengths: np.ndarray  # (N,) chord to the next point

    def __len__(self) -> int:
        return self.lengths.shape[0]


def compute_frames(track: TrackData) -> Frames:
    """Central-difference tangents, right-hand normals ``(t_y, -t_x)`` and
    chord lengths, all with cyclic wrap-around."""
    p = track.points
    nxt = np.roll(p, -1, axis=0)
    prv = np.roll(p, 1, axis=0)
    L = np.linalg.norm(nxt - p, axis=1)
    if np.any(L < 1e-12):
        j = int(np.flatnonzero(L < 1e-12)[0])
        raise ValueError(f"track points {j} and {(j + 1) % len(p)} coincide")
    d = nxt - prv
    nd = np.linalg.norm(d, axis=1)
    if np.any(nd < 1e-12):
        j = int(np.flatnonzero(nd < 1e-12)[0])
        raise ValueError(f"tangent at point {j} is undefined")
    t = d / nd[:, None]
    n = np.column_stack([t[:, 1], -t[:, 0]])
    return Frames(t, n, L)
