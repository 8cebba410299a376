"""Recorded trajectory ingestion: parsing, resampling, scene grouping and windowing."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

FEET = 0.3048
NGSIM_FRAME_DT = 0.1
NATIVE_HEADER = ("vehicle_id", "t", "x_m", "y_m")
NGSIM_COLUMNS = ("Vehicle_ID", "Frame_ID", "Local_X", "Local_Y")


class TrajectoryFormatError(ValueError):
    pass


@dataclass(frozen=True)
class TrajectoryRecord:
    vehicle_id: int
    t: float
    x: float
    y: float


@dataclass
class Track:
    """One vehicle resampled onto the global grid ``t = frame * dt``."""

    vehicle_id: int
    start_frame: int
    xy: np.ndarray  # (frames, 2)

    @property
    def end_frame(self) -> int:
        return self.start_frame + len(self.xy) - 1

    def covers(self, first: int, last: int) -> bool:
        return self.start_frame <= first and last <= self.end_frame

    def slice(self, first: int, last: int) -> np.ndarray:
        return self.xy[first - self.start_frame : last - self.start_frame + 1]


@dataclass
class SceneWindow:
    vehicle_ids: list[int]
    observed: np.ndarray  # (vehicles, o_l, 2)
    future: np.ndarray  # (vehicles, p_l, 2)
    dt: float = 0.1
    start_frame: int = 0

    @property
    def full(self) -> np.ndarray:
        return np.concatenate([self.observed, self.future], axis=1)


def parse_trajectories(path, format: str = "native", swap_axes: bool = False) -> list[TrajectoryRecord]:
    """Read NGSIM or native CSV into records in file order.

    NGSIM feet are converted to metres and frames to seconds. ``swap_axes``
    maps ``Local_Y`` to x (longitudinal) for sites where it is the travel axis.
    """
    if format not in ("ngsim", "native"):
        raise ValueError(f"unknown trajectory format {format!r}")
    records: list[TrajectoryRecord] = []
    last_t: dict[int, float] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return records
        header = [h.strip() for h in header]
        wanted = NGSIM_COLUMNS if format == "ngsim" else NATIVE_HEADER
        try:
            cols = [header.index(c) for c in wanted]
        except ValueError:
            raise TrajectoryFormatError(f"{path}: header must contain {', '.join(wanted)}; got {header}") from None
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                vid = int(float(row[cols[0]]))
                if format == "ngsim":
                    t = int(float(row[cols[1]])) * NGSIM_FRAME_DT
                    a, b = float(row[cols[2]]) * FEET, float(row[cols[3]]) * FEET
                    x, y = (b, a) if swap_axes else (a, b)
                else:
                    t, x, y = float(row[cols[1]]), float(row[cols[2]]), float(row[cols[3]])
                    if swap_axes:
                        x, y = y, x
            except (ValueError, IndexError) as exc:
                raise TrajectoryFormatError(f"{path}:{lineno}: malformed row {row!r} ({exc})") from None
            if not all(math.isfinite(v) for v in (t, x, y)):
                raise TrajectoryFormatError(f"{path}:{lineno}: non-finite value")
            if vid in last_t and t <= last_t[vid]:
                raise TrajectoryFormatError(
                    f"{path}:{lineno}: timestamps for vehicle {vid} not strictly increasing ({t} after {last_t[vid]})"
                )
            last_t[vid] = t
            records.append(TrajectoryRecord(vid, t, x, y))
    return records


def write_native(path, records: Iterable[TrajectoryRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(NATIVE_HEADER)
        for r in records:
            w.writerow((r.vehicle_id, repr(r.t), repr(r.x), repr(r.y)))


def resample(records: Iterable[TrajectoryRecord], dt: float = 0.1) -> dict[int, Track]:
    """Linearly interpolate each vehicle onto the grid ``k * dt`` within its span.

    Vehicles with a single sample are dropped. Grid points that coincide with
    a recorded sample (within 1e-9 s) take the recorded value exactly.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    by_vehicle: dict[int, list[TrajectoryRecord]] = defaultdict(list)
    for r in records:
        by_vehicle[r.vehicle_id].append(r)
    tracks = {}
    for vid in sorted(by_vehicle):
        rs = by_vehicle[vid]
        if len(rs) < 2:
            continue
        t = np.array([r.t for r in rs])
        xy = np.array([(r.x, r.y) for r in rs])
        k0 = math.ceil(t[0] / dt - 1e-9)
        k1 = math.floor(t[-1] / dt + 1e-9)
        if k1 < k0:
            continue
        frames = np.arange(k0, k1 + 1)
        grid = np.clip(frames * dt, t[0], t[-1])
        out = np.column_stack([np.interp(grid, t, xy[:, 0]), np.interp(grid, t, xy[:, 1])])
        nearest = np.clip(np.searchsorted(t, grid), 0, len(t) - 1)
        for cand in (nearest, np.maximum(nearest - 1, 0)):
            hit = np.abs(t[cand] - frames * dt) < 1e-9
            out[hit] = xy[cand[hit]]
        tracks[vid] = Track(vid, int(k0), out)
    return tracks


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia_history: list[float]
    iterations: int


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    chosen = [int(rng.integers(n))]
    d2 = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            rest = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(rest))
        chosen.append(idx)
        d2 = np.minimum(d2, np.sum((points - points[idx]) ** 2, axis=1))
    return points[chosen].astype(float)


def kmeans_group(positions: np.ndarray, k: int, seed: int = 0, max_iter: int = 100) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    Stops when assignments stop changing or after ``max_iter`` rounds. An
    emptied cluster keeps its previous centroid.
    """
    pts = np.asarray(positions, dtype=float)
    if not 1 <= k <= len(pts):
        raise ValueError(f"k must be in [1, {len(pts)}], got {k}")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(pts, k, rng)
    labels = None
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        d2 = ((pts[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_labels = d2.argmin(axis=1)
        history.append(float(d2[np.arange(len(pts)), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            members = pts[labels == c]
            if len(members):
                centroids[c] = members.mean(axis=0)
    d2 = ((pts - centroids[labels]) ** 2).sum()
    history.append(float(d2))
    return KMeansResult(labels, centroids, history, it)


def default_group_count(vehicle_count: int, max_scene: int = 12) -> int:
    return max(1, math.ceil(vehicle_count / max_scene))


def window_scenes(
    tracks: Mapping[int, Track],
    groups: Sequence[Sequence[int]],
    o_l: int = 8,
    p_l: int = 8,
    dt: float = 0.1,
    stride: int = 1,
) -> list[SceneWindow]:
    """Slide windows of ``o_l + p_l`` frames over each group.

    Only vehicles present in every frame of a window are included.
    """
    if o_l < 1 or p_l < 1:
        raise ValueError("o_l and p_l must be >= 1")
    span = o_l + p_l
    windows = []
    for group in groups:
        members = [tracks[v] for v in group if v in tracks]
        if not members:
            continue
        first = min(t.start_frame for t in members)
        last = max(t.end_frame for t in members)
        for f0 in range(first, last - span + 2, stride):
            f1 = f0 + span - 1
            present = [t for t in members if t.covers(f0, f1)]
            if not present:
                continue
            seq = np.stack([t.slice(f0, f1) for t in present])
            windows.append(SceneWindow([t.vehicle_id for t in present], seq[:, :o_l].copy(), seq[:, o_l:].copy(), dt, f0))
    return windows


def extract_windows(
    tracks: Mapping[int, Track],
    o_l: int = 8,
    p_l: int = 8,
    dt: float = 0.1,
    k: Optional[int] = None,
    max_scene: int = 12,
    stride: int = 1,
    seed: int = 0,
) -> list[SceneWindow]:
    """Group vehicles by K-means at each window's first frame, then window each group."""
    span = o_l + p_l
    if not tracks:
        return []
    first = min(t.start_frame for t in tracks.values())
    last = max(t.end_frame for t in tracks.values())
    windows = []
    for f0 in range(first, last - span + 2, stride):
        f1 = f0 + span - 1
        present = [t for t in tracks.values() if t.covers(f0, f1)]
        if not present:
            continue
        kk = k if k is not None else default_group_count(len(present), max_scene)
        kk = min(kk, len(present))
        pos = np.stack([t.slice(f0, f0)[0] for t in present])
        labels = kmeans_group(pos, kk, seed=seed + f0).labels if kk > 1 else np.zeros(len(present), int)
        for c in range(kk):
            members = [present[i] for i in np.flatnonzero(labels == c)]
            if not members:
                continue
            seq = np.stack([t.slice(f0, f1) for t in members])
            windows.append(SceneWindow([t.vehicle_id for t in members], seq[:, :o_l].copy(), seq[:, o_l:].copy(), dt, f0))
    return windows


def displacement_errors(pred, truth) -> tuple[float, float]:
    """Average and final displacement error over ``(..., steps, 2)`` arrays."""
    pred, truth = np.asarray(pred, dtype=float), np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    if pred.shape[-1] != 2:
        raise ValueError("last axis must hold (x, y)")
    dist = np.linalg.norm(pred - truth, axis=-1)
    return float(dist.mean()), float(dist[..., -1].mean())
