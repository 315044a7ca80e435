"""Synthetic low-dimensional-manifold regression data and ball covers.

The benchmark task embeds a one-dimensional curve in ``R^D``: the first
three coordinates trace a non-self-intersecting spiral parameterized by
``t in [0, 1]``, the remaining coordinates are irrelevant uniform noise,
and the whole frame is hidden behind a random rotation.  Labels follow a
piecewise-linear link in ``t`` plus Gaussian noise.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .construct import ChartCover


DEFAULT_BREAKPOINTS = (0.0, 0.25, 0.5, 0.75, 1.0)
DEFAULT_VALUES = (0.0, 1.0, -0.5, 0.8, 0.0)


def random_rotation(D: int, seed: int) -> np.ndarray:
    """Haar-distributed rotation: QR of a Gaussian matrix with the sign of
    diag(R) fixed, then determinant normalized to +1."""
    if D < 1:
        raise ValueError("dimension must be positive")
    rng = np.random.default_rng(seed)
    gauss = rng.standard_normal((D, D))
    q, r = np.linalg.qr(gauss)
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


@dataclass
class CurveSpec:
    """Generator settings for the spiral-curve regression task."""

    D: int
    rotation: np.ndarray
    noise_sd: float = 1.0
    breakpoints: tuple = DEFAULT_BREAKPOINTS
    values: tuple = DEFAULT_VALUES
    n: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.D < 3:
            raise ValueError("ambient dimension must be at least 3")
        self.rotation = np.asarray(self.rotation, dtype=float)
        if self.rotation.shape != (self.D, self.D):
            raise ValueError("rotation must be D x D")
        if np.max(np.abs(self.rotation.T @ self.rotation - np.eye(self.D))) > 1e-12:
            raise ValueError("rotation must be orthogonal to 1e-12")
        bp = np.asarray(self.breakpoints, dtype=float)
        if np.any(np.diff(bp) <= 0) or bp[0] < 0 or bp[-1] > 1:
            raise ValueError("breakpoints must be strictly increasing within [0, 1]")
        if len(self.values) != len(self.breakpoints):
            raise ValueError("one link value per breakpoint")
        if self.noise_sd < 0:
            raise ValueError("noise level must be nonnegative")
        if self.n < 1:
            raise ValueError("need at least one sample")

    def link(self, t) -> np.ndarray:
        return np.interp(t, self.breakpoints, self.values)

    def to_json(self) -> str:
        return json.dumps(
            {
                "D": self.D,
                "rotation": self.rotation.tolist(),
                "noise_sd": self.noise_sd,
                "breakpoints": list(self.breakpoints),
                "values": list(self.values),
                "n": self.n,
                "seed": self.seed,
            }
        )

    @staticmethod
    def from_json(text: str) -> "CurveSpec":
        doc = json.loads(text)
        return CurveSpec(
            D=doc["D"],
            rotation=np.asarray(doc["rotation"]),
            noise_sd=doc["noise_sd"],
            breakpoints=tuple(doc["breakpoints"]),
            values=tuple(doc["values"]),
            n=doc["n"],
            seed=doc["seed"],
        )


def curve_coords(t) -> np.ndarray:
    """First three intrinsic coordinates of the spiral at parameter ``t``."""
    t = np.asarray(t, dtype=float)
    return np.stack(
        [t * np.sin(4 * math.pi * t), t * np.cos(4 * math.pi * t), t * (1 - t)],
        axis=-1,
    )


@dataclass
class ManifoldDataset:
    """Sampled regression data: ambient points, labels, latent parameters."""

    xs: np.ndarray
    ys: np.ndarray
    ts: np.ndarray
    spec: CurveSpec | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.xs.shape[0]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        D = self.xs.shape[1]
        writer.writerow(["t"] + [f"x_{i + 1}" for i in range(D)] + ["y"])
        for t, x, y in zip(self.ts, self.xs, self.ys):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in x] + [repr(float(y))])
        return buf.getvalue()

    @staticmethod
    def from_csv(text: str) -> "ManifoldDataset":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        D = len(header) - 2
        ts = np.array([float(r[0]) for r in body])
        xs = np.array([[float(v) for v in r[1 : 1 + D]] for r in body])
        ys = np.array([float(r[-1]) for r in body])
        return ManifoldDataset(xs=xs, ys=ys, ts=ts)


def generate_curve_dataset(spec: CurveSpec) -> ManifoldDataset:
    """Deterministic dataset for ``spec``: ``t`` evenly spaced over [0, 1],
    intrinsic coordinates from the curve, trailing coordinates iid uniform,
    ambient points ``x = U^T x_tilde`` (so that ``U x`` recovers the curve
    frame), labels ``link(t) + noise``."""
    rng = np.random.default_rng(spec.seed)
    ts = np.linspace(0.0, 1.0, spec.n)
    tilde = np.zeros((spec.n, spec.D))
    tilde[:, :3] = curve_coords(ts)
    if spec.D > 3:
        tilde[:, 3:] = rng.uniform(0.0, 1.0, size=(spec.n, spec.D - 3))
    xs = tilde @ spec.rotation  # x = U^T x_tilde, row convention
    ys = spec.link(ts) + spec.noise_sd * rng.standard_normal(spec.n)
    return ManifoldDataset(xs=xs, ys=ys, ts=ts, spec=spec)


def build_cover(
    points: np.ndarray,
    r: float,
    r_outer: float | None = None,
    tau: float = math.inf,
    delta: float = 0.0,
) -> ChartCover:
    """Greedy farthest-point ball cover of a point sample.

    Starts from the first point; while some point lies farther than ``r``
    from every chosen center, the farthest such point becomes a new center.
    Every sample ends up within ``r`` of its nearest center.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[0] == 0:
        raise ValueError("need a nonempty 2-d point sample")
    if r <= 0:
        raise ValueError("radius must be positive")
    centers = [points[0]]
    dists = np.linalg.norm(points - points[0], axis=1)
    while np.max(dists) > r:
        idx = int(np.argmax(dists))
        centers.append(points[idx])
        dists = np.minimum(dists, np.linalg.norm(points - points[idx], axis=1))
    if r_outer is None:
        r_outer = 2.0 * r + 3.0 * delta
    return ChartCover(
        centers=centers, r=r, r_outer=r_outer, tau=tau, delta=delta
    )


def cover_assignment_distances(cover: ChartCover, points: np.ndarray) -> np.ndarray:
    """Distance from each point to its nearest cover center."""
    points = np.asarray(points, dtype=float)
    all_d = np.stack(
        [np.linalg.norm(points - c, axis=1) for c in cover.centers], axis=1
    )
    return np.min(all_d, axis=1)
