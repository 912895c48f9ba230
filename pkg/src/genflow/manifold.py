"""State spaces: R^n, the circle and the 2-torus, in cover coordinates.

Everything is integrated on the universal cover (plain real angles); angles
are only folded into (-π, π] for distances and for output.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InputError, UsageError

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class Space:
    kind: str  # "euclidean" | "circle" | "torus2"
    n: int = 1

    def __post_init__(self):
        if self.kind not in ("euclidean", "circle", "torus2"):
            raise ConfigurationError(f"unsupported space {self.kind!r}")
        if self.kind == "euclidean" and self.n < 1:
            raise ConfigurationError("euclidean dimension must be >= 1")
        if self.kind == "circle":
            object.__setattr__(self, "n", 1)
        if self.kind == "torus2":
            object.__setattr__(self, "n", 2)

    @classmethod
    def euclidean(cls, n: int = 1) -> "Space":
        return cls("euclidean", n)

    @classmethod
    def circle(cls) -> "Space":
        return cls("circle")

    @classmethod
    def torus2(cls) -> "Space":
        return cls("torus2")

    @property
    def dimension(self) -> int:
        return self.n

    @property
    def periodic(self) -> tuple[bool, ...]:
        """Which cover coordinates are angles."""
        return (self.kind != "euclidean",) * self.n

    def point(self, coords) -> np.ndarray:
        """Canonical point: angles wrapped into (-π, π]."""
        c = np.atleast_1d(np.asarray(coords, dtype=float))
        if c.shape != (self.n,):
            raise UsageError(f"{self.kind} points have {self.n} coordinates, got shape {c.shape}")
        return self.wrap_coords(c)

    def wrap_coords(self, coords) -> np.ndarray:
        c = np.asarray(coords, dtype=float)
        if self.kind == "euclidean":
            return c.copy()
        return wrap(c)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n": self.n}

    @classmethod
    def from_dict(cls, d: dict) -> "Space":
        return cls(d["kind"], int(d.get("n", 1)))


def wrap(angle):
    """Fold an angle (or array of angles) into (-π, π]."""
    if isinstance(angle, (float, int)):
        if -math.pi < angle <= math.pi:
            return float(angle)  # already canonical; avoids absorbing tiny angles into π
        a = math.fmod(float(angle) + math.pi, TWO_PI)
        if a <= 0.0:
            a += TWO_PI
        return a - math.pi
    a = np.asarray(angle, dtype=float)
    r = np.fmod(a + math.pi, TWO_PI)
    r = np.where(r <= 0.0, r + TWO_PI, r)
    return np.where((a > -math.pi) & (a <= math.pi), a, r - math.pi)


def arc(a: float, b: float) -> float:
    """Shortest arc length between two angles."""
    d = abs(math.fmod(a - b, TWO_PI))
    return min(d, TWO_PI - d)


def distance(space: Space, p, q) -> float:
    """Riemannian distance for the flat metric of ``space``.

    ``p`` and ``q`` may be given in cover coordinates.
    """
    p = np.atleast_1d(np.asarray(p, dtype=float))
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if p.shape != (space.n,) or q.shape != (space.n,):
        raise UsageError(f"points do not belong to a {space.kind} of dimension {space.n}")
    if space.kind == "euclidean":
        return float(np.linalg.norm(p - q))
    if space.kind == "circle":
        return arc(p[0], q[0])
    return math.hypot(arc(p[0], q[0]), arc(p[1], q[1]))


def distances(space: Space, P, Q) -> np.ndarray:
    """Row-wise :func:`distance` for arrays of shape (..., n)."""
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if P.shape[-1] != space.n or Q.shape[-1] != space.n:
        raise UsageError(f"points do not belong to a {space.kind} of dimension {space.n}")
    d = P - Q
    if space.kind == "euclidean":
        return np.sqrt(np.sum(d * d, axis=-1))
    d = np.abs(np.fmod(d, TWO_PI))
    d = np.minimum(d, TWO_PI - d)
    return np.sqrt(np.sum(d * d, axis=-1))


def lift(path) -> np.ndarray:
    """Continuous real-valued lift of a sampled angle sequence.

    Successive samples must differ by less than π after wrapping, otherwise
    the unwinding is ambiguous and an :class:`InputError` is raised.
    """
    a = np.asarray(path, dtype=float)
    if a.ndim != 1:
        raise InputError("lift expects a 1-d sequence of angles")
    if a.size == 0:
        return a.copy()
    steps = wrap(np.diff(a))
    if np.any(np.abs(steps) >= math.pi):
        k = int(np.argmax(np.abs(steps) >= math.pi))
        raise InputError(f"angle jump >= pi between samples {k} and {k + 1}; sampling too coarse")
    out = np.empty_like(a)
    out[0] = wrap(float(a[0]))
    out[1:] = out[0] + np.cumsum(steps)
    return out


@dataclass(frozen=True)
class Tangent:
    """A tangent vector: components in cover coordinates attached to ``base``."""

    base: np.ndarray
    components: np.ndarray

    def __post_init__(self):
        if np.shape(self.base) != np.shape(self.components):
            raise UsageError("tangent components must match the dimension of the base point")

    def norm(self) -> float:
        """Length for the flat metric (coordinate frames are orthonormal here)."""
        return float(np.linalg.norm(self.components))
