"""Set values as finite-vertex convex polytopes, with the probes built on them.

A set-valued map F assigns to each state x a nonempty compact convex set
F(x).  Every value handled here is the convex hull of finitely many
vertices, which keeps the geometry small and checkable:

* membership and point-to-hull distance reduce to the minimum-norm point
  of a shifted vertex set, found by Wolfe's active-set algorithm,
* the closed delta-neighborhood of a hull is a Minkowski sum with an
  outer (circumscribed) polytopal approximation of the ball,
* upper semicontinuity, the inclusion of F over a delta-ball inside the
  eps-inflation of F(x), is probed on deterministic low-discrepancy
  samples rather than proven.

All objects are immutable after construction and safe to share across
threads; every operation is a pure function of its inputs.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np
from scipy.stats import qmc

__all__ = [
    "Box",
    "ConstantSetMap",
    "ConvexSet",
    "DEFAULT_DELTA_GRID",
    "DimensionMismatchError",
    "EvaluationError",
    "PointCheck",
    "SetValuedMap",
    "SingleValuedMap",
    "VertexFieldMap",
    "as_vector",
    "check_point",
    "estimate_bound",
    "hausdorff_distance",
    "hull_contains",
    "hull_distance",
    "hull_of",
    "inflate",
    "min_norm_point",
    "sample_box",
    "usc_probe",
]

# Vertices closer than this (sup norm) collapse to one representative.
DEDUP_TOL = 1e-12

# Computed distances below _DUST * scale are numerical zero: they sit under
# the canonicalization tolerance, so reporting them as positive would make
# membership at tol=0 depend on least-squares rounding.
_DUST = 1e-12


class DimensionMismatchError(ValueError):
    """Operands live in different state-space dimensions."""


class EvaluationError(RuntimeError):
    """A set-valued map failed to produce a finite value; carries the state."""

    def __init__(self, message: str, x):
        x = np.array(x, dtype=float, ndmin=1)
        super().__init__(f"{message} at x={x.tolist()}")
        self.x = x


def as_vector(x) -> np.ndarray:
    """Coerce x to a finite 1-D float array; bare scalars become 1-vectors."""
    v = np.array(x, dtype=float, ndmin=1)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"expected a point, got array of shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"non-finite coordinates: {v.tolist()}")
    return v


@dataclass(frozen=True)
class Box:
    """Axis-aligned compact box, both corners inclusive."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(a) for a in np.array(self.lo, dtype=float, ndmin=1))
        hi = tuple(float(b) for b in np.array(self.hi, dtype=float, ndmin=1))
        if len(lo) != len(hi):
            raise DimensionMismatchError(
                f"lower corner has dim {len(lo)}, upper corner has dim {len(hi)}"
            )
        if not lo:
            raise ValueError("a box needs at least one axis")
        for a, b in zip(lo, hi):
            if not (math.isfinite(a) and math.isfinite(b)):
                raise ValueError(f"box corners must be finite, got {lo} .. {hi}")
            if a > b:
                raise ValueError(f"lower corner exceeds upper corner: {a} > {b}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return len(self.lo)

    def widths(self) -> np.ndarray:
        return np.array(self.hi) - np.array(self.lo)

    def center(self) -> np.ndarray:
        return 0.5 * (np.array(self.lo) + np.array(self.hi))

    def corners(self) -> np.ndarray:
        """All 2^dim corner points, in a fixed deterministic order."""
        return np.array(list(itertools.product(*zip(self.lo, self.hi))))

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.dim:
            raise DimensionMismatchError(f"point dim {x.size} vs box dim {self.dim}")
        for a, b, c in zip(self.lo, self.hi, x):
            if c < a - tol or c > b + tol:
                return False
        return True

    def clip(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        return np.clip(x, self.lo, self.hi)

    def boundary_distance(self, x) -> float:
        """Distance from x to the box boundary: positive inside, negative outside.

        For a box this equals the smallest per-axis distance to a face.
        """
        x = np.asarray(x, dtype=float).reshape(-1)
        best = math.inf
        for a, b, c in zip(self.lo, self.hi, x):
            best = min(best, c - a, b - c)
        return best

    def nearest_face(self, x) -> str:
        """Name of the closest face, 'x<i>_min' or 'x<i>_max'."""
        x = np.asarray(x, dtype=float).reshape(-1)
        best = math.inf
        name = "x1_min"
        for j, (a, b, c) in enumerate(zip(self.lo, self.hi, x)):
            if c - a < best:
                best = c - a
                name = f"x{j + 1}_min"
            if b - c < best:
                best = b - c
                name = f"x{j + 1}_max"
        return name


@dataclass(frozen=True, eq=False)
class ConvexSet:
    """Convex hull of finitely many vertices, canonical and immutable.

    Construction canonicalizes: vertices are sorted lexicographically and
    near-duplicates (within 1e-12, sup norm, merged greedily left to right)
    are dropped, so equal sets compare equal and hash equal.  The
    represented set is nonempty, closed, bounded and convex by shape.
    """

    vertices: np.ndarray

    def __post_init__(self):
        arr = np.array(self.vertices, dtype=float)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
            raise ValueError(f"vertices must form a nonempty (m, dim) array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("non-finite vertex coordinates")
        arr = arr[np.lexsort(arr.T[::-1])]
        kept = [0]
        for i in range(1, arr.shape[0]):
            if float(np.max(np.abs(arr[i] - arr[kept[-1]]))) > DEDUP_TOL:
                kept.append(i)
        arr = np.ascontiguousarray(arr[kept])
        arr.setflags(write=False)
        object.__setattr__(self, "vertices", arr)

    @property
    def dim(self) -> int:
        return int(self.vertices.shape[1])

    def __len__(self) -> int:
        return int(self.vertices.shape[0])

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ConvexSet)
            and self.vertices.shape == other.vertices.shape
            and bool(np.array_equal(self.vertices, other.vertices))
        )

    def __hash__(self) -> int:
        return hash((self.vertices.shape, self.vertices.tobytes()))

    def __repr__(self) -> str:
        return f"ConvexSet({self.vertices.tolist()})"

    def max_norm(self) -> float:
        """Largest Euclidean vertex norm, the sup of |y| over the hull."""
        cached = self.__dict__.get("_max_norm")
        if cached is None:
            cached = float(np.sqrt((self.vertices * self.vertices).sum(axis=1).max()))
            object.__setattr__(self, "_max_norm", cached)
        return cached

    @property
    def centroid(self) -> np.ndarray:
        cached = self.__dict__.get("_centroid")
        if cached is None:
            cached = self.vertices.mean(axis=0)
            cached.setflags(write=False)
            object.__setattr__(self, "_centroid", cached)
        return cached

    def flat(self) -> tuple:
        """Vertex coordinates as a tuple of floats; 1-D sets only."""
        cached = self.__dict__.get("_flat")
        if cached is None:
            if self.dim != 1:
                raise DimensionMismatchError("flat() is defined for 1-D sets only")
            cached = tuple(float(v) for v in self.vertices[:, 0])
            object.__setattr__(self, "_flat", cached)
        return cached


def _affine_weights(Q: np.ndarray) -> np.ndarray:
    """Weights w with sum(w) = 1 minimizing |w @ Q| over the affine hull."""
    m = Q.shape[0]
    sys_mat = np.empty((m + 1, m + 1))
    sys_mat[:m, :m] = Q @ Q.T
    sys_mat[:m, m] = 1.0
    sys_mat[m, :m] = 1.0
    sys_mat[m, m] = 0.0
    rhs = np.zeros(m + 1)
    rhs[m] = 1.0
    sol, *_ = np.linalg.lstsq(sys_mat, rhs, rcond=None)
    w = sol[:m]
    total = float(w.sum())
    if total != 0.0:
        w = w / total
    return w


def min_norm_point(points: np.ndarray) -> np.ndarray:
    """Minimum-Euclidean-norm point of the convex hull of the rows.

    Wolfe's active-set scheme: grow a corral of vertices, project onto its
    affine hull, trim vertices whose weight would turn negative.  Finite,
    and exact up to floating point for the small vertex sets used here.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("points must form a nonempty (m, dim) array")
    m = pts.shape[0]
    sq = np.einsum("ij,ij->i", pts, pts)
    start = int(np.argmin(sq))
    if m == 1:
        return pts[start].copy()
    eps = 1e-13 * max(1.0, float(sq.max()))
    corral = [start]
    w = np.ones(1)
    x = pts[start].copy()
    for _ in range(16 * m + 64):
        dots = pts @ x
        cand = int(np.argmin(dots))
        if dots[cand] >= float(x @ x) - eps or cand in corral:
            break
        corral.append(cand)
        w = np.append(w, 0.0)
        for _ in range(m + 1):
            target = _affine_weights(pts[corral])
            if np.all(target > 1e-14):
                w = target
                break
            shrink = target < w
            if not shrink.any():
                # all weights nonnegative but some are dust: accept as is
                w = np.maximum(target, 0.0)
                total = float(w.sum())
                if total > 0.0:
                    w = w / total
                break
            steps = w[shrink] / (w[shrink] - target[shrink])
            theta = min(1.0, float(steps.min()))
            w = w + theta * (target - w)
            w[w < 1e-14] = 0.0
            if not w.any():
                best = corral[int(np.argmin(sq[corral]))]
                corral = [best]
                w = np.ones(1)
                break
            keep = w > 0.0
            if keep.all():
                keep[int(np.argmin(w))] = False
            corral = [c for c, k in zip(corral, keep) if k]
            w = w[keep]
            w = w / float(w.sum())
        x = w @ pts[corral]
    return x


def hull_distance(C: ConvexSet, v) -> float:
    """Euclidean distance from point v to hull(C); exactly 0.0 for members.

    Distances below the canonicalization tolerance (relative to the local
    scale) are snapped to zero so that exact membership does not depend on
    least-squares rounding.
    """
    v = as_vector(v)
    if v.size != C.dim:
        raise DimensionMismatchError(f"point dim {v.size} vs set dim {C.dim}")
    shifted = C.vertices - v
    d = float(np.linalg.norm(min_norm_point(shifted)))
    scale = max(1.0, float(np.abs(shifted).max()))
    return 0.0 if d <= _DUST * scale else d


def hull_contains(C: ConvexSet, v, tol: float) -> bool:
    """True iff distance(v, hull(C)) <= tol."""
    tol = float(tol)
    if tol < 0.0:
        raise ValueError(f"tol must be nonnegative, got {tol}")
    return hull_distance(C, v) <= tol


def hausdorff_distance(A: ConvexSet, B: ConvexSet) -> float:
    """Symmetric Hausdorff distance between two hulls.

    For convex polytopes the sup over each set is attained at a vertex, so
    vertex-to-hull distances suffice.
    """
    if A.dim != B.dim:
        raise DimensionMismatchError(f"set dims differ: {A.dim} vs {B.dim}")
    d = 0.0
    for v in A.vertices:
        d = max(d, hull_distance(B, v))
    for v in B.vertices:
        d = max(d, hull_distance(A, v))
    return d


def _chain_hull(arr: np.ndarray) -> np.ndarray:
    """Extreme points of a canonical (sorted, deduplicated) 2-D point set.

    Andrew's monotone chain with collinear interior points dropped.
    """

    def sweep(rows):
        out = []
        for p in rows:
            while len(out) >= 2:
                ox, oy = out[-2]
                ax, ay = out[-1]
                if (ax - ox) * (p[1] - oy) - (ay - oy) * (p[0] - ox) > 0.0:
                    break
                out.pop()
            out.append((float(p[0]), float(p[1])))
        return out

    lower = sweep(arr)
    upper = sweep(arr[::-1])
    return np.array(lower[:-1] + upper[:-1])


def _extreme_points(arr: np.ndarray) -> np.ndarray:
    """Rows that are extreme points of the hull; arr must be canonical."""
    if arr.shape[0] <= 2:
        return arr
    if arr.shape[1] == 1:
        return np.array([arr.min(axis=0), arr.max(axis=0)])
    if arr.shape[1] == 2:
        return _chain_hull(arr)
    scale = max(1.0, float(np.abs(arr).max()))
    keep = []
    for i in range(arr.shape[0]):
        rest = np.delete(arr, i, axis=0)
        d = float(np.linalg.norm(min_norm_point(rest - arr[i])))
        if d > 1e-9 * scale:
            keep.append(i)
    return arr[keep] if keep else arr[:1]


def _ball_vertices(dim: int, delta: float, facets: int) -> np.ndarray:
    """Vertices of a circumscribed polytope for the Euclidean delta-ball.

    1-D: the exact interval.  2-D: a regular facet-gon with apothem delta,
    oriented so facets=4 yields the axis-aligned square.  Higher dims: the
    cube corners {+-delta}^n.  Always contains the ball; the overshoot
    factor is sec(pi/facets) in 2-D and sqrt(dim) for the cube.
    """
    if dim == 1:
        return np.array([[-delta], [delta]])
    if dim == 2:
        rad = delta / math.cos(math.pi / facets)
        step = 2.0 * math.pi / facets
        first = math.pi / facets
        return np.array(
            [[rad * math.cos(first + j * step), rad * math.sin(first + j * step)] for j in range(facets)]
        )
    return np.array(list(itertools.product((-delta, delta), repeat=dim)))


def inflate(C: ConvexSet, delta: float, facets: int = 16) -> ConvexSet:
    """Outer polytope for the closed delta-neighborhood of hull(C).

    Minkowski sum of the hull with a circumscribed ball approximation, so
    hull(C) + ball(delta) is always covered and never undercut; the result
    stays inside hull(C) + ball(delta * (1 + eps)) where eps is the
    circumscription error of the facet polytope (zero in 1-D).
    """
    delta = float(delta)
    if delta < 0.0:
        raise ValueError(f"delta must be nonnegative, got {delta}")
    if facets < 4:
        raise ValueError(f"facets must be at least 4, got {facets}")
    if delta == 0.0:
        return C
    ball = _ball_vertices(C.dim, delta, facets)
    sums = (C.vertices[:, None, :] + ball[None, :, :]).reshape(-1, C.dim)
    canonical = ConvexSet(sums)
    return ConvexSet(_extreme_points(canonical.vertices))


def hull_of(sets: Iterable[ConvexSet]) -> ConvexSet:
    """Hull of a union of sets: vertex lists concatenated, redundant ones pruned."""
    mats = [s.vertices for s in sets]
    if not mats:
        raise ValueError("need at least one set")
    stacked = ConvexSet(np.vstack(mats))
    return ConvexSet(_extreme_points(stacked.vertices))


class SetValuedMap(Protocol):
    """Anything with a domain box and a total evaluate on it."""

    domain: Box

    def evaluate(self, x) -> ConvexSet: ...


@dataclass(frozen=True)
class ConstantSetMap:
    """F(x) == value everywhere on the domain."""

    value: ConvexSet
    domain: Box

    def evaluate(self, x) -> ConvexSet:
        return self.value

    def _fast1(self, x: float) -> tuple:
        cached = self.__dict__.get("_fast1_cache")
        if cached is None:
            cached = (self.value.flat(), False)
            object.__setattr__(self, "_fast1_cache", cached)
        return cached


@dataclass(frozen=True)
class SingleValuedMap:
    """Classical field f embedded as the singleton map x -> {f(x)}."""

    f: Callable
    domain: Box

    def evaluate(self, x) -> ConvexSet:
        x = np.asarray(x, dtype=float).reshape(-1)
        try:
            y = np.asarray(self.f(x), dtype=float)
        except ArithmeticError as exc:
            raise EvaluationError(f"field failed ({exc})", x) from None
        if not np.all(np.isfinite(y)):
            raise EvaluationError("field value is non-finite", x)
        return ConvexSet(y.reshape(1, -1))


@dataclass(frozen=True)
class VertexFieldMap:
    """Hull of several fields: F(x) = co{f_1(x), ..., f_r(x)}."""

    fields: tuple
    domain: Box

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple(self.fields))
        if not self.fields:
            raise ValueError("need at least one field")

    def evaluate(self, x) -> ConvexSet:
        x = np.asarray(x, dtype=float).reshape(-1)
        try:
            rows = np.array(
                [np.asarray(f(x), dtype=float).reshape(-1) for f in self.fields]
            )
        except ArithmeticError as exc:
            raise EvaluationError(f"field failed ({exc})", x) from None
        if not np.all(np.isfinite(rows)):
            raise EvaluationError("field value is non-finite", x)
        return ConvexSet(rows)


def sample_box(box: Box, n: int, seed: int = 0) -> np.ndarray:
    """The box center, all corners, then n low-discrepancy interior points.

    The sequence is a scrambled Halton set, deterministic in seed.
    """
    if n < 0:
        raise ValueError(f"sample count must be nonnegative, got {n}")
    fixed = np.vstack([box.center()[None, :], box.corners()])
    if n == 0:
        return fixed
    eng = qmc.Halton(d=box.dim, scramble=True, seed=seed)
    lo = np.array(box.lo)
    widths = box.widths()
    pts = lo + eng.random(n) * widths
    return np.vstack([fixed, pts])


def _evaluate_guarded(F: SetValuedMap, x: np.ndarray) -> ConvexSet:
    try:
        return F.evaluate(x)
    except EvaluationError:
        raise
    except Exception as exc:
        raise EvaluationError(f"evaluate failed ({exc})", x) from exc


def estimate_bound(F: SetValuedMap, D: Box, samples: int = 128, seed: int = 0) -> float:
    """Sampled sup of |F| over D: the max vertex norm over center, corners
    and a low-discrepancy cloud.

    The result is a lower bound of the true sup that matches it whenever
    the maximizer sits at a sampled point; callers apply their own safety
    factor on top.
    """
    if samples < 1:
        raise ValueError(f"samples must be at least 1, got {samples}")
    best = 0.0
    for row in sample_box(D, samples, seed):
        val = _evaluate_guarded(F, row)
        best = max(best, val.max_norm())
    return best


DEFAULT_DELTA_GRID = (0.2, 0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001)


def usc_probe(
    F: SetValuedMap,
    x,
    eps: float,
    delta_grid: Sequence = DEFAULT_DELTA_GRID,
    probe_samples: int = 32,
    seed: int = 0,
):
    """Largest delta in delta_grid whose sampled ball maps inside the
    eps-inflation of F(x); None when every delta fails.

    For each delta the probe evaluates F at x itself, at the 2*dim axis
    extremes of the delta-ball, and at probe_samples low-discrepancy points
    of the bounding box pulled radially onto the Euclidean ball when
    outside it, all clipped to the domain of F.  A pass means every vertex
    of every sampled value lies within eps of hull(F(x)).  Evidence, not
    proof: the ball is sampled, not exhausted.
    """
    x = as_vector(x)
    if eps <= 0.0:
        raise ValueError(f"eps must be positive, got {eps}")
    grid = [float(d) for d in delta_grid]
    if not grid:
        raise ValueError("delta_grid must be nonempty")
    if any(d <= 0.0 for d in grid):
        raise ValueError("delta_grid entries must be positive")
    for a, b in zip(grid, grid[1:]):
        if b >= a:
            raise ValueError("delta_grid must be strictly decreasing")
    base = _evaluate_guarded(F, x)
    for delta in grid:
        ys = [x]
        for j in range(x.size):
            for sgn in (-1.0, 1.0):
                y = x.copy()
                y[j] += sgn * delta
                ys.append(y)
        if probe_samples > 0:
            eng = qmc.Halton(d=x.size, scramble=True, seed=seed)
            cloud = (x - delta) + 2.0 * delta * eng.random(probe_samples)
            for row in cloud:
                off = row - x
                r = float(np.linalg.norm(off))
                ys.append(x + off * (delta / r) if r > delta else row)
        ok = True
        for y in ys:
            val = _evaluate_guarded(F, F.domain.clip(y))
            for vert in val.vertices:
                if not hull_contains(base, vert, eps):
                    ok = False
                    break
            if not ok:
                break
        if ok:
            return float(delta)
    return None


@dataclass(frozen=True)
class PointCheck:
    """Basic-conditions report for one state.

    The shape flags are structural: polytope values are nonempty, bounded,
    closed and convex by construction, and are reported for completeness.
    usc holds (eps, delta) pairs where delta is the probe result, None when
    no grid delta passed.
    """

    x: tuple
    nonempty: bool
    bounded: bool
    closed_convex: bool
    max_norm: float
    usc: tuple


def check_point(
    F: SetValuedMap,
    x,
    eps_list: Sequence = (0.1, 0.01),
    delta_grid: Sequence = DEFAULT_DELTA_GRID,
    probe_samples: int = 32,
    seed: int = 0,
) -> PointCheck:
    """Run the basic-conditions battery at one state."""
    x = as_vector(x)
    val = _evaluate_guarded(F, x)
    usc = tuple(
        (float(e), usc_probe(F, x, float(e), delta_grid, probe_samples, seed)) for e in eps_list
    )
    return PointCheck(
        x=tuple(float(c) for c in x),
        nonempty=len(val) > 0,
        bounded=bool(np.all(np.isfinite(val.vertices))),
        closed_convex=True,
        max_norm=val.max_norm(),
        usc=usc,
    )
