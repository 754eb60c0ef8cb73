"""Finite approximations of time-indexed reachability relations.

For a compact box K discretized into lattice cells, the relation at time t
holds the index pairs (a, b) for which some computed solution starts at the
center of cell a, stays inside K at every breakpoint through time t, and
lands in cell b at time t.  A family of such relations over a time list,
together with its construction provenance, approximates the multiflow of
the inclusion: time 0 is the exact diagonal, and composing the t- and
s-relations should approximate the (t+s)-relation.

The approximation is built from sampled selections, so it systematically
under-covers the true relation.  That asymmetry is why defects are
reported in two directions: composed-versus-direct (pasting two partial
solutions is always a solution, so this direction is small and bounded
by lattice and step resolution) and direct-versus-composed (limited by
sampling luck, reported and tracked under refinement, never asserted).

Every run's random stream is derived from (seed, cell index, run index),
so relations are bit-identical across reruns and thread counts; files
written by write_relation sort their pairs and are byte-stable.
"""

from __future__ import annotations

import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .setvalued import Box, estimate_bound
from .solver import (
    SAFETY_FACTOR,
    Centroid,
    RandomSeeded,
    SelectionStrategy,
    SlidingAware,
    StepPlan,
    TwoPhase,
    VertexIndex,
    euler_delta_solution,
)

__all__ = [
    "ClosureReport",
    "Grid",
    "GridMismatchError",
    "MultiflowApprox",
    "Provenance",
    "Relation",
    "build_multiflow",
    "closure_defect",
    "compose",
    "default_battery",
    "directed_distance",
    "identity_relation",
    "monoid_defect",
    "reach_relation",
    "read_relation",
    "write_relation",
]

_SEED_MASK = (1 << 64) - 1
_TIME_ALIGN_TOL = 1e-9  # queried times must sit on the step lattice this closely


class GridMismatchError(ValueError):
    """Two relations on different grids cannot be combined."""


@dataclass(frozen=True)
class Grid:
    """Cell-center lattice over a box, with at most the requested pitch.

    Each axis is split into ceil(width/pitch) equal cells, so the actual
    cell width never exceeds the pitch (beyond float fuzz) and snapping
    any point of the box moves it by at most half a pitch per axis.
    """

    box: Box
    pitch: tuple

    def __post_init__(self):
        if isinstance(self.pitch, (int, float)):
            pitch = (float(self.pitch),) * self.box.dim
        else:
            pitch = tuple(float(p) for p in self.pitch)
        if len(pitch) != self.box.dim:
            raise ValueError(
                f"{len(pitch)} pitches for a {self.box.dim}-dimensional box"
            )
        for p in pitch:
            if not (math.isfinite(p) and p > 0.0):
                raise ValueError(f"pitch must be positive, got {p!r}")
        shape = []
        cell = []
        for w, p in zip(self.box.widths(), pitch):
            n = max(1, math.ceil(w / p - 1e-9))
            shape.append(n)
            cell.append(w / n)
        object.__setattr__(self, "pitch", pitch)
        object.__setattr__(self, "_shape", tuple(shape))
        object.__setattr__(self, "_cell", tuple(cell))
        strides = [1] * len(shape)
        for j in range(len(shape) - 2, -1, -1):
            strides[j] = strides[j + 1] * shape[j + 1]
        object.__setattr__(self, "_strides", tuple(strides))

    @property
    def dim(self) -> int:
        return self.box.dim

    @property
    def shape(self) -> tuple:
        return self._shape

    @property
    def cell(self) -> tuple:
        return self._cell

    @property
    def size(self) -> int:
        n = 1
        for s in self._shape:
            n *= s
        return n

    def flat(self, multi) -> int:
        idx = 0
        for i, (m, n, st) in enumerate(zip(multi, self._shape, self._strides)):
            if not 0 <= m < n:
                raise IndexError(f"axis {i} index {m} out of range [0, {n})")
            idx += m * st
        return idx

    def multi(self, flat: int) -> tuple:
        if not 0 <= flat < self.size:
            raise IndexError(f"flat index {flat} out of range [0, {self.size})")
        out = []
        for st in self._strides:
            out.append(flat // st)
            flat %= st
        return tuple(out)

    def snap(self, x) -> int:
        """Flat index of the cell containing x; clipped at the box faces."""
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.dim:
            raise ValueError(f"point dim {x.size} vs grid dim {self.dim}")
        multi = []
        for c, lo, n, w in zip(x, self.box.lo, self._shape, self._cell):
            if w == 0.0:
                multi.append(0)
                continue
            j = math.floor((c - lo) / w)
            multi.append(min(max(j, 0), n - 1))
        return self.flat(multi)

    def center(self, flat: int) -> np.ndarray:
        multi = self.multi(flat)
        return np.array(
            [
                lo + (j + 0.5) * w
                for j, lo, w in zip(multi, self.box.lo, self._cell)
            ]
        )

    def centers(self) -> np.ndarray:
        """All cell centers, row i being center(i)."""
        axes = [
            lo + (np.arange(n) + 0.5) * w
            for lo, n, w in zip(self.box.lo, self._shape, self._cell)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1).reshape(-1, self.dim)


@dataclass(frozen=True)
class Relation:
    """Finite relation on grid cells at one time: a set of (from, to) indices."""

    grid: Grid
    t: float
    pairs: frozenset

    def __post_init__(self):
        pairs = frozenset((int(a), int(b)) for a, b in self.pairs)
        size = self.grid.size
        for a, b in pairs:
            if not (0 <= a < size and 0 <= b < size):
                raise ValueError(f"pair ({a}, {b}) outside grid of {size} cells")
        if not (math.isfinite(self.t) and self.t >= 0.0):
            raise ValueError(f"relation time must be nonnegative, got {self.t!r}")
        object.__setattr__(self, "pairs", pairs)


def identity_relation(grid: Grid) -> Relation:
    """The diagonal: every cell relates to itself at time 0."""
    return Relation(grid=grid, t=0.0, pairs=frozenset((i, i) for i in range(grid.size)))


def compose(outer: Relation, inner: Relation) -> Relation:
    """Relational join: (a, c) holds when (a, b) is in inner and (b, c) in outer.

    inner acts first; the result's time is the sum of the two times.
    """
    if outer.grid != inner.grid:
        raise GridMismatchError("compose needs both relations on the same grid")
    by_mid = {}
    for a, b in inner.pairs:
        by_mid.setdefault(b, []).append(a)
    out = set()
    for b, c in outer.pairs:
        for a in by_mid.get(b, ()):
            out.add((a, c))
    return Relation(grid=outer.grid, t=outer.t + inner.t, pairs=frozenset(out))


def _spread_order(n: int) -> list:
    """0..n-1 reordered by bit reversal, so any prefix is roughly uniform."""
    if n <= 1:
        return list(range(n))
    bits = (n - 1).bit_length()
    out = []
    for i in range(1 << bits):
        r = int(format(i, f"0{bits}b")[::-1], 2)
        if r < n:
            out.append(r)
    return out


def default_battery(seed: int = 0, two_phase: int = 64) -> tuple:
    """Mixed strategy battery: extremes, centroid, sliding, random, two-phase.

    The two-phase members switch between the two extreme vertex selections
    at stratified fractions (i + 0.5)/n, in bit-reversed order so that any
    truncated prefix of the battery still spreads over the horizon; they
    are what sweeps the interior of a reachable interval, where fixed
    selections only ever produce its endpoints.
    """
    strategies = [
        VertexIndex(0),
        VertexIndex(1),
        Centroid(),
        SlidingAware(),
        RandomSeeded(seed),
    ]
    n = max(1, two_phase // 2)
    for i in _spread_order(n):
        frac = (i + 0.5) / n
        strategies.append(TwoPhase(VertexIndex(0), VertexIndex(1), frac))
        strategies.append(TwoPhase(VertexIndex(1), VertexIndex(0), frac))
    return tuple(strategies)


@dataclass(frozen=True)
class Provenance:
    """How an approximation was built; enough to reproduce it exactly."""

    k: int
    delta: float
    strategies: tuple
    budget: int
    seed: int


@dataclass(frozen=True, eq=False)
class MultiflowApprox:
    """Relations over a time list, sharing one construction provenance."""

    grid: Grid
    times: tuple
    relations: tuple
    provenance: Provenance

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        if len(times) != len(self.relations):
            raise ValueError("one relation per time required")
        if not times:
            raise ValueError("at least one time required")
        for a, b in zip(times, times[1:]):
            if not b > a:
                raise ValueError(f"times must be strictly increasing, got {times}")
        if times[0] < 0.0:
            raise ValueError("times must be nonnegative")
        for t, rel in zip(times, self.relations):
            if rel.grid != self.grid:
                raise GridMismatchError("all relations must live on the owning grid")
            if rel.t != t:
                raise ValueError(f"relation time {rel.t!r} does not match {t!r}")
        if times[0] == 0.0:
            if self.relations[0].pairs != identity_relation(self.grid).pairs:
                raise ValueError("the time-0 relation must be the exact identity")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "relations", tuple(self.relations))

    def relation_at(self, t: float) -> Relation:
        for known, rel in zip(self.times, self.relations):
            if known == t:
                return rel
        raise KeyError(f"no relation at time {t!r}; have {self.times}")


def _breakpoint_index(t: float, h: float, k: int) -> tuple:
    """(index j, exact breakpoint time j*h) for a time on the step lattice."""
    j = int(round(t / h))
    if not 0 <= j <= k:
        raise ValueError(f"time {t!r} outside the horizon of {k} steps of {h!r}")
    if abs(j * h - t) > _TIME_ALIGN_TOL:
        raise ValueError(
            f"time {t!r} is not on the step lattice (nearest breakpoint {j * h!r})"
        )
    return j, j * h


def _cell_runs(sys, grid, plan, strategies, needs_rng, seed, budget, a, x0, marks, klo, khi):
    """Pair sets contributed by all runs from one start cell."""
    out = [set() for _ in marks]
    n_strat = len(strategies)
    for r in range(budget):
        strategy = strategies[r % n_strat]
        rng = None
        if needs_rng[r % n_strat]:
            rng = np.random.default_rng(
                np.random.SeedSequence([seed & _SEED_MASK, a, r])
            )
        traj = euler_delta_solution(
            sys, x0, plan, strategy, domain=sys.domain, rng=rng
        )
        states = traj.states
        inside = np.all((states >= klo) & (states <= khi), axis=1)
        in_k = states.shape[0] if bool(inside.all()) else int(np.argmin(inside))
        times = traj.times
        for slot, (j, tj) in enumerate(marks):
            if j < in_k and j < times.size and times[j] == tj:
                out[slot].add((a, grid.snap(states[j])))
    return out


def build_multiflow(
    sys,
    grid: Grid,
    times: Sequence[float],
    budget: int,
    k: int,
    strategies: Optional[Sequence[SelectionStrategy]] = None,
    seed: int = 0,
    threads: int = 1,
) -> MultiflowApprox:
    """Sample reachability relations for all the given times in one sweep.

    One batch of `budget` runs per start cell covers the whole horizon
    max(times); each queried time reads the batch at its breakpoint index,
    so a run that leaves K early still feeds the times it survived.  All
    times must lie on the step lattice of h = max(times)/k.  Run r from
    cell a draws its stream from (seed, a, r), making the result
    independent of scheduling and thread count.
    """
    times = tuple(sorted({float(t) for t in times}))
    if not times:
        raise ValueError("at least one time is required")
    if times[0] < 0.0:
        raise ValueError(f"times must be nonnegative, got {times[0]!r}")
    if budget < 1:
        raise ValueError(f"budget must be at least 1, got {budget}")
    if threads < 1:
        raise ValueError(f"threads must be at least 1, got {threads}")
    strategies = default_battery(seed) if strategies is None else tuple(strategies)
    if not strategies:
        raise ValueError("at least one strategy is required")
    described = tuple(s.describe() for s in strategies)
    horizon = times[-1]
    if horizon == 0.0:
        return MultiflowApprox(
            grid=grid,
            times=times,
            relations=(identity_relation(grid),),
            provenance=Provenance(
                k=k, delta=0.0, strategies=described, budget=budget, seed=seed
            ),
        )
    for corner in grid.box.corners():
        if not sys.domain.contains(corner, tol=1e-9):
            raise ValueError("the grid box must lie inside the system domain")
    m = SAFETY_FACTOR * estimate_bound(sys, sys.domain)
    plan = StepPlan(k=k, c=horizon, m=m)
    h = plan.h
    sampled = [t for t in times if t > 0.0]
    marks = [_breakpoint_index(t, h, k) for t in sampled]
    needs_rng = tuple(s.make_rng() is not None for s in strategies)
    klo = np.array(grid.box.lo)
    khi = np.array(grid.box.hi)
    centers = grid.centers()

    def work(a):
        return _cell_runs(
            sys, grid, plan, strategies, needs_rng, seed, budget,
            a, centers[a], marks, klo, khi,
        )

    if threads == 1:
        per_cell = [work(a) for a in range(grid.size)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_cell = list(pool.map(work, range(grid.size)))
    merged = [set() for _ in sampled]
    for cell_sets in per_cell:
        for slot, pairs in enumerate(cell_sets):
            merged[slot] |= pairs
    by_time = dict(zip(sampled, merged))
    relations = []
    for t in times:
        if t == 0.0:
            relations.append(identity_relation(grid))
        else:
            relations.append(Relation(grid=grid, t=t, pairs=frozenset(by_time[t])))
    return MultiflowApprox(
        grid=grid,
        times=times,
        relations=tuple(relations),
        provenance=Provenance(
            k=k,
            delta=h * (1.0 + m),
            strategies=described,
            budget=budget,
            seed=seed,
        ),
    )


def reach_relation(
    sys,
    grid: Grid,
    t: float,
    budget: int,
    k: int,
    strategies: Optional[Sequence[SelectionStrategy]] = None,
    seed: int = 0,
    threads: int = 1,
) -> Relation:
    """The sampled relation at one time; exact identity at t = 0."""
    t = float(t)
    if t < 0.0:
        raise ValueError(f"time must be nonnegative, got {t!r}")
    if t == 0.0:
        return identity_relation(grid)
    approx = build_multiflow(
        sys, grid, (t,), budget, k, strategies=strategies, seed=seed, threads=threads
    )
    return approx.relations[-1]


def _embed(relation: Relation) -> np.ndarray:
    """Pairs as points of K x K, via the owning grid's cell centers."""
    if not relation.pairs:
        return np.zeros((0, 2 * relation.grid.dim))
    centers = relation.grid.centers()
    rows = [
        np.concatenate([centers[a], centers[b]]) for a, b in sorted(relation.pairs)
    ]
    return np.array(rows)


def _directed_points(P: np.ndarray, Q: np.ndarray) -> float:
    """max over P of sup-norm distance to the nearest point of Q."""
    if P.shape[0] == 0:
        return 0.0
    if Q.shape[0] == 0:
        return math.inf
    worst = 0.0
    block = 256
    for i in range(0, P.shape[0], block):
        chunk = P[i : i + block]
        d = np.abs(chunk[:, None, :] - Q[None, :, :]).max(axis=2).min(axis=1)
        worst = max(worst, float(d.max()))
    return worst


def directed_distance(A: Relation, B: Relation) -> float:
    """How far A sticks out of B, in state units on the embedded pairs.

    Zero when A is a subset of B; otherwise the largest sup-norm distance
    from an unmatched pair of A to the nearest pair of B; infinite when B
    is empty while A is not.
    """
    if A.grid != B.grid:
        raise GridMismatchError("directed_distance needs a common grid")
    extra = A.pairs - B.pairs
    if not extra:
        return 0.0
    trimmed = Relation(grid=A.grid, t=A.t, pairs=frozenset(extra))
    return _directed_points(_embed(trimmed), _embed(B))


def monoid_defect(
    sys,
    grid: Grid,
    t: float,
    s: float,
    budget: int,
    k: int,
    strategies: Optional[Sequence[SelectionStrategy]] = None,
    seed: int = 0,
    threads: int = 1,
) -> tuple:
    """(forward, backward) deviation of compose(R_t, R_s) from R_{t+s}.

    All three relations come from one shared batch, so they agree on h,
    delta, strategies, and seeds.  Forward measures pairs produced by
    pasting that the direct relation misses (bounded by lattice and step
    resolution); backward measures direct pairs the composition misses
    (sampling-limited, reported but never certified small).
    """
    t = float(t)
    s = float(s)
    if t < 0.0 or s < 0.0:
        raise ValueError("times must be nonnegative")
    if t + s == 0.0:
        return 0.0, 0.0
    wanted = sorted({x for x in (t, s, t + s) if x > 0.0})
    approx = build_multiflow(
        sys, grid, wanted, budget, k, strategies=strategies, seed=seed, threads=threads
    )

    def get(x):
        return identity_relation(grid) if x == 0.0 else approx.relation_at(x)

    composed = compose(get(t), get(s))
    direct = get(t + s)
    return directed_distance(composed, direct), directed_distance(direct, composed)


@dataclass(frozen=True)
class ClosureReport:
    """Stabilization evidence: cross-level relation distances per time.

    distances[i] lists, for times[i], the symmetric Hausdorff distance
    between each pair of consecutive refinement levels; regressions lists
    (time, level pair index) entries where that sequence failed to
    decrease strictly.
    """

    times: tuple
    distances: tuple
    regressions: tuple
    decreasing: bool


def closure_defect(approxes: Sequence[MultiflowApprox]) -> ClosureReport:
    """Compare consecutive refinement levels' relations at common times.

    Levels may use different grids; relations are embedded as point clouds
    in K x K through their own grids and compared by symmetric Hausdorff
    distance in sup norm.  A level sequence supporting closedness shows
    these distances shrinking as pitch, step, and budget are refined.
    """
    if len(approxes) < 2:
        raise ValueError("at least two refinement levels are required")
    times = approxes[0].times
    for ap in approxes[1:]:
        if ap.times != times:
            raise ValueError(
                f"levels disagree on times: {ap.times} vs {times}"
            )
    distances = []
    regressions = []
    for t_idx, t in enumerate(times):
        clouds = [_embed(ap.relation_at(t)) for ap in approxes]
        row = []
        for lvl in range(len(clouds) - 1):
            fwd = _directed_points(clouds[lvl], clouds[lvl + 1])
            bwd = _directed_points(clouds[lvl + 1], clouds[lvl])
            row.append(max(fwd, bwd))
        for lvl in range(len(row) - 1):
            if not row[lvl + 1] < row[lvl]:
                regressions.append((t, lvl))
        distances.append(tuple(row))
    return ClosureReport(
        times=times,
        distances=tuple(distances),
        regressions=tuple(regressions),
        decreasing=not regressions,
    )


_HEADER_RE = re.compile(
    r"^# t=(?P<t>\S+) grid=(?P<box>\S+);(?P<pitch>\S+) "
    r"provenance=k=(?P<k>\d+),delta=(?P<delta>\S+),seed=(?P<seed>-?\d+),budget=(?P<budget>\d+)$"
)


def write_relation(relation: Relation, path, k: int, delta: float, seed: int, budget: int) -> Path:
    """One header line, then sorted `a b` index pairs; byte-stable."""
    path = Path(path)
    box = relation.grid.box
    box_str = ",".join(f"{lo!r}:{hi!r}" for lo, hi in zip(box.lo, box.hi))
    pitch_str = ",".join(repr(p) for p in relation.grid.pitch)
    header = (
        f"# t={relation.t!r} grid={box_str};{pitch_str} "
        f"provenance=k={k},delta={delta!r},seed={seed},budget={budget}"
    )
    lines = [header] + [f"{a} {b}" for a, b in sorted(relation.pairs)]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_relation(path) -> tuple:
    """Inverse of write_relation: (Relation, provenance dict)."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty relation file")
    match = _HEADER_RE.match(lines[0])
    if match is None:
        raise ValueError(f"{path}: malformed relation header {lines[0]!r}")
    lo = []
    hi = []
    for part in match.group("box").split(","):
        a, b = part.split(":")
        lo.append(float(a))
        hi.append(float(b))
    pitch = tuple(float(p) for p in match.group("pitch").split(","))
    grid = Grid(box=Box(lo=tuple(lo), hi=tuple(hi)), pitch=pitch)
    pairs = set()
    for row_no, line in enumerate(lines[1:], start=2):
        cells = line.split()
        if len(cells) != 2:
            raise ValueError(f"{path}:{row_no}: expected 'a b', got {line!r}")
        pairs.add((int(cells[0]), int(cells[1])))
    relation = Relation(grid=grid, t=float(match.group("t")), pairs=frozenset(pairs))
    provenance = {
        "k": int(match.group("k")),
        "delta": float(match.group("delta")),
        "seed": int(match.group("seed")),
        "budget": int(match.group("budget")),
    }
    return relation, provenance
