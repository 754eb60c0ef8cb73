"""Approximate solutions of differential inclusions by Euler broken lines.

A broken line with step h = c/k, whose leg velocities are chosen from the
set-valued field at the current state, stays within every delta-inflated
evaluation of the field once delta = h*(1 + m), where m bounds |F| on the
domain.  That inflation budget covers both the time lag (the velocity was
sampled at the leg's left endpoint) and the space drift (the state moves
at most h*m within a leg).  Refining k drives delta to zero, which is the
sense in which these polylines approximate true solutions.

The field offers a whole set at every state, so a trajectory is only
defined once a selection rule is fixed.  Strategies make that rule an
explicit, seedable object: reruns with the same strategy and seed are
bit-identical, and a battery of different strategies probes the spread
of the solution funnel rather than a single arbitrary member.

All state arithmetic is plain float64 with a fixed evaluation order, and
Trajectory re-derives every interior state from its neighbors at
construction time, requiring exact equality.  Files written by
write_trajectory use repr() floats, so write -> read -> write is
byte-identical.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .setvalued import (
    Box,
    ConstantSetMap,
    ConvexSet,
    DimensionMismatchError,
    estimate_bound,
    hull_distance,
    hull_of,
    inflate,
)
from .filippov import FilippovSystem

__all__ = [
    "BOUNDARY_SNAP",
    "Centroid",
    "DEFAULT_K_SCHEDULE",
    "ExitInfo",
    "LipschitzReport",
    "MEMBERSHIP_TOL",
    "RandomSeeded",
    "RefineReport",
    "ResidualReport",
    "SelectionStrategy",
    "SlidingAware",
    "SolverDiagnostic",
    "SolverStagnationError",
    "StepPlan",
    "Trajectory",
    "TwoPhase",
    "VertexIndex",
    "continue_to_boundary",
    "equicontinuity_check",
    "euler_delta_solution",
    "read_trajectory",
    "refine",
    "verify_delta_solution",
    "write_trajectory",
]

BOUNDARY_SNAP = 1e-9  # continuation stops within this distance of a face
MEMBERSHIP_TOL = 1e-9  # residual tolerance for velocity-in-inflated-hull checks
LIPSCHITZ_SLACK = 1e-9  # allowed excess of |dx|/|dt| over the declared bound
STAGNATION_LEGS = 10_000  # consecutive tiny legs before continuation aborts
STAGNATION_TIME = 1e-12  # a leg advancing less than this counts as tiny
SAFETY_FACTOR = 1.25  # margin over the sampled bound estimate
DEFAULT_K_SCHEDULE = (100, 200, 400, 800, 1600, 3200, 6400)


class SolverDiagnostic(RuntimeError):
    """A trajectory construction failed for a stated numerical reason."""


class SolverStagnationError(SolverDiagnostic):
    """Continuation legs stopped advancing time; bound or radius is degenerate."""


@dataclass(frozen=True)
class ExitInfo:
    """Where and when a trajectory left the domain box."""

    time: float
    face: str


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Piecewise-linear path with per-leg constant velocities.

    Construction re-derives states[i+1] from states[i] and requires exact
    float equality; any trajectory that exists is internally consistent by
    construction, not by tolerance.  delta is the inflation radius under
    which every leg velocity is claimed to belong to the inflated field;
    verify_delta_solution re-checks that claim independently.
    """

    times: np.ndarray
    states: np.ndarray
    velocities: np.ndarray
    delta: float
    h: float
    m: float
    k: int
    strategy: str = ""
    seed: Optional[int] = None
    exit: Optional[ExitInfo] = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states.reshape(-1, 1)
        velocities = np.asarray(self.velocities, dtype=float)
        if velocities.size == 0:
            velocities = np.zeros((0, states.shape[1]))
        elif velocities.ndim == 1:
            velocities = velocities.reshape(-1, 1)
        if times.size < 1:
            raise ValueError("a trajectory needs at least one breakpoint")
        if states.shape[0] != times.size:
            raise ValueError(
                f"{states.shape[0]} states for {times.size} breakpoints"
            )
        if velocities.shape[0] != times.size - 1:
            raise ValueError(
                f"{velocities.shape[0]} velocities for {times.size} breakpoints"
            )
        if velocities.shape[0] and velocities.shape[1] != states.shape[1]:
            raise DimensionMismatchError(
                f"velocity dim {velocities.shape[1]} vs state dim {states.shape[1]}"
            )
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(states))
                and np.all(np.isfinite(velocities))):
            raise ValueError("trajectory data must be finite")
        if not (isinstance(self.k, int) and self.k >= 1):
            raise ValueError(f"k must be a positive integer, got {self.k!r}")
        if not (self.h > 0.0 and math.isfinite(self.h)):
            raise ValueError(f"step h must be positive, got {self.h!r}")
        if not (self.m >= 0.0 and self.delta >= 0.0):
            raise ValueError("m and delta must be nonnegative")
        dt = times[1:] - times[:-1]
        if dt.size:
            if not np.all(dt > 0.0):
                raise ValueError("times must be strictly increasing")
            # slack: breakpoints are fl(t0 + i*h), so one interval can exceed
            # h by a few ulp of the absolute times even on an exact grid
            slack = 8.0 * np.finfo(float).eps * max(
                1.0, abs(float(times[0])), abs(float(times[-1]))
            )
            if float(dt.max()) > self.h * (1.0 + 1e-12) + slack:
                raise ValueError(
                    f"max interval {float(dt.max())!r} exceeds the declared step {self.h!r}"
                )
            expected = states[:-1] + dt[:, None] * velocities
            if not np.array_equal(expected, states[1:]):
                raise ValueError("piecewise-linear consistency violated")
        times.setflags(write=False)
        states.setflags(write=False)
        velocities.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "velocities", velocities)

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def final_time(self) -> float:
        return float(self.times[-1])

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def max_step(self) -> float:
        if self.times.size < 2:
            return 0.0
        return float(np.max(self.times[1:] - self.times[:-1]))

    def at(self, t: float) -> np.ndarray:
        """State at time t by linear interpolation; exact rows at breakpoints."""
        t = float(t)
        times = self.times
        if t < times[0] - 1e-9 or t > times[-1] + 1e-9:
            raise ValueError(
                f"time {t!r} outside [{times[0]!r}, {times[-1]!r}]"
            )
        if t <= times[0]:
            return self.states[0].copy()
        if t >= times[-1]:
            return self.states[-1].copy()
        i = int(np.searchsorted(times, t, side="right")) - 1
        if t == times[i]:
            return self.states[i].copy()
        return self.states[i] + (t - times[i]) * self.velocities[i]

    def at_many(self, ts) -> np.ndarray:
        ts = np.asarray(ts, dtype=float).reshape(-1)
        return np.array([self.at(t) for t in ts])


@dataclass(frozen=True)
class StepPlan:
    """Subdivision k of a horizon c, optionally tied to a safety radius.

    When both r and m are given the plan must obey c <= r/m, the schedule
    under which every broken line stays inside the r-ball of its start.
    """

    k: int
    c: float
    r: Optional[float] = None
    m: Optional[float] = None

    def __post_init__(self):
        if not (isinstance(self.k, int) and not isinstance(self.k, bool) and self.k >= 1):
            raise ValueError(f"k must be a positive integer, got {self.k!r}")
        if not (math.isfinite(self.c) and self.c > 0.0):
            raise ValueError(f"horizon c must be positive, got {self.c!r}")
        if self.r is not None and not (math.isfinite(self.r) and self.r > 0.0):
            raise ValueError(f"radius r must be positive, got {self.r!r}")
        if self.m is not None and not (math.isfinite(self.m) and self.m >= 0.0):
            raise ValueError(f"bound m must be nonnegative, got {self.m!r}")
        if self.r is not None and self.m is not None and self.m > 0.0:
            if self.c > (self.r / self.m) * (1.0 + 1e-12):
                raise ValueError(
                    f"horizon {self.c!r} violates the safety rule c <= r/m = {self.r / self.m!r}"
                )

    @property
    def h(self) -> float:
        return self.c / self.k

    @classmethod
    def from_safety(cls, r: float, m: float, k: int) -> "StepPlan":
        """The paper-style plan c = r/m keeping the path inside the r-ball."""
        if not (math.isfinite(m) and m > 0.0):
            raise ValueError(f"bound m must be positive, got {m!r}")
        return cls(k=k, c=r / m, r=r, m=m)


class SelectionStrategy:
    """Rule resolving the free choice of a velocity inside F(x).

    select works on a ConvexSet value; select1 is the scalar twin used by
    the 1-D fast loop and must make the same choice the vector path makes,
    bit for bit, so the two paths are interchangeable.
    """

    def make_rng(self) -> Optional[np.random.Generator]:
        return None

    def describe(self) -> str:
        raise NotImplementedError

    def select(self, value: ConvexSet, x, frac, rng, system) -> np.ndarray:
        raise NotImplementedError

    def select1(self, verts, boundary2, x, frac, rng, system) -> float:
        raise NotImplementedError


@dataclass(frozen=True)
class VertexIndex(SelectionStrategy):
    """Always the vertex with this index, modulo the vertex count."""

    index: int

    def describe(self) -> str:
        return f"vertex:{self.index}"

    def select(self, value, x, frac, rng, system):
        verts = value.vertices
        return verts[self.index % len(verts)]

    def select1(self, verts, boundary2, x, frac, rng, system):
        return verts[self.index % len(verts)]


@dataclass(frozen=True)
class Centroid(SelectionStrategy):
    """Average of the value's vertices."""

    def describe(self) -> str:
        return "centroid"

    def select(self, value, x, frac, rng, system):
        return value.centroid

    def select1(self, verts, boundary2, x, frac, rng, system):
        return sum(verts) / len(verts)


@dataclass(frozen=True)
class RandomSeeded(SelectionStrategy):
    """Uniform point of the value: simplex-uniform mixture of its vertices."""

    seed: int

    def describe(self) -> str:
        return f"random:{self.seed}"

    def make_rng(self):
        return np.random.default_rng(self.seed)

    def select(self, value, x, frac, rng, system):
        verts = value.vertices
        n = len(verts)
        if n == 1:
            return verts[0]
        if n == 2:
            u = rng.random()
            return verts[0] + u * (verts[1] - verts[0])
        w = rng.dirichlet(np.ones(n))
        out = w[0] * verts[0]
        for wi, row in zip(w[1:], verts[1:]):
            out = out + wi * row
        return out

    def select1(self, verts, boundary2, x, frac, rng, system):
        n = len(verts)
        if n == 1:
            return verts[0]
        if n == 2:
            u = rng.random()
            return verts[0] + u * (verts[1] - verts[0])
        w = rng.dirichlet(np.ones(n))
        out = w[0] * verts[0]
        for wi, vi in zip(w[1:], verts[1:]):
            out = out + wi * vi
        return out


@dataclass(frozen=True)
class SlidingAware(SelectionStrategy):
    """Tangential sliding velocity on two-region boundary points, else centroid."""

    def describe(self) -> str:
        return "sliding"

    def select(self, value, x, frac, rng, system):
        if system is not None:
            v = system._sliding_velocity(x)
            if v is not None:
                return v
        return value.centroid

    def select1(self, verts, boundary2, x, frac, rng, system):
        if boundary2 and system is not None:
            v = system._sliding1(x)
            if v is not None:
                return v
        return sum(verts) / len(verts)


@dataclass(frozen=True)
class TwoPhase(SelectionStrategy):
    """first until the given fraction of the horizon, then second.

    Switching a deterministic pair of extreme selections at varied fractions
    sweeps intermediate reachable states that no single fixed rule visits.
    """

    first: SelectionStrategy
    second: SelectionStrategy
    fraction: float

    def __post_init__(self):
        if not (0.0 <= self.fraction <= 1.0):
            raise ValueError(f"fraction must lie in [0, 1], got {self.fraction!r}")

    def describe(self) -> str:
        return f"two_phase({self.first.describe()},{self.second.describe()},{self.fraction!r})"

    def make_rng(self):
        rng = self.first.make_rng()
        return rng if rng is not None else self.second.make_rng()

    def select(self, value, x, frac, rng, system):
        phase = self.first if frac < self.fraction else self.second
        return phase.select(value, x, frac, rng, system)

    def select1(self, verts, boundary2, x, frac, rng, system):
        phase = self.first if frac < self.fraction else self.second
        return phase.select1(verts, boundary2, x, frac, rng, system)


def _resolve_fast1(F):
    """Scalar evaluator (verts tuple, two-region flag) for 1-D maps."""
    if isinstance(F, ConstantSetMap):
        cached = F._fast1(0.0)
        return lambda x: cached
    fast = getattr(F, "_fast1", None)
    if fast is not None:
        return fast
    evaluate = F.evaluate

    def wrapper(x):
        return evaluate(np.array([x])).flat(), False

    return wrapper


def _run_euler_1d(fast1, strategy, rng, system, tlist, k, x0, lo, hi):
    select1 = strategy.select1
    xs = [x0]
    vs = []
    x = x0
    exit_info = None
    i = 0
    while i < k:
        verts, b2 = fast1(x)
        v = select1(verts, b2, x, i / k, rng, system)
        t_i = tlist[i]
        dt = tlist[i + 1] - t_i
        nxt = x + dt * v
        if lo <= nxt <= hi:
            xs.append(nxt)
            vs.append(v)
            x = nxt
            i += 1
            continue
        if v != v or nxt != nxt:
            raise SolverDiagnostic(f"non-finite state at t={t_i!r}")
        if nxt > hi:
            bound, face = hi, "x1_max"
        else:
            bound, face = lo, "x1_min"
        t_exit = t_i + (bound - x) / v
        dt2 = t_exit - t_i
        if dt2 <= 0.0:
            exit_info = ExitInfo(time=t_i, face=face)
            del tlist[i + 1 :]
        else:
            xs.append(x + dt2 * v)
            vs.append(v)
            del tlist[i + 1 :]
            tlist.append(t_exit)
            exit_info = ExitInfo(time=t_exit, face=face)
        break
    return tlist, xs, vs, exit_info


def _run_euler_nd(F, strategy, rng, system, times, k, x0, domain):
    lo = np.array(domain.lo)
    hi = np.array(domain.hi)
    select = strategy.select
    evaluate = F.evaluate
    xs = [x0]
    vs = []
    x = x0
    exit_info = None
    out_times = times
    for i in range(k):
        value = evaluate(x)
        v = np.asarray(select(value, x, i / k, rng, system), dtype=float).reshape(-1)
        t_i = times[i]
        dt = times[i + 1] - t_i
        nxt = x + dt * v
        if bool(np.all(nxt >= lo)) and bool(np.all(nxt <= hi)):
            xs.append(nxt)
            vs.append(v)
            x = nxt
            continue
        if np.isnan(nxt).any():
            raise SolverDiagnostic(f"non-finite state at t={float(t_i)!r}")
        q_best = math.inf
        face = ""
        for j in range(x.size):
            if nxt[j] > hi[j]:
                bound, side = hi[j], "max"
            elif nxt[j] < lo[j]:
                bound, side = lo[j], "min"
            else:
                continue
            q = (bound - x[j]) / v[j]
            if q < q_best:
                q_best = q
                face = f"x{j + 1}_{side}"
        t_exit = t_i + q_best
        dt2 = t_exit - t_i
        if dt2 <= 0.0:
            exit_info = ExitInfo(time=float(t_i), face=face)
            out_times = times[: i + 1]
        else:
            xs.append(x + dt2 * v)
            vs.append(v)
            exit_info = ExitInfo(time=float(t_exit), face=face)
            out_times = np.append(times[: i + 1], t_exit)
        break
    return out_times, xs, vs, exit_info


def euler_delta_solution(
    F,
    x0,
    plan: StepPlan,
    strategy: SelectionStrategy,
    domain: Optional[Box] = None,
    rng: Optional[np.random.Generator] = None,
    t0: float = 0.0,
    seed: Optional[int] = None,
) -> Trajectory:
    """Broken line from x0 with step h = c/k and strategy-chosen velocities.

    Breakpoint times are t0 + i*h.  Each leg's velocity is selected from the
    field's value at the leg's left endpoint; a leg that would leave the
    domain box is cut at the crossing face and the trajectory ends there
    with ExitInfo.  The recorded delta is h*(1 + m), with m taken from the
    plan or estimated from the field at the safety factor.
    """
    domain = F.domain if domain is None else domain
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.size != domain.dim:
        raise DimensionMismatchError(f"x0 dim {x0.size} vs domain dim {domain.dim}")
    if not domain.contains(x0, tol=1e-9):
        raise ValueError(f"x0 = {x0.tolist()} lies outside the domain box")
    m_eff = plan.m
    if m_eff is None:
        m_eff = SAFETY_FACTOR * estimate_bound(F, domain)
    h = plan.h
    k = plan.k
    delta = h * (1.0 + m_eff)
    times = t0 + h * np.arange(k + 1)
    if rng is None:
        rng = strategy.make_rng()
    system = F if isinstance(F, FilippovSystem) else None
    if domain.dim == 1:
        fast1 = _resolve_fast1(F)
        tlist, xs, vs, exit_info = _run_euler_1d(
            fast1, strategy, rng, system,
            times.tolist(), k, float(x0[0]), domain.lo[0], domain.hi[0],
        )
        times_out = np.array(tlist)
    else:
        times_out, xs, vs, exit_info = _run_euler_nd(
            F, strategy, rng, system, times, k, x0, domain
        )
    states = np.array(xs, dtype=float)
    velocities = np.array(vs, dtype=float) if vs else np.zeros((0, domain.dim))
    return Trajectory(
        times=times_out,
        states=states,
        velocities=velocities,
        delta=delta,
        h=h,
        m=float(m_eff),
        k=k,
        strategy=strategy.describe(),
        seed=seed,
        exit=exit_info,
    )


@dataclass(frozen=True)
class RefineReport:
    """Consecutive sup-distances along a k schedule.

    converged reflects the final comparison only; a non-Cauchy sequence
    (legitimate for randomized selection on non-unique dynamics) shows up
    as converged=False with the distances left for inspection.
    """

    k_values: tuple
    sup_distances: tuple
    converged: bool
    tol: float


def refine(
    F,
    x0,
    horizon: float,
    strategy: SelectionStrategy,
    domain: Optional[Box] = None,
    k_schedule: Optional[Sequence[int]] = None,
    tol: float = 1e-3,
):
    """Rerun the construction along a k schedule and compare successive runs.

    Each pair of consecutive trajectories is compared by linear interpolation
    on the union of their breakpoint times, in sup norm.  Returns the finest
    trajectory and the report; non-convergence is reported, never raised.
    The bound m is estimated once and shared so delta scales purely with h.
    """
    domain = F.domain if domain is None else domain
    ks = tuple(DEFAULT_K_SCHEDULE if k_schedule is None else k_schedule)
    if len(ks) < 2:
        raise ValueError("k_schedule needs at least two levels")
    for a, b in zip(ks, ks[1:]):
        if not (isinstance(a, int) and a >= 1 and b > a):
            raise ValueError(f"k_schedule must be strictly increasing positive, got {ks}")
    m = SAFETY_FACTOR * estimate_bound(F, domain)
    trajs = []
    for k in ks:
        plan = StepPlan(k=k, c=float(horizon), m=m)
        trajs.append(
            euler_delta_solution(F, x0, plan, strategy, domain, rng=strategy.make_rng())
        )
    dists = []
    for a, b in zip(trajs, trajs[1:]):
        t_cap = min(a.final_time, b.final_time)
        grid = np.union1d(a.times, b.times)
        grid = grid[grid <= t_cap]
        diff = a.at_many(grid) - b.at_many(grid)
        dists.append(float(np.max(np.abs(diff))) if diff.size else 0.0)
    report = RefineReport(
        k_values=ks,
        sup_distances=tuple(dists),
        converged=bool(dists and dists[-1] <= tol),
        tol=tol,
    )
    return trajs[-1], report


def continue_to_boundary(
    F,
    x0,
    domain: Optional[Box],
    plan_seed: StepPlan,
    strategy: SelectionStrategy,
    t_max: float,
) -> Trajectory:
    """Chain safety-rule legs until the box boundary or t_max.

    Each leg re-reads r as the current distance to the boundary and runs
    the construction with c = min(remaining time, r/m), k from plan_seed,
    and m estimated once (or taken from plan_seed).  Stops with ExitInfo
    when the state comes within 1e-9 of a face; stops without one when
    accumulated time reaches t_max.  Aborts if 10^4 consecutive legs each
    advance time by less than 1e-12, which signals a degenerate bound or
    a radius collapsing without boundary contact.
    """
    domain = F.domain if domain is None else domain
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if not (math.isfinite(t_max) and t_max > 0.0):
        raise ValueError(f"t_max must be positive, got {t_max!r}")
    r0 = domain.boundary_distance(x0)
    if r0 <= 0.0:
        raise ValueError(f"x0 = {x0.tolist()} must lie strictly inside the domain")
    m = plan_seed.m
    if m is None:
        m = SAFETY_FACTOR * estimate_bound(F, domain)
    k_leg = plan_seed.k
    rng = strategy.make_rng()
    pieces = []
    x = x0
    t_cur = 0.0
    stagnant = 0
    exit_info = None
    time_floor = 1e-12 * max(1.0, abs(t_max))
    while True:
        r = domain.boundary_distance(x)
        if r <= BOUNDARY_SNAP:
            exit_info = ExitInfo(time=t_cur, face=domain.nearest_face(x))
            break
        remaining = t_max - t_cur
        if remaining <= time_floor:
            break
        c = remaining if m <= 0.0 else min(remaining, r / m)
        if t_cur + c / k_leg > t_cur:
            plan = StepPlan(k=k_leg, c=c, r=r, m=m)
            leg = euler_delta_solution(F, x, plan, strategy, domain, rng=rng, t0=t_cur)
            pieces.append(leg)
            advance = leg.final_time - t_cur
            x = leg.final_state
            t_cur = leg.final_time
            if leg.exit is not None:
                exit_info = leg.exit
                break
            if advance < STAGNATION_TIME:
                stagnant += 1
            else:
                stagnant = 0
        else:
            stagnant += 1
        if stagnant >= STAGNATION_LEGS:
            raise SolverStagnationError(
                f"{STAGNATION_LEGS} legs advanced less than {STAGNATION_TIME} "
                f"time units each (t = {t_cur!r}, "
                f"r = {float(domain.boundary_distance(x))!r})"
            )
    if not pieces:
        return Trajectory(
            times=np.array([0.0]),
            states=x0.reshape(1, -1),
            velocities=np.zeros((0, x0.size)),
            delta=plan_seed.h * (1.0 + m),
            h=plan_seed.h,
            m=float(m),
            k=plan_seed.k,
            strategy=strategy.describe(),
            exit=exit_info,
        )
    times = np.concatenate([pieces[0].times] + [p.times[1:] for p in pieces[1:]])
    states = np.concatenate([pieces[0].states] + [p.states[1:] for p in pieces[1:]])
    velocities = np.concatenate([p.velocities for p in pieces])
    return Trajectory(
        times=times,
        states=states,
        velocities=velocities,
        delta=max(p.delta for p in pieces),
        h=max(p.h for p in pieces),
        m=float(m),
        k=int(velocities.shape[0]),
        strategy=strategy.describe(),
        exit=exit_info,
    )


@dataclass(frozen=True, eq=False)
class ResidualReport:
    """Per-leg distances from each velocity to the inflated local hull."""

    residuals: np.ndarray
    worst: tuple
    passed: bool
    failing: int
    delta: float
    tol: float


def verify_delta_solution(traj: Trajectory, F, report_worst: int = 5) -> ResidualReport:
    """Independent recheck that each leg velocity fits the inflated field.

    The field over the delta-ball around a leg is approximated by the hull
    of its values at the leg endpoints and midpoint, inflated by the
    trajectory's recorded delta; the residual is the distance from the leg
    velocity to that set, and a leg passes when it is at most 1e-9.
    """
    n_legs = traj.velocities.shape[0]
    residuals = np.zeros(n_legs)
    for i in range(n_legs):
        y0 = traj.states[i]
        y1 = traj.states[i + 1]
        mid = 0.5 * (y0 + y1)
        local = hull_of([F.evaluate(y0), F.evaluate(mid), F.evaluate(y1)])
        residuals[i] = hull_distance(inflate(local, traj.delta), traj.velocities[i])
    order = np.argsort(-residuals)[: max(0, report_worst)]
    worst = tuple((int(i), float(residuals[i])) for i in order)
    failing = int(np.count_nonzero(residuals > MEMBERSHIP_TOL))
    residuals.setflags(write=False)
    return ResidualReport(
        residuals=residuals,
        worst=worst,
        passed=failing == 0,
        failing=failing,
        delta=traj.delta,
        tol=MEMBERSHIP_TOL,
    )


@dataclass(frozen=True)
class LipschitzReport:
    """Largest |dx|/|dt| over breakpoint pairs, against a declared bound."""

    max_ratio: float
    bound: float
    violations: tuple
    passed: bool


def equicontinuity_check(trajs: Sequence[Trajectory], M: float) -> LipschitzReport:
    """Check |x(s1) - x(s2)| <= M*|s1 - s2| over all breakpoint pairs.

    Pairs are enumerated within each trajectory, blockwise to stay
    vectorized; violations are (trajectory index, i, j, ratio) tuples,
    capped at 16, with the Euclidean norm on state differences.
    """
    block = 512
    max_ratio = 0.0
    violations = []
    for t_idx, traj in enumerate(trajs):
        T = traj.times
        S = traj.states
        n = T.size
        for a0 in range(0, n, block):
            a1 = min(a0 + block, n)
            for b0 in range(a0, n, block):
                b1 = min(b0 + block, n)
                dt = T[b0:b1][None, :] - T[a0:a1][:, None]
                dx = np.linalg.norm(
                    S[b0:b1][None, :, :] - S[a0:a1][:, None, :], axis=2
                )
                mask = dt > 0.0
                if not mask.any():
                    continue
                ratios = np.where(mask, dx / np.where(mask, dt, 1.0), 0.0)
                local = float(ratios.max())
                if local > max_ratio:
                    max_ratio = local
                if local > M + LIPSCHITZ_SLACK and len(violations) < 16:
                    for ai, bj in zip(*np.nonzero(ratios > M + LIPSCHITZ_SLACK)):
                        violations.append(
                            (t_idx, a0 + int(ai), b0 + int(bj), float(ratios[ai, bj]))
                        )
                        if len(violations) >= 16:
                            break
    return LipschitzReport(
        max_ratio=max_ratio,
        bound=float(M),
        violations=tuple(violations),
        passed=max_ratio <= M + LIPSCHITZ_SLACK,
    )


def _meta_path(path: Path) -> Path:
    return path.with_suffix(".meta")


def write_trajectory(traj: Trajectory, path) -> Path:
    """CSV of breakpoints plus a .meta JSON sidecar; byte-stable output.

    Columns are t, x1..xn, v1..vn; each row's velocity is the one in force
    on the interval starting at that row, so the last row's velocity cells
    are blank.  Floats are written with repr, making write -> read -> write
    reproduce the file exactly.
    """
    path = Path(path)
    n = traj.dim
    cols = ["t"] + [f"x{j + 1}" for j in range(n)] + [f"v{j + 1}" for j in range(n)]
    lines = [",".join(cols)]
    n_rows = traj.times.size
    for i in range(n_rows):
        parts = [repr(float(traj.times[i]))]
        parts += [repr(float(c)) for c in traj.states[i]]
        if i < n_rows - 1:
            parts += [repr(float(c)) for c in traj.velocities[i]]
        else:
            parts += [""] * n
        lines.append(",".join(parts))
    path.write_text("\n".join(lines) + "\n")
    meta = {
        "delta": traj.delta,
        "exit": None
        if traj.exit is None
        else {"face": traj.exit.face, "time": traj.exit.time},
        "h": traj.h,
        "k": traj.k,
        "m": traj.m,
        "seed": traj.seed,
        "strategy": traj.strategy,
    }
    _meta_path(path).write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    return path


def read_trajectory(path) -> Trajectory:
    """Inverse of write_trajectory; revalidates all trajectory invariants."""
    path = Path(path)
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    if len(header) < 3 or header[0] != "t" or (len(header) - 1) % 2 != 0:
        raise ValueError(f"{path}: malformed trajectory header {lines[0]!r}")
    n = (len(header) - 1) // 2
    times = []
    states = []
    velocities = []
    for row_no, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 1 + 2 * n:
            raise ValueError(f"{path}:{row_no}: expected {1 + 2 * n} cells")
        times.append(float(parts[0]))
        states.append([float(c) for c in parts[1 : 1 + n]])
        vel = parts[1 + n :]
        if any(c != "" for c in vel):
            velocities.append([float(c) for c in vel])
    meta = json.loads(_meta_path(path).read_text())
    exit_info = None
    if meta["exit"] is not None:
        exit_info = ExitInfo(time=meta["exit"]["time"], face=meta["exit"]["face"])
    return Trajectory(
        times=np.array(times),
        states=np.array(states),
        velocities=np.array(velocities) if velocities else np.zeros((0, n)),
        delta=meta["delta"],
        h=meta["h"],
        m=meta["m"],
        k=meta["k"],
        strategy=meta["strategy"],
        seed=meta["seed"],
        exit=exit_info,
    )
