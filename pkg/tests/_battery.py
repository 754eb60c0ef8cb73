"""Shared test systems: small, hand-checkable dynamics used across the suite.

relay          dx = -sign(x); both sides push onto x = 0, then sliding holds.
crossed_lines  four constant quadrant fields circulating counterclockwise.
sliding_2d     (1, -sign(x2)): attracted to the x2 = 0 line, slides right.
bang_bang      the full interval hull{-1, +1} at every state.
decay          the smooth single-valued field -x.
constant_one   the single-valued field +1.
"""

import numpy as np

import diffinc as d


def relay():
    return d.FilippovSystem(
        switching=(d.SwitchingFunction.compile("x1", 1, gradient=["1"]),),
        regions=(
            d.Region(id=1, signs=("+",), field=d.compile_field(["-1"], 1)),
            d.Region(id=2, signs=("-",), field=d.compile_field(["1"], 1)),
        ),
        boundary_tol=1e-8,
        domain=d.Box(lo=(-2.0,), hi=(2.0,)),
    )


def relay_no_gradient():
    # same dynamics, gradient left to finite differences
    return d.FilippovSystem(
        switching=(d.SwitchingFunction.compile("x1", 1),),
        regions=(
            d.Region(id=1, signs=("+",), field=d.compile_field(["-1"], 1)),
            d.Region(id=2, signs=("-",), field=d.compile_field(["1"], 1)),
        ),
        boundary_tol=1e-8,
        domain=d.Box(lo=(-2.0,), hi=(2.0,)),
    )


def crossed_lines():
    return d.FilippovSystem(
        switching=(
            d.SwitchingFunction.compile("x1", 2, gradient=["1", "0"]),
            d.SwitchingFunction.compile("x2", 2, gradient=["0", "1"]),
        ),
        regions=(
            d.Region(id=1, signs=("+", "+"), field=d.compile_field(["-1", "1"], 2)),
            d.Region(id=2, signs=("-", "+"), field=d.compile_field(["-1", "-1"], 2)),
            d.Region(id=3, signs=("-", "-"), field=d.compile_field(["1", "-1"], 2)),
            d.Region(id=4, signs=("+", "-"), field=d.compile_field(["1", "1"], 2)),
        ),
        boundary_tol=1e-8,
        domain=d.Box(lo=(-1.0, -1.0), hi=(1.0, 1.0)),
    )


def sliding_2d():
    return d.FilippovSystem(
        switching=(d.SwitchingFunction.compile("x2", 2, gradient=["0", "1"]),),
        regions=(
            d.Region(id=1, signs=("+",), field=d.compile_field(["1", "-1"], 2)),
            d.Region(id=2, signs=("-",), field=d.compile_field(["1", "1"], 2)),
        ),
        boundary_tol=1e-8,
        domain=d.Box(lo=(-2.0, -2.0), hi=(2.0, 2.0)),
    )


def bang_bang():
    return d.ConstantSetMap(
        value=d.ConvexSet(np.array([[-1.0], [1.0]])),
        domain=d.Box(lo=(-2.0,), hi=(2.0,)),
    )


def decay():
    return d.SingleValuedMap(f=lambda x: -x, domain=d.Box(lo=(-2.0,), hi=(2.0,)))


def constant_one():
    return d.ConstantSetMap(
        value=d.ConvexSet(np.array([[1.0]])),
        domain=d.Box(lo=(-2.0,), hi=(2.0,)),
    )


# name -> (factory, interior start state)
SYSTEMS = {
    "relay": (relay, np.array([0.5])),
    "crossed_lines": (crossed_lines, np.array([0.3, 0.2])),
    "sliding_2d": (sliding_2d, np.array([0.0, 0.5])),
    "bang_bang": (bang_bang, np.array([0.0])),
    "decay": (decay, np.array([1.0])),
    "constant": (constant_one, np.array([0.5])),
}

NAMED_STRATEGIES = (
    d.VertexIndex(0),
    d.Centroid(),
    d.RandomSeeded(7),
    d.SlidingAware(),
)


def funnel(F, x0, plan, n_runs, seed):
    """n_runs trajectories cycling the default battery with derived seeds."""
    battery = d.default_battery(seed)
    out = []
    for run in range(n_runs):
        strat = battery[run % len(battery)]
        rng = None
        if strat.make_rng() is not None:
            rng = np.random.default_rng(np.random.SeedSequence([seed, run]))
        out.append(d.euler_delta_solution(F, x0, plan, strat, rng=rng))
    return out
