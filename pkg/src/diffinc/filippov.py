"""Piecewise-smooth fields convexified on their switching boundaries.

The state space splits into regions cut out by sign patterns over finitely
many switching functions sigma_j.  Strictly inside a region the dynamics
is that region's own continuous field; within boundary_tol of a zero set
the value becomes the convex hull of every adjacent region's field.  The
hull restores upper semicontinuity, and with it existence of solutions,
at the price of multivaluedness on the boundary band.

Field and switching expressions use a small arithmetic grammar compiled
once at load time: +, -, *, /, unary minus, parentheses, state variables
x1..xn, numeric constants, and the functions sin, cos, exp, tanh, abs,
min, max, sign.  Evaluation is a single compiled closure call, with no
parsing or name lookup per step.
"""

from __future__ import annotations

import ast
import itertools
import math
import re
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .setvalued import Box, ConvexSet, DEDUP_TOL, EvaluationError

__all__ = [
    "Boundary",
    "CompiledExpression",
    "CompiledField",
    "ConfigurationError",
    "DegenerateSlidingError",
    "ExpressionError",
    "FieldEvaluationError",
    "FilippovSystem",
    "Interior",
    "Region",
    "SlidingSelection",
    "SwitchingFunction",
    "UnsupportedBoundaryError",
    "compile_expression",
    "compile_field",
]

FD_STEP = 1e-6  # central-difference step for gradients without analytic form
_GAP_SAMPLES = 128  # domain samples used to hunt for unclaimed sign patterns


class ExpressionError(ValueError):
    """Rejected or unparsable expression; the message names the offending token."""


class ConfigurationError(ValueError):
    """Region layout is inconsistent: overlapping claims or unclaimed patterns."""


class FieldEvaluationError(RuntimeError):
    """A region field produced a non-finite value."""

    def __init__(self, region_id: int, x):
        x = np.array(x, dtype=float, ndmin=1)
        super().__init__(f"field of region {region_id} is non-finite at x={x.tolist()}")
        self.region_id = region_id
        self.x = x


class DegenerateSlidingError(RuntimeError):
    """The sliding equation is satisfied by every combination; no unique alpha."""


class UnsupportedBoundaryError(RuntimeError):
    """Sliding selection is defined for two regions across one surface only."""


def _sign(a) -> float:
    a = float(a)
    if a > 0.0:
        return 1.0
    if a < 0.0:
        return -1.0
    return 0.0


_FUNCTIONS = {
    "sin": math.sin,
    "cos": math.cos,
    "exp": math.exp,
    "tanh": math.tanh,
    "abs": abs,
    "min": min,
    "max": max,
    "sign": _sign,
}

_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div)
_UNARYOPS = (ast.USub, ast.UAdd)
_VAR_RE = re.compile(r"^x([1-9][0-9]*)$")


def _check_node(node: ast.AST, dim: int, text: str) -> bool:
    """Validate one AST node against the grammar; returns True if it reads state."""
    if isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise ExpressionError(f"{text!r}: constant {node.value!r} is not numeric")
        return False
    if isinstance(node, ast.Name):
        match = _VAR_RE.match(node.id)
        if not match:
            raise ExpressionError(
                f"{text!r}: unknown name {node.id!r} (state variables are x1..x{dim})"
            )
        k = int(match.group(1))
        if k > dim:
            raise ExpressionError(
                f"{text!r}: variable {node.id!r} exceeds the state dimension {dim}"
            )
        return True
    if isinstance(node, ast.BinOp):
        if not isinstance(node.op, _BINOPS):
            raise ExpressionError(
                f"{text!r}: operator {type(node.op).__name__} is not in the grammar"
            )
        left = _check_node(node.left, dim, text)
        right = _check_node(node.right, dim, text)
        return left or right
    if isinstance(node, ast.UnaryOp):
        if not isinstance(node.op, _UNARYOPS):
            raise ExpressionError(
                f"{text!r}: operator {type(node.op).__name__} is not in the grammar"
            )
        return _check_node(node.operand, dim, text)
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCTIONS:
            shown = getattr(node.func, "id", type(node.func).__name__)
            raise ExpressionError(f"{text!r}: unknown function {shown!r}")
        if node.keywords:
            raise ExpressionError(f"{text!r}: keyword arguments are not in the grammar")
        name = node.func.id
        if name in ("min", "max"):
            if len(node.args) < 2:
                raise ExpressionError(f"{text!r}: {name} needs at least two arguments")
        elif len(node.args) != 1:
            raise ExpressionError(f"{text!r}: {name} takes exactly one argument")
        uses = False
        for arg in node.args:
            uses = _check_node(arg, dim, text) or uses
        return uses
    raise ExpressionError(f"{text!r}: {type(node).__name__} is not in the grammar")


class _IndexVars(ast.NodeTransformer):
    """Rewrite x<k> into x[k-1] for the vector-argument closure.

    Names that are not state variables are function names already vetted
    by the grammar check and pass through untouched.
    """

    def visit_Name(self, node: ast.Name):
        match = _VAR_RE.match(node.id)
        if match is None:
            return node
        k = int(match.group(1))
        return ast.Subscript(
            value=ast.Name(id="x", ctx=ast.Load()),
            slice=ast.Constant(value=k - 1),
            ctx=ast.Load(),
        )


class _ScalarVar(ast.NodeTransformer):
    """Rewrite the single variable x1 into the bare scalar argument."""

    def visit_Name(self, node: ast.Name):
        if _VAR_RE.match(node.id) is None:
            return node
        return ast.Name(id="x", ctx=ast.Load())


def _build_closure(body: ast.AST, text: str):
    lam = ast.Expression(
        ast.Lambda(
            args=ast.arguments(
                posonlyargs=[],
                args=[ast.arg(arg="x")],
                vararg=None,
                kwonlyargs=[],
                kw_defaults=[],
                kwarg=None,
                defaults=[],
            ),
            body=body,
        )
    )
    ast.fix_missing_locations(lam)
    namespace = {"__builtins__": {}}
    namespace.update(_FUNCTIONS)
    return eval(compile(lam, f"<expression {text!r}>", "eval"), namespace)


@dataclass(frozen=True, eq=False)
class CompiledExpression:
    """One scalar expression compiled to closures.

    fn takes an indexable state (tuple or array) and returns a float.
    fn1 takes a bare scalar and exists only when dim == 1; it is the
    allocation-free path used by tight 1-D loops.
    """

    text: str
    dim: int
    fn: object
    fn1: object
    uses_state: bool

    def __call__(self, x) -> float:
        return float(self.fn(x))


def compile_expression(text: str, dim: int) -> CompiledExpression:
    """Parse, validate and compile one scalar expression of x1..x<dim>."""
    if dim < 1:
        raise ValueError(f"dimension must be positive, got {dim}")
    if not isinstance(text, str) or not text.strip():
        raise ExpressionError("empty expression")
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"{text!r}: cannot parse ({exc.msg})") from None
    uses_state = _check_node(tree.body, dim, text)
    vector_body = _IndexVars().visit(ast.parse(text, mode="eval").body)
    fn = _build_closure(vector_body, text)
    fn1 = None
    if dim == 1:
        scalar_body = _ScalarVar().visit(ast.parse(text, mode="eval").body)
        fn1 = _build_closure(scalar_body, text)
    return CompiledExpression(text=text, dim=dim, fn=fn, fn1=fn1, uses_state=uses_state)


@dataclass(frozen=True, eq=False)
class CompiledField:
    """A vector of compiled component expressions, callable on a state."""

    components: tuple
    dim: int

    def __call__(self, x) -> np.ndarray:
        # plain-float inputs so a bad expression raises ArithmeticError
        # uniformly instead of numpy's warn-and-inf scalar semantics
        xt = tuple(map(float, x))
        return np.array([float(c.fn(xt)) for c in self.components])

    @property
    def uses_state(self) -> bool:
        return any(c.uses_state for c in self.components)

    @property
    def texts(self) -> tuple:
        return tuple(c.text for c in self.components)


def compile_field(components: Sequence, dim: int) -> CompiledField:
    """Compile a list of component expressions into one vector field."""
    if not components:
        raise ExpressionError("a field needs at least one component")
    return CompiledField(
        components=tuple(compile_expression(c, dim) for c in components), dim=dim
    )


@dataclass(frozen=True, eq=False)
class SwitchingFunction:
    """Scalar surface function sigma; its zero set is a switching surface.

    The gradient is analytic when component expressions are supplied,
    otherwise a central finite difference with step 1e-6.
    """

    expr: CompiledExpression
    grad: tuple = None

    @classmethod
    def compile(cls, expression: str, dim: int, gradient: Optional[Sequence] = None):
        expr = compile_expression(expression, dim)
        grad = None
        if gradient is not None:
            if len(gradient) != dim:
                raise ExpressionError(
                    f"gradient of {expression!r} needs {dim} components, got {len(gradient)}"
                )
            grad = tuple(compile_expression(g, dim) for g in gradient)
        return cls(expr=expr, grad=grad)

    def value(self, x) -> float:
        return float(self.expr.fn(tuple(map(float, x))))

    def gradient_at(self, x) -> np.ndarray:
        xt = tuple(float(c) for c in np.asarray(x, dtype=float).reshape(-1))
        if self.grad is not None:
            return np.array([float(g.fn(xt)) for g in self.grad])
        out = np.empty(len(xt))
        for j in range(len(xt)):
            hi = list(xt)
            lo = list(xt)
            hi[j] += FD_STEP
            lo[j] -= FD_STEP
            out[j] = (self.expr.fn(hi) - self.expr.fn(lo)) / (2.0 * FD_STEP)
        return out


@dataclass(frozen=True, eq=False)
class Region:
    """One sign-pattern cell and its own continuous field."""

    id: int
    signs: tuple
    field: CompiledField

    def __post_init__(self):
        signs = tuple(self.signs)
        for s in signs:
            if s not in ("+", "-", "any"):
                raise ConfigurationError(
                    f"region {self.id}: sign {s!r} is not one of '+', '-', 'any'"
                )
        object.__setattr__(self, "signs", signs)

    def matches(self, pattern) -> bool:
        return all(s == "any" or s == p for s, p in zip(self.signs, pattern))

    def overlaps(self, other: "Region") -> bool:
        return all(
            a == "any" or b == "any" or a == b for a, b in zip(self.signs, other.signs)
        )


@dataclass(frozen=True)
class Interior:
    """Classification: strictly inside one region."""

    region_id: int


@dataclass(frozen=True)
class Boundary:
    """Classification: within the tolerance band; carries all adjacent regions."""

    region_ids: tuple


@dataclass(frozen=True, eq=False)
class SlidingSelection:
    """Tangential combination alpha*f_plus + (1-alpha)*f_minus on a surface."""

    alpha: float
    velocity: np.ndarray


@dataclass(frozen=True, eq=False)
class FilippovSystem:
    """Region classifiers plus per-region fields, evaluated as a set-valued map.

    The splitting boundary is represented as the band |sigma_j| <= boundary_tol
    rather than an exact zero set: floating-point states never land exactly on
    a surface, so the band width is the declared resolution.  Off the band the
    value is the singleton {f_i(x)}; on it, the hull of all adjacent fields.

    Construction verifies that no two regions claim a common sign pattern and
    samples the domain for patterns no region claims; both are configuration
    errors.  A measure-zero boundary is assumed, not checked.
    """

    switching: tuple
    regions: tuple
    boundary_tol: float
    domain: Box

    def __post_init__(self):
        switching = tuple(self.switching)
        regions = tuple(self.regions)
        object.__setattr__(self, "switching", switching)
        object.__setattr__(self, "regions", regions)
        if not regions:
            raise ConfigurationError("at least one region is required")
        if not self.boundary_tol > 0.0:
            raise ConfigurationError(f"boundary_tol must be positive, got {self.boundary_tol}")
        ids = [r.id for r in regions]
        if len(set(ids)) != len(ids):
            raise ConfigurationError(f"region ids must be unique, got {ids}")
        for r in regions:
            if len(r.signs) != len(switching):
                raise ConfigurationError(
                    f"region {r.id} has {len(r.signs)} signs for {len(switching)} switching functions"
                )
        for a, b in itertools.combinations(regions, 2):
            if a.overlaps(b):
                witness = tuple(
                    sa if sa != "any" else (sb if sb != "any" else "+")
                    for sa, sb in zip(a.signs, b.signs)
                )
                raise ConfigurationError(
                    f"regions {a.id} and {b.id} both claim sign pattern {witness}"
                )
        object.__setattr__(self, "_by_id", {r.id: r for r in regions})
        if self.dim == 1:
            object.__setattr__(
                self, "_sigma1", tuple(s.expr.fn1 for s in switching)
            )
            object.__setattr__(
                self,
                "_field1",
                {r.id: r.field.components[0].fn1 for r in regions},
            )
        # hunt for unclaimed patterns over a deterministic sample of the domain
        from .setvalued import sample_box

        for row in sample_box(self.domain, _GAP_SAMPLES, seed=0):
            self.classify(row)

    @property
    def dim(self) -> int:
        return self.domain.dim

    def region(self, region_id: int) -> Region:
        return self._by_id[region_id]

    def _resolve(self, pattern) -> tuple:
        """Region ids matching a full sign pattern; error when none does."""
        ids = tuple(r.id for r in self.regions if r.matches(pattern))
        if not ids:
            raise ConfigurationError(f"no region claims sign pattern {tuple(pattern)}")
        return ids

    def classify(self, x):
        """Interior(region id) off the band, Boundary(adjacent ids) on it.

        Ambiguous signs (|sigma_j| <= boundary_tol) are resolved both ways
        combinatorially; the adjacent list is every region claiming some
        resolution, and every resolution must be claimed by exactly one
        region or the layout is rejected.
        """
        x = np.asarray(x, dtype=float).reshape(-1)
        if not self.domain.contains(x, tol=1e-9):
            raise ValueError(f"state {x.tolist()} lies outside the domain box")
        band = self.boundary_tol
        pattern = []
        ambiguous = []
        try:
            for j, sf in enumerate(self.switching):
                v = sf.value(x)
                if v > band:
                    pattern.append("+")
                elif v < -band:
                    pattern.append("-")
                else:
                    pattern.append("?")
                    ambiguous.append(j)
        except ArithmeticError as exc:
            raise EvaluationError(f"switching function failed ({exc})", x) from None
        if not ambiguous:
            ids = self._resolve(pattern)
            return Interior(ids[0])
        ids = []
        for combo in itertools.product("+-", repeat=len(ambiguous)):
            resolved = list(pattern)
            for j, s in zip(ambiguous, combo):
                resolved[j] = s
            for rid in self._resolve(resolved):
                if rid not in ids:
                    ids.append(rid)
        return Boundary(tuple(sorted(ids)))

    def _field_value(self, region_id: int, x) -> np.ndarray:
        try:
            y = self._by_id[region_id].field(x)
        except ArithmeticError:
            raise FieldEvaluationError(region_id, x) from None
        if not np.all(np.isfinite(y)):
            raise FieldEvaluationError(region_id, x)
        return y

    def evaluate(self, x) -> ConvexSet:
        """The convexified value: {f_i(x)} inside region i, the hull of all
        adjacent fields on the boundary band."""
        x = np.asarray(x, dtype=float).reshape(-1)
        cls = self.classify(x)
        if isinstance(cls, Interior):
            return ConvexSet(self._field_value(cls.region_id, x).reshape(1, -1))
        rows = np.array([self._field_value(rid, x) for rid in cls.region_ids])
        return ConvexSet(rows)

    def _fast1(self, x: float) -> tuple:
        """(ascending vertex tuple, two-region-boundary flag) at scalar x.

        Mirrors classify/evaluate for 1-D systems without array or ConvexSet
        construction; used by the scalar Euler loop.  Assumes switching
        surfaces are transversal (nonvanishing gradient on the band), which
        holds for every shipped configuration.
        """
        band = self.boundary_tol
        pattern = []
        ambiguous = []
        try:
            for j, fn in enumerate(self._sigma1):
                v = fn(x)
                if v > band:
                    pattern.append("+")
                elif v < -band:
                    pattern.append("-")
                else:
                    pattern.append("?")
                    ambiguous.append(j)
        except ArithmeticError as exc:
            raise EvaluationError(f"switching function failed ({exc})", (x,)) from None
        if not ambiguous:
            ids = self._resolve(pattern)
            try:
                v = float(self._field1[ids[0]](x))
            except ArithmeticError:
                raise FieldEvaluationError(ids[0], (x,)) from None
            if not math.isfinite(v):
                raise FieldEvaluationError(ids[0], (x,))
            return (v,), False
        ids = []
        for combo in itertools.product("+-", repeat=len(ambiguous)):
            resolved = list(pattern)
            for j, s in zip(ambiguous, combo):
                resolved[j] = s
            for rid in self._resolve(resolved):
                if rid not in ids:
                    ids.append(rid)
        vals = []
        for rid in ids:
            try:
                v = float(self._field1[rid](x))
            except ArithmeticError:
                raise FieldEvaluationError(rid, (x,)) from None
            if not math.isfinite(v):
                raise FieldEvaluationError(rid, (x,))
            vals.append(v)
        vals.sort()
        verts = [vals[0]]
        for v in vals[1:]:
            if v - verts[-1] > DEDUP_TOL:
                verts.append(v)
        boundary2 = len(ambiguous) == 1 and len(ids) == 2
        return tuple(verts), boundary2

    def _sliding_velocity(self, x):
        """Sliding velocity at x, or None when the centroid fallback applies.

        Applies only on a two-region boundary point of a single switching
        surface where the two regions take explicit opposite signs; crossing
        roots and degenerate tangency also fall back to None.
        """
        x = np.asarray(x, dtype=float).reshape(-1)
        cls = self.classify(x)
        if not isinstance(cls, Boundary) or len(cls.region_ids) != 2:
            return None
        band = self.boundary_tol
        active = [
            j for j, sf in enumerate(self.switching) if abs(sf.value(x)) <= band
        ]
        if len(active) != 1:
            return None
        j = active[0]
        ra = self._by_id[cls.region_ids[0]]
        rb = self._by_id[cls.region_ids[1]]
        if {ra.signs[j], rb.signs[j]} != {"+", "-"}:
            return None
        minus_id = ra.id if ra.signs[j] == "-" else rb.id
        plus_id = rb.id if ra.signs[j] == "-" else ra.id
        try:
            sel = self.sliding_selection(x, minus_id, plus_id)
        except DegenerateSlidingError:
            return None
        return None if sel is None else sel.velocity

    def _sliding1(self, x: float):
        """Scalar twin of _sliding_velocity, bit-identical on 1-D systems."""
        band = self.boundary_tol
        pattern = []
        active = []
        for j, fn in enumerate(self._sigma1):
            v = fn(x)
            if v > band:
                pattern.append("+")
            elif v < -band:
                pattern.append("-")
            else:
                pattern.append("?")
                active.append(j)
        if len(active) != 1:
            return None
        ids = []
        for s in "+-":
            resolved = list(pattern)
            resolved[active[0]] = s
            for rid in self._resolve(resolved):
                if rid not in ids:
                    ids.append(rid)
        if len(ids) != 2:
            return None
        j = active[0]
        ra = self._by_id[ids[0]]
        rb = self._by_id[ids[1]]
        if {ra.signs[j], rb.signs[j]} != {"+", "-"}:
            return None
        minus = ra if ra.signs[j] == "-" else rb
        plus = rb if ra.signs[j] == "-" else ra
        sf = self.switching[j]
        try:
            if sf.grad is not None:
                g = float(sf.grad[0].fn1(x))
            else:
                fn = self._sigma1[j]
                g = (fn(x + FD_STEP) - fn(x - FD_STEP)) / (2.0 * FD_STEP)
        except ArithmeticError as exc:
            raise EvaluationError(f"switching gradient failed ({exc})", (x,)) from None
        try:
            fm = float(self._field1[minus.id](x))
        except ArithmeticError:
            raise FieldEvaluationError(minus.id, (x,)) from None
        try:
            fp = float(self._field1[plus.id](x))
        except ArithmeticError:
            raise FieldEvaluationError(plus.id, (x,)) from None
        if not (math.isfinite(fm) and math.isfinite(fp)):
            bad = minus.id if not math.isfinite(fm) else plus.id
            raise FieldEvaluationError(bad, (x,))
        num = g * fm
        den = g * (fm - fp)
        if abs(den) <= 1e-12:
            return None
        alpha = num / den
        if alpha < 0.0 or alpha > 1.0:
            return None
        return alpha * fp + (1.0 - alpha) * fm

    def sliding_selection(self, x, minus_id: int, plus_id: int):
        """Combination alpha*f_plus + (1-alpha)*f_minus tangent to the surface.

        Solves grad(sigma) . v = 0 for alpha.  Returns the SlidingSelection
        when alpha lands in [0, 1] (sliding possible) and None when the root
        falls outside (the solution crosses).  A doubly degenerate equation,
        where every alpha is tangent, raises DegenerateSlidingError so the
        caller can fall back to a vertex choice.
        """
        x = np.asarray(x, dtype=float).reshape(-1)
        cls = self.classify(x)
        if not isinstance(cls, Boundary) or len(cls.region_ids) != 2:
            raise UnsupportedBoundaryError(
                f"sliding needs a two-region boundary point, got {cls}"
            )
        if set(cls.region_ids) != {minus_id, plus_id}:
            raise UnsupportedBoundaryError(
                f"adjacent regions are {cls.region_ids}, not ({minus_id}, {plus_id})"
            )
        band = self.boundary_tol
        ambiguous = [
            j for j, sf in enumerate(self.switching) if abs(sf.value(x)) <= band
        ]
        if len(ambiguous) != 1:
            raise UnsupportedBoundaryError(
                f"{len(ambiguous)} switching surfaces are active; sliding handles exactly one"
            )
        grad = self.switching[ambiguous[0]].gradient_at(x)
        f_minus = self._field_value(minus_id, x)
        f_plus = self._field_value(plus_id, x)
        num = float(grad @ f_minus)
        den = float(grad @ (f_minus - f_plus))
        if abs(den) <= 1e-12:
            if abs(num) <= 1e-12:
                raise DegenerateSlidingError(
                    f"every combination is tangent at x={x.tolist()}"
                )
            return None
        alpha = num / den
        if alpha < 0.0 or alpha > 1.0:
            return None
        return SlidingSelection(alpha=alpha, velocity=alpha * f_plus + (1.0 - alpha) * f_minus)
