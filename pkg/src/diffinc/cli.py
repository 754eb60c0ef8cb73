"""Command-line driver: config loading, experiment runs, CSV/SVG emission.

Configs are TOML files describing one system (a Filippov region layout or
a constant hull field), solver defaults, and an optional reachability grid
section.  Every value is validated at load with a full path diagnostic
("system.region[1].field[0]: ...") before any computation starts.

Four verbs: simulate (one trajectory), funnel (a bundle of trajectories
under different selections), reach (relation files plus monoid/closure
defect tables), check (basic-conditions report over a points file).
Exit codes: 0 success, 2 config/input error, 3 solver diagnostic.

Every command writes a manifest.json recording the config hash, command
parameters, tool version, and output list.  With --deterministic, wall
time is nulled and the SVG timestamp comment is suppressed, making every
output byte-identical across reruns and thread counts.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib as _toml
except ModuleNotFoundError:  # Python < 3.11
    import tomli as _toml

from . import __version__
from .setvalued import (
    Box,
    ConstantSetMap,
    ConvexSet,
    EvaluationError,
    check_point,
)
from .filippov import (
    ConfigurationError,
    DegenerateSlidingError,
    ExpressionError,
    FieldEvaluationError,
    FilippovSystem,
    Interior,
    Region,
    SwitchingFunction,
    UnsupportedBoundaryError,
    compile_field,
)
from .solver import (
    Centroid,
    RandomSeeded,
    SlidingAware,
    SolverDiagnostic,
    StepPlan,
    VertexIndex,
    euler_delta_solution,
    write_trajectory,
)
from .multiflow import (
    Grid,
    build_multiflow,
    closure_defect,
    compose,
    default_battery,
    directed_distance,
    identity_relation,
    write_relation,
)

__all__ = [
    "ConfigError",
    "SystemConfig",
    "cmd_check",
    "cmd_funnel",
    "cmd_reach",
    "cmd_simulate",
    "load_config",
    "main",
    "parse_strategy",
    "read_table",
    "write_table",
]

_SEED_MASK = (1 << 64) - 1
_PALETTE = ("#7fc97f", "#beaed4", "#fdc086", "#80b1d3", "#fb8072", "#b3de69")
_LINE_COLORS = ("#1b5e20", "#4a148c", "#e65100", "#01579b", "#b71c1c", "#33691e")


class ConfigError(ValueError):
    """Invalid configuration or command input; message names the field."""


def _fail(path: str, message: str):
    raise ConfigError(f"{path}: {message}")


def _need(table: dict, key: str, path: str):
    if not isinstance(table, dict):
        _fail(path, "expected a table")
    if key not in table:
        _fail(f"{path}.{key}", "required key is missing")
    return table[key]


def _as_int(value, path: str, minimum: Optional[int] = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        _fail(path, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        _fail(path, f"must be at least {minimum}, got {value}")
    return value


def _as_float(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(path, f"expected a number, got {value!r}")
    v = float(value)
    if not math.isfinite(v):
        _fail(path, f"must be finite, got {value!r}")
    return v


def _as_str(value, path: str) -> str:
    if not isinstance(value, str):
        _fail(path, f"expected a string, got {value!r}")
    return value


def _as_float_list(value, path: str, length: Optional[int] = None) -> tuple:
    if not isinstance(value, (list, tuple)):
        _fail(path, f"expected a list of numbers, got {value!r}")
    out = tuple(_as_float(v, f"{path}[{i}]") for i, v in enumerate(value))
    if length is not None and len(out) != length:
        _fail(path, f"expected {length} entries, got {len(out)}")
    return out


def _as_box(table, path: str, dim: int) -> Box:
    lo = _as_float_list(_need(table, "lo", path), f"{path}.lo", dim)
    hi = _as_float_list(_need(table, "hi", path), f"{path}.hi", dim)
    try:
        return Box(lo=lo, hi=hi)
    except ValueError as exc:
        _fail(path, str(exc))


@dataclass(frozen=True)
class SystemConfig:
    """Everything a command needs, validated and constructed at load time."""

    path: Path
    dimension: int
    domain: Box
    system: object
    solver_k: int
    strategy_text: str
    seed: int
    grid_box: Optional[Box]
    pitch: Optional[tuple]
    times: tuple
    budget: int
    grid_k: int


def parse_strategy(text: str, seed: int):
    """Strategy from its config name: sliding, centroid, vertex:N, random[:N]."""
    if text == "sliding":
        return SlidingAware()
    if text == "centroid":
        return Centroid()
    if text == "vertex":
        return VertexIndex(0)
    if text.startswith("vertex:"):
        try:
            return VertexIndex(int(text.split(":", 1)[1]))
        except ValueError:
            _fail("solver.strategy", f"bad vertex index in {text!r}")
    if text == "random":
        return RandomSeeded(seed & _SEED_MASK)
    if text.startswith("random:"):
        try:
            return RandomSeeded(int(text.split(":", 1)[1]))
        except ValueError:
            _fail("solver.strategy", f"bad random seed in {text!r}")
    _fail("solver.strategy", f"unknown strategy {text!r}")


def _build_filippov(sec: dict, dim: int, domain: Box) -> FilippovSystem:
    tol = _as_float(sec.get("boundary_tol", 1e-8), "system.boundary_tol")
    raw_switching = sec.get("switching", [])
    if not isinstance(raw_switching, list) or not raw_switching:
        _fail("system.switching", "at least one switching function is required")
    switching = []
    for i, entry in enumerate(raw_switching):
        spath = f"system.switching[{i}]"
        expr = _as_str(_need(entry, "expression", spath), f"{spath}.expression")
        gradient = entry.get("gradient")
        if gradient is not None:
            if not isinstance(gradient, list):
                _fail(f"{spath}.gradient", "expected a list of expressions")
            gradient = [
                _as_str(g, f"{spath}.gradient[{j}]") for j, g in enumerate(gradient)
            ]
        try:
            switching.append(SwitchingFunction.compile(expr, dim, gradient))
        except ExpressionError as exc:
            _fail(f"{spath}.expression", str(exc))
    raw_regions = sec.get("region", [])
    if not isinstance(raw_regions, list) or not raw_regions:
        _fail("system.region", "at least one region is required")
    regions = []
    for i, entry in enumerate(raw_regions):
        rpath = f"system.region[{i}]"
        rid = _as_int(_need(entry, "id", rpath), f"{rpath}.id")
        signs = _need(entry, "signs", rpath)
        if not isinstance(signs, list):
            _fail(f"{rpath}.signs", "expected a list of '+', '-', 'any'")
        signs = tuple(_as_str(s, f"{rpath}.signs[{j}]") for j, s in enumerate(signs))
        field = _need(entry, "field", rpath)
        if not isinstance(field, list) or len(field) != dim:
            _fail(f"{rpath}.field", f"expected {dim} component expressions")
        components = [
            _as_str(c, f"{rpath}.field[{j}]") for j, c in enumerate(field)
        ]
        try:
            compiled = compile_field(components, dim)
        except ExpressionError as exc:
            _fail(f"{rpath}.field", str(exc))
        try:
            regions.append(Region(id=rid, signs=signs, field=compiled))
        except ConfigurationError as exc:
            _fail(rpath, str(exc))
    try:
        return FilippovSystem(
            switching=tuple(switching),
            regions=tuple(regions),
            boundary_tol=tol,
            domain=domain,
        )
    except (ConfigurationError, ValueError) as exc:
        _fail("system", str(exc))


def _build_hull(sec: dict, dim: int, domain: Box) -> ConstantSetMap:
    raw = _need(sec, "vertices", "system")
    if not isinstance(raw, list) or not raw:
        _fail("system.vertices", "expected a list of vertex rows")
    rows = [
        _as_float_list(row, f"system.vertices[{i}]", dim) for i, row in enumerate(raw)
    ]
    return ConstantSetMap(value=ConvexSet(np.array(rows)), domain=domain)


def load_config(path) -> SystemConfig:
    """Parse and validate a TOML config; raises ConfigError with field paths."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc})") from None
    try:
        data = _toml.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, _toml.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: invalid TOML ({exc})") from None
    sec = _need(data, "system", "config")
    dim = _as_int(_need(sec, "dimension", "system"), "system.dimension", minimum=1)
    domain = _as_box(_need(sec, "domain", "system"), "system.domain", dim)
    kind = _as_str(sec.get("kind", "filippov"), "system.kind")
    if kind == "filippov":
        system = _build_filippov(sec, dim, domain)
    elif kind == "hull":
        system = _build_hull(sec, dim, domain)
    else:
        _fail("system.kind", f"must be 'filippov' or 'hull', got {kind!r}")
    solver = data.get("solver", {})
    if not isinstance(solver, dict):
        _fail("solver", "expected a table")
    solver_k = _as_int(solver.get("k", 1000), "solver.k", minimum=1)
    strategy_text = _as_str(solver.get("strategy", "sliding"), "solver.strategy")
    seed = _as_int(solver.get("seed", 0), "solver.seed")
    parse_strategy(strategy_text, seed)  # reject bad names at load time
    gsec = data.get("grid")
    grid_box = None
    pitch = None
    times = ()
    budget = 64
    grid_k = 256
    if gsec is not None:
        if not isinstance(gsec, dict):
            _fail("grid", "expected a table")
        grid_box = _as_box(gsec, "grid", dim)
        raw_pitch = _need(gsec, "pitch", "grid")
        if isinstance(raw_pitch, (int, float)):
            pitch = (float(raw_pitch),) * dim
        else:
            pitch = _as_float_list(raw_pitch, "grid.pitch", dim)
        times = _as_float_list(_need(gsec, "times", "grid"), "grid.times")
        for i, t in enumerate(times):
            if t < 0.0:
                _fail(f"grid.times[{i}]", f"must be nonnegative, got {t!r}")
        budget = _as_int(gsec.get("budget", 64), "grid.budget", minimum=1)
        grid_k = _as_int(gsec.get("k", 256), "grid.k", minimum=1)
        for corner in grid_box.corners():
            if not domain.contains(corner, tol=1e-9):
                _fail("grid", "the grid box must lie inside the system domain")
    return SystemConfig(
        path=path,
        dimension=dim,
        domain=domain,
        system=system,
        solver_k=solver_k,
        strategy_text=strategy_text,
        seed=seed,
        grid_box=grid_box,
        pitch=pitch,
        times=times,
        budget=budget,
        grid_k=grid_k,
    )


def write_table(path, header, rows) -> Path:
    """Plain CSV writer over string cells; stable bytes, newline-terminated."""
    path = Path(path)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(c) for c in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_table(path) -> tuple:
    """Inverse of write_table: (header, rows) as lists of strings."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty table")
    header = lines[0].split(",")
    return header, [line.split(",") for line in lines[1:]]


def _fmt(v: float) -> str:
    return format(float(v), ".6g")


class _SvgCanvas:
    """Minimal fixed-size plot surface with data-space mapping."""

    width = 640
    height = 480
    margin = 48

    def __init__(self, x_range, y_range):
        self.x0, self.x1 = x_range
        self.y0, self.y1 = y_range
        if self.x1 <= self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 <= self.y0:
            self.y1 = self.y0 + 1.0
        self.parts = []

    def px(self, x: float) -> float:
        w = self.width - 2 * self.margin
        return self.margin + (x - self.x0) / (self.x1 - self.x0) * w

    def py(self, y: float) -> float:
        h = self.height - 2 * self.margin
        return self.margin + (self.y1 - y) / (self.y1 - self.y0) * h

    def rect(self, xa, ya, xb, yb, fill, opacity=1.0):
        x, y = self.px(xa), self.py(yb)
        w, h = self.px(xb) - self.px(xa), self.py(ya) - self.py(yb)
        self.parts.append(
            f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(w)}" height="{_fmt(h)}" '
            f'fill="{fill}" fill-opacity="{_fmt(opacity)}" stroke="none"/>'
        )

    def line(self, xa, ya, xb, yb, stroke, width=1.0, dash=None):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<line x1="{_fmt(self.px(xa))}" y1="{_fmt(self.py(ya))}" '
            f'x2="{_fmt(self.px(xb))}" y2="{_fmt(self.py(yb))}" '
            f'stroke="{stroke}" stroke-width="{_fmt(width)}"{d}/>'
        )

    def polyline(self, points, stroke, width=1.2, opacity=1.0):
        coords = " ".join(f"{_fmt(self.px(x))},{_fmt(self.py(y))}" for x, y in points)
        self.parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{stroke}" '
            f'stroke-width="{_fmt(width)}" stroke-opacity="{_fmt(opacity)}"/>'
        )

    def circle(self, x, y, r, fill):
        self.parts.append(
            f'<circle cx="{_fmt(self.px(x))}" cy="{_fmt(self.py(y))}" r="{_fmt(r)}" '
            f'fill="{fill}" stroke="none"/>'
        )

    def text(self, x_px, y_px, content):
        self.parts.append(
            f'<text x="{_fmt(x_px)}" y="{_fmt(y_px)}" font-family="monospace" '
            f'font-size="12" fill="#333333">{content}</text>'
        )

    def frame(self):
        m = self.margin
        self.parts.append(
            f'<rect x="{m}" y="{m}" width="{self.width - 2 * m}" '
            f'height="{self.height - 2 * m}" fill="none" stroke="#333333"/>'
        )

    def document(self, deterministic: bool, title: str) -> str:
        head = [
            '<svg xmlns="http://www.w3.org/2000/svg" '
            f'width="{self.width}" height="{self.height}" '
            f'viewBox="0 0 {self.width} {self.height}">'
        ]
        if not deterministic:
            stamp = datetime.now(timezone.utc).isoformat()
            head.append(f"<!-- rendered {stamp} -->")
        head.append(
            f'<rect x="0" y="0" width="{self.width}" height="{self.height}" fill="#ffffff"/>'
        )
        tail = ["</svg>"]
        body = self.parts + [
            f'<text x="{self.margin}" y="{self.margin - 16}" font-family="monospace" '
            f'font-size="13" fill="#111111">{title}</text>'
        ]
        return "\n".join(head + body + tail) + "\n"


def _region_colors(system) -> dict:
    ids = sorted(r.id for r in system.regions)
    return {rid: _PALETTE[i % len(_PALETTE)] for i, rid in enumerate(ids)}


def _shade_1d(canvas: _SvgCanvas, system, t_range):
    """Horizontal region bands plus switching-level lines on a (t, x) plot."""
    if not isinstance(system, FilippovSystem):
        return
    colors = _region_colors(system)
    lo, hi = canvas.y0, canvas.y1
    samples = 256
    xs = lo + (hi - lo) * np.arange(samples + 1) / samples
    labels = []
    for x in xs:
        cls = system.classify(np.array([x]))
        labels.append(cls.region_id if isinstance(cls, Interior) else None)
    start = 0
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i] != labels[start]:
            if labels[start] is not None:
                canvas.rect(
                    t_range[0], float(xs[start]), t_range[1], float(xs[i - 1]),
                    colors[labels[start]], opacity=0.25,
                )
            start = i
    for sf in system.switching:
        vals = [sf.value(np.array([x])) for x in xs]
        for i in range(samples):
            if vals[i] == 0.0 or (vals[i] < 0.0) != (vals[i + 1] < 0.0):
                y = float(xs[i]) if vals[i] == 0.0 else float(
                    xs[i] + (xs[i + 1] - xs[i]) * vals[i] / (vals[i] - vals[i + 1])
                )
                canvas.line(t_range[0], y, t_range[1], y, "#555555", 1.0, dash="4,3")
                break


def _shade_2d(canvas: _SvgCanvas, system):
    """Region raster and switching-curve segments on an (x1, x2) plot."""
    if not isinstance(system, FilippovSystem):
        return
    colors = _region_colors(system)
    cells = 48
    xs = canvas.x0 + (canvas.x1 - canvas.x0) * (np.arange(cells) + 0.5) / cells
    ys = canvas.y0 + (canvas.y1 - canvas.y0) * (np.arange(cells) + 0.5) / cells
    dx = (canvas.x1 - canvas.x0) / cells
    dy = (canvas.y1 - canvas.y0) / cells
    for x in xs:
        for y in ys:
            cls = system.classify(np.array([x, y]))
            fill = (
                colors[cls.region_id]
                if isinstance(cls, Interior)
                else "#bbbbbb"
            )
            canvas.rect(x - dx / 2, y - dy / 2, x + dx / 2, y + dy / 2, fill, 0.3)
    corners = cells + 1
    cx = canvas.x0 + (canvas.x1 - canvas.x0) * np.arange(corners) / cells
    cy = canvas.y0 + (canvas.y1 - canvas.y0) * np.arange(corners) / cells
    for sf in system.switching:
        vals = np.array(
            [[sf.value(np.array([x, y])) for y in cy] for x in cx]
        )
        for i in range(cells):
            for j in range(cells):
                pts = []
                quad = (
                    (vals[i, j], (cx[i], cy[j]), (cx[i + 1], cy[j]), vals[i + 1, j]),
                    (vals[i + 1, j], (cx[i + 1], cy[j]), (cx[i + 1], cy[j + 1]), vals[i + 1, j + 1]),
                    (vals[i + 1, j + 1], (cx[i + 1], cy[j + 1]), (cx[i], cy[j + 1]), vals[i, j + 1]),
                    (vals[i, j + 1], (cx[i], cy[j + 1]), (cx[i], cy[j]), vals[i, j]),
                )
                for va, pa, pb, vb in quad:
                    if va == vb:
                        continue
                    if (va < 0.0) != (vb < 0.0) or va == 0.0:
                        s = va / (va - vb)
                        pts.append((pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])))
                if len(pts) >= 2:
                    canvas.line(pts[0][0], pts[0][1], pts[1][0], pts[1][1], "#555555", 1.2)


def render_trajectories_svg(system, domain: Box, trajs, deterministic: bool, title: str) -> Optional[str]:
    """SVG overlay of trajectories; (t, x) for 1-D, (x1, x2) for 2-D, else None."""
    if domain.dim == 1:
        t0 = min(float(tr.times[0]) for tr in trajs)
        t1 = max(tr.final_time for tr in trajs)
        canvas = _SvgCanvas((t0, t1), (domain.lo[0], domain.hi[0]))
        _shade_1d(canvas, system, (canvas.x0, canvas.x1))
        for i, tr in enumerate(trajs):
            color = _LINE_COLORS[i % len(_LINE_COLORS)]
            pts = list(zip(tr.times.tolist(), tr.states[:, 0].tolist()))
            canvas.polyline(pts, color, 1.2, opacity=0.85)
            canvas.circle(tr.final_time, float(tr.states[-1, 0]), 3.0, color)
        canvas.frame()
        canvas.text(canvas.margin, canvas.height - 16, "t")
        canvas.text(12, canvas.margin, "x1")
        return canvas.document(deterministic, title)
    if domain.dim == 2:
        canvas = _SvgCanvas(
            (domain.lo[0], domain.hi[0]), (domain.lo[1], domain.hi[1])
        )
        _shade_2d(canvas, system)
        for i, tr in enumerate(trajs):
            color = _LINE_COLORS[i % len(_LINE_COLORS)]
            pts = list(zip(tr.states[:, 0].tolist(), tr.states[:, 1].tolist()))
            canvas.polyline(pts, color, 1.2, opacity=0.85)
            canvas.circle(float(tr.states[-1, 0]), float(tr.states[-1, 1]), 3.0, color)
        canvas.frame()
        canvas.text(canvas.margin, canvas.height - 16, "x1")
        canvas.text(12, canvas.margin, "x2")
        return canvas.document(deterministic, title)
    return None


def _write_manifest(out_dir: Path, cfg_path: Path, command: str, params: dict, outputs, deterministic: bool, wall: Optional[float]) -> Path:
    manifest = {
        "command": command,
        "config_hash": hashlib.sha256(cfg_path.read_bytes()).hexdigest(),
        "outputs": sorted(str(p) for p in outputs),
        "parameters": {k: params[k] for k in sorted(params)},
        "version": __version__,
        "wall_time": None if deterministic else wall,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return path


def _parse_vector(text: str, dim: int, flag: str) -> np.ndarray:
    try:
        parts = [float(p) for p in text.split(",")]
    except ValueError:
        raise ConfigError(f"{flag}: expected comma-separated numbers, got {text!r}") from None
    if len(parts) != dim:
        raise ConfigError(f"{flag}: expected {dim} components, got {len(parts)}")
    return np.array(parts)


def _resolve_seed(args, cfg: SystemConfig) -> int:
    return cfg.seed if args.seed is None else args.seed


def cmd_simulate(cfg: SystemConfig, args) -> list:
    seed = _resolve_seed(args, cfg)
    x0 = _parse_vector(args.x0, cfg.dimension, "--x0")
    if not cfg.domain.contains(x0, tol=1e-9):
        raise ConfigError(f"--x0: point {x0.tolist()} lies outside the domain box")
    horizon = args.horizon
    if not (math.isfinite(horizon) and horizon > 0.0):
        raise ConfigError(f"--horizon: must be positive, got {horizon!r}")
    k = args.k if args.k is not None else cfg.solver_k
    if k < 1:
        raise ConfigError(f"--k: must be at least 1, got {k}")
    strategy = parse_strategy(
        args.strategy if args.strategy is not None else cfg.strategy_text, seed
    )
    plan = StepPlan(k=k, c=float(horizon))
    traj = euler_delta_solution(
        cfg.system, x0, plan, strategy, domain=cfg.domain, seed=seed
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = [write_trajectory(traj, out / "trajectory.csv")]
    outputs.append(out / "trajectory.meta")
    if args.svg:
        doc = render_trajectories_svg(
            cfg.system, cfg.domain, [traj], args.deterministic, "trajectory"
        )
        if doc is None:
            print("svg skipped: only 1-D and 2-D systems are drawable", file=sys.stderr)
        else:
            svg_path = out / "trajectory.svg"
            svg_path.write_text(doc)
            outputs.append(svg_path)
    print(
        f"simulate: {traj.times.size} breakpoints, final state "
        f"{traj.final_state.tolist()} at t={traj.final_time!r}"
    )
    return outputs


def cmd_funnel(cfg: SystemConfig, args) -> list:
    seed = _resolve_seed(args, cfg)
    x0 = _parse_vector(args.x0, cfg.dimension, "--x0")
    if not cfg.domain.contains(x0, tol=1e-9):
        raise ConfigError(f"--x0: point {x0.tolist()} lies outside the domain box")
    if not (math.isfinite(args.horizon) and args.horizon > 0.0):
        raise ConfigError(f"--horizon: must be positive, got {args.horizon!r}")
    if args.runs < 1:
        raise ConfigError(f"--runs: must be at least 1, got {args.runs}")
    k = args.k if args.k is not None else cfg.solver_k
    battery = default_battery(seed)
    plan = StepPlan(k=k, c=float(args.horizon))
    trajs = []
    for r in range(args.runs):
        strategy = battery[r % len(battery)]
        rng = None
        if strategy.make_rng() is not None:
            rng = np.random.default_rng(
                np.random.SeedSequence([seed & _SEED_MASK, r])
            )
        trajs.append(
            euler_delta_solution(
                cfg.system, x0, plan, strategy, domain=cfg.domain, rng=rng, seed=seed
            )
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    rows = []
    for r, traj in enumerate(trajs):
        name = f"funnel_run{r:03d}.csv"
        outputs.append(write_trajectory(traj, out / name))
        outputs.append(out / f"funnel_run{r:03d}.meta")
        rows.append(
            [r, traj.strategy, repr(traj.final_time)]
            + [repr(float(c)) for c in traj.final_state]
            + [traj.exit.face if traj.exit is not None else ""]
        )
    header = (
        ["run", "strategy", "t_final"]
        + [f"x{j + 1}" for j in range(cfg.dimension)]
        + ["exit_face"]
    )
    outputs.append(write_table(out / "funnel_endpoints.csv", header, rows))
    doc = render_trajectories_svg(
        cfg.system, cfg.domain, trajs, args.deterministic, "funnel"
    )
    if doc is not None:
        svg_path = out / "funnel.svg"
        svg_path.write_text(doc)
        outputs.append(svg_path)
    spread = max(
        float(np.max(np.abs(a.final_state - b.final_state)))
        for a in trajs
        for b in trajs
    )
    print(f"funnel: {len(trajs)} runs, endpoint spread {spread!r}")
    return outputs


def _time_tag(t: float) -> str:
    return repr(float(t)).replace("-", "m")


def cmd_reach(cfg: SystemConfig, args) -> list:
    if cfg.grid_box is None:
        raise ConfigError("grid: section is required for the reach command")
    seed = _resolve_seed(args, cfg)
    times = cfg.times if args.times is None else tuple(
        float(p) for p in args.times.split(",")
    )
    if not times:
        raise ConfigError("grid.times: at least one time is required")
    pitch = cfg.pitch
    if args.pitch is not None:
        pitch = (args.pitch,) * cfg.dimension
    budget = args.budget if args.budget is not None else cfg.budget
    k = args.k if args.k is not None else cfg.grid_k
    levels = args.levels
    if levels < 1:
        raise ConfigError(f"--levels: must be at least 1, got {levels}")
    defect_pair = None
    if args.defect is not None:
        parts = args.defect.split(",")
        if len(parts) != 2:
            raise ConfigError(f"--defect: expected 't,s', got {args.defect!r}")
        defect_pair = (float(parts[0]), float(parts[1]))
        t, s = defect_pair
        for needed in (t, s, t + s):
            if needed != 0.0 and not any(
                abs(needed - have) <= 1e-12 for have in times
            ):
                raise ConfigError(
                    f"--defect: time {needed!r} (from t={t!r}, s={s!r}) "
                    f"is not in the times list {tuple(times)}"
                )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    battery = default_battery(seed)
    approxes = []
    defect_rows = []
    for level in range(levels):
        lv_pitch = tuple(p / (2 ** level) for p in pitch)
        lv_k = k * (2 ** level)
        lv_budget = budget * (4 ** level)
        grid = Grid(box=cfg.grid_box, pitch=lv_pitch)
        approx = build_multiflow(
            cfg.system,
            grid,
            times,
            lv_budget,
            lv_k,
            strategies=battery,
            seed=seed,
            threads=args.threads,
        )
        approxes.append(approx)
        prefix = f"level{level}_" if levels > 1 else ""
        for t, rel in zip(approx.times, approx.relations):
            name = f"{prefix}relation_t{_time_tag(t)}.txt"
            outputs.append(
                write_relation(
                    rel,
                    out / name,
                    k=approx.provenance.k,
                    delta=approx.provenance.delta,
                    seed=seed,
                    budget=approx.provenance.budget,
                )
            )
        if defect_pair is not None:
            t, s = defect_pair

            def get(x, ap=approx, g=grid):
                return identity_relation(g) if x == 0.0 else ap.relation_at(
                    min(ap.times, key=lambda have: abs(have - x))
                )

            composed = compose(get(t), get(s))
            direct = get(t + s)
            fwd = directed_distance(composed, direct)
            bwd = directed_distance(direct, composed)
            defect_rows.append([level, repr(t), repr(s), repr(fwd), repr(bwd)])
    if defect_rows:
        outputs.append(
            write_table(
                out / "defects.csv",
                ["level", "t", "s", "defect_fwd", "defect_bwd"],
                defect_rows,
            )
        )
    if levels >= 2:
        report = closure_defect(approxes)
        rows = []
        for t, dists in zip(report.times, report.distances):
            for pair_idx, d in enumerate(dists):
                rows.append(
                    [repr(t), f"{pair_idx}-{pair_idx + 1}", repr(d)]
                )
        outputs.append(
            write_table(out / "closure.csv", ["t", "levels", "distance"], rows)
        )
        print(
            f"reach: {levels} levels, closure distances "
            f"{'decreasing' if report.decreasing else 'NOT decreasing'}"
        )
    else:
        total = sum(len(r.pairs) for r in approxes[0].relations)
        print(f"reach: {len(times)} times, {total} pairs")
    return outputs


def cmd_check(cfg: SystemConfig, args) -> list:
    points_path = Path(args.points)
    try:
        lines = points_path.read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"--points: cannot read {points_path} ({exc})") from None
    points = []
    for row_no, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        cells = line.split(",")
        try:
            vals = [float(c) for c in cells]
        except ValueError:
            if row_no == 1:
                continue  # header row
            raise ConfigError(
                f"--points: line {row_no}: expected numbers, got {line!r}"
            ) from None
        if len(vals) != cfg.dimension:
            raise ConfigError(
                f"--points: line {row_no}: expected {cfg.dimension} coordinates"
            )
        points.append(np.array(vals))
    if not points:
        raise ConfigError(f"--points: no points found in {points_path}")
    for p in points:
        if not cfg.domain.contains(p, tol=1e-9):
            raise ConfigError(
                f"--points: point {p.tolist()} lies outside the domain box"
            )
    eps_list = (0.1, 0.01)
    rows = []
    for p in points:
        report = check_point(cfg.system, p, eps_list=eps_list)
        row = [repr(float(c)) for c in p]
        row += [
            "true" if report.nonempty else "false",
            "true" if report.bounded else "false",
            "true" if report.closed_convex else "false",
            repr(report.max_norm),
        ]
        for _, delta in report.usc:
            row.append("" if delta is None else repr(delta))
        rows.append(row)
    header = [f"x{j + 1}" for j in range(cfg.dimension)]
    header += ["nonempty", "bounded", "closed_convex", "max_norm"]
    header += [f"usc_delta_eps{_fmt(eps)}" for eps in eps_list]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = [write_table(out / "check.csv", header, rows)]
    worst = min(
        (row[-2] for row in rows if row[-2] != ""), key=float, default=""
    )
    print(f"check: {len(points)} points, smallest usc delta at eps=0.1: {worst or 'none'}")
    return outputs


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="TOML system description")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--seed", type=int, default=None, help="override solver.seed")
    common.add_argument(
        "--deterministic", action="store_true",
        help="null wall time and SVG timestamps for byte-stable outputs",
    )
    common.add_argument("--threads", type=int, default=1, help="worker threads for reach")
    parser = argparse.ArgumentParser(
        prog="diffinc",
        description="simulate differential inclusions and build reachability relations",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", parents=[common], help="one trajectory")
    p.add_argument("--x0", required=True, help="start state, comma-separated")
    p.add_argument("--horizon", type=float, required=True)
    p.add_argument("--k", type=int, default=None, help="override solver.k")
    p.add_argument("--strategy", default=None, help="override solver.strategy")
    p.add_argument("--svg", action="store_true", help="emit a phase portrait")
    p = sub.add_parser("funnel", parents=[common], help="trajectory bundle")
    p.add_argument("--x0", required=True, help="start state, comma-separated")
    p.add_argument("--horizon", type=float, required=True)
    p.add_argument("--runs", type=int, default=64)
    p.add_argument("--k", type=int, default=None, help="override solver.k")
    p = sub.add_parser("reach", parents=[common], help="reachability relations")
    p.add_argument("--times", default=None, help="override grid.times, comma-separated")
    p.add_argument("--pitch", type=float, default=None, help="override grid.pitch")
    p.add_argument("--budget", type=int, default=None, help="override grid.budget")
    p.add_argument("--k", type=int, default=None, help="override grid.k")
    p.add_argument("--defect", default=None, help="monoid defect pair 't,s'")
    p.add_argument("--levels", type=int, default=1, help="refinement levels")
    p = sub.add_parser("check", parents=[common], help="basic-conditions report")
    p.add_argument("--points", required=True, help="CSV of points to probe")
    return parser


_COMMANDS = {
    "simulate": cmd_simulate,
    "funnel": cmd_funnel,
    "reach": cmd_reach,
    "check": cmd_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    started = time.perf_counter()
    try:
        cfg = load_config(args.config)
        if args.threads < 1:
            raise ConfigError(f"--threads: must be at least 1, got {args.threads}")
        outputs = _COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (
        SolverDiagnostic,
        FieldEvaluationError,
        EvaluationError,
        DegenerateSlidingError,
        UnsupportedBoundaryError,
    ) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 3
    wall = time.perf_counter() - started
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = {
        k: v
        for k, v in vars(args).items()
        if k not in ("command",) and v is not None
    }
    params["command"] = args.command
    rel_outputs = [Path(p).name for p in outputs]
    _write_manifest(
        out_dir, cfg.path, args.command, params, rel_outputs,
        args.deterministic, wall,
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
