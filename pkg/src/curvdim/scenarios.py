"""Scenario configuration: loading, validation and execution.

A config is a TOML file with an optional ``[defaults]`` table and one or more
``[[scenario]]`` tables.  See ``docs/config.md`` for the schema.  Numbers may be
written as strings holding arithmetic on constants, e.g. ``"pi/2"``.
"""

from __future__ import annotations

import ast
import math
import operator
import re
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .checkers import CheckReport, Tolerance, check_bm, check_cd, check_mcp, check_sbm
from .construction import check_step_construction
from .errors import CurvDimError, DomainError
from .measures import DiscreteMeasure, from_density, step_measure, uniform_on
from .spaces import CellSet, Grid, build_grid, space_from_dict

__all__ = ["builtin_configs", "ConfigError", "Scenario", "CheckSpec", "load_config", "parse_config", "run_scenario", "ScenarioResult", "safe_eval"]

CONDITIONS = ("CD", "BM", "SBM", "MCP", "STEP")


class ConfigError(CurvDimError, ValueError):
    """Invalid configuration; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = f"{path or '<config>'}:{line}: " if line else f"{path or '<config>'}: "
        super().__init__(where + message)


# -- safe arithmetic ---------------------------------------------------------

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNOPS = {ast.UAdd: operator.pos, ast.USub: operator.neg}
_FUNCS = {"sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log, "sqrt": np.sqrt, "abs": np.abs, "sinh": np.sinh, "cosh": np.cosh}
_CONSTS = {"pi": math.pi, "e": math.e, "inf": math.inf}


def safe_eval(expr: str, names: dict[str, Any] | None = None):
    """Evaluate arithmetic on numbers, named constants and a few elementary functions."""
    env = dict(_CONSTS)
    env.update(names or {})

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            return node.value
        if isinstance(node, ast.Name):
            if node.id in env:
                return env[node.id]
            raise ValueError(f"unknown name {node.id!r}")
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
            return _UNOPS[type(node.op)](ev(node.operand))
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS and not node.keywords:
            return _FUNCS[node.func.id](*[ev(a) for a in node.args])
        raise ValueError(f"unsupported expression element {ast.dump(node)[:40]}")

    try:
        tree = ast.parse(expr.strip(), mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse expression {expr!r}") from exc
    return ev(tree)


# -- schema ------------------------------------------------------------------


@dataclass
class CheckSpec:
    condition: str
    K: float
    N: float
    sets: tuple[str, ...] = ()
    measures: tuple[str, ...] = ()
    point: tuple[float, ...] | None = None
    eps: float = 0.25
    t_grid: tuple[float, ...] | None = None
    Nprime_grid: tuple[float, ...] | None = None
    conservative: bool = True
    tol: Tolerance = field(default_factory=Tolerance)
    line: int | None = None


@dataclass
class Scenario:
    name: str
    space: dict
    box: list | None
    h: float
    sets: dict[str, list]
    measures: dict[str, dict]
    checks: list[CheckSpec]
    max_cells: int = 10**7
    line: int | None = None


class _Locator:
    """Map config entries back to source lines for error messages."""

    def __init__(self, text: str):
        self.lines = text.splitlines()
        self.starts = [i + 1 for i, s in enumerate(self.lines) if re.match(r"\s*\[\[\s*scenario\s*\]\]", s)]
        self.check_starts = [i + 1 for i, s in enumerate(self.lines) if re.match(r"\s*\[\[\s*scenario\.checks\s*\]\]", s)]

    def scenario(self, idx: int) -> int | None:
        return self.starts[idx] if idx < len(self.starts) else None

    def check(self, sidx: int, cidx: int) -> int | None:
        start = self.scenario(sidx)
        if start is None:
            return None
        end = self.starts[sidx + 1] if sidx + 1 < len(self.starts) else len(self.lines) + 1
        inside = [c for c in self.check_starts if start < c < end]
        return inside[cidx] if cidx < len(inside) else start

    def key(self, start: int | None, key: str, block: bool = False) -> int | None:
        """Line of ``key = ...`` (or ``[scenario.key]``) after ``start``; ``start`` if absent.

        The scan stops at the next scenario, or at any table header when
        ``block`` is set.
        """
        if start is None:
            return None
        pat_key = re.compile(rf"^\s*{re.escape(key)}\s*=")
        pat_tab = re.compile(rf"^\s*\[\s*scenario\.{re.escape(key)}\s*\]")
        for i in range(start, len(self.lines)):
            s = self.lines[i]
            if re.match(r"\s*\[\[\s*scenario\s*\]\]", s) or (block and re.match(r"\s*\[", s)):
                break
            if pat_key.match(s) or pat_tab.match(s):
                return i + 1
        return start

    def table(self, name: str) -> int | None:
        for i, s in enumerate(self.lines):
            if re.match(rf"\s*\[\s*{re.escape(name)}\s*\]", s):
                return i + 1
        return None


def _num(value, what: str, line, path):
    if isinstance(value, bool):
        raise ConfigError(f"{what} must be a number, got a boolean", line, path)
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            out = safe_eval(value)
        except ValueError as exc:
            raise ConfigError(f"{what}: {exc}", line, path) from None
        return float(out)
    raise ConfigError(f"{what} must be a number or an arithmetic string, got {type(value).__name__}", line, path)


def _num_list(value, what, line, path):
    if not isinstance(value, list):
        raise ConfigError(f"{what} must be a list", line, path)
    return tuple(_num(v, what, line, path) for v in value)


def _box(value, what, line, path):
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{what} must be a list of [lo, hi] pairs", line, path)
    out = []
    for pair in value:
        if not isinstance(pair, list) or len(pair) != 2:
            raise ConfigError(f"{what} must be a list of [lo, hi] pairs", line, path)
        lo, hi = (_num(v, what, line, path) for v in pair)
        if not hi > lo:
            raise ConfigError(f"{what}: empty interval [{lo}, {hi}]", line, path)
        out.append((lo, hi))
    return out


def _tolerance(table: dict, base: Tolerance, line, path) -> Tolerance:
    kw = {}
    for key, attr in (("tol_abs", "abs"), ("tol_rel", "rel"), ("c_disc", "c_disc")):
        if key in table:
            kw[attr] = _num(table[key], key, line, path)
            if kw[attr] < 0:
                raise ConfigError(f"{key} must be >= 0", line, path)
    return replace(base, **kw)


_SCENARIO_KEYS = {"name", "space", "box", "h", "sets", "measures", "checks", "max_cells", "tol_abs", "tol_rel", "c_disc", "t_grid"}
_CHECK_KEYS = {"condition", "K", "N", "sets", "measures", "point", "set", "eps", "t_grid", "Nprime_grid", "conservative", "tol_abs", "tol_rel", "c_disc"}


def parse_config(text: str, path: str | None = None) -> list[Scenario]:
    """Parse and validate a config; raises :class:`ConfigError` with a line number."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"TOML syntax error: {exc}", int(m.group(1)) if m else None, path) from None
    loc = _Locator(text)
    unknown = set(doc) - {"defaults", "scenario"}
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"unknown top-level key {key!r}", loc.table(key), path)
    defaults = doc.get("defaults", {})
    dline = loc.table("defaults")
    base_tol = _tolerance(defaults, Tolerance(), dline, path)
    default_h = _num(defaults["h"], "defaults.h", dline, path) if "h" in defaults else None
    default_t = _num_list(defaults["t_grid"], "defaults.t_grid", dline, path) if "t_grid" in defaults else None
    raw = doc.get("scenario")
    if not isinstance(raw, list) or not raw:
        raise ConfigError("config declares no [[scenario]] tables", None, path)

    out, names = [], set()
    for si, sc in enumerate(raw):
        line = loc.scenario(si)
        extra = set(sc) - _SCENARIO_KEYS
        if extra:
            k = sorted(extra)[0]
            raise ConfigError(f"unknown scenario key {k!r}", loc.key(line, k), path)
        name = sc.get("name", f"scenario{si + 1}")
        if not isinstance(name, str) or not re.fullmatch(r"[A-Za-z0-9_.-]+", name):
            raise ConfigError("scenario name must use letters, digits, '_', '-', '.'", loc.key(line, "name"), path)
        if name in names:
            raise ConfigError(f"duplicate scenario name {name!r}", loc.key(line, "name"), path)
        names.add(name)
        if "space" not in sc or not isinstance(sc["space"], dict):
            raise ConfigError("scenario needs a 'space' table", line, path)
        space_spec = {k: (v if k in ("kind", "weight") else _num(v, f"space.{k}", loc.key(line, "space"), path)) for k, v in sc["space"].items()}
        try:
            space = space_from_dict(space_spec)
        except (CurvDimError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad space: {exc}", loc.key(line, "space"), path) from None
        box = _box(sc["box"], "box", loc.key(line, "box"), path) if "box" in sc else None
        if box is not None and len(box) != space.dim:
            raise ConfigError(f"box has {len(box)} axes but the space chart has {space.dim}", loc.key(line, "box"), path)
        if "h" in sc:
            h = _num(sc["h"], "h", loc.key(line, "h"), path)
        elif default_h is not None:
            h = default_h
        else:
            raise ConfigError("no grid resolution 'h' (set it in the scenario or [defaults])", line, path)
        if not h > 0:
            raise ConfigError("h must be > 0", loc.key(line, "h"), path)
        sets = {}
        for sname, boxes in (sc.get("sets") or {}).items():
            sl = loc.key(line, sname)
            if not isinstance(boxes, list) or not boxes:
                raise ConfigError(f"set {sname!r} must be a nonempty list of boxes", sl, path)
            if all(isinstance(b, list) and len(b) == 2 and not isinstance(b[0], list) for b in boxes):
                boxes = [boxes]  # a single box written without the outer list
            parsed = [_box(b, f"set {sname!r}", sl, path) for b in boxes]
            for b in parsed:
                if len(b) != space.dim:
                    raise ConfigError(f"set {sname!r} has a box with {len(b)} axes, space has {space.dim}", sl, path)
            sets[sname] = parsed
        measures = {}
        for mname, spec in (sc.get("measures") or {}).items():
            ml = loc.key(line, mname)
            if not isinstance(spec, dict) or spec.get("kind") not in ("uniform", "step", "density"):
                raise ConfigError(f"measure {mname!r} needs kind = uniform | step | density", ml, path)
            if spec["kind"] in ("uniform", "density") and spec.get("set") not in sets:
                raise ConfigError(f"measure {mname!r} refers to unknown set {spec.get('set')!r}", ml, path)
            if spec["kind"] == "density":
                expr = spec.get("expr")
                if not isinstance(expr, str):
                    raise ConfigError(f"measure {mname!r} needs a density 'expr' string", ml, path)
                try:
                    probe = np.zeros(space.dim)
                    safe_eval(expr, _coord_names(probe[None, :]))
                except ValueError as exc:
                    raise ConfigError(f"measure {mname!r}: {exc}", ml, path) from None
            if spec["kind"] == "step":
                pieces = spec.get("pieces")
                if not isinstance(pieces, list) or not pieces:
                    raise ConfigError(f"measure {mname!r} needs pieces = [[set, weight], ...]", ml, path)
                for p in pieces:
                    if not (isinstance(p, list) and len(p) == 2 and p[0] in sets):
                        raise ConfigError(f"measure {mname!r}: bad piece {p!r}", ml, path)
                    _num(p[1], "piece weight", ml, path)
            measures[mname] = spec
        tol_s = _tolerance(sc, base_tol, line, path)
        t_s = _num_list(sc["t_grid"], "t_grid", loc.key(line, "t_grid"), path) if "t_grid" in sc else default_t
        checks = []
        for ci, ck in enumerate(sc.get("checks") or []):
            cl = loc.check(si, ci)
            checks.append(_parse_check(ck, sets, measures, space, tol_s, t_s, cl, path, loc))
        if not checks:
            raise ConfigError("scenario declares no [[scenario.checks]]", line, path)
        max_cells = int(_num(sc.get("max_cells", 10**7), "max_cells", loc.key(line, "max_cells"), path))
        out.append(Scenario(name, space_spec, box, h, sets, measures, checks, max_cells, line))
    return out


def _coord_names(chart: np.ndarray) -> dict:
    names = {f"x{k}": chart[:, k] for k in range(chart.shape[1])}
    for k, alias in enumerate("xyz"[: chart.shape[1]]):
        names[alias] = chart[:, k]
    return names


def _parse_check(ck, sets, measures, space, tol_s, t_s, line, path, loc) -> CheckSpec:
    extra = set(ck) - _CHECK_KEYS
    if extra:
        k = sorted(extra)[0]
        raise ConfigError(f"unknown check key {k!r}", loc.key(line, k, True), path)
    cond = ck.get("condition")
    if cond not in CONDITIONS:
        raise ConfigError(f"condition must be one of {', '.join(CONDITIONS)}, got {cond!r}", loc.key(line, "condition", True), path)
    for req in ("K", "N"):
        if req not in ck:
            raise ConfigError(f"{cond} check needs '{req}'", line, path)
    K = _num(ck["K"], "K", loc.key(line, "K", True), path)
    N = _num(ck["N"], "N", loc.key(line, "N", True), path)
    if not N >= 1:
        raise ConfigError("N must be >= 1", loc.key(line, "N", True), path)
    spec = CheckSpec(cond, K, N, tol=_tolerance(ck, tol_s, line, path), line=line)
    spec.t_grid = _num_list(ck["t_grid"], "t_grid", loc.key(line, "t_grid", True), path) if "t_grid" in ck else t_s
    if spec.t_grid is not None and any(not 0 <= t <= 1 for t in spec.t_grid):
        raise ConfigError("t values must lie in [0, 1]", loc.key(line, "t_grid", True), path)
    if "Nprime_grid" in ck:
        spec.Nprime_grid = _num_list(ck["Nprime_grid"], "Nprime_grid", loc.key(line, "Nprime_grid", True), path)
        if any(n < N for n in spec.Nprime_grid):
            raise ConfigError("every N' must be >= N", loc.key(line, "Nprime_grid", True), path)
    spec.conservative = bool(ck.get("conservative", True))
    if "eps" in ck:
        spec.eps = _num(ck["eps"], "eps", loc.key(line, "eps", True), path)
        if not spec.eps > 0:
            raise ConfigError("eps must be > 0", loc.key(line, "eps", True), path)

    def names(key, pool, count, kind):
        vals = ck.get(key)
        if not isinstance(vals, list) or len(vals) != count or any(v not in pool for v in vals):
            raise ConfigError(f"{cond} check needs {key} = {count} declared {kind} names", loc.key(line, key, True), path)
        return tuple(vals)

    if cond in ("BM", "SBM"):
        spec.sets = names("sets", sets, 2, "set")
    elif cond == "CD":
        if "measures" in ck:
            spec.measures = names("measures", measures, 2, "measure")
        else:
            spec.sets = names("sets", sets, 2, "set")
    elif cond == "MCP":
        if "set" not in ck or ck["set"] not in sets:
            raise ConfigError("MCP check needs set = a declared set name", loc.key(line, "set", True), path)
        spec.sets = (ck["set"],)
        if "point" not in ck:
            raise ConfigError("MCP check needs a point (chart coordinates)", line, path)
        spec.point = _num_list(ck["point"], "point", loc.key(line, "point", True), path)
        if len(spec.point) != space.dim:
            raise ConfigError(f"point has {len(spec.point)} coordinates, chart has {space.dim}", loc.key(line, "point", True), path)
    elif cond == "STEP":
        spec.measures = names("measures", measures, 2, "measure")
        for m in spec.measures:
            if measures[m]["kind"] not in ("step", "uniform"):
                raise ConfigError("STEP check needs step or uniform measures", loc.key(line, "measures", True), path)
        if "eps" not in ck:
            raise ConfigError("STEP check needs eps", line, path)
    return spec


CONFIG_DIR = Path(__file__).with_name("configs")


def builtin_configs() -> dict[str, Path]:
    """Bundled configs keyed by file stem."""
    return {p.stem: p for p in sorted(CONFIG_DIR.glob("*.toml"))}


def load_config(path) -> list[Scenario]:
    """Load a config file; a bare name such as ``falsify_positive_k`` selects a bundled one."""
    p = Path(path)
    if not p.exists() and str(path) in builtin_configs():
        p = builtin_configs()[str(path)]
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", None, str(path)) from None
    return parse_config(text, str(path))


# -- execution ---------------------------------------------------------------


@dataclass
class ScenarioResult:
    name: str
    grid: dict
    reports: list[CheckReport]
    rasters: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def verdict(self) -> bool:
        return all(r.verdict for r in self.reports)


def _build_sets(grid: Grid, sc: Scenario) -> dict[str, CellSet]:
    out = {}
    for name, boxes in sc.sets.items():
        S = CellSet.from_boxes(grid, boxes)
        if len(S) == 0:
            raise DomainError(f"set {name!r} contains no cell centre at h={grid.h}")
        out[name] = S
    return out


def _build_measure(spec: dict, sets: dict[str, CellSet], grid: Grid) -> DiscreteMeasure:
    if spec["kind"] == "uniform":
        return uniform_on(sets[spec["set"]])
    if spec["kind"] == "step":
        return step_measure([(sets[s], float(safe_eval(str(w)))) for s, w in spec["pieces"]])
    expr = spec["expr"]
    return from_density(sets[spec["set"]], lambda c: np.broadcast_to(np.asarray(safe_eval(expr, _coord_names(c)), dtype=float), (len(c),)))


def _step_pieces(spec: dict, sets: dict[str, CellSet]) -> list[CellSet]:
    if spec["kind"] == "uniform":
        return [sets[spec["set"]]]
    return [sets[s] for s, _ in spec["pieces"]]


def run_scenario(sc: Scenario, h_override: float | None = None, overrides: dict | None = None) -> ScenarioResult:
    """Build the grid, sets and measures of a scenario and run its checks.

    ``overrides`` replaces ``K`` or ``N`` in every check.
    """
    space = space_from_dict(sc.space)
    h = h_override or sc.h
    grid = build_grid(space, sc.box, h, sc.max_cells)
    sets = _build_sets(grid, sc)
    measures = {k: _build_measure(v, sets, grid) for k, v in sc.measures.items()}
    reports = []
    for ck in sc.checks:
        K = float(overrides.get("K", ck.K)) if overrides else ck.K
        N = float(overrides.get("N", ck.N)) if overrides else ck.N
        Np = ck.Nprime_grid
        if Np is not None and overrides and "N" in overrides:
            Np = tuple(n for n in Np if n >= N) or None
        if ck.condition == "CD":
            if ck.measures:
                mu0, mu1 = (measures[m] for m in ck.measures)
            else:
                mu0, mu1 = (uniform_on(sets[s]) for s in ck.sets)
            rep = check_cd(space, mu0, mu1, K, N, ck.t_grid, Np, ck.tol)
        elif ck.condition == "BM":
            A, B = (sets[s] for s in ck.sets)
            rep = check_bm(space, A, B, K, N, ck.t_grid, Np, ck.tol, ck.conservative)
        elif ck.condition == "SBM":
            A, B = (sets[s] for s in ck.sets)
            rep = check_sbm(space, A, B, K, N, ck.t_grid, Np, ck.tol)
        elif ck.condition == "MCP":
            x = space.from_chart(np.asarray(ck.point, dtype=float))
            rep = check_mcp(space, x, sets[ck.sets[0]], K, N, ck.t_grid, ck.eps, ck.tol, ck.conservative)
        else:
            m0, m1 = ck.measures
            rep = check_step_construction(
                space, measures[m0], measures[m1],
                _step_pieces(sc.measures[m0], sets), _step_pieces(sc.measures[m1], sets),
                K, N, ck.eps, ck.t_grid or (0.25, 0.5, 0.75), Np, ck.tol,
            )
        rep.diagnostics["sets"] = list(ck.sets or ck.measures)
        reports.append(rep)
    rasters = {name: S.centers() for name, S in sets.items()}
    return ScenarioResult(sc.name, grid.describe(), reports, rasters)
