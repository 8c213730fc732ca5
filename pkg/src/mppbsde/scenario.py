"""Scenario files: JSON schema, validation with field pointers, builders.

A scenario is plain data.  The terminal value is either an arithmetic
expression over the count variables (``n`` = total, ``n1 .. nK`` per mark)
or an explicit table; expressions are evaluated by a small AST walker, never
by ``eval``.
"""

from __future__ import annotations

import ast
import copy
import hashlib
import json
import math
import operator
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .drivers import Driver, GrowthParams, TerminalCondition, make_driver
from .lattice import TimeGrid
from .mpp import CompensatorSpec, MarkSpace, Modulus, SpecError
from .reflection import LossFunction, make_loss

__all__ = [
    "SCHEMA",
    "Scenario",
    "ScenarioError",
    "load_scenario",
    "parse_scenario",
    "builtin_scenario",
    "BUILTIN",
    "compile_expression",
]


class ScenarioError(ValueError):
    """Invalid scenario; ``pointer`` is a JSON pointer to the offending field."""

    def __init__(self, pointer: str, message: str):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer or "/"


_num = {"type": "number"}
_nums = {"type": "array", "items": _num, "minItems": 1}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["name", "compensator", "driver", "terminal"],
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "compensator": {
            "type": "object",
            "additionalProperties": False,
            "required": ["marks", "phi", "A", "T"],
            "properties": {
                "marks": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                "phi": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["times", "values"],
                    "properties": {"times": _nums, "values": {"type": "array", "items": _nums, "minItems": 1}},
                },
                "A": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["times", "values"],
                    "properties": {"times": _nums, "values": _nums},
                },
                "rho": {"type": ["number", "null"], "minimum": 0},
                "T": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "driver": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"type": "string"},
                "growth": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "beta": {"type": "number", "minimum": 0},
                        "lam": {"type": "number", "exclusiveMinimum": 0},
                        "c0": {"type": "number", "minimum": 0},
                        "alpha_times": _nums,
                        "alpha_values": _nums,
                    },
                },
            },
        },
        "terminal": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "expr": {"type": "string", "minLength": 1, "maxLength": 400},
                "table": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["counts", "values"],
                    "properties": {
                        "counts": {"type": "array", "items": {"type": "array", "items": {"type": "integer", "minimum": 0}}},
                        "values": {"type": "array", "items": _num},
                        "default": _num,
                    },
                },
                "bound": {"type": ["number", "null"], "minimum": 0},
            },
            "oneOf": [{"required": ["expr"]}, {"required": ["table"]}],
        },
        "loss": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"type": "string"},
                "kappa": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 2, "maxItems": 2},
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "N": {"type": "integer", "minimum": 1},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "n_max": {"type": ["integer", "null"], "minimum": 1},
                "j_max": {"type": "integer", "minimum": 1},
                "tail_tol": {"type": "number", "exclusiveMinimum": 0},
                "scheme": {"enum": ["explicit", "rk4"]},
                "implicit": {"type": "boolean"},
            },
            "not": {"required": ["N", "dt"]},
        },
        "run": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "seeds": {
                    "oneOf": [
                        {"type": "array", "items": {"type": "integer", "minimum": 0}},
                        {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["start", "count"],
                            "properties": {"start": {"type": "integer", "minimum": 0}, "count": {"type": "integer", "minimum": 0}},
                        },
                    ]
                },
                "M": {"type": "integer", "minimum": 0},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "quad_step": {"type": "number", "exclusiveMinimum": 0},
                "picard_tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iter": {"type": "integer", "minimum": 1},
            },
        },
    },
}

_GRID_DEFAULTS = {"n_max": None, "j_max": 8, "tail_tol": 1e-12, "scheme": "explicit", "implicit": False}
_RUN_DEFAULTS = {"seeds": {"start": 0, "count": 1000}, "M": 0, "tol": 1e-8, "quad_step": 0.01, "picard_tol": 1e-10, "max_iter": 50}

# ------------------------------------------------------------ expressions

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
    ast.Mod: operator.mod,
    ast.FloorDiv: operator.floordiv,
}
_CMPS = {
    ast.Lt: operator.lt,
    ast.LtE: operator.le,
    ast.Gt: operator.gt,
    ast.GtE: operator.ge,
    ast.Eq: operator.eq,
    ast.NotEq: operator.ne,
}
_FUNCS = {
    "min": np.minimum,
    "max": np.maximum,
    "abs": np.abs,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "floor": np.floor,
    "where": np.where,
}
_MAX_NODES = 200


def compile_expression(text: str, K: int):
    """Compile ``text`` into ``g(counts) -> values`` over ``(m, K)`` count arrays.

    Allowed: numbers, ``n``, ``n1..nK``, ``+ - * / // % **``, comparisons
    (true = 1.0), ``and``/``or``/``not`` and the functions min, max, abs,
    exp, log, sqrt, floor, where.
    """
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse expression: {exc.msg}") from None
    nodes = list(ast.walk(tree))
    if len(nodes) > _MAX_NODES:
        raise ValueError(f"expression too long ({len(nodes)} nodes)")
    names = {"n"} | {f"n{k + 1}" for k in range(K)}

    def walk(node, env):
        if isinstance(node, ast.Expression):
            return walk(node.body, env)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id not in names:
                raise ValueError(f"unknown variable {node.id!r}")
            return env[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            right = walk(node.right, env)
            if isinstance(node.op, ast.Pow) and np.max(np.abs(right)) > 64:
                raise ValueError("exponent too large")
            return _BINOPS[type(node.op)](walk(node.left, env), right)
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd, ast.Not)):
            v = walk(node.operand, env)
            if isinstance(node.op, ast.Not):
                return 1.0 - (np.asarray(v) != 0)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BoolOp):
            vals = [np.asarray(walk(v, env)) != 0 for v in node.values]
            fold = np.logical_and if isinstance(node.op, ast.And) else np.logical_or
            out = vals[0]
            for v in vals[1:]:
                out = fold(out, v)
            return out.astype(float)
        if isinstance(node, ast.Compare) and all(type(op) in _CMPS for op in node.ops):
            left = walk(node.left, env)
            out = True
            for op, comp in zip(node.ops, node.comparators):
                right = walk(comp, env)
                out = np.logical_and(out, _CMPS[type(op)](left, right))
                left = right
            return np.asarray(out, dtype=float)
        if (
            isinstance(node, ast.Call)
            and isinstance(node.func, ast.Name)
            and node.func.id in _FUNCS
            and not node.keywords
        ):
            args = [walk(a, env) for a in node.args]
            return _FUNCS[node.func.id](*args)
        raise ValueError(f"unsupported syntax: {type(node).__name__}")

    def g(counts):
        counts = np.atleast_2d(np.asarray(counts, dtype=float))
        env = {"n": counts.sum(axis=1)}
        for k in range(K):
            env[f"n{k + 1}"] = counts[:, k]
        with np.errstate(all="ignore"):
            return np.broadcast_to(np.asarray(walk(tree, env), dtype=float), counts.shape[:1])

    g(np.zeros((1, K), dtype=int))  # surfaces unknown names and syntax early
    return g


def _table_terminal(table: dict, K: int):
    counts = [tuple(c) for c in table["counts"]]
    if len(counts) != len(table["values"]):
        raise ScenarioError("/terminal/table/values", "must have one value per counts row")
    for r, c in enumerate(counts):
        if len(c) != K:
            raise ScenarioError(f"/terminal/table/counts/{r}", f"expected {K} counts")
    lookup = dict(zip(counts, map(float, table["values"])))
    default = table.get("default")

    def g(arr):
        arr = np.atleast_2d(np.asarray(arr, dtype=int))
        out = np.empty(arr.shape[0])
        for r, row in enumerate(arr):
            key = tuple(int(x) for x in row)
            if key in lookup:
                out[r] = lookup[key]
            elif default is not None:
                out[r] = default
            else:
                raise ValueError(f"terminal table has no entry for counts {key}")
        return out

    return g


# --------------------------------------------------------------- scenario


@dataclass(eq=False)
class Scenario:
    data: dict
    spec: CompensatorSpec
    driver: Driver
    xi: TerminalCondition
    loss: LossFunction | None

    @property
    def name(self) -> str:
        return self.data["name"]

    @property
    def grid_opts(self) -> dict:
        return self.data["grid"]

    @property
    def run(self) -> dict:
        return self.data["run"]

    def seeds(self, offset: int = 0) -> list[int]:
        s = self.run["seeds"]
        if isinstance(s, dict):
            return list(range(s["start"] + offset, s["start"] + offset + s["count"]))
        return [x + offset for x in s]

    def grid(self, N: int | None = None) -> TimeGrid:
        if N is None:
            g = self.grid_opts
            N = g["N"] if "N" in g else max(1, math.ceil(self.spec.T / g["dt"] - 1e-9))
        return TimeGrid.uniform(self.spec, int(N))

    def solver_opts(self) -> dict:
        g = self.grid_opts
        return {k: g[k] for k in ("n_max", "j_max", "tail_tol", "scheme", "implicit")}

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def dumps(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True)

    def digest(self) -> str:
        blob = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def mean_terminal(self) -> float:
        from .lattice import forward_law

        grid = TimeGrid.from_times(self.spec, [0.0, self.spec.T])
        law = forward_law(self.spec, grid, self.grid_opts["n_max"], j_max=self.grid_opts["j_max"])
        return float(np.dot(law.probs[-1], self.xi(law.states.counts)))


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path) if path else "/"


def _validate_schema(data) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = errors[0]
        raise ScenarioError(_pointer(err.absolute_path), err.message)


def _build_spec(c: dict) -> CompensatorSpec:
    K = len(c["marks"])
    phi_t, phi_v = c["phi"]["times"], c["phi"]["values"]
    if len(phi_t) != len(phi_v):
        raise ScenarioError("/compensator/phi/values", "must have one row per phi time")
    for r, row in enumerate(phi_v):
        if len(row) != K:
            raise ScenarioError(f"/compensator/phi/values/{r}", f"expected {K} weights, one per mark")
        if min(row) < 0 or abs(math.fsum(row) - 1.0) > 1e-12:
            raise ScenarioError(f"/compensator/phi/values/{r}", f"weights must be nonnegative and sum to 1 (sum = {math.fsum(row):.12g})")
    a_t, a_v = c["A"]["times"], c["A"]["values"]
    if len(a_t) != len(a_v):
        raise ScenarioError("/compensator/A/values", "must have one value per breakpoint")
    for k in range(1, len(a_v)):
        if a_v[k] < a_v[k - 1]:
            raise ScenarioError(f"/compensator/A/values/{k}", "A must be nondecreasing")
    rho = c.get("rho")
    try:
        return CompensatorSpec(
            MarkSpace(tuple(range(K)), tuple(c["marks"])),
            phi_t,
            phi_v,
            a_t,
            a_v,
            c["T"],
            Modulus(rho) if rho is not None else None,
        )
    except SpecError as exc:
        raise ScenarioError("/compensator", str(exc)) from None


def parse_scenario(data: dict) -> Scenario:
    """Validate a scenario dict and build the model objects.

    Defaults are filled into the stored data, so serializing and parsing
    again reproduces the same scenario.
    """
    if not isinstance(data, dict):
        raise ScenarioError("/", "scenario must be a JSON object")
    _validate_schema(data)
    data = copy.deepcopy(data)
    data.setdefault("grid", {})
    data.setdefault("run", {})
    for k, v in _GRID_DEFAULTS.items():
        data["grid"].setdefault(k, v)
    if "N" not in data["grid"] and "dt" not in data["grid"]:
        data["grid"]["N"] = 1000
    for k, v in _RUN_DEFAULTS.items():
        data["run"].setdefault(k, copy.deepcopy(v))
    data["compensator"].setdefault("rho", None)
    data["terminal"].setdefault("bound", None)

    spec = _build_spec(data["compensator"])

    d = data["driver"]
    growth = None
    if "growth" in d:
        gr = dict(d["growth"])
        if ("alpha_times" in gr) != ("alpha_values" in gr):
            raise ScenarioError("/driver/growth", "alpha_times and alpha_values go together")
        try:
            growth = GrowthParams(**{k: tuple(v) if isinstance(v, list) else v for k, v in gr.items()})
        except (TypeError, ValueError) as exc:
            raise ScenarioError("/driver/growth", str(exc)) from None
    try:
        driver = make_driver(d["name"], growth)
    except ValueError as exc:
        raise ScenarioError("/driver/name", str(exc)) from None

    t = data["terminal"]
    if "expr" in t:
        try:
            g = compile_expression(t["expr"], spec.K)
        except ValueError as exc:
            raise ScenarioError("/terminal/expr", str(exc)) from None
        desc = t["expr"]
    else:
        g = _table_terminal(t["table"], spec.K)
        desc = "table"
    xi = TerminalCondition(g, t["bound"], desc)

    scen = Scenario(data, spec, driver, xi, None)
    if "loss" in data:
        lo = data["loss"]
        try:
            mean = scen.mean_terminal() if "mean_xi" in lo["name"] else None
            loss = make_loss(lo["name"], mean)
        except ValueError as exc:
            raise ScenarioError("/loss/name", str(exc)) from None
        if "kappa" in lo:
            a, b = lo["kappa"]
            if not (a <= loss.kappa_lower + 1e-12 and b >= loss.kappa_upper - 1e-12):
                raise ScenarioError("/loss/kappa", f"declared bounds do not contain [{loss.kappa_lower:g}, {loss.kappa_upper:g}]")
            loss = LossFunction(loss.name, loss.fn, a, b)
        scen.loss = loss
    return scen


def load_scenario(path: str | Path) -> Scenario:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError("/", f"invalid JSON: {exc}") from None
    return parse_scenario(data)


# --------------------------------------------------------------- built-ins


def _unit(name, driver, expr, grid=None, loss=None, run=None, growth=None, **comp):
    c = {"marks": ["e1"], "phi": {"times": [0.0], "values": [[1.0]]}, "A": {"times": [0.0, 1.0], "values": [0.0, 1.0]}, "T": 1.0}
    c.update(comp)
    out = {
        "name": name,
        "compensator": c,
        "driver": {"name": driver},
        "terminal": {"expr": expr},
        "grid": {"N": 1000, "n_max": 30, **(grid or {})},
        "run": run or {},
    }
    if growth:
        out["driver"]["growth"] = growth
    if loss:
        out["loss"] = {"name": loss}
    return out


BUILTIN = {
    "canonical": _unit("canonical", "zero", "n >= 1", run={"M": 1000}),
    "entropic": _unit("entropic", "entropic:1", "n >= 1", run={"M": 1000}),
    "entropic_rk4": _unit("entropic_rk4", "entropic:1", "n >= 1", grid={"scheme": "rk4"}),
    "regularization": _unit("regularization", "entropic:1", "3 * (n >= 1)"),
    "unbounded": _unit("unbounded", "zero", "n"),
    "binding": _unit("binding", "constant:-1", "n >= 1", loss="linear:mean_xi"),
    "slack": _unit("slack", "constant:1", "n >= 1", loss="linear:mean_xi"),
    "picard": _unit("picard", "lipschitz_linear:0.1,0", "n >= 1", loss="linear:mean_xi"),
    "understated_beta": _unit(
        "understated_beta", "lipschitz_linear:2,0", "n >= 1", grid={"scheme": "rk4"}, growth={"beta": 1.0, "lam": 1.0}
    ),
    "no_jumps": _unit("no_jumps", "zero", "n", A={"times": [0.0, 1.0], "values": [0.0, 0.0]}),
    "two_marks": {
        "name": "two_marks",
        "compensator": {
            "marks": ["up", "down"],
            "phi": {"times": [0.0, 0.5], "values": [[0.7, 0.3], [0.4, 0.6]]},
            "A": {"times": [0.0, 0.5, 1.0], "values": [0.0, 0.5, 1.5]},
            "T": 1.0,
        },
        "driver": {"name": "entropic:1"},
        "terminal": {"expr": "min(n1 - n2, 2)"},
        "grid": {"N": 200, "n_max": 20},
        "run": {"M": 500},
    },
}


def builtin_scenario(name: str) -> Scenario:
    if name not in BUILTIN:
        raise ScenarioError("/name", f"unknown built-in scenario {name!r}; choose from {sorted(BUILTIN)}")
    return parse_scenario(BUILTIN[name])
