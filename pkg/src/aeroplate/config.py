"""
Experiment configuration: TOML text, a fixed defaults table and a closed
vocabulary of analytic field expressions.

Field expressions (loads, initial data)::

    {type = "zero"}
    {type = "constant", c = 1.0}
    {type = "mode", i = 1, j = 1, amp = 0.1}      # clamped-compatible mode
    {type = "gaussian", x0 = 0.5, y0 = 0.5, sigma = 0.1, amp = 1.0}

``mode`` is ``amp sin(i pi x/Lx) sin(j pi y/Ly) sin(pi x/Lx) sin(pi y/Ly)``;
the extra first-mode factor gives zero slope on the boundary.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, ValidationError
from .grid import Domain, Field

try:  # Python >= 3.11
    import tomllib as _toml
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as _toml


KINDS = ("simulate", "stationary", "equilibrium-convergence", "dissipativity",
         "possio-check", "invariant-suite")

ZERO = {"type": "zero"}

DEFAULTS = {
    "kind": "simulate",
    "domain": {"x_extent": 1.0, "y_extent": 1.0, "nx": 32, "ny": 32},
    "model": {"U": None, "k": 0.0, "dt": 0.01, "T_final": 1.0, "include_L_term": True,
              "include_delay": True, "stiff_damping": 0.0, "n_corrector": 2,
              "solver_tol": 1e-11},
    "loads": {"p0": ZERO, "F0": ZERO},
    "delay": {"n_theta": 32, "n_s": 64},
    "initial": {"u": {"type": "mode", "i": 1, "j": 1, "amp": 0.1}, "v": ZERO},
    "prehistory": {"kind": "frozen-initial"},
    "outputs": {"ledger": "ledger.csv", "snapshot_every": 0, "keep_every": 1, "seed": 0},
    "stationary": {"newton_tol": 1e-9, "max_iter": 30, "continuation_steps": 1,
                   "restarts": 0, "restart_amplitude": 1.0},
    "experiment": {"energy_ratio": 10.0, "possio_n": 256},
    "sweep": {},
}

EXPRESSION_PARAMS = {
    "zero": {},
    "constant": {"c": float},
    "mode": {"i": int, "j": int, "amp": float},
    "gaussian": {"x0": float, "y0": float, "sigma": float, "amp": float},
}

PREHISTORY_KINDS = ("zero", "frozen-initial", "mode-ramp")

_TYPES = {
    "domain": {"x_extent": float, "y_extent": float, "nx": int, "ny": int},
    "model": {"U": float, "k": float, "dt": float, "T_final": float, "include_L_term": bool,
              "include_delay": bool, "stiff_damping": float, "n_corrector": int,
              "solver_tol": float},
    "delay": {"n_theta": int, "n_s": int},
    "outputs": {"ledger": str, "snapshot_every": int, "keep_every": int, "seed": int},
    "stationary": {"newton_tol": float, "max_iter": int, "continuation_steps": int,
                   "restarts": int, "restart_amplitude": float},
    "experiment": {"energy_ratio": float, "possio_n": int},
}


@dataclass(frozen=True)
class ExperimentConfig:
    data: dict

    def __getitem__(self, block):
        return self.data[block]

    @property
    def kind(self) -> str:
        return self.data["kind"]

    def canonical(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def with_overrides(self, overrides: dict) -> "ExperimentConfig":
        """Return a validated copy with ``{"block.key": value}`` replaced."""
        raw = copy.deepcopy(self.data)
        for path, value in overrides.items():
            block, key = path.split(".", 1)
            raw.setdefault(block, {})[key] = value
        raw["sweep"] = {}
        return validate(raw)

    # -- builders -----------------------------------------------------------
    def domain(self) -> Domain:
        d = self.data["domain"]
        return Domain(d["x_extent"], d["y_extent"], d["nx"], d["ny"])

    def expression(self, expr: dict, domain: Domain | None = None) -> Field:
        return build_expression(expr, domain or self.domain())

    def params(self):
        from .delay import DelaySpec
        from .dynamics import ModelParams
        from .vonkarman import AiryConfig, LoadSpec

        d = self.domain()
        m = self.data["model"]
        loads = LoadSpec(self.expression(self.data["loads"]["p0"], d),
                         self.expression(self.data["loads"]["F0"], d))
        spec = DelaySpec.for_domain(d, m["U"], self.data["delay"]["n_theta"], self.data["delay"]["n_s"])
        return ModelParams(U=m["U"], k=m["k"], loads=loads, delay=spec, dt=m["dt"],
                           T_final=m["T_final"], include_L_term=m["include_L_term"],
                           include_delay=m["include_delay"], stiff_damping=m["stiff_damping"],
                           n_corrector=m["n_corrector"], airy=AiryConfig(m["solver_tol"]))

    def initial_state(self):
        from .dynamics import PlateState
        d = self.domain()
        ini = self.data["initial"]
        return PlateState(0.0, self.expression(ini["u"], d), self.expression(ini["v"], d))

    def prehistory(self, initial, t_star: float):
        """``eta(t)`` on ``[-t*, 0]`` for the configured kind."""
        kind = self.data["prehistory"]["kind"]
        u0 = initial.u
        zero = u0.domain.zeros()
        if kind == "zero":
            return lambda t: u0 if t >= 0 else zero
        if kind == "frozen-initial":
            return lambda t: u0
        return lambda t: u0 * max(0.0, 1.0 + t / t_star)


def build_expression(expr: dict, domain: Domain) -> Field:
    kind = expr["type"]
    X, Y = domain.mesh()
    lx, ly = domain.x_extent, domain.y_extent
    if kind == "zero":
        return domain.zeros()
    if kind == "constant":
        return domain.field(np.full(domain.shape, float(expr["c"])))
    if kind == "mode":
        base = np.sin(np.pi * X / lx) * np.sin(np.pi * Y / ly)
        return domain.field(expr["amp"] * np.sin(expr["i"] * np.pi * X / lx)
                            * np.sin(expr["j"] * np.pi * Y / ly) * base)
    if kind == "gaussian":
        r2 = (X - expr["x0"]) ** 2 + (Y - expr["y0"]) ** 2
        return domain.field(expr["amp"] * np.exp(-r2 / (2 * expr["sigma"] ** 2)))
    raise ValueError(f"unknown expression type {kind!r}")


# ---------------------------------------------------------------------------
# parsing and validation
# ---------------------------------------------------------------------------

_LOC = re.compile(r"at line (\d+), column (\d+)")


def parse_text(text: str) -> ExperimentConfig:
    try:
        raw = _toml.loads(text)
    except _toml.TOMLDecodeError as exc:
        m = _LOC.search(str(exc))
        line, col = (int(m.group(1)), int(m.group(2))) if m else (0, 0)
        raise ParseError(line, col, str(exc)) from None
    return validate(raw)


def parse_config(path) -> ExperimentConfig:
    """Read a TOML file (or a run manifest holding a canonical config)."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if str(path).endswith(".json"):
        man = json.loads(text)
        return validate(man["config"] if "config" in man else man)
    return parse_text(text)


def _coerce(value, typ, where, errors):
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            errors.append((where, "expected a number"))
            return None
        if not math.isfinite(value):
            errors.append((where, "must be finite"))
            return None
        return float(value)
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            errors.append((where, "expected an integer"))
            return None
        return value
    if not isinstance(value, typ):
        errors.append((where, f"expected {typ.__name__}"))
        return None
    return value


def _check_expression(expr, where, errors):
    if not isinstance(expr, dict):
        errors.append((where, "expected an expression table"))
        return ZERO
    kind = expr.get("type")
    if kind not in EXPRESSION_PARAMS:
        errors.append((f"{where}.type", f"must be one of {sorted(EXPRESSION_PARAMS)}"))
        return ZERO
    params = EXPRESSION_PARAMS[kind]
    out = {"type": kind}
    for key in expr:
        if key != "type" and key not in params:
            errors.append((f"{where}.{key}", "unknown key"))
    for key, typ in params.items():
        if key not in expr:
            errors.append((f"{where}.{key}", "missing parameter"))
            continue
        v = _coerce(expr[key], typ, f"{where}.{key}", errors)
        if v is not None:
            out[key] = v
    if kind == "mode" and all(k in out for k in ("i", "j")) and (out["i"] < 1 or out["j"] < 1):
        errors.append((where, "mode indices must be >= 1"))
    if kind == "gaussian" and out.get("sigma", 1.0) <= 0:
        errors.append((f"{where}.sigma", "must be positive"))
    return out


def validate(raw: dict) -> ExperimentConfig:
    """Fill defaults and check every field; raises one ValidationError listing all violations."""
    errors = []
    data = copy.deepcopy(DEFAULTS)
    for key in raw:
        if key not in DEFAULTS:
            errors.append((key, "unknown key"))
    kind = raw.get("kind", DEFAULTS["kind"])
    if kind not in KINDS:
        errors.append(("kind", f"must be one of {list(KINDS)}"))
    data["kind"] = kind

    for block, types in _TYPES.items():
        given = raw.get(block, {})
        if not isinstance(given, dict):
            errors.append((block, "expected a table"))
            continue
        for key, value in given.items():
            if key not in types:
                errors.append((f"{block}.{key}", "unknown key"))
                continue
            v = _coerce(value, types[key], f"{block}.{key}", errors)
            if v is not None:
                data[block][key] = v

    for block, keys in (("loads", ("p0", "F0")), ("initial", ("u", "v"))):
        given = raw.get(block, {})
        if not isinstance(given, dict):
            errors.append((block, "expected a table"))
            continue
        for key, value in given.items():
            if key not in keys:
                errors.append((f"{block}.{key}", "unknown key"))
                continue
            data[block][key] = _check_expression(value, f"{block}.{key}", errors)

    pre = raw.get("prehistory", {})
    if isinstance(pre, dict):
        for key in pre:
            if key != "kind":
                errors.append((f"prehistory.{key}", "unknown key"))
        if "kind" in pre:
            if pre["kind"] not in PREHISTORY_KINDS:
                errors.append(("prehistory.kind", f"must be one of {list(PREHISTORY_KINDS)}"))
            else:
                data["prehistory"]["kind"] = pre["kind"]
    else:
        errors.append(("prehistory", "expected a table"))

    sweep = raw.get("sweep", {})
    if isinstance(sweep, dict):
        for path, values in sweep.items():
            block, _, key = path.partition(".")
            if block not in _TYPES or key not in _TYPES[block]:
                errors.append((f"sweep.{path}", "must name a scalar setting as block.key"))
            elif not isinstance(values, list) or not values:
                errors.append((f"sweep.{path}", "expected a non-empty list"))
        data["sweep"] = dict(sweep)
    else:
        errors.append(("sweep", "expected a table"))

    d, m = data["domain"], data["model"]
    U = m["U"]
    if U is None:
        if kind not in ("possio-check", "invariant-suite"):
            errors.append(("model.U", "required"))
        m["U"] = U = 0.5
    if U < 0:
        errors.append(("model.U", "must be >= 0"))
    elif abs(U - 1.0) < 1e-9:
        errors.append(("model.U", "transonic excluded"))
    for key in ("x_extent", "y_extent"):
        if d[key] <= 0:
            errors.append((f"domain.{key}", "must be positive"))
    for key in ("nx", "ny"):
        if d[key] < 8:
            errors.append((f"domain.{key}", "must be >= 8"))
    if m["k"] < 0:
        errors.append(("model.k", "must be >= 0"))
    if m["dt"] <= 0:
        errors.append(("model.dt", "must be positive"))
    elif m["T_final"] < m["dt"]:
        errors.append(("model.T_final", "must be >= dt"))
    if m["stiff_damping"] < 0:
        errors.append(("model.stiff_damping", "must be >= 0"))
    if m["n_corrector"] < 1:
        errors.append(("model.n_corrector", "must be >= 1"))
    if not 0 < m["solver_tol"] <= 1e-4:
        errors.append(("model.solver_tol", "must lie in (0, 1e-4]"))
    for key in ("n_theta", "n_s"):
        n = data["delay"][key]
        if n < 16 or n % 2:
            errors.append((f"delay.{key}", "must be even and >= 16"))
    o = data["outputs"]
    if o["snapshot_every"] < 0 or o["keep_every"] < 1:
        errors.append(("outputs", "snapshot_every >= 0 and keep_every >= 1 required"))
    s = data["stationary"]
    if not 0 < s["newton_tol"] <= 1e-6:
        errors.append(("stationary.newton_tol", "must lie in (0, 1e-6]"))
    if s["max_iter"] < 1 or s["continuation_steps"] < 1 or s["restarts"] < 0:
        errors.append(("stationary", "max_iter, continuation_steps >= 1 and restarts >= 0 required"))
    if data["experiment"]["energy_ratio"] <= 0:
        errors.append(("experiment.energy_ratio", "must be positive"))
    if data["experiment"]["possio_n"] < 32:
        errors.append(("experiment.possio_n", "must be >= 32"))
    if errors:
        raise ValidationError(errors)
    return ExperimentConfig(data)
