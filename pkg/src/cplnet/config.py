"""JSON run configuration: strict parsing into typed objects.

Every object in the file is checked against a fixed key set, so a typo fails
fast instead of silently falling back to a default.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .control import ConverterGain, GlobalFeedback, default_poles, design_network_gains
from .model import (
    ConverterParams,
    CouplingConvention,
    CPLoad,
    LineNetwork,
    NetworkSpec,
    SourceParams,
)
from .smallsignal import DesignVariant, InputGroundRC, InputShuntC, OutputShuntR

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


def _obj(value: Any, where: str, required: set[str], optional: set[str] = frozenset()) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = set(value) - required - set(optional)
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {sorted(unknown)}")
    missing = required - set(value)
    if missing:
        raise ConfigError(f"{where}: missing field(s) {sorted(missing)}")
    return value


def as_float(value: Any, where: str, *, positive: bool = False, nonneg: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    v = float(value)
    if not math.isfinite(v):
        raise ConfigError(f"{where}: must be finite")
    if positive and not v > 0:
        raise ConfigError(f"{where}: must be positive, got {v}")
    if nonneg and not v >= 0:
        raise ConfigError(f"{where}: must be non-negative, got {v}")
    return v


def as_int(value: Any, where: str, lo: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    if lo is not None and value < lo:
        raise ConfigError(f"{where}: must be >= {lo}, got {value}")
    return value


def _list(value: Any, where: str, *, nonempty: bool = True) -> list:
    if not isinstance(value, list):
        raise ConfigError(f"{where}: expected a list")
    if nonempty and not value:
        raise ConfigError(f"{where}: must not be empty")
    return value


def as_floats(value: Any, where: str, **kw) -> list[float]:
    return [as_float(v, f"{where}[{j}]", **kw) for j, v in enumerate(_list(value, where))]


def parse_coupling(value: Any, where: str) -> CouplingConvention:
    try:
        return CouplingConvention(value)
    except ValueError:
        raise ConfigError(f"{where}: expected 'paper_exact' or 'physical', got {value!r}") from None


def parse_op_mode(value: Any, where: str) -> str:
    if value not in ("nominal", "resolved"):
        raise ConfigError(f"{where}: expected 'nominal' or 'resolved', got {value!r}")
    return value


def parse_network(raw: Any) -> NetworkSpec:
    d = _obj(raw, "network", {"source", "line", "converters", "loads"})
    src = _obj(d["source"], "network.source", {"V_g"})
    line = _obj(d["line"], "network.line", {"n"}, {"R"})
    n = as_int(line["n"], "network.line.n", 1)
    R = as_float(line.get("R", 0.0), "network.line.R", nonneg=True)

    convs = []
    for j, c in enumerate(_list(d["converters"], "network.converters")):
        w = f"network.converters[{j}]"
        c = _obj(c, w, {"L", "C"}, {"f_sw"})
        convs.append(
            ConverterParams(
                as_float(c["L"], f"{w}.L", positive=True),
                as_float(c["C"], f"{w}.C", positive=True),
                as_float(c.get("f_sw", 200e3), f"{w}.f_sw", positive=True),
            )
        )
    loads = []
    for j, ld in enumerate(_list(d["loads"], "network.loads")):
        w = f"network.loads[{j}]"
        ld = _obj(ld, w, {"P"}, {"V_nominal", "V_min", "V_max"})
        try:
            loads.append(
                CPLoad(
                    as_float(ld["P"], f"{w}.P", nonneg=True),
                    as_float(ld.get("V_nominal", 48.0), f"{w}.V_nominal"),
                    as_float(ld.get("V_min", 20.0), f"{w}.V_min"),
                    as_float(ld.get("V_max", 120.0), f"{w}.V_max"),
                )
            )
        except ValueError as e:
            raise ConfigError(f"{w}: {e}") from None
    # a single entry stands for every converter
    for name, items in (("converters", convs), ("loads", loads)):
        if len(items) not in (1, n):
            raise ConfigError(f"network.{name}: need 1 or {n} entries, got {len(items)}")
    convs = convs * n if len(convs) == 1 else convs
    loads = loads * n if len(loads) == 1 else loads
    return NetworkSpec(
        SourceParams(as_float(src["V_g"], "network.source.V_g", positive=True)),
        LineNetwork(n, R),
        tuple(convs),
        tuple(loads),
    )


def parse_design(raw: Any, where: str) -> DesignVariant:
    if raw is None:
        return None
    if not isinstance(raw, dict) or "variant" not in raw:
        raise ConfigError(f"{where}: expected an object with a 'variant' field")
    v = raw["variant"]
    if v == "output_shunt":
        d = _obj(raw, where, {"variant", "R_s"})
        return OutputShuntR(as_float(d["R_s"], f"{where}.R_s", positive=True))
    if v == "input_rc":
        d = _obj(raw, where, {"variant", "R_f", "C_f"})
        return InputGroundRC(as_float(d["R_f"], f"{where}.R_f", positive=True), as_float(d["C_f"], f"{where}.C_f", positive=True))
    if v == "input_shunt_c":
        d = _obj(raw, where, {"variant", "C_s"})
        return InputShuntC(as_float(d["C_s"], f"{where}.C_s", positive=True))
    raise ConfigError(f"{where}.variant: unknown design {v!r}")


@dataclass(frozen=True)
class ControllerConfig:
    """Duty law shared by every command.

    ``state_feedback`` takes gains from ``gains_file`` or designs them with
    ``poles`` (default ``-w0 (1 +/- j)``); ``proportional`` feeds back the
    output voltage only; ``open_loop`` holds the duties fixed.
    """

    type: str = "state_feedback"
    gains_file: Path | None = None
    poles: tuple[tuple[complex, complex], ...] | None = None
    k_p: float | None = None
    v_ref: float | None = None
    D: tuple[float, ...] | None = None


def _poles(raw: Any, where: str, n: int) -> tuple[tuple[complex, complex], ...]:
    items = _list(raw, where)
    out = []
    for j, pair in enumerate(items):
        w = f"{where}[{j}]"
        pair = _list(pair, w)
        if len(pair) != 2:
            raise ConfigError(f"{w}: need two poles")
        ps = []
        for m, p in enumerate(pair):
            p = _list(p, f"{w}[{m}]")
            if len(p) != 2:
                raise ConfigError(f"{w}[{m}]: a pole is [real, imag]")
            ps.append(complex(as_float(p[0], f"{w}[{m}][0]"), as_float(p[1], f"{w}[{m}][1]")))
        out.append(tuple(ps))
    if len(out) not in (1, n):
        raise ConfigError(f"{where}: need 1 or {n} pole pairs, got {len(out)}")
    return tuple(out * n if len(out) == 1 else out)


def parse_controller(raw: Any, n: int, base: Path) -> ControllerConfig:
    if raw is None:
        return ControllerConfig()
    d = _obj(raw, "controller", {"type"}, {"gains_file", "poles", "k_p", "v_ref", "D"})
    t = d["type"]
    allowed = {
        "state_feedback": {"type", "gains_file", "poles"},
        "proportional": {"type", "k_p", "v_ref"},
        "open_loop": {"type", "D"},
    }
    if t not in allowed:
        raise ConfigError(f"controller.type: expected one of {sorted(allowed)}, got {t!r}")
    extra = set(d) - allowed[t]
    if extra:
        raise ConfigError(f"controller: field(s) {sorted(extra)} do not apply to {t}")
    if t == "state_feedback":
        gf = None
        if d.get("gains_file") is not None:
            gf = Path(d["gains_file"])
            gf = gf if gf.is_absolute() else base / gf
            if not gf.is_file():
                raise ConfigError(f"controller.gains_file: {gf} does not exist")
        if gf is not None and d.get("poles") is not None:
            raise ConfigError("controller: give gains_file or poles, not both")
        poles = _poles(d["poles"], "controller.poles", n) if d.get("poles") is not None else None
        return ControllerConfig(t, gains_file=gf, poles=poles)
    if t == "proportional":
        if "k_p" not in d:
            raise ConfigError("controller: proportional needs k_p")
        v_ref = d.get("v_ref")
        return ControllerConfig(
            t,
            k_p=as_float(d["k_p"], "controller.k_p"),
            v_ref=None if v_ref is None else as_float(v_ref, "controller.v_ref", positive=True),
        )
    D = d.get("D")
    if D is not None:
        D = as_floats(D, "controller.D")
        if len(D) not in (1, n) or not all(0 <= x <= 1 for x in D):
            raise ConfigError(f"controller.D: need 1 or {n} duties in [0, 1]")
        D = tuple(D * n if len(D) == 1 else D)
    return ControllerConfig(t, D=D)


@dataclass(frozen=True)
class RunConfig:
    spec: NetworkSpec
    controller: ControllerConfig
    blocks: dict[str, dict]
    seed: int = 0
    base_dir: Path = field(default_factory=Path.cwd)

    def block(self, name: str, allowed: set[str]) -> dict:
        return _obj(self.blocks.get(name, {}), name, set(), allowed)


COMMAND_BLOCKS = ("analyze", "sweep_r", "sweep_n", "simulate", "design", "gains")


def parse_config(text: str, base_dir: Path | None = None) -> RunConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed JSON: {e}") from None
    d = _obj(raw, "config", {"schema_version", "network"}, {"seed", "controller", *COMMAND_BLOCKS})
    if d["schema_version"] != SCHEMA_VERSION or isinstance(d["schema_version"], bool):
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {d['schema_version']!r}")
    try:
        spec = parse_network(d["network"])
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(f"network: {e}") from None
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    blocks = {k: d[k] for k in COMMAND_BLOCKS if k in d}
    for k, v in blocks.items():
        if not isinstance(v, dict):
            raise ConfigError(f"{k}: expected an object")
    return RunConfig(
        spec,
        parse_controller(d.get("controller"), spec.n, base),
        blocks,
        as_int(d.get("seed", 0), "seed", 0),
        base,
    )


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse_config(text, path.parent)


def resolve_gains(cfg: ControllerConfig, spec: NetworkSpec) -> GlobalFeedback:
    """Per-converter gains in ``(f_i, f_v)`` form for any controller type."""
    n = spec.n
    if cfg.type == "open_loop":
        return GlobalFeedback.uniform(ConverterGain(0.0, 0.0), n)
    if cfg.type == "proportional":
        return GlobalFeedback.uniform(ConverterGain(0.0, -float(cfg.k_p)), n)
    if cfg.gains_file is not None:
        try:
            g = GlobalFeedback.load(cfg.gains_file)
        except (ValueError, KeyError, TypeError) as e:
            raise ConfigError(f"controller.gains_file: {e}") from None
        if len(g) == 1 and n > 1:
            g = GlobalFeedback.uniform(g.gains[0], n)
        if len(g) != n:
            raise ConfigError(f"controller.gains_file: {len(g)} gains for {n} converters")
        return g
    poles = cfg.poles
    if poles is None:
        poles = tuple(default_poles(c.L, c.C) for c in spec.converters)
    return design_network_gains(spec, poles)


def float_grid(raw: Any, where: str, default: np.ndarray) -> np.ndarray:
    """A list of values, or ``{"start", "stop", "num", "log"}``."""
    if raw is None:
        return np.asarray(default, dtype=float)
    if isinstance(raw, list):
        return np.array(as_floats(raw, where))
    d = _obj(raw, where, {"start", "stop", "num"}, {"log"})
    a, b = as_float(d["start"], f"{where}.start"), as_float(d["stop"], f"{where}.stop")
    num = as_int(d["num"], f"{where}.num", 1)
    if d.get("log", False):
        if not (a > 0 and b > 0):
            raise ConfigError(f"{where}: log grids need positive bounds")
        return np.geomspace(a, b, num)
    return np.linspace(a, b, num)
