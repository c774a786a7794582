"""Time-domain runs of the feeder: switched PWM circuit or averaged model.

Both models share one fixed-step RK4 kernel.  Every controller reduces to an
affine duty law ``d = d0 + G (x - x_ref)`` clamped to ``[0, 1]``.  In the
switched model the law is evaluated once per switching period on the state
averaged over the period just finished; in the averaged model it acts on the
instantaneous state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from . import _kernel
from .control import GlobalFeedback, assemble_global
from .model import (
    CouplingConvention,
    NetworkSpec,
    OperatingPoint,
    feeder_matrix,
    solve_operating_point,
)
from .smallsignal import DesignVariant, InputGroundRC, InputShuntC, OutputShuntR


class SimulationDiverged(ArithmeticError):
    """State magnitude exceeded the guard; ``trace`` holds the run up to that point."""

    def __init__(self, message: str, trace: "Trace"):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class OpenLoop:
    """Fixed duty cycles; ``None`` uses the operating-point duties."""

    D: tuple[float, ...] | None = None


@dataclass(frozen=True)
class Proportional:
    """``d = D0 + k_p (v_ref - V_k)``; ``v_ref=None`` means each load's nominal voltage."""

    k_p: float
    v_ref: float | None = None


@dataclass(frozen=True)
class StateFeedback:
    """``d = D0 + f_i (I_k - Ibar_k) + f_v (V_k - Vbar_k)`` per converter."""

    gains: GlobalFeedback
    op: OperatingPoint | None = None


Controller = Union[OpenLoop, Proportional, StateFeedback]


@dataclass(frozen=True)
class SimConfig:
    """Run settings.

    ``initial_state`` holds one ``(I0, V0)`` or ``(I0, V0, E0)`` tuple per
    converter, where ``E0`` is the design state (RC-leg or shunt-capacitor
    voltage).  ``None`` starts at the operating point.  ``dt=None`` picks
    ``T/100`` for the switched model and 1 us for the averaged one.

    ``coupling`` sets the averaged line model and, for both models, the
    operating point the controller regulates around.  The paper-exact form is
    the default because its feeder terms are the period average of the
    switched drops (``s**2 = s``); the physical form averages the node voltage
    first and misses the switch/current correlation, a bias of about
    ``R D (1 - D) I`` per converter.
    """

    model: str = "averaged"
    t_end: float = 20e-3
    dt: float | None = None
    controller: Controller = field(default_factory=OpenLoop)
    initial_state: tuple[tuple[float, ...], ...] | None = None
    design: DesignVariant = None
    coupling: CouplingConvention = CouplingConvention.PAPER_EXACT
    record_every: int = 1
    op: OperatingPoint | None = None

    def __post_init__(self):
        if self.model not in ("switched", "averaged"):
            raise ValueError(f"model must be 'switched' or 'averaged', got {self.model!r}")
        if self.dt is not None and not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if int(self.record_every) != self.record_every or self.record_every < 1:
            raise ValueError(f"record_every must be a positive integer, got {self.record_every}")

    def step(self, spec: NetworkSpec) -> float:
        if self.dt is not None:
            return self.dt
        if self.model == "switched":
            return min(c.T for c in spec.converters) / 100.0
        return 1e-6


@dataclass(frozen=True, eq=False)
class Trace:
    """Recorded columns in fixed order: ``t`` then one block per converter."""

    columns: tuple[str, ...]
    data: np.ndarray

    def __post_init__(self):
        if self.data.shape[1] != len(self.columns):
            raise ValueError("data width does not match the column list")

    def __len__(self):
        return self.data.shape[0]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    @property
    def t(self) -> np.ndarray:
        return self.data[:, 0]

    def decimate(self, factor: int) -> "Trace":
        if factor < 1:
            raise ValueError(f"decimation factor must be >= 1, got {factor}")
        keep = np.arange(0, len(self), factor)
        if keep[-1] != len(self) - 1:
            keep = np.append(keep, len(self) - 1)
        return Trace(self.columns, self.data[keep])


def trace_columns(n: int, switched: bool, design: DesignVariant) -> tuple[str, ...]:
    cols = ["t"]
    for k in range(1, n + 1):
        cols += [f"V{k}", f"I{k}", f"Vnode{k}", f"D{k}"]
        if switched:
            cols.append(f"sw{k}")
        cols.append(f"Iload{k}")
        if isinstance(design, InputGroundRC):
            cols.append(f"Vf{k}")
    return tuple(cols)


def _reference_op(spec: NetworkSpec, cfg: SimConfig) -> OperatingPoint:
    if cfg.op is not None:
        return cfg.op
    if isinstance(cfg.controller, StateFeedback) and cfg.controller.op is not None:
        return cfg.controller.op
    shunt = cfg.design.R_s if isinstance(cfg.design, OutputShuntR) else None
    return solve_operating_point(spec, cfg.coupling, shunt_R=shunt)


def _affine_law(spec: NetworkSpec, cfg: SimConfig, op: OperatingPoint, N: int):
    n = spec.n
    G = np.zeros((n, N))
    xref = np.zeros(N)
    xref[:n] = op.Ibar
    xref[n : 2 * n] = op.Vbar
    ctl = cfg.controller
    if isinstance(ctl, OpenLoop):
        d0 = np.asarray(op.D if ctl.D is None else ctl.D, dtype=float)
        if d0.shape != (n,):
            raise ValueError(f"need {n} fixed duties, got {d0.shape}")
    elif isinstance(ctl, Proportional):
        d0 = np.asarray(op.D, dtype=float)
        if ctl.v_ref is not None:
            xref[n : 2 * n] = ctl.v_ref
        for k in range(n):
            G[k, n + k] = -ctl.k_p
    elif isinstance(ctl, StateFeedback):
        d0 = np.asarray(op.D, dtype=float)
        labels = [f"i{k}" for k in range(1, n + 1)] + [f"v{k}" for k in range(1, n + 1)]
        G[:, : 2 * n] = assemble_global(ctl.gains, n, labels)
    else:
        raise TypeError(f"unknown controller {ctl!r}")
    return d0, G, xref


def _initial_state(spec: NetworkSpec, cfg: SimConfig, op: OperatingPoint, n_extra: int) -> np.ndarray:
    n = spec.n
    x0 = np.zeros(2 * n + n_extra * n)
    if cfg.initial_state is None:
        x0[:n] = op.Ibar
        x0[n : 2 * n] = op.Vbar
        if n_extra:
            x0[2 * n :] = op.Vbar_node
        return x0
    if len(cfg.initial_state) != n:
        raise ValueError(f"need {n} initial-state tuples, got {len(cfg.initial_state)}")
    for k, s in enumerate(cfg.initial_state):
        if len(s) not in (2, 2 + n_extra):
            raise ValueError(f"initial state for converter {k + 1} has {len(s)} entries")
        x0[k], x0[n + k] = s[0], s[1]
        if n_extra:
            x0[2 * n + k] = s[2] if len(s) > 2 else op.Vbar_node[k]
    return x0


def _run(spec: NetworkSpec, cfg: SimConfig, switched: bool) -> Trace:
    n = spec.n
    dt = cfg.step(spec)
    T = np.array([c.T for c in spec.converters])
    if switched and dt > T.min() / 50 * (1 + 1e-12):
        raise ValueError(f"switched runs need dt <= T/50 = {T.min() / 50:.3g} s, got {dt:.3g}")
    if not cfg.t_end > dt:
        raise ValueError(f"t_end ({cfg.t_end}) must exceed dt ({dt})")

    design = cfg.design
    Rs = Rf = Cf = Cs = 1.0
    if design is None:
        code, n_extra = _kernel.DESIGN_NONE, 0
    elif isinstance(design, OutputShuntR):
        code, n_extra, Rs = _kernel.DESIGN_SHUNT_R, 0, design.R_s
    elif isinstance(design, InputGroundRC):
        code, n_extra, Rf, Cf = _kernel.DESIGN_RC, 1, design.R_f, design.C_f
    elif isinstance(design, InputShuntC):
        code, n_extra, Cs = _kernel.DESIGN_CS, 1, design.C_s
    else:
        raise TypeError(f"unknown design {design!r}")

    op = _reference_op(spec, cfg)
    if op.n != n:
        raise ValueError(f"operating point has {op.n} converters, spec has {n}")
    x0 = _initial_state(spec, cfg, op, n_extra)
    d0, G, xref = _affine_law(spec, cfg, op, x0.size)
    if n_extra:
        xref[2 * n :] = op.Vbar_node

    R, Vg = spec.R, spec.source.V_g
    M = feeder_matrix(n)
    W = np.linalg.inv(np.eye(n) + (R / Rf) * M) if code == _kernel.DESIGN_RC else np.eye(n)
    if switched:
        line = _kernel.LINE_SWITCHED
    elif cfg.coupling is CouplingConvention.PAPER_EXACT:
        line = _kernel.LINE_PAPER
    else:
        line = _kernel.LINE_PHYSICAL

    n_steps = int(round(cfg.t_end / dt))
    rec, diverged, t, x, u, d, q, il = _kernel.integrate(
        x0, switched, line, n, float(Vg), float(R),
        np.array([c.L for c in spec.converters]),
        np.array([c.C for c in spec.converters]),
        np.array([ld.P for ld in spec.loads], dtype=float),
        np.array([ld.V_min for ld in spec.loads], dtype=float),
        np.array([ld.V_max for ld in spec.loads], dtype=float),
        T, code, float(Rs), float(Rf), float(Cf), float(Cs), M, W, d0, G, xref,
        float(dt), n_steps, int(cfg.record_every), 1e6 * Vg,
    )

    cols = trace_columns(n, switched, design)
    blocks = [t[:, None]]
    for k in range(n):
        blocks += [x[:, n + k : n + k + 1], x[:, k : k + 1], u[:, k : k + 1], d[:, k : k + 1]]
        if switched:
            blocks.append(q[:, k : k + 1])
        blocks.append(il[:, k : k + 1])
        if isinstance(design, InputGroundRC):
            blocks.append(x[:, 2 * n + k : 2 * n + k + 1])
    trace = Trace(cols, np.hstack(blocks))
    if diverged:
        raise SimulationDiverged(
            f"state exceeded {1e6 * Vg:.3g} at t={t[-1]:.6g} s", trace
        )
    return trace


def simulate_switched(spec: NetworkSpec, cfg: SimConfig) -> Trace:
    """Integrate the PWM circuit with each switch driven by its latched duty."""
    if cfg.model != "switched":
        raise ValueError("simulate_switched needs cfg.model == 'switched'")
    return _run(spec, cfg, switched=True)


def simulate_averaged(spec: NetworkSpec, cfg: SimConfig) -> Trace:
    """Integrate the nonlinear averaged model with a continuous duty command."""
    if cfg.model != "averaged":
        raise ValueError("simulate_averaged needs cfg.model == 'averaged'")
    return _run(spec, cfg, switched=False)


def simulate(spec: NetworkSpec, cfg: SimConfig) -> Trace:
    return _run(spec, cfg, switched=cfg.model == "switched")


@dataclass(frozen=True)
class SignalStats:
    pkpk: float
    mean: float
    min: float
    max: float


@dataclass(frozen=True)
class TraceMetrics:
    window: tuple[float, float]
    signals: dict[str, SignalStats]
    shutoff_events: dict[str, int]


def trace_metrics(trace: Trace, window: Sequence[float] | None = None) -> TraceMetrics:
    """Peak-to-peak, mean and extrema of every column over ``[t1, t2]``.

    ``shutoff_events`` counts transitions of each load current from positive
    to zero inside the window.
    """
    t = trace.t
    t1, t2 = (t[0], t[-1]) if window is None else (float(window[0]), float(window[1]))
    if t2 < t1:
        raise ValueError(f"window end {t2} precedes start {t1}")
    sel = (t >= t1) & (t <= t2)
    if not sel.any():
        raise ValueError(f"no samples in window [{t1}, {t2}]")
    signals = {}
    shutoffs = {}
    for j, name in enumerate(trace.columns[1:], start=1):
        col = trace.data[sel, j]
        lo, hi = float(col.min()), float(col.max())
        signals[name] = SignalStats(hi - lo, float(col.mean()), lo, hi)
        if name.startswith("Iload"):
            on = col > 0
            shutoffs[name] = int(np.count_nonzero(on[:-1] & ~on[1:]))
    return TraceMetrics((t1, t2), signals, shutoffs)


def moving_average(t: np.ndarray, y: np.ndarray, period: float) -> tuple[np.ndarray, np.ndarray]:
    """Trailing average of ``y`` over one ``period`` on a uniform time grid.

    Returns the times at which a full window is available and the averages.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    step = t[1] - t[0]
    w = int(round(period / step))
    if w < 1 or w > len(y):
        raise ValueError(f"period {period} spans {w} samples of {len(y)}")
    # w intervals, trapezoid weights on the end points
    c = np.concatenate([[0.0], np.cumsum(0.5 * (y[1:] + y[:-1]))])
    avg = (c[w:] - c[:-w]) / w
    return t[w:], avg
